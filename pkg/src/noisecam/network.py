"""The desk-scale VGG-style classifier and its gradient tape.

The model is a fixed sequential stack; every forward pass records each
layer's output on a Tape so that gradients of any class score with
respect to any conv layer's (post-ReLU) feature maps, or the input, can
be replayed afterwards.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import layers
from .fileio import FormatError, read_ntf, write_ntf
from .layers import ShapeError

NWV_MAGIC = b"NWV1"
NWV_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    layer_id: str
    kind: str  # conv | relu | maxpool | dense | flatten
    kernel: int = 0
    channels: int = 0
    stride: int = 1
    padding: int = 0
    window: int = 0

    def to_dict(self):
        return {
            "layer_id": self.layer_id,
            "kind": self.kind,
            "kernel": self.kernel,
            "channels": self.channels,
            "stride": self.stride,
            "padding": self.padding,
            "window": self.window,
        }


class Model:
    """Sequential network: ordered LayerSpecs plus per-layer parameters.

    Parameters are float32 numpy arrays; the model is treated as
    immutable after construction (training returns a new Model).
    """

    def __init__(self, specs, params, class_count, input_shape, seed):
        self.specs = list(specs)
        self.params = params  # layer_id -> {"kernels"/"weights": arr, "bias": arr}
        self.class_count = class_count
        self.input_shape = tuple(input_shape)
        self.seed = seed
        ids = [s.layer_id for s in self.specs]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate layer ids in architecture")
        self._index = {s.layer_id: i for i, s in enumerate(self.specs)}

    def layer_index(self, layer_id):
        if layer_id not in self._index:
            raise KeyError(
                f"unknown layer {layer_id!r}; known: {sorted(self._index)}"
            )
        return self._index[layer_id]

    def conv_layer_ids(self):
        return [s.layer_id for s in self.specs if s.kind == "conv"]

    def require_conv(self, layer_id):
        spec = self.specs[self.layer_index(layer_id)]
        if spec.kind != "conv":
            raise ValueError(f"layer {layer_id!r} is {spec.kind}, not conv")
        return spec


@dataclass
class TapeRecord:
    layer_id: str
    kind: str
    output: np.ndarray  # batched (N, ...)
    cache: object


@dataclass
class Tape:
    """Per-layer forward record for one batch, in execution order."""

    input: np.ndarray
    records: list = field(default_factory=list)
    logits: np.ndarray = None

    @property
    def batch_size(self):
        return self.input.shape[0]

    def record_for(self, layer_id):
        for rec in self.records:
            if rec.layer_id == layer_id:
                return rec
        raise KeyError(f"layer {layer_id!r} not on tape")

    def activation(self, model, conv_id, batch_index=None):
        """Post-ReLU feature maps of a conv layer (HxWxC per image)."""
        idx = model.layer_index(conv_id)
        model.require_conv(conv_id)
        rec = self.records[idx]
        if idx + 1 < len(self.records) and self.records[idx + 1].kind == "relu":
            rec = self.records[idx + 1]
        if batch_index is None:
            return rec.output
        return rec.output[batch_index]


def build_default_model(seed=0, class_count=6, input_shape=(32, 32, 3)):
    """Three-block VGG-style net: 16/16, 32/32, 64/64 conv channels."""
    specs = []
    channels_in = input_shape[2]
    widths = [16, 32, 64]
    for b, width in enumerate(widths, start=1):
        for n in (1, 2):
            cid = f"block{b}_conv{n}"
            specs.append(LayerSpec(cid, "conv", kernel=3, channels=width, padding=1))
            specs.append(LayerSpec(f"{cid}_relu", "relu"))
        specs.append(LayerSpec(f"block{b}_pool", "maxpool", window=2, stride=2))
    specs.append(LayerSpec("flatten", "flatten"))
    specs.append(LayerSpec("fc1", "dense", channels=64))
    specs.append(LayerSpec("fc1_relu", "relu"))
    specs.append(LayerSpec("fc2", "dense", channels=class_count))

    rng = np.random.default_rng(seed)
    params = {}
    h, w = input_shape[0], input_shape[1]
    cin = channels_in
    flat = None
    for spec in specs:
        if spec.kind == "conv":
            fan_in = spec.kernel * spec.kernel * cin
            std = np.sqrt(2.0 / fan_in)
            kernels = rng.normal(0.0, std, (spec.kernel, spec.kernel, cin, spec.channels))
            params[spec.layer_id] = {
                "kernels": kernels.astype(np.float32),
                "bias": np.zeros(spec.channels, dtype=np.float32),
            }
            cin = spec.channels
        elif spec.kind == "maxpool":
            h //= spec.window
            w //= spec.window
        elif spec.kind == "flatten":
            flat = h * w * cin
        elif spec.kind == "dense":
            std = np.sqrt(2.0 / flat)
            weights = rng.normal(0.0, std, (flat, spec.channels))
            params[spec.layer_id] = {
                "weights": weights.astype(np.float32),
                "bias": np.zeros(spec.channels, dtype=np.float32),
            }
            flat = spec.channels
    return Model(specs, params, class_count, input_shape, seed)


def forward(model, images, dtype=np.float32):
    """Run the network. images: (N,H,W,C) or a single HxWxC image.

    Returns (logits, Tape); logits are pre-softmax scores.
    """
    images = np.asarray(images, dtype=dtype)
    single = images.ndim == 3
    if single:
        images = images[None]
    if images.shape[1:] != model.input_shape:
        raise ShapeError(
            f"input shape {images.shape[1:]} != model input {model.input_shape}"
        )
    tape = Tape(input=images)
    x = images
    for spec in model.specs:
        if spec.kind == "conv":
            p = model.params[spec.layer_id]
            x, cache = layers.conv_forward(
                x, p["kernels"], p["bias"], spec.stride, spec.padding
            )
        elif spec.kind == "relu":
            x, cache = layers.relu_forward(x)
        elif spec.kind == "maxpool":
            x, cache = layers.maxpool_forward(x, spec.window, spec.stride)
        elif spec.kind == "flatten":
            cache = x.shape
            x = x.reshape(x.shape[0], -1)
        elif spec.kind == "dense":
            p = model.params[spec.layer_id]
            x, cache = layers.dense_forward(x, p["weights"], p["bias"])
        else:
            raise ValueError(f"unknown layer kind {spec.kind!r}")
        tape.records.append(TapeRecord(spec.layer_id, spec.kind, x, cache))
    tape.logits = x
    return x, tape


def backward(model, tape, dlogits, inject=None, want_param_grads=False):
    """Reverse sweep from a logit cotangent.

    inject: optional {layer_id: array} of extra cotangents added at that
    layer's output (used for neuron-coverage objectives).
    Returns (dinput, output_grads, param_grads) where output_grads maps
    every layer id to the gradient w.r.t. its output.
    """
    inject = inject or {}
    d = np.asarray(dlogits, dtype=tape.logits.dtype)
    if d.shape != tape.logits.shape:
        raise ShapeError(f"dlogits shape {d.shape} != logits {tape.logits.shape}")
    output_grads = {}
    param_grads = {}
    for spec, rec in zip(reversed(model.specs), reversed(tape.records)):
        if spec.layer_id in inject:
            d = d + np.asarray(inject[spec.layer_id], dtype=d.dtype)
        output_grads[spec.layer_id] = d
        if spec.kind == "conv":
            p = model.params[spec.layer_id]
            d, dk, db = layers.conv_backward(
                d, rec.cache, p["kernels"], want_param_grads
            )
            if want_param_grads:
                param_grads[spec.layer_id] = {"kernels": dk, "bias": db}
        elif spec.kind == "relu":
            d = layers.relu_backward(d, rec.cache)
        elif spec.kind == "maxpool":
            d = layers.maxpool_backward(d, rec.cache)
        elif spec.kind == "flatten":
            d = d.reshape(rec.cache)
        elif spec.kind == "dense":
            p = model.params[spec.layer_id]
            d, dw, db = layers.dense_backward(
                d, rec.cache, p["weights"], want_param_grads
            )
            if want_param_grads:
                param_grads[spec.layer_id] = {"weights": dw, "bias": db}
    return d, output_grads, param_grads


def score_gradients(model, tape, category):
    """Gradients of the pre-softmax score of `category`.

    Returns (input_grad, fields) where fields maps each conv layer id to
    the gradient w.r.t. its post-ReLU feature maps, batched like the tape.
    """
    if not 0 <= category < model.class_count:
        raise ValueError(
            f"category {category} out of range [0, {model.class_count})"
        )
    dlogits = np.zeros_like(tape.logits)
    dlogits[:, category] = 1.0
    dinput, output_grads, _ = backward(model, tape, dlogits)
    fields = {}
    for i, spec in enumerate(model.specs):
        if spec.kind != "conv":
            continue
        grad_id = spec.layer_id
        if i + 1 < len(model.specs) and model.specs[i + 1].kind == "relu":
            grad_id = model.specs[i + 1].layer_id
        fields[spec.layer_id] = output_grads[grad_id]
    return dinput, fields


def backward_score(model, tape, category):
    """Single-image convenience over score_gradients (unbatched arrays)."""
    dinput, fields = score_gradients(model, tape, category)
    return dinput[0], {k: v[0] for k, v in fields.items()}


def replay_from(model, conv_id, activation, dtype=np.float32):
    """Run the network forward starting just after conv_id's ReLU.

    activation: post-ReLU feature maps, (N,h,w,c) or unbatched. Used by
    finite-difference checks of feature-map gradients.
    """
    idx = model.layer_index(conv_id)
    model.require_conv(conv_id)
    if idx + 1 < len(model.specs) and model.specs[idx + 1].kind == "relu":
        idx += 1
    x = np.asarray(activation, dtype=dtype)
    single = x.ndim == 3
    if single:
        x = x[None]
    for spec in model.specs[idx + 1 :]:
        if spec.kind == "conv":
            p = model.params[spec.layer_id]
            x, _ = layers.conv_forward(
                x, p["kernels"], p["bias"], spec.stride, spec.padding
            )
        elif spec.kind == "relu":
            x, _ = layers.relu_forward(x)
        elif spec.kind == "maxpool":
            x, _ = layers.maxpool_forward(x, spec.window, spec.stride)
        elif spec.kind == "flatten":
            x = x.reshape(x.shape[0], -1)
        elif spec.kind == "dense":
            p = model.params[spec.layer_id]
            x, _ = layers.dense_forward(x, p["weights"], p["bias"])
    return x[0] if single else x


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict(model, image):
    """Classify one image in [0, 1]. Returns (label, softmax scores)."""
    image = np.asarray(image, dtype=np.float32)
    if image.min() < 0.0 or image.max() > 1.0:
        raise ValueError(
            f"pixel values outside [0, 1]: min {image.min()}, max {image.max()}"
        )
    logits, _ = forward(model, image)
    scores = softmax(logits[0])
    return int(np.argmax(scores)), scores


def predict_batch(model, images):
    logits, _ = forward(model, np.asarray(images, dtype=np.float32))
    scores = softmax(logits)
    return scores.argmax(axis=1), scores


def train(model, images, labels, epochs, lr, batch, seed):
    """Minibatch SGD on softmax cross-entropy. Deterministic per seed.

    Returns (trained Model, history) with per-epoch mean loss / accuracy.
    """
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) == 0:
        raise ValueError("empty training set")
    if labels.max() >= model.class_count:
        raise ValueError(
            f"label {labels.max()} >= class count {model.class_count}"
        )
    params = {
        lid: {k: v.copy() for k, v in p.items()} for lid, p in model.params.items()
    }
    work = Model(model.specs, params, model.class_count, model.input_shape, model.seed)
    rng = np.random.default_rng(seed)
    n = len(images)
    history = []
    for _ in range(epochs):
        order = rng.permutation(n)
        losses, hits = [], 0
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            xb, yb = images[idx], labels[idx]
            logits, tape = forward(work, xb)
            probs = softmax(logits)
            onehot = np.zeros_like(probs)
            onehot[np.arange(len(idx)), yb] = 1.0
            eps = 1e-12
            losses.append(float(-np.log(probs[np.arange(len(idx)), yb] + eps).mean()))
            hits += int((logits.argmax(axis=1) == yb).sum())
            dlogits = (probs - onehot) / len(idx)
            _, _, grads = backward(work, tape, dlogits, want_param_grads=True)
            if lr != 0.0:
                for lid, g in grads.items():
                    for key, garr in g.items():
                        params[lid][key] -= (lr * garr).astype(np.float32)
        history.append({"loss": float(np.mean(losses)), "accuracy": hits / n})
    return work, history


def _write_string(fp, text):
    raw = text.encode("utf-8")
    fp.write(struct.pack("<I", len(raw)))
    fp.write(raw)


def _read_string(fp):
    raw = fp.read(4)
    if len(raw) != 4:
        raise FormatError("truncated weights file (string length)")
    (n,) = struct.unpack("<I", raw)
    data = fp.read(n)
    if len(data) != n:
        raise FormatError("truncated weights file (string payload)")
    return data.decode("utf-8")


def save_weights(model, path):
    """NWV v1: magic, version byte, architecture JSON, NTF payloads."""
    with open(path, "wb") as fp:
        fp.write(NWV_MAGIC)
        fp.write(struct.pack("<B", NWV_VERSION))
        header = {
            "class_count": model.class_count,
            "input_shape": list(model.input_shape),
            "seed": model.seed,
        }
        _write_string(fp, json.dumps(header, sort_keys=True))
        fp.write(struct.pack("<I", len(model.specs)))
        for spec in model.specs:
            _write_string(fp, json.dumps(spec.to_dict(), sort_keys=True))
        for spec in model.specs:
            if spec.layer_id not in model.params:
                continue
            p = model.params[spec.layer_id]
            for key in sorted(p):
                write_ntf(fp, p[key])


def load_weights(path):
    with open(path, "rb") as fp:
        magic = fp.read(4)
        if magic != NWV_MAGIC:
            raise FormatError(f"bad weights magic {magic!r}, expected {NWV_MAGIC!r}")
        version = fp.read(1)
        if len(version) != 1 or version[0] != NWV_VERSION:
            got = version[0] if version else "EOF"
            raise FormatError(f"unsupported weights version {got}, expected {NWV_VERSION}")
        header = json.loads(_read_string(fp))
        raw = fp.read(4)
        if len(raw) != 4:
            raise FormatError("truncated weights file (layer count)")
        (count,) = struct.unpack("<I", raw)
        specs = []
        for _ in range(count):
            d = json.loads(_read_string(fp))
            specs.append(LayerSpec(**d))
        params = {}
        for spec in specs:
            if spec.kind == "conv":
                keys = ["bias", "kernels"]
            elif spec.kind == "dense":
                keys = ["bias", "weights"]
            else:
                continue
            params[spec.layer_id] = {k: read_ntf(fp) for k in keys}
    return Model(
        specs, params, header["class_count"], header["input_shape"], header["seed"]
    )
