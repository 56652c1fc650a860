"""Class activation maps: Grad-CAM, Grad-CAM++, LayerCAM, NoiseCAM.

Each variant has a pure core operating on a layer's post-ReLU feature
maps A (h, w, K) and the class-score gradients g of identical shape, and
a model-backed wrapper that runs forward/backward and upsamples to input
resolution. Grad-CAM/++/LayerCAM maps are min-max normalized; NoiseCAM
is left at absolute scale because the cluster detector thresholds on a
fraction of the map's own maximum.
"""

from dataclasses import dataclass

import numpy as np

from .layers import ShapeError
from .network import backward_score, forward


@dataclass
class Heatmap:
    values: np.ndarray  # 2-D, nonnegative, input resolution
    layer_id: str
    category: int
    variant: str  # gradcam | gradcampp | layercam | noisecam


@dataclass
class CamWeights:
    """Intermediate weight fields of Grad-CAM++ / NoiseCAM, at layer
    resolution (h, w, K)."""

    channel_weights: np.ndarray  # (K,)
    coefficients: np.ndarray  # per-pixel enhancement coefficients
    pixel_weights: np.ndarray  # relu(g)
    global_field: np.ndarray  # channel weight broadcast over space
    noise_weights: np.ndarray  # global_field - pixel_weights


def upsample_bilinear(values, target):
    """Align-corners bilinear resize of a 2-D map to (H, W)."""
    values = np.asarray(values, dtype=np.float32)
    h, w = values.shape
    th, tw = target
    if (h, w) == (th, tw):
        return values.copy()

    def src_coords(n_src, n_dst):
        if n_dst == 1 or n_src == 1:
            return np.zeros(n_dst)
        return np.arange(n_dst) * (n_src - 1) / (n_dst - 1)

    ys = src_coords(h, th)
    xs = src_coords(w, tw)
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = values[np.ix_(y0, x0)] * (1 - fx) + values[np.ix_(y0, x1)] * fx
    bot = values[np.ix_(y1, x0)] * (1 - fx) + values[np.ix_(y1, x1)] * fx
    return (top * (1 - fy) + bot * fy).astype(np.float32)


def normalize_map(values):
    """Min-max scale into [0, 1]; an all-zero map stays all-zero."""
    lo, hi = float(values.min()), float(values.max())
    if hi > lo:
        return ((values - lo) / (hi - lo)).astype(np.float32)
    return np.zeros_like(values)


def gradcam_core(acts, grads):
    """ReLU of feature maps combined with spatial-mean channel weights."""
    weights = grads.mean(axis=(0, 1))
    return np.maximum((acts * weights).sum(axis=2), 0.0)


def gradcam_pp_weights(acts, grads):
    """Enhanced coefficients and channel weights of Grad-CAM++.

    a = g^2 / (2 g^2 + sum_ab(A) * g^3), with 0 where the denominator
    vanishes (insensitive pixels get no weight); w_k = sum_ij a * relu(g).
    """
    g2 = grads**2
    g3 = grads**3
    denom = 2.0 * g2 + acts.sum(axis=(0, 1), keepdims=True) * g3
    coeff = np.divide(g2, denom, out=np.zeros_like(g2), where=denom != 0.0)
    relu_g = np.maximum(grads, 0.0)
    channel_weights = (coeff * relu_g).sum(axis=(0, 1))
    return coeff, relu_g, channel_weights


def gradcam_pp_core(acts, grads):
    coeff, relu_g, channel_weights = gradcam_pp_weights(acts, grads)
    raw = np.maximum((acts * channel_weights).sum(axis=2), 0.0)
    global_field = np.broadcast_to(channel_weights, acts.shape).copy()
    weights = CamWeights(
        channel_weights=channel_weights.astype(np.float32),
        coefficients=coeff.astype(np.float32),
        pixel_weights=relu_g.astype(np.float32),
        global_field=global_field.astype(np.float32),
        noise_weights=(global_field - relu_g).astype(np.float32),
    )
    return raw, weights


def layercam_core(acts, grads):
    """ReLU'd gradients as pixel-wise weights, summed over channels."""
    relu_g = np.maximum(grads, 0.0)
    raw = np.maximum((relu_g * acts).sum(axis=2), 0.0)
    return raw, relu_g


def noisecam_core(acts, grads):
    """Global-minus-pixel-wise weighting exposes activation mass that is
    credited globally but absent from fine-grained focus."""
    raw_pp, weights = gradcam_pp_core(acts, grads)
    raw = np.maximum((weights.noise_weights * acts).sum(axis=2), 0.0)
    return raw, weights


def _layer_tensors(model, image, layer_id, category):
    model.require_conv(layer_id)
    image = np.asarray(image, dtype=np.float32)
    logits, tape = forward(model, image)
    if category is None:
        category = int(np.argmax(logits[0]))
    _, fields = backward_score(model, tape, category)
    acts = tape.activation(model, layer_id, 0)
    grads = fields[layer_id]
    return acts, grads, category


def gradcam(model, image, layer_id, category):
    acts, grads, category = _layer_tensors(model, image, layer_id, category)
    raw = gradcam_core(acts, grads)
    target = model.input_shape[:2]
    values = normalize_map(upsample_bilinear(raw, target))
    return Heatmap(values, layer_id, category, "gradcam")


def gradcam_pp(model, image, layer_id, category):
    acts, grads, category = _layer_tensors(model, image, layer_id, category)
    raw, weights = gradcam_pp_core(acts, grads)
    target = model.input_shape[:2]
    values = normalize_map(upsample_bilinear(raw, target))
    return Heatmap(values, layer_id, category, "gradcampp"), weights


def layercam(model, image, layer_id, category):
    acts, grads, category = _layer_tensors(model, image, layer_id, category)
    raw, relu_g = layercam_core(acts, grads)
    target = model.input_shape[:2]
    values = normalize_map(upsample_bilinear(raw, target))
    weights = CamWeights(
        channel_weights=relu_g.sum(axis=(0, 1)).astype(np.float32),
        coefficients=np.zeros_like(relu_g, dtype=np.float32),
        pixel_weights=relu_g.astype(np.float32),
        global_field=np.zeros_like(relu_g, dtype=np.float32),
        noise_weights=np.zeros_like(relu_g, dtype=np.float32),
    )
    return Heatmap(values, layer_id, category, "layercam"), weights


def noisecam(model, image, layer_id, category=None):
    """Noise-exposure map; category defaults to the top-1 prediction.
    Upsampled but not normalized."""
    acts, grads, category = _layer_tensors(model, image, layer_id, category)
    raw, _ = noisecam_core(acts, grads)
    target = model.input_shape[:2]
    values = upsample_bilinear(raw, target)
    return Heatmap(values, layer_id, category, "noisecam")


def cosine_similarity(h1, h2):
    """Cosine of the angle between two vectorized heatmaps; 0 if either
    map is identically zero."""
    v1 = (h1.values if isinstance(h1, Heatmap) else np.asarray(h1)).ravel()
    v2 = (h2.values if isinstance(h2, Heatmap) else np.asarray(h2)).ravel()
    if v1.shape != v2.shape:
        raise ShapeError(f"heatmap shapes differ: {v1.shape} vs {v2.shape}")
    n1 = np.linalg.norm(v1.astype(np.float64))
    n2 = np.linalg.norm(v2.astype(np.float64))
    if n1 == 0.0 or n2 == 0.0:
        return 0.0
    return float(np.dot(v1.astype(np.float64), v2.astype(np.float64)) / (n1 * n2))
