"""White-box perturbation generation.

The objective jointly pushes the top-K competing class scores above the
seed's predicted class and activates the m least-activated conv neurons,
ascending by the sign of the input gradient under an L-inf budget.
"""

from dataclasses import dataclass, field

import numpy as np

from .network import backward, forward, predict

DEFAULT_STRENGTHS = (0.25, 0.5, 1.0, 2.0, 4.0)


class NumericError(ArithmeticError):
    """Raised when an optimization step produces non-finite values."""


@dataclass
class AttackConfig:
    delta: float = 0.06
    lam: float = 1.0
    top_k: int = 3
    n_neurons: int = 10
    step_size: float = 0.01
    max_iters: int = 50
    strengths: tuple = DEFAULT_STRENGTHS
    coverage_threshold: float = 0.25

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError(f"delta must be > 0, got {self.delta}")
        if self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")
        if self.n_neurons < 0:
            raise ValueError(f"n_neurons must be >= 0, got {self.n_neurons}")


@dataclass
class Perturbation:
    noise: np.ndarray
    kind: str  # "adversarial" | "gaussian"
    strength: float
    seed_id: str = ""


@dataclass
class AttackResult:
    perturbation: Perturbation
    success: bool
    original_label: int
    adversarial_label: int
    iterations: int
    coverage: float
    objective_start: float = 0.0
    objective_end: float = 0.0


def _scaled_conv_activations(model, tape, batch_index=0):
    """Per-layer min-max scaled post-ReLU conv activations, flattened."""
    out = []
    for cid in model.conv_layer_ids():
        act = tape.activation(model, cid, batch_index).ravel()
        lo, hi = act.min(), act.max()
        if hi > lo:
            scaled = (act - lo) / (hi - lo)
        else:
            scaled = np.zeros_like(act)
        out.append((cid, scaled))
    return out

def select_neurons(model, tape, m):
    """The m least-activated conv neurons as (layer_id, flat_index).

    Ties break deterministically by (layer order, index).
    """
    if m <= 0:
        return []
    values, layer_ord, flat_idx, ids = [], [], [], []
    for order, (cid, scaled) in enumerate(_scaled_conv_activations(model, tape)):
        values.append(scaled)
        layer_ord.append(np.full(len(scaled), order))
        flat_idx.append(np.arange(len(scaled)))
        ids.append(cid)
    values = np.concatenate(values)
    layer_ord = np.concatenate(layer_ord)
    flat_idx = np.concatenate(flat_idx)
    order = np.lexsort((flat_idx, layer_ord, values))
    picked = order[: min(m, len(order))]
    return [(ids[layer_ord[i]], int(flat_idx[i])) for i in picked]


def neuron_coverage(model, tape, threshold=0.25):
    """Fraction of conv neurons whose scaled activation exceeds threshold."""
    if threshold < 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    active = total = 0
    for _, scaled in _scaled_conv_activations(model, tape):
        active += int((scaled > threshold).sum())
        total += len(scaled)
    return active / total if total else 0.0


def _objective(model, tape, logits, c, neurons, cfg):
    """Objective value and its dlogits/injection cotangents."""
    order = np.argsort(logits)[::-1]
    candidates = [int(i) for i in order if i != c][: cfg.top_k]
    value = float(logits[candidates].sum() - logits[c])
    dlogits = np.zeros((1, len(logits)), dtype=np.float32)
    dlogits[0, candidates] = 1.0
    dlogits[0, c] -= 1.0
    inject = {}
    for cid, flat in neurons:
        idx = model.layer_index(cid)
        if idx + 1 < len(model.specs) and model.specs[idx + 1].kind == "relu":
            target = model.specs[idx + 1].layer_id
        else:
            target = cid
        act = tape.activation(model, cid, 0)
        value += cfg.lam * float(act.ravel()[flat])
        g = inject.setdefault(
            target, np.zeros((1,) + act.shape, dtype=np.float32)
        )
        g.reshape(-1)[flat] += cfg.lam
    return value, dlogits, inject


def derive_perturbation(model, seed_image, cfg, true_label=None, seed_id=""):
    """Iterative sign-ascent attack on one correctly classified seed."""
    seed_image = np.asarray(seed_image, dtype=np.float32)
    c, _ = predict(model, seed_image)
    if true_label is not None and c != true_label:
        raise ValueError(
            f"seed is misclassified (predicted {c}, label {true_label}); "
            "cannot attack a seed the model already gets wrong"
        )
    logits, tape = forward(model, seed_image)
    neurons = select_neurons(model, tape, cfg.n_neurons)
    obj0, _, _ = _objective(model, tape, logits[0], c, neurons, cfg)

    noise = np.zeros_like(seed_image)
    adv_label = c
    iterations = 0
    obj_end = obj0
    for it in range(cfg.max_iters):
        x = np.clip(seed_image + noise, 0.0, 1.0)
        logits, tape = forward(model, x)
        label = int(np.argmax(logits[0]))
        obj_end, dlogits, inject = _objective(model, tape, logits[0], c, neurons, cfg)
        if label != c:
            adv_label = label
            break
        dinput, _, _ = backward(model, tape, dlogits, inject=inject)
        if not np.isfinite(dinput).all():
            raise NumericError("non-finite input gradient during attack")
        iterations = it + 1
        noise = noise + cfg.step_size * np.sign(dinput[0], dtype=np.float32)
        noise = np.clip(noise, -cfg.delta, cfg.delta)

    final = np.clip(seed_image + noise, 0.0, 1.0)
    effective = (final - seed_image).astype(np.float32)
    adv_label, _ = predict(model, final)
    _, final_tape = forward(model, final)
    result = AttackResult(
        perturbation=Perturbation(effective, "adversarial", 1.0, seed_id),
        success=adv_label != c,
        original_label=c,
        adversarial_label=adv_label,
        iterations=iterations,
        coverage=neuron_coverage(model, final_tape, cfg.coverage_threshold),
        objective_start=obj0,
        objective_end=obj_end,
    )
    return result


def amplify(p, ratio, seed_image):
    """Scale a perturbation, reclip the perturbed image into [0, 1], and
    keep the effective (post-clip) noise."""
    if ratio <= 0:
        raise ValueError(f"ratio must be > 0, got {ratio}")
    seed_image = np.asarray(seed_image, dtype=np.float32)
    scaled = p.noise * np.float32(ratio)
    clipped = np.clip(seed_image + scaled, 0.0, 1.0)
    effective = (clipped - seed_image).astype(np.float32)
    return Perturbation(effective, p.kind, float(ratio), p.seed_id)
