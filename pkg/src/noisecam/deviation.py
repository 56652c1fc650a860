"""Behavior-deviation measurement and the statistical detection pipeline.

Deviation is the cosine similarity between a layer's Grad-CAM heatmaps
for a seed and its perturbed version; adversarial perturbations drive it
lower than matched Gaussian noise at vulnerable layers.
"""

from dataclasses import dataclass, field

import numpy as np

from .cams import cosine_similarity, gradcam, gradcam_core, normalize_map, upsample_bilinear
from .network import forward, predict, score_gradients
from .noise import extract_noise, noise_stats, pca_clean, sample_matched_gaussian

DEFAULT_PROBE_LAYER = "block3_conv1"


@dataclass
class DeviationRecord:
    layer_id: str
    similarity: float
    kind: str  # "adversarial" | "gaussian"
    strength: float


@dataclass
class LayerCompromiseProfile:
    layer_id: str
    threshold: float  # median of the Gaussian deviation samples
    probability_per_strength: dict  # strength -> P(D_a < threshold)


@dataclass
class DeviationVerdict:
    adversarial: bool
    similarity: float
    benign_median: float
    benign_mad: float
    threshold: float
    n_samples: int


def gradcam_maps_batch(model, images, layer_id, category):
    """Normalized Grad-CAM maps for a batch of images, one backward pass."""
    images = np.asarray(images, dtype=np.float32)
    _, tape = forward(model, images)
    _, fields = score_gradients(model, tape, category)
    acts = tape.activation(model, layer_id)
    grads = fields[layer_id]
    target = model.input_shape[:2]
    maps = []
    for i in range(len(images)):
        raw = gradcam_core(acts[i], grads[i])
        maps.append(normalize_map(upsample_bilinear(raw, target)))
    return maps


def behavior_deviation(model, seed, perturbed, layer_id, kind="adversarial", strength=1.0):
    """Similarity of the layer's heatmaps for seed vs perturbed image.

    Both maps target the seed's predicted class, so the score measures
    focal drift rather than class change.
    """
    category, _ = predict(model, np.clip(seed, 0.0, 1.0))
    maps = gradcam_maps_batch(
        model, np.stack([seed, perturbed]), layer_id, category
    )
    return DeviationRecord(
        layer_id=layer_id,
        similarity=cosine_similarity(maps[0], maps[1]),
        kind=kind,
        strength=strength,
    )


def compromise_profile(records, layer_id, min_samples=30):
    """Threshold = median Gaussian deviation; compromise = D_a below it.

    records: iterable of DeviationRecord for one layer (both kinds, any
    strengths).
    """
    adv = [r for r in records if r.layer_id == layer_id and r.kind == "adversarial"]
    gau = [r for r in records if r.layer_id == layer_id and r.kind == "gaussian"]
    if len(adv) < min_samples or len(gau) < min_samples:
        raise ValueError(
            f"need >= {min_samples} adversarial and gaussian samples at "
            f"{layer_id}, got {len(adv)}/{len(gau)}"
        )
    threshold = float(np.median([r.similarity for r in gau]))
    probs = {}
    for strength in sorted({r.strength for r in adv}):
        bucket = [r.similarity for r in adv if r.strength == strength]
        probs[strength] = float(np.mean([s < threshold for s in bucket]))
    return LayerCompromiseProfile(layer_id, threshold, probs)


def detect_by_deviation(
    model,
    input_image,
    probe_layer=DEFAULT_PROBE_LAYER,
    n_samples=50,
    rng_seed=0,
    retained_variance=0.99,
):
    """PCA-clean the input, model the benign similarity distribution from
    resampled matched noise, and flag inputs whose similarity falls below
    median - 3 * MAD of that distribution."""
    if n_samples < 50:
        raise ValueError(f"n_samples must be >= 50, got {n_samples}")
    input_image = np.asarray(input_image, dtype=np.float32)
    cleaned = pca_clean(input_image, retained_variance)
    residual = extract_noise(input_image, cleaned)
    stats = noise_stats(residual)
    category, _ = predict(model, cleaned)

    benign = np.empty((n_samples,) + cleaned.shape, dtype=np.float32)
    for i in range(n_samples):
        ng = sample_matched_gaussian(stats, rng_seed + i)
        benign[i] = np.clip(cleaned + ng.noise, 0.0, 1.0)

    batch = np.concatenate([cleaned[None], input_image[None], benign])
    maps = gradcam_maps_batch(model, batch, probe_layer, category)
    ref, original, benign_maps = maps[0], maps[1], maps[2:]

    sims = np.array([cosine_similarity(ref, m) for m in benign_maps])
    g_o = cosine_similarity(ref, original)
    med = float(np.median(sims))
    mad = float(np.median(np.abs(sims - med)))
    if mad > 0.0:
        threshold = med - 3.0 * mad
    else:
        threshold = float(sims.min())
    return DeviationVerdict(
        adversarial=g_o < threshold,
        similarity=g_o,
        benign_median=med,
        benign_mad=mad,
        threshold=threshold,
        n_samples=n_samples,
    )
