"""Matched Gaussian noise, PCA cleaning, and the blur baseline."""

from dataclasses import dataclass

import numpy as np

from .attack import Perturbation
from .layers import ShapeError


@dataclass
class NoiseStats:
    mu: float
    sigma: float
    shape: tuple


def noise_stats(p):
    """Scalar mean / population std / shape of a perturbation field."""
    noise = p.noise if isinstance(p, Perturbation) else np.asarray(p)
    return NoiseStats(
        mu=float(noise.mean()),
        sigma=float(noise.std()),
        shape=tuple(noise.shape),
    )


def sample_matched_gaussian(stats, rng_seed, strength=1.0, seed_id=""):
    """i.i.d. normal noise with the source perturbation's mean and std."""
    rng = np.random.default_rng(rng_seed)
    draw = rng.normal(stats.mu, stats.sigma, stats.shape)
    return Perturbation(draw.astype(np.float32), "gaussian", strength, seed_id)


def pca_clean(image, retained_variance=0.99):
    """Per-channel PCA reconstruction keeping the fewest leading
    components whose cumulative variance ratio reaches the target.

    Rows are treated as observations of row-length vectors. Channels with
    zero variance pass through unchanged. Output is clipped to [0, 1].
    """
    if not 0.0 < retained_variance <= 1.0:
        raise ValueError(
            f"retained_variance must be in (0, 1], got {retained_variance}"
        )
    image = np.asarray(image, dtype=np.float32)
    squeeze = image.ndim == 2
    if squeeze:
        image = image[:, :, None]
    out = np.empty_like(image)
    for ch in range(image.shape[2]):
        x = image[:, :, ch].astype(np.float64)
        mean = x.mean(axis=0)
        centered = x - mean
        cov = centered.T @ centered / x.shape[0]
        evals, evecs = np.linalg.eigh(cov)
        evals, evecs = evals[::-1], evecs[:, ::-1]
        total = evals.sum()
        if total <= 0.0:
            out[:, :, ch] = image[:, :, ch]
            continue
        ratio = np.cumsum(evals) / total
        k = int(np.searchsorted(ratio, retained_variance - 1e-12)) + 1
        k = min(k, len(evals))
        basis = evecs[:, :k]
        recon = centered @ basis @ basis.T + mean
        out[:, :, ch] = np.clip(recon, 0.0, 1.0).astype(np.float32)
    return out[:, :, 0] if squeeze else out


def extract_noise(original, cleaned):
    """Elementwise residual, in float64 so cleaned + noise == original
    holds bit-exactly when evaluated in float64."""
    original = np.asarray(original)
    cleaned = np.asarray(cleaned)
    if original.shape != cleaned.shape:
        raise ShapeError(
            f"shape mismatch: original {original.shape} vs cleaned {cleaned.shape}"
        )
    return original.astype(np.float64) - cleaned.astype(np.float64)


def gaussian_kernel(radius):
    sigma = float(radius)
    half = int(np.ceil(3.0 * sigma))
    xs = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(image, radius):
    """Separable Gaussian blur, sigma = radius, clamp-to-edge borders."""
    if radius <= 0:
        raise ValueError(f"radius must be > 0, got {radius}")
    image = np.asarray(image, dtype=np.float32)
    squeeze = image.ndim == 2
    if squeeze:
        image = image[:, :, None]
    k = gaussian_kernel(radius)
    half = (len(k) - 1) // 2
    padded = np.pad(image.astype(np.float64), ((half, half), (0, 0), (0, 0)), mode="edge")
    rows = np.zeros_like(image, dtype=np.float64)
    for i, w in enumerate(k):
        rows += w * padded[i : i + image.shape[0]]
    padded = np.pad(rows, ((0, 0), (half, half), (0, 0)), mode="edge")
    cols = np.zeros_like(rows)
    for i, w in enumerate(k):
        cols += w * padded[:, i : i + image.shape[1]]
    out = np.clip(cols, 0.0, 1.0).astype(np.float32)
    return out[:, :, 0] if squeeze else out
