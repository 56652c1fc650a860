"""DBSCAN over the noise map's active pixels and the cluster decision.

An input is flagged adversarial when the NoiseCAM map decomposes into
more than three dense pixel clusters (radius 2, min 3 points, with the
point's own neighborhood including itself).
"""

from dataclasses import dataclass

import numpy as np

from .cams import Heatmap, noisecam

NOISE = -1
UNVISITED = -2

DEFAULT_PROBE_LAYER = "block2_conv1"
DEFAULT_FRACTION = 0.5
DEFAULT_EPS = 2.0
DEFAULT_MIN_PTS = 3
CLUSTER_LIMIT = 3  # strictly more clusters than this => adversarial


@dataclass
class ClusterResult:
    labels: np.ndarray  # per point: cluster index >= 0, or NOISE
    n_clusters: int

    def cluster_sizes(self):
        return [int((self.labels == k).sum()) for k in range(self.n_clusters)]


@dataclass
class NoiseCamVerdict:
    adversarial: bool
    n_clusters: int
    cluster_sizes: list
    n_points: int
    category: int


def binarize_map(heatmap, fraction=DEFAULT_FRACTION):
    """Pixel coordinates whose value exceeds fraction * map-max,
    in row-major order."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    values = heatmap.values if isinstance(heatmap, Heatmap) else np.asarray(heatmap)
    peak = float(values.max())
    if peak <= 0.0:
        return np.zeros((0, 2), dtype=np.int64)
    ys, xs = np.nonzero(values > fraction * peak)
    return np.stack([ys, xs], axis=1).astype(np.int64)


def dbscan(points, eps=DEFAULT_EPS, min_pts=DEFAULT_MIN_PTS):
    """Standard DBSCAN, Euclidean distance, neighborhoods include the
    point itself, deterministic row-major scan order."""
    if eps <= 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    if min_pts < 1:
        raise ValueError(f"min_pts must be >= 1, got {min_pts}")
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return ClusterResult(labels, 0)
    eps2 = eps * eps

    def neighbors(i):
        d2 = ((points - points[i]) ** 2).sum(axis=1)
        return np.nonzero(d2 <= eps2)[0]

    neighborhood = [neighbors(i) for i in range(n)]
    core = np.array([len(nb) >= min_pts for nb in neighborhood])

    # core-point connected components, numbered in row-major scan order
    cluster = 0
    for i in range(n):
        if not core[i] or labels[i] != NOISE:
            continue
        labels[i] = cluster
        stack = [i]
        while stack:
            j = stack.pop()
            for k in neighborhood[j]:
                if core[k] and labels[k] == NOISE:
                    labels[k] = cluster
                    stack.append(k)
        cluster += 1

    # border points join the first (scan-order) core neighbor's cluster
    for i in range(n):
        if core[i] or labels[i] != NOISE:
            continue
        for j in neighborhood[i]:
            if core[j]:
                labels[i] = labels[j]
                break
    return ClusterResult(labels, cluster)


def is_adversarial_count(n_clusters, limit=CLUSTER_LIMIT):
    """Decision rule: strictly more than `limit` effective clusters."""
    return n_clusters > limit


def detect_by_noisecam(
    model,
    input_image,
    probe_layer=DEFAULT_PROBE_LAYER,
    fraction=DEFAULT_FRACTION,
    eps=DEFAULT_EPS,
    min_pts=DEFAULT_MIN_PTS,
    cluster_limit=CLUSTER_LIMIT,
):
    """NoiseCAM at the probe layer -> threshold -> DBSCAN -> verdict."""
    heatmap = noisecam(model, input_image, probe_layer)
    points = binarize_map(heatmap, fraction)
    result = dbscan(points, eps, min_pts)
    return NoiseCamVerdict(
        adversarial=is_adversarial_count(result.n_clusters, cluster_limit),
        n_clusters=result.n_clusters,
        cluster_sizes=result.cluster_sizes(),
        n_points=len(points),
        category=heatmap.category,
    )


def cluster_overlay(shape, points, result):
    """RGB overlay: clusters in distinct colors, noise points gray."""
    palette = np.array(
        [
            [0.90, 0.10, 0.10],
            [0.10, 0.70, 0.10],
            [0.15, 0.25, 0.95],
            [0.90, 0.75, 0.10],
            [0.75, 0.10, 0.85],
            [0.10, 0.80, 0.80],
        ]
    )
    img = np.zeros(shape + (3,), dtype=np.float32)
    for (y, x), label in zip(np.asarray(points, dtype=np.int64), result.labels):
        if label == NOISE:
            img[y, x] = 0.5
        else:
            img[y, x] = palette[label % len(palette)]
    return img
