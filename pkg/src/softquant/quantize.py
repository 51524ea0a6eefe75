"""Cluster extraction, small-cluster refinement, effective bit-widths,
and the equal-count (histogram-equalized) quantization baseline.

After fine-tuning, a layer's weights sit in a small number of tight
clusters. Clusters are identified by equal-width binning of the weight
range at a fixed precision (default 7 bits); every weight snaps to the
mean of its bin. A refinement pass merges clusters holding at most
n_min weights into the nearest surviving cluster, removing bit-width
inflation from stray weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, RefinementImpossibleError


@dataclass
class ClusterMap:
    """Partition of one layer's weights into value clusters.

    ``assignments`` indexes ``centroids`` per weight; centroids are
    strictly increasing and sizes sum to the layer size.
    """

    layer: str
    edges: np.ndarray
    assignments: np.ndarray
    centroids: np.ndarray
    sizes: np.ndarray

    @property
    def k(self) -> int:
        return len(self.centroids)

    @property
    def n(self) -> int:
        return int(self.sizes.sum())

    @property
    def bits(self) -> float:
        return float(np.log2(self.k))


@dataclass(frozen=True)
class RefineConfig:
    n_min: int = 10

    def __post_init__(self):
        if self.n_min < 0:
            raise InputError(f"n_min must be nonnegative, got {self.n_min}")


def identify_clusters(weights, precision_bits: int = 7, layer: str = "") -> ClusterMap:
    """Equal-width binning of [min, max] at 2^precision_bits bins.

    Each nonempty bin becomes a cluster whose centroid is the mean of its
    member weights. A constant layer collapses to a single cluster.
    """
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.size == 0:
        raise InputError("cannot cluster an empty layer")
    lo = float(w.min())
    hi = float(w.max())
    if hi == lo:
        return ClusterMap(
            layer=layer,
            edges=np.array([lo, hi]),
            assignments=np.zeros(w.size, dtype=np.int64),
            centroids=np.array([lo]),
            sizes=np.array([w.size], dtype=np.int64),
        )
    n_bins = 2**precision_bits
    edges = np.linspace(lo, hi, n_bins + 1)
    width = (hi - lo) / n_bins
    bin_idx = np.clip(((w - lo) / width).astype(np.int64), 0, n_bins - 1)
    occupied, assignments = np.unique(bin_idx, return_inverse=True)
    k = occupied.size
    sizes = np.bincount(assignments, minlength=k)
    sums = np.bincount(assignments, weights=w, minlength=k)
    centroids = sums / sizes
    return ClusterMap(
        layer=layer,
        edges=edges,
        assignments=assignments.astype(np.int64),
        centroids=centroids,
        sizes=sizes.astype(np.int64),
    )


def snap_to_clusters(weights, cmap: ClusterMap) -> np.ndarray:
    """Replace each weight by its cluster centroid.

    For the weights the map was built from this uses the stored
    assignments, making the operation idempotent. Other inputs (same
    support or outside it) snap to the nearest centroid, which clamps
    out-of-support values to the edge clusters.
    """
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.size == len(cmap.assignments):
        return cmap.centroids[cmap.assignments]
    boundaries = (cmap.centroids[1:] + cmap.centroids[:-1]) / 2.0
    idx = np.searchsorted(boundaries, w)
    return cmap.centroids[idx]


def refine_clusters(cmap: ClusterMap, cfg: RefineConfig) -> ClusterMap:
    """Merge clusters of size <= n_min into the nearest larger cluster.

    Small clusters are processed from smallest upward; the receiving
    cluster is the surviving (size > n_min) cluster with nearest
    centroid, ties breaking toward the lower centroid. Receiving
    centroids are recomputed after every merge. Fails if no cluster
    exceeds n_min.
    """
    sizes = cmap.sizes.astype(np.int64).copy()
    sums = cmap.centroids * cmap.sizes
    k = len(sizes)
    active = np.ones(k, dtype=bool)
    target = np.arange(k)

    if not (sizes > cfg.n_min).any():
        raise RefinementImpossibleError(
            f"layer {cmap.layer!r}: all {k} clusters have <= {cfg.n_min} weights"
        )

    def centroid(i):
        return sums[i] / sizes[i]

    while True:
        small = [i for i in range(k) if active[i] and sizes[i] <= cfg.n_min]
        if not small:
            break
        # smallest first; among equals, lowest centroid
        c = min(small, key=lambda i: (sizes[i], centroid(i)))
        survivors = [i for i in range(k) if active[i] and sizes[i] > cfg.n_min]
        s = min(survivors, key=lambda i: (abs(centroid(i) - centroid(c)), centroid(i)))
        sums[s] += sums[c]
        sizes[s] += sizes[c]
        active[c] = False
        target[c] = s

    # resolve merge chains to final clusters
    def resolve(i):
        while target[i] != i:
            i = target[i]
        return i

    final = np.array([resolve(i) for i in range(k)])
    kept = np.unique(final)
    # merges can reorder centroids; relabel in increasing-centroid order
    order = np.argsort([centroid(i) for i in kept])
    kept = kept[order]
    relabel = {old: new for new, old in enumerate(kept)}
    new_assignments = np.array(
        [relabel[final[a]] for a in cmap.assignments], dtype=np.int64
    )
    new_sizes = sizes[kept]
    new_centroids = np.array([centroid(i) for i in kept])
    return ClusterMap(
        layer=cmap.layer,
        edges=cmap.edges.copy(),
        assignments=new_assignments,
        centroids=new_centroids,
        sizes=new_sizes.astype(np.int64),
    )


@dataclass
class QuantizationReport:
    """Per-layer cluster counts and bit-widths plus their weighted mean."""

    per_layer: list[tuple[str, int, float]]  # (layer, K_l, b_l)
    b_bar: float
    refined: bool
    delta_accuracy: float


def bit_widths(
    maps: list[ClusterMap], refined: bool = False, delta_accuracy: float = float("nan")
) -> QuantizationReport:
    """b_l = log2 K_l per layer; b_bar weights each layer by its size."""
    if not maps:
        raise InputError("no cluster maps given")
    per_layer = [(m.layer, m.k, m.bits) for m in maps]
    total = sum(m.n for m in maps)
    b_bar = sum(m.n * m.bits for m in maps) / total
    return QuantizationReport(
        per_layer=per_layer, b_bar=float(b_bar), refined=refined, delta_accuracy=delta_accuracy
    )


def heq_quantize(weights, bits: int, layer: str = "") -> tuple[np.ndarray, ClusterMap]:
    """Equal-count quantization: 2^bits quantile groups, group-mean codes.

    Weights are stably sorted and split into 2^bits groups whose counts
    differ by at most one (the remainder goes to the first groups); each
    weight is replaced by its group's mean.
    """
    w = np.asarray(weights, dtype=np.float64).ravel()
    if bits < 1:
        raise InputError(f"bits must be >= 1, got {bits}")
    groups = 2**bits
    if w.size < groups:
        raise InputError(f"need at least {groups} weights for {bits}-bit groups, got {w.size}")
    order = np.argsort(w, kind="stable")
    base, rem = divmod(w.size, groups)
    group_sizes = np.full(groups, base, dtype=np.int64)
    group_sizes[:rem] += 1
    starts = np.concatenate([[0], np.cumsum(group_sizes)])
    snapped = np.empty_like(w)
    group_of = np.empty(w.size, dtype=np.int64)
    reps = np.empty(groups)
    for g in range(groups):
        members = order[starts[g] : starts[g + 1]]
        reps[g] = w[members].mean()
        snapped[members] = reps[g]
        group_of[members] = g

    # identical group means (tied data) collapse into one cluster
    distinct = np.flatnonzero(np.concatenate([[True], np.diff(reps) > 0]))
    cluster_of_group = np.searchsorted(distinct, np.arange(groups), side="right") - 1
    centroids = reps[distinct]
    assignments = cluster_of_group[group_of]
    sizes = np.bincount(assignments, minlength=len(centroids))
    sorted_w = w[order]
    interior = [
        (sorted_w[starts[g] - 1] + sorted_w[starts[g]]) / 2.0 for g in range(1, groups)
    ]
    edges = np.array([sorted_w[0]] + interior + [sorted_w[-1]])
    cmap = ClusterMap(
        layer=layer,
        edges=edges,
        assignments=assignments,
        centroids=centroids,
        sizes=sizes.astype(np.int64),
    )
    return snapped, cmap


def accuracy_degradation(pre_acc: float, comp_acc: float) -> float:
    """Pretrained minus compressed test accuracy, in percentage points."""
    for v in (pre_acc, comp_acc):
        if not (0.0 <= v <= 100.0):
            raise InputError(f"accuracy {v} outside [0, 100]")
    return pre_acc - comp_acc
