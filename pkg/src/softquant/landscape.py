"""Loss-per-distance analysis of compressed models against random
perturbations of matched layerwise magnitude.

A compressed model sits at some parameter-space distance from its
pretrained parent. To judge how efficiently that displacement traverses
the loss landscape, the same layerwise distances are reproduced by
isotropic Gaussian noise (standard deviation delta_l / sqrt(N_l) per
weight) and the loss change per unit distance of the compressed model is
ranked within the distribution of the random ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import InputError


@dataclass(frozen=True)
class LayerDistances:
    per_layer: dict[str, float]
    total: float


def layer_distances(pre: nn.ModelState, post: nn.ModelState) -> LayerDistances:
    """Per-layer L2 distances between weight tensors, plus the global total.

    Distances cover weight tensors only; biases are not part of the
    compressed representation.
    """
    if pre.specs() != post.specs():
        raise InputError("models have different architectures")
    per_layer = {}
    sq = 0.0
    for a, b in zip(pre.layers, post.layers):
        d = float(np.sqrt(((a.weights - b.weights) ** 2).sum()))
        per_layer[a.spec.name] = d
        sq += d * d
    return LayerDistances(per_layer=per_layer, total=float(np.sqrt(sq)))


def gaussian_perturb(pre: nn.ModelState, deltas: dict[str, float], rng) -> nn.ModelState:
    """Add N(0, (delta_l/sqrt(N_l))^2) noise to every weight of each layer.

    The realized per-layer displacement concentrates on delta_l. Layers
    with delta_l == 0 are left untouched.
    """
    out = pre.copy()
    for layer in out.layers:
        d = deltas.get(layer.spec.name, 0.0)
        if d < 0:
            raise InputError(f"negative distance for layer {layer.spec.name!r}")
        if d == 0.0:
            continue
        eta = d / np.sqrt(layer.weights.size)
        layer.weights += rng.normal(0.0, eta, size=layer.weights.shape)
    return out


def loss_slope(pre: nn.ModelState, other: nn.ModelState, eval_x, eval_y) -> float:
    """Task-loss change per unit parameter distance, on a fixed evaluation set."""
    dist = layer_distances(pre, other).total
    if dist == 0.0:
        raise InputError("zero parameter distance; slope undefined")
    loss_pre = nn.cross_entropy(nn.forward(pre, eval_x), eval_y)
    loss_other = nn.cross_entropy(nn.forward(other, eval_x), eval_y)
    return (loss_other - loss_pre) / dist


@dataclass
class PerturbationReport:
    delta_theta_total: float
    delta_task_loss: float
    slope: float
    random_slopes: np.ndarray
    percentile_rank: float


def perturbation_study(
    pre: nn.ModelState,
    compressed: nn.ModelState,
    eval_x,
    eval_y,
    n_samples: int,
    seed: int,
) -> PerturbationReport:
    """Rank the compressed model's loss slope among random perturbations.

    Every random sample reproduces the compressed model's layerwise
    distances with Gaussian noise drawn from its own stream
    (seed, sample index), so samples are independently reproducible.
    """
    if n_samples < 10:
        raise InputError(f"need at least 10 samples, got {n_samples}")
    dists = layer_distances(pre, compressed)
    if dists.total == 0.0:
        raise InputError("compressed model coincides with the pretrained model")
    loss_pre = nn.cross_entropy(nn.forward(pre, eval_x), eval_y)
    loss_comp = nn.cross_entropy(nn.forward(compressed, eval_x), eval_y)
    slope = (loss_comp - loss_pre) / dists.total

    random_slopes = np.empty(n_samples)
    for i in range(n_samples):
        rng = np.random.default_rng([seed, i])
        perturbed = gaussian_perturb(pre, dists.per_layer, rng)
        d = layer_distances(pre, perturbed).total
        loss_p = nn.cross_entropy(nn.forward(perturbed, eval_x), eval_y)
        random_slopes[i] = (loss_p - loss_pre) / d

    rank = 100.0 * float(np.mean(random_slopes < slope))
    return PerturbationReport(
        delta_theta_total=dists.total,
        delta_task_loss=loss_comp - loss_pre,
        slope=slope,
        random_slopes=random_slopes,
        percentile_rank=rank,
    )
