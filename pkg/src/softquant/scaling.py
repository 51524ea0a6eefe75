"""Per-layer coupling parameters derived from global (h, w) plus the
layer-size power law that motivates the strength exponent.

Two global hyperparameters fan out to per-layer values: the interaction
range follows the layer's pretrained weight spread (w_l = w * sigma_l)
and the strength follows an inverse power of the layer size
(h_l = h * N_l^-alpha). The default alpha comes from measuring how the
extensive (unit-strength) coupling energy of pretrained layers grows
with layer size.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from . import nn
from .coupling import (
    TriangularWell,
    build_histogram,
    coupling_loss_estimate,
    effective_potential,
    pairwise_coupling_energy,
)
from .errors import InputError

DEFAULT_ALPHA = 0.66

# layer sizes up to this use the exact pairwise path in extensive_potential
PAIRWISE_LIMIT = 10_000


@dataclass(frozen=True)
class LayerStats:
    """Size and pretrained weight spread of one layer, frozen at measurement."""

    name: str
    n: int
    sigma: float


@dataclass(frozen=True)
class LayerCoupling:
    name: str
    n: int
    sigma: float
    h_l: float
    w_l: float


@dataclass(frozen=True)
class CouplingParams:
    """Global (h, w, alpha) plus the derived per-layer (h_l, w_l)."""

    h: float
    w: float
    alpha: float
    per_layer: tuple[LayerCoupling, ...]

    def for_layer(self, name: str) -> LayerCoupling | None:
        for lc in self.per_layer:
            if lc.name == name:
                return lc
        return None


def layer_stats(weights, name: str = "") -> LayerStats:
    """N and population standard deviation (divide by N) of a weight vector."""
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.size < 2:
        raise InputError(f"layer {name!r}: sigma undefined for N={w.size}")
    return LayerStats(name=name, n=int(w.size), sigma=float(np.std(w)))


def derive_params(
    stats: list[LayerStats], h: float, w: float, alpha: float = DEFAULT_ALPHA
) -> CouplingParams:
    """w_l = w * sigma_l and h_l = h * N_l^-alpha per layer.

    Layers with sigma == 0 would get a degenerate range; they are
    excluded from coupling with a warning.
    """
    if h <= 0 or w <= 0:
        raise InputError(f"h and w must be positive, got h={h}, w={w}")
    per_layer = []
    for s in stats:
        if s.sigma == 0.0:
            warnings.warn(
                f"layer {s.name!r} has sigma == 0; excluded from coupling", UserWarning
            )
            continue
        per_layer.append(
            LayerCoupling(
                name=s.name,
                n=s.n,
                sigma=s.sigma,
                h_l=h * s.n ** (-alpha),
                w_l=w * s.sigma,
            )
        )
    return CouplingParams(h=h, w=w, alpha=alpha, per_layer=tuple(per_layer))


@dataclass(frozen=True)
class PotentialPoint:
    name: str
    n: int
    sigma: float
    energy: float


def extensive_potential(model: nn.ModelState, params: CouplingParams) -> list[PotentialPoint]:
    """Unit-strength (h_l = 1) coupling energy of each coupled layer.

    Uses the exact pairwise sum for layers up to PAIRWISE_LIMIT weights
    and the histogram path (self-interaction removed) above it.
    """
    coupled = [l for l in model.coupled_layers() if params.for_layer(l.spec.name)]
    if len(coupled) < 2:
        raise InputError(f"need at least 2 coupled layers, got {len(coupled)}")
    points = []
    for layer in coupled:
        lc = params.for_layer(layer.spec.name)
        flat = layer.weights.ravel()
        well = TriangularWell(lc.w_l)
        if flat.size <= PAIRWISE_LIMIT:
            energy = pairwise_coupling_energy(flat, well)
        else:
            hist = build_histogram(flat, n_bins=2**14, fraction=1.0, rng=None)
            pot = effective_potential(hist, well)
            energy = coupling_loss_estimate(pot, hist, h_l=1.0) - flat.size * float(
                well.energy(0.0)
            )
        points.append(
            PotentialPoint(name=lc.name, n=lc.n, sigma=lc.sigma, energy=energy)
        )
    return points


@dataclass(frozen=True)
class ScalingFit:
    """OLS fit of log10 |energy| against log10 N."""

    points: tuple[tuple[float, float], ...]
    exponent: float
    mse: float


def fit_power_law(points) -> ScalingFit:
    """Least-squares power-law exponent between layer size and |energy|.

    ``points`` holds (N_l, energy) pairs; pairs with zero energy are
    dropped with a warning before fitting in log-log space.
    """
    kept = []
    for n, energy in points:
        if abs(energy) <= 0.0:
            warnings.warn(f"dropping point with zero energy at N={n}", UserWarning)
            continue
        kept.append((np.log10(n), np.log10(abs(energy))))
    if len(kept) < 3:
        raise InputError(f"need at least 3 usable points, got {len(kept)}")
    log_n = np.array([p[0] for p in kept])
    log_e = np.array([p[1] for p in kept])
    slope, intercept = np.polyfit(log_n, log_e, 1)
    residuals = log_e - (slope * log_n + intercept)
    return ScalingFit(
        points=tuple(kept), exponent=float(slope), mse=float(np.mean(residuals**2))
    )


def write_scaling_csv(path, points: list[PotentialPoint], fit: ScalingFit) -> None:
    """Per-layer energies plus the fitted exponent/mse, one row per layer."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["layer", "n", "sigma", "energy", "exponent", "mse"])
        for p in points:
            writer.writerow(
                [p.name, p.n, repr(p.sigma), repr(p.energy), repr(fit.exponent), repr(fit.mse)]
            )
