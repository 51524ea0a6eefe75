"""Pairwise attractive coupling and its fast histogram approximation.

Weights within a layer interact through a short-range triangular well.
The layer's coupling energy is a double sum over weight pairs; evaluated
directly this costs O(N^2). The fast path bins the weights into a
histogram, convolves it with the well to obtain an effective potential
sampled at bin midpoints, and differentiates across bins, reducing the
cost to O(N + N_b log N_b). Each weight then feels a force equal to the
potential's slope at its bin midpoint.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter1d
from scipy.signal import fftconvolve

from .errors import ConfigurationError, InputError, NumericError


class WellResolutionWarning(UserWarning):
    """The interaction range does not resolve at the histogram resolution."""


@dataclass(frozen=True)
class TriangularWell:
    """Attractive pair potential (|x| - w) inside |x| < w, zero outside.

    The boundary indicator is taken strict (zero at |x| = w), which keeps
    the well continuous. The well is even and nonpositive on its support,
    giving a constant attractive force of unit magnitude inside the range.
    """

    w: float

    def __post_init__(self):
        if not (self.w > 0):
            raise ConfigurationError(f"well range must be positive, got {self.w}")

    def energy(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.where(x * x < self.w * self.w, np.abs(x) - self.w, 0.0)


def well_energy(well: TriangularWell, x: float) -> float:
    return float(well.energy(x))


def pairwise_coupling_energy(weights, well: TriangularWell, block: int = 256) -> float:
    """Exact O(N^2) coupling energy: sum over ordered pairs i != j.

    Each unordered pair is counted twice. Serves as the oracle for the
    histogram path. Evaluated in row blocks to bound memory.
    """
    w = np.asarray(weights, dtype=np.float64).ravel()
    n = w.size
    if n < 2:
        raise InputError(f"need at least 2 weights, got {n}")
    total = 0.0
    for start in range(0, n, block):
        diffs = w[start : start + block, None] - w[None, :]
        total += float(well.energy(diffs).sum())
    # the full matrix includes the diagonal i == j; remove its N * U(0)
    return total - n * float(well.energy(0.0))


@dataclass
class WeightHistogram:
    """Binned estimate of a layer's weight density.

    The support covers the full layer's [min, max] padded by one bin
    width on each side; ``counts`` bins a uniform random subsample of
    round(sample_fraction * n_total) weights. Values exactly at ``hi``
    land in the last bin.
    """

    lo: float
    hi: float
    n_bins: int
    counts: np.ndarray
    sample_fraction: float
    n_total: int

    @property
    def bin_width(self) -> float:
        return (self.hi - self.lo) / self.n_bins

    @property
    def midpoints(self) -> np.ndarray:
        return self.lo + (np.arange(self.n_bins) + 0.5) * self.bin_width

    def bin_index(self, values) -> np.ndarray:
        """Bin of each value, clamped to the edge bins outside the support."""
        v = np.asarray(values, dtype=np.float64)
        idx = np.floor((v - self.lo) / self.bin_width).astype(np.int64)
        return np.clip(idx, 0, self.n_bins - 1)


def histogram_support(weights: np.ndarray, n_bins: int) -> tuple[float, float]:
    """[min, max] padded by one (final) bin width per side.

    Solving pad = (max - min) / (n_bins - 2) makes the pad equal to the
    resulting bin width exactly. A degenerate layer (max == min) gets a
    unit half-width so the histogram stays well-formed.
    """
    wmin = float(weights.min())
    wmax = float(weights.max())
    if wmax > wmin:
        pad = (wmax - wmin) / (n_bins - 2)
        return wmin - pad, wmax + pad
    return wmin - 1.0, wmax + 1.0


def build_histogram(weights, n_bins: int, fraction: float, rng) -> WeightHistogram:
    """Histogram a uniform random subsample of the layer.

    The rng is consumed by exactly one ``choice`` call when fraction < 1
    and not touched otherwise, so seeded reconstruction is a single-call
    protocol.
    """
    w = np.asarray(weights, dtype=np.float64).ravel()
    n = w.size
    if n == 0:
        raise InputError("cannot histogram an empty layer")
    if n_bins < 2:
        raise InputError(f"need at least 2 bins, got {n_bins}")
    if not (0.0 < fraction <= 1.0):
        raise InputError(f"fraction must lie in (0, 1], got {fraction}")
    lo, hi = histogram_support(w, n_bins)
    if fraction < 1.0:
        k = max(1, int(round(fraction * n)))
        sample = w[rng.choice(n, size=k, replace=False)]
    else:
        sample = w
    counts, _ = np.histogram(sample, bins=n_bins, range=(lo, hi))
    return WeightHistogram(
        lo=lo, hi=hi, n_bins=n_bins, counts=counts, sample_fraction=fraction, n_total=n
    )


@dataclass
class EffectivePotential:
    """Per-layer potential on histogram bins and its binned derivative.

    ``values[k]`` approximates the layer-extensive potential felt by a
    weight sitting at bin midpoint k; ``derivative`` is its central
    difference across bins (one-sided at the edges).
    """

    values: np.ndarray
    derivative: np.ndarray
    well: TriangularWell
    n_total: int


def effective_potential(hist: WeightHistogram, well: TriangularWell) -> EffectivePotential:
    """Convolve the histogram with the well; O(N_b log N_b).

    The convolution runs over the kernel sampled at bin-offset distances,
    so the result is exactly the double sum over bin midpoints, scaled to
    the full layer. Bins with no mass within the interaction range are
    zeroed explicitly, removing transform roundoff where the true
    potential vanishes; elsewhere values are clamped to be nonpositive.
    """
    delta = hist.bin_width
    if well.w >= (hist.hi - hist.lo):
        raise InputError(
            f"well range {well.w} must be smaller than the support width {hist.hi - hist.lo}"
        )
    if well.w <= delta:
        warnings.warn(
            f"well range {well.w} is at or below one bin width {delta}; "
            "the interaction is unresolved at this resolution",
            WellResolutionWarning,
        )
    m = int(np.ceil(well.w / delta))
    offsets = np.arange(-m, m + 1) * delta
    kernel = well.energy(offsets)
    counts = hist.counts.astype(np.float64)
    raw = fftconvolve(counts, kernel, mode="same")
    n_sampled = int(hist.counts.sum())
    values = (hist.n_total / n_sampled) * raw
    occupied = maximum_filter1d((hist.counts > 0).astype(np.uint8), size=2 * m + 1)
    values[occupied == 0] = 0.0
    np.minimum(values, 0.0, out=values)

    derivative = np.empty_like(values)
    derivative[1:-1] = (values[2:] - values[:-2]) / (2.0 * delta)
    derivative[0] = (values[1] - values[0]) / delta
    derivative[-1] = (values[-1] - values[-2]) / delta
    return EffectivePotential(values=values, derivative=derivative, well=well, n_total=hist.n_total)


def compression_force(
    pot: EffectivePotential, hist: WeightHistogram, weights, h_l: float
) -> np.ndarray:
    """Per-weight force h_l * dV/dtheta at each weight's bin midpoint.

    Weights outside the support clamp to the edge bins.
    """
    if len(pot.values) != hist.n_bins:
        raise ConfigurationError("potential was not built from this histogram")
    idx = hist.bin_index(np.asarray(weights, dtype=np.float64).ravel())
    force = h_l * pot.derivative[idx]
    if not np.isfinite(force).all():
        raise NumericError("non-finite compression force")
    return force


def coupling_loss_estimate(pot: EffectivePotential, hist: WeightHistogram, h_l: float) -> float:
    """Coupling-loss estimate h_l * sum_i V(bin(theta_i)), rescaled to the full layer."""
    if len(pot.values) != hist.n_bins:
        raise ConfigurationError("potential was not built from this histogram")
    n_sampled = int(hist.counts.sum())
    scale = hist.n_total / n_sampled
    return float(h_l * scale * np.dot(hist.counts, pot.values))


@dataclass(frozen=True)
class CouplingSchedule:
    """Linear ramp of the histogram sampling fraction over epochs."""

    f0: float
    epoch_full: int
    total_epochs: int

    def __post_init__(self):
        if not (0.0 < self.f0 <= 1.0):
            raise ConfigurationError(f"f0 must lie in (0, 1], got {self.f0}")
        if self.epoch_full > self.total_epochs:
            raise ConfigurationError(
                f"epoch_full {self.epoch_full} exceeds total_epochs {self.total_epochs}"
            )


def default_schedule(f0: float, total_epochs: int) -> CouplingSchedule:
    # full layer by the final epochs: reach 1.0 at ceil(5/6 * total)
    return CouplingSchedule(
        f0=f0, epoch_full=int(np.ceil(total_epochs * 5.0 / 6.0)), total_epochs=total_epochs
    )


def sample_fraction_at(schedule: CouplingSchedule, epoch: int) -> float:
    if not (0 <= epoch < schedule.total_epochs):
        raise InputError(
            f"epoch {epoch} outside [0, {schedule.total_epochs})"
        )
    if epoch >= schedule.epoch_full or schedule.epoch_full == 0:
        return 1.0
    return schedule.f0 + (1.0 - schedule.f0) * (epoch / schedule.epoch_full)
