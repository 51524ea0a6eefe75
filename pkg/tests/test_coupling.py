import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from softquant import coupling
from softquant.coupling import (
    CouplingSchedule,
    TriangularWell,
    WellResolutionWarning,
    build_histogram,
    compression_force,
    coupling_loss_estimate,
    effective_potential,
    pairwise_coupling_energy,
    sample_fraction_at,
    well_energy,
)
from softquant.errors import ConfigurationError, InputError


class TestWell:
    def test_fixture_values(self):
        well = TriangularWell(0.5)
        assert well_energy(well, 0.0) == -0.5
        assert well_energy(well, 0.7) == 0.0
        assert well_energy(well, -0.7) == 0.0
        assert well_energy(well, 0.25) == -0.25
        assert well_energy(well, -0.25) == -0.25

    def test_zero_at_boundary(self):
        well = TriangularWell(0.5)
        assert well_energy(well, 0.5) == 0.0
        assert well_energy(well, -0.5) == 0.0

    def test_invalid_range(self):
        with pytest.raises(ConfigurationError):
            TriangularWell(0.0)

    @given(
        st.floats(min_value=1e-3, max_value=10.0),
        st.floats(min_value=-20.0, max_value=20.0, allow_nan=False),
    )
    @settings(max_examples=100, deadline=None)
    def test_even_and_nonpositive(self, w, x):
        well = TriangularWell(w)
        assert well_energy(well, x) == well_energy(well, -x)
        assert well_energy(well, x) <= 0.0
        if abs(x) >= w:
            assert well_energy(well, x) == 0.0


class TestPairwiseEnergy:
    def test_two_coincident_weights(self):
        assert pairwise_coupling_energy([0.0, 0.0], TriangularWell(0.2)) == -0.4

    def test_three_weights_one_near_pair(self):
        got = pairwise_coupling_energy([0.0, 0.1, 1.0], TriangularWell(0.2))
        assert abs(got - (-0.2)) < 1e-15

    def test_all_pairs_outside_range_zero(self):
        weights = np.arange(10, dtype=float)  # spacing 1 > w
        assert pairwise_coupling_energy(weights, TriangularWell(0.5)) == 0.0

    def test_single_weight_rejected(self):
        with pytest.raises(InputError):
            pairwise_coupling_energy([1.0], TriangularWell(0.5))

    def test_blocking_does_not_change_result(self):
        w = np.random.default_rng(0).normal(size=300)
        well = TriangularWell(0.3)
        a = pairwise_coupling_energy(w, well, block=7)
        b = pairwise_coupling_energy(w, well, block=300)
        assert abs(a - b) < 1e-9

    def test_translation_invariance(self):
        w = np.random.default_rng(1).normal(size=200)
        well = TriangularWell(0.4)
        base = pairwise_coupling_energy(w, well)
        shifted = pairwise_coupling_energy(w + 5.37, well)
        assert abs(base - shifted) <= 1e-9 * abs(base)

    def test_parity_invariance(self):
        w = np.random.default_rng(2).normal(size=200)
        well = TriangularWell(0.4)
        assert pairwise_coupling_energy(w, well) == pairwise_coupling_energy(-w, well)


class TestHistogram:
    def test_identical_weights_single_bin(self):
        hist = build_histogram(np.full(50, 1.25), 64, 1.0, None)
        assert (hist.counts > 0).sum() == 1
        assert hist.counts.sum() == 50

    def test_full_fraction_conserves_counts(self):
        w = np.random.default_rng(3).uniform(-1, 1, size=777)
        hist = build_histogram(w, 256, 1.0, None)
        assert hist.counts.sum() == 777
        assert hist.n_total == 777

    def test_support_padding_is_one_bin_width(self):
        w = np.array([0.0, 1.0])
        hist = build_histogram(w, 10, 1.0, None)
        assert hist.lo == pytest.approx(-hist.bin_width)
        assert hist.hi == pytest.approx(1.0 + hist.bin_width)
        assert hist.bin_width == pytest.approx(1.0 / 8)

    def test_subsample_matches_reference_sampler(self):
        w = np.random.default_rng(4).normal(size=1000)
        hist = build_histogram(w, 128, 0.5, np.random.default_rng(99))
        # reference: same one-call protocol, numpy's own binning
        idx = np.random.default_rng(99).choice(1000, size=500, replace=False)
        expected, _ = np.histogram(w[idx], bins=128, range=(hist.lo, hist.hi))
        np.testing.assert_array_equal(hist.counts, expected)
        assert hist.counts.sum() == 500

    def test_empty_layer_rejected(self):
        with pytest.raises(InputError):
            build_histogram(np.array([]), 64, 1.0, None)

    def test_bad_fraction_rejected(self):
        with pytest.raises(InputError):
            build_histogram(np.ones(4), 64, 0.0, None)

    def test_weights_at_hi_go_to_last_bin(self):
        hist = build_histogram(np.array([0.0, 1.0]), 16, 1.0, None)
        assert hist.bin_index(hist.hi) == hist.n_bins - 1
        assert hist.bin_index(hist.hi + 5.0) == hist.n_bins - 1
        assert hist.bin_index(hist.lo - 5.0) == 0


class TestEffectivePotential:
    def test_empty_neighborhood_is_exactly_zero(self):
        # two far clusters; probe bins between them, beyond the well range
        w = np.concatenate([np.full(30, 0.0), np.full(30, 10.0)])
        hist = build_histogram(w, 1024, 1.0, None)
        pot = effective_potential(hist, TriangularWell(0.5))
        mid = hist.bin_index(5.0)
        assert pot.values[mid] == 0.0
        assert pot.derivative[mid] == 0.0

    def test_single_populated_bin_equals_minus_n_w(self):
        n, wrange = 200, 0.25
        hist = build_histogram(np.full(n, 3.0), 256, 1.0, None)
        pot = effective_potential(hist, TriangularWell(wrange))
        at = hist.bin_index(3.0)
        assert pot.values[at] == pytest.approx(-n * wrange, rel=1e-12)

    def test_matches_pairwise_oracle_on_random_layer(self):
        w = np.random.default_rng(7).normal(0, 0.05, size=500)
        well = TriangularWell(0.02)
        hist = build_histogram(w, 2**14, 1.0, None)
        pot = effective_potential(hist, well)
        total = float(pot.values[hist.bin_index(w)].sum()) - len(w) * well_energy(well, 0.0)
        oracle = pairwise_coupling_energy(w, well)
        assert oracle < 0
        assert abs(total - oracle) / abs(oracle) <= 1e-2

    def test_values_nonpositive(self):
        w = np.random.default_rng(8).normal(size=400)
        hist = build_histogram(w, 4096, 1.0, None)
        pot = effective_potential(hist, TriangularWell(0.2))
        assert np.all(pot.values <= 0.0)

    def test_unresolved_well_warns(self):
        w = np.random.default_rng(9).uniform(-1, 1, size=100)
        hist = build_histogram(w, 16, 1.0, None)
        with pytest.warns(WellResolutionWarning):
            effective_potential(hist, TriangularWell(hist.bin_width * 0.5))

    def test_well_wider_than_support_rejected(self):
        hist = build_histogram(np.array([0.0, 1.0]), 64, 1.0, None)
        with pytest.raises(InputError):
            effective_potential(hist, TriangularWell(10.0))


class TestCompressionForce:
    def test_symmetric_clusters_get_opposite_forces(self):
        n = 64
        # symmetric anchors widen the support so the well can span the pair
        w = np.concatenate([np.full(n, -0.2), np.full(n, 0.2), [-1.0, 1.0]])
        hist = build_histogram(w, 2048, 1.0, None)
        pot = effective_potential(hist, TriangularWell(0.6))  # clusters interact
        force = compression_force(pot, hist, np.array([-0.2, 0.2]), h_l=1.0)
        assert force[0] < 0 < force[1] or force[0] > 0 > force[1]
        assert abs(force[0] + force[1]) < 1e-8 * abs(force[0])

    def test_two_delta_forces_attract(self):
        # separated by d < w: gradient descent must reduce the separation
        n = 50
        w = np.concatenate([np.full(n, -0.1), np.full(n, 0.1), [-1.0, 1.0]])
        hist = build_histogram(w, 2048, 1.0, None)
        pot = effective_potential(hist, TriangularWell(0.5))
        force = compression_force(pot, hist, np.array([-0.1, 0.1]), h_l=1.0)
        # descent (theta -= lr * force) moves the deltas toward each other
        assert force[0] < 0.0
        assert force[1] > 0.0

    def test_far_weight_feels_nothing(self):
        w = np.concatenate([np.random.default_rng(1).normal(0, 0.01, 500), [2.0]])
        hist = build_histogram(w, 2**13, 1.0, None)
        pot = effective_potential(hist, TriangularWell(0.05))
        force = compression_force(pot, hist, np.array([2.0]), h_l=1.0)
        # only its own (symmetric) self term nearby: zero up to transform roundoff
        assert abs(force[0]) < 1e-8

    def test_scales_with_h(self):
        w = np.random.default_rng(2).normal(size=300)
        hist = build_histogram(w, 4096, 1.0, None)
        pot = effective_potential(hist, TriangularWell(0.3))
        f1 = compression_force(pot, hist, w, h_l=1.0)
        f2 = compression_force(pot, hist, w, h_l=2.5)
        np.testing.assert_allclose(f2, 2.5 * f1, rtol=1e-15)

    def test_parity_negates_forces(self):
        w = np.random.default_rng(3).normal(size=400)
        well = TriangularWell(0.3)
        h1 = build_histogram(w, 4096, 1.0, None)
        f1 = compression_force(effective_potential(h1, well), h1, w, 1.0)
        h2 = build_histogram(-w, 4096, 1.0, None)
        f2 = compression_force(effective_potential(h2, well), h2, -w, 1.0)
        np.testing.assert_allclose(f2, -f1, atol=1e-8 * np.abs(f1).max())


class TestCouplingLossEstimate:
    def test_no_interactions_zero(self):
        w = np.arange(20, dtype=float)
        hist = build_histogram(w, 2048, 1.0, None)
        pot = effective_potential(hist, TriangularWell(0.01))
        # self-interaction only: subtracting it leaves nothing
        est = coupling_loss_estimate(pot, hist, 1.0) - 20 * well_energy(TriangularWell(0.01), 0.0)
        assert abs(est) < 1e-9

    def test_coincident_weights_closed_form(self):
        n, wrange, h_l = 100, 0.3, 0.7
        hist = build_histogram(np.full(n, -2.0), 512, 1.0, None)
        pot = effective_potential(hist, TriangularWell(wrange))
        est = coupling_loss_estimate(pot, hist, h_l)
        assert est == pytest.approx(-h_l * n * n * wrange, rel=1e-12)
        assert est <= 0.0

    def test_subsample_estimate_consistent(self):
        w = np.random.default_rng(11).normal(0, 0.05, size=10_000)
        well = TriangularWell(0.01)
        hist_full = build_histogram(w, 2**14, 1.0, None)
        full = coupling_loss_estimate(effective_potential(hist_full, well), hist_full, 1.0)
        estimates = []
        for seed in range(8):
            hist = build_histogram(w, 2**14, 0.5, np.random.default_rng(seed))
            estimates.append(
                coupling_loss_estimate(effective_potential(hist, well), hist, 1.0)
            )
        assert abs(np.mean(estimates) - full) / abs(full) <= 0.05


class TestSchedule:
    def test_boundaries_and_midpoint(self):
        s = CouplingSchedule(f0=0.1, epoch_full=20, total_epochs=30)
        assert sample_fraction_at(s, 0) == 0.1
        assert sample_fraction_at(s, 20) == 1.0
        assert sample_fraction_at(s, 29) == 1.0
        assert sample_fraction_at(s, 10) == pytest.approx((0.1 + 1.0) / 2)

    def test_epoch_out_of_range(self):
        s = CouplingSchedule(f0=0.1, epoch_full=5, total_epochs=10)
        with pytest.raises(InputError):
            sample_fraction_at(s, 10)

    def test_default_schedule_reaches_one_by_final_epochs(self):
        s = coupling.default_schedule(0.1, 30)
        assert s.epoch_full == 25
        assert sample_fraction_at(s, 25) == 1.0

    @given(st.integers(min_value=1, max_value=50), st.integers(min_value=0, max_value=49))
    @settings(max_examples=50, deadline=None)
    def test_fraction_monotone_and_bounded(self, total, epoch):
        if epoch >= total:
            return
        s = coupling.default_schedule(0.1, total)
        f = sample_fraction_at(s, epoch)
        assert 0.1 <= f <= 1.0
        if epoch + 1 < total:
            assert sample_fraction_at(s, epoch + 1) >= f


def test_histogram_energy_translation_invariance():
    w = np.random.default_rng(13).normal(0, 0.05, size=800)
    well = TriangularWell(0.02)

    def estimate(v):
        hist = build_histogram(v, 2**14, 1.0, None)
        pot = effective_potential(hist, well)
        return coupling_loss_estimate(pot, hist, 1.0)

    base = estimate(w)
    shifted = estimate(w + 0.731)
    assert abs(base - shifted) / abs(base) <= 1e-3  # re-binning tolerance
