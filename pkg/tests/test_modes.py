import math

import numpy as np
import pytest

from fsolink.errors import DimensionError, ParameterError, ZeroPowerError
from fsolink.field import GridSpec, gaussian_field, total_power, uniform_disc_field
from fsolink.modes import (
    MODE_ORDER,
    ModeBasis,
    decompose,
    fit_basis_waist,
    hg_mode_field,
    mode_statistics,
    modes_up_to_group,
    optimize_smf_waist,
    smf_coupling_efficiency,
)

LAM = 1.55e-6


@pytest.fixture(scope="module")
def grid():
    return GridSpec(256, 1.0, LAM)


@pytest.fixture(scope="module")
def basis(grid):
    return ModeBasis.build(grid, aperture_diameter_m=0.5)


@pytest.fixture(scope="module")
def smooth_field(grid):
    rng = np.random.default_rng(42)
    n = grid.n
    spec = np.zeros((n, n), dtype=np.complex128)
    keep = 10
    block = rng.standard_normal((2 * keep, 2 * keep)) + 1j * rng.standard_normal(
        (2 * keep, 2 * keep)
    )
    spec[:keep, :keep] = block[:keep, :keep]
    spec[-keep:, :keep] = block[keep:, :keep]
    spec[:keep, -keep:] = block[:keep, keep:]
    spec[-keep:, -keep:] = block[keep:, keep:]
    samples = np.fft.ifft2(spec) * n
    return gaussian_field(grid, 0.1).with_samples(samples)


class TestModeOrder:
    def test_table_ordering(self):
        assert MODE_ORDER[:6] == ((0, 0), (0, 1), (1, 0), (0, 2), (1, 1), (2, 0))
        assert len(MODE_ORDER) == 15
        assert MODE_ORDER[-1] == (4, 0)

    def test_group_prefixes(self):
        assert len(modes_up_to_group(2)) == 3
        assert len(modes_up_to_group(3)) == 6
        assert len(modes_up_to_group(4)) == 10
        assert len(modes_up_to_group(5)) == 15


class TestHgModeField:
    def test_fundamental_is_centered_gaussian(self, grid):
        mode = hg_mode_field(0, 0, 0.1, grid)
        assert abs(total_power(mode) - 1.0) < 1e-12
        peak = np.unravel_index(np.argmax(np.abs(mode.samples)), mode.samples.shape)
        assert peak == (grid.n // 2, grid.n // 2)

    def test_odd_mode_vanishes_on_axis(self, grid):
        mode = hg_mode_field(1, 0, 0.1, grid)
        # m indexes x: the x = 0 column is exactly zero
        np.testing.assert_array_equal(mode.samples[:, grid.n // 2], 0.0)

    def test_cross_overlap_near_zero(self, grid):
        a = hg_mode_field(2, 1, 0.1118, grid)
        b = hg_mode_field(1, 2, 0.1118, grid)
        overlap = abs(np.vdot(a.samples, b.samples)) * grid.spacing_m**2
        assert overlap < 1e-3

    def test_waist_resolution_errors(self, grid):
        with pytest.raises(ParameterError):
            hg_mode_field(0, 0, grid.spacing_m, grid)  # too small for the grid
        with pytest.raises(ParameterError):
            hg_mode_field(4, 4, 0.4, grid)  # group spills past the extent


class TestFitBasisWaist:
    def test_reference_aperture(self):
        w = fit_basis_waist(0.5, 4)
        assert abs(w - 0.25 / math.sqrt(5.0)) < 1e-15

    def test_group_zero(self):
        assert fit_basis_waist(0.5, 0) == 0.25

    def test_linear_in_diameter(self):
        assert abs(fit_basis_waist(1.0, 4) / fit_basis_waist(0.5, 4) - 2.0) < 1e-12


class TestBasis:
    def test_gram_orthonormal(self, basis):
        gram = basis.gram()
        off = gram - np.diag(np.diag(gram))
        assert np.max(np.abs(off)) < 1e-3
        assert np.max(np.abs(np.diag(gram) - 1)) < 1e-4

    def test_subset_keeps_order(self, basis):
        sub = basis.subset(6)
        assert sub.indices == MODE_ORDER[:6]


class TestDecompose:
    def test_basis_element_roundtrip(self, grid, basis):
        field = hg_mode_field(0, 1, basis.waist_m, grid)
        mc = decompose(field, basis)
        assert abs(mc.coeffs[1]) > 1 - 1e-3
        others = np.delete(np.abs(mc.coeffs), 1)
        assert np.all(others < 1e-3)
        assert abs(mc.residual_power) < 1e-3

    def test_zero_field(self, grid, basis):
        zero = gaussian_field(grid, 0.1).with_samples(np.zeros((grid.n, grid.n), complex))
        mc = decompose(zero, basis)
        np.testing.assert_array_equal(mc.coeffs, 0.0)
        assert mc.residual_power == 0.0

    def test_coefficients_match_direct_quadrature(self, grid, basis, smooth_field):
        # independent oracle: explicit double-sum quadrature per mode
        field_on_grid = smooth_field
        mc = decompose(field_on_grid, basis)
        dx2 = grid.spacing_m**2
        for k in (0, 4, 14):
            direct = 0.0 + 0.0j
            mode = basis.sampled[k]
            for i in range(grid.n):
                direct += np.sum(np.conj(mode[i]) * field_on_grid.samples[i]) * dx2
            assert abs(direct - mc.coeffs[k]) < 1e-9 * max(1.0, abs(direct))

    def test_bessel_inequality(self, grid, basis, smooth_field):
        mc = decompose(smooth_field, basis)
        assert mc.residual_power >= -1e-9 * mc.total_power

    def test_linearity(self, grid, basis):
        f = hg_mode_field(0, 0, 0.13, grid)
        g = hg_mode_field(1, 1, 0.09, grid)
        combo = f.with_samples(0.7 * f.samples + 0.3j * g.samples)
        mc = decompose(combo, basis)
        expected = 0.7 * decompose(f, basis).coeffs + 0.3j * decompose(g, basis).coeffs
        np.testing.assert_allclose(mc.coeffs, expected, atol=1e-9)

    def test_parseval_on_span(self, grid, basis):
        rng = np.random.default_rng(8)
        coeffs = rng.standard_normal(15) + 1j * rng.standard_normal(15)
        synth = np.einsum("k,kij->ij", coeffs, basis.sampled)
        field = hg_mode_field(0, 0, 0.1, grid).with_samples(synth)
        mc = decompose(field, basis)
        np.testing.assert_allclose(mc.coeffs, coeffs, rtol=1e-6, atol=1e-6)

    def test_geometry_mismatch(self, basis):
        other = gaussian_field(GridSpec(128, 1.0, LAM), 0.1)
        with pytest.raises(DimensionError):
            decompose(other, basis)


class TestSmfCoupling:
    def test_matched_gaussian_couples_fully(self, grid):
        beam = gaussian_field(grid, 0.13)
        assert abs(smf_coupling_efficiency(beam, 0.13) - 1.0) < 1e-6

    def test_uniform_disc_optimum_is_81_percent(self, grid):
        disc = uniform_disc_field(grid, 0.5)
        waist, eff = optimize_smf_waist(disc)
        assert abs(eff - 0.81) <= 0.01
        # cross-check against a dense 1-D scan oracle
        scan = np.linspace(0.15, 0.30, 400)
        scan_eff = [smf_coupling_efficiency(disc, w) for w in scan]
        assert eff >= max(scan_eff) - 1e-5

    def test_orthogonal_mode_does_not_couple(self, grid):
        mode = hg_mode_field(1, 0, 0.13, grid)
        assert smf_coupling_efficiency(mode, 0.13) < 1e-6

    def test_invariance_to_phase_and_scale(self, grid, basis):
        beam = gaussian_field(grid, 0.2)
        base = smf_coupling_efficiency(beam, 0.1)
        rotated = beam.with_samples(beam.samples * np.exp(1j * 0.77) * 3.0)
        assert abs(smf_coupling_efficiency(rotated, 0.1) - base) < 1e-12

    def test_zero_power_rejected(self, grid):
        zero = gaussian_field(grid, 0.1).with_samples(np.zeros((grid.n, grid.n), complex))
        with pytest.raises(ZeroPowerError):
            smf_coupling_efficiency(zero, 0.1)
        with pytest.raises(ZeroPowerError):
            optimize_smf_waist(zero)

    def test_optimum_self_matches_gaussian(self, grid):
        beam = gaussian_field(grid, 0.17)
        waist, eff = optimize_smf_waist(beam)
        assert abs(waist / 0.17 - 1) < 0.01
        assert eff > 1 - 1e-6

    def test_optimum_scales_with_aperture(self):
        small = uniform_disc_field(GridSpec(256, 1.0, LAM), 0.4)
        large = uniform_disc_field(GridSpec(256, 2.0, LAM), 0.8)
        w_small, _ = optimize_smf_waist(small)
        w_large, _ = optimize_smf_waist(large)
        assert abs(w_large / w_small - 2.0) < 0.01


class TestModeStatistics:
    def test_single_frame_all_in_fundamental(self, grid, basis):
        mc = decompose(hg_mode_field(0, 0, basis.waist_m, grid), basis)
        stats = mode_statistics([mc])
        assert stats.mean_fraction[0] > 1 - 1e-3
        assert np.all(stats.mean_fraction[1:] < 1e-3)

    def test_fractions_sum_to_one_with_residual(self, grid, basis, smooth_field):
        stats = mode_statistics([decompose(smooth_field, basis)])
        total = stats.mean_fraction.sum() + stats.residual_fraction
        assert abs(total - 1.0) < 1e-9

    def test_empty_series_rejected(self):
        with pytest.raises(ParameterError):
            mode_statistics([])
