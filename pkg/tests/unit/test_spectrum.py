"""
Spectrum Unit Tests

テスト対象: 多様体対角化・励起ホール対称性・スケーリングフィット
"""

import numpy as np
import pytest
from scipy.special import comb

from src.core.coupling import (
    CouplingModel,
    build_coupling_matrices,
    chain_geometry,
    spacing_from_wavelength_ratio,
)
from src.core.errors import EigensolverError, FitError, ManifoldError, UnsupportedGeometryError
from src.core.manifold_basis import enumerate_manifold, project_heff
from src.core.spectrum import (
    ScalingModel,
    antisymmetric_pair,
    band_flatness,
    compute_spectra,
    cube_spectrum,
    degenerate_groups,
    density_of_states_exponent,
    diagonalize,
    diagonalize_manifold,
    dispersion_relation,
    dominant_wavevector,
    excitation_hole_map,
    fermionic_ansatz,
    fit_scaling,
    liouvillian_gap,
    pair_population_map,
)


class TestDiagonalization:
    """対角化テスト"""

    def test_dicke_pair(self):
        """N=2, k0d=2*pi: 単一励起レートは 0 と 2"""
        # ARRANGE
        cm = build_coupling_matrices(chain_geometry(2, 2.0 * np.pi, CouplingModel.WAVEGUIDE))

        # ACT
        spectrum = diagonalize(cm, 1)

        # ASSERT
        np.testing.assert_allclose(spectrum.rates, [0.0, 2.0], atol=1e-12)

    def test_ground_and_top_manifolds(self, free_space_couplings):
        ground = diagonalize(free_space_couplings, 0)
        top = diagonalize(free_space_couplings, 4)
        np.testing.assert_allclose(ground.eigenvalues, [0.0])
        np.testing.assert_allclose(top.rates, [4.0])

    @pytest.mark.parametrize("m_ex", [1, 2, 3])
    def test_rate_sum_equals_trace(self, free_space_couplings, m_ex):
        """sum Gamma = m_ex * C(N, m_ex)"""
        spectrum = diagonalize(free_space_couplings, m_ex)
        assert spectrum.rates.sum() == pytest.approx(m_ex * comb(4, m_ex, exact=True), rel=1e-10)

    def test_sorted_by_rate(self, free_space_couplings):
        rates = diagonalize(free_space_couplings, 2).rates
        assert np.all(np.diff(rates) >= -1e-10)

    def test_biorthogonal_and_complete(self, free_space_couplings):
        """双直交性と完全性"""
        spectrum = diagonalize(free_space_couplings, 2)
        assert spectrum.biorthogonality_error() < 1e-8
        assert spectrum.completeness_error() < 1e-8

    def test_modes_are_eigenvectors(self, waveguide_chain):
        cm = build_coupling_matrices(waveguide_chain)
        basis = enumerate_manifold(4, 2)
        matrix = project_heff(cm, basis)
        for mode in diagonalize(cm, 2):
            residual = matrix @ mode.right.amplitudes - mode.eigenvalue * mode.right.amplitudes
            assert np.linalg.norm(residual) < 1e-10
            assert mode.right.norm() == pytest.approx(1.0)

    def test_left_vectors_diagonalize_from_the_left(self, free_space_couplings):
        spectrum = diagonalize(free_space_couplings, 1)
        h = np.asarray(free_space_couplings.h_offdiag)
        np.testing.assert_allclose(spectrum.left @ h, spectrum.eigenvalues[:, None] * spectrum.left, atol=1e-10)

    def test_non_symmetric_input_rejected(self):
        basis = enumerate_manifold(2, 1)
        with pytest.raises(EigensolverError, match="complex symmetric"):
            diagonalize_manifold(np.array([[0.0, 1.0], [0.0, 0.0]]), basis)

    def test_parallel_spectra_match_serial(self, free_space_chain, free_space_couplings):
        serial = compute_spectra(free_space_couplings, range(5), free_space_chain, max_workers=1)
        parallel = compute_spectra(free_space_couplings, range(5), free_space_chain, max_workers=3)
        for m in range(5):
            np.testing.assert_array_equal(serial[m].eigenvalues, parallel[m].eigenvalues)


class TestExcitationHoleSymmetry:
    """励起-ホール対称性テスト"""

    def test_waveguide_rate_offset(self):
        """N=4 導波路: m_ex=3 のレートは m_ex=1 のレート + 2"""
        # ARRANGE
        cm = build_coupling_matrices(chain_geometry(4, 0.2 * np.pi, CouplingModel.WAVEGUIDE))

        # ACT
        single = diagonalize(cm, 1)
        triple = diagonalize(cm, 3)

        # ASSERT
        np.testing.assert_allclose(np.sort(triple.rates), np.sort(single.rates + 2.0), atol=1e-8)

    def test_shifts_preserved_free_space(self):
        """N=6 自由空間 d=0.4 lambda0: m_ex=1 -> 5 でシフト保存"""
        cm = build_coupling_matrices(chain_geometry(6, spacing_from_wavelength_ratio(0.4)))
        single = diagonalize(cm, 1)
        quintuple = diagonalize(cm, 5)
        np.testing.assert_allclose(np.sort(quintuple.shifts), np.sort(single.shifts), atol=1e-8)
        np.testing.assert_allclose(np.sort(quintuple.rates), np.sort(single.rates + 4.0), atol=1e-8)

    def test_mapped_mode_is_eigenvector(self, free_space_couplings):
        """写像したモードは N - m_ex 多様体の固有ベクトル"""
        mode = diagonalize(free_space_couplings, 1)[0]
        mapped = excitation_hole_map(mode, 4)
        matrix = project_heff(free_space_couplings, mapped.right.basis)
        residual = matrix @ mapped.right.amplitudes - mapped.eigenvalue * mapped.right.amplitudes
        assert np.linalg.norm(residual) < 1e-10
        assert mapped.gamma == pytest.approx(mode.gamma + 2.0)

    def test_ground_maps_to_fully_inverted(self, free_space_couplings):
        ground = diagonalize(free_space_couplings, 0)[0]
        mapped = excitation_hole_map(ground, 4)
        assert mapped.m_ex == 4
        assert mapped.gamma == pytest.approx(4.0)
        assert mapped.omega == pytest.approx(0.0)


class TestTwoExcitationStructure:
    """二励起状態の構造テスト"""

    def test_pauli_exclusion(self):
        c = np.array([1.0, 0.5, -0.3])
        with pytest.raises(ManifoldError, match="Pauli"):
            antisymmetric_pair(c, c)

    def test_fermionic_ansatz_normalized(self, free_space_couplings):
        spectrum = diagonalize(free_space_couplings, 1)
        v = fermionic_ansatz(spectrum[0], spectrum[1])
        assert v.basis.m_ex == 2
        assert v.norm() == pytest.approx(1.0)

    def test_pair_population_map(self, free_space_couplings):
        mode = diagonalize(free_space_couplings, 2)[0]
        pop = pair_population_map(mode.right)
        np.testing.assert_allclose(pop, pop.T)
        np.testing.assert_allclose(np.diag(pop), 0.0)
        assert pop.sum() == pytest.approx(2.0)

    def test_pair_map_needs_two_excitations(self, free_space_couplings):
        with pytest.raises(ManifoldError):
            pair_population_map(diagonalize(free_space_couplings, 1)[0].right)

    def test_degenerate_groups_for_independent_atoms(self):
        cm = build_coupling_matrices(chain_geometry(3, 1.0, CouplingModel.INDEPENDENT))
        assert degenerate_groups(diagonalize(cm, 1)) == [[0, 1, 2]]


class TestWavevectors:
    """主要波数テスト"""

    def test_subradiant_mode_is_guided(self):
        """最も暗いモードは |k| > k0 (d=0.2 lambda0)"""
        geometry = chain_geometry(30, spacing_from_wavelength_ratio(0.2))
        spectrum = diagonalize(build_coupling_matrices(geometry), 1, geometry)
        assert spectrum.wavevectors is not None
        assert np.all(np.abs(spectrum.wavevectors) <= np.pi + 1e-12)
        assert abs(spectrum[0].k) > geometry.lattice_constant_k0d

    def test_wavevector_requires_single_excitation(self, free_space_chain, free_space_couplings):
        mode = diagonalize(free_space_couplings, 2)[0]
        with pytest.raises(UnsupportedGeometryError):
            dominant_wavevector(mode, free_space_chain)

    def test_dispersion_sorted_by_k(self):
        k, omega, gamma = dispersion_relation(chain_geometry(12, spacing_from_wavelength_ratio(0.2)))
        assert np.all(np.diff(k) >= 0.0)
        assert k.shape == omega.shape == gamma.shape == (12,)

    def test_band_flatness_non_negative(self):
        flatness = band_flatness(chain_geometry(
            20, spacing_from_wavelength_ratio(0.2), CouplingModel.FREE_SPACE_PERPENDICULAR))
        assert flatness >= 0.0


class TestScalingFits:
    """スケーリングフィットテスト"""

    def test_synthetic_quadratic(self):
        """Gamma = xi^2 なら指数 2"""
        data = [(xi, xi**2) for xi in range(1, 8)]
        fit = fit_scaling(data, ScalingModel.XI_SQUARED)
        assert fit.exponent == pytest.approx(2.0, abs=1e-6)
        assert fit.residual < 1e-10
        assert fit.n_points == 7

    def test_window_selects_points(self):
        data = [(x, x**3 if x <= 4 else 1.0) for x in range(1, 10)]
        fit = fit_scaling(data, "N-cubed", window=(1, 4))
        assert fit.exponent == pytest.approx(3.0, abs=1e-9)
        assert fit.window == (1.0, 4.0)

    def test_alpha_reports_closing_exponent(self):
        """Gamma_1 = 5 N^-3 なら alpha = 3（傾きの符号を反転）"""
        data = [(n, 5.0 * n**-3.0) for n in (8, 27, 64, 125)]
        fit = fit_scaling(data, ScalingModel.ALPHA_3D)
        assert fit.exponent == pytest.approx(3.0, abs=1e-9)
        assert fit.prefactor == pytest.approx(5.0)

    def test_too_few_points(self):
        with pytest.raises(FitError, match="at least 3"):
            fit_scaling([(1, 1), (2, 4)], ScalingModel.XI_SQUARED)

    def test_non_positive_data(self):
        with pytest.raises(FitError, match="positive"):
            fit_scaling([(1, 1), (2, -4), (3, 9)], ScalingModel.XI_SQUARED)

    def test_empty_window(self):
        with pytest.raises(FitError):
            fit_scaling([(1, 1), (2, 4), (3, 9)], ScalingModel.XI_SQUARED, window=(3, 1))

    def test_density_of_states_exponent(self):
        """Gamma ~ xi^2 なら kappa = -1/2"""
        rates = (np.arange(1, 21) ** 2) * 1e-4
        fit = density_of_states_exponent(rates, (1, 20))
        assert fit.exponent == pytest.approx(-0.5, abs=1e-9)


class TestGapAndCubes:
    """Liouvillianギャップと3D立方格子テスト"""

    def test_gap_is_half_slowest_rate(self, free_space_couplings):
        spectra = compute_spectra(free_space_couplings, range(5))
        assert liouvillian_gap(spectra) == pytest.approx(spectra[1].rates[0] / 2.0)

    def test_cube_spectrum(self):
        cube = cube_spectrum(2, spacing_from_wavelength_ratio(0.4))
        assert cube.n_atoms == 8
        assert cube.rates.shape == (8,)
        assert np.all(np.diff(cube.rates) >= -1e-10)
        assert cube.rates.sum() == pytest.approx(8.0, rel=1e-10)
