"""
Coupling Kernel Unit Tests

テスト対象: 結合カーネル・配置・結合行列
"""

import numpy as np
import pytest

from src.core.coupling import (
    CouplingModel,
    build_coupling_matrices,
    chain_geometry,
    cube_geometry,
    dissipative_part,
    gamma_channels,
    green_3d,
    green_parallel,
    green_perpendicular,
    spacing_from_wavelength_ratio,
    waveguide_element,
)
from src.core.errors import CouplingMatrixError, GeometryError


class TestKernels:
    """双極子カーネルテスト"""

    @pytest.mark.parametrize("x", [0.3, 1.0, 2.5, 7.0])
    def test_parallel_dissipative_closed_form(self, x):
        """平行双極子の散逸部が閉形式と一致"""
        # ACT
        gamma = dissipative_part(green_parallel(x))

        # ASSERT
        expected = 3.0 * (np.sin(x) - x * np.cos(x)) / x**3
        assert gamma == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("x", [0.3, 1.0, 2.5, 7.0])
    def test_perpendicular_dissipative_closed_form(self, x):
        """垂直双極子の散逸部が閉形式と一致"""
        gamma = dissipative_part(green_perpendicular(x))

        expected = 1.5 * (x**2 * np.sin(x) + x * np.cos(x) - np.sin(x)) / x**3
        assert gamma == pytest.approx(expected, rel=1e-12)

    def test_small_separation_limit_approaches_gamma0(self):
        """x -> 0 で散逸部が Gamma0 に近づく"""
        for kernel in (green_parallel, green_perpendicular):
            assert dissipative_part(kernel(1e-3)) == pytest.approx(1.0, abs=1e-5)

    @pytest.mark.parametrize("bad", [0.0, -1.0, float("nan")])
    def test_non_positive_separation_rejected(self, bad):
        """x <= 0 は GeometryError"""
        with pytest.raises(GeometryError):
            green_parallel(bad)
        with pytest.raises(ValueError):
            green_perpendicular(bad)

    def test_waveguide_element_diagonal_and_rate(self):
        """導波路要素: x=0 で -i/2、散逸部 cos(x)"""
        assert waveguide_element(0.0) == pytest.approx(-0.5j)
        x = np.linspace(0.1, 5.0, 7)
        np.testing.assert_allclose(dissipative_part(waveguide_element(x)), np.cos(x), atol=1e-14)

    def test_array_input_keeps_shape(self):
        x = np.array([0.5, 1.5, 2.5])
        assert np.shape(green_parallel(x)) == (3,)
        assert isinstance(green_parallel(0.5), complex)

    @pytest.mark.parametrize("x", [0.4, 1.3, 3.0])
    def test_green_3d_reduces_to_chain_kernels(self, x):
        """z方向の分離は平行、x方向の分離は垂直カーネルに一致"""
        assert green_3d([0.0, 0.0, x]) == pytest.approx(green_parallel(x), rel=1e-12)
        assert green_3d([x, 0.0, 0.0]) == pytest.approx(green_perpendicular(x), rel=1e-12)

    def test_green_3d_rejects_bad_separation(self):
        with pytest.raises(GeometryError):
            green_3d([0.0, 0.0, 0.0])
        with pytest.raises(GeometryError, match="3-vector"):
            green_3d([1.0, 2.0])


class TestGeometry:
    """配置テスト"""

    def test_chain_positions_start_at_d(self):
        """z_n = n*d (n = 1..N)"""
        # ACT
        geometry = chain_geometry(5, 0.7, CouplingModel.WAVEGUIDE)

        # ASSERT
        np.testing.assert_allclose(geometry.z, 0.7 * np.arange(1, 6))
        assert geometry.atom_count == 5
        assert np.allclose(geometry.positions[:, :2], 0.0)

    def test_invalid_chain_rejected(self):
        with pytest.raises(GeometryError):
            chain_geometry(0, 1.0)
        with pytest.raises(GeometryError):
            chain_geometry(3, -0.5)
        with pytest.raises(GeometryError, match="cube_geometry"):
            chain_geometry(3, 1.0, CouplingModel.CUBE_3D)

    def test_cube_geometry(self):
        geometry = cube_geometry(3, 1.2)
        assert geometry.atom_count == 27
        assert geometry.model is CouplingModel.CUBE_3D

    def test_spacing_from_wavelength_ratio(self):
        assert spacing_from_wavelength_ratio(0.5) == pytest.approx(np.pi)


class TestCouplingMatrices:
    """結合行列テスト"""

    def test_diagonal_and_symmetry(self, free_space_chain):
        """対角 -i/2、複素対称、Gamma 対角 1"""
        # ACT
        cm = build_coupling_matrices(free_space_chain)

        # ASSERT
        np.testing.assert_allclose(np.diag(cm.h_offdiag), -0.5j)
        np.testing.assert_allclose(cm.h_offdiag, cm.h_offdiag.T)
        np.testing.assert_allclose(np.diag(cm.gamma), 1.0)
        np.testing.assert_allclose(cm.gamma, -2.0 * np.imag(cm.h_offdiag), atol=1e-14)

    def test_waveguide_gamma_is_cosine(self, waveguide_chain):
        """導波路: Gamma_mn = cos(k0 |z_m - z_n|)、ランク2"""
        cm = build_coupling_matrices(waveguide_chain)
        z = waveguide_chain.z
        expected = np.cos(np.abs(z[:, None] - z[None, :]))

        np.testing.assert_allclose(cm.gamma, expected, atol=1e-12)
        assert int(np.sum(cm.channel_rates > 1e-10)) == 2

    def test_channel_rates_sum_to_trace(self, free_space_couplings):
        """チャネルレートは非負で総和 N"""
        rates = free_space_couplings.channel_rates
        assert np.all(rates >= 0.0)
        assert rates.sum() == pytest.approx(free_space_couplings.atom_count, rel=1e-12)

    def test_channels_reconstruct_gamma(self, free_space_couplings):
        cm = free_space_couplings
        rebuilt = (cm.channel_vectors * cm.channel_rates) @ cm.channel_vectors.conj().T
        np.testing.assert_allclose(rebuilt, cm.gamma, atol=1e-10)

    def test_independent_model_has_no_offdiagonal(self):
        cm = build_coupling_matrices(chain_geometry(3, 0.5, CouplingModel.INDEPENDENT))
        np.testing.assert_allclose(cm.h_offdiag, -0.5j * np.eye(3))

    def test_matrices_are_read_only(self, free_space_couplings):
        with pytest.raises(ValueError):
            free_space_couplings.gamma[0, 1] = 0.0

    def test_detuning_shifts_diagonal(self, free_space_couplings):
        h = free_space_couplings.with_detuning(0.3)
        np.testing.assert_allclose(np.diag(h), -0.3 - 0.5j)

    def test_non_psd_gamma_rejected(self):
        """負の固有値を持つ散逸行列は CouplingMatrixError"""
        with pytest.raises(CouplingMatrixError, match="positive semidefinite"):
            gamma_channels(np.array([[1.0, 2.0], [2.0, 1.0]]))
