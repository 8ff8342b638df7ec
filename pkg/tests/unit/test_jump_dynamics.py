"""
Quantum-Jump Engine Unit Tests

テスト対象: 行列フリーカーネル・軌跡アンサンブル・決定論的乱数
"""

from dataclasses import replace

import numpy as np
import pytest

from src.core.coupling import CouplingModel, build_coupling_matrices, chain_geometry
from src.core.errors import DimensionMismatchError
from src.core.jump_dynamics import (
    ClockSignal,
    CoherenceSum,
    InitialState,
    ManifoldPopulation,
    NExcited,
    PairCorrelationMap,
    Projector,
    TrajectoryConfig,
    apply_collective_lowering,
    apply_heff,
    ensemble_observables,
    evolve_trajectory,
    passage_statistics,
    ramsey_scan,
    reduced_moments_at,
)
from src.core.master_equation import full_heff, full_lowering
from src.core.spectrum import compute_spectra
from src.infrastructure.seeding import spawn_streams, trajectory_rng


def _config(geometry, n_trajectories=50, t_max=3.0, points=16, **kwargs):
    kwargs.setdefault("initial_state", InitialState.fully_inverted())
    kwargs.setdefault("base_seed", 3)
    return TrajectoryConfig(
        geometry=geometry,
        times=np.linspace(0.0, t_max, points),
        n_trajectories=n_trajectories,
        **kwargs,
    )


class TestKernels:
    """行列フリーカーネルテスト"""

    def test_apply_heff_matches_dense(self, free_space_couplings):
        # ARRANGE
        rng = np.random.default_rng(0)
        psi = rng.normal(size=16) + 1j * rng.normal(size=16)
        h = np.asarray(free_space_couplings.h_offdiag)

        # ACT & ASSERT
        np.testing.assert_allclose(apply_heff(h, psi), full_heff(h) @ psi, atol=1e-12)

    def test_collective_lowering_matches_dense(self):
        rng = np.random.default_rng(1)
        psi = rng.normal(size=8) + 1j * rng.normal(size=8)
        weights = np.array([0.3, -0.5j, 1.0])
        dense = sum(w * full_lowering(3, n + 1) for n, w in enumerate(weights))
        np.testing.assert_allclose(apply_collective_lowering(weights, psi), dense @ psi, atol=1e-12)


class TestSeeding:
    """乱数ストリームテスト"""

    def test_streams_are_reproducible(self):
        a = trajectory_rng(42, 7).random(5)
        b = trajectory_rng(42, 7).random(5)
        np.testing.assert_array_equal(a, b)

    def test_streams_differ_by_index(self):
        first, second = spawn_streams(42, 2)
        assert not np.array_equal(first.random(5), second.random(5))

    def test_negative_seed_rejected(self):
        with pytest.raises(ValueError):
            trajectory_rng(-1, 0)


class TestConfigValidation:
    """軌跡設定検証テスト"""

    def test_grid_must_start_at_zero(self, waveguide_chain):
        cfg = TrajectoryConfig(waveguide_chain, InitialState.fully_inverted(), np.array([0.5, 1.0]))
        with pytest.raises(ValueError, match="start at 0"):
            cfg.validate()

    def test_trajectory_count_positive(self, waveguide_chain):
        with pytest.raises(ValueError):
            _config(waveguide_chain, n_trajectories=0).validate()

    def test_atom_limit(self):
        cfg = _config(chain_geometry(21, 1.0, CouplingModel.WAVEGUIDE))
        with pytest.raises(DimensionMismatchError):
            cfg.validate()


class TestEnsemble:
    """アンサンブル平均テスト"""

    def test_single_atom_exponential_decay(self):
        """N=1: <n_e> = e^{-t}"""
        # ARRANGE
        cfg = _config(chain_geometry(1, 1.0, CouplingModel.WAVEGUIDE), n_trajectories=400)

        # ACT
        series = ensemble_observables(cfg, [NExcited()])

        # ASSERT
        mean, err = series.mean("n_e"), series.stderr("n_e")
        assert mean[0] == 1.0
        assert np.all(np.abs(mean - np.exp(-series.times)) <= 5.0 * err + 0.02)

    def test_dicke_pair_cascade(self):
        """N=2, k0d=2*pi: <n_e> = 2 e^{-2t} (1 + t)"""
        cfg = _config(chain_geometry(2, 2.0 * np.pi, CouplingModel.WAVEGUIDE), n_trajectories=400)
        series = ensemble_observables(cfg, [NExcited()])
        exact = 2.0 * np.exp(-2.0 * series.times) * (1.0 + series.times)
        assert np.all(np.abs(series.mean("n_e") - exact) <= 5.0 * series.stderr("n_e") + 0.03)

    def test_same_seed_is_reproducible(self, waveguide_chain):
        cfg = _config(waveguide_chain, n_trajectories=20)
        a = ensemble_observables(cfg, [NExcited()])
        b = ensemble_observables(cfg, [NExcited()])
        np.testing.assert_array_equal(a.mean("n_e"), b.mean("n_e"))

    def test_parallel_matches_serial(self, waveguide_chain):
        """スレッド数に依存しない"""
        cfg = _config(waveguide_chain, n_trajectories=12)
        serial = ensemble_observables(cfg, [NExcited()], max_workers=1)
        parallel = ensemble_observables(cfg, [NExcited()], max_workers=4)
        np.testing.assert_array_equal(serial.mean("n_e"), parallel.mean("n_e"))
        np.testing.assert_array_equal(serial.stderr("n_e"), parallel.stderr("n_e"))

    def test_different_seed_changes_result(self, waveguide_chain):
        a = ensemble_observables(_config(waveguide_chain, n_trajectories=20, base_seed=1), [NExcited()])
        b = ensemble_observables(_config(waveguide_chain, n_trajectories=20, base_seed=2), [NExcited()])
        assert not np.array_equal(a.mean("n_e"), b.mean("n_e"))

    def test_manifold_populations_sum_to_one(self, free_space_chain):
        cfg = _config(free_space_chain, n_trajectories=10)
        observables = [ManifoldPopulation(m) for m in range(5)]
        series = ensemble_observables(cfg, observables)
        total = sum(series.mean(obs.tag) for obs in observables)
        np.testing.assert_allclose(total, 1.0, atol=1e-9)

    def test_coherent_only_keeps_full_inversion(self):
        """散逸なし: 完全反転状態は保存"""
        cfg = _config(chain_geometry(3, 1.0, CouplingModel.WAVEGUIDE), n_trajectories=3, coherent_only=True)
        series = ensemble_observables(cfg, [NExcited()])
        np.testing.assert_allclose(series.mean("n_e"), 3.0, atol=1e-8)

    def test_clock_signal_at_time_zero(self, free_space_chain):
        """t=0 で S = -N"""
        phase = 0.3 * np.pi
        cfg = _config(free_space_chain, n_trajectories=2, initial_state=InitialState.clock(phase))
        series = ensemble_observables(cfg, [ClockSignal(phase), CoherenceSum(phase)])
        assert series.mean("clock_signal")[0] == pytest.approx(-4.0)
        assert series.mean("coherence_sum")[0] == pytest.approx(2.0)

    def test_duplicate_tags_rejected(self, waveguide_chain):
        with pytest.raises(ValueError, match="duplicate"):
            ensemble_observables(_config(waveguide_chain, n_trajectories=1), [NExcited(), NExcited()])

    def test_projector_observable(self, waveguide_chain):
        operator = np.diag(full_heff(np.eye(4)).real.diagonal())
        cfg = _config(waveguide_chain, n_trajectories=4)
        series = ensemble_observables(cfg, [Projector("n_e", operator), NExcited()])
        np.testing.assert_allclose(series.mean("projector(n_e)"), series.mean("n_e"), atol=1e-10)

    def test_pair_correlation_map_has_zero_diagonal(self, waveguide_chain):
        series = ensemble_observables(_config(waveguide_chain, n_trajectories=3), [PairCorrelationMap()])
        corr = series.mean("pair_correlation_map")
        assert corr.shape == (16, 4, 4)
        np.testing.assert_allclose(np.diagonal(corr, axis1=1, axis2=2), 0.0)


class TestTrajectories:
    """単一軌跡テスト"""

    def test_trajectory_states_normalized(self, waveguide_chain):
        record = evolve_trajectory(_config(waveguide_chain), 0)
        np.testing.assert_allclose(np.linalg.norm(record.states, axis=1), 1.0, atol=1e-10)
        assert record.n_jumps == len(record.jump_channels)

    def test_jumps_lower_excitation_number(self, waveguide_chain):
        record = evolve_trajectory(_config(waveguide_chain, t_max=20.0, points=41), 5)
        assert record.n_jumps <= 4
        assert all(0.0 < t <= 20.0 for t in record.jump_times)


class TestPassageAndMoments:
    """通過統計・縮約密度行列テスト"""

    def test_passage_weights_normalized(self, waveguide_chain):
        cm = build_coupling_matrices(waveguide_chain)
        spectra = compute_spectra(cm, range(5), waveguide_chain)
        stats = passage_statistics(_config(waveguide_chain, n_trajectories=10, t_max=40.0, points=5), spectra)
        assert stats.visits[4] == 10
        for m_ex, weights in stats.means.items():
            assert weights.sum() == pytest.approx(1.0, abs=1e-9)

    def test_reduced_moments_of_inverted_state(self, waveguide_chain):
        moments = reduced_moments_at(_config(waveguide_chain, n_trajectories=2), 0)
        np.testing.assert_allclose(moments.one_body[:, 1, 1], 1.0)
        assert moments.n_excited == pytest.approx(4.0)
        assert moments.time == 0.0


class TestRamseyScan:
    """離調走査テスト"""

    def test_scan_reuses_seeds_across_detunings(self):
        """各離調の行は同じシードの単独アンサンブルと一致"""
        # ARRANGE
        geometry = chain_geometry(3, 1.0, CouplingModel.INDEPENDENT)
        cfg = _config(geometry, n_trajectories=6, t_max=2.0, points=5)
        deltas = np.linspace(-1.0, 1.0, 5)

        # ACT
        surface = ramsey_scan(cfg, deltas, 0.0, max_workers=2)

        # ASSERT
        assert surface.signal.shape == (5, 5)
        np.testing.assert_allclose(surface.signal[:, 0], -3.0, atol=1e-12)
        assert surface.extremum_sign == -1
        assert surface.delta_m[0] == 0.0
        single = replace(cfg, initial_state=InitialState.clock(0.0), detuning=float(deltas[1]))
        direct = ensemble_observables(single, [ClockSignal(0.0)]).mean(ClockSignal(0.0).tag)
        np.testing.assert_allclose(surface.signal[1], direct, atol=1e-12)
