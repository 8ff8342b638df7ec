"""
Experiment Runner Unit Tests

テスト対象: シナリオ実行・CSV列順・マニフェスト
"""

import json

import numpy as np
import pandas as pd
import pytest

from src.application.experiment_runner import COLUMNS, create_experiment_runner
from src.config.experiment import ExperimentConfig
from src.core.errors import CompressionError, ManifoldError
from src.core.rate_model import superradiant_fraction
from src.infrastructure.output_writer import sha256_file


def _config(scenario, geometry, **numerical):
    values = {"seed": 11}
    values.update(numerical)
    config, report = ExperimentConfig.from_dict({"scenario": scenario, "geometry": geometry, "numerical": values})
    assert report.is_valid, report.messages()
    return config


def _read(directory, name):
    return pd.read_csv(directory / name, float_precision="round_trip")


def _manifest(directory):
    return json.loads((directory / "manifest.json").read_text(encoding="utf-8"))


WAVEGUIDE_3 = {"model": "waveguide", "n_atoms": 3, "k0d": 0.2 * np.pi}


class TestTrajectoryScenarios:
    """軌道シナリオテスト"""

    def test_single_atom_decay_starts_excited(self, tmp_path):
        # ARRANGE
        config = _config("decay", {"model": "waveguide", "n_atoms": 1, "k0d": 1.0},
                         trajectories=20, t_max=2.0, t_points=5)

        # ACT
        manifest = create_experiment_runner(config, output_dir=tmp_path, max_workers=1).run()

        # ASSERT
        frame = _read(tmp_path, "decay.csv")
        assert list(frame.columns) == COLUMNS["decay.csv"]
        assert frame["t"].iloc[0] == 0.0
        assert frame["n_e_mean"].iloc[0] == 1.0
        assert manifest.status == "ok"
        assert _manifest(tmp_path)["outputs"]["decay.csv"] == sha256_file(tmp_path / "decay.csv")

    def test_rerun_is_byte_identical(self, tmp_path):
        """同一設定・同一シードの再実行はバイト単位で一致"""
        config = _config("decay", WAVEGUIDE_3, trajectories=16, t_max=1.0, t_points=6)
        create_experiment_runner(config, output_dir=tmp_path / "a", max_workers=1).run()
        create_experiment_runner(config, output_dir=tmp_path / "b", max_workers=1).run()
        assert sha256_file(tmp_path / "a" / "decay.csv") == sha256_file(tmp_path / "b" / "decay.csv")

    def test_thread_count_does_not_change_output(self, tmp_path):
        config = _config("decay", WAVEGUIDE_3, trajectories=16, t_max=1.0, t_points=6)
        create_experiment_runner(config, output_dir=tmp_path / "one", max_workers=1).run()
        create_experiment_runner(config, output_dir=tmp_path / "three", max_workers=3).run()
        assert sha256_file(tmp_path / "one" / "decay.csv") == sha256_file(tmp_path / "three" / "decay.csv")

    def test_manifold_populations_recorded(self, tmp_path):
        config = _config("decay", WAVEGUIDE_3, trajectories=8, t_max=1.0, t_points=3, record_manifolds=True)
        create_experiment_runner(config, output_dir=tmp_path, max_workers=1).run()
        frame = _read(tmp_path, "decay.csv")
        assert list(frame.columns[:3]) == COLUMNS["decay.csv"]
        assert frame["m_3_mean"].iloc[0] == 1.0
        total = sum(frame[f"m_{m}_mean"] for m in range(4))
        np.testing.assert_allclose(total, 1.0, atol=1e-12)

    def test_clock_scan_outputs(self, tmp_path):
        """Ramsey走査: 面と稜線"""
        config = _config("clock", {"model": "free-space-parallel", "n_atoms": 2, "d_over_lambda": 0.3},
                         trajectories=4, t_max=1.0, t_points=5, delta_span=2.0, delta_points=5,
                         coherent_only=True)
        manifest = create_experiment_runner(config, output_dir=tmp_path, max_workers=1).run()

        surface = _read(tmp_path, "clock_surface.csv")
        ridge = _read(tmp_path, "clock_ridge.csv")
        assert list(surface.columns) == COLUMNS["clock_surface.csv"]
        assert len(surface) == 25
        assert list(ridge.columns) == COLUMNS["clock_ridge.csv"]
        assert len(ridge) == 5
        assert ridge["S_m_abs"].iloc[0] == pytest.approx(2.0)
        assert manifest.diagnostics["extremum_sign"] == -1


class TestDeterministicScenarios:
    """決定論的シナリオテスト"""

    def test_spectrum_single_manifold(self, tmp_path):
        # ARRANGE
        config = _config("spectrum", {"model": "waveguide", "n_atoms": 30, "k0d": 0.2 * np.pi},
                         manifolds=[1], fit_window=[1, 5])

        # ACT
        manifest = create_experiment_runner(config, output_dir=tmp_path, max_workers=1).run()

        # ASSERT
        frame = _read(tmp_path, "spectrum.csv")
        assert list(frame.columns) == COLUMNS["spectrum.csv"]
        assert len(frame) == 30
        assert (frame["m_ex"] == 1).all()
        assert frame["gamma"].sum() == pytest.approx(30.0)
        assert np.all(np.diff(frame["gamma"]) >= -1e-9)
        fits = _read(tmp_path, "scaling_fits.csv")
        assert fits["model"].tolist() == ["xi-squared"]
        assert manifest.diagnostics["liouvillian_gap"] == pytest.approx(frame["gamma"].iloc[0] / 2.0)

    def test_rate_model_conserves_and_decays(self, tmp_path):
        config = _config("rate-model", {"model": "free-space-parallel", "n_atoms": 3, "d_over_lambda": 0.2},
                         t_max=4.0, t_points=9)
        create_experiment_runner(config, output_dir=tmp_path, max_workers=1).run()

        rates = _read(tmp_path, "rate_model.csv")
        assert list(rates.columns) == ["t", "total", "m_1", "m_2", "m_3"]
        assert rates["total"].iloc[0] == pytest.approx(3.0)
        assert np.all(np.diff(rates["total"]) <= 1e-12)
        passage = _read(tmp_path, "passage.csv")
        for _, group in passage.groupby("m_ex"):
            assert group["wp"].sum() == pytest.approx(1.0)

    def test_rate_model_reports_superradiant_channels(self, tmp_path):
        """u 未指定: 二励起状態からの推定値で予測し、観測値と並べて出力"""
        # ARRANGE
        config = _config("rate-model", {"model": "free-space-parallel", "n_atoms": 4, "d_over_lambda": 0.2},
                         t_max=2.0, t_points=5)

        # ACT
        manifest = create_experiment_runner(config, output_dir=tmp_path, max_workers=1).run()

        # ASSERT
        channels = _read(tmp_path, "superradiant_channels.csv")
        assert list(channels.columns) == COLUMNS["superradiant_channels.csv"]
        assert channels["m_ex"].tolist() == [2, 3, 4]
        assert manifest.diagnostics["u_source"] == "estimate"
        u = manifest.diagnostics["u"]
        assert u == manifest.diagnostics["u_estimate"]
        np.testing.assert_allclose(channels["predicted"], [superradiant_fraction(m, u) for m in (2, 3, 4)])
        assert channels["observed"].between(0.0, 1.0 + 1e-12).all()

    def test_rate_model_uses_configured_u(self, tmp_path):
        config = _config("rate-model", WAVEGUIDE_3, t_max=1.0, t_points=3, u=0.6)
        manifest = create_experiment_runner(config, output_dir=tmp_path, max_workers=1).run()
        assert manifest.diagnostics["u"] == 0.6
        assert manifest.diagnostics["u_source"] == "config"
        channels = _read(tmp_path, "superradiant_channels.csv")
        assert channels["predicted"].iloc[0] == pytest.approx(0.6 / 1.6)

    def test_rate_model_compares_approximate_rates(self, tmp_path):
        """approximate_rates: 厳密な総レートと近似レートの比較表"""
        config = _config("rate-model", WAVEGUIDE_3, t_max=1.0, t_points=3, approximate_rates=True)
        manifest = create_experiment_runner(config, output_dir=tmp_path, max_workers=1).run()

        table = _read(tmp_path, "rate_comparison.csv")
        assert list(table.columns) == COLUMNS["rate_comparison.csv"]
        assert table["m_ex"].tolist() == [1, 1, 1, 2, 2, 2, 3]
        # single-excitation rates sum to trace(Gamma) = N
        assert table.loc[table["m_ex"] == 1, "exact_total"].sum() == pytest.approx(3.0)
        assert np.isfinite(manifest.diagnostics["approximate_rate_max_deviation"])
        assert manifest.diagnostics["approximate_rate_max_deviation"] >= 0.0

    def test_rate_model_without_comparison_writes_no_table(self, tmp_path):
        config = _config("rate-model", WAVEGUIDE_3, t_max=1.0, t_points=3, max_manifold=1)
        manifest = create_experiment_runner(config, output_dir=tmp_path, max_workers=1).run()
        assert not (tmp_path / "rate_comparison.csv").exists()
        assert not (tmp_path / "superradiant_channels.csv").exists()
        assert "u" not in manifest.diagnostics

    def test_liouvillian_scenario(self, tmp_path):
        """固有値リスト・密行列との一致・分解による n_e(t)"""
        config = _config("liouvillian", WAVEGUIDE_3, t_max=2.0, t_points=5)
        manifest = create_experiment_runner(config, output_dir=tmp_path, max_workers=1).run()

        eigen = _read(tmp_path, "liouvillian.csv")
        assert list(eigen.columns) == COLUMNS["liouvillian.csv"]
        assert len(eigen) == 1 + 9 + 9 + 1
        assert manifest.diagnostics["dense_spectrum_distance"] < 1e-6
        decay = _read(tmp_path, "liouvillian_decay.csv")
        assert list(decay.columns) == COLUMNS["liouvillian_decay.csv"]
        assert decay["n_e"].iloc[0] == pytest.approx(3.0, abs=1e-8)

    def test_mean_field_scenario(self, tmp_path):
        config = _config("mean-field", WAVEGUIDE_3, t_max=1.0, t_points=5)
        create_experiment_runner(config, output_dir=tmp_path, max_workers=1).run()
        frame = _read(tmp_path, "mean_field.csv")
        assert list(frame.columns) == COLUMNS["mean_field.csv"]
        assert frame["n_e"].iloc[0] == pytest.approx(3.0)
        assert frame["n_e"].iloc[-1] < 3.0

    def test_mps_scenario(self, tmp_path):
        config = _config("mps", WAVEGUIDE_3, t_max=0.2, t_points=3, bond_dimension=8,
                         dt_schedule=[[10.0, 0.01]])
        manifest = create_experiment_runner(config, output_dir=tmp_path, max_workers=1).run()
        frame = _read(tmp_path, "mps.csv")
        assert list(frame.columns) == COLUMNS["mps.csv"]
        assert frame["n_e"].iloc[0] == pytest.approx(3.0)
        assert manifest.diagnostics["steps"] == 20
        assert "bond_convergence" not in manifest.diagnostics

    def test_mps_scenario_reports_bond_convergence(self, tmp_path):
        """convergence_time 指定時: D と 2D の n_e 差を診断量に記録"""
        config = _config("mps", WAVEGUIDE_3, t_max=0.2, t_points=3, bond_dimension=8,
                         dt_schedule=[[10.0, 0.01]], convergence_time=0.2)
        manifest = create_experiment_runner(config, output_dir=tmp_path, max_workers=1).run()
        # D=8 already holds the N=3 state exactly
        assert manifest.diagnostics["bond_convergence"] == pytest.approx(0.0, abs=1e-8)

    def test_cube_spectrum_scenario(self, tmp_path):
        config = _config("3d-spectrum", {"model": "cube-3d", "d_over_lambda": 0.3, "sides": [2, 3, 4]})
        create_experiment_runner(config, output_dir=tmp_path, max_workers=1).run()
        frame = _read(tmp_path, "cube_spectrum.csv")
        assert list(frame.columns) == COLUMNS["cube_spectrum.csv"]
        assert len(frame) == 8 + 27 + 64
        fits = _read(tmp_path, "scaling_fits.csv")
        assert "3D-alpha" in fits["model"].tolist()
        # alpha is stored as the closing exponent, the negated slope of log Gamma_1 vs log N
        slowest = frame[frame["xi"] == 1]
        slope = np.polyfit(np.log(slowest["n_atoms"]), np.log(slowest["gamma"]), 1)[0]
        alpha = fits.loc[fits["model"] == "3D-alpha", "exponent"].iloc[0]
        assert alpha == pytest.approx(-slope, rel=1e-9)


class TestFailures:
    """失敗時のマニフェストテスト"""

    def test_invalid_top_manifold_recorded(self, tmp_path):
        config = _config("rate-model", WAVEGUIDE_3, t_max=1.0, t_points=3, max_manifold=5)
        with pytest.raises(ManifoldError):
            create_experiment_runner(config, output_dir=tmp_path, max_workers=1).run()
        manifest = _manifest(tmp_path)
        assert manifest["status"] == "failed"
        assert manifest["error"]["type"] == "ManifoldError"
        assert manifest["finished_at"] is not None
        assert "[RATE-MODEL seed=11]" in (tmp_path / "run.log").read_text(encoding="utf-8")

    def test_compression_failure_keeps_partial_series(self, tmp_path):
        """打ち切り誤差の上限超過: 途中までの系列と失敗記録を残す"""
        config = _config("mps", WAVEGUIDE_3, t_max=0.2, t_points=3, bond_dimension=1,
                         dt_schedule=[[10.0, 0.01]], truncation_ceiling=1e-14)
        with pytest.raises(CompressionError):
            create_experiment_runner(config, output_dir=tmp_path, max_workers=1).run()
        manifest = _manifest(tmp_path)
        assert manifest["status"] == "failed"
        assert manifest["error"]["module"] == "src.core.mps_waveguide"
        assert (tmp_path / "mps.csv").exists()
        assert "mps.csv" in manifest["outputs"]
