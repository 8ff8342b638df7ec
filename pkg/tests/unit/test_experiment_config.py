"""
Experiment Configuration Unit Tests

テスト対象: YAML設定の読み込みとスキーマ検証
"""

import math

import numpy as np
import pytest

from src.config.experiment import ExperimentConfig, GeometryBlock, NumericalBlock
from src.core.coupling import CouplingModel
from src.core.errors import ConfigReadError, ConfigValidationError


def _decay(**numerical):
    base = {"seed": 7, "trajectories": 10, "t_max": 2.0, "t_points": 5}
    base.update(numerical)
    return {
        "scenario": "decay",
        "geometry": {"model": "waveguide", "n_atoms": 3, "d_over_lambda": 0.1},
        "numerical": base,
    }


class TestSchema:
    """スキーマ検証テスト"""

    def test_minimal_decay_config_is_valid(self):
        # ACT
        config, report = ExperimentConfig.from_dict(_decay())

        # ASSERT
        assert report.is_valid
        assert report.messages() == []
        assert config.scenario == "decay"
        assert config.output.directory == "results"

    def test_missing_seed(self):
        data = _decay()
        del data["numerical"]["seed"]
        _, report = ExperimentConfig.from_dict(data)
        assert "numerical.seed" in report.missing_keys

    def test_zero_trajectories_out_of_range(self):
        _, report = ExperimentConfig.from_dict(_decay(trajectories=0))
        assert any("trajectories" in e for e in report.range_errors)

    def test_bool_is_not_an_integer(self):
        _, report = ExperimentConfig.from_dict(_decay(t_points=True))
        assert any("t_points" in e for e in report.range_errors)

    def test_unknown_keys_reported(self):
        data = _decay(colour="blue")
        data["extra"] = 1
        data["geometry"]["height"] = 2
        _, report = ExperimentConfig.from_dict(data)
        assert sorted(report.unknown_keys) == ["extra", "geometry.height", "numerical.colour"]

    def test_unknown_scenario(self):
        data = _decay()
        data["scenario"] = "teleport"
        _, report = ExperimentConfig.from_dict(data)
        assert not report.is_valid

    def test_top_level_must_be_mapping(self):
        _, report = ExperimentConfig.from_dict([1, 2, 3])
        assert "top level must be a mapping" in report.range_errors

    def test_spacing_exclusive(self):
        report = GeometryBlock(model="waveguide", n_atoms=3, k0d=1.0, d_over_lambda=0.1).validate("decay")
        assert any("either" in e for e in report.range_errors)

    def test_mps_requires_waveguide(self):
        report = GeometryBlock(model="free-space-parallel", n_atoms=3, k0d=1.0).validate("mps")
        assert not report.is_valid

    def test_cube_requires_sides(self):
        report = GeometryBlock(model="cube-3d", k0d=1.0).validate("3d-spectrum")
        assert "geometry.sides" in report.missing_keys

    @pytest.mark.parametrize("key,value", [
        ("fit_window", [5, 1]),
        ("dt_schedule", [[1.0, 0.0]]),
        ("u", 1.5),
        ("convergence_time", -1.0),
        ("initial_state", "thermal"),
    ])
    def test_range_checks(self, key, value):
        report = NumericalBlock({key: value}).validate("liouvillian")
        assert report.range_errors

    def test_output_formats(self):
        data = _decay()
        data["output"] = {"directory": "out", "formats": ["hdf5"]}
        _, report = ExperimentConfig.from_dict(data)
        assert any("formats" in e for e in report.range_errors)


class TestBlocks:
    """ブロック変換テスト"""

    def test_geometry_from_wavelength_ratio(self):
        geometry = GeometryBlock(model="waveguide", n_atoms=3, d_over_lambda=0.25).chain()
        assert geometry.model is CouplingModel.WAVEGUIDE
        assert geometry.lattice_constant_k0d == pytest.approx(0.5 * np.pi)

    def test_time_grid(self):
        grid = NumericalBlock({"t_max": 2.0, "t_points": 5}).time_grid()
        np.testing.assert_allclose(grid, [0.0, 0.5, 1.0, 1.5, 2.0])

    def test_dt_schedule_with_infinity(self):
        schedule = NumericalBlock({"dt_schedule": [[5.0, 0.001], [math.inf, 0.01]]}).dt_schedule()
        assert schedule == ((5.0, 0.001), (math.inf, 0.01))

    def test_echo_renders_infinity(self):
        data = _decay(dt_schedule=[[math.inf, 0.01]])
        config, _ = ExperimentConfig.from_dict(data)
        assert config.echo()["numerical"]["dt_schedule"] == [["inf", 0.01]]


class TestLoading:
    """ファイル読み込みテスト"""

    def test_load_valid_file(self, write_config):
        path = write_config(_decay())
        config = ExperimentConfig.load(path)
        assert config.source == str(path)
        assert config.geometry.chain().atom_count == 3

    def test_load_invalid_raises_with_report(self, write_config):
        data = _decay()
        del data["numerical"]["seed"]
        with pytest.raises(ConfigValidationError) as excinfo:
            ExperimentConfig.load(write_config(data))
        assert "numerical.seed" in excinfo.value.report.missing_keys

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigReadError):
            ExperimentConfig.load(tmp_path / "absent.yaml")

    def test_broken_yaml(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("scenario: [decay\n", encoding="utf-8")
        report = ExperimentConfig.inspect(path)
        assert not report.is_valid

    def test_shipped_configs_are_valid(self):
        from pathlib import Path

        configs = sorted(Path(__file__).resolve().parents[2].joinpath("configs").glob("*.yaml"))
        assert configs
        for path in configs:
            assert ExperimentConfig.inspect(path).is_valid, path
