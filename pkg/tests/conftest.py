"""
Shared pytest fixtures
共通テストフィクスチャ
"""

import numpy as np
import pytest

import src.config.settings as settings_module
import src.utils.logger as logger_module
from src.config.settings import reload_settings
from src.core.coupling import CouplingModel, build_coupling_matrices, chain_geometry, spacing_from_wavelength_ratio


@pytest.fixture(autouse=True)
def isolated_settings(tmp_path, monkeypatch):
    """各テストで設定・ログを隔離"""
    monkeypatch.setenv("LATTICE_CLOCK_ENV", "test")
    monkeypatch.setenv("LOG_FILE", str(tmp_path / "logs" / "test.log"))
    monkeypatch.setenv("LOG_LEVEL", "INFO")
    monkeypatch.delenv("WORKER_THREADS", raising=False)
    monkeypatch.delenv("ARTIFACT_VERSION", raising=False)
    reload_settings()
    yield
    if logger_module._log_manager is not None:
        logger_module._log_manager.cleanup()
    logger_module._log_manager = None
    settings_module._settings = None


@pytest.fixture
def waveguide_chain():
    """導波路 N=4, k0d=0.2*pi"""
    return chain_geometry(4, 0.2 * np.pi, CouplingModel.WAVEGUIDE)


@pytest.fixture
def free_space_chain():
    """自由空間 N=4, d=0.2*lambda0"""
    return chain_geometry(4, spacing_from_wavelength_ratio(0.2), CouplingModel.FREE_SPACE_PARALLEL)


@pytest.fixture
def free_space_couplings(free_space_chain):
    return build_coupling_matrices(free_space_chain)


@pytest.fixture
def write_config(tmp_path):
    """YAML設定ファイル作成ヘルパー"""
    import yaml

    def _write(data, name: str = "config.yaml"):
        path = tmp_path / name
        path.write_text(yaml.safe_dump(data, sort_keys=False), encoding="utf-8")
        return path

    return _write
