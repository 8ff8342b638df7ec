"""
Configuration Module
設定管理モジュール
"""

from .experiment import (
    SCENARIO_SCHEMA,
    SCENARIOS,
    ExperimentConfig,
    GeometryBlock,
    NumericalBlock,
    OutputBlock,
    SchemaReport,
)
from .settings import (
    AppSettings,
    ComputeSettings,
    Environment,
    SystemSettings,
    get_compute_settings,
    get_settings,
    get_system_settings,
    reload_settings,
)

__all__ = [
    # Main settings
    'AppSettings',
    'get_settings',
    'reload_settings',

    # Settings groups
    'SystemSettings',
    'ComputeSettings',
    'get_system_settings',
    'get_compute_settings',
    'Environment',

    # Experiment configuration
    'ExperimentConfig',
    'GeometryBlock',
    'NumericalBlock',
    'OutputBlock',
    'SchemaReport',
    'SCENARIO_SCHEMA',
    'SCENARIOS',
]
