"""
Utilities Module
ユーティリティ層モジュール
"""

from .logger import (
    ColoredFormatter,
    LoggerManager,
    ScenarioLoggerAdapter,
    get_log_manager,
    get_logger,
    get_performance_logger,
    get_scenario_logger,
    log_component_status,
    log_error_with_context,
    log_performance,
    log_system_shutdown,
    log_system_startup,
    run_log,
    setup_logging,
)
from .performance_monitor import PerformanceMetrics, PerformanceMonitor

__all__ = [
    # Logger exports
    'setup_logging',
    'get_logger',
    'get_scenario_logger',
    'get_performance_logger',
    'LoggerManager',
    'get_log_manager',
    'ColoredFormatter',
    'ScenarioLoggerAdapter',
    'log_performance',
    'log_error_with_context',
    'log_system_startup',
    'log_system_shutdown',
    'log_component_status',
    'run_log',

    # Performance
    'PerformanceMetrics',
    'PerformanceMonitor',
]
