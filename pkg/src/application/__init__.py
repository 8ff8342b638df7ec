"""
Application Module
アプリケーション層モジュール
"""

from .experiment_runner import (
    ExperimentRunner,
    create_experiment_runner
)

__all__ = [
    'ExperimentRunner',
    'create_experiment_runner'
]
