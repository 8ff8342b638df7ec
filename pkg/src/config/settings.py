#!/usr/bin/env python3
"""
Lattice Clock Toolkit Configuration
システム設定管理モジュール
"""

import os
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional


class Environment(Enum):
    """環境設定列挙型"""
    DEVELOPMENT = "development"
    TEST = "test"
    PRODUCTION = "production"


def _env_bool(key: str, default: str) -> bool:
    return os.getenv(key, default).split('#')[0].strip().lower() == 'true'


def _env_str(key: str, default: str) -> str:
    # コメントを除去（# で分割して最初を取得）
    return os.getenv(key, default).split('#')[0].strip()


@dataclass
class SystemSettings:
    """システム関連設定"""
    environment: Environment = Environment.PRODUCTION
    debug: bool = False

    # ログ設定
    log_level: str = "INFO"
    log_file: str = "logs/lattice_clock.log"
    log_format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    log_rotation: bool = False
    log_max_bytes: int = 10 * 1024 * 1024
    log_backup_count: int = 5

    # アーティファクト情報
    artifact_version: str = "v1.0.0"

    @classmethod
    def from_env(cls) -> 'SystemSettings':
        """環境変数からシステム設定を生成"""
        env_str = _env_str('LATTICE_CLOCK_ENV', 'production').lower()
        try:
            environment = Environment(env_str)
        except ValueError as e:
            raise ValueError(f"Unknown LATTICE_CLOCK_ENV '{env_str}'") from e

        return cls(
            environment=environment,
            debug=_env_bool('DEBUG', 'false'),
            log_level=_env_str('LOG_LEVEL', 'INFO').upper(),
            log_file=_env_str('LOG_FILE', 'logs/lattice_clock.log'),
            log_rotation=_env_bool('LOG_ROTATION', 'false'),
            log_max_bytes=int(_env_str('LOG_MAX_BYTES', str(10 * 1024 * 1024))),
            log_backup_count=int(_env_str('LOG_BACKUP_COUNT', '5')),
            artifact_version=_env_str('ARTIFACT_VERSION', 'v1.0.0'),
        )

    @property
    def is_test(self) -> bool:
        return self.environment == Environment.TEST

    @property
    def is_production(self) -> bool:
        """本番環境かどうか"""
        return self.environment == Environment.PRODUCTION

    def validate(self) -> None:
        if self.log_level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"Invalid log level: {self.log_level}")
        if self.log_max_bytes <= 0 or self.log_backup_count < 0:
            raise ValueError("Log rotation limits must be positive")


@dataclass
class ComputeSettings:
    """計算資源設定"""
    worker_threads: int = 1

    @classmethod
    def from_env(cls) -> 'ComputeSettings':
        """環境変数から計算設定を生成"""
        return cls(
            worker_threads=int(_env_str('WORKER_THREADS', '1')),
        )

    def validate(self) -> None:
        if self.worker_threads < 1:
            raise ValueError(f"WORKER_THREADS must be >= 1, got {self.worker_threads}")


@dataclass
class AppSettings:
    """アプリケーション全体設定"""
    system: SystemSettings
    compute: ComputeSettings

    @classmethod
    def from_env(cls) -> 'AppSettings':
        """環境変数から全設定を生成"""
        return cls(
            system=SystemSettings.from_env(),
            compute=ComputeSettings.from_env(),
        )

    def validate(self) -> None:
        """全設定の検証"""
        self.system.validate()
        self.compute.validate()

    @property
    def recognized_env_vars(self) -> List[str]:
        """認識される環境変数（いずれも任意）"""
        return [
            'LATTICE_CLOCK_ENV',
            'DEBUG',
            'LOG_LEVEL',
            'LOG_FILE',
            'LOG_ROTATION',
            'LOG_MAX_BYTES',
            'LOG_BACKUP_COUNT',
            'ARTIFACT_VERSION',
            'WORKER_THREADS',
        ]


# グローバル設定インスタンス
_settings: Optional[AppSettings] = None


def get_settings() -> AppSettings:
    """アプリケーション設定のシングルトン取得"""
    global _settings
    if _settings is None:
        _settings = AppSettings.from_env()
        _settings.validate()
    return _settings


def reload_settings() -> AppSettings:
    """設定を再読み込み（テスト用）"""
    global _settings
    _settings = None
    return get_settings()


def get_system_settings() -> SystemSettings:
    """システム設定の取得"""
    return get_settings().system


def get_compute_settings() -> ComputeSettings:
    """計算設定の取得"""
    return get_settings().compute
