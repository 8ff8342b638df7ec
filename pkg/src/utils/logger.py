#!/usr/bin/env python3
"""
Lattice Clock Toolkit Logging
ログ管理モジュール（コンソール・ファイル・実行ディレクトリ別ログ）
"""

import logging
import logging.handlers
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, Optional, Union

from ..config.settings import SystemSettings, get_system_settings

RUN_LOG_NAME = "run.log"
DETAILED_FORMAT = "%(asctime)s | %(name)s:%(lineno)d | %(levelname)s | %(funcName)s() | %(message)s"


class ColoredFormatter(logging.Formatter):
    """カラー付きログフォーマッター（開発環境用）"""

    COLORS = {
        'DEBUG': '\033[36m',
        'INFO': '\033[32m',
        'WARNING': '\033[33m',
        'ERROR': '\033[31m',
        'CRITICAL': '\033[35m',
    }
    RESET = '\033[0m'

    def format(self, record: logging.LogRecord) -> str:
        levelname = record.levelname
        color = self.COLORS.get(levelname)
        if color:
            record.levelname = f"{color}{levelname}{self.RESET}"
        try:
            return super().format(record)
        finally:
            record.levelname = levelname


class PerformanceFilter(logging.Filter):
    """短時間シナリオの計測ログを抑制"""

    def __init__(self, min_duration: float = 1.0):
        super().__init__()
        self.min_duration = min_duration

    def filter(self, record: logging.LogRecord) -> bool:
        duration = getattr(record, 'duration', None)
        return duration is None or duration >= self.min_duration


class ScenarioLoggerAdapter(logging.LoggerAdapter):
    """シナリオ名（とシード）を接頭辞に付けるアダプター"""

    def __init__(self, logger: logging.Logger, scenario: str, seed: Optional[int] = None):
        super().__init__(logger, {'scenario': scenario, 'seed': seed})

    def process(self, msg, kwargs):
        tag = self.extra['scenario'].upper()
        if self.extra['seed'] is not None:
            tag = f"{tag} seed={self.extra['seed']}"
        return f"[{tag}] {msg}", kwargs


class LoggerManager:
    """ログマネージャー"""

    def __init__(self, settings: Optional[SystemSettings] = None):
        self.settings = settings or get_system_settings()
        self._loggers: Dict[str, logging.Logger] = {}
        self._initialized = False

    @property
    def level(self) -> int:
        return getattr(logging, self.settings.log_level)

    def setup_logging(self, level: Optional[str] = None) -> None:
        """ログシステムの初期化（二度目以降は何もしない）"""
        if self._initialized:
            return
        if level:
            self.settings.log_level = level.upper()

        Path(self.settings.log_file).parent.mkdir(parents=True, exist_ok=True)
        root = logging.getLogger()
        root.setLevel(self.level)
        root.handlers.clear()

        root.addHandler(self._console_handler())
        root.addHandler(self._file_handler())
        if self.settings.log_rotation:
            root.addHandler(self._rotating_handler())

        # RuntimeWarning from numpy/scipy (overflow, ill-conditioning) goes to the log files too
        logging.captureWarnings(True)
        self._initialized = True

        logger = self.get_logger(__name__)
        logger.info("🚀 Logging system initialized")
        logger.debug(f"Log level={self.settings.log_level} file={self.settings.log_file} "
                     f"env={self.settings.environment.value}")

    def _console_handler(self) -> logging.Handler:
        # stdout carries the validate report
        handler = logging.StreamHandler(sys.stderr)
        handler.setLevel(self.level)
        formatter_cls = logging.Formatter if self.settings.is_production else ColoredFormatter
        handler.setFormatter(formatter_cls(self.settings.log_format))
        return handler

    def _file_handler(self) -> logging.Handler:
        handler = logging.FileHandler(self.settings.log_file, encoding='utf-8')
        handler.setLevel(self.level)
        handler.setFormatter(logging.Formatter(self.settings.log_format))
        return handler

    def _rotating_handler(self) -> logging.Handler:
        handler = logging.handlers.RotatingFileHandler(
            self.settings.log_file + '.rotating',
            maxBytes=self.settings.log_max_bytes,
            backupCount=self.settings.log_backup_count,
            encoding='utf-8',
        )
        handler.setLevel(logging.DEBUG)
        handler.setFormatter(logging.Formatter(DETAILED_FORMAT))
        return handler

    @contextmanager
    def run_log(self, directory: Union[str, Path]) -> Iterator[Path]:
        """実行ディレクトリに run.log を付与（実行中のみ）"""
        path = Path(directory) / RUN_LOG_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        handler = logging.FileHandler(path, mode='w', encoding='utf-8')
        handler.setLevel(logging.DEBUG)
        handler.setFormatter(logging.Formatter(DETAILED_FORMAT))
        root = logging.getLogger()
        root.addHandler(handler)
        try:
            yield path
        finally:
            root.removeHandler(handler)
            handler.close()

    def get_logger(self, name: str) -> logging.Logger:
        if not self._initialized:
            self.setup_logging()
        return self._loggers.setdefault(name, logging.getLogger(name))

    def get_scenario_logger(self, scenario: str, seed: Optional[int] = None) -> ScenarioLoggerAdapter:
        return ScenarioLoggerAdapter(self.get_logger(f"scenario.{scenario}"), scenario, seed)

    def add_performance_logger(self, name: str, min_duration: float = 1.0) -> logging.Logger:
        """計測専用ロガー（フィルタは一度だけ付与）"""
        logger = self.get_logger(f"performance.{name}")
        if not any(isinstance(f, PerformanceFilter) for f in logger.filters):
            logger.addFilter(PerformanceFilter(min_duration))
        return logger

    def cleanup(self) -> None:
        root = logging.getLogger()
        for handler in root.handlers:
            handler.close()
        root.handlers.clear()
        logging.captureWarnings(False)
        self._loggers.clear()
        self._initialized = False


_log_manager: Optional[LoggerManager] = None


def get_log_manager() -> LoggerManager:
    """ログマネージャーのシングルトン取得"""
    global _log_manager
    if _log_manager is None:
        _log_manager = LoggerManager()
    return _log_manager


def setup_logging(level: Optional[str] = None) -> None:
    get_log_manager().setup_logging(level)


def get_logger(name: str) -> logging.Logger:
    return get_log_manager().get_logger(name)


def get_scenario_logger(scenario: str, seed: Optional[int] = None) -> ScenarioLoggerAdapter:
    return get_log_manager().get_scenario_logger(scenario, seed)


def get_performance_logger(name: str, min_duration: float = 1.0) -> logging.Logger:
    return get_log_manager().add_performance_logger(name, min_duration)


def run_log(directory: Union[str, Path]):
    return get_log_manager().run_log(directory)


def _format_context(context: Dict[str, Any]) -> str:
    return ", ".join(f"{k}={v}" for k, v in context.items())


def log_performance(logger: logging.Logger, operation: str, duration: float, **context) -> None:
    logger.info(f"⚡ {operation}: {duration:.3f}s ({_format_context(context)})", extra={'duration': duration})


def log_error_with_context(logger: Union[logging.Logger, logging.LoggerAdapter], error: Exception,
                           context: Dict[str, Any]) -> None:
    logger.error(f"❌ {type(error).__name__}: {error} | Context: {_format_context(context)}")


def log_system_startup(command: str) -> None:
    settings = get_system_settings()
    logger = get_logger("system.startup")
    logger.info(f"🚀 Lattice clock toolkit starting: {command}")
    logger.info(f"🌍 Environment: {settings.environment.value} | 🔧 Artifact version {settings.artifact_version}")


def log_system_shutdown(exit_code: int) -> None:
    get_logger("system.shutdown").info(f"👋 Lattice clock toolkit finished with exit code {exit_code}")


STATUS_EMOJI = {"starting": "🔄", "ready": "✅", "error": "❌", "stopping": "⏹️"}


def log_component_status(component: str, status: str, details: Optional[str] = None) -> None:
    """コンポーネント状態ログ"""
    message = f"{STATUS_EMOJI.get(status, 'ℹ️')} {component}: {status}"
    if details:
        message += f" ({details})"
    level = logging.ERROR if status == "error" else logging.INFO
    get_logger(f"system.{component}").log(level, message)
