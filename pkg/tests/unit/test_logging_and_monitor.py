"""
Logging & Performance Monitor Unit Tests

テスト対象: ログマネージャー・パフォーマンス計測
"""

import logging

import pytest

from src.utils.logger import (
    ColoredFormatter,
    PerformanceFilter,
    get_logger,
    get_performance_logger,
    get_scenario_logger,
    log_performance,
    run_log,
    setup_logging,
)
from src.utils.performance_monitor import PerformanceMonitor


class TestLoggerManager:
    """ログマネージャーテスト"""

    def test_setup_creates_log_file(self, tmp_path):
        setup_logging("debug")
        logging.getLogger("test").info("hello")
        assert (tmp_path / "logs" / "test.log").exists()
        assert logging.getLogger().level == logging.DEBUG

    def test_scenario_prefix(self):
        adapter = get_scenario_logger("decay")
        msg, _ = adapter.process("started", {})
        assert msg == "[DECAY] started"

    def test_scenario_prefix_with_seed(self):
        msg, _ = get_scenario_logger("clock", seed=7).process("scan", {})
        assert msg == "[CLOCK seed=7] scan"

    def test_run_log_is_scoped_to_the_run(self, tmp_path):
        """run.log は実行中のメッセージのみを受け取る"""
        # ARRANGE
        setup_logging("info")
        logger = get_logger("scenario.decay")
        root_handlers = len(logging.getLogger().handlers)

        # ACT
        with run_log(tmp_path / "out") as path:
            logger.info("inside the run")
        logger.info("after the run")

        # ASSERT
        text = path.read_text(encoding="utf-8")
        assert "inside the run" in text
        assert "after the run" not in text
        assert len(logging.getLogger().handlers) == root_handlers

    def test_colored_formatter_restores_levelname(self):
        record = logging.LogRecord("x", logging.INFO, __file__, 1, "msg", None, None)
        ColoredFormatter("%(levelname)s %(message)s").format(record)
        assert record.levelname == "INFO"

    def test_performance_filter(self):
        flt = PerformanceFilter(min_duration=1.0)
        record = logging.LogRecord("x", logging.INFO, __file__, 1, "msg", None, None)
        record.duration = 0.2
        assert not flt.filter(record)
        record.duration = 3.0
        assert flt.filter(record)

    def test_performance_logger_filters_once(self):
        logger = get_performance_logger("unit", min_duration=0.5)
        get_performance_logger("unit", min_duration=0.5)
        assert sum(isinstance(f, PerformanceFilter) for f in logger.filters) == 1
        logger.filters.clear()

    def test_log_performance_carries_duration(self, caplog):
        with caplog.at_level(logging.INFO):
            log_performance(logging.getLogger("perf.test"), "spectrum", 2.5, n_atoms=30)
        record = caplog.records[-1]
        assert record.duration == 2.5
        assert "n_atoms=30" in record.getMessage()


class TestPerformanceMonitor:
    """パフォーマンス計測テスト"""

    def test_measure_success(self):
        monitor = PerformanceMonitor()
        with monitor.measure("scenario.decay", threads=2) as extra:
            extra["rows"] = 10
        last = monitor.last
        assert last.success
        assert last.additional_data["threads"] == 2
        assert last.additional_data["rows"] == 10
        assert last.execution_time_ms >= 0.0
        assert last.to_dict()["timestamp"].endswith("+00:00")

    def test_measure_failure_reraises(self):
        monitor = PerformanceMonitor()
        with pytest.raises(RuntimeError):
            with monitor.measure("scenario.mps"):
                raise RuntimeError("boom")
        assert not monitor.last.success
        assert monitor.last.error_message == "RuntimeError: boom"

    def test_history_is_bounded(self):
        monitor = PerformanceMonitor(max_history_size=2)
        for name in ("a", "b", "c"):
            with monitor.measure(name):
                pass
        assert [m.operation_name for m in monitor.metrics_history] == ["b", "c"]

    def test_report(self):
        monitor = PerformanceMonitor()
        with monitor.measure("a"):
            pass
        report = monitor.get_performance_report("a")
        assert report["summary"]["total_operations"] == 1
        assert report["summary"]["success_rate_percent"] == 100.0
        assert "message" in monitor.get_performance_report("missing")
