"""
Performance Monitoring
シナリオ実行時間・メモリ使用量の計測
"""

import logging
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Any, Dict, Iterator, List, Optional

import psutil


@dataclass
class PerformanceMetrics:
    """パフォーマンスメトリクス"""
    timestamp: datetime
    operation_name: str
    execution_time_ms: float
    memory_usage_mb: float
    peak_memory_mb: float
    cpu_usage_percent: float
    success: bool
    error_message: Optional[str] = None
    additional_data: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["timestamp"] = self.timestamp.isoformat()
        return data


class PerformanceMonitor:
    """
    パフォーマンス監視

    measure() wraps one scenario run; the recorded entries end up in the
    run manifest's performance block.
    """

    def __init__(self, max_history_size: int = 1000):
        self.logger = logging.getLogger(__name__)
        self.metrics_history: List[PerformanceMetrics] = []
        self.max_history_size = max_history_size

    @contextmanager
    def measure(self, operation_name: str, **context) -> Iterator[Dict[str, Any]]:
        """Time and memory for the enclosed block; yields a dict for extra fields."""
        process = psutil.Process()
        initial_memory = process.memory_info().rss / 1024 / 1024
        process.cpu_percent()
        start = time.perf_counter()
        start_timestamp = datetime.now(timezone.utc)
        extra: Dict[str, Any] = dict(context)
        error_message = None
        success = False
        try:
            yield extra
            success = True
        except Exception as e:
            error_message = f"{type(e).__name__}: {e}"
            raise
        finally:
            elapsed = (time.perf_counter() - start) * 1000
            final_memory = process.memory_info().rss / 1024 / 1024
            extra.setdefault("initial_memory_mb", initial_memory)
            extra.setdefault("memory_delta_mb", final_memory - initial_memory)
            metrics = PerformanceMetrics(
                timestamp=start_timestamp,
                operation_name=operation_name,
                execution_time_ms=elapsed,
                memory_usage_mb=final_memory,
                peak_memory_mb=max(initial_memory, final_memory),
                cpu_usage_percent=process.cpu_percent(),
                success=success,
                error_message=error_message,
                additional_data=extra,
            )
            self.add_metrics(metrics)
            status = "✅" if success else "🔴"
            self.logger.info(
                f"{status} {operation_name}: {elapsed:.1f}ms, rss {final_memory:.1f}MB"
            )

    def add_metrics(self, metrics: PerformanceMetrics) -> None:
        self.metrics_history.append(metrics)
        if len(self.metrics_history) > self.max_history_size:
            self.metrics_history = self.metrics_history[-self.max_history_size:]

    @property
    def last(self) -> Optional[PerformanceMetrics]:
        return self.metrics_history[-1] if self.metrics_history else None

    def get_performance_report(self, operation_name: Optional[str] = None) -> Dict[str, Any]:
        """性能レポート生成"""
        selected = [m for m in self.metrics_history if not operation_name or m.operation_name == operation_name]
        if not selected:
            return {"message": "No metrics found for the specified criteria"}
        times = [m.execution_time_ms for m in selected if m.success]
        success_count = sum(1 for m in selected if m.success)
        report: Dict[str, Any] = {
            "summary": {
                "total_operations": len(selected),
                "successful_operations": success_count,
                "success_rate_percent": success_count / len(selected) * 100,
            }
        }
        if times:
            report["performance"] = {
                "total_execution_time_ms": sum(times),
                "max_execution_time_ms": max(times),
                "peak_memory_mb": max(m.peak_memory_mb for m in selected),
            }
        return report
