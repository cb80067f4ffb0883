from collections import defaultdict
from threading import Lock
from typing import Dict, List, Optional
import functools
import logging
import time

import psutil

from config import settings

logger = logging.getLogger(__name__)

class PerformanceProfiler:
    """Performance profiler for detailed operation timing"""

    def __init__(self, slow_threshold: float = 1.0, max_samples: int = 1000):
        self.logger = logging.getLogger("hardnet.performance")
        self.slow_threshold = slow_threshold
        self.max_samples = max_samples
        self.operation_times: Dict[str, List[float]] = defaultdict(list)
        self._lock = Lock()

    def record_operation(self, operation: str, duration: float):
        """Record operation timing"""
        with self._lock:
            self.operation_times[operation].append(duration)
            # Keep only the most recent measurements per operation
            if len(self.operation_times[operation]) > self.max_samples:
                self.operation_times[operation] = self.operation_times[operation][-self.max_samples:]

        if duration > self.slow_threshold:
            self.logger.warning(
                f"Slow operation detected: {operation} took {duration:.3f}s",
                extra={
                    "operation": operation,
                    "duration": duration,
                    "threshold": self.slow_threshold
                }
            )

    def get_operation_stats(self, operation: str) -> Dict[str, float]:
        """Get statistics for a specific operation"""
        with self._lock:
            times = self.operation_times.get(operation, [])

            if not times:
                return {"count": 0}

            times_sorted = sorted(times)
            return {
                "count": len(times),
                "avg": sum(times) / len(times),
                "min": min(times),
                "max": max(times),
                "p50": times_sorted[len(times_sorted) // 2],
                "p95": times_sorted[int(len(times_sorted) * 0.95)],
                "p99": times_sorted[int(len(times_sorted) * 0.99)]
            }

    def reset(self, operation: Optional[str] = None):
        with self._lock:
            if operation is None:
                self.operation_times.clear()
            else:
                self.operation_times.pop(operation, None)

# Global performance profiler instance
performance_profiler = PerformanceProfiler(slow_threshold=settings.slow_operation_seconds)

def profile_operation(operation_name: str, profiler: Optional[PerformanceProfiler] = None):
    """Decorator to profile operation performance"""
    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            start_time = time.perf_counter()
            try:
                return func(*args, **kwargs)
            finally:
                duration = time.perf_counter() - start_time
                (profiler or performance_profiler).record_operation(operation_name, duration)
        return wrapper
    return decorator

def memory_usage_mb() -> float:
    """Resident memory of the current process in MB"""
    try:
        return psutil.Process().memory_info().rss / 1024 / 1024
    except Exception as e:
        logger.error(f"Failed to read process memory: {e}")
        return 0.0
