import logging

import pytest

from hardnet.monitoring import PerformanceProfiler, memory_usage_mb, profile_operation
from logging_config import build_logging_config

def test_profiler_statistics():
    """Count, mean and extremes of recorded durations"""
    profiler = PerformanceProfiler()
    for duration in (0.1, 0.2, 0.3, 0.4):
        profiler.record_operation("project_aff", duration)

    stats = profiler.get_operation_stats("project_aff")
    assert stats["count"] == 4
    assert stats["avg"] == pytest.approx(0.25)
    assert stats["min"] == 0.1
    assert stats["max"] == 0.4
    assert profiler.get_operation_stats("missing") == {"count": 0}

def test_profiler_keeps_recent_samples():
    """Only the newest max_samples durations are kept"""
    profiler = PerformanceProfiler(max_samples=3)
    for i in range(5):
        profiler.record_operation("op", float(i))
    assert profiler.operation_times["op"] == [2.0, 3.0, 4.0]

def test_profiler_reset():
    """Reset clears one operation or all of them"""
    profiler = PerformanceProfiler()
    profiler.record_operation("a", 0.1)
    profiler.record_operation("b", 0.1)
    profiler.reset("a")
    assert profiler.get_operation_stats("a")["count"] == 0
    assert profiler.get_operation_stats("b")["count"] == 1
    profiler.reset()
    assert not profiler.operation_times

def test_slow_operation_warning(caplog, monkeypatch):
    """Durations above the threshold are logged"""
    profiler = PerformanceProfiler(slow_threshold=0.5)
    monkeypatch.setattr(profiler.logger, "propagate", True)
    with caplog.at_level(logging.WARNING, logger="hardnet.performance"):
        profiler.record_operation("evaluate.fitting.nn", 2.0)
        profiler.record_operation("evaluate.fitting.nn", 0.1)
    slow = [r for r in caplog.records if "Slow operation" in r.getMessage()]
    assert len(slow) == 1
    assert slow[0].operation == "evaluate.fitting.nn"

def test_profile_operation_decorator():
    """The decorator records a sample even when the call raises"""
    profiler = PerformanceProfiler()

    @profile_operation("square", profiler)
    def square(x):
        if x < 0:
            raise ValueError("negative")
        return x * x

    assert square(3) == 9
    with pytest.raises(ValueError):
        square(-1)
    assert profiler.get_operation_stats("square")["count"] == 2

def test_memory_usage_positive():
    """Resident memory of the test process is reported in MB"""
    assert memory_usage_mb() > 0.0

def test_logging_config_uses_log_dir(tmp_path):
    """File handlers write into the run directory; json format reaches the file handler"""
    config = build_logging_config(str(tmp_path), level="DEBUG", fmt="json")
    assert config["handlers"]["file"]["filename"] == str(tmp_path / "hardnet.log")
    assert config["handlers"]["error_file"]["filename"] == str(tmp_path / "error.log")
    assert config["handlers"]["console"]["formatter"] == "json"
    assert config["handlers"]["file"]["formatter"] == "json"
    assert config["loggers"][""]["level"] == "DEBUG"
