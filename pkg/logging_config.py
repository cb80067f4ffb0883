import copy
import logging
import logging.config
import os
from typing import Any, Dict, Optional

from config import settings

# Logging configuration
LOGGING_CONFIG = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "default": {
            "format": "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
            "datefmt": "%Y-%m-%d %H:%M:%S"
        },
        "detailed": {
            "format": "%(asctime)s - %(name)s - %(levelname)s - %(pathname)s:%(lineno)d - %(funcName)s - %(message)s",
            "datefmt": "%Y-%m-%d %H:%M:%S"
        },
        "json": {
            "()": "pythonjsonlogger.jsonlogger.JsonFormatter",
            "format": "%(asctime)s %(name)s %(levelname)s %(pathname)s %(lineno)d %(funcName)s %(message)s"
        }
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "level": "INFO",
            "formatter": "default",
            "stream": "ext://sys.stdout"
        },
        "file": {
            "class": "logging.handlers.RotatingFileHandler",
            "level": "DEBUG",
            "formatter": "detailed",
            "filename": "logs/hardnet.log",
            "maxBytes": 10485760,  # 10MB
            "backupCount": 5,
            "encoding": "utf8"
        },
        "error_file": {
            "class": "logging.handlers.RotatingFileHandler",
            "level": "ERROR",
            "formatter": "detailed",
            "filename": "logs/error.log",
            "maxBytes": 10485760,  # 10MB
            "backupCount": 5,
            "encoding": "utf8"
        }
    },
    "loggers": {
        "": {  # Root logger
            "level": "INFO",
            "handlers": ["console", "file"],
            "propagate": False
        },
        "hardnet": {
            "level": "DEBUG",
            "handlers": ["console", "file", "error_file"],
            "propagate": False
        },
        "hardnet.solver": {
            "level": "DEBUG",
            "handlers": ["file", "error_file"],
            "propagate": False
        },
        "hardnet.performance": {
            "level": "INFO",
            "handlers": ["file"],
            "propagate": False
        }
    }
}

def build_logging_config(log_dir: str = "logs", level: str = "INFO", fmt: str = "default") -> Dict[str, Any]:
    """Resolve the logging config for a log directory, level and console format"""
    config = copy.deepcopy(LOGGING_CONFIG)
    config["handlers"]["file"]["filename"] = os.path.join(log_dir, "hardnet.log")
    config["handlers"]["error_file"]["filename"] = os.path.join(log_dir, "error.log")
    config["handlers"]["console"]["level"] = level
    config["handlers"]["console"]["formatter"] = fmt
    if fmt == "json":
        config["handlers"]["file"]["formatter"] = "json"
    config["loggers"][""]["level"] = level
    return config

def setup_logging(log_dir: Optional[str] = None, level: Optional[str] = None, fmt: Optional[str] = None):
    """Setup logging configuration"""
    log_dir = log_dir or settings.log_dir
    # Create logs directory if it doesn't exist
    os.makedirs(log_dir, exist_ok=True)

    # Apply logging configuration
    logging.config.dictConfig(build_logging_config(log_dir, level or settings.log_level, fmt or settings.log_format))

    # Log startup message
    logger = logging.getLogger(__name__)
    logger.info(f"Logging configuration initialized in {log_dir}")

def get_logger(name: str) -> logging.Logger:
    """Get a logger instance"""
    return logging.getLogger(name)

# Experiment logging
class ExperimentLogger:
    def __init__(self):
        self.logger = get_logger("hardnet.experiments")

    def log_epoch(self, task: str, model: str, seed: int, epoch: int, loss: float, metric: float,
                  ineq_count: float, eq_count: float):
        """Log per-epoch training metrics"""
        self.logger.info(
            f"[{task}/{model}/seed={seed}] epoch {epoch}: loss={loss:.6g} metric={metric:.6g} "
            f"ineq#={ineq_count:g} eq#={eq_count:g}",
            extra={
                "event_type": "epoch",
                "task": task,
                "model": model,
                "seed": seed,
                "epoch": epoch,
                "loss": loss,
                "metric": metric,
                "ineq_count": ineq_count,
                "eq_count": eq_count
            }
        )

    def log_run_summary(self, task: str, model: str, seed: int, seconds: float, memory_mb: float, out_dir: str):
        """Log the end of a run"""
        self.logger.info(
            f"Run finished: {task}/{model} seed={seed} in {seconds:.1f}s ({memory_mb:.1f}MB RSS) -> {out_dir}",
            extra={
                "event_type": "run_summary",
                "task": task,
                "model": model,
                "seed": seed,
                "duration": seconds,
                "memory_mb": memory_mb,
                "out_dir": out_dir
            }
        )

# Solver logging
class SolverLogger:
    def __init__(self):
        self.logger = get_logger("hardnet.solver")

    def log_fallback(self, solver: str, reason: str, **context):
        """Log a numerical fallback (jitter retry, least-squares backward)"""
        self.logger.warning(
            f"{solver} fallback: {reason}",
            extra={
                "event_type": "solver_fallback",
                "solver": solver,
                "reason": reason,
                **context
            }
        )

    def log_non_convergence(self, solver: str, iterations: int, residual: float):
        """Log iterative solvers that ran out of iterations"""
        self.logger.error(
            f"{solver} stopped after {iterations} iterations with residual {residual:.3e}",
            extra={
                "event_type": "non_convergence",
                "solver": solver,
                "iterations": iterations,
                "residual": residual
            }
        )

    def log_assumption_report(self, passed: bool, n_probes: int, failures: int):
        """Log the outcome of a constraint assumption check"""
        level = logging.INFO if passed else logging.WARNING
        self.logger.log(
            level,
            f"Assumption check {'passed' if passed else 'failed'} on {n_probes} probes ({failures} failures)",
            extra={
                "event_type": "assumption_check",
                "passed": passed,
                "n_probes": n_probes,
                "failures": failures
            }
        )

# Initialize loggers
experiment_logger = ExperimentLogger()
solver_logger = SolverLogger()
