"""
CSV and config-echo writers for experiment output directories.

Floats are written with 12 significant digits so that repeated runs with the
same seed produce byte-identical files.
"""
from dataclasses import astuple, dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union
import csv
import math

from config import settings

METRICS_HEADER = [
    "task", "model", "seed", "epoch", "loss", "metric",
    "ineq_max", "ineq_mean", "ineq_count", "eq_max", "eq_mean", "eq_count", "time_ms"
]
TIMING_HEADER = ["task", "model", "seed", "epoch", "time_ms"]
MISSING = "NA"

PathLike = Union[str, Path]

@dataclass
class MetricsRow:
    task: str
    model: str
    seed: int
    epoch: int
    loss: float
    metric: float
    ineq_max: float
    ineq_mean: float
    ineq_count: float
    eq_max: float
    eq_mean: float
    eq_count: float
    time_ms: float

    def values(self, deterministic: Optional[bool] = None) -> List[str]:
        deterministic = settings.deterministic_csv if deterministic is None else deterministic
        out = [format_value(v) for v in astuple(self)]
        if deterministic:
            out[-1] = MISSING
        return out

    def timing_values(self) -> List[str]:
        return [format_value(v) for v in (self.task, self.model, self.seed, self.epoch, self.time_ms)]

def format_value(value: Any) -> str:
    if value is None:
        return MISSING
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return MISSING
        return format(value, ".12g")
    if hasattr(value, "item"):
        return format_value(value.item())
    return str(value)

def _write_rows(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)

def write_metrics(path: PathLike, rows: Sequence[MetricsRow], deterministic: Optional[bool] = None):
    _write_rows(path, METRICS_HEADER, (r.values(deterministic) for r in rows))

def write_timing(path: PathLike, rows: Sequence[MetricsRow]):
    _write_rows(path, TIMING_HEADER, (r.timing_values() for r in rows))

def write_artifact(path: PathLike, header: Sequence[str], rows: Sequence[Sequence[Any]]):
    _write_rows(path, header, ([format_value(v) for v in row] for row in rows))

def write_config(path: PathLike, items: Dict[str, Any]):
    """One key=value line per resolved hyperparameter, sorted by key"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{key}={_config_value(items[key])}" for key in sorted(items)]
    path.write_text("\n".join(lines) + "\n")

def _config_value(value: Any) -> str:
    if isinstance(value, (list, tuple)):
        return ",".join(_config_value(v) for v in value)
    return format_value(value)
