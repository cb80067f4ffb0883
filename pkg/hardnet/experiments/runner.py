"""
One experiment run end to end, and fan-out over seeds.

Each run writes into its output directory:
    metrics.csv, timing.csv, config.txt, model.bin (when the model has
    parameters) and the task's plotting artifact (predictions.csv or
    trajectory.csv).
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Type
import logging
import time

from config import settings
from logging_config import experiment_logger
from ..exceptions import ConfigurationException
from ..monitoring import memory_usage_mb
from .fitting import FittingTask
from .models import Model
from .nonconvex import NonconvexTask
from .reporting import write_artifact, write_config, write_metrics, write_timing
from .tasks import TASK_NAMES, Task, scale_for
from .training import TrainConfig, TrainResult, train
from .unicycle import UnicycleTask

logger = logging.getLogger(__name__)

TASKS: Dict[str, Type[Task]] = {
    "fitting": FittingTask,
    "nonconvex": NonconvexTask,
    "unicycle": UnicycleTask,
}

@dataclass
class RunRequest:
    task: str
    model: str
    seed: int = 0
    out_dir: str = "runs"
    scale: str = "small"
    epochs: Optional[int] = None
    warm_start: int = 0
    warm_start_penalty: bool = False
    batch_size: Optional[int] = None
    lr: Optional[float] = None

def make_task(name: str, seed: int = 0, scale: str = "small", **overrides) -> Task:
    if name not in TASKS:
        raise ConfigurationException(
            f"Unknown task '{name}'; expected one of {', '.join(TASK_NAMES)}", field="task", value=name
        )
    return TASKS[name](seed=seed, scale=scale_for(name, scale, **overrides))

def run_experiment(request: RunRequest) -> TrainResult:
    """Build, train and evaluate one (task, model, seed) and write its output directory"""
    started = time.perf_counter()
    out = Path(request.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    task = make_task(request.task, request.seed, request.scale)
    model = Model(request.model, task, seed=request.seed)
    cfg_values = dict(
        epochs=request.epochs,
        batch_size=request.batch_size,
        warm_start_epochs=request.warm_start,
        warm_start_penalty=request.warm_start_penalty,
        seed=request.seed,
    )
    if request.lr is not None:
        cfg_values["lr"] = request.lr
    cfg = TrainConfig(**cfg_values).resolved(task)

    write_config(out / "config.txt", {
        **settings.config_items(),
        **task.config_items(),
        **model.config_items(),
        **cfg.config_items(),
    })
    logger.info(f"Starting {request.task}/{request.model} seed={request.seed} ({request.scale} scale)",
                extra={"task": request.task, "model": request.model, "seed": request.seed})

    result = train(model, task, cfg)

    write_metrics(out / "metrics.csv", result.history)
    write_timing(out / "timing.csv", result.history)
    final = result.final.result
    if final.artifact_name:
        write_artifact(out / final.artifact_name, final.artifact_header, final.artifact_rows)
    model.save(str(out / "model.bin"))
    for key, value in final.extras.items():
        logger.info(f"{key}={value:.6g}", extra={"task": request.task, "model": request.model, key: value})

    experiment_logger.log_run_summary(request.task, request.model, request.seed,
                                      time.perf_counter() - started, memory_usage_mb(), str(out))
    return result

def _run_quietly(request: RunRequest) -> str:
    run_experiment(request)
    return request.out_dir

def seed_requests(request: RunRequest, seeds: Sequence[int]) -> List[RunRequest]:
    """One request per seed; several seeds write to OUT/seed-<n>/"""
    if len(seeds) == 1:
        return [RunRequest(**{**request.__dict__, "seed": seeds[0]})]
    return [
        RunRequest(**{**request.__dict__, "seed": s, "out_dir": str(Path(request.out_dir) / f"seed-{s}")})
        for s in seeds
    ]

def run_many(request: RunRequest, seeds: Sequence[int], workers: int = 1) -> List[str]:
    """Run every seed, in parallel worker processes when workers > 1"""
    if workers < 1:
        raise ConfigurationException("Worker count must be at least 1", field="workers", value=workers)
    requests = seed_requests(request, seeds)
    if workers == 1 or len(requests) == 1:
        return [_run_quietly(r) for r in requests]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_quietly, requests))
