from dataclasses import dataclass
import logging
import time

from ..monitoring import performance_profiler
from .models import Model
from .reporting import MetricsRow
from .tasks import EvalResult, Task

logger = logging.getLogger(__name__)

@dataclass
class Evaluation:
    result: EvalResult
    time_ms: float

    def row(self, task: Task, model: Model, seed: int, epoch: int, loss: float) -> MetricsRow:
        v = self.result.violations
        return MetricsRow(
            task=task.name,
            model=model.kind,
            seed=seed,
            epoch=epoch,
            loss=loss,
            metric=self.result.metric,
            ineq_max=v.ineq_max,
            ineq_mean=v.ineq_mean,
            ineq_count=v.ineq_count,
            eq_max=v.eq_max,
            eq_mean=v.eq_mean,
            eq_count=v.eq_count,
            time_ms=self.time_ms
        )

def evaluate(model: Model, task: Task) -> Evaluation:
    """Run the held-out pass; time_ms is wall-clock per test sample"""
    start = time.perf_counter()
    result = task.evaluate(model.predict)
    elapsed = time.perf_counter() - start
    performance_profiler.record_operation(f"evaluate.{task.name}.{model.kind}", elapsed)

    time_ms = 1000.0 * elapsed / max(result.n_samples, 1)
    logger.debug(
        f"Evaluated {model.kind} on {task.name}: metric={result.metric:.6g} in {elapsed:.3f}s",
        extra={"task": task.name, "model": model.kind, "duration": elapsed, "n_samples": result.n_samples}
    )
    return Evaluation(result, time_ms)
