"""
Safe control of a unicycle past elliptical obstacles.

State (x_p, y_p, theta, v, w), control (a_lin, a_ang). Safety is encoded with
a higher-order barrier h = dh_e/dt + kappa h_e built on the ellipse barrier
h_e of the point p = (x_p + l cos theta, y_p + l sin theta); the condition
dh/dt >= -alpha h is affine in the control and becomes one row of A u <= b
per obstacle.
"""
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple
import logging

import numpy as np

from config import settings
from ..autodiff import Tape
from ..constraints import AffineConstraintSpec, ConstraintEval
from ..exceptions import ConfigurationException, DegenerateConstraintException
from ..hardnet_cvx import Polyhedron, project_cvx
from .tasks import EvalResult, Forward, Predict, Task, TaskScale, ViolationSummary, add_all, scale_for

logger = logging.getLogger(__name__)

DEGENERATE_ROW_NORM = 1e-10
STATE_NAMES = ("x_p", "y_p", "theta", "v", "w")

@dataclass(frozen=True)
class Obstacle:
    cx: float
    cy: float
    rx: float
    ry: float

    def __post_init__(self):
        if self.rx <= 0 or self.ry <= 0:
            raise ConfigurationException("Obstacle radii must be positive", field="radii", value=(self.rx, self.ry))

@dataclass
class UnicycleConfig:
    obstacles: Tuple[Obstacle, ...] = (
        Obstacle(-2.5, 0.25, 0.4, 0.3),
        Obstacle(-1.5, -0.6, 0.5, 0.3),
    )
    axis_offset: float = 0.1
    kappa: float = 1.0
    alpha: float = 1.0
    dt: float = 0.02
    n_step: int = 50
    q_cost: Tuple[float, ...] = (100.0, 100.0, 0.0, 0.1, 0.1)
    r_cost: Tuple[float, ...] = (0.1, 0.1)
    init_low: Tuple[float, ...] = (-4.0, 0.0, -np.pi / 4, 0.0, 0.0)
    init_high: Tuple[float, ...] = (-3.5, 0.5, -np.pi / 8, 0.0, 0.0)
    # nominal proportional law toward the origin
    k_pos: float = 1.0
    k_vel: float = 2.0
    k_heading: float = 2.0
    k_turn: float = 2.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigurationException("Time step must be positive", field="dt", value=self.dt)
        if self.n_step < 1:
            raise ConfigurationException("Rollouts need at least one step", field="n_step", value=self.n_step)
        if self.axis_offset <= 0:
            raise ConfigurationException("Axis offset must be positive", field="axis_offset", value=self.axis_offset)

    @classmethod
    def from_settings(cls) -> "UnicycleConfig":
        return cls(axis_offset=settings.unicycle_axis_offset, kappa=settings.cbf_kappa, alpha=settings.cbf_alpha)

    def config_items(self) -> Dict[str, object]:
        items = {f"unicycle.{k}": getattr(self, k) for k in (
            "axis_offset", "kappa", "alpha", "dt", "n_step", "q_cost", "r_cost", "init_low", "init_high",
            "k_pos", "k_vel", "k_heading", "k_turn"
        )}
        for i, ob in enumerate(self.obstacles):
            items[f"unicycle.obstacle{i}"] = (ob.cx, ob.cy, ob.rx, ob.ry)
        return items

def unicycle_step(state, u, dt: float) -> np.ndarray:
    """Explicit Euler step; state and u may carry one column per sample"""
    if dt <= 0:
        raise ConfigurationException("Time step must be positive", field="dt", value=dt)
    state = np.asarray(state, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    _, _, theta, v, w = state
    rate = np.stack([v * np.cos(theta), v * np.sin(theta), w, u[0], u[1]])
    return state + dt * rate

def ellipse_barrier(state, obstacle: Obstacle, axis_offset: float) -> np.ndarray:
    """h_e = ((p_x - c_x)/r_x)^2 + ((p_y - c_y)/r_y)^2 - 1 at the offset point"""
    x_p, y_p, theta = state[0], state[1], state[2]
    px = x_p + axis_offset * np.cos(theta)
    py = y_p + axis_offset * np.sin(theta)
    return ((px - obstacle.cx) / obstacle.rx) ** 2 + ((py - obstacle.cy) / obstacle.ry) ** 2 - 1.0

def hocbf_value_and_grad(state, obstacle: Obstacle, kappa: float, axis_offset: float) -> Tuple[float, np.ndarray]:
    """h = dh_e/dt + kappa h_e and its gradient w.r.t. the state"""
    x_p, y_p, theta, v, w = np.asarray(state, dtype=np.float64).ravel()
    l = axis_offset
    c, s = np.cos(theta), np.sin(theta)
    dx = x_p + l * c - obstacle.cx
    dy = y_p + l * s - obstacle.cy
    rx2, ry2 = obstacle.rx ** 2, obstacle.ry ** 2
    ex, ey = dx / rx2, dy / ry2
    pdx = v * c - l * w * s
    pdy = v * s + l * w * c

    h_e = dx * ex + dy * ey - 1.0
    h = 2.0 * (ex * pdx + ey * pdy) + kappa * h_e

    grad = np.array([
        2.0 * (pdx + kappa * dx) / rx2,
        2.0 * (pdy + kappa * dy) / ry2,
        2.0 * ((-l * s / rx2) * pdx + ex * (-v * s - l * w * c) + (l * c / ry2) * pdy + ey * (v * c - l * w * s))
        + 2.0 * kappa * (-ex * l * s + ey * l * c),
        2.0 * (ex * c + ey * s),
        2.0 * l * (-ex * s + ey * c),
    ])
    return float(h), grad

def hocbf_constraint(state, obstacle: Obstacle, kappa: float, alpha: float,
                     axis_offset: float) -> Tuple[np.ndarray, float]:
    """Row a and bound b with a^T u <= b equivalent to dh/dt >= -alpha h"""
    state = np.asarray(state, dtype=np.float64).ravel()
    h, grad = hocbf_value_and_grad(state, obstacle, kappa, axis_offset)
    _, _, theta, v, w = state
    drift = np.array([v * np.cos(theta), v * np.sin(theta), w, 0.0, 0.0])
    a_row = -grad[3:5]
    norm = float(np.linalg.norm(a_row))
    if norm < DEGENERATE_ROW_NORM:
        raise DegenerateConstraintException("HOCBF row vanishes at this state", x=state, norm=norm)
    return a_row, float(grad @ drift + alpha * h)

def unicycle_spec(cfg: UnicycleConfig) -> AffineConstraintSpec:
    def evaluator(state) -> ConstraintEval:
        rows, bounds = [], []
        for ob in cfg.obstacles:
            try:
                a_row, b = hocbf_constraint(state, ob, cfg.kappa, cfg.alpha, cfg.axis_offset)
            except DegenerateConstraintException:
                # no constraint from this obstacle at this instant
                logger.debug(f"Dropping degenerate HOCBF row for obstacle at ({ob.cx}, {ob.cy})")
                continue
            rows.append(a_row)
            bounds.append(b)
        return ConstraintEval.create(2, A=np.array(rows).reshape(-1, 2), b=bounds)

    return AffineConstraintSpec(
        evaluator,
        n_out=2,
        n_ineq=len(cfg.obstacles),
        n_eq=0,
        variable_ineq=True,
        name="unicycle"
    )

def nominal_control(state, cfg: UnicycleConfig) -> np.ndarray:
    """Proportional law steering toward the origin; ignores obstacles"""
    x_p, y_p, theta, v, w = np.asarray(state, dtype=np.float64)
    c, s = np.cos(theta), np.sin(theta)
    a_lin = -cfg.k_pos * (x_p * c + y_p * s) - cfg.k_vel * v
    a_ang = cfg.k_heading * (x_p * s - y_p * c) - cfg.k_turn * w
    return np.stack([a_lin, a_ang])

def cbf_qp_controller(state, pi_nom: Callable[[np.ndarray], np.ndarray], spec: AffineConstraintSpec) -> np.ndarray:
    """Closest control to the nominal one satisfying every HOCBF row"""
    state = np.asarray(state, dtype=np.float64).ravel()
    u_nom = np.asarray(pi_nom(state), dtype=np.float64).ravel()
    ev = spec.evaluate(state)
    if ev.n_ineq == 0:
        return u_nom
    return project_cvx(u_nom, Polyhedron.from_eval(ev)).z

def rollout_cost(policy: Callable[[np.ndarray], np.ndarray], initial_state, cfg: UnicycleConfig) -> float:
    """dt * sum_i x_i^T Q x_i + u_i^T R u_i over n_step Euler steps"""
    q, r = np.asarray(cfg.q_cost), np.asarray(cfg.r_cost)
    state = np.asarray(initial_state, dtype=np.float64).ravel()
    cost = 0.0
    for _ in range(cfg.n_step):
        u = np.asarray(policy(state), dtype=np.float64).ravel()
        cost += cfg.dt * float(q @ state ** 2 + r @ u ** 2)
        state = unicycle_step(state, u, cfg.dt)
    return cost

class UnicycleTask(Task):
    name = "unicycle"

    def __init__(self, seed: int = 0, scale: Optional[TaskScale] = None, cfg: Optional[UnicycleConfig] = None):
        self.cfg = cfg or UnicycleConfig.from_settings()
        super().__init__(unicycle_spec(self.cfg), seed, scale or scale_for("unicycle"))
        low, high = np.asarray(self.cfg.init_low), np.asarray(self.cfg.init_high)
        self._train = np.random.default_rng([seed, 1]).uniform(low, high, size=(self.scale.n_train, 5)).T
        self._test = np.random.default_rng([seed, 2]).uniform(low, high, size=(self.scale.n_test, 5)).T

    def train_inputs(self) -> np.ndarray:
        return self._train

    def test_inputs(self) -> np.ndarray:
        return self._test

    def base_output(self, X: np.ndarray) -> np.ndarray:
        return nominal_control(X, self.cfg)

    def base_node(self, tape: Tape, x_node: int) -> int:
        x_p, y_p, theta = tape.slice(x_node, 0), tape.slice(x_node, 1), tape.slice(x_node, 2)
        v, w = tape.slice(x_node, 3), tape.slice(x_node, 4)
        c, s = tape.cos(theta), tape.sin(theta)
        along = tape.add(tape.mul(x_p, c), tape.mul(y_p, s))
        across = tape.sub(tape.mul(x_p, s), tape.mul(y_p, c))
        a_lin = tape.sub(tape.scale(along, -self.cfg.k_pos), tape.scale(v, self.cfg.k_vel))
        a_ang = tape.sub(tape.scale(across, self.cfg.k_heading), tape.scale(w, self.cfg.k_turn))
        return tape.concat([a_lin, a_ang])

    def step_node(self, tape: Tape, state: int, u: int) -> int:
        theta, v, w = tape.slice(state, 2), tape.slice(state, 3), tape.slice(state, 4)
        rate = tape.concat([
            tape.mul(v, tape.cos(theta)),
            tape.mul(v, tape.sin(theta)),
            w,
            tape.slice(u, 0),
            tape.slice(u, 1),
        ])
        return tape.add(state, tape.scale(rate, self.cfg.dt))

    def loss(self, tape: Tape, forward: Forward, X: np.ndarray):
        """Mean rollout cost over the batch of initial states, recorded end to end"""
        batch = X.shape[1]
        q_row = tape.leaf(np.asarray(self.cfg.q_cost).reshape(1, -1))
        r_row = tape.leaf(np.asarray(self.cfg.r_cost).reshape(1, -1))
        state = tape.leaf(X)
        stage_costs, penalties = [], []
        for _ in range(self.cfg.n_step):
            out = forward(tape, state, self.samples(tape.value(state)))
            stage_costs.append(tape.add(tape.matmul(q_row, tape.square(state)), tape.matmul(r_row, tape.square(out.y))))
            if out.penalty is not None:
                penalties.append(out.penalty)
            state = self.step_node(tape, state, out.y)
        cost = tape.scale(tape.sum(add_all(tape, stage_costs)), self.cfg.dt / batch)
        penalty = add_all(tape, penalties)
        if penalty is not None:
            penalty = tape.scale(penalty, 1.0 / self.cfg.n_step)
        return cost, penalty

    def cbf_qp_policy(self, X: np.ndarray) -> np.ndarray:
        pi_nom = lambda s: nominal_control(s, self.cfg)
        return np.stack([cbf_qp_controller(X[:, j], pi_nom, self.spec) for j in range(X.shape[1])], axis=1)

    def evaluate(self, predict: Predict) -> EvalResult:
        S = self.test_inputs().copy()
        n_traj = S.shape[1]
        q, r = np.asarray(self.cfg.q_cost), np.asarray(self.cfg.r_cost)
        costs = np.zeros(n_traj)
        accumulated = np.zeros(n_traj)
        violated_pairs = np.zeros(n_traj)
        min_h = np.inf
        rows: List[list] = []

        for step in range(self.cfg.n_step + 1):
            h_values = np.array([ellipse_barrier(S, ob, self.cfg.axis_offset) for ob in self.cfg.obstacles])
            min_h = min(min_h, float(h_values.min()))
            if step == self.cfg.n_step:
                for j in range(n_traj):
                    rows.append([j, step, *S[:, j], np.nan, np.nan, *h_values[:, j]])
                break

            U = predict(S)
            costs += self.cfg.dt * (q @ S ** 2 + r @ U ** 2)
            for j in range(n_traj):
                ev = self.spec.evaluate(S[:, j])
                if ev.n_ineq:
                    viol = np.maximum(ev.A @ U[:, j] - ev.b, 0.0)
                    accumulated[j] += float(viol.sum())
                    violated_pairs[j] += int((viol > settings.ineq_tol).sum())
                rows.append([j, step, *S[:, j], *U[:, j], *h_values[:, j]])
            S = unicycle_step(S, U, self.cfg.dt)

        summary = ViolationSummary(
            ineq_max=float(accumulated.max()),
            ineq_mean=float(accumulated.mean()),
            ineq_count=float(violated_pairs.mean())
        )
        header = ["trajectory", "step", *STATE_NAMES, "a_lin", "a_ang",
                  *[f"h{i}" for i in range(len(self.cfg.obstacles))]]
        return EvalResult(
            metric=float(costs.mean()),
            violations=summary,
            n_samples=n_traj,
            artifact_name="trajectory.csv",
            artifact_header=header,
            artifact_rows=rows,
            extras={"min_h_ellipse": min_h}
        )

    def config_items(self) -> Dict[str, object]:
        return {**super().config_items(), **self.cfg.config_items()}
