"""
Minimum-distance projection onto convex sets and its implicit derivative.

Supported sets are polyhedra {A z <= b, C z = d}, Euclidean balls and
intersections of those. Polyhedra are solved exactly: a phase-one LP gives a
feasible vertex and a primal active-set method with Bland's rule walks to the
projection. Balls are handled in closed form and intersections with Dykstra's
alternating projections. The backward pass linearises the
constraints that are tight at the solution.
"""
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, List, Optional, Sequence, Tuple, Union
import logging

import numpy as np
from scipy import linalg, optimize

from config import settings
from logging_config import solver_logger
from .autodiff import Tape
from .exceptions import (
    ConfigurationException,
    InfeasibleConstraintException,
    ShapeMismatchException,
    SolverConvergenceException
)
from .monitoring import profile_operation

logger = logging.getLogger(__name__)

MULTIPLIER_TOL = 1e-10
ACTIVE_TOL = 1e-7
PHASE_ONE_TOL = 1e-9
POLISH_TOL = 1e-8

@dataclass
class Polyhedron:
    A: np.ndarray
    b: np.ndarray
    C: np.ndarray
    d: np.ndarray
    _nonempty: Optional[bool] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        from .constraints import ConstraintEval

        ev = ConstraintEval(self.A, self.b, self.C, self.d)
        self.A, self.b, self.C, self.d = ev.A, ev.b, ev.C, ev.d

    @classmethod
    def from_eval(cls, ev) -> "Polyhedron":
        return cls(ev.A, ev.b, ev.C, ev.d)

    @classmethod
    def box(cls, lower: Sequence[float], upper: Sequence[float]) -> "Polyhedron":
        lower, upper = np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
        n = lower.size
        return cls(np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([upper, -lower]), np.zeros((0, n)), [])

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def n_ineq(self) -> int:
        return self.A.shape[0]

    @property
    def n_eq(self) -> int:
        return self.C.shape[0]

    def residual(self, z: np.ndarray) -> float:
        parts = [0.0]
        if self.n_ineq:
            parts.append(float(np.maximum(self.A @ z - self.b, 0.0).max()))
        if self.n_eq:
            parts.append(float(np.abs(self.C @ z - self.d).max()))
        return max(parts)

    def projectors(self) -> List[Callable[[np.ndarray], np.ndarray]]:
        """Projections onto each halfspace and onto the affine equality subspace"""
        projs = []
        if self.n_eq:
            C_pinv = linalg.pinv(self.C)
            projs.append(lambda z: z - C_pinv @ (self.C @ z - self.d))
        for a, b in zip(self.A, self.b):
            norm_sq = float(a @ a)
            if norm_sq == 0.0:
                if b < 0:
                    raise InfeasibleConstraintException("Zero row with negative right-hand side", residual=-float(b))
                continue
            projs.append(lambda z, a=a, b=b, n=norm_sq: z - a * max(a @ z - b, 0.0) / n)
        return projs

@dataclass
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).ravel()
        if not self.radius > 0:
            raise ConfigurationException("Ball radius must be positive", field="radius", value=self.radius)
        self.radius = float(self.radius)

    @property
    def dim(self) -> int:
        return self.center.size

    def project(self, y: np.ndarray) -> np.ndarray:
        offset = y - self.center
        dist = float(np.linalg.norm(offset))
        if dist <= self.radius:
            return y.copy()
        return self.center + offset * (self.radius / dist)

    def residual(self, z: np.ndarray) -> float:
        return max(float(np.linalg.norm(z - self.center)) - self.radius, 0.0)

    def is_tight(self, z: np.ndarray) -> bool:
        return abs(float(np.linalg.norm(z - self.center)) - self.radius) <= ACTIVE_TOL * max(1.0, self.radius)

@dataclass
class Intersection:
    sets: List[Union[Polyhedron, Ball]]

    def __post_init__(self):
        if not self.sets:
            raise ConfigurationException("Intersection needs at least one member set", field="sets")
        dims = {s.dim for s in self.sets}
        if len(dims) > 1:
            raise ShapeMismatchException("intersection", [(d,) for d in sorted(dims)])

    @property
    def dim(self) -> int:
        return self.sets[0].dim

    def residual(self, z: np.ndarray) -> float:
        return max(s.residual(z) for s in self.sets)

    def projectors(self) -> List[Callable[[np.ndarray], np.ndarray]]:
        projs = []
        for s in self.sets:
            projs.extend(s.projectors() if isinstance(s, Polyhedron) else [s.project])
        return projs

ConvexSet = Union[Polyhedron, Ball, Intersection]

@dataclass
class CvxProjectionResult:
    y: np.ndarray
    z: np.ndarray
    active_set: List
    multipliers: np.ndarray
    iterations: int
    converged: bool = True
    degenerate: bool = False
    jvp: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)

@dataclass
class OracleSolution:
    z: np.ndarray
    active_set: List[int]
    multipliers: np.ndarray

def _solve_eqp(y: np.ndarray, N: np.ndarray, r: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """min ||z - y|| s.t. N z = r: z = y - N^T mu with (N N^T) mu = N y - r"""
    if N.shape[0] == 0:
        return y.copy(), np.zeros(0)
    mu = linalg.lstsq(N @ N.T, N @ y - r)[0]
    return y - N.T @ mu, mu

def _feasibility_tol(b: np.ndarray) -> np.ndarray:
    return 1e-9 * (1.0 + np.abs(b))

def kkt_enumeration_oracle(y, A, b, C=None, d=None, max_ineq: Optional[int] = None) -> OracleSolution:
    """Exhaustive KKT search over inequality subsets, by size then index order"""
    from .constraints import ConstraintEval

    y = np.asarray(y, dtype=np.float64).ravel()
    ev = ConstraintEval.create(y.size, A, b, C, d)
    max_ineq = settings.oracle_max_ineq if max_ineq is None else max_ineq
    if ev.n_ineq > max_ineq:
        raise ConfigurationException(
            f"Enumeration oracle handles at most {max_ineq} inequalities, got {ev.n_ineq}",
            field="n_ineq",
            value=ev.n_ineq
        )

    ineq_tol = _feasibility_tol(ev.b)
    eq_tol = _feasibility_tol(ev.d)
    for size in range(ev.n_ineq + 1):
        for subset in combinations(range(ev.n_ineq), size):
            rows = list(subset)
            N = np.vstack([ev.C, ev.A[rows]])
            r = np.concatenate([ev.d, ev.b[rows]])
            z, mu = _solve_eqp(y, N, r)
            if N.shape[0] and np.any(np.abs(N @ z - r) > _feasibility_tol(r)):
                continue
            if ev.n_ineq and np.any(ev.A @ z - ev.b > ineq_tol):
                continue
            if ev.n_eq and np.any(np.abs(ev.C @ z - ev.d) > eq_tol):
                continue
            lam = mu[ev.n_eq:]
            if lam.size and lam.min() < -MULTIPLIER_TOL:
                continue
            multipliers = np.zeros(ev.n_ineq)
            multipliers[rows] = lam
            return OracleSolution(z, rows, multipliers)

    raise InfeasibleConstraintException("No KKT point found; constraint set is empty")

def dykstra(y, projectors: Sequence[Callable[[np.ndarray], np.ndarray]], tol: Optional[float] = None,
            max_iter: Optional[int] = None, raise_on_failure: bool = True) -> Tuple[np.ndarray, int, float]:
    """Dykstra's alternating projections; stops when successive iterates move less than tol"""
    tol = settings.dykstra_tol if tol is None else tol
    max_iter = settings.dykstra_max_iter if max_iter is None else max_iter
    x = np.asarray(y, dtype=np.float64).ravel().copy()
    if not projectors:
        return x, 0, 0.0

    increments = [np.zeros_like(x) for _ in projectors]
    change = np.inf
    for it in range(1, max_iter + 1):
        x_prev = x
        for k, proj in enumerate(projectors):
            shifted = x + increments[k]
            x = proj(shifted)
            increments[k] = shifted - x
        change = float(np.linalg.norm(x - x_prev))
        if change < tol:
            return x, it, change

    if raise_on_failure:
        solver_logger.log_non_convergence("dykstra", max_iter, change)
        raise SolverConvergenceException("dykstra", max_iter, change, best_iterate=x)
    return x, max_iter, change

def _ensure_nonempty(poly: Polyhedron):
    """Checked once per set instance"""
    if poly._nonempty:
        return
    if poly.n_ineq <= settings.oracle_max_ineq:
        kkt_enumeration_oracle(np.zeros(poly.dim), poly.A, poly.b, poly.C, poly.d)
    else:
        try:
            z, _, _ = dykstra(np.zeros(poly.dim), poly.projectors())
        except SolverConvergenceException as e:
            raise InfeasibleConstraintException("Dykstra found no feasible point", residual=e.residual)
        if poly.residual(z) > 1e-6:
            raise InfeasibleConstraintException("Dykstra found no feasible point", residual=poly.residual(z))
    poly._nonempty = True

def _independent(N: np.ndarray, row: np.ndarray) -> bool:
    if N.shape[0] == 0:
        return float(np.linalg.norm(row)) > 0.0
    coef = linalg.lstsq(N.T, row)[0]
    return float(np.linalg.norm(N.T @ coef - row)) > 1e-9 * max(1.0, float(np.linalg.norm(row)))

def _feasible_start(poly: Polyhedron) -> np.ndarray:
    """Phase one: a vertex of the polyhedron from a zero-objective LP"""
    res = optimize.linprog(
        np.zeros(poly.dim),
        A_ub=poly.A if poly.n_ineq else None,
        b_ub=poly.b if poly.n_ineq else None,
        A_eq=poly.C if poly.n_eq else None,
        b_eq=poly.d if poly.n_eq else None,
        bounds=(None, None),
        method="highs",
        options={"primal_feasibility_tolerance": PHASE_ONE_TOL}
    )
    if res.status == 2:
        raise InfeasibleConstraintException("Phase one LP is infeasible")
    if res.x is None:
        solver_logger.log_fallback("active_set", f"phase one LP failed ({res.message}), starting from Dykstra point")
        z, _, _ = dykstra(np.zeros(poly.dim), poly.projectors(), raise_on_failure=False)
        return z
    return np.asarray(res.x, dtype=np.float64)

def _ratio_test(poly: Polyhedron, z: np.ndarray, step: np.ndarray, working: List[int],
                N: np.ndarray) -> Tuple[float, Optional[int]]:
    """Longest feasible step along `step`; ties go to the lowest row index"""
    alpha, blocking = 1.0, None
    step_norm = float(np.linalg.norm(step))
    Ap = poly.A @ step
    for i in range(poly.n_ineq):
        if i in working or Ap[i] <= 1e-12 * float(np.linalg.norm(poly.A[i])) * step_norm:
            continue
        ratio = max(poly.b[i] - poly.A[i] @ z, 0.0) / Ap[i]
        if ratio < alpha - 1e-14 * max(1.0, alpha) and _independent(N, poly.A[i]):
            alpha, blocking = ratio, i
    return alpha, blocking

def _project_polyhedron(y: np.ndarray, poly: Polyhedron, max_iter: int) -> CvxProjectionResult:
    _ensure_nonempty(poly)
    z, _ = _solve_eqp(y, poly.C, poly.d)
    if poly.n_ineq == 0 or poly.residual(z) <= PHASE_ONE_TOL:
        return CvxProjectionResult(y, z, [], np.zeros(poly.n_ineq), 0)

    # Primal active set from a feasible vertex; Bland's rule for adding and dropping rows
    z = _feasible_start(poly)
    working: List[int] = []
    max_iter = max(max_iter, 10 * (poly.n_ineq + poly.dim))
    lam = np.zeros(0)
    for it in range(1, max_iter + 1):
        N = np.vstack([poly.C, poly.A[working]])
        r = np.concatenate([poly.d, poly.b[working]])
        z_eqp, mu = _solve_eqp(y, N, r)
        step = z_eqp - z
        if float(np.linalg.norm(step)) > 1e-12 * (1.0 + float(np.linalg.norm(y)) + float(np.linalg.norm(z))):
            alpha, blocking = _ratio_test(poly, z, step, working, N)
            if blocking is not None:
                z = z + alpha * step
                working.append(blocking)
                continue
        z = z_eqp
        lam = mu[poly.n_eq:]
        scale = 1.0 + float(np.abs(lam).max()) if lam.size else 1.0
        negative = [working[k] for k in range(len(working)) if lam[k] < -MULTIPLIER_TOL * scale]
        if not negative:
            break
        k = working.index(min(negative))
        working.pop(k)
        lam = np.delete(lam, k)
    else:
        residual = poly.residual(z)
        solver_logger.log_non_convergence("active_set", max_iter, residual)
        raise SolverConvergenceException("active_set", max_iter, residual, best_iterate=z)

    if poly.residual(z) > POLISH_TOL * (1.0 + float(np.abs(poly.b).max())):
        # Only reachable through rounding in the working-set solves
        solver_logger.log_fallback("active_set", "final point infeasible, polishing on the tight rows",
                                   residual=poly.residual(z))
        z, working, lam = _polish(y, poly, z)

    multipliers = np.zeros(poly.n_ineq)
    multipliers[working] = np.maximum(lam, 0.0)
    order = np.argsort(working, kind="stable")
    return CvxProjectionResult(y, z, [working[k] for k in order], multipliers, it)

def _polish(y: np.ndarray, poly: Polyhedron, z: np.ndarray) -> Tuple[np.ndarray, List[int], np.ndarray]:
    """Equality QP on the rows tight or violated at z; the enumeration oracle if its KKT signs fail"""
    tight = [i for i in range(poly.n_ineq) if poly.A[i] @ z - poly.b[i] > -ACTIVE_TOL * (1.0 + abs(poly.b[i]))]
    rows: List[int] = []
    N = poly.C.copy()
    for i in tight:
        if _independent(N, poly.A[i]):
            rows.append(i)
            N = np.vstack([N, poly.A[i]])
    r = np.concatenate([poly.d, poly.b[rows]])
    z_new, mu = _solve_eqp(y, N, r)
    lam = mu[poly.n_eq:]
    if poly.residual(z_new) <= POLISH_TOL * (1.0 + float(np.abs(poly.b).max())) and \
            (lam.size == 0 or lam.min() >= -MULTIPLIER_TOL * (1.0 + float(np.abs(lam).max()))):
        return z_new, rows, lam
    if poly.n_ineq > settings.oracle_max_ineq:
        raise SolverConvergenceException("active_set", 0, poly.residual(z_new), best_iterate=z_new)
    sol = kkt_enumeration_oracle(y, poly.A, poly.b, poly.C, poly.d)
    return sol.z, list(sol.active_set), sol.multipliers[sol.active_set]

def _tight_constraints(z: np.ndarray, s: ConvexSet) -> List[Tuple[int, str, int]]:
    tight = []
    members = s.sets if isinstance(s, Intersection) else [s]
    for k, member in enumerate(members):
        if isinstance(member, Ball):
            if member.is_tight(z):
                tight.append((k, "ball", 0))
            continue
        for i in range(member.n_ineq):
            if member.A[i] @ z - member.b[i] > -ACTIVE_TOL * (1.0 + abs(member.b[i])):
                tight.append((k, "ineq", i))
        tight.extend((k, "eq", j) for j in range(member.n_eq))
    return tight

@profile_operation("project_cvx")
def project_cvx(y, convex_set: ConvexSet, tol: Optional[float] = None,
                max_iter: Optional[int] = None) -> CvxProjectionResult:
    """Euclidean projection of y onto a convex set"""
    tol = settings.dykstra_tol if tol is None else tol
    y = np.asarray(getattr(y, "data", y), dtype=np.float64).ravel()
    if y.size != convex_set.dim:
        raise ShapeMismatchException("project_cvx", [(convex_set.dim,), y.shape])

    if isinstance(convex_set, Polyhedron):
        result = _project_polyhedron(y, convex_set, settings.active_set_max_iter if max_iter is None else max_iter)
    elif isinstance(convex_set, Ball):
        z = convex_set.project(y)
        active = [0] if np.linalg.norm(y - convex_set.center) > convex_set.radius else []
        result = CvxProjectionResult(y, z, active, np.zeros(len(active)), 0)
    else:
        for member in convex_set.sets:
            if isinstance(member, Polyhedron):
                _ensure_nonempty(member)
        try:
            z, iterations, _ = dykstra(y, convex_set.projectors(), tol=tol,
                                       max_iter=settings.dykstra_max_iter if max_iter is None else max_iter)
        except SolverConvergenceException as e:
            if e.best_iterate is not None and convex_set.residual(e.best_iterate) > 1e-6:
                raise InfeasibleConstraintException("Member sets do not intersect",
                                                    residual=convex_set.residual(e.best_iterate))
            raise
        if convex_set.residual(z) > 1e-6:
            # Dykstra settles on nearest points of disjoint sets without a feasible limit
            raise InfeasibleConstraintException("Member sets do not intersect", residual=convex_set.residual(z))
        result = CvxProjectionResult(y, z, _tight_constraints(z, convex_set), np.zeros(0), iterations)

    result.jvp = lambda g: project_cvx_backward(result, convex_set, g)
    return result

def _tangent_projection(g: np.ndarray, N: np.ndarray, result: CvxProjectionResult) -> np.ndarray:
    """(I - N^T (N N^T)^-1 N) g, least squares when N N^T is singular"""
    if N.shape[0] == 0:
        return g.copy()
    gram = N @ N.T
    try:
        factor = linalg.cho_factor(gram)
        s = linalg.svdvals(N)
        if s.min() <= 1e-10 * s.max():
            raise linalg.LinAlgError("near-singular active set")
        coef = linalg.cho_solve(factor, N @ g)
    except linalg.LinAlgError:
        if not result.degenerate:
            solver_logger.log_fallback("project_cvx_backward", "degenerate active set, using least squares",
                                       n_active=int(N.shape[0]))
        result.degenerate = True
        coef = linalg.lstsq(gram, N @ g)[0]
    return g - N.T @ coef

def project_cvx_backward(result: CvxProjectionResult, convex_set: ConvexSet, grad_z) -> np.ndarray:
    """dL/dy from dL/dz; the projection Jacobian is symmetric"""
    g = np.asarray(grad_z, dtype=np.float64).ravel()
    if g.size != result.z.size:
        raise ShapeMismatchException("project_cvx_backward", [result.z.shape, g.shape])

    if isinstance(convex_set, Polyhedron):
        N = np.vstack([convex_set.C, convex_set.A[result.active_set]])
        return _tangent_projection(g, N, result)

    if isinstance(convex_set, Ball):
        if not result.active_set:
            return g.copy()
        offset = result.y - convex_set.center
        dist = float(np.linalg.norm(offset))
        u = offset / dist
        return (convex_set.radius / dist) * (g - u * (u @ g))

    tight = _tight_constraints(result.z, convex_set)
    if len(tight) == 1 and tight[0][1] == "ball":
        ball = convex_set.sets[tight[0][0]]
        offset = result.y - ball.center
        dist = float(np.linalg.norm(offset))
        u = offset / dist
        return (ball.radius / dist) * (g - u * (u @ g))
    rows = []
    for k, kind, i in tight:
        member = convex_set.sets[k]
        if kind == "ball":
            rows.append((result.z - member.center) / member.radius)
        elif kind == "ineq":
            rows.append(member.A[i])
        else:
            rows.append(member.C[i])
    N = np.array(rows).reshape(len(rows), result.z.size)
    return _tangent_projection(g, N, result)

class HardNetCvxLayer:
    """Optimization-based projection of full network outputs onto a polyhedral feasible set"""

    def __init__(self, spec):
        self.spec = spec

    def project_batch(self, Y: np.ndarray, xs: Sequence) -> Tuple[np.ndarray, List[CvxProjectionResult]]:
        results = [
            project_cvx(Y[:, j], Polyhedron.from_eval(self.spec.evaluate(x)))
            for j, x in enumerate(xs)
        ]
        Z = np.stack([r.z for r in results], axis=1) if results else np.zeros_like(Y)
        return Z, results

    def apply(self, tape: Tape, y_node: int, xs: Sequence, enabled: bool = True) -> int:
        """Record the projection of every column of y_node; identity when disabled"""
        if not enabled:
            return y_node
        Z, results = self.project_batch(tape.value(y_node), xs)

        def vjp(g: np.ndarray):
            return (np.stack([r.jvp(g[:, j]) for j, r in enumerate(results)], axis=1),)

        return tape.custom((y_node,), Z, vjp, label="hardnet_cvx")
