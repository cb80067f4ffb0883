"""
Reverse-mode automatic differentiation over dense 2-D float64 arrays.

A Tape records nodes in insertion order; every node only references earlier
nodes, so the reverse of insertion order is a valid topological order for the
backward sweep. Column vectors are n x 1 matrices and a batch of samples is an
n x B matrix with one sample per column.
"""
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union
import logging

import numpy as np

from .exceptions import ConfigurationException, NonFiniteException, ShapeMismatchException

logger = logging.getLogger(__name__)

ArrayLike = Union["Tensor", np.ndarray, Sequence[float], float]

class Tensor:
    """Immutable-by-convention dense real matrix with finite entries"""

    __slots__ = ("data",)

    def __init__(self, data: ArrayLike):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        elif arr.ndim != 2:
            raise ShapeMismatchException("tensor", [arr.shape], detail=f"Tensors are 1-D or 2-D, got {arr.ndim}-D")
        bad = ~np.isfinite(arr)
        if bad.any():
            raise NonFiniteException("tensor", count=int(bad.sum()))
        self.data = arr

    @classmethod
    def zeros(cls, rows: int, cols: int = 1) -> "Tensor":
        return cls(np.zeros((rows, cols)))

    @classmethod
    def ones(cls, rows: int, cols: int = 1) -> "Tensor":
        return cls(np.ones((rows, cols)))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def ravel(self) -> np.ndarray:
        return self.data.ravel().copy()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, data={self.data.tolist()})"

def as_matrix(value: ArrayLike) -> np.ndarray:
    """Coerce to a finite 2-D float64 array (column for 1-D input)"""
    return Tensor(value).data

@dataclass
class Node:
    kind: str
    inputs: Tuple[int, ...]
    value: np.ndarray
    attrs: Dict[str, Any] = field(default_factory=dict)
    name: Optional[str] = None

# --- forward rules ---

def _require_same(op: str, a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ShapeMismatchException(op, [a.shape, b.shape])

def _fwd_matmul(vals, attrs):
    a, b = vals
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchException("matmul", [a.shape, b.shape])
    return a @ b

def _fwd_binary(op: str, fn: Callable):
    def forward(vals, attrs):
        a, b = vals
        _require_same(op, a, b)
        return fn(a, b)
    return forward

def _fwd_sum(vals, attrs):
    (a,) = vals
    axis = attrs.get("axis")
    if axis is None:
        return np.array([[a.sum()]])
    return a.sum(axis=axis, keepdims=True)

def _fwd_concat(vals, attrs):
    axis = attrs["axis"]
    other = 1 - axis
    if len({v.shape[other] for v in vals}) > 1:
        raise ShapeMismatchException("concat", [v.shape for v in vals])
    return np.concatenate(vals, axis=axis)

def _fwd_slice(vals, attrs):
    (a,) = vals
    rows, cols = _slice_indices(a.shape, attrs)
    return a[np.ix_(rows, cols)]

def _fwd_custom(vals, attrs):
    return np.array(attrs["value"], dtype=np.float64, ndmin=2)

_FORWARD: Dict[str, Callable] = {
    "matmul": _fwd_matmul,
    "add": _fwd_binary("add", lambda a, b: a + b),
    "sub": _fwd_binary("sub", lambda a, b: a - b),
    "mul": _fwd_binary("mul", lambda a, b: a * b),
    "scale": lambda vals, attrs: attrs["factor"] * vals[0],
    "relu": lambda vals, attrs: np.maximum(vals[0], 0.0),
    "sin": lambda vals, attrs: np.sin(vals[0]),
    "cos": lambda vals, attrs: np.cos(vals[0]),
    "square": lambda vals, attrs: vals[0] * vals[0],
    "sum": _fwd_sum,
    "concat": _fwd_concat,
    "slice": _fwd_slice,
    "custom": _fwd_custom,
}

_ARITY = {
    "matmul": 2, "add": 2, "sub": 2, "mul": 2,
    "scale": 1, "relu": 1, "sin": 1, "cos": 1, "square": 1, "sum": 1, "slice": 1,
}

# --- backward rules: (upstream grad, input values, output value, attrs) -> input grads ---

def _bwd_sum(g, vals, out, attrs):
    (a,) = vals
    if attrs.get("axis") is None:
        return (np.full(a.shape, g[0, 0]),)
    return (np.broadcast_to(g, a.shape).copy(),)

def _bwd_concat(g, vals, out, attrs):
    axis = attrs["axis"]
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]
    return tuple(np.split(g, bounds, axis=axis))

def _bwd_slice(g, vals, out, attrs):
    (a,) = vals
    rows, cols = _slice_indices(a.shape, attrs)
    grad = np.zeros_like(a)
    np.add.at(grad, np.ix_(rows, cols), g)
    return (grad,)

def _bwd_custom(g, vals, out, attrs):
    vjp = attrs.get("vjp")
    if vjp is None:
        return tuple(None for _ in vals)
    grads = tuple(vjp(g))
    if len(grads) != len(vals):
        raise ShapeMismatchException("custom", [v.shape for v in vals],
                                     detail=f"custom VJP returned {len(grads)} gradients for {len(vals)} inputs")
    for v, gv in zip(vals, grads):
        if gv is not None and np.shape(gv) != v.shape:
            raise ShapeMismatchException("custom", [v.shape, np.shape(gv)])
    return grads

_BACKWARD: Dict[str, Callable] = {
    "matmul": lambda g, vals, out, attrs: (g @ vals[1].T, vals[0].T @ g),
    "add": lambda g, vals, out, attrs: (g, g),
    "sub": lambda g, vals, out, attrs: (g, -g),
    "mul": lambda g, vals, out, attrs: (g * vals[1], g * vals[0]),
    "scale": lambda g, vals, out, attrs: (attrs["factor"] * g,),
    # subgradient 0 at the kink
    "relu": lambda g, vals, out, attrs: (g * (vals[0] > 0.0),),
    "sin": lambda g, vals, out, attrs: (g * np.cos(vals[0]),),
    "cos": lambda g, vals, out, attrs: (-g * np.sin(vals[0]),),
    "square": lambda g, vals, out, attrs: (2.0 * vals[0] * g,),
    "sum": _bwd_sum,
    "concat": _bwd_concat,
    "slice": _bwd_slice,
    "custom": _bwd_custom,
}

OP_KINDS = tuple(_FORWARD)

def _slice_indices(shape, attrs):
    rows = np.arange(shape[0])[attrs.get("rows", slice(None))]
    cols = np.arange(shape[1])[attrs.get("cols", slice(None))]
    return np.atleast_1d(rows), np.atleast_1d(cols)

class Tape:
    """Ordered record of a computation for one forward/backward pass"""

    def __init__(self):
        self.nodes: List[Node] = []
        self.outputs: List[int] = []
        self.names: Dict[str, int] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf(self, value: ArrayLike, name: Optional[str] = None) -> int:
        """Add an input node; leaves receive gradients in backward()"""
        node = Node("leaf", (), as_matrix(value), name=name)
        self.nodes.append(node)
        node_id = len(self.nodes) - 1
        if name is not None:
            self.names[name] = node_id
        return node_id

    def value(self, node_id: int) -> np.ndarray:
        return self.nodes[node_id].value

    def shape(self, node_id: int) -> Tuple[int, int]:
        return self.nodes[node_id].value.shape

    def record(self, kind: str, inputs: Sequence[int], **attrs) -> int:
        """Evaluate op `kind` on earlier nodes and append the result"""
        if kind not in _FORWARD:
            raise ConfigurationException(f"Unknown op kind '{kind}'", field="kind", value=kind)
        inputs = tuple(int(i) for i in inputs)
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise ConfigurationException(f"Op '{kind}' references unknown node {i}", field="inputs", value=i)
        arity = _ARITY.get(kind)
        if arity is not None and len(inputs) != arity:
            raise ShapeMismatchException(kind, [self.nodes[i].value.shape for i in inputs],
                                         detail=f"Op '{kind}' takes {arity} inputs, got {len(inputs)}")
        vals = [self.nodes[i].value for i in inputs]
        out = _FORWARD[kind](vals, attrs)
        bad = ~np.isfinite(out)
        if bad.any():
            raise NonFiniteException(f"output of '{kind}'", count=int(bad.sum()))
        self.nodes.append(Node(kind, inputs, out, attrs))
        return len(self.nodes) - 1

    def mark_output(self, node_id: int) -> int:
        self.outputs.append(node_id)
        return node_id

    # Convenience wrappers around record()

    def matmul(self, a: int, b: int) -> int:
        return self.record("matmul", (a, b))

    def add(self, a: int, b: int) -> int:
        return self.record("add", (a, b))

    def sub(self, a: int, b: int) -> int:
        return self.record("sub", (a, b))

    def mul(self, a: int, b: int) -> int:
        return self.record("mul", (a, b))

    def scale(self, a: int, factor: float) -> int:
        return self.record("scale", (a,), factor=float(factor))

    def relu(self, a: int) -> int:
        return self.record("relu", (a,))

    def sin(self, a: int) -> int:
        return self.record("sin", (a,))

    def cos(self, a: int) -> int:
        return self.record("cos", (a,))

    def square(self, a: int) -> int:
        return self.record("square", (a,))

    def sum(self, a: int, axis: Optional[int] = None) -> int:
        return self.record("sum", (a,), axis=axis)

    def concat(self, parts: Sequence[int], axis: int = 0) -> int:
        return self.record("concat", tuple(parts), axis=axis)

    def slice(self, a: int, rows=slice(None), cols=slice(None)) -> int:
        if isinstance(rows, (int, np.integer)):
            rows = slice(int(rows), int(rows) + 1)
        if isinstance(cols, (int, np.integer)):
            cols = slice(int(cols), int(cols) + 1)
        return self.record("slice", (a,), rows=rows, cols=cols)

    def custom(self, inputs: Sequence[int], value: np.ndarray,
               vjp: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]], label: str = "custom") -> int:
        """Record a precomputed value with a caller-supplied vector-Jacobian product"""
        return self.record("custom", inputs, value=value, vjp=vjp, label=label)

def backward(tape: Tape, seed: ArrayLike, output: Optional[int] = None) -> Dict[int, np.ndarray]:
    """Propagate `seed` from `output` back to every leaf; unreached leaves get zeros"""
    if not tape.nodes:
        raise ConfigurationException("Cannot run backward on an empty tape")
    if output is None:
        output = tape.outputs[-1] if tape.outputs else len(tape.nodes) - 1
    seed = as_matrix(seed)
    out_shape = tape.nodes[output].value.shape
    if seed.shape != out_shape:
        raise ShapeMismatchException("backward", [out_shape, seed.shape],
                                     detail=f"Seed shape {seed.shape} does not match output shape {out_shape}")

    grads: List[Optional[np.ndarray]] = [None] * (output + 1)
    grads[output] = seed.copy()
    for i in range(output, -1, -1):
        g = grads[i]
        node = tape.nodes[i]
        if g is None or node.kind == "leaf":
            continue
        vals = [tape.nodes[j].value for j in node.inputs]
        for j, gj in zip(node.inputs, _BACKWARD[node.kind](g, vals, node.value, node.attrs)):
            if gj is None:
                continue
            grads[j] = gj if grads[j] is None else grads[j] + gj

    return {
        i: (grads[i] if i <= output and grads[i] is not None else np.zeros_like(node.value))
        for i, node in enumerate(tape.nodes)
        if node.kind == "leaf"
    }

def value_and_grad(fn: Callable[[Tape, int], int], x: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
    """Value of a scalar tape program at x and its gradient w.r.t. x"""
    tape = Tape()
    x_node = tape.leaf(x, name="x")
    out = tape.mark_output(fn(tape, x_node))
    value = tape.value(out)
    grads = backward(tape, np.ones_like(value), out)
    return value.copy(), grads[x_node]

def finite_diff_jacobian(f: Callable[[Tensor], ArrayLike], x: ArrayLike, h: float = 1e-5) -> Tensor:
    """Central-difference Jacobian of f at x, shape (out size, in size) over flattened entries"""
    if h <= 0:
        raise ConfigurationException("Finite-difference step must be positive", field="h", value=h)
    x = Tensor(x)
    x0 = x.data.ravel()
    y0 = as_matrix(f(x)).ravel()
    jac = np.zeros((y0.size, x0.size))
    for i in range(x0.size):
        step = np.zeros_like(x0)
        step[i] = h
        fp = as_matrix(f(Tensor((x0 + step).reshape(x.shape)))).ravel()
        fm = as_matrix(f(Tensor((x0 - step).reshape(x.shape)))).ravel()
        jac[:, i] = (fp - fm) / (2.0 * h)
    return Tensor(jac)
