"""
Fully connected ReLU networks, SGD/Adam optimizers and the parameter checkpoint codec.

Checkpoint layout (all integers little-endian):

    bytes 0..7   magic b"HNMLP001"
    bytes 8..11  uint32 header length H
    next H bytes orjson header {"version", "layer_sizes", "rng_seed", "dtype", "order"}
    payload      float64 "<f8" values: for each layer, W (out x in, row-major) then b (out)
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union
import logging
import struct

import numpy as np
import orjson

from config import settings

from .autodiff import Tape, as_matrix
from .exceptions import CheckpointFormatException, ConfigurationException, ShapeMismatchException

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"HNMLP001"
CHECKPOINT_VERSION = 1

@dataclass
class MlpParams:
    layer_sizes: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    rng_seed: int

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "MlpParams":
        return MlpParams(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.rng_seed
        )

    def tensors(self) -> List[np.ndarray]:
        return [*self.weights, *self.biases]

@dataclass
class MlpGrads:
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def tensors(self) -> List[np.ndarray]:
        return [*self.weights, *self.biases]

    def scaled(self, factor: float) -> "MlpGrads":
        return MlpGrads([factor * w for w in self.weights], [factor * b for b in self.biases])

@dataclass
class OptimizerState:
    kind: str
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)

def mlp_new(layer_sizes: Sequence[int], seed: int) -> MlpParams:
    """He-initialised weights (out x in), zero biases; reproducible by seed"""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise ConfigurationException("An MLP needs at least an input and an output layer",
                                     field="layer_sizes", value=sizes)
    if any(s < 1 for s in sizes):
        raise ConfigurationException("Layer widths must be at least 1", field="layer_sizes", value=sizes)

    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    logger.debug(f"Initialised MLP {sizes} with seed {seed}")
    return MlpParams(sizes, weights, biases, int(seed))

def _param_names(prefix: str, i: int) -> Tuple[str, str]:
    return f"{prefix}.W{i}", f"{prefix}.b{i}"

def register_params(params: MlpParams, tape: Tape, prefix: str = "mlp") -> List[Tuple[int, int]]:
    """Add parameter leaves to the tape once; later calls reuse the same nodes"""
    ids = []
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        w_name, b_name = _param_names(prefix, i)
        if w_name not in tape.names:
            tape.leaf(w, name=w_name)
            tape.leaf(b.reshape(-1, 1), name=b_name)
        ids.append((tape.names[w_name], tape.names[b_name]))
    return ids

def mlp_forward(params: MlpParams, x: Union[int, np.ndarray], tape: Tape, prefix: str = "mlp") -> int:
    """Affine/ReLU layers with an affine output layer; x is a node id or an n_in x B array"""
    x_node = x if isinstance(x, (int, np.integer)) else tape.leaf(x)
    rows, batch = tape.shape(x_node)
    if rows != params.layer_sizes[0]:
        raise ShapeMismatchException("mlp_forward", [(params.layer_sizes[0], batch), (rows, batch)])

    ones = tape.leaf(np.ones((1, batch)))
    h = x_node
    layer_ids = register_params(params, tape, prefix)
    for i, (w_id, b_id) in enumerate(layer_ids):
        h = tape.add(tape.matmul(w_id, h), tape.matmul(b_id, ones))
        if i < len(layer_ids) - 1:
            h = tape.relu(h)
    return h

def mlp_predict(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Forward pass without a tape"""
    h = as_matrix(x)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = w @ h + b[:, None]
        if i < params.n_layers - 1:
            h = np.maximum(h, 0.0)
    return h

def mlp_gradients(params: MlpParams, tape: Tape, grads: dict, prefix: str = "mlp") -> MlpGrads:
    """Collect parameter gradients from a backward() result"""
    gw, gb = [], []
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        w_name, b_name = _param_names(prefix, i)
        if w_name in tape.names:
            gw.append(grads[tape.names[w_name]])
            gb.append(grads[tape.names[b_name]].ravel())
        else:
            gw.append(np.zeros_like(w))
            gb.append(np.zeros_like(b))
    return MlpGrads(gw, gb)

def optimizer_new(params: MlpParams, kind: str = "adam", lr: Optional[float] = None) -> OptimizerState:
    if kind not in ("sgd", "adam"):
        raise ConfigurationException(f"Unknown optimizer '{kind}'", field="optimizer", value=kind)
    lr = settings.learning_rate if lr is None else lr
    if lr <= 0:
        raise ConfigurationException("Learning rate must be positive", field="lr", value=lr)
    return OptimizerState(
        kind=kind,
        lr=float(lr),
        m=[np.zeros_like(p) for p in params.tensors()],
        v=[np.zeros_like(p) for p in params.tensors()]
    )

def optimizer_step(params: MlpParams, grads: MlpGrads, state: OptimizerState) -> Tuple[MlpParams, OptimizerState]:
    """One SGD or bias-corrected Adam update; returns new params and state"""
    p_list, g_list = params.tensors(), grads.tensors()
    for p, g in zip(p_list, g_list):
        if p.shape != np.shape(g):
            raise ShapeMismatchException("optimizer_step", [p.shape, np.shape(g)])
    if len(p_list) != len(g_list):
        raise ShapeMismatchException("optimizer_step", [(len(p_list),), (len(g_list),)],
                                     detail="Gradient list does not mirror parameter list")

    t = state.step + 1
    if state.kind == "sgd":
        new_p = [p - state.lr * g for p, g in zip(p_list, g_list)]
        new_m, new_v = state.m, state.v
    else:
        new_m = [state.beta1 * m + (1 - state.beta1) * g for m, g in zip(state.m, g_list)]
        new_v = [state.beta2 * v + (1 - state.beta2) * g * g for v, g in zip(state.v, g_list)]
        c1 = 1 - state.beta1 ** t
        c2 = 1 - state.beta2 ** t
        new_p = [
            p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
            for p, m, v in zip(p_list, new_m, new_v)
        ]

    n = params.n_layers
    new_params = MlpParams(list(params.layer_sizes), new_p[:n], new_p[n:], params.rng_seed)
    new_state = OptimizerState(state.kind, state.lr, state.beta1, state.beta2, state.eps, t, new_m, new_v)
    return new_params, new_state

def save_checkpoint(params: MlpParams, path: str):
    header = orjson.dumps({
        "version": CHECKPOINT_VERSION,
        "layer_sizes": params.layer_sizes,
        "rng_seed": params.rng_seed,
        "dtype": "<f8",
        "order": "C"
    })
    payload = b"".join(
        np.ascontiguousarray(w, dtype="<f8").tobytes() + np.ascontiguousarray(b, dtype="<f8").tobytes()
        for w, b in zip(params.weights, params.biases)
    )
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(payload)
    logger.info(f"Saved checkpoint with {params.n_params} parameters to {path}")

def load_checkpoint(path: str) -> MlpParams:
    with open(path, "rb") as fh:
        raw = fh.read()

    if raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointFormatException("Bad magic; not an MLP checkpoint", path=path)
    if len(raw) < 12:
        raise CheckpointFormatException("Truncated header length", path=path)
    (header_len,) = struct.unpack("<I", raw[8:12])
    try:
        header = orjson.loads(raw[12:12 + header_len])
    except orjson.JSONDecodeError as e:
        raise CheckpointFormatException(f"Unreadable header: {e}", path=path)
    if not isinstance(header, dict) or header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointFormatException(f"Unsupported checkpoint header {header!r:.80}", path=path)

    try:
        sizes = [int(s) for s in header["layer_sizes"]]
    except (KeyError, TypeError, ValueError):
        raise CheckpointFormatException("Header has no valid layer_sizes", path=path)
    payload = raw[12 + header_len:]
    expected = sum(o * i + o for i, o in zip(sizes[:-1], sizes[1:]))
    if len(payload) % 8 or len(payload) // 8 != expected:
        raise CheckpointFormatException(
            f"Payload has {len(payload)} bytes, layer sizes {sizes} need {8 * expected}", path=path
        )
    values = np.frombuffer(payload, dtype="<f8")

    weights, biases, offset = [], [], 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(values[offset:offset + fan_out * fan_in].reshape(fan_out, fan_in).astype(np.float64))
        offset += fan_out * fan_in
        biases.append(values[offset:offset + fan_out].astype(np.float64))
        offset += fan_out
    return MlpParams(sizes, weights, biases, int(header.get("rng_seed", 0)))
