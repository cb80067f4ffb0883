from typing import Optional, Sequence
import logging

import numpy as np

from config import settings
from ..autodiff import Tape
from ..baselines import Dc3Config, Dc3Layer, SoftPenaltyConfig, soft_penalty_node, project_at_inference
from ..exceptions import ConfigurationException
from ..hardnet_aff import HardNetAffLayer
from ..hardnet_cvx import HardNetCvxLayer
from ..nn import MlpParams, mlp_forward, mlp_new, save_checkpoint
from .tasks import ModelOutput, Task

logger = logging.getLogger(__name__)

MODEL_KINDS = ("nn", "soft", "dc3", "hardnet-aff", "hardnet-cvx", "nn-proj", "soft-proj", "hardnet-cvx-np", "cbf-qp")
# network predicts only the n_out - n_eq free coordinates
REDUCED_KINDS = ("dc3", "hardnet-aff")
PENALTY_KINDS = ("soft", "soft-proj", "dc3")
TEST_PROJECTED_KINDS = ("nn-proj", "soft-proj")
# kinds whose training relies on the equality block being invertible
ASSUMPTION_KINDS = ("dc3", "hardnet-aff")

class Model:
    """An MLP followed by the layer its kind calls for"""

    prefix = "mlp"

    def __init__(self, kind: str, task: Task, seed: int = 0, hidden_width: Optional[int] = None,
                 hidden_layers: Optional[int] = None, soft_cfg: Optional[SoftPenaltyConfig] = None,
                 dc3_cfg: Optional[Dc3Config] = None):
        if kind not in MODEL_KINDS:
            raise ConfigurationException(
                f"Unknown model '{kind}'; expected one of {', '.join(MODEL_KINDS)}", field="model", value=kind
            )
        if kind == "cbf-qp" and not hasattr(task, "cbf_qp_policy"):
            raise ConfigurationException(f"Model 'cbf-qp' is not available for task '{task.name}'",
                                         field="model", value=kind)
        self.kind = kind
        self.task = task
        self.seed = seed
        self.soft_cfg = soft_cfg or SoftPenaltyConfig()
        self.dc3_cfg = dc3_cfg or Dc3Config()
        self.projection_enabled = True
        self.warm_penalty = False

        width = hidden_width or settings.hidden_width
        layers = settings.hidden_layers if hidden_layers is None else hidden_layers
        self.n_net_out = task.n_out - task.n_eq if kind in REDUCED_KINDS else task.n_out
        self.params: Optional[MlpParams] = None
        if kind != "cbf-qp":
            self.params = mlp_new([task.n_in] + [width] * layers + [self.n_net_out], seed)

        if kind == "hardnet-aff":
            self.layer = HardNetAffLayer(task.spec)
        elif kind == "dc3":
            self.layer = Dc3Layer(task.spec, self.dc3_cfg)
        elif kind in ("hardnet-cvx", "hardnet-cvx-np"):
            self.layer = HardNetCvxLayer(task.spec)
        else:
            self.layer = None

    @property
    def trainable(self) -> bool:
        return self.params is not None

    def config_items(self):
        items = {"model.kind": self.kind, "model.seed": self.seed}
        if self.params is not None:
            items["model.layer_sizes"] = tuple(self.params.layer_sizes)
        if self.kind in PENALTY_KINDS:
            items.update({f"soft.{k}": v for k, v in self.soft_cfg.model_dump().items()})
        if self.kind == "dc3":
            items.update({f"dc3.{k}": v for k, v in self.dc3_cfg.model_dump().items()})
        return items

    def _project(self, tape: Tape, f_node: int, xs: Sequence, enabled: bool) -> int:
        if self.kind == "hardnet-aff":
            return self.layer.apply(tape, f_node, xs, enabled=enabled)
        if self.kind == "dc3":
            # correction runs in every phase; warm start only switches projection layers
            return self.layer.apply(tape, f_node, xs)
        if self.layer is not None:
            return self.layer.apply(tape, f_node, xs, enabled=enabled)
        return f_node

    def forward(self, tape: Tape, x_node: int, xs: Sequence, training: bool = True) -> ModelOutput:
        """Record the model on the tape; training=False gives the deployed behaviour"""
        if not self.trainable:
            raise ConfigurationException(f"Model '{self.kind}' has no network to run", field="model", value=self.kind)
        f_node = mlp_forward(self.params, x_node, tape, prefix=self.prefix)
        base = self.task.base_node(tape, x_node)
        if base is not None:
            f_node = tape.add(f_node, base)

        if training:
            enabled = self.projection_enabled
        else:
            enabled = self.kind != "hardnet-cvx-np"
        y_node = self._project(tape, f_node, xs, enabled)

        penalty = None
        if training and (self.kind in PENALTY_KINDS or (self.warm_penalty and not self.projection_enabled)):
            evs = [self.task.spec.evaluate(x) for x in xs]
            penalty = soft_penalty_node(tape, y_node, evs, self.soft_cfg)
        return ModelOutput(y_node, penalty)

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Full outputs (n_out x B) for a batch of inputs"""
        X = np.asarray(X, dtype=np.float64)
        if self.kind == "cbf-qp":
            return self.task.cbf_qp_policy(X)
        tape = Tape()
        xs = self.task.samples(X)
        out = self.forward(tape, tape.leaf(X), xs, training=False)
        Y = tape.value(out.y)
        if self.kind in TEST_PROJECTED_KINDS:
            Y = project_at_inference(Y, self.task.spec, xs, method="cvx")
        return Y

    def save(self, path: str) -> bool:
        if self.params is None:
            logger.info(f"Model '{self.kind}' has no parameters; skipping checkpoint")
            return False
        save_checkpoint(self.params, path)
        return True
