"""Training loop: warmup with uniform edge dropping, then similarity-guided
views, one Adam step per epoch on the negated contrastive objective.

The similarity matrix driving the degree-split augmentation is rebuilt from
the encoder's output on the *un-augmented* graph (the views themselves
depend on it, so it cannot come from a view), refreshed every
``sim_refresh_interval`` epochs.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .augment import (
    GRADE_MODE,
    RANDOM_DROP_MODE,
    AugmentConfig,
    build_similarity,
    identity_view,
    make_view,
)
from .errors import ConfigError, TrainingDiverged
from .graph import Graph
from .model import ModelParams, backward, encode, init_params, project_normalize
from .objective import ContrastiveConfig, total_objective
from .seeding import substream, substream_seed


@dataclass(frozen=True)
class TrainConfig:
    total_epochs: int = 400
    warmup_epochs: int = 200
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    sim_refresh_interval: int = 1
    early_stop_patience: int = 20
    layers: int = 2
    hidden_dim: int = 128
    embed_dim: int = 128
    proj_dim: int = 128

    def __post_init__(self):
        if self.warmup_epochs > self.total_epochs:
            raise ConfigError("warmup_epochs must be <= total_epochs")
        if self.learning_rate < 0.0:
            raise ConfigError("learning_rate must be >= 0")
        if self.sim_refresh_interval < 1:
            raise ConfigError("sim_refresh_interval must be >= 1")
        if self.layers not in (1, 2):
            raise ConfigError("layers must be 1 or 2")


@dataclass
class EpochRecord:
    epoch: int
    objective: float
    mode: str
    wall_time: float
    grad_norm: float
    zero_norm_rows: int


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def append(self, record: EpochRecord):
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ValueError("epochs must be strictly increasing")
        self.records.append(record)

    def to_jsonl(self) -> str:
        lines = []
        for r in self.records:
            lines.append(
                json.dumps(
                    {
                        "epoch": r.epoch,
                        "objective": r.objective,
                        "mode": r.mode,
                        "wall_time": r.wall_time,
                        "grad_norm": r.grad_norm,
                        "zero_norm_rows": r.zero_norm_rows,
                    },
                    sort_keys=True,
                )
            )
        return "\n".join(lines) + ("\n" if lines else "")


class Adam:
    """Bias-corrected Adam over a ModelParams instance."""

    def __init__(self, params: ModelParams, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(t) for name, t in params.named_tensors()}
        self.v = {name: np.zeros_like(t) for name, t in params.named_tensors()}

    def step(self, params: ModelParams, lr: float):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, tensor in params.named_tensors():
            g = params.grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / c1
            v_hat = self.v[name] / c2
            tensor -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _epoch_objective(graph, params, sim, aug_cfg, con_cfg, mode, seed, epoch):
    """Two fresh views, forward both, objective, and parameter gradients."""
    view1 = make_view(graph, sim, aug_cfg, mode, substream_seed(seed, "augment", epoch, 0))
    view2 = make_view(graph, sim, aug_cfg, mode, substream_seed(seed, "augment", epoch, 1))
    h1, tape1 = encode(view1, graph, params)
    z1 = project_normalize(h1, params, tape1)
    h2, tape2 = encode(view2, graph, params)
    z2 = project_normalize(h2, params, tape2)
    J, g1, g2 = total_objective(z1, z2, con_cfg.tau)
    zero_rows = tape1.zero_norm_rows.size + tape2.zero_norm_rows.size
    params.zero_grads()
    if np.isfinite(J):
        backward(tape1, -g1, params)
        backward(tape2, -g2, params)
    return J, zero_rows


def train(graph: Graph, aug_cfg: AugmentConfig, con_cfg: ContrastiveConfig,
          train_cfg: TrainConfig):
    """Full training run; returns (best parameters, per-epoch log).

    Epochs before ``warmup_epochs`` (or all epochs when aug_mode is
    random_drop) use uniform edge dropping. Early stopping watches the
    training loss -J; the best-loss tracker resets when the augmentation
    switches from warmup to similarity-guided views, so the returned
    parameters come from the final phase.
    """
    if graph.num_nodes == 0:
        raise ConfigError("graph is empty")
    params = init_params(
        graph.num_features,
        train_cfg.hidden_dim,
        train_cfg.embed_dim,
        train_cfg.proj_dim,
        train_cfg.layers,
        substream(train_cfg.seed, "init"),
    )
    adam = Adam(params, train_cfg.adam_beta1, train_cfg.adam_beta2, train_cfg.adam_eps)
    log = TrainLog()
    sim = None
    best_loss = np.inf
    best_params = params.copy()
    stall = 0
    grade_enabled = aug_cfg.aug_mode == GRADE_MODE

    for epoch in range(train_cfg.total_epochs):
        start = time.perf_counter()
        in_grade_phase = grade_enabled and epoch >= train_cfg.warmup_epochs
        mode = GRADE_MODE if in_grade_phase else RANDOM_DROP_MODE
        if in_grade_phase and (epoch - train_cfg.warmup_epochs) % train_cfg.sim_refresh_interval == 0:
            h_full, _ = encode(identity_view(graph), graph, params)
            sim = build_similarity(h_full)
        if in_grade_phase and epoch == train_cfg.warmup_epochs:
            best_loss, stall = np.inf, 0

        J, zero_rows = _epoch_objective(
            graph, params, sim if mode == GRADE_MODE else None,
            aug_cfg, con_cfg, mode, train_cfg.seed, epoch,
        )
        if not np.isfinite(J):
            log.append(EpochRecord(epoch, float(J), mode, time.perf_counter() - start, float("nan"), zero_rows))
            raise TrainingDiverged(f"non-finite objective at epoch {epoch}", log)

        loss = -J
        if loss < best_loss:
            best_loss = loss
            best_params = params.copy()  # parameters that produced this loss, pre-update
            stall = 0
        else:
            stall += 1

        grad_norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in params.grads.values())))
        adam.step(params, train_cfg.learning_rate)
        log.append(EpochRecord(epoch, J, mode, time.perf_counter() - start, grad_norm, zero_rows))
        if stall >= train_cfg.early_stop_patience:
            break
    return best_params, log


def embed(graph: Graph, params: ModelParams) -> np.ndarray:
    """Encoder output on the original topology with unmasked features."""
    h, _ = encode(identity_view(graph), graph, params)
    return h
