"""Joint multi-horizon training: dual-head weighted MSE, Adam, cosine annealing."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tape, backward
from .dataset import HorizonSet, NormStats, PairSet
from .errors import NumericalError
from .model import ModelConfig, ModelParams, forward_nodes, init_params

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    horizons: HorizonSet = field(default_factory=lambda: HorizonSet([1]))
    epochs: int = 500
    lr0: float = 1e-3
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lambda_v: float = 1.0
    lambda_h: float = 1.0
    batch_size: int = 8
    seed: int = 0
    decoupled_weight_decay: bool = True
    hidden: int = 128
    activation: str = "relu"
    velocity_inputs: bool = True
    t_denominator: float = 240.0
    eval_batch_size: int = 32

    def validate(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lambda_v < 0 or self.lambda_h < 0 or (self.lambda_v == 0 and self.lambda_h == 0):
            raise ValueError("loss weights must be non-negative and not both zero")
        if 1 not in self.horizons:
            raise ValueError("the horizon set must contain 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def loss(pred_state, target_state, lambda_v=1.0, lambda_h=1.0) -> float:
    """lambda_v * mean sq. velocity error + lambda_h * mean sq. thickness error."""
    pred = np.asarray(pred_state, dtype=np.float64)
    target = np.asarray(target_state, dtype=np.float64)
    if pred.shape != target.shape or pred.shape[-1] != 3:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    d = pred - target
    return float(lambda_v * np.mean(d[..., :2] ** 2) + lambda_h * np.mean(d[..., 2:] ** 2))


def loss_nodes(tape: Tape, dv, dh, target: np.ndarray, lambda_v, lambda_h):
    """Same objective as :func:`loss` on residuals, recorded on ``tape``.

    Predicted and true states share the anchor, so state errors equal
    residual errors.
    """
    ev = tape.subtract(dv, tape.constant(target[..., :2]))
    eh = tape.subtract(dh, tape.constant(target[..., 2:]))
    return tape.add(tape.scale(tape.square_mean(ev), lambda_v),
                    tape.scale(tape.square_mean(eh), lambda_h))


def cosine_lr(epoch: int, epochs: int, lr0: float) -> float:
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / epochs))


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, beta1=0.9, beta2=0.999,
              eps=1e-8, weight_decay=0.0, decoupled=True) -> dict:
    """One Adam update; returns new parameter arrays and advances ``state`` in place.

    Decoupled decay shrinks ``p <- p (1 - lr wd)`` before the adaptive step;
    coupled decay adds ``wd p`` to the gradient instead.
    """
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    out = {}
    for k, p in params.items():
        g = grads[k]
        if weight_decay and not decoupled:
            g = g + weight_decay * p
        m = state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * g
        v = state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * g * g
        q = p * (1.0 - lr * weight_decay) if (weight_decay and decoupled) else p
        out[k] = q - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return out


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_loss: float


def batch_loss_and_grads(params: dict, pairs: PairSet, idx, config: TrainConfig, with_grads=True):
    """Mean loss over the pairs at ``idx`` and its gradient (None when not requested)."""
    total = 0.0
    grads = None
    n = len(idx)
    for mesh, positions, feats, targets in pairs.gather(idx):
        tape = Tape()
        nodes = {k: (tape.param(v, k) if with_grads else tape.constant(v)) for k, v in params.items()}
        dv, dh = forward_nodes(tape, nodes, mesh, tape.constant(feats), config.activation)
        weight = len(positions) / n
        node = loss_nodes(tape, dv, dh, targets, config.lambda_v, config.lambda_h)
        total += weight * float(node.value)
        if with_grads:
            g = backward(tape, tape.scale(node, weight))
            if grads is None:
                grads = {k: g[nodes[k]] for k in params}
            else:
                for k in params:
                    grads[k] = grads[k] + g[nodes[k]]
    return total, grads


def evaluate(params: dict, pairs: PairSet, config: TrainConfig) -> float:
    """Mean per-pair loss over a whole pair set; parameters are not touched."""
    total = 0.0
    n = len(pairs)
    bs = config.eval_batch_size
    for start in range(0, n, bs):
        idx = np.arange(start, min(start + bs, n))
        l, _ = batch_loss_and_grads(params, pairs, idx, config, with_grads=False)
        total += l * len(idx)
    return total / n


def train(train_trajs, val_trajs, stats: NormStats, config: TrainConfig,
          init: ModelParams | None = None):
    """Train one shared model on all horizons; returns (best params, history).

    The returned params are those with the lowest validation loss (the last
    epoch's when no validation trajectories are given).
    """
    config.validate()
    train_pairs = PairSet.build(train_trajs, stats, config.horizons, config.t_denominator,
                                config.velocity_inputs)
    val_pairs = PairSet.build(val_trajs, stats, config.horizons, config.t_denominator,
                              config.velocity_inputs) if val_trajs else None
    if len(train_pairs) == 0:
        raise ValueError("no training pairs")

    if init is None:
        context_width = train_pairs.prepared[0].context.shape[-1]
        mcfg = ModelConfig(ModelConfig.input_width(context_width, config.velocity_inputs),
                           config.hidden, config.activation, config.velocity_inputs)
        init = init_params(config.seed, mcfg)
    params = {k: v.copy() for k, v in init.named().items()}
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng(config.seed)

    history: list[EpochRecord] = []
    best, best_val = None, math.inf
    n = len(train_pairs)
    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, config.epochs, config.lr0)
        order = rng.permutation(n)
        running = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            l, grads = batch_loss_and_grads(params, train_pairs, idx, config)
            if not math.isfinite(l):
                bad = [(train_pairs.prepared[train_pairs.traj_index[i]].traj.scenario_id,
                        int(train_pairs.t[i]), int(train_pairs.h[i])) for i in idx]
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {b}, pairs {bad}")
            running += l * len(idx)
            params = adam_step(params, grads, state, lr, config.beta1, config.beta2, config.eps,
                               config.weight_decay, config.decoupled_weight_decay)
        train_loss = running / n
        val_loss = evaluate(params, val_pairs, config) if val_pairs is not None else train_loss
        if not math.isfinite(val_loss):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}")
        history.append(EpochRecord(epoch, lr, train_loss, val_loss))
        log.debug("epoch %d lr %.3g train %.6g val %.6g", epoch, lr, train_loss, val_loss)
        if val_pairs is None or val_loss < best_val:
            best_val = val_loss
            best = {k: v.copy() for k, v in params.items()}
    return ModelParams.from_named(best), history


def format_history(history) -> str:
    lines = ["# epoch lr train_loss val_loss"]
    lines += [f"{r.epoch} {float(r.lr)!r} {float(r.train_loss)!r} {float(r.val_loss)!r}" for r in history]
    return "\n".join(lines) + "\n"


def save_history(history, path) -> None:
    Path(path).write_text(format_history(history))
