"""Mini-batch AdamW training of NODE-FDM on fixed-length windows."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .data import SEQUENCE_LENGTH
from .model import LossWeights, NodeFdm, sequence_loss, stack_sequences
from .optim import AdamWConfig, AdamWState, adamw_step

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, last_good: dict):
        super().__init__(f"loss became non-finite in epoch {epoch}")
        self.epoch = epoch
        self.last_good = last_good


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 32
    lr: float = 1e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    weight_convention: str = "inverse_variance"
    include_distance: bool = False
    sequence_length: int = SEQUENCE_LENGTH

    def optimizer(self) -> AdamWConfig:
        return AdamWConfig(self.lr, self.weight_decay, self.beta1, self.beta2, self.eps)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class TrainResult:
    history: list[tuple[int, float, float]]  # (epoch, train loss, val loss)
    best_epoch: int
    best_val: float
    best_params: dict[str, np.ndarray]
    optimizer_state: AdamWState = field(default_factory=AdamWState)


def evaluate_loss(model: NodeFdm, arrays: dict, weights: LossWeights,
                  batch_size: int = 256) -> float:
    """Mean composite loss over all windows (no tape, no gradients)."""
    n = arrays["alt"].shape[0]
    if n == 0:
        return float("nan")
    total = 0.0
    for start in range(0, n, batch_size):
        batch = {k: v[start:start + batch_size] for k, v in arrays.items()}
        m = batch["alt"].shape[0]
        total += m * float(sequence_loss(model, batch, weights).value[0, 0])
    return total / n


def train(model: NodeFdm, train_seqs: Sequence, val_seqs: Sequence, config: TrainConfig,
          weights: LossWeights | None = None,
          on_epoch: Callable[[int, float, float, bool], None] | None = None) -> TrainResult:
    """Train in place and return the loss history and best-validation parameters.

    Epoch 0 is the evaluation of the initial parameters. Each later epoch is one
    shuffled pass; its train loss is the mean of the mini-batch losses. The model
    is left holding the best-validation parameters.
    """
    if not train_seqs:
        raise ValueError("empty training split")
    weights = weights or LossWeights.from_stats(model.stats, config.weight_convention,
                                                config.include_distance)
    train_arr = stack_sequences(train_seqs)
    val_arr = stack_sequences(val_seqs) if val_seqs else None
    rng = np.random.default_rng([config.seed, 1])
    params = model.parameters()
    names = list(params)
    opt_cfg = config.optimizer()
    state = AdamWState()

    def val_loss() -> float:
        if val_arr is None:
            return float("nan")
        return evaluate_loss(model, val_arr, weights)

    train0 = evaluate_loss(model, train_arr, weights)
    val0 = val_loss()
    history = [(0, train0, val0)]
    best_val = val0 if val_arr is not None else train0
    best_epoch = 0
    best_params = model.get_flat()
    if on_epoch:
        on_epoch(0, train0, val0, True)
    logger.info("epoch 0: train %.6g val %.6g", train0, val0)

    n = train_arr["alt"].shape[0]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        acc = 0.0
        for start in range(0, n, config.batch_size):
            idx = np.sort(order[start:start + config.batch_size])
            batch = {k: v[idx] for k, v in train_arr.items()}
            try:
                loss, grads = ad.grad(lambda: sequence_loss(model, batch, weights),
                                      [params[k] for k in names])
            except Exception as exc:  # rollout blew up
                raise TrainingDiverged(epoch, best_params) from exc
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingDiverged(epoch, best_params)
            acc += loss * len(idx)
            new, state = adamw_step(opt_cfg, {k: params[k].value for k in names},
                                    dict(zip(names, grads)), state)
            for k in names:
                params[k].value = new[k]
        train_loss = acc / n
        vl = val_loss()
        score = vl if val_arr is not None else train_loss
        improved = score < best_val
        if improved:
            best_val, best_epoch, best_params = score, epoch, model.get_flat()
        history.append((epoch, train_loss, vl))
        if on_epoch:
            on_epoch(epoch, train_loss, vl, improved)
        logger.info("epoch %d: train %.6g val %.6g%s", epoch, train_loss, vl,
                    " *" if improved else "")
    model.set_flat(best_params)
    return TrainResult(history, best_epoch, best_val, best_params, state)
