"""Mini-batch Adagrad training over a dataset window."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _rng
from .distill import KdConfig, binary_ce, kd_loss, kd_loss_grad, ce_logit_grad
from .nn_core import CtrModel, OptimizerState, _forward_cache, apply_gradients, backward, clamp_prob, encode, logistic
from .records import Dataset


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    batch_size: int = 256
    teacher_epochs: int = 1
    student_epochs: int = 2
    seed: int = 0
    kd: KdConfig = field(default_factory=KdConfig)
    hidden: tuple[int, ...] = (32, 16)
    item_dim: int = 8
    other_dim: int = 4
    carry_optimizer_state: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if isinstance(self.kd, dict):
            object.__setattr__(self, "kd", KdConfig(**self.kd))
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.teacher_epochs < 0 or self.student_epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.item_dim < 1 or self.other_dim < 1:
            raise ValueError("embedding dims must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class TrainingLog:
    samples: int
    epochs: int
    steps: int = 0
    epoch_losses: list[float] = field(default_factory=list)
    wall_time: float = 0.0


def fit(model: CtrModel, state: OptimizerState, data: Dataset, *, epochs: int, batch_size: int,
        learning_rate: float, seed: int, kd: KdConfig | None = None) -> TrainingLog:
    """Train ``model`` in place on ``data``.

    With ``kd`` set, the dataset must carry soft targets and the loss is the
    distillation objective; otherwise plain binary cross entropy. Batches
    follow a per-epoch permutation keyed by ``(seed, epoch)``.
    """
    if kd is not None and data.soft_targets is None:
        raise ValueError("distillation needs precomputed soft targets on the dataset")
    start = time.perf_counter()
    log = TrainingLog(samples=len(data), epochs=epochs)
    if len(data) == 0 or epochs == 0:
        log.wall_time = time.perf_counter() - start
        return log
    idx = encode(model.vocab, data, strict=True)
    y = data.clicks.astype(np.float64)
    soft = data.soft_targets
    for epoch in range(epochs):
        order = _rng.keyed_rng(seed, _rng.SHUFFLE, epoch).permutation(len(data))
        total = 0.0
        for lo in range(0, len(order), batch_size):
            sel = order[lo:lo + batch_size]
            batch = idx[sel]
            cache = _forward_cache(model, batch)
            z = cache[0]
            if kd is None:
                total += float(np.sum(binary_ce(y[sel], clamp_prob(logistic(z)))))
                dz = ce_logit_grad(y[sel], z)
            else:
                total += float(np.sum(kd_loss(y[sel], z, soft[sel], kd)))
                dz = kd_loss_grad(y[sel], z, soft[sel], kd)
            grads = backward(model, batch, dz / len(sel), cache)
            apply_gradients(model, state, grads, learning_rate)
            log.steps += 1
        log.epoch_losses.append(total / len(data))
    log.wall_time = time.perf_counter() - start
    return log
