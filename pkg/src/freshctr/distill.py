"""Distillation objective: hard-label cross entropy plus a teacher-matching term.

For one impression with click ``y``, student logit ``z`` and teacher soft
target ``t``::

    loss = CE(y, sigmoid(z)) + alpha * lam * CE(t, sigmoid(z / T))
    lam  = T**2 if scale_distill_by_T2 else 1

The temperature only touches the teacher-matching term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn_core import PROB_EPS, CtrModel, clamp_prob, encode, forward, logistic
from .records import Dataset

SOFT_TARGET_DECIMALS = 9


@dataclass(frozen=True)
class KdConfig:
    alpha: float = 0.5
    temperature: float = 2.0
    scale_distill_by_T2: bool = False

    def __post_init__(self):
        if not (self.alpha >= 0 and np.isfinite(self.alpha)):
            raise ValueError(f"alpha must be a finite non-negative number, got {self.alpha}")
        if not (self.temperature >= 1 and np.isfinite(self.temperature)):
            raise ValueError(f"temperature must be >= 1, got {self.temperature}")

    @property
    def distill_weight(self) -> float:
        lam = self.temperature ** 2 if self.scale_distill_by_T2 else 1.0
        return self.alpha * lam


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def binary_ce(target, p):
    target = np.asarray(target, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if np.any((p < PROB_EPS) | (p > 1.0 - PROB_EPS)) or np.any(np.isnan(p)):
        raise ValueError(f"probability outside [{PROB_EPS}, 1 - {PROB_EPS}]; clamp before taking logs")
    if np.any((target < 0) | (target > 1)) or np.any(np.isnan(target)):
        raise ValueError("target must lie in [0, 1]")
    return _out(-(target * np.log(p) + (1.0 - target) * np.log1p(-p)))


def soften(logit, temperature):
    if not temperature >= 1:
        raise ValueError(f"temperature must be >= 1, got {temperature}")
    return _out(clamp_prob(logistic(np.asarray(logit, dtype=np.float64) / temperature)))


def _check_labels(y, soft_t):
    y = np.asarray(y, dtype=np.float64)
    soft_t = np.asarray(soft_t, dtype=np.float64)
    if np.any((y < 0) | (y > 1)) or np.any(np.isnan(y)):
        raise ValueError("labels must lie in [0, 1]")
    if np.any((soft_t < 0) | (soft_t > 1)) or np.any(np.isnan(soft_t)):
        raise ValueError("soft targets must lie in [0, 1]")
    return y, soft_t


def kd_loss(y, student_logit, soft_t, cfg: KdConfig):
    y, soft_t = _check_labels(y, soft_t)
    z = np.asarray(student_logit, dtype=np.float64)
    hard = binary_ce(y, clamp_prob(logistic(z)))
    soft = binary_ce(soft_t, soften(z, cfg.temperature))
    return _out(hard + cfg.distill_weight * soft)


def ce_logit_grad(y, student_logit):
    """d CE(y, sigmoid(z)) / dz."""
    return logistic(np.asarray(student_logit, dtype=np.float64)) - np.asarray(y, dtype=np.float64)


def kd_loss_grad(y, student_logit, soft_t, cfg: KdConfig):
    y, soft_t = _check_labels(y, soft_t)
    z = np.asarray(student_logit, dtype=np.float64)
    T = cfg.temperature
    return _out(ce_logit_grad(y, z) + cfg.distill_weight * (logistic(z / T) - soft_t) / T)


def quantize_soft_targets(p: np.ndarray) -> np.ndarray:
    # exact on the 9-decimal grid the dataset file stores, so files round-trip
    scale = 10.0 ** SOFT_TARGET_DECIMALS
    return np.rint(np.asarray(p, dtype=np.float64) * scale) / scale


def teacher_prior_logit(teacher: CtrModel) -> float:
    rate = teacher.meta.get("label_rate")
    if rate is None:
        raise ValueError("teacher has no 'label_rate' metadata to fall back on for unseen values")
    p = float(np.clip(rate, PROB_EPS, 1 - PROB_EPS))
    return float(np.log(p) - np.log1p(-p))


def precompute_soft_targets(teacher: CtrModel, dataset: Dataset, temperature: float,
                            batch_size: int = 65536) -> Dataset:
    """Attach ``soften(teacher_logit, T)`` to every impression.

    Impressions carrying a value the teacher has never seen get the
    teacher's softened label-rate prior instead of a network output.
    """
    if not temperature >= 1:
        raise ValueError(f"temperature must be >= 1, got {temperature}")
    idx = encode(teacher.vocab, dataset, strict=False)
    logits = np.empty(len(dataset))
    for lo in range(0, len(dataset), batch_size):
        logits[lo:lo + batch_size] = forward(teacher, idx[lo:lo + batch_size])
    unseen = (idx < 0).any(axis=1)
    if unseen.any():
        logits[unseen] = teacher_prior_logit(teacher)
    soft = quantize_soft_targets(clamp_prob(logistic(logits / temperature)))
    return dataset.with_soft_targets(soft)


def annotate_file(teacher: CtrModel, src, dst, temperature: float) -> int:
    """File-to-file soft-target precompute. Returns the record count."""
    from .dataset_io import read_dataset, write_dataset

    data = precompute_soft_targets(teacher, read_dataset(src), temperature)
    write_dataset(dst, data)
    return len(data)
