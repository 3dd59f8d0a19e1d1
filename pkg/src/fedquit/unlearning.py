"""Client unlearning by distillation from an edited, frozen global model.

The frozen global model is the teacher.  On the unlearning client's own data
its output is edited to penalise the true class, and a student initialised
from the same global model is trained to match the edited output under KL
divergence.  Three teachers are provided:

* logits: the true-class logit is replaced by ``v`` (or by the smallest
  logit of that example) before the softmax;
* softmax: the true-class probability is set to ``v`` and the removed mass
  is spread evenly over the other classes;
* incompetent: the uniform distribution, ignoring the global model.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import Dataset
from .errors import DomainError
from .federation import local_train
from .nn import ParameterSet, backprop, forward, make_optimizer, softmax

logger = logging.getLogger(__name__)

_UNLEARN_STREAM = 2
_FINETUNE_STREAM = 3

VARIANT_KINDS = ("logits", "logits_min", "softmax", "incompetent")


@dataclass(frozen=True)
class TeacherVariant:
    kind: str = "logits"
    v: float | None = 0.0

    def __post_init__(self):
        if self.kind not in VARIANT_KINDS:
            raise DomainError(f"unknown teacher variant {self.kind!r}")
        if self.kind in ("logits", "softmax") and self.v is None:
            raise DomainError(f"{self.kind} teacher needs a value for v")
        if self.kind == "logits" and not np.isfinite(self.v):
            raise DomainError("v must be finite")
        if self.kind == "softmax" and not 0.0 <= self.v < 1.0:
            raise DomainError(f"softmax teacher needs v in [0, 1), got {self.v}")

    @classmethod
    def logits_fixed(cls, v: float = 0.0) -> TeacherVariant:
        return cls("logits", float(v))

    @classmethod
    def logits_min(cls) -> TeacherVariant:
        return cls("logits_min", None)

    @classmethod
    def softmax_fixed(cls, v: float = 0.0) -> TeacherVariant:
        return cls("softmax", float(v))

    @classmethod
    def incompetent(cls) -> TeacherVariant:
        return cls("incompetent", None)

    @property
    def label(self) -> str:
        if self.kind == "logits":
            return f"logits(v={self.v:g})"
        if self.kind == "softmax":
            return f"softmax(v={self.v:.4g})"
        return self.kind


@dataclass(frozen=True)
class UnlearnConfig:
    variant: TeacherVariant = TeacherVariant()
    epochs: int = 1
    lr: float = 1e-3
    batch_size: int = 32
    optimizer: str = "adam"
    tau: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise DomainError("unlearning epochs must be at least 1")
        if not self.lr >= 0:
            raise DomainError("unlearning lr must be non-negative")
        if self.batch_size < 1:
            raise DomainError("batch_size must be at least 1")
        if self.optimizer not in ("sgd", "adam"):
            raise DomainError(f"unknown optimizer {self.optimizer!r}")
        if not self.tau > 0:
            raise DomainError("temperature must be positive")


def _labels(y, num_classes):
    y = np.asarray(y, dtype=np.int64)
    if np.any(y < 0) or np.any(y >= num_classes):
        raise DomainError(f"true class outside [0, {num_classes})")
    return y


def modify_outputs_logits(z, y, v, tau: float = 1.0) -> np.ndarray:
    """Replace the true-class logit with ``v`` and apply the softmax.

    ``z`` is ``(C,)`` or ``(n, C)``; ``v`` is a scalar, a per-example array,
    or the string ``"min"`` for the example's smallest logit.
    """
    z = np.array(z, dtype=np.float64)
    single = z.ndim == 1
    z2 = np.atleast_2d(z)
    y = np.atleast_1d(_labels(y, z2.shape[1]))
    if isinstance(v, str):
        if v != "min":
            raise DomainError(f"unknown v {v!r}")
        v = z2.min(axis=1)
    z2[np.arange(len(z2)), y] = v
    out = softmax(z2, tau)
    return out[0] if single else out


def modify_outputs_softmax(g, y, v: float) -> np.ndarray:
    """Set the true-class probability to ``v``; share ``g(y) - v`` among the rest.

    When ``v > g(y)`` the shift can push some entries below zero.  Those are
    clamped to 0 and the vector renormalised.
    """
    g = np.array(g, dtype=np.float64)
    single = g.ndim == 1
    g2 = np.atleast_2d(g)
    n, c = g2.shape
    if c < 2:
        raise DomainError("need at least 2 classes")
    if not 0.0 <= v < 1.0:
        raise DomainError(f"v must lie in [0, 1), got {v}")
    y = np.atleast_1d(_labels(y, c))
    rows = np.arange(n)
    shift = (g2[rows, y] - v) / (c - 1)
    out = g2 + shift[:, None]
    out[rows, y] = v
    neg = out < 0
    if neg.any():
        logger.debug("softmax teacher: clamped %d negative entries", int(neg.sum()))
        out = np.where(neg, 0.0, out)
        out /= out.sum(axis=1, keepdims=True)
    return out[0] if single else out


def incompetent_teacher(num_classes: int) -> np.ndarray:
    if num_classes < 2:
        raise DomainError("need at least 2 classes")
    return np.full(num_classes, 1.0 / num_classes)


def teacher_targets(variant: TeacherVariant, teacher_logits, y, tau: float = 1.0) -> np.ndarray:
    """Teacher distribution for a batch of frozen global-model logits."""
    z = np.atleast_2d(np.asarray(teacher_logits, dtype=np.float64))
    if variant.kind == "logits":
        return modify_outputs_logits(z, y, variant.v, tau)
    if variant.kind == "logits_min":
        return modify_outputs_logits(z, y, "min", tau)
    if variant.kind == "softmax":
        return modify_outputs_softmax(softmax(z, tau), y, variant.v)
    _labels(y, z.shape[1])
    return np.tile(incompetent_teacher(z.shape[1]), (len(z), 1))


TeacherFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def fedquit_unlearn(global_params: ParameterSet, forget: Dataset, cfg: UnlearnConfig,
                    teacher_fn: TeacherFn | None = None, callback=None) -> ParameterSet:
    """Run the local unlearning routine on the forget set and return the student.

    The teacher is ``global_params``, never updated.  ``teacher_fn(logits, y)``
    replaces the configured teacher construction (a test hook).
    ``callback(epoch, batch_index, idx, targets, loss)`` is invoked after
    every optimizer step.
    """
    n = len(forget)
    if n == 0:
        raise DomainError("the forget set is empty")
    teacher = global_params
    student = global_params.copy()
    opt = make_optimizer(cfg.optimizer, cfg.lr)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(_UNLEARN_STREAM,)))
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            xb, yb = forget.x[idx], forget.y[idx]
            logits = forward(teacher, xb)
            if teacher_fn is not None:
                targets = teacher_fn(logits, yb)
            else:
                targets = teacher_targets(cfg.variant, logits, yb, cfg.tau)
            grads, loss = backprop(student, xb, targets, "kl", cfg.tau)
            student = opt.step(student, grads)
            if callback is not None:
                callback(epoch, b, idx, targets, loss)
    return student


def natural_baseline(global_params: ParameterSet) -> ParameterSet:
    """No unlearning step: the model is returned as is and the client just leaves."""
    return global_params.copy()


def centralized_fedquit(model: ParameterSet, forget: Dataset, retain: Dataset,
                        cfg: UnlearnConfig, finetune_epochs: int, finetune_lr: float = 0.05,
                        finetune_batch_size: int = 32) -> list[ParameterSet]:
    """Unlearn on the forget set, then fine-tune on retain data one epoch at a time.

    Element 0 is the unlearned model; element ``i`` follows ``i`` epochs of
    hard-label SGD on ``retain``.
    """
    if finetune_epochs < 0:
        raise DomainError("finetune_epochs must be non-negative")
    models = [fedquit_unlearn(model, forget, cfg)]
    if finetune_epochs and len(retain) == 0:
        raise DomainError("the retain set is empty")
    for e in range(finetune_epochs):
        rng = np.random.default_rng(
            np.random.SeedSequence(cfg.seed, spawn_key=(_FINETUNE_STREAM, e)))
        models.append(local_train(models[-1], retain, 1, finetune_lr, finetune_batch_size, rng))
    return models
