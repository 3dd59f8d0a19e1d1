"""Forgetting and utility metrics: accuracy, two membership-inference attacks,
and the per-run metrics report."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset
from .errors import DomainError, ParseError
from .nn import ParameterSet, cross_entropy, forward, one_hot, softmax


def _nonempty(data: Dataset, what: str):
    if len(data) == 0:
        raise DomainError(f"{what} is empty")


def predictions(params: ParameterSet, data: Dataset) -> np.ndarray:
    # np.argmax resolves ties to the lowest index
    return np.argmax(forward(params, data.x), axis=1)


def accuracy(params: ParameterSet, data: Dataset) -> float:
    _nonempty(data, "dataset")
    return float(np.mean(predictions(params, data) == data.y))


def confidences(params: ParameterSet, data: Dataset, tau: float = 1.0) -> np.ndarray:
    """Top-1 softmax probability per example."""
    return softmax(forward(params, data.x), tau).max(axis=1)


def per_example_loss(params: ParameterSet, data: Dataset, tau: float = 1.0) -> np.ndarray:
    probs = softmax(forward(params, data.x), tau)
    return cross_entropy(one_hot(data.y, data.num_classes), probs)


def avg_train_loss(params: ParameterSet, retain: Dataset, tau: float = 1.0) -> float:
    _nonempty(retain, "retain set")
    losses = per_example_loss(params, retain, tau)
    return math.fsum(losses.tolist()) / len(losses)


@dataclass(frozen=True)
class MIAPredictor:
    kind: str  # "confidence" or "loss"
    threshold: float
    n_seen: int = 0
    n_unseen: int = 0
    balanced_accuracy: float = float("nan")

    def __post_init__(self):
        if self.kind == "confidence" and not 0.0 <= self.threshold <= 1.0:
            raise DomainError("confidence threshold must lie in [0, 1]")
        if self.kind == "loss" and not self.threshold >= 0:
            raise DomainError("loss threshold must be non-negative")
        if self.kind not in ("confidence", "loss"):
            raise DomainError(f"unknown MIA kind {self.kind!r}")


def best_threshold(member_scores, nonmember_scores) -> tuple[float, float]:
    """Threshold on ``score >= t`` maximising balanced accuracy.

    Candidates are 0 and every observed score; ties go to the lowest
    threshold.  Returns ``(threshold, balanced_accuracy)``.
    """
    m = np.sort(np.asarray(member_scores, dtype=np.float64))
    nm = np.sort(np.asarray(nonmember_scores, dtype=np.float64))
    if len(m) == 0 or len(nm) == 0:
        raise DomainError("both score sets must be nonempty")
    cands = np.unique(np.concatenate([[0.0], m, nm]))
    # members with score >= t and non-members with score < t; compare integer
    # scores tp*|nm| + tn*|m| so that exact ties are not split by rounding
    tp = len(m) - np.searchsorted(m, cands, side="left")
    tn = np.searchsorted(nm, cands, side="left")
    score = tp * len(nm) + tn * len(m)
    i = int(np.argmax(score))
    return float(cands[i]), 0.5 * (tp[i] / len(m) + tn[i] / len(nm))


def _balance(seen: Dataset, unseen: Dataset, rng: np.random.Generator):
    n = min(len(seen), len(unseen))
    if len(seen) > n:
        seen = seen.subset(np.sort(rng.choice(len(seen), n, replace=False)))
    if len(unseen) > n:
        unseen = unseen.subset(np.sort(rng.choice(len(unseen), n, replace=False)))
    return seen, unseen


def fit_mia_song(params: ParameterSet, seen: Dataset, unseen: Dataset, seed: int = 0,
                 tau: float = 1.0) -> MIAPredictor:
    """Confidence-threshold attack fit on balanced member/non-member splits.

    ``seen`` is the retain data and ``unseen`` a held-out test set; the forget
    set must not be passed here.
    """
    _nonempty(seen, "seen split")
    _nonempty(unseen, "unseen split")
    seen, unseen = _balance(seen, unseen, np.random.default_rng(seed))
    t, bal = best_threshold(confidences(params, seen, tau), confidences(params, unseen, tau))
    return MIAPredictor("confidence", t, len(seen), len(unseen), bal)


def fit_mia_yeom(params: ParameterSet, retain: Dataset, tau: float = 1.0) -> MIAPredictor:
    """Loss-threshold attack: the threshold is the model's average training loss."""
    return MIAPredictor("loss", avg_train_loss(params, retain, tau), len(retain), 0)


def mia_rate(predictor: MIAPredictor, params: ParameterSet, target: Dataset,
             tau: float = 1.0) -> float:
    """Fraction of ``target`` the attack labels as training members."""
    _nonempty(target, "target set")
    if predictor.kind == "confidence":
        return float(np.mean(confidences(params, target, tau) >= predictor.threshold))
    return float(np.mean(per_example_loss(params, target, tau) < predictor.threshold))


@dataclass
class ModelMetrics:
    test_acc: float
    forget_acc: float
    retain_acc: float
    mia_song: float
    mia_yeom: float


def model_metrics(params: ParameterSet, forget: Dataset, retain: Dataset, test: Dataset,
                  seed: int = 0, tau: float = 1.0) -> ModelMetrics:
    song = fit_mia_song(params, retain, test, seed, tau)
    yeom = fit_mia_yeom(params, retain, tau)
    return ModelMetrics(
        test_acc=accuracy(params, test),
        forget_acc=accuracy(params, forget),
        retain_acc=accuracy(params, retain),
        mia_song=mia_rate(song, params, forget, tau),
        mia_yeom=mia_rate(yeom, params, forget, tau),
    )


@dataclass
class MetricsReport:
    """Metrics of one unlearning run, laid out like the results table.

    Forgetting metrics describe the model after recovery; ``post_unlearning``
    holds the same metrics measured right after the unlearning step.
    """

    method: str
    seed: int
    client: int
    test_acc: float
    forget_acc: float
    mia_song_rate: float
    mia_yeom_rate: float
    recovery_rounds: int | None
    converged: bool
    ce: float | None
    delta_forget_acc: float
    delta_mia_song: float
    delta_mia_yeom: float
    bytes_total: int
    unlearning_bytes: int
    retrain_rounds: int
    original: dict = field(default_factory=dict)
    retrained: dict = field(default_factory=dict)
    post_unlearning: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("test_acc", "forget_acc", "mia_song_rate", "mia_yeom_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DomainError(f"{name}={v} outside [0, 1]")

    @property
    def test_acc_drop(self) -> float:
        return self.original["test_acc"] - self.post_unlearning["test_acc"]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> MetricsReport:
        try:
            return cls(**d)
        except TypeError as exc:
            raise ParseError(f"malformed metrics report: {exc}") from None


def report(evaluated: ParameterSet, retrained: ParameterSet, original: ParameterSet,
           forget: Dataset, retain: Dataset, test: Dataset, *, method: str, seed: int,
           client: int, recovery, retrain_rounds: int, bytes_total: int,
           unlearning_bytes: int, post_unlearning: ParameterSet | None = None,
           mia_seed: int = 0, tau: float = 1.0) -> MetricsReport:
    """Evaluate a model against the retrained gold standard.

    ``recovery`` is a :class:`~fedquit.federation.RecoveryResult` (or anything
    with ``rounds`` and ``converged``).  Deltas are absolute differences to
    the retrained model; CE is left as ``None`` when recovery did not converge.
    """
    evaluated.check_compatible(retrained)
    evaluated.check_compatible(original)
    ev = model_metrics(evaluated, forget, retain, test, mia_seed, tau)
    rt = model_metrics(retrained, forget, retain, test, mia_seed, tau)
    og = model_metrics(original, forget, retain, test, mia_seed, tau)
    pu = model_metrics(post_unlearning if post_unlearning is not None else evaluated,
                       forget, retain, test, mia_seed, tau)
    ce = None
    if recovery.converged:
        ce = retrain_rounds / max(recovery.rounds, 1)
    return MetricsReport(
        method=method,
        seed=seed,
        client=client,
        test_acc=ev.test_acc,
        forget_acc=ev.forget_acc,
        mia_song_rate=ev.mia_song,
        mia_yeom_rate=ev.mia_yeom,
        recovery_rounds=recovery.rounds if recovery.converged else None,
        converged=bool(recovery.converged),
        ce=ce,
        delta_forget_acc=abs(ev.forget_acc - rt.forget_acc),
        delta_mia_song=abs(ev.mia_song - rt.mia_song),
        delta_mia_yeom=abs(ev.mia_yeom - rt.mia_yeom),
        bytes_total=bytes_total,
        unlearning_bytes=unlearning_bytes,
        retrain_rounds=retrain_rounds,
        original=asdict(og),
        retrained=asdict(rt),
        post_unlearning=asdict(pu),
    )


SUMMARY_FIELDS = ("recovery_rounds", "ce", "test_acc", "forget_acc", "mia_song_rate",
                  "mia_yeom_rate", "delta_forget_acc", "delta_mia_song", "delta_mia_yeom")


def summarize(reports: list[MetricsReport]) -> dict:
    """Mean and population standard deviation of each numeric field.

    Non-converged runs are skipped for ``recovery_rounds`` and ``ce``.
    """
    out = {"method": reports[0].method if reports else None, "runs": len(reports),
           "converged": sum(r.converged for r in reports)}
    for name in SUMMARY_FIELDS:
        vals = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        out[name] = {"mean": float(np.mean(vals)) if vals else None,
                     "std": float(np.std(vals)) if vals else None}
    drops = [r.test_acc_drop for r in reports if r.post_unlearning and r.original]
    out["test_acc_drop"] = {"mean": float(np.mean(drops)) if drops else None,
                            "std": float(np.std(drops)) if drops else None}
    return out
