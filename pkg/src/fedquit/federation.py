"""FedAvg simulation, the special unlearning round, and recovery.

Every client draws its minibatch order from its own stream, keyed by
``(seed, client, round)``.  Training results therefore do not depend on which
other clients take part, on the order clients are processed, or on whether
they run in parallel.
"""

from __future__ import annotations

import copy
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, FederationData
from .errors import DomainError, ShapeError
from .evaluation import accuracy
from .nn import SGD, ParameterSet, backprop, one_hot, serialized_size

logger = logging.getLogger(__name__)

_TRAIN_STREAM = 1


@dataclass(frozen=True)
class FederationConfig:
    rounds: int = 60
    local_epochs: int = 1
    lr: float = 0.1
    lr_decay: float = 0.998
    batch_size: int = 32
    server_lr: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 1:
            raise DomainError("rounds must be at least 1")
        if self.local_epochs < 1:
            raise DomainError("local_epochs must be at least 1")
        if not self.lr > 0:
            raise DomainError("lr must be positive")
        if not 0 < self.lr_decay <= 1:
            raise DomainError("lr_decay must lie in (0, 1]")
        if self.batch_size < 1:
            raise DomainError("batch_size must be at least 1")
        if not self.server_lr > 0:
            raise DomainError("server_lr must be positive")

    def lr_at(self, round_index: int) -> float:
        return self.lr * self.lr_decay ** round_index


@dataclass
class FederationState:
    params: ParameterSet
    round: int = 0
    bytes_up: int = 0
    bytes_down: int = 0
    last_round_bytes: int = 0

    @property
    def bytes_total(self) -> int:
        return self.bytes_up + self.bytes_down

    def copy(self) -> FederationState:
        return copy.deepcopy(self)


@dataclass
class RoundReport:
    round: int
    client_losses: dict[int, float]
    test_acc: float
    bytes: int
    lr: float = 0.0
    phase: str = "train"

    def as_row(self) -> dict:
        losses = list(self.client_losses.values())
        return {
            "phase": self.phase,
            "round": self.round,
            "lr": self.lr,
            "mean_client_loss": float(np.mean(losses)) if losses else float("nan"),
            "test_acc": self.test_acc,
            "bytes": self.bytes,
        }


def client_stream(seed: int, client: int, round_index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(_TRAIN_STREAM, client, round_index))
    )


def _local_train(params, shard, epochs, lr, batch_size, rng):
    n = len(shard)
    if n == 0:
        raise DomainError("cannot train on an empty shard")
    targets = one_hot(shard.y, shard.num_classes)
    opt = SGD(lr)
    losses = []
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            grads, loss = backprop(params, shard.x[idx], targets[idx], "cross_entropy")
            params = opt.step(params, grads)
            losses.append(loss)
    return params, float(np.mean(losses))


def local_train(params: ParameterSet, shard: Dataset, epochs: int, lr: float,
                batch_size: int, rng: np.random.Generator) -> ParameterSet:
    """``epochs`` passes of shuffled minibatch SGD on hard-label cross-entropy."""
    return _local_train(params, shard, epochs, lr, batch_size, rng)[0]


def weighted_average(vectors: np.ndarray, counts) -> np.ndarray:
    """Coordinate-wise mean of the rows of ``vectors`` weighted by ``counts``.

    Terms are sorted per coordinate before summing, so the result is bitwise
    independent of row order; coordinates on which all rows agree are returned
    unchanged.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    counts = np.asarray(counts, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[0] != counts.shape[0] or vectors.shape[0] == 0:
        raise ShapeError("need one count per update and at least one update")
    if np.any(counts < 0):
        raise DomainError("client sizes must be non-negative")
    total = counts.sum()
    if total == 0:
        raise DomainError("all client sizes are zero")
    terms = np.sort(vectors * (counts / total)[:, None], axis=0)
    mean = terms.sum(axis=0)
    same = np.all(vectors == vectors[0], axis=0)
    return np.where(same, vectors[0], mean)


def aggregate(updates: list[tuple[ParameterSet, int]]) -> ParameterSet:
    """FedAvg aggregation: mean of client models weighted by shard size."""
    if not updates:
        raise DomainError("nothing to aggregate")
    ref = updates[0][0]
    for p, _ in updates[1:]:
        ref.check_compatible(p)
    flat = np.stack([p.flat() for p, _ in updates])
    return ParameterSet.from_flat(ref.arch, weighted_average(flat, [n for _, n in updates]))


def _apply_server(current: ParameterSet, averaged: ParameterSet, server_lr: float) -> ParameterSet:
    if server_lr == 1.0:
        return averaged
    delta = averaged.flat() - current.flat()
    return ParameterSet.from_flat(current.arch, current.flat() + server_lr * delta)


def _participants(fed: FederationData, exclude) -> list[int]:
    exclude = set(exclude or ())
    active = [k for k in range(fed.num_clients) if k not in exclude]
    if not active:
        raise DomainError("every client is excluded")
    return active


def fedavg_rounds(state: FederationState, fed: FederationData, cfg: FederationConfig,
                  num_rounds: int, exclude=None, max_workers: int | None = None,
                  phase: str = "train") -> list[RoundReport]:
    """Advance ``state`` in place by ``num_rounds`` FedAvg rounds."""
    active = _participants(fed, exclude)
    size = serialized_size(state.params.arch)
    history = []
    for _ in range(num_rounds):
        t = state.round
        lr = cfg.lr_at(t)
        shards = {k: fed.shard(k) for k in active}
        jobs = [(state.params, shards[k], cfg.local_epochs, lr, cfg.batch_size,
                 client_stream(cfg.seed, k, t)) for k in active]
        if max_workers and max_workers > 1:
            with ThreadPoolExecutor(max_workers) as pool:
                results = list(pool.map(lambda a: _local_train(*a), jobs))
        else:
            results = [_local_train(*a) for a in jobs]
        averaged = aggregate([(p, len(shards[k])) for k, (p, _) in zip(active, results)])
        state.params = _apply_server(state.params, averaged, cfg.server_lr)
        state.round += 1
        state.bytes_down += size * len(active)
        state.bytes_up += size * len(active)
        state.last_round_bytes = 2 * size * len(active)
        report = RoundReport(
            round=state.round,
            client_losses={k: loss for k, (_, loss) in zip(active, results)},
            test_acc=accuracy(state.params, fed.test_set),
            bytes=state.last_round_bytes,
            lr=lr,
            phase=phase,
        )
        logger.debug("round %d test_acc=%.4f", report.round, report.test_acc)
        history.append(report)
    return history


def run_fedavg(fed: FederationData, cfg: FederationConfig, init: ParameterSet,
               exclude=None, max_workers: int | None = None):
    """Train from ``init`` for ``cfg.rounds`` rounds with full participation.

    Returns the final :class:`FederationState` and one :class:`RoundReport`
    per round.
    """
    state = FederationState(init.copy())
    history = fedavg_rounds(state, fed, cfg, cfg.rounds, exclude, max_workers)
    return state, history


def unlearning_round(state: FederationState, unlearned: ParameterSet, u: int) -> FederationState:
    """The special round in which only client ``u`` takes part.

    It costs one broadcast of the global model to ``u`` and one upload of the
    unlearned model back, exactly like a one-participant FedAvg round.
    """
    state.params.check_compatible(unlearned)
    size = serialized_size(unlearned.arch)
    out = FederationState(
        params=unlearned.copy(),
        round=state.round + 1,
        bytes_up=state.bytes_up + size,
        bytes_down=state.bytes_down + size,
        last_round_bytes=2 * size,
    )
    logger.info("unlearning round for client %d at round %d", u, out.round)
    return out


@dataclass
class RecoveryResult:
    rounds: int | None
    converged: bool
    target: float
    history: list[RoundReport] = field(default_factory=list)
    state: FederationState | None = None
    initial_test_acc: float = 0.0


def recover(state: FederationState, fed: FederationData, cfg: FederationConfig,
            exclude, target_test_acc: float, max_rounds: int,
            max_workers: int | None = None) -> RecoveryResult:
    """Resume FedAvg until test accuracy reaches ``target_test_acc``.

    Counts rounds from the first FedAvg round after unlearning; returns 0 if
    the model is already at or above the target.
    """
    if not np.isfinite(target_test_acc):
        raise DomainError("recovery target must be finite")
    if max_rounds < 1:
        raise DomainError("max_rounds must be at least 1")
    _participants(fed, exclude)
    state = state.copy()
    acc0 = accuracy(state.params, fed.test_set)
    if acc0 >= target_test_acc:
        return RecoveryResult(0, True, target_test_acc, [], state, acc0)
    history = []
    for r in range(1, max_rounds + 1):
        history += fedavg_rounds(state, fed, cfg, 1, exclude, max_workers, phase="recover")
        if history[-1].test_acc >= target_test_acc:
            return RecoveryResult(r, True, target_test_acc, history, state, acc0)
    logger.warning("recovery did not reach %.4f within %d rounds", target_test_acc, max_rounds)
    return RecoveryResult(None, False, target_test_acc, history, state, acc0)


def communication_efficiency(retrain_rounds: int, recovery_rounds: int) -> float:
    return retrain_rounds / max(recovery_rounds, 1)
