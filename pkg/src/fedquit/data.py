"""Datasets, synthetic blobs, CSV ingestion and client partitioning."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DomainError, ParseError


class LabeledExample(NamedTuple):
    features: np.ndarray
    label: int


@dataclass
class Dataset:
    """Feature matrix ``x`` of shape ``(n, d)`` with integer labels ``y``."""

    x: np.ndarray
    y: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2:
            raise DomainError(f"features must be a 2-D array, got shape {self.x.shape}")
        if self.y.shape != (self.x.shape[0],):
            raise DomainError("one label per example is required")
        if self.num_classes < 2:
            raise DomainError("a dataset needs at least 2 classes")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise DomainError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(self.x)):
            raise DomainError("features must be finite")

    def __len__(self):
        return len(self.y)

    def __getitem__(self, i) -> LabeledExample:
        return LabeledExample(self.x[i], int(self.y[i]))

    @property
    def feature_dim(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.x[idx], self.y[idx], self.num_classes)

    def label_histogram(self) -> list[int]:
        return np.bincount(self.y, minlength=self.num_classes).tolist()

    @classmethod
    def concat(cls, parts: list[Dataset]) -> Dataset:
        if not parts:
            raise DomainError("nothing to concatenate")
        c = parts[0].num_classes
        return cls(np.concatenate([p.x for p in parts]), np.concatenate([p.y for p in parts]), c)


def generate_blobs(num_classes: int, per_class: int, dim: int, spread: float,
                   seed: int) -> Dataset:
    """Gaussian clusters around class means spaced evenly on the unit sphere.

    In 2-D the means sit at angles ``2*pi*c/C``; in higher dimensions the
    first two coordinates carry the circle and the remaining mass is zero,
    except for ``dim == 1`` where means are spread over ``[-1, 1]``.
    """
    if num_classes < 2 or per_class < 1 or dim < 1:
        raise DomainError("need num_classes >= 2, per_class >= 1 and dim >= 1")
    if not spread > 0:
        raise DomainError("spread must be positive")
    means = np.zeros((num_classes, dim))
    if dim == 1:
        means[:, 0] = np.linspace(-1.0, 1.0, num_classes)
    else:
        angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
        means[:, 0] = np.cos(angles)
        means[:, 1] = np.sin(angles)
    rng = np.random.default_rng(seed)
    y = np.repeat(np.arange(num_classes), per_class)
    x = means[y] + spread * rng.standard_normal((len(y), dim))
    return Dataset(x, y, num_classes)


def load_csv(path, num_classes: int | None = None) -> Dataset:
    """Read rows of ``label,f1,...,fd``.  Row numbers in errors are 1-based."""
    labels, rows = [], []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < 2:
                raise ParseError(f"row {lineno}: need a label and at least one feature")
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ParseError(
                    f"row {lineno}: ragged row with {len(row) - 1} features, expected {width - 1}"
                )
            try:
                label = int(row[0])
                feats = [float(c) for c in row[1:]]
            except ValueError as exc:
                raise ParseError(f"row {lineno}: non-numeric cell ({exc})") from None
            if label < 0 or (num_classes is not None and label >= num_classes):
                raise ParseError(f"row {lineno}: label {label} outside [0, {num_classes})")
            labels.append(label)
            rows.append(feats)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    c = num_classes if num_classes is not None else max(max(labels) + 1, 2)
    return Dataset(np.array(rows), np.array(labels), c)


def save_csv(data: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for xi, yi in zip(data.x, data.y):
            w.writerow([int(yi)] + [repr(float(v)) for v in xi])


@dataclass(frozen=True)
class PartitionSpec:
    kind: str = "dirichlet"  # "iid" or "dirichlet"
    num_clients: int = 10
    alpha: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("iid", "dirichlet"):
            raise DomainError(f"unknown partition kind {self.kind!r}")
        if self.num_clients < 2:
            raise DomainError("a federation needs at least 2 clients")
        if self.kind == "dirichlet" and not self.alpha > 0:
            raise DomainError(f"alpha must be positive, got {self.alpha}")


@dataclass
class FederationData:
    """Client shards plus the held-out test set.

    Shards should be read through :meth:`shard`, which counts accesses per
    client so tests can prove an excluded client was never touched.
    """

    client_shards: list[Dataset]
    test_set: Dataset
    access_counts: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.access_counts:
            self.access_counts = [0] * len(self.client_shards)

    @property
    def num_clients(self) -> int:
        return len(self.client_shards)

    @property
    def num_classes(self) -> int:
        return self.test_set.num_classes

    def shard(self, k: int) -> Dataset:
        if not 0 <= k < self.num_clients:
            raise IndexError(f"client {k} out of range for {self.num_clients} clients")
        self.access_counts[k] += 1
        return self.client_shards[k]

    def shard_size(self, k: int) -> int:
        # sizes are public metadata (they are sent with every update)
        return len(self.client_shards[k])

    def reset_access_counts(self) -> None:
        self.access_counts = [0] * self.num_clients


def partition(data: Dataset, spec: PartitionSpec) -> list[Dataset]:
    """Split ``data`` into ``spec.num_clients`` disjoint, nonempty shards."""
    k = spec.num_clients
    n = len(data)
    if n < k:
        raise DomainError(f"cannot split {n} examples over {k} clients")
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "iid":
        order = rng.permutation(n)
        # array_split puts the remainder on the lowest-index clients
        owners = [np.sort(part) for part in np.array_split(order, k)]
        return [data.subset(idx) for idx in owners]

    assigned: list[list[int]] = [[] for _ in range(k)]
    for c in range(data.num_classes):
        idx = np.flatnonzero(data.y == c)
        if len(idx) == 0:
            continue
        idx = rng.permutation(idx)
        props = rng.dirichlet(np.full(k, spec.alpha))
        counts = rng.multinomial(len(idx), props)
        start = 0
        for client, cnt in enumerate(counts):
            assigned[client].extend(idx[start:start + cnt].tolist())
            start += cnt

    while True:
        empty = [i for i in range(k) if not assigned[i]]
        if not empty:
            break
        donor = max(range(k), key=lambda i: (len(assigned[i]), -i))
        pick = int(rng.integers(len(assigned[donor])))
        assigned[empty[0]].append(assigned[donor].pop(pick))

    return [data.subset(np.sort(np.array(a, dtype=np.int64))) for a in assigned]


def build_federation(train: Dataset, test: Dataset, spec: PartitionSpec) -> FederationData:
    return FederationData(partition(train, spec), test)


def forget_retain_split(fed: FederationData, u: int) -> tuple[Dataset, Dataset]:
    """Client ``u``'s shard and the concatenation of every other shard."""
    if not 0 <= u < fed.num_clients:
        raise IndexError(f"client {u} out of range for {fed.num_clients} clients")
    forget = fed.shard(u)
    retain = Dataset.concat([fed.shard(k) for k in range(fed.num_clients) if k != u])
    return forget, retain


def retain_set(fed: FederationData, u: int) -> Dataset:
    """Union of all shards except ``u``, without touching shard ``u``."""
    if not 0 <= u < fed.num_clients:
        raise IndexError(f"client {u} out of range for {fed.num_clients} clients")
    return Dataset.concat([fed.shard(k) for k in range(fed.num_clients) if k != u])


def label_entropy(d: Dataset) -> float:
    hist = np.asarray(d.label_histogram(), dtype=np.float64)
    p = hist[hist > 0] / hist.sum()
    return float(-np.sum(p * np.log(p)))


def partition_manifest(spec: PartitionSpec, shards: list[Dataset]) -> dict:
    return {
        "kind": spec.kind,
        "num_clients": spec.num_clients,
        "alpha": spec.alpha if spec.kind == "dirichlet" else None,
        "seed": spec.seed,
        "client_sizes": [len(s) for s in shards],
        "label_histograms": [s.label_histogram() for s in shards],
    }


def write_partition_manifest(spec: PartitionSpec, shards: list[Dataset], path) -> None:
    with open(path, "w") as fh:
        json.dump(partition_manifest(spec, shards), fh, indent=2)
