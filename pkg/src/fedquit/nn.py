"""Dense MLP classifier with exact backpropagation.

Everything works on float64 numpy arrays.  A forward pass maps a batch of
feature vectors ``(n, d)`` to logits ``(n, C)``; weights are stored as
``(fan_in, fan_out)`` matrices so a layer is ``h @ W + b``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ParseError, ShapeError

PROB_FLOOR = 1e-12

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class MLPArchitecture:
    layer_sizes: tuple[int, ...]
    hidden_activation: str = "relu"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise DomainError("an MLP needs at least an input and an output layer")
        if any(s < 1 for s in sizes):
            raise DomainError(f"layer sizes must be positive, got {sizes}")
        if sizes[-1] < 2:
            raise DomainError("the output layer needs at least 2 classes")
        if self.hidden_activation not in ACTIVATIONS:
            raise DomainError(f"unknown activation {self.hidden_activation!r}")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def num_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def num_params(self) -> int:
        s = self.layer_sizes
        return sum(s[i] * s[i + 1] + s[i + 1] for i in range(len(s) - 1))


@dataclass
class ParameterSet:
    """Weights and biases of an MLP, layer by layer.

    Also used for gradients, which have the same shapes.
    """

    arch: MLPArchitecture
    weights: list[np.ndarray]
    biases: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        s = self.arch.layer_sizes
        if len(self.weights) != len(s) - 1 or len(self.biases) != len(s) - 1:
            raise ShapeError("layer count does not match the architecture")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (s[i], s[i + 1]) or b.shape != (s[i + 1],):
                raise ShapeError(
                    f"layer {i}: expected {(s[i], s[i + 1])} and {(s[i + 1],)}, "
                    f"got {w.shape} and {b.shape}"
                )

    @classmethod
    def zeros(cls, arch: MLPArchitecture) -> ParameterSet:
        s = arch.layer_sizes
        return cls(
            arch,
            [np.zeros((s[i], s[i + 1])) for i in range(len(s) - 1)],
            [np.zeros(s[i + 1]) for i in range(len(s) - 1)],
        )

    @classmethod
    def from_flat(cls, arch: MLPArchitecture, flat: np.ndarray) -> ParameterSet:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (arch.num_params,):
            raise ShapeError(f"expected {arch.num_params} values, got {flat.shape}")
        s = arch.layer_sizes
        weights, biases, pos = [], [], 0
        for i in range(len(s) - 1):
            n = s[i] * s[i + 1]
            weights.append(flat[pos:pos + n].reshape(s[i], s[i + 1]).copy())
            pos += n
            biases.append(flat[pos:pos + s[i + 1]].copy())
            pos += s[i + 1]
        return cls(arch, weights, biases)

    def flat(self) -> np.ndarray:
        """All entries in serialization order: per layer, weights row-major then bias."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def copy(self) -> ParameterSet:
        return ParameterSet(self.arch, [w.copy() for w in self.weights],
                            [b.copy() for b in self.biases])

    def arrays(self) -> list[np.ndarray]:
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    def check_compatible(self, other: ParameterSet) -> None:
        if self.arch.layer_sizes != other.arch.layer_sizes:
            raise ShapeError(
                f"architectures differ: {self.arch.layer_sizes} vs {other.arch.layer_sizes}"
            )

    def norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(a * a)) for a in self.arrays())))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def equals(self, other: ParameterSet) -> bool:
        """Bitwise equality of every entry."""
        if self.arch.layer_sizes != other.arch.layer_sizes:
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


def init_params(arch: MLPArchitecture, rng: np.random.Generator) -> ParameterSet:
    """Glorot-uniform weights, zero biases."""
    s = arch.layer_sizes
    weights, biases = [], []
    for i in range(len(s) - 1):
        limit = np.sqrt(6.0 / (s[i] + s[i + 1]))
        weights.append(rng.uniform(-limit, limit, size=(s[i], s[i + 1])))
        biases.append(np.zeros(s[i + 1]))
    return ParameterSet(arch, weights, biases)


def _activate(a, kind):
    if kind == "relu":
        return np.maximum(a, 0.0)
    return np.tanh(a)


def _activation_grad(a, h, kind):
    # a: pre-activation, h: post-activation
    if kind == "relu":
        return (a > 0).astype(np.float64)
    return 1.0 - h * h


def _as_batch(params: ParameterSet, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.arch.input_dim:
        raise ShapeError(
            f"expected features of dimension {params.arch.input_dim}, got shape {x.shape}"
        )
    return x, single


def forward(params: ParameterSet, x) -> np.ndarray:
    """Logits for one feature vector ``(d,)`` or a batch ``(n, d)``."""
    h, single = _as_batch(params, x)
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            h = _activate(h, params.arch.hidden_activation)
    return h[0] if single else h


def softmax(z, tau: float = 1.0) -> np.ndarray:
    """Temperature softmax over the last axis, stabilised by max subtraction."""
    if not tau > 0:
        raise DomainError(f"temperature must be positive, got {tau}")
    z = np.asarray(z, dtype=np.float64) / tau
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"distribution shapes differ: {a.shape} vs {b.shape}")
    return a, b


def cross_entropy(q, p):
    """H(q, p) = -sum q log p over the last axis, with p floored at 1e-12."""
    q, p = _check_pair(q, p)
    return -np.sum(q * np.log(np.maximum(p, PROB_FLOOR)), axis=-1)


def kl_divergence(teacher, student):
    """KL(teacher || student) over the last axis.

    Terms with zero teacher mass contribute 0; the student is floored at 1e-12.
    """
    t, s = _check_pair(teacher, student)
    safe_t = np.where(t > 0, t, 1.0)
    terms = np.where(t > 0, t * (np.log(safe_t) - np.log(np.maximum(s, PROB_FLOOR))), 0.0)
    return np.sum(terms, axis=-1)


LOSSES = ("cross_entropy", "kl")


def backprop(params: ParameterSet, x, targets, loss: str = "cross_entropy",
             tau: float = 1.0) -> tuple[ParameterSet, float]:
    """Gradient of the mean batch loss and the loss value.

    ``targets`` is an ``(n, C)`` array of target distributions: one-hot rows
    for hard-label cross-entropy, teacher probabilities for ``"kl"``.  Both
    losses share the logit gradient ``(softmax(z / tau) - target) / (n * tau)``
    because the teacher entropy is constant in the student; the returned loss
    value for ``"kl"`` is the full divergence.
    """
    if loss not in LOSSES:
        raise DomainError(f"unknown loss {loss!r}")
    x, _ = _as_batch(params, x)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim == 1:
        targets = targets[None, :]
    n = x.shape[0]
    if n == 0:
        raise DomainError("backprop needs a nonempty batch")
    if targets.shape != (n, params.arch.num_classes):
        raise ShapeError(f"targets shape {targets.shape} does not match batch of {n}")

    kind = params.arch.hidden_activation
    last = len(params.weights) - 1
    inputs, pre = [], []
    h = x
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        a = h @ w + b
        pre.append(a)
        h = _activate(a, kind) if i < last else a

    probs = softmax(h, tau)
    if loss == "kl":
        value = float(np.mean(kl_divergence(targets, probs)))
    else:
        value = float(np.mean(cross_entropy(targets, probs)))

    delta = (probs - targets) / (n * tau)
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for i in range(last, -1, -1):
        gw[i] = inputs[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i].T) * _activation_grad(pre[i - 1], inputs[i], kind)
    return ParameterSet(params.arch, gw, gb), value


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


class SGD:
    kind = "sgd"

    def __init__(self, lr: float):
        if not lr >= 0:
            raise DomainError(f"learning rate must be non-negative, got {lr}")
        self.lr = lr

    def step(self, params: ParameterSet, grads: ParameterSet) -> ParameterSet:
        params.check_compatible(grads)
        if self.lr == 0:
            return params.copy()
        return ParameterSet(
            params.arch,
            [w - self.lr * g for w, g in zip(params.weights, grads.weights)],
            [b - self.lr * g for b, g in zip(params.biases, grads.biases)],
        )


class Adam:
    """Adam with bias-corrected moments; moment buffers are created on first step."""

    kind = "adam"

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        if not lr >= 0:
            raise DomainError(f"learning rate must be non-negative, got {lr}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def step(self, params: ParameterSet, grads: ParameterSet) -> ParameterSet:
        params.check_compatible(grads)
        g_all = grads.arrays()
        if self.m is None:
            self.m = [np.zeros_like(g) for g in g_all]
            self.v = [np.zeros_like(g) for g in g_all]
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        out = []
        for p, g, m, v in zip(params.arrays(), g_all, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            out.append(p - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps))
        return ParameterSet(params.arch, out[0::2], out[1::2])


def make_optimizer(kind: str, lr: float):
    if kind == "sgd":
        return SGD(lr)
    if kind == "adam":
        return Adam(lr)
    raise DomainError(f"unknown optimizer {kind!r}")


# Binary format: uint32 layer count, uint32 layer sizes, then float64 values
# in ParameterSet.flat() order.  All little-endian.

def serialized_size(arch: MLPArchitecture) -> int:
    return 4 * (1 + len(arch.layer_sizes)) + 8 * arch.num_params


def serialize(params: ParameterSet) -> bytes:
    sizes = params.arch.layer_sizes
    header = struct.pack(f"<I{len(sizes)}I", len(sizes), *sizes)
    return header + params.flat().astype("<f8").tobytes()


def deserialize(blob: bytes, hidden_activation: str = "relu") -> ParameterSet:
    if len(blob) < 4:
        raise ParseError("checkpoint too short for a header")
    (count,) = struct.unpack_from("<I", blob, 0)
    if len(blob) < 4 * (1 + count):
        raise ParseError("checkpoint header truncated")
    sizes = struct.unpack_from(f"<{count}I", blob, 4)
    arch = MLPArchitecture(sizes, hidden_activation)
    body = blob[4 * (1 + count):]
    if len(body) != 8 * arch.num_params:
        raise ParseError(
            f"checkpoint body has {len(body)} bytes, expected {8 * arch.num_params}"
        )
    return ParameterSet.from_flat(arch, np.frombuffer(body, dtype="<f8"))


def save_checkpoint(params: ParameterSet, path) -> int:
    blob = serialize(params)
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


def load_checkpoint(path, hidden_activation: str = "relu") -> ParameterSet:
    with open(path, "rb") as fh:
        return deserialize(fh.read(), hidden_activation)
