"""
Feedforward softmax classifiers trained with Adam and early stopping.

Everything is float64 numpy. Networks sharing a :class:`NetworkSpec` can be
trained together by :func:`train_many`, which stacks their parameters along
a leading axis so one batched matmul serves all of them. Each network keeps
its own initialisation and shuffling stream, so its trajectory is the same
whether it is trained alone or in a stack.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ._rng import as_generator
from .array_signal import FeatureStats

__all__ = [
    "NetworkSpec",
    "Network",
    "TrainConfig",
    "TrainReport",
    "TrainingError",
    "EarlyStopping",
    "AdamState",
    "init_network",
    "forward",
    "loss",
    "mean_loss",
    "loss_and_gradients",
    "train",
    "train_many",
    "save_network",
    "load_network",
    "PROB_FLOOR",
]

PROB_FLOOR = 1e-12


class TrainingError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message, epoch=None, batch=None, classifier=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.classifier = classifier


@dataclass(frozen=True)
class NetworkSpec:
    input_size: int
    hidden_sizes: tuple
    output_size: int

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if len(self.hidden_sizes) < 1:
            raise ValueError("at least one hidden layer is required")
        if min((self.input_size, self.output_size) + self.hidden_sizes) < 1:
            raise ValueError("all layer sizes must be >= 1")

    @property
    def layer_sizes(self) -> tuple:
        return (self.input_size,) + self.hidden_sizes + (self.output_size,)

    def to_dict(self) -> dict:
        return {
            "input_size": self.input_size,
            "hidden_sizes": list(self.hidden_sizes),
            "output_size": self.output_size,
        }


@dataclass
class Network:
    """ReLU hidden layers, softmax output. ``weights[l]`` has shape (in, out)."""

    spec: NetworkSpec
    weights: list
    biases: list

    def parameters(self) -> list:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self) -> "Network":
        return Network(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass
class TrainConfig:
    alpha: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 32
    patience_epochs: int = 3
    max_epochs: int = 200
    seed: object = 0

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class TrainReport:
    epochs_run: int = 0
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = ""

    def to_dict(self) -> dict:
        return {
            "epochs_run": self.epochs_run,
            "train_losses": self.train_losses,
            "val_losses": self.val_losses,
            "best_epoch": self.best_epoch,
            "stop_reason": self.stop_reason,
        }


class EarlyStopping:
    """Stop once ``patience`` successive epochs fail to beat the best loss."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.bad_epochs = 0
        self.epoch = 0

    def update(self, val_loss: float) -> bool:
        """Record one epoch; returns True when it is the new best."""
        self.epoch += 1
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = self.epoch
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


def init_network(spec: NetworkSpec, seed=None) -> Network:
    """Glorot-uniform weights, zero biases."""
    rng = as_generator(seed)
    weights, biases = [], []
    sizes = spec.layer_sizes
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Network(spec, weights, biases)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(net: Network, features) -> np.ndarray:
    """Class probabilities for one feature vector or a batch (rows)."""
    x = np.asarray(features, dtype=np.float64)
    if x.shape[-1] != net.spec.input_size:
        raise ValueError(f"expected {net.spec.input_size} features, got {x.shape[-1]}")
    a = x
    last = len(net.weights) - 1
    for n, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ W + b
        a = z if n == last else np.maximum(z, 0.0)
    return _softmax(a)


def loss(predicted, target) -> float:
    """Categorical cross entropy against a one-hot target, floored at 1e-12."""
    predicted = np.asarray(predicted, dtype=np.float64)
    target = np.asarray(target)
    if predicted.shape != target.shape:
        raise ValueError("predicted and target lengths differ")
    return float(-np.log(max(predicted[int(np.argmax(target))], PROB_FLOOR)))


def mean_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean floored cross entropy for rows of ``probs`` and integer class labels."""
    p = np.take_along_axis(probs, labels[..., None], axis=-1)[..., 0]
    return float(-np.log(np.maximum(p, PROB_FLOOR)).mean())


def loss_and_gradients(net: Network, X, labels) -> tuple[float, list]:
    """Mean cross entropy over a batch and its gradient w.r.t. every parameter.

    Gradients are returned in :meth:`Network.parameters` order.
    """
    stack = _Stack.from_networks([net])
    X = np.asarray(X, dtype=np.float64)[None]
    labels = np.asarray(labels)[None]
    value, grads = stack.loss_and_grads(X, labels)
    return float(value[0]), [g[0] for g in grads]


class AdamState:
    """Bias-corrected Adam moments for a list of parameter arrays."""

    def __init__(self, params: Sequence[np.ndarray], config: TrainConfig):
        self.config = config
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]):
        """Update ``params`` in place."""
        c = self.config
        self.t += 1
        corr1 = 1.0 - c.beta1**self.t
        corr2 = 1.0 - c.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * (g * g)
            p -= c.alpha * (m / corr1) / (np.sqrt(v / corr2) + c.epsilon)

    def select(self, keep: np.ndarray):
        self.m = [m[keep] for m in self.m]
        self.v = [v[keep] for v in self.v]


class _Stack:
    """S networks of one spec with parameters stacked on axis 0."""

    def __init__(self, spec: NetworkSpec, weights: list, biases: list):
        self.spec = spec
        self.weights = weights
        self.biases = biases

    @classmethod
    def from_networks(cls, nets: Sequence[Network]) -> "_Stack":
        spec = nets[0].spec
        if any(n.spec != spec for n in nets):
            raise ValueError("all stacked networks must share one spec")
        depth = len(spec.layer_sizes) - 1
        weights = [np.stack([n.weights[l] for n in nets]) for l in range(depth)]
        biases = [np.stack([n.biases[l] for n in nets]) for l in range(depth)]
        return cls(spec, weights, biases)

    def network(self, s: int) -> Network:
        return Network(
            self.spec, [w[s].copy() for w in self.weights], [b[s].copy() for b in self.biases]
        )

    def params(self) -> list:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def select(self, keep: np.ndarray):
        self.weights = [w[keep] for w in self.weights]
        self.biases = [b[keep] for b in self.biases]

    def predict(self, X: np.ndarray) -> np.ndarray:
        """X is (S, B, in) or (B, in) shared by all networks; returns (S, B, out)."""
        a = X
        last = len(self.weights) - 1
        for n, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = np.matmul(a, W) + b[:, None, :]
            a = z if n == last else np.maximum(z, 0.0)
        return _softmax(a)

    def loss_and_grads(self, X: np.ndarray, labels: np.ndarray):
        """Per-network mean cross entropy and gradients.

        X is (S, B, in), labels (S, B) integer classes.
        """
        acts = [X]
        pre = []
        a = X
        last = len(self.weights) - 1
        for n, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = np.matmul(a, W) + b[:, None, :]
            pre.append(z)
            a = z if n == last else np.maximum(z, 0.0)
            acts.append(a)
        probs = _softmax(a)
        S, B = labels.shape
        picked = np.take_along_axis(probs, labels[..., None], axis=-1)[..., 0]
        value = -np.log(np.maximum(picked, PROB_FLOOR)).mean(axis=1)

        delta = probs
        delta[np.arange(S)[:, None], np.arange(B)[None, :], labels] -= 1.0
        delta /= B
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        for n in range(last, -1, -1):
            grads_w[n] = np.matmul(np.swapaxes(acts[n], 1, 2), delta)
            grads_b[n] = delta.sum(axis=1)
            if n:
                delta = np.matmul(delta, np.swapaxes(self.weights[n], 1, 2))
                delta *= pre[n - 1] > 0
        grads = [g for pair in zip(grads_w, grads_b) for g in pair]
        return value, grads


def _as_labels(targets) -> np.ndarray:
    t = np.asarray(targets)
    if t.ndim == 2:
        return np.argmax(t, axis=1)
    return t.astype(np.int64)


def train(net: Network, train_pairs, val_pairs, config: TrainConfig):
    """Train one network; returns (best-validation network, report).

    ``train_pairs`` and ``val_pairs`` are ``(features, targets)`` with
    targets either one-hot rows or integer class labels.
    """
    X_trn, y_trn = train_pairs
    X_val, y_val = val_pairs
    [(best, report)] = train_many(
        [net], X_trn, [_as_labels(y_trn)], X_val, [_as_labels(y_val)], config, [config.seed]
    )
    return best, report


def train_many(
    nets: Sequence[Network],
    X_train: np.ndarray,
    train_labels: Sequence[np.ndarray],
    X_val: np.ndarray,
    val_labels: Sequence[np.ndarray],
    config: TrainConfig,
    shuffle_seeds: Sequence,
    ids: Sequence[int] | None = None,
    log=None,
) -> list:
    """Train same-spec networks in lockstep on shared features.

    Each network has its own labels, shuffling stream and early-stopping
    state; finished networks are dropped from the stack at epoch ends.
    Returns ``[(network, TrainReport), ...]`` in input order.
    """
    X_train = np.ascontiguousarray(X_train, dtype=np.float64)
    X_val = np.ascontiguousarray(X_val, dtype=np.float64)
    n_trn, n_val = X_train.shape[0], X_val.shape[0]
    if n_trn == 0 or n_val == 0:
        raise ValueError("training and validation splits must be non-empty")
    S = len(nets)
    ids = list(range(S)) if ids is None else list(ids)
    y_trn = np.stack([np.asarray(y, dtype=np.int64) for y in train_labels])
    y_val = np.stack([np.asarray(y, dtype=np.int64) for y in val_labels])
    out_size = nets[0].spec.output_size
    if y_trn.max(initial=0) >= out_size or y_val.max(initial=0) >= out_size:
        raise ValueError("target class index exceeds the output size")

    stack = _Stack.from_networks(nets)
    adam = AdamState(stack.params(), config)
    rngs = [as_generator(s) for s in shuffle_seeds]
    stoppers = [EarlyStopping(config.patience_epochs) for _ in range(S)]
    reports = [TrainReport() for _ in range(S)]
    best = [nets[s].copy() for s in range(S)]
    alive = np.arange(S)  # original positions of the networks still in the stack
    bs = config.batch_size
    n_batches = -(-n_trn // bs)

    for epoch in range(1, config.max_epochs + 1):
        perms = np.stack([rngs[s].permutation(n_trn) for s in alive])
        rows = np.arange(len(alive))[:, None]
        total = np.zeros(len(alive))
        for b in range(n_batches):
            idx = perms[:, b * bs : (b + 1) * bs]
            value, grads = stack.loss_and_grads(X_train[idx], y_trn[alive][rows, idx])
            if not np.all(np.isfinite(value)):
                bad = int(alive[np.flatnonzero(~np.isfinite(value))[0]])
                raise TrainingError(
                    f"non-finite loss for classifier {ids[bad]} at epoch {epoch}, batch {b}",
                    epoch=epoch,
                    batch=b,
                    classifier=ids[bad],
                )
            total += value * idx.shape[1]
            adam.step(stack.params(), grads)

        val_probs = stack.predict(X_val)
        keep = []
        for pos, s in enumerate(alive):
            v = mean_loss(val_probs[pos], y_val[s])
            rep = reports[s]
            rep.train_losses.append(float(total[pos] / n_trn))
            rep.val_losses.append(v)
            rep.epochs_run = epoch
            if not np.isfinite(v):
                raise TrainingError(
                    f"non-finite validation loss for classifier {ids[s]} at epoch {epoch}",
                    epoch=epoch,
                    classifier=ids[s],
                )
            if stoppers[s].update(v):
                best[s] = stack.network(pos)
            if stoppers[s].should_stop:
                rep.stop_reason = "patience"
            else:
                keep.append(pos)
        if log is not None:
            log(epoch, len(keep), float(np.mean([reports[s].val_losses[-1] for s in alive])))
        if len(keep) < len(alive):
            keep = np.asarray(keep, dtype=np.int64)
            stack.select(keep)
            adam.select(keep)
            alive = alive[keep]
        if len(alive) == 0:
            break
    for s in alive:
        reports[s].stop_reason = "max_epochs"
    for s in range(S):
        reports[s].best_epoch = stoppers[s].best_epoch
    return list(zip(best, reports))


def save_network(
    path,
    net: Network,
    stats: FeatureStats | None = None,
    framework_digest: str | None = None,
    classifier_index: int | None = None,
) -> Path:
    """Write an ``.npz`` model file (spec, float64 tensors, stats, framework hash)."""
    path = Path(path)
    arrays = {}
    for n, (W, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"W{n}"] = W
        arrays[f"b{n}"] = b
    meta = {
        "spec": net.spec.to_dict(),
        "framework_digest": framework_digest,
        "classifier_index": classifier_index,
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    if stats is not None:
        arrays["feature_means"] = stats.means
        arrays["feature_std_devs"] = stats.std_devs
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_network(path) -> tuple[Network, dict]:
    """Inverse of :func:`save_network`; returns (network, metadata)."""
    with np.load(path) as data:
        meta = json.loads(data["meta"].tobytes().decode())
        spec = NetworkSpec(**meta["spec"])
        depth = len(spec.layer_sizes) - 1
        net = Network(
            spec,
            [data[f"W{n}"].copy() for n in range(depth)],
            [data[f"b{n}"].copy() for n in range(depth)],
        )
        if "feature_means" in data:
            meta["stats"] = FeatureStats(data["feature_means"], data["feature_std_devs"])
    return net, meta
