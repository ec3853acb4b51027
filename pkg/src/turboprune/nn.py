"""Dense MLP engine: forward pass, likelihoods, exact backprop, weight file."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError

TASKS = ("classification", "regression")

WEIGHTS_MAGIC = b"TVBI"
WEIGHTS_VERSION = 1


@dataclass(frozen=True)
class NetworkDef:
    """Fully connected architecture: layer sizes, ReLU on hidden layers,
    identity on the output layer."""

    sizes: tuple[int, ...]
    task: str = "classification"

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if len(self.sizes) < 2:
            raise ConfigError("network needs at least one weight layer")
        if any(s < 1 for s in self.sizes):
            raise ConfigError(f"layer sizes must be >= 1, got {self.sizes}")
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    @property
    def weight_dims(self) -> list[tuple[int, int]]:
        return [(self.sizes[i], self.sizes[i + 1]) for i in range(self.n_layers)]


@dataclass(frozen=True)
class LikelihoodModel:
    kind: str = "classification"
    noise_var: float = 1.0  # observation noise, regression only

    def __post_init__(self):
        if self.kind not in TASKS:
            raise ConfigError(f"likelihood kind must be one of {TASKS}")
        if self.kind == "regression" and not self.noise_var > 0:
            raise ConfigError(f"noise_var must be > 0, got {self.noise_var}")


@dataclass
class Dataset:
    """Paired inputs/targets; targets are int labels for classification or
    float arrays for regression."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if len(self.x) != len(self.y):
            raise ConfigError(f"{len(self.x)} inputs vs {len(self.y)} targets")

    def __len__(self) -> int:
        return len(self.x)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx])


@dataclass
class MlpWeights:
    mats: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    @property
    def n_weights(self) -> int:
        return sum(w.size for w in self.mats)

    def copy(self) -> "MlpWeights":
        return MlpWeights([w.copy() for w in self.mats], [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.mats])

    def with_flat(self, flat: np.ndarray) -> "MlpWeights":
        """New weights with matrices replaced from a flat vector; biases are shared."""
        mats = []
        pos = 0
        for w in self.mats:
            mats.append(flat[pos : pos + w.size].reshape(w.shape).copy())
            pos += w.size
        if pos != flat.size:
            raise ConfigError(f"flat vector has {flat.size} entries, expected {pos}")
        return MlpWeights(mats, self.biases)


def init_weights(net: NetworkDef, rng: np.random.Generator) -> MlpWeights:
    """He-style Gaussian init for the matrices, zero biases."""
    mats, biases = [], []
    for k, m in net.weight_dims:
        mats.append(rng.normal(0.0, np.sqrt(2.0 / k), size=(k, m)))
        biases.append(np.zeros(m))
    return MlpWeights(mats, biases)


def forward(net: NetworkDef, w: MlpWeights, x: np.ndarray) -> np.ndarray:
    """Deterministic forward pass; accepts one sample or a batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != net.sizes[0]:
        raise ValueError(f"input width {h.shape[1]} does not match n0={net.sizes[0]}")
    last = net.n_layers - 1
    for l, (mat, bias) in enumerate(zip(w.mats, w.biases)):
        h = h @ mat + bias
        if l < last:
            h = np.maximum(h, 0.0)
    return h[0] if single else h


def _forward_cached(net, w, x):
    acts = [x]
    pre = []
    h = x
    last = net.n_layers - 1
    for l, (mat, bias) in enumerate(zip(w.mats, w.biases)):
        z = h @ mat + bias
        if l < last:
            pre.append(z)
            h = np.maximum(z, 0.0)
        else:
            h = z
        acts.append(h)
    return acts, pre


def _data_loss(net, out, batch: Dataset, model: LikelihoodModel):
    """Batch-mean negative log density and its gradient w.r.t. the output."""
    n = len(batch)
    if model.kind == "classification":
        y = np.asarray(batch.y, dtype=int)
        zmax = out.max(axis=1, keepdims=True)
        ez = np.exp(out - zmax)
        sums = ez.sum(axis=1, keepdims=True)
        log_z = np.log(sums) + zmax
        nll = float(np.mean(log_z[:, 0] - out[np.arange(n), y]))
        probs = ez / sums
        dout = probs
        dout[np.arange(n), y] -= 1.0
        dout /= n
    else:
        y = np.asarray(batch.y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        resid = out - y
        dim = y.shape[1]
        nll = float(
            np.mean(np.sum(resid**2, axis=1)) / (2.0 * model.noise_var)
            + 0.5 * dim * np.log(2.0 * np.pi * model.noise_var)
        )
        dout = resid / (model.noise_var * n)
    return nll, dout


def neg_log_likelihood(net, w, batch: Dataset, model: LikelihoodModel) -> float:
    """Mean negative log likelihood over the batch (a true -log density:
    the Gaussian normalizer is included for regression)."""
    if len(batch) == 0:
        raise ValueError("batch must be nonempty")
    out = forward(net, w, batch.x)
    nll, _ = _data_loss(net, out, batch, model)
    return nll


def backward(net, w, batch: Dataset, model: LikelihoodModel) -> MlpWeights:
    """Exact gradient of neg_log_likelihood w.r.t. every weight and bias."""
    return forward_backward(net, w, batch, model)[1]


def forward_backward(net, w, batch: Dataset, model: LikelihoodModel):
    if len(batch) == 0:
        raise ValueError("batch must be nonempty")
    x = np.asarray(batch.x, dtype=float)
    if x.shape[1] != net.sizes[0]:
        raise ValueError(f"input width {x.shape[1]} does not match n0={net.sizes[0]}")
    acts, pre = _forward_cached(net, w, x)
    nll, g = _data_loss(net, acts[-1], batch, model)
    d_mats = [None] * net.n_layers
    d_biases = [None] * net.n_layers
    for l in range(net.n_layers - 1, -1, -1):
        d_mats[l] = acts[l].T @ g
        d_biases[l] = g.sum(axis=0)
        if l > 0:
            g = (g @ w.mats[l].T) * (pre[l - 1] > 0)
    return nll, MlpWeights(d_mats, d_biases)


def accuracy(net, w, ds: Dataset) -> float:
    """Top-1 accuracy in [0, 1]; classification only."""
    out = forward(net, w, ds.x)
    pred = np.argmax(out, axis=1)
    return float(np.mean(pred == np.asarray(ds.y, dtype=int)))


def sgd_train(
    net,
    w: MlpWeights,
    data: Dataset,
    model: LikelihoodModel,
    epochs: int,
    lr: float,
    batch_size: int,
    rng: np.random.Generator,
    masks: list[np.ndarray] | None = None,
) -> MlpWeights:
    """Plain minibatch SGD on the mean data loss. With masks, matrix updates
    are restricted to unmasked entries so exact zeros stay zero."""
    w = w.copy()
    n = len(data)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = data.subset(order[start : start + batch_size])
            _, grads = forward_backward(net, w, batch, model)
            for l in range(net.n_layers):
                step = grads.mats[l]
                if masks is not None:
                    step = step * masks[l]
                w.mats[l] -= lr * step
                w.biases[l] -= lr * grads.biases[l]
    return w


def save_weights(path, w: MlpWeights) -> None:
    """Binary container: magic TVBI, version u32, layer count u32, per-layer
    (K, M) u32 pairs, then per layer the K*M matrix entries followed by the
    M bias entries as little-endian float64."""
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<II", WEIGHTS_VERSION, len(w.mats)))
        for mat in w.mats:
            fh.write(struct.pack("<II", mat.shape[0], mat.shape[1]))
        for mat, bias in zip(w.mats, w.biases):
            fh.write(np.ascontiguousarray(mat, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(bias, dtype="<f8").tobytes())


def _read_exact(fh, count, path):
    buf = fh.read(count)
    if len(buf) != count:
        raise FormatError(f"{path}: truncated file")
    return buf


def load_weights(path) -> MlpWeights:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, path) != WEIGHTS_MAGIC:
            raise FormatError(f"{path}: bad magic, expected TVBI")
        version, n_layers = struct.unpack("<II", _read_exact(fh, 8, path))
        if version != WEIGHTS_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        dims = [struct.unpack("<II", _read_exact(fh, 8, path)) for _ in range(n_layers)]
        mats, biases = [], []
        for k, m in dims:
            mats.append(
                np.frombuffer(_read_exact(fh, 8 * k * m, path), dtype="<f8").reshape(k, m).copy()
            )
            biases.append(np.frombuffer(_read_exact(fh, 8 * m, path), dtype="<f8").copy())
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after payload")
    return MlpWeights(mats, biases)
