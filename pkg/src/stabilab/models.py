"""Small fully-connected classifiers with exact, hand-derived gradients.

The attack and training loops need gradients with respect to inputs as well
as parameters, so backprop is written out explicitly instead of leaning on an
autodiff framework. Hidden layers are ReLU; the output is a single logit for
binary tasks (labels in {-1, +1}, logistic loss) or k logits (softmax
cross-entropy). Parameter gradients are for the batch-mean loss; input
gradients are per example, each row the gradient of that example's own loss.
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagicError,
    BadVersionError,
    InputError,
    InvariantError,
    TruncatedFileError,
)
from .mixture import LinearClassifier
from .numerics import RngState

LOSS_KINDS = ("logistic", "softmax")

_MAGIC = b"RSLM"
_VERSION = 1
_KIND_LINEAR = 0
_KIND_MLP = 1


def sigmoid(t: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    t = np.asarray(t, dtype=np.float64)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softplus(t: np.ndarray) -> np.ndarray:
    """log(1 + exp(t)) without overflow."""
    return np.logaddexp(0.0, t)


@dataclass
class MlpClassifier:
    """Weights[i] has shape (fan_in, fan_out); forward is x @ W + b per layer."""

    weights: list
    biases: list

    def __post_init__(self):
        if not self.weights or len(self.weights) != len(self.biases):
            raise InputError("weights and biases must be nonempty and aligned")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            W = np.ascontiguousarray(W, dtype=np.float64)
            b = np.ascontiguousarray(b, dtype=np.float64)
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise InputError(f"layer {i} shapes do not chain")
            if i and W.shape[0] != self.weights[i - 1].shape[1]:
                raise InputError(f"layer {i} input does not match layer {i - 1} output")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise InputError(f"layer {i} has non-finite parameters")
            self.weights[i] = W
            self.biases[i] = b

    @property
    def layer_dims(self) -> tuple:
        return (self.weights[0].shape[0],) + tuple(W.shape[1] for W in self.weights)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def copy(self) -> "MlpClassifier":
        return MlpClassifier([W.copy() for W in self.weights], [b.copy() for b in self.biases])


def init_mlp(layer_dims, rng: RngState) -> MlpClassifier:
    """He-scaled Gaussian weights, std sqrt(2 / fan_in), zero biases."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise InputError("layer_dims needs at least input and output sizes, all >= 1")
    draws = rng.draws()
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        std = np.sqrt(2.0 / fan_in)
        weights.append(std * draws.normal((fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpClassifier(weights, biases)


def as_mlp(f: LinearClassifier) -> MlpClassifier:
    """View a linear classifier as a depth-1 single-logit network."""
    return MlpClassifier([f.w.reshape(-1, 1).copy()], [np.array([f.b])])


def _check_kind(kind: str):
    if kind not in LOSS_KINDS:
        raise InputError(f"loss kind must be one of {LOSS_KINDS}")


def _as_batch(model: MlpClassifier, x) -> np.ndarray:
    X = np.asarray(x, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != model.in_dim:
        raise InputError(f"input must have {model.in_dim} features")
    return X


def _forward_cached(model: MlpClassifier, X: np.ndarray):
    acts = [X]
    h = X
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ W + b
        if i < last:
            h = np.maximum(z, 0.0)  # ReLU; subgradient at 0 taken as 0
            acts.append(h)
        else:
            return acts, z
    raise AssertionError("unreachable")


def forward(model: MlpClassifier, x) -> np.ndarray:
    """Logits: shape (n,) for a single-logit model, else (n, k)."""
    X = _as_batch(model, x)
    _, z = _forward_cached(model, X)
    return z[:, 0] if model.out_dim == 1 else z


def predict(model: MlpClassifier, x) -> np.ndarray:
    z = forward(model, _as_batch(model, x))
    if model.out_dim == 1:
        return np.where(z >= 0, 1, -1).astype(np.int64)
    return np.argmax(z, axis=1).astype(np.int64)


def _check_labels(model: MlpClassifier, y, n: int, kind: str) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if y.shape[0] != n:
        raise InputError("labels must align with inputs")
    if kind == "logistic":
        if model.out_dim != 1:
            raise InputError("logistic loss needs a single-logit model")
        if not np.all(np.abs(y) == 1):
            raise InputError("logistic loss needs labels in {-1, +1}")
    else:
        if model.out_dim < 2:
            raise InputError("softmax loss needs at least 2 logits")
        if y.min() < 0 or y.max() >= model.out_dim:
            raise InputError(f"softmax labels must lie in [0, {model.out_dim})")
    return y


def loss(model: MlpClassifier, x, y, kind: str) -> float:
    """Batch-mean loss."""
    _check_kind(kind)
    X = _as_batch(model, x)
    y = _check_labels(model, y, X.shape[0], kind)
    _, z = _forward_cached(model, X)
    if kind == "logistic":
        margin = y * z[:, 0]
        return float(np.mean(softplus(-margin)))
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    return float(np.mean(lse - z[np.arange(len(y)), y]))


def per_example_loss(model: MlpClassifier, x, y, kind: str) -> np.ndarray:
    _check_kind(kind)
    X = _as_batch(model, x)
    y = _check_labels(model, y, X.shape[0], kind)
    _, z = _forward_cached(model, X)
    if kind == "logistic":
        return softplus(-(y * z[:, 0]))
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    return lse - z[np.arange(len(y)), y]


def backprop(model: MlpClassifier, x, y, kind: str):
    """Returns (param_grads, input_grad).

    param_grads is a list of (dW, db) for the batch-mean loss; input_grad has
    one row per example, the gradient of that example's own loss with respect
    to its input.
    """
    _check_kind(kind)
    X = _as_batch(model, x)
    n = X.shape[0]
    y = _check_labels(model, y, n, kind)
    acts, z = _forward_cached(model, X)

    if kind == "logistic":
        margin = y * z[:, 0]
        dz = (-y * sigmoid(-margin)).reshape(-1, 1)
    else:
        zmax = z.max(axis=1, keepdims=True)
        e = np.exp(z - zmax)
        dz = e / e.sum(axis=1, keepdims=True)
        dz[np.arange(n), y] -= 1.0

    param_grads = [None] * len(model.weights)
    delta = dz
    for i in range(len(model.weights) - 1, -1, -1):
        h_prev = acts[i]
        dW = h_prev.T @ delta / n
        db = delta.sum(axis=0) / n
        param_grads[i] = (dW, db)
        delta = delta @ model.weights[i].T
        if i > 0:
            delta = delta * (acts[i] > 0.0)  # kill gradient where ReLU was inactive
    return param_grads, delta


def input_grad(model: MlpClassifier, x, y, kind: str) -> np.ndarray:
    return backprop(model, x, y, kind)[1]


def model_to_bytes(model) -> bytes:
    buf = io.BytesIO()
    if isinstance(model, LinearClassifier):
        buf.write(struct.pack("<4sIB", _MAGIC, _VERSION, _KIND_LINEAR))
        buf.write(struct.pack("<Q", model.w.size))
        buf.write(np.ascontiguousarray(model.w, dtype="<f8").tobytes())
        buf.write(struct.pack("<d", model.b))
    elif isinstance(model, MlpClassifier):
        dims = model.layer_dims
        buf.write(struct.pack("<4sIB", _MAGIC, _VERSION, _KIND_MLP))
        buf.write(struct.pack("<I", len(dims)))
        for d in dims:
            buf.write(struct.pack("<Q", d))
        for W, b in zip(model.weights, model.biases):
            buf.write(np.ascontiguousarray(W, dtype="<f8").tobytes())
            buf.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    else:
        raise InputError(f"cannot serialize {type(model).__name__}")
    return buf.getvalue()


def model_from_bytes(raw: bytes):
    head = struct.Struct("<4sIB")
    if len(raw) < head.size:
        raise TruncatedFileError("file shorter than the fixed header")
    magic, version, kind = head.unpack_from(raw, 0)
    if magic != _MAGIC:
        raise BadMagicError(f"expected magic {_MAGIC!r}, found {magic!r}")
    if version != _VERSION:
        raise BadVersionError(f"unsupported model format version {version}")
    off = head.size
    if kind == _KIND_LINEAR:
        if len(raw) < off + 8:
            raise TruncatedFileError("missing weight count")
        (m,) = struct.unpack_from("<Q", raw, off)
        off += 8
        need = off + 8 * m + 8
        if len(raw) != need:
            raise TruncatedFileError(f"linear payload needs {need} bytes, file has {len(raw)}")
        w = np.frombuffer(raw, dtype="<f8", count=m, offset=off).astype(np.float64)
        (b,) = struct.unpack_from("<d", raw, off + 8 * m)
        return LinearClassifier(w, b)
    if kind == _KIND_MLP:
        if len(raw) < off + 4:
            raise TruncatedFileError("missing layer count")
        (ndims,) = struct.unpack_from("<I", raw, off)
        off += 4
        if ndims < 2:
            raise InvariantError("model needs at least two layer dims")
        if len(raw) < off + 8 * ndims:
            raise TruncatedFileError("missing layer dims")
        dims = struct.unpack_from(f"<{ndims}Q", raw, off)
        off += 8 * ndims
        need = off + sum(8 * (a * b + b) for a, b in zip(dims[:-1], dims[1:]))
        if len(raw) != need:
            raise TruncatedFileError(f"mlp payload needs {need} bytes, file has {len(raw)}")
        weights, biases = [], []
        for a, b in zip(dims[:-1], dims[1:]):
            W = np.frombuffer(raw, dtype="<f8", count=a * b, offset=off).reshape(a, b)
            off += 8 * a * b
            bias = np.frombuffer(raw, dtype="<f8", count=b, offset=off)
            off += 8 * b
            weights.append(W.astype(np.float64))
            biases.append(bias.astype(np.float64))
        return MlpClassifier(weights, biases)
    raise InvariantError(f"unknown model kind byte {kind}")


def save_model(model, path) -> None:
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def load_model(path):
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())


def model_digest(model) -> str:
    return hashlib.sha256(model_to_bytes(model)).hexdigest()
