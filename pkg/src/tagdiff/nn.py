"""Prediction heads (logistic regression, MLP, full-batch GCN) in numpy.

Gradients are derived by hand; the objective is mean softmax cross-entropy
over the supervised nodes plus ``weight_decay * ||theta||^2 / 2`` over all
weights and biases.
"""
import copy
import struct
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, TrainingError
from .sparse import as_dense, spmm_dense, transpose

KINDS = ("logistic", "mlp", "gcn")
N_LAYERS = {"logistic": 1, "mlp": 4, "gcn": 4}


@dataclass
class DenseLayer:
    weights: np.ndarray  # (in_dim, out_dim)
    bias: np.ndarray     # (out_dim,)

    @property
    def shape(self):
        return self.weights.shape


@dataclass
class ModelHead:
    kind: str
    layers: list
    dropout_rate: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown head kind {self.kind!r}")
        if len(self.layers) != N_LAYERS[self.kind]:
            raise InvalidInputError(f"{self.kind} head needs {N_LAYERS[self.kind]} layers")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.shape[1] != nxt.shape[0]:
                raise InvalidInputError("layer widths do not chain")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidInputError("dropout_rate must lie in [0, 1)")

    @property
    def uses_adjacency(self):
        return self.kind == "gcn"

    @property
    def in_dim(self):
        return self.layers[0].shape[0]

    @property
    def n_classes(self):
        return self.layers[-1].shape[1]

    def parameters(self):
        """Flat list of parameter arrays: W1, b1, W2, b2, ..."""
        return [p for layer in self.layers for p in (layer.weights, layer.bias)]

    def n_parameters(self):
        return sum(p.size for p in self.parameters())


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    weight_decay: float = 5e-4
    max_epochs: int = 500
    patience: int = 50
    seed: int = 0
    dropout_rate: float = 0.5
    hidden_dim: int = 256

    def __post_init__(self):
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise InvalidInputError("learning_rate and weight_decay must be non-negative")
        if self.max_epochs < 1 or not 0 <= self.patience <= self.max_epochs:
            raise InvalidInputError("need max_epochs >= 1 and 0 <= patience <= max_epochs")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidInputError("dropout_rate must lie in [0, 1)")


def init_head(kind, in_dim, n_classes, hidden_dim=256, dropout_rate=0.5, seed=0):
    """Glorot-uniform weights and zero biases."""
    if kind not in KINDS:
        raise InvalidInputError(f"unknown head kind {kind!r}")
    widths = [in_dim] + [hidden_dim] * (N_LAYERS[kind] - 1) + [n_classes]
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append(DenseLayer(rng.uniform(-limit, limit, size=(fan_in, fan_out)),
                                 np.zeros(fan_out)))
    return ModelHead(kind, layers, dropout_rate)


def standardize_features(x, fit_rows):
    """Center and scale columns using statistics of ``fit_rows`` only.

    Uses the population standard deviation.  Columns whose deviation is below
    1e-12 on the fit rows are set to zero.
    """
    x = as_dense(x)
    fit_rows = np.asarray(fit_rows, dtype=np.int64)
    if fit_rows.size == 0:
        raise InvalidInputError("cannot standardize on an empty row set")
    fit = x[fit_rows]
    means = fit.mean(axis=0)
    stds = fit.std(axis=0)
    flat = stds < 1e-12
    safe = np.where(flat, 1.0, stds)
    out = (x - means) / safe
    out[:, flat] = 0.0
    return out, means, stds


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_inputs(model, x, adj):
    x = as_dense(x, "features")
    if x.shape[1] != model.in_dim:
        raise InvalidInputError(f"features have width {x.shape[1]}, model expects {model.in_dim}")
    if model.uses_adjacency:
        if adj is None:
            raise InvalidInputError("gcn head needs an adjacency operator")
        if adj.shape != (x.shape[0], x.shape[0]):
            raise InvalidInputError(f"adjacency {adj.shape} does not match {x.shape[0]} nodes")
    elif adj is not None:
        raise InvalidInputError(f"{model.kind} head does not take an adjacency operator")
    return x


def _dropout_masks(model, x, rng):
    if rng is None or model.dropout_rate == 0.0:
        return [None] * len(model.layers)
    keep = 1.0 - model.dropout_rate
    n = x.shape[0]
    return [(rng.random((n, layer.shape[0])) < keep) / keep for layer in model.layers]


def _forward(model, x, adj, masks):
    cache = []
    h = x
    last = len(model.layers) - 1
    for li, (layer, mask) in enumerate(zip(model.layers, masks)):
        if mask is not None:
            h = h * mask
        agg = spmm_dense(adj, h) if model.uses_adjacency else h
        z = agg @ layer.weights + layer.bias
        cache.append((agg, z))
        h = z if li == last else np.maximum(z, 0.0)
    return softmax(h), cache


def forward(model, features, adj=None, train_mode=False, rng=None):
    """Class probabilities; dropout is applied only when ``train_mode`` is set.

    In train mode the dropout masks are drawn from ``rng`` (a fresh generator
    seeded with 0 if omitted).
    """
    x = _check_inputs(model, features, adj)
    if train_mode and rng is None:
        rng = np.random.default_rng(0)
    masks = _dropout_masks(model, x, rng if train_mode else None)
    return _forward(model, x, adj, masks)[0]


def predict(model, features, adj=None):
    return forward(model, features, adj, train_mode=False)


def _check_labels(labels, idx, n_classes, n_nodes):
    labels = np.asarray(labels, dtype=np.int64)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        raise InvalidInputError("empty index set")
    if labels.shape[0] != n_nodes:
        raise InvalidInputError("labels must have one entry per node")
    y = labels[idx]
    if np.any(y < 0) or np.any(y >= n_classes):
        raise InvalidInputError(f"labels must lie in [0, {n_classes}) on the supervised nodes")
    return y, idx


def _regularizer(model, weight_decay):
    if weight_decay == 0.0:
        return 0.0
    return 0.5 * weight_decay * sum(float(np.sum(p * p)) for p in model.parameters())


def loss_and_gradients(model, features, adj, labels, idx, weight_decay=0.0, rng=None,
                       adj_t=None):
    """Objective and its exact gradients, as ``(loss, [(dW, db), ...])``.

    Passing ``rng`` turns on dropout with masks drawn from it.  ``adj_t`` can
    supply a precomputed transpose of ``adj`` for repeated calls.
    """
    x = _check_inputs(model, features, adj)
    y, idx = _check_labels(labels, idx, model.n_classes, x.shape[0])
    masks = _dropout_masks(model, x, rng)
    probs, cache = _forward(model, x, adj, masks)
    loss = -float(np.mean(np.log(probs[idx, y]))) + _regularizer(model, weight_decay)

    if model.uses_adjacency and adj_t is None:
        adj_t = transpose(adj)
    dz = np.zeros_like(probs)
    dz[idx] = probs[idx]
    dz[idx, y] -= 1.0
    dz /= idx.size
    grads = [None] * len(model.layers)
    for li in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[li]
        agg, _ = cache[li]
        dw = agg.T @ dz
        db = dz.sum(axis=0)
        if weight_decay:
            dw = dw + weight_decay * layer.weights
            db = db + weight_decay * layer.bias
        grads[li] = (dw, db)
        if li == 0:
            break
        dh = dz @ layer.weights.T
        if model.uses_adjacency:
            dh = spmm_dense(adj_t, dh)
        if masks[li] is not None:
            dh = dh * masks[li]
        dz = dh * (cache[li - 1][1] > 0.0)
    return loss, grads


def _accuracy(probs, labels, idx):
    return float(np.mean(np.argmax(probs[idx], axis=1) == labels[idx]))


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train(model, features, adj, labels, train_idx, val_idx, cfg):
    """Full-batch Adam with early stopping on validation accuracy.

    Returns a new model holding the parameters of the best validation epoch,
    and a history with one record per epoch.  ``loss`` in the history is the
    dropout-free training objective after that epoch's update.
    """
    x = _check_inputs(model, features, adj)
    labels = np.asarray(labels, dtype=np.int64)
    train_idx = np.asarray(train_idx, dtype=np.int64)
    val_idx = np.asarray(val_idx, dtype=np.int64)
    if np.intersect1d(train_idx, val_idx).size:
        raise InvalidInputError("train and validation indices overlap")
    _check_labels(labels, train_idx, model.n_classes, x.shape[0])
    _check_labels(labels, val_idx, model.n_classes, x.shape[0])

    model = copy.deepcopy(model)
    model.dropout_rate = cfg.dropout_rate
    adj_t = transpose(adj) if model.uses_adjacency else None
    params = model.parameters()
    opt = _Adam(params, cfg.learning_rate)
    best_params = [p.copy() for p in params]
    best_val, best_epoch = -1.0, 0
    history = []
    for epoch in range(1, cfg.max_epochs + 1):
        rng = np.random.default_rng((cfg.seed, epoch))
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            step_loss, grads = loss_and_gradients(model, x, adj, labels, train_idx,
                                                  cfg.weight_decay, rng=rng, adj_t=adj_t)
        if not np.isfinite(step_loss):
            raise TrainingError("training loss became non-finite", epoch - 1)
        opt.step(params, [g for pair in grads for g in pair])

        probs = _forward(model, x, adj, [None] * len(model.layers))[0]
        y = labels[train_idx]
        loss = -float(np.mean(np.log(probs[train_idx, y]))) + _regularizer(model, cfg.weight_decay)
        if not np.isfinite(loss):
            raise TrainingError("training loss became non-finite", epoch - 1)
        record = {
            "epoch": epoch,
            "loss": loss,
            "train_acc": _accuracy(probs, labels, train_idx),
            "val_acc": _accuracy(probs, labels, val_idx),
        }
        history.append(record)
        if record["val_acc"] > best_val:
            best_val, best_epoch = record["val_acc"], epoch
            best_params = [p.copy() for p in params]
        elif epoch - best_epoch >= cfg.patience:
            break
    for p, best in zip(params, best_params):
        p[...] = best
    return model, history


# -- checkpoints ------------------------------------------------------------

MAGIC = b"STGM"
VERSION = 1
_KIND_CODES = {k: i for i, k in enumerate(KINDS)}


def save_model(path, model):
    """Write ``model`` as ``STGM`` + header + little-endian float64 parameters."""
    header = [MAGIC, struct.pack("<IIId", VERSION, _KIND_CODES[model.kind],
                                 len(model.layers), model.dropout_rate)]
    for layer in model.layers:
        header.append(struct.pack("<II", *layer.shape))
    body = [np.ascontiguousarray(p, dtype="<f8").tobytes() for p in model.parameters()]
    with open(path, "wb") as fh:
        fh.write(b"".join(header + body))


def load_model(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise InvalidInputError(f"{path}: not a model checkpoint")
    version, code, n_layers, rate = struct.unpack_from("<IIId", buf, 4)
    if version != VERSION:
        raise InvalidInputError(f"{path}: unsupported checkpoint version {version}")
    if code >= len(KINDS):
        raise InvalidInputError(f"{path}: unknown head kind code {code}")
    off = 4 + struct.calcsize("<IIId")
    dims = []
    for _ in range(n_layers):
        dims.append(struct.unpack_from("<II", buf, off))
        off += 8
    layers = []
    for fan_in, fan_out in dims:
        w = np.frombuffer(buf, dtype="<f8", count=fan_in * fan_out, offset=off)
        off += w.nbytes
        b = np.frombuffer(buf, dtype="<f8", count=fan_out, offset=off)
        off += b.nbytes
        layers.append(DenseLayer(w.reshape(fan_in, fan_out).astype(np.float64),
                                 b.astype(np.float64)))
    if off != len(buf):
        raise InvalidInputError(f"{path}: trailing bytes in checkpoint")
    return ModelHead(KINDS[code], layers, rate)
