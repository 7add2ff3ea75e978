"""Stacked LSTM sequence classifier written directly in numpy.

Gate order inside every ``4H`` block is input, forget, cell, output. The
classifier reads the last layer's hidden state at each sequence's final
valid step, so zero padding after that step never changes its output.
Training is mini-batch SGD with a triangular cyclical learning rate.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from egotrack.evaluation import topk
from egotrack.features import FeatureSequence, pad_batch, sample_feature

PathLike = Union[str, Path]


@dataclass(frozen=True)
class ClassifierConfig:
    input_dim: int
    hidden_units: int = 32
    num_layers: int = 2
    num_classes: int = 125
    # None trains on full zero-padded sequences; an int samples to that length
    seq_length: Optional[int] = None

    def __post_init__(self):
        if min(self.input_dim, self.hidden_units, self.num_layers, self.num_classes) < 1:
            raise ValueError("classifier dimensions must be positive")
        if self.seq_length is not None and self.seq_length < 1:
            raise ValueError("seq_length must be positive")

    @property
    def seq_label(self) -> str:
        return "Full" if self.seq_length is None else str(self.seq_length)


@dataclass(frozen=True)
class CLRConfig:
    base_lr: float = 1e-3
    max_lr: float = 1e-1
    cycle_epochs: float = 20.0
    # False reads cycle_epochs as a half cycle (ramp up over all of it)
    full_cycle: bool = True

    def __post_init__(self):
        if not 0 <= self.base_lr <= self.max_lr:
            raise ValueError("need 0 <= base_lr <= max_lr")
        if self.cycle_epochs <= 0:
            raise ValueError("cycle_epochs must be positive")

    @property
    def step_epochs(self) -> float:
        return self.cycle_epochs / 2.0 if self.full_cycle else self.cycle_epochs


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    epochs: int = 1000
    seed: int = 0
    momentum: float = 0.0
    dtype: str = "float64"

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be positive and epochs non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")


def clr(t: float, cfg: CLRConfig) -> float:
    """Triangular learning rate at time ``t`` measured in (fractional) epochs."""
    if t < 0:
        raise ValueError("t must be non-negative")
    step = cfg.step_epochs
    # |t/step - 2*floor(1 + t/(2*step)) + 1| computed on the phase inside the
    # cycle; fmod is exact, so clr(t) == clr(t + 2*step) bit for bit
    x = abs(math.fmod(t, 2 * step) / step - 1.0)
    return cfg.base_lr + (cfg.max_lr - cfg.base_lr) * max(0.0, 1.0 - x)


# --- model ---------------------------------------------------------------


@dataclass
class LSTMClassifier:
    config: ClassifierConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def param_names(self) -> list[str]:
        names = []
        for layer in range(self.config.num_layers):
            names += [f"W{layer}", f"U{layer}", f"b{layer}"]
        return names + ["Wy", "by"]

    def copy(self) -> "LSTMClassifier":
        return LSTMClassifier(self.config, {k: v.copy() for k, v in self.params.items()})

    def num_parameters(self) -> int:
        return sum(v.size for v in self.params.values())


def init_model(
    config: ClassifierConfig, rng: Optional[np.random.Generator] = None, dtype: str = "float64"
) -> LSTMClassifier:
    """Uniform ``+-1/sqrt(fan_in)`` weights, zero biases except forget gate at 1."""
    rng = rng if rng is not None else np.random.default_rng(0)
    h = config.hidden_units
    params = {}
    fan_in = config.input_dim
    for layer in range(config.num_layers):
        params[f"W{layer}"] = rng.uniform(-1, 1, (fan_in, 4 * h)) / math.sqrt(fan_in)
        params[f"U{layer}"] = rng.uniform(-1, 1, (h, 4 * h)) / math.sqrt(h)
        b = np.zeros(4 * h)
        b[h : 2 * h] = 1.0
        params[f"b{layer}"] = b
        fan_in = h
    params["Wy"] = rng.uniform(-1, 1, (h, config.num_classes)) / math.sqrt(h)
    params["by"] = np.zeros(config.num_classes)
    return LSTMClassifier(config, {k: v.astype(dtype) for k, v in params.items()})


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class ForwardCache:
    inputs: np.ndarray
    lengths: np.ndarray
    # per layer: gate activations and states, each shaped (T, N, H)
    layers: list[dict[str, np.ndarray]]
    readout: np.ndarray
    scores: np.ndarray


def forward(
    model: LSTMClassifier, x: np.ndarray, lengths: Optional[Sequence[int]] = None
) -> tuple[np.ndarray, ForwardCache]:
    """Class scores for a batch ``x`` of shape ``(N, T, D)`` (or a single ``(T, D)``).

    ``lengths[n]`` is the number of valid steps of sequence ``n``; the
    read-out uses the top hidden state at step ``lengths[n] - 1``.
    """
    single = x.ndim == 2
    if single:
        x = x[None]
    n, t_max, d = x.shape
    if d != model.config.input_dim:
        raise ValueError(f"input dim {d} != model input dim {model.config.input_dim}")
    lengths = np.full(n, t_max) if lengths is None else np.atleast_1d(np.asarray(lengths, dtype=int))
    if lengths.shape != (n,):
        raise ValueError("one length per sequence required")
    if np.any(lengths < 1) or np.any(lengths > t_max):
        raise ValueError("lengths must lie in [1, T]")

    p = model.params
    h_units = model.config.hidden_units
    dtype = p["Wy"].dtype
    # run only as far as the longest valid prefix; later steps cannot reach the read-out
    steps = int(lengths.max())
    layer_in = np.ascontiguousarray(x[:, :steps].transpose(1, 0, 2), dtype=dtype)
    caches = []
    for layer in range(model.config.num_layers):
        w, u, b = p[f"W{layer}"], p[f"U{layer}"], p[f"b{layer}"]
        pre_in = layer_in @ w + b
        gates = np.empty((steps, n, 4 * h_units), dtype=dtype)
        cs = np.empty((steps, n, h_units), dtype=dtype)
        tcs = np.empty_like(cs)
        hs = np.empty_like(cs)
        h = np.zeros((n, h_units), dtype=dtype)
        c = np.zeros((n, h_units), dtype=dtype)
        for t in range(steps):
            a = pre_in[t] + h @ u
            g = gates[t]
            g[:, : 3 * h_units] = _sigmoid(a[:, : 3 * h_units])
            g[:, 3 * h_units :] = _sigmoid(a[:, 3 * h_units :])
            g[:, 2 * h_units : 3 * h_units] = np.tanh(a[:, 2 * h_units : 3 * h_units])
            i_g = g[:, :h_units]
            f_g = g[:, h_units : 2 * h_units]
            c_g = g[:, 2 * h_units : 3 * h_units]
            o_g = g[:, 3 * h_units :]
            c = f_g * c + i_g * c_g
            tc = np.tanh(c)
            h = o_g * tc
            cs[t], tcs[t], hs[t] = c, tc, h
        caches.append({"input": layer_in, "gates": gates, "c": cs, "tc": tcs, "h": hs})
        layer_in = hs
    readout = layer_in[lengths - 1, np.arange(n)]
    scores = readout @ p["Wy"] + p["by"]
    cache = ForwardCache(x, lengths, caches, readout, scores)
    return (scores[0] if single else scores), cache


def softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - np.max(scores, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - np.max(scores, axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def loss(scores: np.ndarray, label) -> float:
    """Cross-entropy ``-log softmax(scores)[label]``; batches give the mean."""
    scores = np.asarray(scores, dtype=float)
    if scores.ndim == 1:
        return float(-log_softmax(scores)[int(label)])
    labels = np.asarray(label, dtype=int)
    return float(-log_softmax(scores)[np.arange(len(labels)), labels].mean())


def backward(
    model: LSTMClassifier, cache: ForwardCache, labels, scale: float = 1.0
) -> dict[str, np.ndarray]:
    """Exact gradients of ``scale * loss`` (batch mean) for every parameter."""
    p = model.params
    cfg = model.config
    h_units = cfg.hidden_units
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    n = len(labels)
    probs = softmax(cache.scores)
    dscores = probs
    dscores[np.arange(n), labels] -= 1.0
    dscores *= scale / n

    grads = {"Wy": cache.readout.T @ dscores, "by": dscores.sum(axis=0)}
    steps = cache.layers[0]["h"].shape[0]
    dh_above = np.zeros((steps, n, h_units), dtype=dscores.dtype)
    dh_above[cache.lengths - 1, np.arange(n)] = dscores @ p["Wy"].T

    for layer in reversed(range(cfg.num_layers)):
        lc = cache.layers[layer]
        w, u = p[f"W{layer}"], p[f"U{layer}"]
        gates, cs, tcs, hs, xin = lc["gates"], lc["c"], lc["tc"], lc["h"], lc["input"]
        dgates = np.empty_like(gates)
        dh_next = np.zeros((n, h_units), dtype=dscores.dtype)
        dc_next = np.zeros_like(dh_next)
        for t in reversed(range(steps)):
            g = gates[t]
            i_g = g[:, :h_units]
            f_g = g[:, h_units : 2 * h_units]
            c_g = g[:, 2 * h_units : 3 * h_units]
            o_g = g[:, 3 * h_units :]
            c_prev = cs[t - 1] if t > 0 else 0.0
            dh = dh_above[t] + dh_next
            tc = tcs[t]
            dc = dc_next + dh * o_g * (1.0 - tc * tc)
            da = dgates[t]
            da[:, :h_units] = dc * c_g * i_g * (1.0 - i_g)
            da[:, h_units : 2 * h_units] = dc * c_prev * f_g * (1.0 - f_g)
            da[:, 2 * h_units : 3 * h_units] = dc * i_g * (1.0 - c_g * c_g)
            da[:, 3 * h_units :] = dh * tc * o_g * (1.0 - o_g)
            dh_next = da @ u.T
            dc_next = dc * f_g
        flat_da = dgates.reshape(steps * n, 4 * h_units)
        grads[f"W{layer}"] = xin.reshape(steps * n, -1).T @ flat_da
        h_prev = np.concatenate([np.zeros((1, n, h_units), dtype=hs.dtype), hs[:-1]])
        grads[f"U{layer}"] = h_prev.reshape(steps * n, h_units).T @ flat_da
        grads[f"b{layer}"] = flat_da.sum(axis=0)
        if layer > 0:
            dh_above = dgates @ w.T
    return grads


# --- training ------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    top1: float
    top5: float
    lr: float


def _prepare(seqs: Sequence[FeatureSequence], config: ClassifierConfig) -> list[FeatureSequence]:
    if config.seq_length is None:
        return list(seqs)
    return [sample_feature(s, config.seq_length) for s in seqs]


def predict_scores(
    model: LSTMClassifier, seqs: Sequence[FeatureSequence], batch_size: int = 256
) -> np.ndarray:
    """Scores for every sequence; applies the model's sampling mode."""
    seqs = _prepare(seqs, model.config)
    out = np.zeros((len(seqs), model.config.num_classes))
    for lo in range(0, len(seqs), batch_size):
        batch, lengths = pad_batch(seqs[lo : lo + batch_size])
        out[lo : lo + batch_size] = forward(model, batch, lengths)[0]
    return out


@dataclass
class TrainResult:
    model: LSTMClassifier
    best_epoch: int
    history: list[EpochRecord]
    final_model: LSTMClassifier


def train(
    train_set: Sequence[FeatureSequence],
    config: ClassifierConfig,
    clr_config: CLRConfig = CLRConfig(),
    train_config: TrainConfig = TrainConfig(),
    eval_set: Optional[Sequence[FeatureSequence]] = None,
    model: Optional[LSTMClassifier] = None,
    target_top1: Optional[float] = None,
    log=None,
) -> TrainResult:
    """Fit a classifier with shuffled mini-batch SGD under the triangular CLR.

    The learning rate advances every iteration, with its period expressed in
    epochs. After each epoch the history records the mean training loss and
    Top-1/Top-5 on ``eval_set`` (the training set when no evaluation set is
    given). The returned ``model`` is the epoch with the best Top-1, earliest
    on ties. ``target_top1`` stops training once that accuracy is reached.
    """
    if not train_set:
        raise ValueError("empty training set")
    kinds = {s.kind for s in train_set} | {s.kind for s in eval_set or ()}
    if len(kinds) > 1:
        raise ValueError(f"inconsistent feature kinds: {sorted(k.value for k in kinds)}")
    dims = {s.steps.shape[1] for s in train_set} | {s.steps.shape[1] for s in eval_set or ()}
    if dims != {config.input_dim}:
        raise ValueError(f"feature dims {sorted(dims)} do not match model input_dim {config.input_dim}")

    rng = np.random.default_rng(train_config.seed)
    if model is None:
        model = init_model(config, rng, train_config.dtype)
    else:
        model = model.copy()
    train_seqs = _prepare(train_set, config)
    labels = np.array([s.label for s in train_seqs])
    metric_set = list(eval_set) if eval_set is not None else list(train_set)
    metric_labels = np.array([s.label for s in metric_set])

    n = len(train_seqs)
    bs = train_config.batch_size
    iters_per_epoch = math.ceil(n / bs)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    history: list[EpochRecord] = []
    best = (-1.0, 0, model.copy())
    iteration = 0
    for epoch in range(1, train_config.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, bs):
            idx = order[lo : lo + bs]
            batch, lengths = pad_batch([train_seqs[i] for i in idx])
            scores, cache = forward(model, batch, lengths)
            total += loss(scores, labels[idx]) * len(idx)
            grads = backward(model, cache, labels[idx])
            lr = clr(iteration / iters_per_epoch, clr_config)
            for k, g in grads.items():
                if train_config.momentum:
                    velocity[k] = train_config.momentum * velocity[k] - lr * g
                    model.params[k] += velocity[k]
                else:
                    model.params[k] -= lr * g
            iteration += 1
        scores = predict_scores(model, metric_set)
        rec = EpochRecord(
            epoch,
            total / n,
            topk(scores, metric_labels, 1),
            topk(scores, metric_labels, min(5, config.num_classes)),
            lr,
        )
        history.append(rec)
        if log is not None:
            log(rec)
        if rec.top1 > best[0]:
            best = (rec.top1, epoch, model.copy())
        if target_top1 is not None and rec.top1 >= target_top1:
            break
    if not history:
        return TrainResult(model, 0, history, model)
    return TrainResult(best[2], best[1], history, model)


def write_history_csv(history: Sequence[EpochRecord], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "loss", "top1", "top5"])
        for r in history:
            writer.writerow([r.epoch, repr(r.loss), repr(r.top1), repr(r.top5)])


# --- checkpoints ---------------------------------------------------------

CHECKPOINT_MAGIC = b"EGOLSTM1"


def save_checkpoint(model: LSTMClassifier, path: PathLike, extra: Optional[dict] = None) -> None:
    """Binary checkpoint: magic, ``uint32`` JSON header length, JSON header,
    then every parameter as little-endian float64 in header order."""
    names = model.param_names()
    header = {
        "config": asdict(model.config),
        "params": [{"name": k, "shape": list(model.params[k].shape)} for k in names],
        "extra": extra or {},
    }
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        for k in names:
            fh.write(np.ascontiguousarray(model.params[k], dtype="<f8").tobytes())


def load_checkpoint(path: PathLike) -> tuple[LSTMClassifier, dict]:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    (hlen,) = struct.unpack_from("<I", data, 8)
    header = json.loads(data[12 : 12 + hlen])
    pos = 12 + hlen
    params = {}
    for spec in header["params"]:
        count = int(np.prod(spec["shape"]))
        params[spec["name"]] = (
            np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(spec["shape"]).astype(np.float64)
        )
        pos += 8 * count
    if pos != len(data):
        raise ValueError(f"{path}: {len(data) - pos} trailing bytes")
    return LSTMClassifier(ClassifierConfig(**header["config"]), params), header["extra"]
