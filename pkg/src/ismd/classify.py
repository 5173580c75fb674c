"""Small numpy CNN for scalogram images plus the evaluation metrics.

Layout is NHWC throughout. Layer plan::

    [conv kxk -> ReLU -> maxpool 2x2] * len(conv_channels)
    [dense -> ReLU] * len(dense)
    dense n_classes -> softmax
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .io import ArtifactError, atomic_write_bytes
from .sigsim import FAULT_CLASSES

CLASS_NAMES = tuple(f.value for f in FAULT_CLASSES)


class NumericalError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ClassifierConfig:
    input_size: int = 64
    in_channels: int = 1
    conv_channels: tuple[int, ...] = (8, 16)
    kernel_size: int = 3
    pool: int = 2
    dense: tuple[int, ...] = (32,)
    n_classes: int = 3
    batch_size: int = 32
    epochs: int = 30
    learning_rate: float = 1e-4
    l2: float = 1e-5
    optimizer: str = "sgd"
    momentum: float = 0.9
    seed: int = 0

    def feature_shapes(self) -> list[tuple[int, int, int]]:
        """(H, W, C) after each conv+pool stage, starting with the input."""
        h, c = self.input_size, self.in_channels
        shapes = [(h, h, c)]
        for out_c in self.conv_channels:
            h = (h - self.kernel_size + 1) // self.pool
            c = out_c
            shapes.append((h, h, c))
        return shapes

    def validate(self) -> "ClassifierConfig":
        if self.n_classes != len(CLASS_NAMES):
            raise ValueError(f"classifier output dimension must be {len(CLASS_NAMES)}, got {self.n_classes}")
        if self.optimizer != "sgd":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.learning_rate < 0 or self.l2 < 0 or not 0 <= self.momentum < 1:
            raise ValueError("learning_rate and l2 must be >= 0, momentum in [0, 1)")
        for i, (h, _, c) in enumerate(self.feature_shapes()):
            if h < 1 or c < 1:
                raise ValueError(f"layer plan collapses the feature map at stage {i}")
        if any(d < 1 for d in self.dense):
            raise ValueError("dense widths must be >= 1")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        d["dense"] = list(self.dense)
        return d

    @classmethod
    def from_dict(cls, d) -> "ClassifierConfig":
        d = dict(d)
        d["conv_channels"] = tuple(d["conv_channels"])
        d["dense"] = tuple(d["dense"])
        return cls(**d)


@dataclass
class Model:
    config: ClassifierConfig
    params: dict[str, np.ndarray]

    def copy(self) -> "Model":
        return Model(self.config, {k: v.copy() for k, v in self.params.items()})

    @property
    def n_conv(self) -> int:
        return len(self.config.conv_channels)

    @property
    def n_dense(self) -> int:
        return len(self.config.dense) + 1


def _param_shapes(cfg: ClassifierConfig) -> list[tuple[str, tuple[int, ...], int]]:
    """(name, shape, fan_in) in canonical order."""
    out = []
    c_in, k = cfg.in_channels, cfg.kernel_size
    for i, c_out in enumerate(cfg.conv_channels):
        out.append((f"conv{i}.W", (c_out, c_in, k, k), c_in * k * k))
        out.append((f"conv{i}.b", (c_out,), 0))
        c_in = c_out
    h, w, c = cfg.feature_shapes()[-1]
    width = h * w * c
    for i, n in enumerate(list(cfg.dense) + [cfg.n_classes]):
        out.append((f"fc{i}.W", (width, n), width))
        out.append((f"fc{i}.b", (n,), 0))
        width = n
    return out


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(stream,))))


def init_model(config: ClassifierConfig, seed: int | None = None) -> Model:
    cfg = config.validate()
    rng = _rng(cfg.seed if seed is None else seed, 0)
    params = {}
    for name, shape, fan_in in _param_shapes(cfg):
        if name.endswith(".W"):
            params[name] = rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)
        else:
            params[name] = np.zeros(shape)
    return Model(cfg, params)


# --- layers ---------------------------------------------------------------

def _conv_forward(x, W, b):
    B, H, Wd, C = x.shape
    O, _, k, _ = W.shape
    Ho, Wo = H - k + 1, Wd - k + 1
    cols = sliding_window_view(x, (k, k), axis=(1, 2)).reshape(B * Ho * Wo, C * k * k)
    out = cols @ W.reshape(O, -1).T + b
    return out.reshape(B, Ho, Wo, O), cols


def _conv_backward(dout, cols, x_shape, W, need_dx=True):
    B, H, Wd, C = x_shape
    O, _, k, _ = W.shape
    Ho, Wo = H - k + 1, Wd - k + 1
    d = dout.reshape(-1, O)
    dW = (d.T @ cols).reshape(W.shape)
    db = d.sum(axis=0)
    if not need_dx:
        return None, dW, db
    dcols = (d @ W.reshape(O, -1)).reshape(B, Ho, Wo, C, k, k)
    dx = np.zeros(x_shape)
    for i in range(k):
        for j in range(k):
            dx[:, i:i + Ho, j:j + Wo, :] += dcols[..., i, j]
    return dx, dW, db


def _pool_views(x, p):
    h, w = x.shape[1] // p, x.shape[2] // p
    return [x[:, i:h * p:p, j:w * p:p, :] for i in range(p) for j in range(p)]


def _pool_forward(x, p):
    views = _pool_views(x, p)
    out = views[0]
    for v in views[1:]:
        out = np.maximum(out, v)
    # index of the first maximum within each window, row-major
    arg = np.zeros(out.shape, dtype=np.intp)
    for k in range(len(views) - 1, -1, -1):
        arg = np.where(views[k] == out, k, arg)
    return out, arg


def _pool_backward(dout, arg, x_shape, p):
    dx = np.zeros(x_shape)
    for k, view in enumerate(_pool_views(dx, p)):
        view[...] = np.where(arg == k, dout, 0.0)
    return dx


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _as_batch(model: Model, images) -> np.ndarray:
    x = np.asarray(images, dtype=float)
    cfg = model.config
    if x.ndim == 3 and cfg.in_channels == 1:
        x = x[..., None]
    want = (cfg.input_size, cfg.input_size, cfg.in_channels)
    if x.ndim != 4 or x.shape[1:] != want:
        raise ValueError(f"expected images of shape (B, {want[0]}, {want[1]}[, {want[2]}]), got {np.shape(images)}")
    return x


def _forward(model: Model, x, keep: bool):
    P, cfg = model.params, model.config
    cache = []
    for i in range(model.n_conv):
        z, cols = _conv_forward(x, P[f"conv{i}.W"], P[f"conv{i}.b"])
        a = np.maximum(z, 0.0)
        y, arg = _pool_forward(a, cfg.pool)
        if keep:
            cache.append((x.shape, cols, z, a.shape, arg))
        x = y
    flat_shape = x.shape
    h = x.reshape(len(x), -1)
    dense_cache = []
    for i in range(model.n_dense):
        z = h @ P[f"fc{i}.W"] + P[f"fc{i}.b"]
        if keep:
            dense_cache.append((h, z))
        h = np.maximum(z, 0.0) if i < model.n_dense - 1 else z
    return h, (cache, flat_shape, dense_cache)


def logits(model: Model, images) -> np.ndarray:
    return _forward(model, _as_batch(model, images), keep=False)[0]


def forward(model: Model, images) -> np.ndarray:
    """Class probability rows."""
    return softmax(logits(model, images))


def loss_and_grad(model: Model, images, labels) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy + (l2 / 2) * sum of squared weights, and its gradient."""
    loss, grads, _ = _loss_grad(model, images, labels)
    return loss, grads


def _loss_grad(model: Model, images, labels):
    x = _as_batch(model, images)
    y = np.asarray(labels, dtype=int)
    if y.shape != (len(x),):
        raise ValueError("one label per image is required")
    if np.any((y < 0) | (y >= model.config.n_classes)):
        raise ValueError(f"labels must lie in 0..{model.config.n_classes - 1}")
    P, cfg = model.params, model.config
    out, (cache, flat_shape, dense_cache) = _forward(model, x, keep=True)
    z = out - out.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(x)
    ce = -logp[np.arange(n), y].mean()
    reg = 0.5 * cfg.l2 * sum(float(np.sum(v * v)) for k, v in P.items() if k.endswith(".W"))
    loss = float(ce + reg)

    grads = {}
    d = np.exp(logp)
    d[np.arange(n), y] -= 1.0
    d /= n
    for i in range(model.n_dense - 1, -1, -1):
        h, zi = dense_cache[i]
        if i < model.n_dense - 1:
            d = d * (zi > 0)
        grads[f"fc{i}.W"] = h.T @ d
        grads[f"fc{i}.b"] = d.sum(axis=0)
        d = d @ P[f"fc{i}.W"].T
    d = d.reshape(flat_shape)
    for i in range(model.n_conv - 1, -1, -1):
        x_shape, cols, zc, a_shape, arg = cache[i]
        d = _pool_backward(d, arg, a_shape, cfg.pool) * (zc > 0)
        d, grads[f"conv{i}.W"], grads[f"conv{i}.b"] = _conv_backward(d, cols, x_shape, P[f"conv{i}.W"], need_dx=i > 0)
    if cfg.l2:
        for k in grads:
            if k.endswith(".W"):
                grads[k] = grads[k] + cfg.l2 * P[k]
    return loss, {k: grads[k] for k in P}, np.exp(logp)


# --- training -------------------------------------------------------------

def prepare_images(pixels) -> np.ndarray:
    """uint8 pixels -> centred floats in [-0.5, 0.5]."""
    return np.asarray(pixels, dtype=float) / 255.0 - 0.5


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    test_loss: float | None
    test_accuracy: float | None


def _eval_loss_acc(model: Model, x, y, batch: int = 256) -> tuple[float, float]:
    total, correct = 0.0, 0
    for s in range(0, len(x), batch):
        p = forward(model, prepare_images(x[s:s + batch]))
        yb = y[s:s + batch]
        total += float(-np.log(np.maximum(p[np.arange(len(yb)), yb], 1e-300)).sum())
        correct += int((p.argmax(axis=1) == yb).sum())
    return total / len(x), correct / len(x)


def train(model: Model, train_x, train_y, test_x=None, test_y=None,
          config: ClassifierConfig | None = None,
          log: Callable[[EpochRecord], None] | None = None) -> tuple[Model, list[EpochRecord]]:
    """Mini-batch SGD (heavy-ball momentum) on uint8 images.

    Returns a new model; the input model is left untouched.
    """
    cfg = (config or model.config).validate()
    train_x = np.asarray(train_x)
    train_y = np.asarray(train_y, dtype=int)
    if len(train_x) == 0:
        raise ValueError("training set is empty")
    model = Model(cfg, {k: v.copy() for k, v in model.params.items()})
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    rng = _rng(cfg.seed, 1)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_x))
        loss_sum, correct = 0.0, 0
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            xb = prepare_images(train_x[idx])
            loss, grads, probs = _loss_grad(model, xb, train_y[idx])
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite loss {loss} at epoch {epoch}, batch starting {s}")
            loss_sum += loss * len(idx)
            correct += int((probs.argmax(axis=1) == train_y[idx]).sum())
            for k, g in grads.items():
                velocity[k] *= cfg.momentum
                velocity[k] -= cfg.learning_rate * g
                model.params[k] += velocity[k]
        # running averages over the epoch's batches
        train_loss, train_acc = loss_sum / len(order), correct / len(order)
        if test_x is not None and len(test_x):
            tl, ta = _eval_loss_acc(model, np.asarray(test_x), np.asarray(test_y, dtype=int))
        else:
            tl = ta = None
        rec = EpochRecord(epoch, float(train_loss), train_acc, tl, ta)
        history.append(rec)
        if log:
            log(rec)
    return model, history


def predict(model: Model, pixels, batch: int = 256) -> np.ndarray:
    """Arg-max class per image; ties go to the lowest class index."""
    out = [forward(model, prepare_images(pixels[s:s + batch])).argmax(axis=1)
           for s in range(0, len(pixels), batch)]
    return np.concatenate(out) if out else np.zeros(0, dtype=int)


# --- checkpoints ----------------------------------------------------------

MAGIC = b"ISMDCNN\x00"
CHECKPOINT_VERSION = 1


def checkpoint_bytes(model: Model) -> bytes:
    names = list(model.params)
    header = json.dumps({
        "config": model.config.to_dict(),
        "tensors": [{"name": k, "shape": list(model.params[k].shape)} for k in names],
    }, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(header)), header]
    parts += [np.ascontiguousarray(model.params[k], dtype="<f8").tobytes() for k in names]
    return b"".join(parts)


def model_from_bytes(raw: bytes) -> Model:
    if raw[:len(MAGIC)] != MAGIC:
        raise ValueError("not a model checkpoint (bad magic)")
    off = len(MAGIC)
    version, hlen = struct.unpack_from("<II", raw, off)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off += 8
    header = json.loads(raw[off:off + hlen])
    off += hlen
    params = {}
    for t in header["tensors"]:
        n = int(np.prod(t["shape"])) if t["shape"] else 1
        params[t["name"]] = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(t["shape"]).astype(float)
        off += 8 * n
    if off != len(raw):
        raise ValueError("trailing bytes after the last tensor")
    return Model(ClassifierConfig.from_dict(header["config"]), params)


def save_model(model: Model, path) -> None:
    atomic_write_bytes(Path(path), checkpoint_bytes(model))


def load_model(path) -> Model:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ArtifactError(f"cannot read checkpoint {path}: {exc}") from exc
    return model_from_bytes(raw)


# --- metrics --------------------------------------------------------------

def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def binary_metrics(tp: int, tn: int, fp: int, fn: int) -> dict[str, float]:
    """Accuracy, sensitivity (recall), specificity, precision and F-score.

    Any ratio with a zero denominator is reported as 0.
    """
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    return {
        "accuracy": _ratio(tp + tn, tp + tn + fp + fn),
        "sensitivity": recall,
        "specificity": _ratio(tn, tn + fp),
        "precision": precision,
        "f_score": _ratio(2.0 * precision * recall, precision + recall),
    }


METRIC_NAMES = ("accuracy", "sensitivity", "specificity", "precision", "f_score")


@dataclass
class ConfusionMatrix:
    """``counts[predicted, actual]``."""

    counts: np.ndarray
    labels: tuple[str, ...] = CLASS_NAMES

    @classmethod
    def from_predictions(cls, predicted, actual, n_classes: int = 3) -> "ConfusionMatrix":
        m = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(m, (np.asarray(predicted, dtype=int), np.asarray(actual, dtype=int)), 1)
        return cls(m)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def tallies(self, c: int) -> dict[str, int]:
        m = self.counts
        tp = int(m[c, c])
        fp = int(m[c, :].sum()) - tp
        fn = int(m[:, c].sum()) - tp
        return {"tp": tp, "fp": fp, "fn": fn, "tn": self.total - tp - fp - fn}

    def most_confused_pair(self) -> tuple[str, str]:
        sym = self.counts + self.counts.T
        np.fill_diagonal(sym, -1)
        i, j = np.unravel_index(np.argmax(sym), sym.shape)
        return tuple(sorted((self.labels[i], self.labels[j]), key=self.labels.index))

    def to_text(self) -> str:
        """Grid with count and share of all samples per cell; the last column
        gives precision / false discovery rate, the last row recall / miss rate."""
        m, n, total = self.counts, len(self.labels), max(self.total, 1)
        w = 18
        lines = ["rows: predicted class, columns: actual class", ""]
        lines.append(" " * 12 + "".join(f"{lab:>{w}}" for lab in self.labels) + f"{'':>{w}}")
        for i in range(n):
            row_sum = m[i].sum()
            cells = "".join(f"{f'{m[i, j]} ({100.0 * m[i, j] / total:.1f}%)':>{w}}" for j in range(n))
            prec = 100.0 * _ratio(m[i, i], row_sum)
            lines.append(f"{self.labels[i]:>12}" + cells + f"{f'{prec:.1f}% / {100 - prec:.1f}%':>{w}}"
                         if row_sum else f"{self.labels[i]:>12}" + cells + f"{'n/a':>{w}}")
        recalls = []
        for j in range(n):
            col = m[:, j].sum()
            r = 100.0 * _ratio(m[j, j], col)
            recalls.append(f"{f'{r:.1f}% / {100 - r:.1f}%':>{w}}" if col else f"{'n/a':>{w}}")
        acc = 100.0 * _ratio(np.trace(m), m.sum())
        lines.append(" " * 12 + "".join(recalls) + f"{f'{acc:.1f}% / {100 - acc:.1f}%':>{w}}")
        return "\n".join(lines) + "\n"


@dataclass
class EvalReport:
    confusion: ConfusionMatrix
    per_class: dict[str, dict[str, float]]
    macro: dict[str, float]
    overall_accuracy: float
    n_samples: int
    split: str = "validation"
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "n_samples": self.n_samples,
            "overall_accuracy": self.overall_accuracy,
            "macro": self.macro,
            "per_class": self.per_class,
            "confusion": {"orientation": "rows=predicted, columns=actual",
                          "labels": list(self.confusion.labels),
                          "counts": self.confusion.counts.tolist()},
            "most_confused_pair": list(self.confusion.most_confused_pair()),
            **self.extra,
        }


def report_from_confusion(cm: ConfusionMatrix, split: str = "validation") -> EvalReport:
    if cm.total == 0:
        raise ValueError("cannot evaluate an empty set")
    per_class = {}
    for c, name in enumerate(cm.labels):
        t = cm.tallies(c)
        per_class[name] = {**binary_metrics(t["tp"], t["tn"], t["fp"], t["fn"]), **t}
    macro = {k: float(np.mean([per_class[n][k] for n in cm.labels])) for k in METRIC_NAMES}
    overall = float(np.trace(cm.counts) / cm.total)
    return EvalReport(cm, per_class, macro, overall, cm.total, split)


def evaluate(model: Model, pixels, labels, split: str = "validation") -> EvalReport:
    labels = np.asarray(labels, dtype=int)
    if len(labels) == 0:
        raise ValueError("cannot evaluate an empty set")
    pred = predict(model, np.asarray(pixels))
    return report_from_confusion(ConfusionMatrix.from_predictions(pred, labels, model.config.n_classes), split)
