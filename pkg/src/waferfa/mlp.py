"""From-scratch MLP defect classifier: 56 -> 256 -> 9 with ReLU and dropout.

forward computes W2 . ReLU(Dropout_0.3(W1 x + b1)) + b2 over z-normalized
features (normalization statistics travel with the model). Dropout uses
inverted scaling, so inference needs no rescale and evaluation is
deterministic. Training is plain minibatch Adam with softmax cross-entropy;
the whole thing is numpy and reproducible bit-for-bit from the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import FEATURE_DIM
from .synth import CLASSES

HIDDEN_DIM = 256
MODEL_FORMAT_VERSION = 1


class EmptyClassError(ValueError):
    pass


class DimensionMismatchError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 1e-3
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.epochs, self.batch_size) <= 0 or self.learning_rate <= 0:
            raise ValueError("epochs, batch_size, and learning_rate must be positive")


@dataclass
class MlpModel:
    w1: np.ndarray  # (hidden, in)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (classes, hidden)
    b2: np.ndarray  # (classes,)
    feature_mean: np.ndarray
    feature_std: np.ndarray
    class_names: tuple[str, ...] = CLASSES
    dropout_rate: float = 0.3

    @property
    def in_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def n_classes(self) -> int:
        return self.w2.shape[0]

    def parameters(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


def init_model(
    seed: int = 0,
    in_dim: int = FEATURE_DIM,
    hidden_dim: int = HIDDEN_DIM,
    class_names: tuple[str, ...] = CLASSES,
    dropout_rate: float = 0.3,
) -> MlpModel:
    rng = np.random.default_rng(seed)
    n_classes = len(class_names)
    return MlpModel(
        w1=rng.normal(0.0, np.sqrt(2.0 / in_dim), size=(hidden_dim, in_dim)),
        b1=np.zeros(hidden_dim),
        w2=rng.normal(0.0, np.sqrt(2.0 / hidden_dim), size=(n_classes, hidden_dim)),
        b2=np.zeros(n_classes),
        feature_mean=np.zeros(in_dim),
        feature_std=np.ones(in_dim),
        class_names=tuple(class_names),
        dropout_rate=dropout_rate,
    )


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def forward(
    model: MlpModel,
    features: np.ndarray,
    train_mode: bool = False,
    dropout_rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, dict]:
    """Logits plus cached activations for the backward pass.

    Accepts one vector (in_dim,) or a batch (n, in_dim). In eval mode the
    output is independent of dropout_rng.
    """
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if x.shape[1] != model.in_dim:
        raise DimensionMismatchError(f"expected {model.in_dim} features, got {x.shape[1]}")
    xn = (x - model.feature_mean) / model.feature_std
    z1 = xn @ model.w1.T + model.b1
    if train_mode and model.dropout_rate > 0.0:
        if dropout_rng is None:
            raise ValueError("train_mode forward needs a dropout_rng")
        keep = 1.0 - model.dropout_rate
        mask = (dropout_rng.random(z1.shape) < keep) / keep
    else:
        mask = np.ones_like(z1)
    z1d = z1 * mask
    h = np.maximum(z1d, 0.0)
    logits = h @ model.w2.T + model.b2
    cache = {"xn": xn, "z1d": z1d, "mask": mask, "h": h}
    return (logits[0] if np.ndim(features) == 1 else logits), cache


def loss_and_grads(
    model: MlpModel,
    features: np.ndarray,
    labels: np.ndarray,
    train_mode: bool = False,
    dropout_rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean softmax cross-entropy and analytic gradients."""
    x = np.atleast_2d(features)
    n = x.shape[0]
    logits, cache = forward(model, x, train_mode=train_mode, dropout_rng=dropout_rng)
    probs = softmax(logits)
    picked = probs[np.arange(n), labels]
    loss = float(-np.log(np.clip(picked, 1e-300, None)).mean())

    grad_logits = probs.copy()
    grad_logits[np.arange(n), labels] -= 1.0
    grad_logits /= n
    grads = {
        "w2": grad_logits.T @ cache["h"],
        "b2": grad_logits.sum(axis=0),
    }
    grad_h = grad_logits @ model.w2
    grad_z1d = grad_h * (cache["z1d"] > 0.0)
    grad_z1 = grad_z1d * cache["mask"]
    grads["w1"] = grad_z1.T @ cache["xn"]
    grads["b1"] = grad_z1.sum(axis=0)
    return loss, grads


def predict(model: MlpModel, features: np.ndarray) -> tuple[str, float, np.ndarray]:
    """(class name, confidence, full softmax distribution) for one map.

    Ties at equal logits resolve to the lowest class index.
    """
    logits, _ = forward(model, features)
    probs = softmax(logits)
    idx = int(np.argmax(probs))
    return model.class_names[idx], float(probs[idx]), probs


def predict_batch(model: MlpModel, features: np.ndarray) -> np.ndarray:
    logits, _ = forward(model, np.atleast_2d(features))
    return np.argmax(logits, axis=1)


def train(
    features: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig | None = None,
    class_names: tuple[str, ...] = CLASSES,
    hidden_dim: int = HIDDEN_DIM,
) -> tuple[MlpModel, list[float]]:
    """Train from scratch; returns the model and per-epoch mean batch loss."""
    config = config or TrainConfig()
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    present = set(np.unique(y).tolist())
    missing = [name for i, name in enumerate(class_names) if i not in present]
    if missing:
        raise EmptyClassError(f"training split has no samples for: {', '.join(missing)}")

    model = init_model(config.seed, in_dim=x.shape[1], hidden_dim=hidden_dim, class_names=class_names)
    model.feature_mean = x.mean(axis=0)
    std = x.std(axis=0)
    model.feature_std = np.where(std > 0, std, 1.0)

    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xAD]))
    moments = {
        name: (np.zeros_like(param), np.zeros_like(param))
        for name, param in model.parameters().items()
    }
    step = 0
    curve = []
    for _ in range(config.epochs):
        order = rng.permutation(len(x))
        epoch_losses = []
        for start in range(0, len(x), config.batch_size):
            batch = order[start : start + config.batch_size]
            loss, grads = loss_and_grads(model, x[batch], y[batch], train_mode=True, dropout_rng=rng)
            epoch_losses.append(loss)
            step += 1
            for name, param in model.parameters().items():
                m, v = moments[name]
                g = grads[name]
                m *= config.beta1
                m += (1 - config.beta1) * g
                v *= config.beta2
                v += (1 - config.beta2) * g * g
                m_hat = m / (1 - config.beta1**step)
                v_hat = v / (1 - config.beta2**step)
                param -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
        curve.append(float(np.mean(epoch_losses)))
    return model, curve


def gradient_check(
    model: MlpModel,
    features: np.ndarray,
    labels: np.ndarray,
    h: float = 1e-4,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Dropout must be off (eval-mode loss is used); h is relative to each
    parameter's magnitude.
    """
    _, analytic = loss_and_grads(model, features, labels, train_mode=False)
    worst = 0.0
    for name, param in model.parameters().items():
        flat = param.reshape(-1)
        grad_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            step = h * max(1.0, abs(original))
            flat[i] = original + step
            up, _ = loss_and_grads(model, features, labels, train_mode=False)
            flat[i] = original - step
            down, _ = loss_and_grads(model, features, labels, train_mode=False)
            flat[i] = original
            numeric = (up - down) / (2.0 * step)
            denom = max(abs(grad_flat[i]) + abs(numeric), 1e-8)
            worst = max(worst, abs(grad_flat[i] - numeric) / denom)
    return worst


def min_hidden_preactivation(model: MlpModel, features: np.ndarray) -> float:
    """Smallest |W1 x + b1| over a batch; used to avoid ReLU kinks in checks."""
    x = np.atleast_2d(features)
    xn = (x - model.feature_mean) / model.feature_std
    z1 = xn @ model.w1.T + model.b1
    return float(np.abs(z1).min())


# --- splitting and evaluation ---------------------------------------------------

def stratified_split(
    labels: np.ndarray, val_fraction: float, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Index split preserving class proportions within one sample per class."""
    y = np.asarray(labels)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x57A7]))
    train_idx, val_idx = [], []
    for value in np.unique(y):
        members = np.flatnonzero(y == value)
        members = members[rng.permutation(len(members))]
        n_val = int(round(len(members) * val_fraction))
        val_idx.extend(members[:n_val])
        train_idx.extend(members[n_val:])
    return np.sort(np.asarray(train_idx)), np.sort(np.asarray(val_idx))


@dataclass
class ClassificationReport:
    class_names: tuple[str, ...]
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    f1: tuple[float, ...]
    support: tuple[int, ...]
    accuracy: float
    correct: int
    total: int

    @property
    def macro_precision(self) -> float:
        return float(np.mean(self.precision))

    @property
    def macro_recall(self) -> float:
        return float(np.mean(self.recall))

    @property
    def macro_f1(self) -> float:
        return float(np.mean(self.f1))

    def to_dict(self) -> dict:
        return {
            "per_class": {
                name: {
                    "precision": self.precision[i],
                    "recall": self.recall[i],
                    "f1": self.f1[i],
                    "support": self.support[i],
                }
                for i, name in enumerate(self.class_names)
            },
            "macro": {
                "precision": self.macro_precision,
                "recall": self.macro_recall,
                "f1": self.macro_f1,
            },
            "accuracy": self.accuracy,
            "correct": self.correct,
            "total": self.total,
        }

    def to_text(self) -> str:
        width = max(len(n) for n in self.class_names) + 2
        lines = [f"{'Defect Class':<{width}}  Prec.   Recall  F1      Support"]
        for i, name in enumerate(self.class_names):
            lines.append(
                f"{name:<{width}}  {self.precision[i]:.3f}   {self.recall[i]:.3f}   "
                f"{self.f1[i]:.3f}   {self.support[i]}"
            )
        lines.append(
            f"{'Macro avg.':<{width}}  {self.macro_precision:.3f}   {self.macro_recall:.3f}   "
            f"{self.macro_f1:.3f}   {self.total}"
        )
        lines.append(f"Overall acc.  {self.accuracy:.1%} ({self.correct}/{self.total})")
        return "\n".join(lines)


def evaluate(model: MlpModel, features: np.ndarray, labels: np.ndarray) -> ClassificationReport:
    y = np.asarray(labels)
    predicted = predict_batch(model, features)
    n_classes = model.n_classes
    precision, recall, f1, support = [], [], [], []
    for c in range(n_classes):
        tp = int(np.sum((predicted == c) & (y == c)))
        fp = int(np.sum((predicted == c) & (y != c)))
        fn = int(np.sum((predicted != c) & (y == c)))
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        precision.append(p)
        recall.append(r)
        f1.append(f)
        support.append(int(np.sum(y == c)))
    correct = int(np.sum(predicted == y))
    return ClassificationReport(
        class_names=model.class_names,
        precision=tuple(precision),
        recall=tuple(recall),
        f1=tuple(f1),
        support=tuple(support),
        accuracy=correct / len(y) if len(y) else 0.0,
        correct=correct,
        total=len(y),
    )


# --- persistence -----------------------------------------------------------------

def save_model(model: MlpModel, path: str | Path) -> None:
    np.savez_compressed(
        path,
        format_version=np.array([MODEL_FORMAT_VERSION]),
        w1=model.w1,
        b1=model.b1,
        w2=model.w2,
        b2=model.b2,
        feature_mean=model.feature_mean,
        feature_std=model.feature_std,
        dropout_rate=np.array([model.dropout_rate]),
        class_names=np.array(list(model.class_names)),
    )


def load_model(path: str | Path) -> MlpModel:
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"][0])
        if version != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {version}")
        return MlpModel(
            w1=data["w1"],
            b1=data["b1"],
            w2=data["w2"],
            b2=data["b2"],
            feature_mean=data["feature_mean"],
            feature_std=data["feature_std"],
            dropout_rate=float(data["dropout_rate"][0]),
            class_names=tuple(str(n) for n in data["class_names"]),
        )


# --- dataset loading ---------------------------------------------------------------

def load_dataset_features(dataset_dir: str | Path):
    """Recompute feature vectors for every sample in a written dataset.

    Returns (X, y, split) where split maps "train"/"val" to index arrays.
    """
    from .features import extract_features
    from .synth import load_manifest
    from .wafermap import WaferMap

    dataset_dir = Path(dataset_dir)
    manifest = load_manifest(dataset_dir)
    ids = []
    vectors = []
    labels = []
    for sample in manifest["samples"]:
        wmap = WaferMap.load_png(dataset_dir / sample["image"])
        vectors.append(extract_features(wmap))
        labels.append(CLASSES.index(sample["defect_class"]))
        ids.append(sample["sample_id"])
    index_of = {sid: i for i, sid in enumerate(ids)}
    split = {
        part: np.asarray([index_of[sid] for sid in manifest["split"][part]], dtype=int)
        for part in ("train", "val")
    }
    return np.asarray(vectors), np.asarray(labels, dtype=np.int64), split
