"""Adam, min-max scaling and the early-stopping training loop."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .data import ModalitySeries, MultimodalDataset, WindowedSamples
from .model import ConfigError, HmdlfModel
from .tensor import Rng, ShapeError


class TrainingDivergedError(FloatingPointError):
    """The loss became non-finite."""


class AdamState:
    """Bias-corrected Adam over a dict of named parameter arrays (updated in place)."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        for name, p in params.items():
            if name not in grads:
                raise ShapeError(f"no gradient for parameter {name!r}")
            if grads[name].shape != p.shape:
                raise ShapeError(f"{name}: gradient shape {grads[name].shape} != parameter shape {p.shape}")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return params


def adam_step(state: AdamState, params, grads):
    return state.step(params, grads)


class Scaler:
    """Per-modality min-max scaling to [0, 1]; a constant series maps to 0."""

    def __init__(self, ranges: dict[str, tuple[float, float]]):
        self.ranges = {k: (float(v[0]), float(v[1])) for k, v in ranges.items()}

    def _range(self, name):
        if name not in self.ranges:
            raise KeyError(f"scaler has no modality {name!r} (fitted on {', '.join(self.ranges)})")
        return self.ranges[name]

    def apply(self, values, name: str = "flow") -> np.ndarray:
        lo, hi = self._range(name)
        values = np.asarray(values, dtype=np.float64)
        if hi == lo:
            return np.zeros_like(values)
        return (values - lo) / (hi - lo)

    def invert(self, values, name: str = "flow") -> np.ndarray:
        lo, hi = self._range(name)
        return np.asarray(values, dtype=np.float64) * (hi - lo) + lo

    def transform(self, dataset: MultimodalDataset) -> MultimodalDataset:
        return MultimodalDataset(dataset.timestamps, {k: self.apply(v, k) for k, v in dataset.series.items()},
                                 dataset.interval_minutes)

    def to_dict(self) -> dict:
        return {k: [lo, hi] for k, (lo, hi) in self.ranges.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls({k: tuple(v) for k, v in d.items()})


def fit_scaler(data) -> Scaler:
    """Fit on a ModalitySeries, a MultimodalDataset, or a bare array (named 'flow')."""
    if isinstance(data, MultimodalDataset):
        items = data.series.items()
    elif isinstance(data, ModalitySeries):
        items = [(data.name, data.values)]
    else:
        items = [("flow", np.asarray(data, dtype=np.float64))]
    ranges = {}
    for name, values in items:
        if len(values) == 0:
            raise ValueError(f"cannot fit a scaler on an empty {name} series")
        ranges[name] = (float(np.min(values)), float(np.max(values)))
    return Scaler(ranges)


@dataclass
class TrainConfig:
    batch_size: int = 512
    max_epochs: int = 300
    patience: int | None = 10  # None disables early stopping
    lookup: int = 20
    lr: float = 1e-3
    l2: float = 1e-4
    seed: int = 0
    val_fraction: float = 0.2
    clip_norm: float | None = None  # global-norm clipping, e.g. 5.0

    def validate(self) -> None:
        for name in ("batch_size", "max_epochs", "lookup"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.patience is not None and not 0 < self.patience < self.max_epochs:
            raise ConfigError("patience must be positive and smaller than max_epochs")
        if self.lr < 0 or self.l2 < 0:
            raise ConfigError("lr and l2 must be non-negative")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in (0, 1)")


@dataclass
class TrainReport:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_mse: float = float("inf")
    stopped_epoch: int = 0
    epoch_seconds: list[float] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_text(self) -> str:
        """Tab-separated per-epoch curve with a commented header.

        Wall-clock times are excluded; see ``timing_text``.
        """
        lines = [f"# hmdlf {__version__} train report",
                 f"# config {json.dumps(self.config, sort_keys=True)}",
                 f"# best_epoch {self.best_epoch}",
                 f"# best_val_mse {self.best_val_mse!r}",
                 f"# stopped_epoch {self.stopped_epoch}"]
        for k in sorted(self.metrics):
            lines.append(f"# metric {k} {json.dumps(self.metrics[k], sort_keys=True)}")
        lines.append("epoch\ttrain_mse\tval_mse")
        lines += [f"{e['epoch']}\t{e['train_mse']!r}\t{e['val_mse']!r}" for e in self.epochs]
        return "\n".join(lines) + "\n"

    def timing_text(self) -> str:
        return "epoch\tseconds\n" + "".join(f"{i + 1}\t{s:.6f}\n" for i, s in enumerate(self.epoch_seconds))


def predict(model: HmdlfModel, samples: WindowedSamples, batch_size: int = 2048) -> np.ndarray:
    """Evaluation-mode predictions in normalised units."""
    out = [model.forward({k: v[i : i + batch_size] for k, v in samples.inputs.items()}, training=False)
           for i in range(0, len(samples), batch_size)]
    return np.concatenate(out)


def evaluate_mse(model: HmdlfModel, samples: WindowedSamples) -> float:
    return float(np.mean((predict(model, samples) - samples.targets) ** 2))


def chronological_split(samples: WindowedSamples, val_fraction: float = 0.2):
    n = len(samples)
    n_train = int(round(n * (1.0 - val_fraction)))
    if n_train < 1 or n_train >= n:
        raise ValueError(f"cannot split {n} samples into non-empty training and validation parts")
    return samples.subset(slice(0, n_train)), samples.subset(slice(n_train, n))


def train(model: HmdlfModel, samples: WindowedSamples, config: TrainConfig,
          validation: WindowedSamples | None = None, log=None) -> tuple[HmdlfModel, TrainReport]:
    """Fit ``model`` on normalised windows with Adam and early stopping.

    Unless ``validation`` is given, the last ``val_fraction`` of ``samples``
    (in time order) is held out. After stopping, the parameters of the epoch
    with the lowest validation MSE are restored.
    """
    config.validate()
    if validation is None:
        train_set, val_set = chronological_split(samples, config.val_fraction)
    else:
        train_set, val_set = samples, validation
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("empty training or validation split")
    rng = Rng(config.seed)
    opt = AdamState(lr=config.lr)
    params = model.parameters()
    report = TrainReport(config=asdict(config))
    best_snapshot = {k: v.copy() for k, v in params.items()}
    wait = 0
    n = len(train_set)
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = {k: v[idx] for k, v in train_set.inputs.items()}
            # a non-finite loss is reported just below, so the backward pass may stay quiet about it
            with np.errstate(invalid="ignore", over="ignore"):
                value, grads = model.loss_and_grads(batch, train_set.targets[idx], config.l2, training=True)
            if not np.isfinite(value.total):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch} (batch starting {start})")
            if config.clip_norm:
                norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
                if norm > config.clip_norm:
                    grads = {k: g * (config.clip_norm / norm) for k, g in grads.items()}
            opt.step(params, grads)
            total += value.data * len(idx)
        val_mse = evaluate_mse(model, val_set)
        if not np.isfinite(val_mse):
            raise TrainingDivergedError(f"non-finite validation MSE at epoch {epoch}")
        report.epochs.append({"epoch": epoch, "train_mse": total / n, "val_mse": val_mse})
        report.epoch_seconds.append(time.perf_counter() - t0)
        if val_mse < report.best_val_mse:
            report.best_val_mse, report.best_epoch = val_mse, epoch
            best_snapshot = {k: v.copy() for k, v in params.items()}
            wait = 0
        else:
            wait += 1
        if log:
            log(f"epoch {epoch:4d}  train_mse {total / n:.6g}  val_mse {val_mse:.6g}")
        report.stopped_epoch = epoch
        if config.patience is not None and wait >= config.patience:
            break
    model.set_parameters(best_snapshot)
    return model, report
