"""HMDLF network assembly, single-modality baselines, objective and model files."""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .layers import (GRU, RNN, Attention, Conv1d, Dense, Dropout, Flatten, LastStep, MaxPool1d, ReLU,
                     Sequential)
from .tensor import Rng, ShapeError

KINDS = ("rnn", "gru", "cnn", "cnn_gru", "cnn_gru_attention", "hmdlf_cnn_gru", "hmdlf_attention")
KIND_ALIASES = {"hmdlf": "hmdlf_attention"}


class ConfigError(ValueError):
    """Invalid model or run configuration."""


class ModelFileError(ValueError):
    """A model file could not be read back."""


@dataclass
class BranchConfig:
    conv_filters: int = 64
    kernel_width: int = 3
    pool_width: int = 2
    hidden: int = 128
    attention_width: int = 128
    use_attention: bool = True
    gru_bias: bool = False

    def validate(self) -> None:
        for name in ("conv_filters", "kernel_width", "pool_width", "hidden", "attention_width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"branch {name} must be >= 1")
        if self.kernel_width % 2 == 0:
            raise ConfigError(f"kernel_width must be odd, got {self.kernel_width}")


@dataclass
class ModelConfig:
    kind: str = "hmdlf_attention"
    modalities: list[str] = field(default_factory=lambda: ["flow", "speed", "journey_time"])
    lookup: int = 20
    branch: BranchConfig = field(default_factory=BranchConfig)
    head_hidden: int = 128
    dropout: float = 0.2
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        branch = BranchConfig(**d.pop("branch", {}))
        return cls(branch=branch, **d)

    def to_dict(self) -> dict:
        return asdict(self)

    def resolved(self) -> "ModelConfig":
        """Canonical kind, single-modality kinds restricted to flow, attention flag synced."""
        kind = KIND_ALIASES.get(self.kind, self.kind)
        if kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        branch = BranchConfig(**asdict(self.branch))
        branch.validate()
        if kind in ("cnn_gru", "hmdlf_cnn_gru"):
            branch.use_attention = False
        elif kind in ("cnn_gru_attention", "hmdlf_attention"):
            branch.use_attention = True
        modalities = list(self.modalities)
        if not kind.startswith("hmdlf"):
            modalities = modalities[:1] or ["flow"]
        if not modalities:
            raise ConfigError("at least one modality is required")
        if len(set(modalities)) != len(modalities):
            raise ConfigError(f"duplicate modalities in {modalities}")
        if self.lookup < 1:
            raise ConfigError("lookup must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if kind in ("cnn", "cnn_gru", "cnn_gru_attention", "hmdlf_cnn_gru", "hmdlf_attention") \
                and self.lookup < branch.pool_width:
            raise ConfigError(f"lookup {self.lookup} shorter than pool width {branch.pool_width}")
        return ModelConfig(kind=kind, modalities=modalities, lookup=self.lookup, branch=branch,
                           head_hidden=self.head_hidden, dropout=self.dropout, seed=self.seed)


@dataclass
class LossValue:
    data: float
    penalty: float
    total: float


def _cnn_gru_branch(cfg: BranchConfig, rng: Rng) -> tuple[Sequential, int]:
    layers = [
        Conv1d(1, cfg.conv_filters, cfg.kernel_width, rng=rng.spawn()),
        ReLU(),
        MaxPool1d(cfg.pool_width),
        GRU(cfg.conv_filters, cfg.hidden, use_bias=cfg.gru_bias, rng=rng.spawn()),
    ]
    if cfg.use_attention:
        layers.append(Attention(cfg.hidden, cfg.attention_width, rng=rng.spawn()))
    else:
        layers.append(LastStep())
    return Sequential(layers), cfg.hidden


class HmdlfModel:
    """Per-modality branches whose outputs are concatenated and fed to a head.

    The same container holds the single-modality baselines: they are one
    branch plus a head. Inputs are a mapping modality -> ``[B, w]`` or
    ``[B, w, 1]``; the output is a ``[B]`` vector of predictions.
    """

    def __init__(self, config: ModelConfig):
        cfg = config.resolved()
        self.config = cfg
        self.scaler: dict[str, list[float]] | None = None
        rng = Rng(cfg.seed)
        b = cfg.branch
        self.branches: dict[str, Sequential] = {}
        widths = []
        for name in cfg.modalities:
            if cfg.kind == "rnn":
                branch = Sequential([RNN(1, b.hidden, rng=rng.spawn()), LastStep()])
                width = b.hidden
            elif cfg.kind == "gru":
                branch = Sequential([GRU(1, b.hidden, use_bias=b.gru_bias, rng=rng.spawn()), LastStep()])
                width = b.hidden
            elif cfg.kind == "cnn":
                branch = Sequential([Conv1d(1, b.conv_filters, b.kernel_width, rng=rng.spawn()), ReLU(),
                                     MaxPool1d(b.pool_width), Flatten()])
                width = (cfg.lookup // b.pool_width) * b.conv_filters
            else:
                branch, width = _cnn_gru_branch(b, rng)
            self.branches[name] = branch
            widths.append(width)
        fused = sum(widths)
        if cfg.kind in ("rnn", "gru", "cnn"):
            self.head = Sequential([Dense(fused, 1, "linear", rng=rng.spawn())])
        else:
            self.head = Sequential([
                Dense(fused, cfg.head_hidden, "relu", rng=rng.spawn()),
                Dropout(cfg.dropout, rng=rng.spawn()),
                Dense(cfg.head_hidden, 1, "linear", rng=rng.spawn()),
            ])
        self._widths = widths

    @property
    def modalities(self) -> list[str]:
        return list(self.config.modalities)

    def _named(self):
        for mod, branch in self.branches.items():
            for key, layer, name, value in branch.named_params():
                yield f"branch.{mod}.{key}", layer, name, value
        for key, layer, name, value in self.head.named_params():
            yield f"head.{key}", layer, name, value

    def parameters(self) -> dict[str, np.ndarray]:
        """Every trainable array, once, in a stable order. Arrays are live references."""
        return {full: value for full, _, _, value in self._named()}

    def gradients(self) -> dict[str, np.ndarray]:
        return {full: layer.grads[name] for full, layer, name, _ in self._named()}

    def weight_names(self) -> list[str]:
        """Parameters subject to the L2 penalty (all but biases)."""
        return [full for full, layer, name, _ in self._named() if name in layer.weight_names]

    def n_params(self) -> int:
        return sum(v.size for v in self.parameters().values())

    def set_parameters(self, values: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(values) != set(params):
            raise ShapeError("parameter names do not match the model")
        for name, target in params.items():
            src = np.asarray(values[name], dtype=np.float64)
            if src.shape != target.shape:
                raise ShapeError(f"{name}: shape {src.shape} does not match {target.shape}")
            target[...] = src

    def _inputs(self, inputs: dict[str, np.ndarray]) -> list[np.ndarray]:
        missing = [m for m in self.config.modalities if m not in inputs]
        if missing:
            raise ShapeError(f"missing input modality {missing[0]!r}")
        arrays = []
        for m in self.config.modalities:
            x = np.asarray(inputs[m], dtype=np.float64)
            if x.ndim == 2:
                x = x[:, :, None]
            if x.ndim != 3 or x.shape[2] != 1:
                raise ShapeError(f"modality {m!r}: expected [B, w] or [B, w, 1], got {x.shape}")
            arrays.append(x)
        if len({a.shape for a in arrays}) > 1:
            raise ShapeError(f"inconsistent batch or window across modalities: {[a.shape for a in arrays]}")
        if arrays[0].shape[1] != self.config.lookup:
            raise ShapeError(f"window length {arrays[0].shape[1]} != model lookup {self.config.lookup}")
        return arrays

    def forward(self, inputs: dict[str, np.ndarray], training: bool = False) -> np.ndarray:
        feats = [branch.forward(x, training) for branch, x in zip(self.branches.values(), self._inputs(inputs))]
        return self.head.forward(np.concatenate(feats, axis=1), training)[:, 0]

    __call__ = forward

    def backward(self, dpred: np.ndarray) -> dict[str, np.ndarray]:
        """Backpropagate d(loss)/d(prediction); returns input gradients per modality."""
        dfused = self.head.backward(np.asarray(dpred, dtype=np.float64)[:, None])
        dx = {}
        start = 0
        for (mod, branch), width in zip(self.branches.items(), self._widths):
            dx[mod] = branch.backward(dfused[:, start : start + width])
            start += width
        return dx

    def penalty(self, lam: float) -> float:
        params = self.parameters()
        return 0.5 * lam * sum(float(np.sum(params[n] ** 2)) for n in self.weight_names())

    def loss(self, predictions: np.ndarray, targets: np.ndarray, lam: float = 0.0) -> LossValue:
        return loss(predictions, targets, self, lam)

    def loss_and_grads(self, inputs, targets, lam: float = 0.0, training: bool = True):
        """Forward, objective and backward in one call; returns (LossValue, grads)."""
        pred = self.forward(inputs, training)
        value = loss(pred, targets, self, lam)
        self.backward(2.0 * (pred - targets) / pred.shape[0])
        grads = self.gradients()
        if lam:
            params = self.parameters()
            for n in self.weight_names():
                grads[n] = grads[n] + lam * params[n]
        return value, grads


def loss(predictions, targets, model: HmdlfModel | None = None, lam: float = 0.0) -> LossValue:
    """Mean squared error plus (lam/2) * sum of squared weights (biases excluded)."""
    pred = np.asarray(predictions, dtype=np.float64).reshape(-1)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    if pred.shape != y.shape:
        raise ShapeError(f"predictions {pred.shape} and targets {y.shape} differ in length")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    data = float(np.mean((pred - y) ** 2)) if y.size else 0.0
    pen = model.penalty(lam) if (model is not None and lam) else 0.0
    return LossValue(data=data, penalty=pen, total=data + pen)


def build_model(config: ModelConfig | dict) -> HmdlfModel:
    if isinstance(config, dict):
        config = ModelConfig.from_dict(config)
    return HmdlfModel(config)


def build_baseline(kind: str, config: ModelConfig | dict | None = None) -> HmdlfModel:
    """Single-modality network of the given kind (flow only)."""
    if config is None:
        config = ModelConfig()
    elif isinstance(config, dict):
        config = ModelConfig.from_dict(config)
    kind = KIND_ALIASES.get(kind, kind)
    if kind not in ("rnn", "gru", "cnn", "cnn_gru", "cnn_gru_attention"):
        raise ConfigError(f"unknown baseline kind {kind!r}")
    cfg = ModelConfig(**{**asdict(config), "kind": kind, "branch": config.branch})
    cfg.modalities = cfg.modalities[:1] or ["flow"]
    return HmdlfModel(cfg)


# -- model files ------------------------------------------------------------
#
# layout (all integers little-endian):
#   8 bytes   magic  b"HMDLFMOD"
#   u32       format version
#   u64       header length in bytes
#   header    UTF-8 JSON: artifact version, config, scaler, meta, tensor index
#             [{"name", "shape", "offset"}] (offset counted in float64 items),
#             payload item count and CRC-32
#   payload   all tensors back to back as little-endian float64

MAGIC = b"HMDLFMOD"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


def save_model(model: HmdlfModel, destination, meta: dict | None = None) -> Path:
    params = model.parameters()
    index, chunks, offset = [], [], 0
    for name, value in params.items():
        index.append({"name": name, "shape": list(value.shape), "offset": offset})
        chunks.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
        offset += value.size
    payload = b"".join(chunks)
    header = {
        "artifact": "hmdlf",
        "artifact_version": __version__,
        "config": model.config.to_dict(),
        "scaler": model.scaler,
        "meta": meta or {},
        "tensors": index,
        "payload_items": offset,
        "payload_crc32": zlib.crc32(payload),
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(destination)
    path.write_bytes(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(head)) + head + payload)
    return path


def read_model_header(source) -> dict:
    return _read(source)[0]


def _read(source) -> tuple[dict, bytes]:
    blob = Path(source).read_bytes()
    if len(blob) < _PREFIX.size:
        raise ModelFileError(f"{source}: file too short to be a model file")
    magic, version, head_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise ModelFileError(f"{source}: not a model file (bad magic)")
    if version != FORMAT_VERSION:
        raise ModelFileError(f"{source}: unsupported format version {version} (expected {FORMAT_VERSION})")
    end = _PREFIX.size + head_len
    if len(blob) < end:
        raise ModelFileError(f"{source}: truncated header")
    try:
        header = json.loads(blob[_PREFIX.size : end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"{source}: corrupt header ({exc})") from None
    payload = blob[end:]
    if len(payload) != 8 * header.get("payload_items", -1):
        raise ModelFileError(f"{source}: payload is {len(payload)} bytes, expected "
                             f"{8 * header.get('payload_items', 0)} (truncated or padded file)")
    if zlib.crc32(payload) != header.get("payload_crc32"):
        raise ModelFileError(f"{source}: payload checksum mismatch")
    return header, payload


def load_model(source) -> HmdlfModel:
    header, payload = _read(source)
    try:
        model = HmdlfModel(ModelConfig.from_dict(header["config"]))
    except (TypeError, KeyError, ConfigError) as exc:
        raise ModelFileError(f"{source}: invalid config section ({exc})") from None
    flat = np.frombuffer(payload, dtype="<f8")
    values = {}
    for entry in header["tensors"]:
        n = int(np.prod(entry["shape"]))
        values[entry["name"]] = flat[entry["offset"] : entry["offset"] + n].reshape(entry["shape"])
    try:
        model.set_parameters(values)
    except ShapeError as exc:
        raise ModelFileError(f"{source}: {exc}") from None
    model.scaler = header.get("scaler")
    return model
