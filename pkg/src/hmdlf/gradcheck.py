"""Finite-difference verification of every backward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import GRU, RNN, Attention, Conv1d, Dense, Dropout, Layer, MaxPool1d
from .model import BranchConfig, ModelConfig, build_model
from .tensor import Rng, fd_gradient, relative_error

THRESHOLD = 1e-4
STEP = 1e-5
COMPONENTS = ("conv1d", "maxpool", "dense", "dropout", "rnn", "gru", "attention", "hmdlf_end_to_end")


@dataclass
class CheckRow:
    component: str
    seeds: int
    checked: int  # number of gradient arrays compared
    max_rel_error: float
    passed: bool


def _corrupt(layer: Layer) -> None:
    """Negative control: scale this instance's input and parameter gradients by 1.01."""
    original = layer.backward

    def bad(dout):
        dx = original(dout)
        layer.grads = {k: 1.01 * g for k, g in layer.grads.items()}
        return 1.01 * dx

    layer.backward = bad


def _layer_case(component: str, seed: int) -> tuple[Layer, np.ndarray, dict]:
    """A small random layer instance and an input for it."""
    rng = Rng(seed)
    gen = np.random.default_rng(seed)
    kwargs = {}
    if component == "conv1d":
        layer, x = Conv1d(2, 3, 3, rng=rng), gen.normal(size=(2, 7, 2))
        layer.params["bias"][:] = gen.normal(size=3)
    elif component == "maxpool":
        layer, x = MaxPool1d(2), gen.normal(size=(2, 7, 3))
    elif component == "dense":
        act = ("linear", "relu", "tanh")[seed % 3]
        layer, x = Dense(4, 3, act, rng=rng), gen.normal(size=(3, 4))
        layer.params["bias"][:] = gen.normal(size=3)
    elif component == "dropout":
        layer, x = Dropout(0.3, rng=Rng(seed)), gen.normal(size=(3, 5))
        kwargs["dropout_seed"] = seed
    elif component == "rnn":
        layer, x = RNN(3, 4, use_bias=True, rng=rng), gen.normal(size=(2, 5, 3))
    elif component == "gru":
        layer, x = GRU(3, 4, use_bias=bool(seed % 2), rng=rng), gen.normal(size=(2, 5, 3))
    elif component == "attention":
        layer, x = Attention(3, 4, rng=rng), gen.normal(size=(2, 4, 3))
        layer.params["b_h"][:] = gen.normal(size=4)
    else:
        raise ValueError(component)
    return layer, x, kwargs


def check_layer(component: str, seed: int, corrupt: bool = False) -> tuple[int, float]:
    layer, x, kw = _layer_case(component, seed)
    gen = np.random.default_rng(seed + 1000)
    modes = [False]
    if component == "dropout":
        # evaluation path, then a fixed-mask training path
        modes = [False, True]
    worst, checked = 0.0, 0
    for training in modes:
        def run():
            if component == "dropout":
                layer.rng = Rng(kw["dropout_seed"])
            return layer.forward(x, training)

        out = run()
        weights = gen.normal(size=out.shape)

        def f(_):
            return float(np.sum(weights * run()))

        run()
        if corrupt:
            _corrupt(layer)
        dx = layer.backward(weights)
        worst = max(worst, relative_error(dx, fd_gradient(f, x, STEP)))
        checked += 1
        for name, p in layer.params.items():
            worst = max(worst, relative_error(layer.grads[name], fd_gradient(f, p, STEP)))
            checked += 1
        if corrupt:
            layer.backward = type(layer).backward.__get__(layer)
    return checked, worst


def check_end_to_end(seed: int, corrupt: bool = False) -> tuple[int, float]:
    """MSE + L2 objective of a 2-modality toy model against every parameter."""
    cfg = ModelConfig(kind="hmdlf_attention", modalities=["flow", "speed"], lookup=8,
                      branch=BranchConfig(conv_filters=3, hidden=4, attention_width=4), head_hidden=5, seed=seed)
    model = build_model(cfg)
    gen = np.random.default_rng(seed)
    for p in model.parameters().values():
        if p.ndim == 1:
            p[:] = gen.normal(scale=0.1, size=p.shape)
    x = {m: gen.normal(size=(2, 8)) for m in model.modalities}
    y = gen.normal(size=2)
    lam = 0.01
    if corrupt:
        _corrupt(model.branches["speed"].layers[3])

    def f(_):
        return model.loss(model.forward(x), y, lam).total

    _, grads = model.loss_and_grads(x, y, lam, training=False)
    worst, checked = 0.0, 0
    for name, p in model.parameters().items():
        worst = max(worst, relative_error(grads[name], fd_gradient(f, p, STEP)))
        checked += 1
    return checked, worst


def run_gradcheck(seeds=(0, 1, 2), threshold: float = THRESHOLD, corrupt: str | None = None) -> list[CheckRow]:
    """One row per component; ``corrupt`` names a component whose backward is sabotaged."""
    if corrupt is not None and corrupt not in COMPONENTS:
        raise ValueError(f"unknown component {corrupt!r}")
    rows = []
    for comp in COMPONENTS:
        checked, worst = 0, 0.0
        for s in seeds:
            bad = corrupt == comp
            c, w = check_end_to_end(s, bad) if comp == "hmdlf_end_to_end" else check_layer(comp, s, bad)
            checked += c
            worst = max(worst, w)
        rows.append(CheckRow(comp, len(seeds), checked, worst, worst < threshold))
    return rows


def format_table(rows: list[CheckRow], threshold: float = THRESHOLD) -> str:
    lines = [f"component\tseeds\tarrays\tmax_rel_error\tstatus (threshold {threshold:g})"]
    for r in rows:
        lines.append(f"{r.component}\t{r.seeds}\t{r.checked}\t{r.max_rel_error:.3e}\t{'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines) + "\n"
