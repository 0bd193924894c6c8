"""Layers with hand-derived backward passes.

All layers work on mini-batches. Sequence layers take ``[B, T, C]`` arrays,
dense layers ``[B, F]``. ``forward`` caches what ``backward`` needs;
``backward(dout)`` returns the input gradient and stores parameter gradients
in ``self.grads`` under the same keys as ``self.params``.
"""

from __future__ import annotations

import numpy as np

from .tensor import Rng, ShapeError, init_uniform, sigmoid, softmax

ACTIVATIONS = ("linear", "relu", "tanh")


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        # names of params that take the L2 penalty (biases excluded)
        self.weight_names: tuple[str, ...] = ()

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def zero_grads(self) -> None:
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def config(self) -> dict:
        return {"kind": self.kind}


def _check_seq(x: np.ndarray, width: int, who: str) -> None:
    if x.ndim != 3:
        raise ShapeError(f"{who} expects [B, T, C] input, got shape {x.shape}")
    if x.shape[2] != width:
        raise ShapeError(f"{who} expects {width} input channels, got {x.shape[2]}")


class Conv1d(Layer):
    """Cross-correlation over time with zero 'same' padding plus bias.

    kernels: ``[K, C_in, C_out]``, K odd.
    """

    kind = "conv1d"

    def __init__(self, in_channels: int, filters: int, kernel_width: int = 3, rng: Rng | None = None):
        super().__init__()
        if kernel_width < 1 or kernel_width % 2 == 0:
            raise ValueError(f"kernel width must be odd and positive, got {kernel_width}")
        self.in_channels, self.filters, self.kernel_width = in_channels, filters, kernel_width
        rng = rng or Rng(0)
        self.params["kernels"] = init_uniform(
            (kernel_width, in_channels, filters),
            fan_in=kernel_width * in_channels,
            fan_out=kernel_width * filters,
            rng=rng,
        )
        self.params["bias"] = np.zeros(filters)
        self.weight_names = ("kernels",)

    def forward(self, x, training=False):
        _check_seq(x, self.in_channels, "conv1d")
        K = self.kernel_width
        pad = K // 2
        T = x.shape[1]
        xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
        W = self.params["kernels"]
        out = np.zeros((x.shape[0], T, self.filters))
        for k in range(K):
            out += xp[:, k : k + T, :] @ W[k]
        out += self.params["bias"]
        self._xp = xp
        return out

    def backward(self, dout):
        K = self.kernel_width
        pad = K // 2
        xp = self._xp
        T = dout.shape[1]
        W = self.params["kernels"]
        dW = np.empty_like(W)
        dxp = np.zeros_like(xp)
        d2 = dout.reshape(-1, self.filters)
        for k in range(K):
            window = xp[:, k : k + T, :]
            dW[k] = window.reshape(-1, self.in_channels).T @ d2
            dxp[:, k : k + T, :] += dout @ W[k].T
        self.grads = {"kernels": dW, "bias": d2.sum(axis=0)}
        return dxp[:, pad : pad + T, :]

    def config(self):
        return {"kind": self.kind, "in_channels": self.in_channels, "filters": self.filters,
                "kernel_width": self.kernel_width}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training=False):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dout):
        return np.where(self._mask, dout, 0.0)


class MaxPool1d(Layer):
    """Non-overlapping max over windows of ``width`` steps; a ragged tail is dropped."""

    kind = "maxpool"

    def __init__(self, width: int = 2):
        super().__init__()
        if width < 1:
            raise ValueError("pool width must be >= 1")
        self.width = width

    def forward(self, x, training=False):
        if x.ndim != 3:
            raise ShapeError(f"maxpool expects [B, T, C] input, got {x.shape}")
        B, T, C = x.shape
        P = self.width
        if T < P:
            raise ShapeError(f"maxpool: sequence length {T} shorter than pool width {P}")
        Tp = T // P
        blocks = x[:, : Tp * P, :].reshape(B, Tp, P, C)
        out = blocks[:, :, 0, :].copy()
        idx = np.zeros((B, Tp, C), dtype=np.intp)
        # strict comparison keeps ties on the earliest step
        for j in range(1, P):
            better = blocks[:, :, j, :] > out
            out[better] = blocks[:, :, j, :][better]
            idx[better] = j
        self._cache = (x.shape, idx)
        return out

    def backward(self, dout):
        (B, T, C), idx = self._cache
        P = self.width
        Tp = T // P
        dx = np.zeros((B, T, C))
        dblocks = dx[:, : Tp * P, :].reshape(B, Tp, P, C)
        for j in range(P):
            dblocks[:, :, j, :] = np.where(idx == j, dout, 0.0)
        return dx

    def config(self):
        return {"kind": self.kind, "width": self.width}


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features: int, out_features: int, activation: str = "linear", rng: Rng | None = None):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.in_features, self.out_features, self.activation = in_features, out_features, activation
        rng = rng or Rng(0)
        self.params["weights"] = init_uniform((in_features, out_features), fan_in=in_features, rng=rng)
        self.params["bias"] = np.zeros(out_features)
        self.weight_names = ("weights",)

    def forward(self, x, training=False):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"dense expects [B, {self.in_features}] input, got {x.shape}")
        self._x = x
        z = x @ self.params["weights"] + self.params["bias"]
        if self.activation == "relu":
            out = np.maximum(z, 0.0)
        elif self.activation == "tanh":
            out = np.tanh(z)
        else:
            out = z
        self._z, self._out = z, out
        return out

    def backward(self, dout):
        if self.activation == "relu":
            dz = np.where(self._z > 0, dout, 0.0)
        elif self.activation == "tanh":
            dz = dout * (1.0 - self._out**2)
        else:
            dz = dout
        self.grads = {"weights": self._x.T @ dz, "bias": dz.sum(axis=0)}
        return dz @ self.params["weights"].T

    def config(self):
        return {"kind": self.kind, "in_features": self.in_features, "out_features": self.out_features,
                "activation": self.activation}


class Dropout(Layer):
    """Inverted dropout: kept units are scaled by 1/(1-p) in training only."""

    kind = "dropout"

    def __init__(self, rate: float = 0.2, rng: Rng | None = None):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng or Rng(0)

    def forward(self, x, training=False):
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (self.rng.random(x.shape) < keep) / keep
        return x * self._mask

    def backward(self, dout):
        if self._mask is None:
            return dout
        return dout * self._mask

    def config(self):
        return {"kind": self.kind, "rate": self.rate}


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, training=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class LastStep(Layer):
    """Select the final hidden state of a sequence."""

    kind = "last_step"

    def forward(self, x, training=False):
        self._shape = x.shape
        return x[:, -1, :]

    def backward(self, dout):
        dx = np.zeros(self._shape)
        dx[:, -1, :] = dout
        return dx


class RNN(Layer):
    """Elman recurrence s_t = tanh(x_t U + s_{t-1} W), parameters shared over t.

    Returns every state ``[B, T, H]``; an output map ``V`` is a separate Dense.
    """

    kind = "rnn"

    def __init__(self, input_size: int, hidden: int, use_bias: bool = False, rng: Rng | None = None):
        super().__init__()
        self.input_size, self.hidden, self.use_bias = input_size, hidden, use_bias
        rng = rng or Rng(0)
        self.params["U"] = init_uniform((input_size, hidden), fan_in=input_size, rng=rng)
        self.params["W"] = init_uniform((hidden, hidden), fan_in=hidden, rng=rng)
        if use_bias:
            self.params["b"] = np.zeros(hidden)
        self.weight_names = ("U", "W")

    def forward(self, x, training=False):
        _check_seq(x, self.input_size, "rnn")
        B, T, _ = x.shape
        U, W = self.params["U"], self.params["W"]
        states = np.zeros((B, T + 1, self.hidden))
        pre = x @ U
        if self.use_bias:
            pre = pre + self.params["b"]
        for t in range(T):
            states[:, t + 1] = np.tanh(pre[:, t] + states[:, t] @ W)
        self._x, self._states = x, states
        return states[:, 1:]

    def backward(self, dout):
        x, states = self._x, self._states
        B, T, _ = x.shape
        U, W = self.params["U"], self.params["W"]
        dU, dW = np.zeros_like(U), np.zeros_like(W)
        db = np.zeros(self.hidden)
        dx = np.zeros_like(x)
        dh = np.zeros((B, self.hidden))
        for t in reversed(range(T)):
            dh = dh + dout[:, t]
            da = dh * (1.0 - states[:, t + 1] ** 2)
            dU += x[:, t].T @ da
            dW += states[:, t].T @ da
            db += da.sum(axis=0)
            dx[:, t] = da @ U.T
            dh = da @ W.T
        self.grads = {"U": dU, "W": dW}
        if self.use_bias:
            self.grads["b"] = db
        return dx

    def config(self):
        return {"kind": self.kind, "input_size": self.input_size, "hidden": self.hidden, "use_bias": self.use_bias}


class GRU(Layer):
    """Gated recurrent unit acting on the concatenation [h_{t-1}, x_t].

    z = sigmoid([h, x] W_z), r = sigmoid([h, x] W_r),
    candidate = tanh([r*h, x] W_h), h' = (1-z)*h + z*candidate, h_0 = 0.
    Each gate matrix is ``[H + D, H]``; the first H rows act on the state.
    """

    kind = "gru"

    def __init__(self, input_size: int, hidden: int, use_bias: bool = False, rng: Rng | None = None):
        super().__init__()
        self.input_size, self.hidden, self.use_bias = input_size, hidden, use_bias
        rng = rng or Rng(0)
        for gate in ("W_z", "W_r", "W_h"):
            self.params[gate] = init_uniform((hidden + input_size, hidden), fan_in=hidden + input_size, rng=rng)
        if use_bias:
            for b in ("b_z", "b_r", "b_h"):
                self.params[b] = np.zeros(hidden)
        self.weight_names = ("W_z", "W_r", "W_h")

    def forward(self, x, training=False):
        _check_seq(x, self.input_size, "gru")
        B, T, _ = x.shape
        H = self.hidden
        p = self.params
        Wz, Wr, Wh = p["W_z"], p["W_r"], p["W_h"]
        # input contributions for all steps at once, z and r side by side
        xzr = x @ np.concatenate([Wz[H:], Wr[H:]], axis=1)
        xh = x @ Wh[H:]
        if self.use_bias:
            xzr = xzr + np.concatenate([p["b_z"], p["b_r"]])
            xh = xh + p["b_h"]
        hs = np.zeros((B, T + 1, H))
        zrs = np.empty((B, T, 2 * H))
        cs = np.empty((B, T, H))
        Uzr = np.concatenate([Wz[:H], Wr[:H]], axis=1)
        Uh = Wh[:H]
        for t in range(T):
            h = hs[:, t]
            zr = zrs[:, t]
            zr[...] = sigmoid(h @ Uzr + xzr[:, t])
            z, r = zr[:, :H], zr[:, H:]
            c = np.tanh((r * h) @ Uh + xh[:, t])
            cs[:, t] = c
            hs[:, t + 1] = h + z * (c - h)
        zs, rs = zrs[:, :, :H], zrs[:, :, H:]
        self._cache = (x, hs, zs, rs, cs)
        self.gates = (zs, rs, cs)
        return hs[:, 1:]

    def backward(self, dout):
        x, hs, zs, rs, cs = self._cache
        B, T, _ = x.shape
        H = self.hidden
        p = self.params
        Wz, Wr, Wh = p["W_z"], p["W_r"], p["W_h"]
        dWz, dWr, dWh = np.empty_like(Wz), np.empty_like(Wr), np.empty_like(Wh)
        dazr_all = np.empty((B, T, 2 * H))
        dac_all = np.empty((B, T, H))
        UzrT = np.concatenate([Wz[:H], Wr[:H]], axis=1).T
        UhT = Wh[:H].T
        dh = np.zeros((B, H))
        for t in reversed(range(T)):
            dh = dh + dout[:, t]
            h, z, r, c = hs[:, t], zs[:, t], rs[:, t], cs[:, t]
            dac = dh * z * (1.0 - c**2)
            drh = dac @ UhT
            dazr = dazr_all[:, t]
            dazr[:, :H] = dh * (c - h) * z * (1.0 - z)
            dazr[:, H:] = drh * h * r * (1.0 - r)
            dh = dh * (1.0 - z) + drh * r + dazr @ UzrT
            dac_all[:, t] = dac
        # weight gradients summed over all steps in one product each
        hf = hs[:, :-1].reshape(-1, H)
        dzr = hf.T @ dazr_all.reshape(-1, 2 * H)
        dWz[:H], dWr[:H] = dzr[:, :H], dzr[:, H:]
        dWh[:H] = (rs * hs[:, :-1]).reshape(-1, H).T @ dac_all.reshape(-1, H)
        daz_all, dar_all = dazr_all[:, :, :H], dazr_all[:, :, H:]
        xf = x.reshape(-1, self.input_size)
        dWz[H:] = xf.T @ daz_all.reshape(-1, H)
        dWr[H:] = xf.T @ dar_all.reshape(-1, H)
        dWh[H:] = xf.T @ dac_all.reshape(-1, H)
        dx = daz_all @ Wz[H:].T + dar_all @ Wr[H:].T + dac_all @ Wh[H:].T
        self.grads = {"W_z": dWz, "W_r": dWr, "W_h": dWh}
        if self.use_bias:
            self.grads.update(b_z=daz_all.sum(axis=(0, 1)), b_r=dar_all.sum(axis=(0, 1)),
                              b_h=dac_all.sum(axis=(0, 1)))
        return dx

    def config(self):
        return {"kind": self.kind, "input_size": self.input_size, "hidden": self.hidden, "use_bias": self.use_bias}


class Attention(Layer):
    """Attention pooling over time.

    e_t = tanh(h_t W_h + b_h), alpha = softmax_t(e_t . c_h), r = sum_t alpha_t h_t.
    The context vector ``c_h`` is learned. Output ``[B, H]``; the last weights
    are kept in ``self.alpha``.
    """

    kind = "attention"

    def __init__(self, hidden: int, width: int | None = None, rng: Rng | None = None):
        super().__init__()
        width = width or hidden
        self.hidden, self.width = hidden, width
        rng = rng or Rng(0)
        self.params["W_h"] = init_uniform((hidden, width), fan_in=hidden, rng=rng)
        self.params["b_h"] = np.zeros(width)
        self.params["c_h"] = init_uniform((width,), fan_in=width, fan_out=1, rng=rng)
        self.weight_names = ("W_h", "c_h")

    def forward(self, x, training=False):
        _check_seq(x, self.hidden, "attention")
        e = np.tanh(x @ self.params["W_h"] + self.params["b_h"])
        alpha = softmax(e @ self.params["c_h"], axis=1)
        self._cache = (x, e, alpha)
        self.alpha = alpha
        return (alpha[:, None, :] @ x)[:, 0, :]

    def backward(self, dout):
        x, e, alpha = self._cache
        dalpha = (x @ dout[:, :, None])[:, :, 0]
        dscore = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
        dpre = dscore[:, :, None] * self.params["c_h"] * (1.0 - e**2)
        A = self.width
        self.grads = {
            "W_h": x.reshape(-1, self.hidden).T @ dpre.reshape(-1, A),
            "b_h": dpre.sum(axis=(0, 1)),
            "c_h": dscore.reshape(-1) @ e.reshape(-1, A),
        }
        return alpha[:, :, None] * dout[:, None, :] + dpre @ self.params["W_h"].T

    def config(self):
        return {"kind": self.kind, "hidden": self.hidden, "width": self.width}


class Sequential(Layer):
    """A chain of layers; parameters are addressed as ``"<index>.<name>"``."""

    kind = "sequential"

    def __init__(self, layers: list[Layer]):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def named_params(self):
        for i, layer in enumerate(self.layers):
            for name, value in layer.params.items():
                yield f"{i}.{name}", layer, name, value
