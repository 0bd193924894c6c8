"""Dense float64 numerics shared by every layer.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. The helpers here
add the shape discipline the layers rely on (no implicit broadcasting except a
row-wise bias add), a seeded generator, Glorot-uniform initialisation and the
central finite-difference oracle used to check every backward pass.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def as_tensor(values, shape=None) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if shape is not None:
        arr = arr.reshape(shape)
    return arr


class Rng:
    """Seeded Philox (counter-based) generator.

    The same seed yields the same draw sequence on every platform numpy
    supports. ``spawn`` derives independent child streams deterministically.
    """

    def __init__(self, seed: int = 0):
        if seed < 0 or seed >= 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))
        self._children = 0

    def uniform(self, low, high, size) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def random(self, size) -> np.ndarray:
        return self._gen.random(size)

    def normal(self, size, scale=1.0) -> np.ndarray:
        return self._gen.normal(0.0, scale, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def spawn(self) -> "Rng":
        self._children += 1
        # 64-bit mix of (seed, child index); splitmix64 finaliser
        z = (self.seed + 0x9E3779B97F4A7C15 * self._children) % 2**64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) % 2**64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) % 2**64
        return Rng(z ^ (z >> 31))


def _check_same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner extents differ, {a.shape} x {b.shape}")
    return a @ b


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    # tanh form: never overflows and is cheaper than exp
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


_UNARY = {"tanh": np.tanh, "sigmoid": sigmoid, "relu": relu}
_BINARY = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def elementwise(op: str, *args: np.ndarray) -> np.ndarray:
    """Apply ``op`` value-wise. Binary ops require identical shapes."""
    if op in _UNARY:
        if len(args) != 1:
            raise TypeError(f"{op} takes one operand")
        return _UNARY[op](np.asarray(args[0], dtype=np.float64))
    if op in _BINARY:
        if len(args) != 2:
            raise TypeError(f"{op} takes two operands")
        a, b = (np.asarray(x, dtype=np.float64) for x in args)
        _check_same_shape(a, b, op)
        return _BINARY[op](a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


def add_bias(x: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Row-wise bias add: ``bias`` must match the last axis of ``x``."""
    if bias.ndim != 1 or x.shape[-1] != bias.shape[0]:
        raise ShapeError(f"bias of shape {bias.shape} does not fit rows of {x.shape}")
    return x + bias


def softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0 or v.shape[axis] == 0:
        raise ShapeError("softmax of an empty vector")
    shifted = v - v.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=axis, keepdims=True)


def fd_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``.

    ``x`` is perturbed in place and restored, so ``f`` may close over the
    very array being differentiated (e.g. a layer parameter).
    """
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Max element-wise ``|a - n| / max(|a|, |n|, floor)``."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    _check_same_shape(analytic, numeric, "relative_error")
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def glorot_limit(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_uniform(shape, fan_in: int, rng: Rng, fan_out: int | None = None) -> np.ndarray:
    """Glorot-uniform draw on ``[-limit, limit]``, limit = sqrt(6/(fan_in+fan_out)).

    ``fan_out`` defaults to the last extent of ``shape`` (or 1 for rank-0).
    """
    shape = tuple(int(s) for s in shape)
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    if fan_out is None:
        fan_out = shape[-1] if shape and shape[-1] > 0 else 1
    limit = glorot_limit(fan_in, fan_out)
    if int(np.prod(shape)) == 0:
        return np.zeros(shape)
    return rng.uniform(-limit, limit, shape)
