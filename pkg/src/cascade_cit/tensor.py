"""Minimal dense numerics: matrices, layer forward/backward, Adam, gradient checking.

Everything is 64-bit float and row-major, with the row-vector convention
``y = x @ W + b`` (inputs are rows, weights map in-dim rows to out-dim
columns).  Gradients are hand-derived per layer; there is no autograd
graph.  All functions are pure: they never mutate their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError

ACTIVATIONS = ("identity", "relu", "sigmoid")


def sigmoid(z):
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class DenseMatrix:
    """A rows x cols matrix of 64-bit floats, stored row-major.

    ``data`` exposes the flat row-major buffer; ``a`` is the 2-D ndarray
    view used by the numeric kernels.  Entries are validated finite on
    construction.
    """

    __slots__ = ("a",)

    def __init__(self, rows: int, cols: int, data):
        arr = np.ascontiguousarray(data, dtype=np.float64).reshape(rows, cols)
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite entries in {rows}x{cols} matrix")
        self.a = arr

    @classmethod
    def from_array(cls, arr) -> "DenseMatrix":
        arr = np.atleast_2d(np.asarray(arr, dtype=np.float64))
        return cls(arr.shape[0], arr.shape[1], arr)

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "DenseMatrix":
        return cls(rows, cols, np.zeros((rows, cols)))

    @property
    def rows(self) -> int:
        return self.a.shape[0]

    @property
    def cols(self) -> int:
        return self.a.shape[1]

    @property
    def data(self) -> np.ndarray:
        return self.a.reshape(-1)

    @property
    def shape(self):
        return self.a.shape

    def copy(self) -> "DenseMatrix":
        return DenseMatrix(self.rows, self.cols, self.a.copy())

    def __eq__(self, other):
        if not isinstance(other, DenseMatrix):
            return NotImplemented
        return self.a.shape == other.a.shape and np.array_equal(self.a, other.a)

    def __repr__(self):
        return f"DenseMatrix({self.rows}x{self.cols})"


def matmul(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    """Standard matrix product a @ b."""
    if a.cols != b.rows:
        raise ShapeError(f"matmul: {a.rows}x{a.cols} incompatible with {b.rows}x{b.cols}")
    return DenseMatrix.from_array(a.a @ b.a)


def _apply_activation(name: str, z: np.ndarray) -> np.ndarray:
    if name == "identity":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return sigmoid(z)
    raise ValueError(f"unknown activation {name!r}; expected one of {ACTIVATIONS}")


def _activation_grad(name: str, z: np.ndarray) -> np.ndarray:
    """d activation / d pre-activation, elementwise at z."""
    if name == "identity":
        return np.ones_like(z)
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "sigmoid":
        s = sigmoid(z)
        return s * (1.0 - s)
    raise ValueError(f"unknown activation {name!r}; expected one of {ACTIVATIONS}")


@dataclass
class LayerCache:
    """Saved forward-pass state needed by dense_backward."""

    x: np.ndarray
    w: np.ndarray
    z: np.ndarray  # pre-activation x @ W + b
    activation: str


def dense_forward(x: DenseMatrix, w: DenseMatrix, b: DenseMatrix, activation: str):
    """y = activation(x @ W + b). Rows of x are independent instances.

    Returns (y, cache); feed the cache to dense_backward.
    """
    if x.cols != w.rows:
        raise ShapeError(f"dense_forward: x is {x.rows}x{x.cols} but W is {w.rows}x{w.cols}")
    if b.rows != 1 or b.cols != w.cols:
        raise ShapeError(f"dense_forward: b is {b.rows}x{b.cols} but W is {w.rows}x{w.cols}")
    z = x.a @ w.a + b.a
    y = _apply_activation(activation, z)
    return DenseMatrix.from_array(y), LayerCache(x=x.a, w=w.a, z=z, activation=activation)


def dense_backward(cache: LayerCache, upstream_grad: DenseMatrix):
    """Analytic gradients of a dense layer.

    Returns (grad_x, grad_w, grad_b) for upstream dL/dy of the same shape
    as the forward output.
    """
    g = upstream_grad.a
    if g.shape != cache.z.shape:
        raise ShapeError(
            f"dense_backward: upstream grad {g.shape} does not match cached pre-activation {cache.z.shape}"
        )
    dz = g * _activation_grad(cache.activation, cache.z)
    grad_x = dz @ cache.w.T
    grad_w = cache.x.T @ dz
    grad_b = dz.sum(axis=0, keepdims=True)
    return (
        DenseMatrix.from_array(grad_x),
        DenseMatrix.from_array(grad_w),
        DenseMatrix.from_array(grad_b),
    )


@dataclass
class AdamState:
    """Adam optimizer state for one parameter matrix."""

    step: int
    first_moment: DenseMatrix
    second_moment: DenseMatrix
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, rows: int, cols: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"lr must be positive, got {lr}")
        if not (0.0 < beta1 < 1.0 and 0.0 < beta2 < 1.0):
            raise ValueError(f"betas must lie in (0,1), got {beta1}, {beta2}")
        return cls(0, DenseMatrix.zeros(rows, cols), DenseMatrix.zeros(rows, cols), lr, beta1, beta2, eps)


def adam_step(param: DenseMatrix, grad: DenseMatrix, state: AdamState, name: str = "param"):
    """One bias-corrected Adam update. Returns (new_param, new_state)."""
    if param.shape != grad.shape or param.shape != state.first_moment.shape:
        raise ShapeError(
            f"adam_step: param {param.shape}, grad {grad.shape}, moments {state.first_moment.shape} disagree"
        )
    if not np.all(np.isfinite(grad.a)):
        raise NumericError(f"non-finite gradient for parameter {name!r}")
    t = state.step + 1
    m = state.beta1 * state.first_moment.a + (1.0 - state.beta1) * grad.a
    v = state.beta2 * state.second_moment.a + (1.0 - state.beta2) * grad.a**2
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_param = param.a - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(
        t,
        DenseMatrix.from_array(m),
        DenseMatrix.from_array(v),
        state.lr,
        state.beta1,
        state.beta2,
        state.eps,
    )
    return DenseMatrix.from_array(new_param), new_state


def finite_diff_check(f, params, analytic_grad, h: float = 1e-6) -> float:
    """Max relative disagreement between central differences and analytic grads.

    ``params`` and ``analytic_grad`` are matching DenseMatrix instances or
    lists thereof; ``f`` maps the same structure to a scalar.  The error at
    each coordinate is |central - analytic| / max(1, |analytic|).
    """
    if h <= 0:
        raise ValueError(f"h must be positive, got {h}")
    single = isinstance(params, DenseMatrix)
    plist = [params] if single else list(params)
    glist = [analytic_grad] if single else list(analytic_grad)
    if len(plist) != len(glist):
        raise ShapeError(f"finite_diff_check: {len(plist)} params but {len(glist)} gradients")

    def call(mats):
        val = f(mats[0] if single else mats)
        val = float(val)
        if not np.isfinite(val):
            raise NumericError(f"f returned non-finite value {val}")
        return val

    worst = 0.0
    for pi, (p, g) in enumerate(zip(plist, glist)):
        if p.shape != g.shape:
            raise ShapeError(f"finite_diff_check: param {pi} is {p.shape} but gradient is {g.shape}")
        flat_g = g.data
        for j in range(p.rows * p.cols):
            bumped = [m.copy() for m in plist]
            bumped[pi].data[j] += h
            up = call(bumped)
            bumped[pi].data[j] -= 2.0 * h
            down = call(bumped)
            central = (up - down) / (2.0 * h)
            err = abs(central - flat_g[j]) / max(1.0, abs(flat_g[j]))
            worst = max(worst, err)
    return worst
