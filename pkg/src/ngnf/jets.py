"""Second-order forward-mode jets over a batch of points.

A :class:`Jet` carries the value of a vector quantity together with its
gradient and Hessian with respect to ``D`` seed directions (the spatial
coordinates in practice).  Shapes, for a batch of ``B`` points and a
quantity with ``n`` components::

    val   (B, n)
    grad  (B, n, D)
    hess  (B, n, D, D)

``grad``/``hess`` may be ``None``, in which case the jet degrades to a plain
value and every operation below only touches ``val``.  This lets the flow
use a single code path for cheap evaluation and for derivative sweeps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np


@dataclass
class Jet:
    val: np.ndarray
    grad: Optional[np.ndarray] = None
    hess: Optional[np.ndarray] = None

    @property
    def order(self) -> int:
        if self.grad is None:
            return 0
        return 1 if self.hess is None else 2

    def __getitem__(self, idx) -> "Jet":
        # indexes the component axis only
        return Jet(
            self.val[:, idx],
            None if self.grad is None else self.grad[:, idx],
            None if self.hess is None else self.hess[:, idx],
        )

    def __add__(self, other) -> "Jet":
        if isinstance(other, Jet):
            return Jet(
                self.val + other.val,
                _add_opt(self.grad, other.grad),
                _add_opt(self.hess, other.hess),
            )
        return Jet(self.val + other, self.grad, self.hess)

    __radd__ = __add__

    def __neg__(self) -> "Jet":
        return Jet(
            -self.val,
            None if self.grad is None else -self.grad,
            None if self.hess is None else -self.hess,
        )

    def __sub__(self, other) -> "Jet":
        return self + (-other)

    def __rsub__(self, other) -> "Jet":
        return (-self) + other

    def __mul__(self, other) -> "Jet":
        if not isinstance(other, Jet):
            other = np.asarray(other, dtype=float)
            return Jet(
                self.val * other,
                None if self.grad is None else self.grad * other[..., None],
                None if self.hess is None else self.hess * other[..., None, None],
            )
        val = self.val * other.val
        grad = hess = None
        if self.grad is not None or other.grad is not None:
            grad = _add_opt(
                _scale(self.grad, other.val), _scale(other.grad, self.val)
            )
        if self.hess is not None or other.hess is not None:
            hess = _add_opt(
                _scale(self.hess, other.val, 2), _scale(other.hess, self.val, 2)
            )
            if self.grad is not None and other.grad is not None:
                cross = self.grad[..., :, None] * other.grad[..., None, :]
                hess = hess + cross + np.swapaxes(cross, -1, -2)
        return Jet(val, grad, hess)

    __rmul__ = __mul__


def _add_opt(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _scale(deriv, factor, extra=1):
    if deriv is None:
        return None
    return deriv * factor[(...,) + (None,) * extra]


def seed(x: np.ndarray, order: int) -> Jet:
    """Independent variables: unit gradient, zero Hessian."""
    x = np.asarray(x, dtype=float)
    B, D = x.shape
    if order == 0:
        return Jet(x)
    grad = np.broadcast_to(np.eye(D), (B, D, D)).copy()
    hess = np.zeros((B, D, D, D)) if order >= 2 else None
    return Jet(x, grad, hess)


def constant(x: np.ndarray, like: Jet) -> Jet:
    """Lift a (B, n) array to a jet with zero derivatives matching ``like``."""
    x = np.asarray(x, dtype=float)
    if like.grad is None:
        return Jet(x)
    D = like.grad.shape[-1]
    grad = np.zeros(x.shape + (D,))
    hess = None if like.hess is None else np.zeros(x.shape + (D, D))
    return Jet(x, grad, hess)


def concat(parts: Sequence[Jet]) -> Jet:
    val = np.concatenate([p.val for p in parts], axis=1)
    grad = hess = None
    if parts[0].grad is not None:
        grad = np.concatenate([p.grad for p in parts], axis=1)
    if parts[0].hess is not None:
        hess = np.concatenate([p.hess for p in parts], axis=1)
    return Jet(val, grad, hess)


def linear(j: Jet, weight: np.ndarray, bias: Optional[np.ndarray] = None) -> Jet:
    """``j @ weight.T + bias`` applied on the component axis."""
    val = j.val @ weight.T
    if bias is not None:
        val = val + bias
    grad = None if j.grad is None else np.einsum("bkd,ok->bod", j.grad, weight)
    hess = None if j.hess is None else np.einsum("bkde,ok->bode", j.hess, weight)
    return Jet(val, grad, hess)


def elementwise(
    j: Jet,
    f: Callable[[np.ndarray], np.ndarray],
    df: Callable[[np.ndarray, np.ndarray], np.ndarray],
    d2f: Callable[[np.ndarray, np.ndarray], np.ndarray],
) -> Jet:
    """Apply a scalar function componentwise.

    ``df`` and ``d2f`` receive ``(x, f(x))`` so they can reuse the value.
    """
    fx = f(j.val)
    if j.grad is None:
        return Jet(fx)
    d1 = df(j.val, fx)
    grad = j.grad * d1[..., None]
    hess = None
    if j.hess is not None:
        d2 = d2f(j.val, fx)
        hess = (
            j.hess * d1[..., None, None]
            + d2[..., None, None] * j.grad[..., :, None] * j.grad[..., None, :]
        )
    return Jet(fx, grad, hess)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def tanh(j: Jet) -> Jet:
    return elementwise(
        j,
        np.tanh,
        lambda x, y: 1.0 - y * y,
        lambda x, y: -2.0 * y * (1.0 - y * y),
    )


def sigmoid(j: Jet) -> Jet:
    return elementwise(
        j,
        _sigmoid,
        lambda x, y: y * (1.0 - y),
        lambda x, y: y * (1.0 - y) * (1.0 - 2.0 * y),
    )


def log(j: Jet) -> Jet:
    return elementwise(
        j,
        np.log,
        lambda x, y: 1.0 / x,
        lambda x, y: -1.0 / (x * x),
    )


def exp(j: Jet) -> Jet:
    return elementwise(j, np.exp, lambda x, y: y, lambda x, y: y)


def reciprocal(j: Jet) -> Jet:
    return elementwise(
        j,
        lambda x: 1.0 / x,
        lambda x, y: -y * y,
        lambda x, y: 2.0 * y * y * y,
    )


def total(j: Jet) -> Jet:
    """Sum over the component axis, keeping a length-1 component axis."""
    return Jet(
        j.val.sum(axis=1, keepdims=True),
        None if j.grad is None else j.grad.sum(axis=1, keepdims=True),
        None if j.hess is None else j.hess.sum(axis=1, keepdims=True),
    )
