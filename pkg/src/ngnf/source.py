"""Gaussian law of a single Euler-Maruyama step, used as the flow's base density.

For elapsed time ``tau`` and start point ``x0`` the step is distributed as
``N(x0 + b(s, x0) tau, Sigma(s, x0) tau)``.  The density concentrates at
``x0`` as ``tau -> 0``, which is how the Dirac initial datum is imposed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTimeError


def _check_tau(tau):
    tau = float(tau)
    if not tau > 0.0:
        raise DegenerateTimeError(f"elapsed time must be positive, got tau={tau}")
    return tau


@dataclass(frozen=True)
class SourceGaussian:
    """Batched Euler-Maruyama Gaussian, one component per row of ``x0``."""

    x0: np.ndarray  # (B, d)
    drift: np.ndarray  # b(s, x0), (B, d)
    chol: np.ndarray  # lower Cholesky factor of Sigma(s, x0), (B, d, d)
    tau: float

    @classmethod
    def build(cls, model, tau, x0, s: float = 0.0) -> "SourceGaussian":
        tau = _check_tau(tau)
        X0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
        drift = model.drift(s, X0)
        chol = np.linalg.cholesky(model.diffusion(s, X0))
        return cls(X0, drift, chol, tau)

    @property
    def dim(self) -> int:
        return self.x0.shape[-1]

    @property
    def mean(self) -> np.ndarray:
        return self.x0 + self.drift * self.tau

    @property
    def cov(self) -> np.ndarray:
        return self.tau * self.chol @ np.swapaxes(self.chol, -1, -2)

    @property
    def precision(self) -> np.ndarray:
        """Inverse of ``Sigma(s, x0)`` (not scaled by tau)."""
        Linv = np.linalg.inv(self.chol)
        return np.swapaxes(Linv, -1, -2) @ Linv

    def _whiten(self, z):
        r = np.atleast_2d(z) - self.mean
        w = np.linalg.solve(self.chol, r[..., None])[..., 0]
        return r, w

    def log_density(self, z) -> np.ndarray:
        _, w = self._whiten(z)
        logdet = np.log(np.abs(np.diagonal(self.chol, axis1=-2, axis2=-1))).sum(-1)
        return (
            -0.5 * self.dim * np.log(2.0 * np.pi * self.tau)
            - logdet
            - 0.5 * (w * w).sum(-1) / self.tau
        )

    def density(self, z) -> np.ndarray:
        return np.exp(self.log_density(z))

    def score(self, z) -> np.ndarray:
        """Gradient of the log-density with respect to ``z``."""
        r, _ = self._whiten(z)
        return -np.einsum("bij,bj->bi", self.precision, r) / self.tau

    def dlog_dtau(self, z) -> np.ndarray:
        """Partial derivative of the log-density in tau at fixed ``z``."""
        r, w = self._whiten(z)
        q = (w * w).sum(-1)
        bPr = np.einsum("bi,bij,bj->b", self.drift, self.precision, r)
        return -0.5 * self.dim / self.tau + bPr / self.tau + 0.5 * q / self.tau**2

    def dtau(self, z) -> np.ndarray:
        return self.density(z) * self.dlog_dtau(z)

    def sample(self, rng: np.random.Generator, normals=None) -> np.ndarray:
        """One draw per component; ``normals`` overrides the standard normal noise."""
        g = rng.standard_normal(self.x0.shape) if normals is None else normals
        return self.mean + np.sqrt(self.tau) * np.einsum("bij,bj->bi", self.chol, g)


def _unbatch(arr, *inputs):
    if all(np.ndim(a) <= 1 for a in inputs):
        return arr[0] if np.ndim(arr) else arr
    return arr


def source_density(model, tau, x0, z, s: float = 0.0):
    g = SourceGaussian.build(model, tau, x0, s)
    return _unbatch(g.density(z), x0, z)


def source_dt(model, tau, x0, z, s: float = 0.0):
    g = SourceGaussian.build(model, tau, x0, s)
    return _unbatch(g.dtau(z), x0, z)


def source_sample(model, tau, x0, rng: np.random.Generator, size=None, s: float = 0.0):
    """Draw from the source law; ``size`` repeats a single ``x0``."""
    x0 = np.asarray(x0, dtype=np.float64)
    if size is not None:
        x0 = np.broadcast_to(np.atleast_2d(x0), (size, x0.shape[-1]))
    g = SourceGaussian.build(model, tau, x0, s)
    out = g.sample(rng)
    return out[0] if np.ndim(x0) == 1 else out
