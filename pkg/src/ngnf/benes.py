"""Rotated Benes benchmark: model, closed-form transition density, error metrics
and the mixture initial condition experiment."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateTimeError
from .sde import SdeModel

DEFAULT_ANGLE = np.pi / 3


def rotation(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class RotatedBenes:
    """Drift ``R tanh(R^T x)`` with diffusion square root ``R`` (so Sigma = I)."""

    angle: float = DEFAULT_ANGLE

    @property
    def rot(self) -> np.ndarray:
        return rotation(self.angle)

    def drift(self, t, x):
        R = self.rot
        return np.tanh(np.atleast_2d(x) @ R) @ R.T

    def sqrt_diffusion(self, t, x):
        x = np.atleast_2d(x)
        return np.broadcast_to(self.rot, (x.shape[0], 2, 2)).copy()

    def drift_div(self, t, x):
        # div R tanh(R^T x) = sum_i sech^2((R^T x)_i)
        y = np.atleast_2d(x) @ self.rot
        return (1.0 - np.tanh(y) ** 2).sum(-1)

    def model(self) -> SdeModel:
        return SdeModel(
            "benes_rot",
            2,
            self.drift,
            self.sqrt_diffusion,
            drift_div=self.drift_div,
            constant_diffusion=True,
            params=(("angle", float(self.angle)),),
        )


def rotated_benes_model(angle: float = DEFAULT_ANGLE) -> SdeModel:
    return RotatedBenes(float(angle)).model()


def _logcosh(x):
    a = np.abs(x)
    return a + np.log1p(np.exp(-2.0 * a)) - np.log(2.0)


def benes_exact_identity(x, tau, x0):
    """Closed-form transition density of ``dX = tanh(X) dt + dW`` (componentwise)."""
    tau = float(tau)
    if not tau > 0.0:
        raise DegenerateTimeError(f"elapsed time must be positive, got tau={tau}")
    x = np.asarray(x, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    d = x.shape[-1]
    r2 = ((x - x0) ** 2).sum(-1)
    logp = (
        -0.5 * d * tau
        - 0.5 * d * np.log(2.0 * np.pi * tau)
        + (_logcosh(x) - _logcosh(x0)).sum(-1)
        - r2 / (2.0 * tau)
    )
    return np.exp(logp)


def benes_exact_rotated(x, tau, x0, rot=None):
    if rot is None:
        rot = rotation(DEFAULT_ANGLE)
    rot = np.asarray(rot, dtype=np.float64)
    if not np.allclose(rot.T @ rot, np.eye(rot.shape[0]), atol=1e-12):
        raise ConfigError("rotation matrix must be orthogonal")
    x = np.asarray(x, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    # row vectors: (R^T x)^T = x^T R
    return benes_exact_identity(x @ rot, tau, x0 @ rot)


@dataclass(frozen=True)
class GridSpec:
    """Square tensor grid; the default box holds the t = 3 Benes mass from any start in [-2, 2]^2."""

    lo: float = -12.0
    hi: float = 12.0
    n: int = 241

    def axes(self):
        return np.linspace(self.lo, self.hi, self.n)

    def points(self) -> np.ndarray:
        """Row-major (x1 slowest) grid nodes, shape (n*n, 2)."""
        a = self.axes()
        X1, X2 = np.meshgrid(a, a, indexing="ij")
        return np.column_stack([X1.ravel(), X2.ravel()])

    def weights(self) -> np.ndarray:
        """Tensor-product trapezoid weights matching :meth:`points`."""
        a = self.axes()
        w = np.full(self.n, a[1] - a[0])
        w[0] *= 0.5
        w[-1] *= 0.5
        return np.outer(w, w).ravel()

    def integrate(self, values) -> float:
        return float(np.dot(self.weights(), values))


def _kernel(approx):
    """Turn a surrogate, checkpoint, or callable into ``f(x, tau, x0)``."""
    if callable(approx) and not hasattr(approx, "tpdf"):
        return approx
    if hasattr(approx, "tpdf"):
        return approx.tpdf
    from .evaluator import Surrogate

    return Surrogate.from_checkpoint(approx).tpdf


def relative_l2_error(approx, tau, x0, grid: GridSpec | None = None, rot=None) -> float:
    """Relative L2 distance between ``approx`` and the exact rotated Benes density.

    ``approx`` is a :class:`~ngnf.evaluator.Surrogate`, a checkpoint, or any
    callable ``f(x, tau, x0)`` acting on a (n, 2) array of points.
    """
    grid = grid or GridSpec()
    pts = grid.points()
    exact = benes_exact_rotated(pts, tau, np.asarray(x0, dtype=np.float64), rot)
    approx_vals = np.asarray(_kernel(approx)(pts, tau, np.asarray(x0, dtype=np.float64)))
    num = grid.integrate((approx_vals - exact) ** 2)
    den = grid.integrate(exact**2)
    return float(np.sqrt(num / den))


@dataclass(frozen=True)
class MixtureInit:
    weights: tuple = (0.25, 0.75)
    means: tuple = ((1.0, 1.0), (-0.75, -0.75))
    covs: tuple = field(
        default=(((0.01, 0.0), (0.0, 0.01)), ((0.25, 0.0), (0.0, 0.25)))
    )

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ConfigError("mixture weights must be non-negative and sum to 1")
        means, covs = self.mean_array, self.cov_array
        if means.shape[0] != w.size or covs.shape[0] != w.size:
            raise ConfigError("mixture needs one mean and one covariance per weight")
        try:
            np.linalg.cholesky(covs)
        except np.linalg.LinAlgError as exc:
            raise ConfigError("mixture covariances must be positive definite") from exc

    @property
    def mean_array(self) -> np.ndarray:
        return np.asarray(self.means, dtype=np.float64)

    @property
    def cov_array(self) -> np.ndarray:
        return np.asarray(self.covs, dtype=np.float64)

    @classmethod
    def from_mapping(cls, cfg: dict) -> "MixtureInit":
        try:
            return cls(
                tuple(float(w) for w in cfg["weights"]),
                tuple(tuple(map(float, m)) for m in cfg["means"]),
                tuple(tuple(tuple(map(float, r)) for r in c) for c in cfg["covs"]),
            )
        except KeyError as exc:
            raise ConfigError(f"mixture description lacks {exc}") from exc

    def density(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = np.zeros(x.shape[0])
        for w, m, C in zip(self.weights, self.mean_array, self.cov_array):
            L = np.linalg.cholesky(C)
            r = np.linalg.solve(L, (x - m).T).T
            norm = (2 * np.pi) ** (-0.5 * len(m)) / np.prod(np.diag(L))
            out += w * norm * np.exp(-0.5 * (r * r).sum(-1))
        return out

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=n, p=np.asarray(self.weights))
        g = rng.standard_normal((n, self.mean_array.shape[1]))
        L = np.linalg.cholesky(self.cov_array)
        return self.mean_array[comp] + np.einsum("nij,nj->ni", L[comp], g)

    __call__ = sample


def monte_carlo_convolve(kernel, x0_samples, x_eval, tau) -> np.ndarray:
    """Average ``kernel(x_eval, tau, x0_j)`` over the given start points."""
    x_eval = np.atleast_2d(np.asarray(x_eval, dtype=np.float64))
    acc = np.zeros(x_eval.shape[0])
    for x0 in np.atleast_2d(x0_samples):
        acc += kernel(x_eval, tau, x0)
    return acc / len(np.atleast_2d(x0_samples))


def convolve_initial(approx, p0, tau, x_eval, n_mc: int = 1750, rng=None) -> np.ndarray:
    """Monte Carlo Green's-function convolution of a kernel against ``p0``.

    ``approx`` may be a surrogate/checkpoint or the string ``"exact"`` for the
    closed-form rotated Benes kernel (rotation by pi/3).
    """
    rng = np.random.default_rng(rng)
    if isinstance(approx, str):
        if approx != "exact":
            raise ConfigError(f"unknown kernel {approx!r}")
        kernel = benes_exact_rotated
    else:
        kernel = _kernel(approx)
    samples = p0.sample(n_mc, rng)
    return monte_carlo_convolve(kernel, samples, x_eval, tau)
