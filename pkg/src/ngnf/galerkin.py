"""Monte Carlo Neural Galerkin system for the flow parameters.

At elapsed time ``tau`` the parameter velocity solves the sampled
least-squares problem ``min_eta (1/N) |J eta - f|^2`` where row ``i`` of
``J`` is the parameter gradient of the flow density at a sample
``(x_i, x0_i)`` and

    f_i = L*(P)(x_i) - |det grad_x n(x_i | x0_i)| * d_tau p_Z(n(x_i | x0_i)).

Start points are drawn from ``N(0, mu_std^2 I)`` and each ``x_i`` from the
current flow density conditioned on its start point.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import AssemblyError, ConfigError
from .flow import FlowConfig, ParamVector, inverse, param_count
from .sde import SdeModel, apply_generator, density_parts
from .source import SourceGaussian

RIDGE_SCALE = 1e-6


@dataclass(frozen=True)
class GalerkinConfig:
    n_samples: int = 2000
    mu_std: float = 0.75
    ridge: Optional[float] = None  # None: scale-aware default
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 0:
            raise ConfigError("n_samples must be non-negative")
        if not self.mu_std > 0:
            raise ConfigError("mu_std must be positive")
        if self.ridge is not None and self.ridge < 0:
            raise ConfigError("ridge parameter must be >= 0")


@dataclass
class SamplePairs:
    x: np.ndarray  # (N, d)
    x0: np.ndarray  # (N, d)

    def __len__(self):
        return self.x.shape[0]


@dataclass
class GalerkinSystem:
    jac: np.ndarray  # (N, M)
    rhs: np.ndarray  # (N,)
    pairs: SamplePairs


def sample_pairs(
    theta: ParamVector,
    tau,
    gcfg: GalerkinConfig,
    model: SdeModel,
    rng: np.random.Generator,
    s: float = 0.0,
) -> SamplePairs:
    """Draw ``x0 ~ N(0, mu_std^2 I)`` and one ``x`` from the flow density per ``x0``."""
    d = theta.config.dim
    N = gcfg.n_samples
    if N == 0:
        return SamplePairs(np.zeros((0, d)), np.zeros((0, d)))
    x0 = gcfg.mu_std * rng.standard_normal((N, d))
    z = SourceGaussian.build(model, tau, x0, s).sample(rng)
    return SamplePairs(inverse(theta, z, x0), x0)


def assemble(theta: ParamVector, tau, pairs: SamplePairs, model: SdeModel, s: float = 0.0) -> GalerkinSystem:
    M = theta.layout.size
    N = len(pairs)
    if N == 0:
        return GalerkinSystem(np.zeros((0, M)), np.zeros(0), pairs)
    parts = density_parts(theta, tau, pairs.x0, pairs.x, model, s)
    dens = parts.density
    rhs = apply_generator(model, s + float(tau), pairs.x, dens) - parts.det * parts.source_dtau
    G = parts.sweep.pullback(parts.score[:, None, :], np.ones((N, 1)))
    jac = dens.value[:, None] * G[:, 0, :]
    bad = ~(np.isfinite(rhs) & np.isfinite(jac).all(axis=1))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise AssemblyError(
            f"non-finite Galerkin row {i} at tau={float(tau)!r}: "
            f"x={pairs.x[i].tolist()}, x0={pairs.x0[i].tolist()}"
        )
    return GalerkinSystem(jac, rhs, pairs)


def default_ridge(jac: np.ndarray) -> float:
    M = jac.shape[1]
    return RIDGE_SCALE * float(np.einsum("ij,ij->", jac, jac)) / max(M, 1)


def solve_theta_dot(system: GalerkinSystem, ridge: Optional[float] = None) -> np.ndarray:
    """Minimiser of ``|J eta - f|^2 + ridge |eta|^2``.

    ``ridge=None`` selects the scale-aware default; ``ridge=0`` returns the
    minimum-norm least-squares solution.
    """
    J, f = system.jac, system.rhs
    N, M = J.shape
    if N == 0 or not np.any(f):
        return np.zeros(M)
    lam = default_ridge(J) if ridge is None else float(ridge)
    if lam == 0.0:
        eta, *_ = scipy.linalg.lstsq(J, f, lapack_driver="gelsd")
        return eta
    if N < M:
        K = J @ J.T
        K[np.diag_indices_from(K)] += lam
        return J.T @ scipy.linalg.cho_solve(scipy.linalg.cho_factor(K), f)
    A = J.T @ J
    A[np.diag_indices_from(A)] += lam
    return scipy.linalg.cho_solve(scipy.linalg.cho_factor(A), J.T @ f)


def residual_norm(theta: ParamVector, eta, tau, pairs: SamplePairs, model: SdeModel, s: float = 0.0) -> float:
    """Sampled objective ``(1/N) |J eta - f|^2``."""
    system = assemble(theta, tau, pairs, model, s)
    return system_residual(system, eta)


def system_residual(system: GalerkinSystem, eta) -> float:
    if system.rhs.size == 0:
        return 0.0
    r = system.jac @ np.asarray(eta) - system.rhs
    return float(np.mean(r * r))


class GalerkinVelocity:
    """Parameter velocity field ``(theta, tau) -> eta`` backed by fresh samples.

    Calls carry a ``stream`` index; the sample set is seeded from
    ``(seed, stream)`` so every evaluation is reproducible.
    """

    accepts_stream = True

    def __init__(self, flowcfg: FlowConfig, model: SdeModel, gcfg: GalerkinConfig, s: float = 0.0):
        self.flowcfg = flowcfg
        self.layout = param_count(flowcfg)[1]
        self.model = model
        self.gcfg = gcfg
        self.s = s
        self.last = {}
        if 0 < gcfg.n_samples < self.layout.size:
            warnings.warn(
                f"n_samples={gcfg.n_samples} is below the parameter count "
                f"M={self.layout.size}; the system relies on regularisation",
                stacklevel=2,
            )

    def rng(self, stream: int) -> np.random.Generator:
        return np.random.default_rng([self.gcfg.seed, int(stream)])

    def __call__(self, theta_values, tau, stream: int = 0) -> np.ndarray:
        theta = ParamVector(theta_values, self.layout)
        pairs = sample_pairs(theta, tau, self.gcfg, self.model, self.rng(stream), self.s)
        system = assemble(theta, tau, pairs, self.model, self.s)
        eta = solve_theta_dot(system, self.gcfg.ridge)
        self.last = {
            "residual": system_residual(system, eta),
            "rhs_norm": float(np.mean(system.rhs**2)) if system.rhs.size else 0.0,
            "eta_norm": float(np.linalg.norm(eta)),
        }
        return eta
