"""Diffusion models, the flow density with its spatial derivatives, and the
Fokker-Planck operator applied to it."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError
from .flow import ParamVector, Sweep
from .source import SourceGaussian

FD_STEP_DIV = 1e-6
FD_STEP_SIGMA = 1e-4


@dataclass(frozen=True)
class SdeModel:
    """``dX = b(t, X) dt + sqrt(Sigma)(t, X) dW``.

    All callables act on a batch: ``x`` has shape (B, d).  ``drift_div`` is
    the analytic divergence of the drift when known; otherwise it is
    approximated by central differences.
    """

    name: str
    dim: int
    drift: Callable[[float, np.ndarray], np.ndarray]
    sqrt_diffusion: Callable[[float, np.ndarray], np.ndarray]
    drift_div: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    constant_diffusion: bool = False
    params: tuple = ()

    def diffusion(self, t, x) -> np.ndarray:
        S = self.sqrt_diffusion(t, np.atleast_2d(x))
        return S @ np.swapaxes(S, -1, -2)

    def divergence(self, t, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.drift_div is not None:
            return self.drift_div(t, x)
        h = FD_STEP_DIV
        div = np.zeros(x.shape[0])
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = h
            div += (self.drift(t, x + e)[:, i] - self.drift(t, x - e)[:, i]) / (2 * h)
        return div


def brownian(dim: int = 2) -> SdeModel:
    """Zero drift, identity diffusion: the flow's exact solution is the identity."""

    def drift(t, x):
        return np.zeros_like(x)

    def sqrt_diffusion(t, x):
        return np.broadcast_to(np.eye(dim), (x.shape[0], dim, dim)).copy()

    return SdeModel(
        "brownian",
        dim,
        drift,
        sqrt_diffusion,
        drift_div=lambda t, x: np.zeros(x.shape[0]),
        constant_diffusion=True,
        params=(("dim", dim),),
    )


def get_model(name: str, **kwargs) -> SdeModel:
    """Look up a model by registry name (``benes_rot`` or ``brownian``)."""
    from . import benes

    registry = {"brownian": brownian, "benes_rot": benes.rotated_benes_model}
    if name not in registry:
        raise ConfigError(f"unknown model {name!r}; choose from {sorted(registry)}")
    try:
        return registry[name](**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for model {name!r}: {exc}") from exc


# ---------------------------------------------------------------------------
# flow density


@dataclass
class DensityEval:
    value: np.ndarray  # (B,)
    grad_x: np.ndarray  # (B, d)
    hess_x: np.ndarray  # (B, d, d)

    def squeeze(self) -> "DensityEval":
        return DensityEval(self.value[0], self.grad_x[0], self.hess_x[0])


@dataclass
class DensityParts:
    """Everything a Galerkin row needs, from one flow sweep."""

    sweep: Sweep
    source: SourceGaussian
    density: DensityEval
    score: np.ndarray  # grad of log p_Z at the mapped point, (B, d)
    det: np.ndarray  # |det grad_x n|, (B,)
    source_dtau: np.ndarray  # d/dtau p_Z at the mapped point, (B,)


def density_parts(theta: ParamVector, tau, x0, x, model: SdeModel, s: float = 0.0) -> DensityParts:
    sw = Sweep(theta, x, x0, order=2)
    src = SourceGaussian.build(model, tau, sw.x0, s)
    y, ld = sw.y, sw.log_det
    Jy, Hy = y.grad, y.hess  # (B,d,D), (B,d,D,D)
    logp = src.log_density(y.val)
    g = src.score(y.val)
    Hg = -src.precision / src.tau
    glog = np.einsum("bi,bid->bd", g, Jy) + ld.grad[:, 0]
    Hlog = (
        np.einsum("bid,bij,bje->bde", Jy, Hg, Jy)
        + np.einsum("bi,bide->bde", g, Hy)
        + ld.hess[:, 0]
    )
    det = np.exp(ld.val[:, 0])
    P = np.exp(logp) * det
    dens = DensityEval(
        P,
        P[:, None] * glog,
        P[:, None, None] * (Hlog + glog[:, :, None] * glog[:, None, :]),
    )
    src_dt = np.exp(logp) * src.dlog_dtau(y.val)
    return DensityParts(sw, src, dens, g, det, src_dt)


def density_value(theta: ParamVector, tau, x0, x, model: SdeModel, s: float = 0.0):
    """Flow density only (no derivatives); cheap path for grids and sampling checks."""
    sw = Sweep(theta, x, x0)
    src = SourceGaussian.build(model, tau, sw.x0, s)
    val = np.exp(src.log_density(sw.y.val) + sw.log_det.val[:, 0])
    return val[0] if sw.single else val


def flow_density(theta: ParamVector, tau, x0, x, model: SdeModel, s: float = 0.0) -> DensityEval:
    """Flow density with exact spatial gradient and Hessian."""
    dens = density_parts(theta, tau, x0, x, model, s).density
    if np.ndim(x) == 1 and np.ndim(x0) == 1:
        return dens.squeeze()
    return dens


def apply_generator(model: SdeModel, t: float, x, dens: DensityEval, expanded: Optional[bool] = None):
    """Adjoint generator ``div(-b P + 1/2 div(Sigma P))`` from density derivatives.

    With ``expanded=None`` the constant-diffusion shortcut is used when the
    model declares it; ``expanded=False`` forces the full double divergence.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    P, gP, HP = np.atleast_1d(dens.value), np.atleast_2d(dens.grad_x), dens.hess_x
    if HP.ndim == 2:
        HP = HP[None]
    b = model.drift(t, x)
    divb = model.divergence(t, x)
    Sig = model.diffusion(t, x)
    out = -divb * P - (b * gP).sum(-1) + 0.5 * np.einsum("bij,bij->b", Sig, HP)
    if expanded is None:
        expanded = not model.constant_diffusion
    if expanded:
        dS, d2S = _diffusion_derivatives(model, t, x)
        # sum_ij [d_i d_j Sigma_ij P + 2 d_i Sigma_ij d_j P] (Sigma symmetric)
        out = out + 0.5 * (
            np.einsum("biijj->b", d2S) * P + 2.0 * np.einsum("biji,bj->b", dS, gP)
        )
    return out


def _diffusion_derivatives(model, t, x):
    """Central differences of Sigma: dS[b,i,j,k] = d_k Sigma_ij, d2S[b,i,k,j,l] = d_k d_l Sigma_ij."""
    h = FD_STEP_SIGMA
    d = model.dim
    B = x.shape[0]
    dS = np.zeros((B, d, d, d))
    d2S = np.zeros((B, d, d, d, d))
    S0 = model.diffusion(t, x)
    E = np.eye(d) * h
    for k in range(d):
        Sp, Sm = model.diffusion(t, x + E[k]), model.diffusion(t, x - E[k])
        dS[..., k] = (Sp - Sm) / (2 * h)
        for l in range(d):
            if l == k:
                val = (Sp - 2 * S0 + Sm) / h**2
            else:
                val = (
                    model.diffusion(t, x + E[k] + E[l])
                    - model.diffusion(t, x + E[k] - E[l])
                    - model.diffusion(t, x - E[k] + E[l])
                    + model.diffusion(t, x - E[k] - E[l])
                ) / (4 * h * h)
            d2S[:, :, k, :, l] = val
    return dS, d2S


def adjoint_generator(model: SdeModel, t, theta: ParamVector, tau, x0, x, s: float = 0.0, expanded=None):
    """Fokker-Planck right-hand side applied to the flow density at ``x``."""
    dens = density_parts(theta, tau, x0, x, model, s).density
    out = apply_generator(model, t, np.broadcast_to(np.atleast_2d(x), dens.grad_x.shape), dens, expanded)
    if np.ndim(x) == 1 and np.ndim(x0) == 1:
        return float(out[0])
    return out


def em_path_sample(model: SdeModel, x0, t_grid, rng: np.random.Generator) -> np.ndarray:
    """Euler-Maruyama path(s) on ``t_grid``; ``x0`` may hold a batch of starts.

    Returns shape (len(t_grid), d) for one start or (len(t_grid), B, d).
    """
    t_grid = np.asarray(t_grid, dtype=np.float64)
    if t_grid.ndim != 1 or np.any(np.diff(t_grid) <= 0):
        raise ConfigError("time grid must be one-dimensional and strictly increasing")
    x = np.atleast_2d(np.asarray(x0, dtype=np.float64)).copy()
    path = np.empty((t_grid.size,) + x.shape)
    path[0] = x
    for k in range(t_grid.size - 1):
        dt = t_grid[k + 1] - t_grid[k]
        g = rng.standard_normal(x.shape)
        x = (
            x
            + model.drift(t_grid[k], x) * dt
            + np.sqrt(dt) * np.einsum("bij,bj->bi", model.sqrt_diffusion(t_grid[k], x), g)
        )
        path[k + 1] = x
    return path[:, 0] if np.ndim(x0) == 1 else path
