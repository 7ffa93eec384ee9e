"""Quick oracle checks bundled with the package (``ngnf selftest``).

Each check compares an implementation path against an independent oracle
(finite differences, a closed-form density, or an exact ODE solution) and
prints one ``PASS``/``FAIL`` line. The whole run takes a few seconds.
"""

from __future__ import annotations

import math
import time
from typing import Callable, TextIO

import numpy as np

from .benes import GridSpec, benes_exact_identity, benes_exact_rotated, relative_l2_error, rotated_benes_model
from .config import IntegratorConfig
from .flow import FlowConfig, ParamVector, forward, identity_init, inverse, param_count
from .galerkin import GalerkinConfig, assemble, sample_pairs
from .integrator import integrate
from .sde import brownian, flow_density
from .source import source_density

SEED = 1234


def _random_theta(cfg, rng, scale=0.5):
    M, layout = param_count(cfg)
    return ParamVector(scale * rng.standard_normal(M), layout)


def check_roundtrip(rng) -> float:
    cfg = FlowConfig()
    worst = 0.0
    for _ in range(100):
        theta = _random_theta(cfg, rng, rng.uniform(0.1, 1.0))
        x, x0 = 2 * rng.standard_normal((4, 2)), rng.standard_normal((4, 2))
        worst = max(worst, float(np.abs(inverse(theta, forward(theta, x, x0).y, x0) - x).max()))
    return worst


def check_log_det(rng, h=1e-6) -> float:
    cfg = FlowConfig()
    worst = 0.0
    for _ in range(10):
        theta = _random_theta(cfg, rng)
        x, x0 = rng.standard_normal(2), rng.standard_normal(2)
        J = np.column_stack(
            [(forward(theta, x + e, x0).y - forward(theta, x - e, x0).y) / (2 * h) for e in h * np.eye(2)]
        )
        worst = max(worst, abs(np.linalg.det(J) / math.exp(forward(theta, x, x0).log_det) - 1))
    return worst


def check_identity(rng) -> float:
    theta = identity_init(FlowConfig(), SEED)
    x, x0 = rng.standard_normal((50, 2)), rng.standard_normal((50, 2))
    out = forward(theta, x, x0)
    return float(max(np.abs(out.y - x).max(), np.abs(out.log_det).max()))


def check_density_derivatives(rng, h=1e-4) -> float:
    model = rotated_benes_model()
    cfg = FlowConfig()
    worst = 0.0
    for _ in range(5):
        theta = _random_theta(cfg, rng, 0.3)
        tau = rng.uniform(0.1, 1.0)
        x0 = rng.standard_normal(2)
        x = x0 + math.sqrt(tau) * rng.standard_normal(2)
        ev = flow_density(theta, tau, x0, x, model)
        for e in h * np.eye(2):
            p, m = flow_density(theta, tau, x0, x + e, model), flow_density(theta, tau, x0, x - e, model)
            k = int(np.argmax(e))
            g_fd = (p.value - m.value) / (2 * h)
            H_fd = (p.grad_x - m.grad_x) / (2 * h)
            worst = max(worst, abs(ev.grad_x[k] - g_fd) / max(abs(g_fd), 1e-3 * abs(ev.value)))
            scale = max(np.abs(H_fd).max(), 1e-3 * abs(ev.value))
            worst = max(worst, float(np.abs(ev.hess_x[:, k] - H_fd).max() / scale))
    return worst


def check_heat_kernel(rng) -> float:
    cfg = FlowConfig()
    theta = identity_init(cfg, SEED)
    model = brownian(2)
    pairs = sample_pairs(theta, 0.4, GalerkinConfig(n_samples=200), model, rng)
    return float(np.abs(assemble(theta, 0.4, pairs, model).rhs).max())


def benes_fp_residual(x, tau, x0, h=1e-3) -> float:
    """|d_tau p - L*p| for the componentwise Benes density, all by central differences."""
    p = lambda y, t: benes_exact_identity(y, t, x0)
    dt = (p(x, tau + h) - p(x, tau - h)) / (2 * h)
    rhs = 0.0
    for e in h * np.eye(x.size):
        flux = lambda y: np.tanh(y) @ (e / h) * p(y, tau)
        rhs -= (flux(x + e) - flux(x - e)) / (2 * h)
        rhs += 0.5 * (p(x + e, tau) - 2 * p(x, tau) + p(x - e, tau)) / h**2
    return float(abs(dt - rhs))


def check_benes_fp(rng) -> float:
    worst = 0.0
    for _ in range(20):
        x0 = rng.uniform(-2, 2, 2)
        tau = rng.uniform(0.2, 2.0)
        x = x0 + math.sqrt(tau) * rng.standard_normal(2)
        worst = max(worst, benes_fp_residual(x, tau, x0))
    return worst


def check_benes_mass(rng) -> float:
    grid = GridSpec(-10, 10, 201)
    return abs(grid.integrate(benes_exact_rotated(grid.points(), 1.0, np.array([1.5, -1.0]))) - 1)


def check_short_time(rng) -> float:
    """Largest ratio err(tau_next)/err(tau); below 1 means strictly decreasing."""
    model = rotated_benes_model()
    kernel = lambda x, tau, x0: source_density(model, tau, x0, x)
    grid = GridSpec(-3, 3, 241)
    errs = [relative_l2_error(kernel, tau, np.zeros(2), grid) for tau in (0.2, 0.1, 0.05, 0.01)]
    return max(b / a for a, b in zip(errs, errs[1:]))


def observed_order(rtols=(1e-4, 1e-5, 1e-6, 1e-7, 1e-8)) -> float:
    """Least-squares slope of -log(error) against log(steps) on y' = A y, A diagonal."""
    cfg = FlowConfig(dim=2, layers=2, hidden=1)
    M, layout = param_count(cfg)
    rates = -np.linspace(0.5, 2.0, M)
    y0 = ParamVector(np.linspace(1.0, 2.0, M), layout)
    t0, t1 = 0.1, 2.1
    exact = y0.values * np.exp(rates * (t1 - t0))
    steps, errs = [], []
    for rtol in rtols:
        icfg = IntegratorConfig(t_start=t0, t_end=t1, rtol=rtol, atol=rtol * 1e-3, h_init=1e-3, h_max=t1 - t0)
        ck = integrate(y0, lambda y, t: rates * y, icfg)
        steps.append(ck.meta["integrator.accepted_steps"])
        errs.append(np.abs(ck.thetas[-1] - exact).max())
    return float(-np.polyfit(np.log(steps), np.log(errs), 1)[0])


CHECKS: list[tuple[str, Callable, Callable[[float], bool]]] = [
    ("flow roundtrip sup error", check_roundtrip, lambda v: v < 1e-9),
    ("log-det vs finite-difference Jacobian", check_log_det, lambda v: v < 1e-5),
    ("identity initialisation", check_identity, lambda v: v < 1e-14),
    ("density gradient/Hessian vs finite differences", check_density_derivatives, lambda v: v < 1e-4),
    ("heat kernel Galerkin rhs", check_heat_kernel, lambda v: v < 1e-8),
    ("Benes density Fokker-Planck residual", check_benes_fp, lambda v: v < 1e-4),
    ("Benes density quadrature mass", check_benes_mass, lambda v: v < 1e-3),
    ("short-time source error ratio", check_short_time, lambda v: v < 1.0),
    ("integrator convergence order", lambda rng: observed_order(), lambda v: v >= 2.5),
]


def run(out: TextIO) -> bool:
    ok = True
    for name, fn, good in CHECKS:
        start = time.perf_counter()
        value = fn(np.random.default_rng(SEED))
        passed = bool(good(value))
        ok &= passed
        status = "PASS" if passed else "FAIL"
        out.write(f"{status}  {name}: {value:.3e}  ({time.perf_counter() - start:.2f}s)\n")
    out.write(("all checks passed" if ok else "some checks FAILED") + "\n")
    return ok
