import math

import numpy as np
import pytest

from ngnf.benes import GridSpec
from ngnf.errors import ConfigError
from ngnf.flow import identity_init
from ngnf.sde import (
    adjoint_generator,
    apply_generator,
    brownian,
    density_value,
    em_path_sample,
    flow_density,
    get_model,
)
from ngnf.source import source_density

from conftest import fd_generator, random_theta


class TestModels:
    def test_registry(self):
        assert get_model("brownian", dim=3).dim == 3
        assert get_model("benes_rot").name == "benes_rot"
        with pytest.raises(ConfigError):
            get_model("ou")
        with pytest.raises(ConfigError):
            get_model("brownian", sigma=2)

    def test_fd_divergence(self, generic, rng):
        x = rng.standard_normal((5, 2))
        exact = -1.5 * np.ones(5)
        np.testing.assert_allclose(generic.divergence(0.0, x), exact, atol=1e-8)

    def test_benes_divergence(self, benes, rng):
        x = rng.standard_normal((5, 2))
        h = 1e-6
        fd = sum((benes.drift(0, x + e)[:, i] - benes.drift(0, x - e)[:, i]) / (2 * h) for i, e in enumerate(h * np.eye(2)))
        np.testing.assert_allclose(benes.divergence(0, x), fd, rtol=1e-8)

    def test_benes_diffusion_identity(self, benes, rng):
        np.testing.assert_allclose(benes.diffusion(0, rng.standard_normal((3, 2))), np.broadcast_to(np.eye(2), (3, 2, 2)), atol=1e-15)


class TestFlowDensity:
    def test_identity_is_source(self, benes, cfg2, rng):
        theta = identity_init(cfg2, 1)
        x0, x = rng.standard_normal(2), rng.standard_normal((20, 2))
        np.testing.assert_allclose(density_value(theta, 0.5, x0, x, benes), source_density(benes, 0.5, x0, x), rtol=1e-14)

    def test_mass(self, benes, cfg2, rng):
        theta = random_theta(cfg2, rng, 0.3)
        grid = GridSpec(-8, 8, 241)
        x0 = np.array([0.5, -0.5])
        assert grid.integrate(density_value(theta, 0.8, x0, grid.points(), benes)) == pytest.approx(1.0, abs=0.01)

    def test_value_paths_agree(self, generic, cfg2, rng):
        theta = random_theta(cfg2, rng)
        x0, x = rng.standard_normal((6, 2)), rng.standard_normal((6, 2))
        np.testing.assert_allclose(flow_density(theta, 0.3, x0, x, generic).value, density_value(theta, 0.3, x0, x, generic), rtol=1e-13)

    @pytest.mark.parametrize("model_name", ["benes", "generic"])
    def test_derivatives_fd(self, model_name, request, cfg2, rng):
        model = request.getfixturevalue(model_name)
        h = 1e-5
        for _ in range(20):
            theta = random_theta(cfg2, rng, 0.4)
            tau = rng.uniform(0.1, 1.5)
            x0 = rng.standard_normal(2)
            x = x0 + math.sqrt(tau) * rng.standard_normal(2)
            ev = flow_density(theta, tau, x0, x, model)
            for k, e in enumerate(h * np.eye(2)):
                p, m = flow_density(theta, tau, x0, x + e, model), flow_density(theta, tau, x0, x - e, model)
                scale = abs(ev.value) / math.sqrt(tau)
                assert ev.grad_x[k] == pytest.approx((p.value - m.value) / (2 * h), rel=1e-4, abs=1e-6 * scale)
                np.testing.assert_allclose(ev.hess_x[:, k], (p.grad_x - m.grad_x) / (2 * h), rtol=1e-4, atol=1e-6 * scale / tau)

    def test_hessian_symmetric(self, benes, cfg3, rng):
        model = brownian(3)
        theta = random_theta(cfg3, rng)
        ev = flow_density(theta, 0.5, rng.standard_normal((10, 3)), rng.standard_normal((10, 3)), model)
        np.testing.assert_allclose(ev.hess_x, np.swapaxes(ev.hess_x, 1, 2), rtol=1e-12, atol=1e-15)


class TestGenerator:
    def test_heat_kernel(self, bm, ref_flow, rng):
        # [DERIVED] the Gaussian N(x0, tau I) solves the heat equation exactly
        theta = identity_init(ref_flow, 0)
        for tau in (0.01, 0.3, 2.0):
            x0 = rng.standard_normal((30, 2))
            x = x0 + math.sqrt(tau) * rng.standard_normal((30, 2))
            lp = adjoint_generator(bm, tau, theta, tau, x0, x)
            np.testing.assert_allclose(lp, _heat_dt(x, x0, tau), rtol=1e-8, atol=1e-12)

    @pytest.mark.parametrize("model_name", ["benes", "generic"])
    def test_matches_fd_oracle(self, model_name, request, cfg2, rng):
        model = request.getfixturevalue(model_name)
        for _ in range(10):
            theta = random_theta(cfg2, rng, 0.4)
            tau = rng.uniform(0.2, 1.0)
            x0 = rng.standard_normal(2)
            x = x0 + math.sqrt(tau) * rng.standard_normal(2)
            p = lambda y: float(density_value(theta, tau, x0, y, model))
            ref = fd_generator(model, tau, x, p)
            got = adjoint_generator(model, tau, theta, tau, x0, x)
            assert got == pytest.approx(ref, rel=1e-3, abs=1e-5)

    def test_expanded_equals_fast_path(self, benes, cfg2, rng):
        theta = random_theta(cfg2, rng)
        x0, x = rng.standard_normal((15, 2)), rng.standard_normal((15, 2))
        fast = adjoint_generator(benes, 0.5, theta, 0.5, x0, x, expanded=False)
        full = adjoint_generator(benes, 0.5, theta, 0.5, x0, x, expanded=True)
        np.testing.assert_allclose(full, fast, rtol=1e-10, atol=1e-12)

    def test_conserves_mass(self, generic, cfg2, rng):
        theta = random_theta(cfg2, rng, 0.3)
        grid = GridSpec(-7, 7, 201)
        x0 = np.array([0.2, 0.1])
        vals = adjoint_generator(generic, 0.5, theta, 0.5, x0, grid.points())
        assert abs(grid.integrate(vals)) < 1e-4 * grid.integrate(np.abs(vals))

    def test_apply_generator_shapes(self, benes, cfg2, rng):
        theta = random_theta(cfg2, rng)
        ev = flow_density(theta, 0.5, np.zeros(2), np.ones(2), benes)
        out = apply_generator(benes, 0.5, np.ones(2), ev)
        assert out.shape == (1,)


def _heat_dt(x, x0, tau):
    r2 = ((x - x0) ** 2).sum(-1)
    p = np.exp(-r2 / (2 * tau)) / (2 * np.pi * tau)
    return p * (-1.0 / tau + r2 / (2 * tau**2))


class TestEulerMaruyama:
    def test_brownian_moments(self):
        rng = np.random.default_rng(9)
        path = em_path_sample(brownian(2), np.zeros((20_000, 2)), np.linspace(0, 1, 11), rng)
        end = path[-1]
        assert np.all(np.abs(end.mean(0)) < 4 * math.sqrt(1 / 20_000))
        assert np.all(np.abs(end.var(0) - 1) < 4 * math.sqrt(2 / 20_000))

    def test_benes_mean_vs_exact(self, benes):
        # [DERIVED] E[X_t] under the exact density, compared with a fine EM estimate
        from ngnf.benes import benes_exact_rotated

        x0 = np.array([1.5, -1.0])
        grid = GridSpec(-8, 10, 361)
        pts = grid.points()
        p = benes_exact_rotated(pts, 0.5, x0)
        mean = np.array([grid.integrate(p * pts[:, i]) for i in range(2)])
        rng = np.random.default_rng(3)
        n = 20_000
        end = em_path_sample(benes, np.broadcast_to(x0, (n, 2)), np.linspace(0, 0.5, 51), rng)[-1]
        assert np.all(np.abs(end.mean(0) - mean) < 4 * end.std(0) / math.sqrt(n) + 0.01)

    def test_single_start_shape(self, benes, rng):
        assert em_path_sample(benes, np.zeros(2), [0, 0.1, 0.2], rng).shape == (3, 2)

    def test_bad_grid(self, benes, rng):
        with pytest.raises(ConfigError):
            em_path_sample(benes, np.zeros(2), [0, 0.2, 0.1], rng)
