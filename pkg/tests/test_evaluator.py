import math

import numpy as np
import pytest

from ngnf import integrator
from ngnf.benes import GridSpec, MixtureInit, relative_l2_error
from ngnf.errors import ConfigError, RangeError
from ngnf.evaluator import Surrogate, density, green_convolve, model_from_meta, point_mass, sample
from ngnf.integrator import theta_at
from ngnf.sde import brownian, density_value


@pytest.fixture
def sur(tiny_ckpt):
    return Surrogate.from_checkpoint(tiny_ckpt)


class TestSurrogate:
    def test_model_from_meta(self, tiny_ckpt):
        m = model_from_meta(tiny_ckpt.meta)
        assert m.name == "benes_rot" and m.dim == 2
        with pytest.raises(ConfigError):
            model_from_meta({})

    def test_from_path(self, tiny_ckpt, tmp_path):
        integrator.save(tiny_ckpt, tmp_path / "c.ngnf")
        a = Surrogate.from_checkpoint(tmp_path / "c.ngnf")
        b = Surrogate.from_checkpoint(tiny_ckpt)
        pts = GridSpec(-2, 2, 9).points()
        np.testing.assert_array_equal(a.density(pts, 0.3, [0.1, 0.2]), b.density(pts, 0.3, [0.1, 0.2]))

    def test_window(self, sur):
        lo, hi = sur.t_range
        assert lo == pytest.approx(4e-4) and hi == 0.4
        sur.density(np.zeros(2), hi, np.zeros(2))
        for t in (0.0, lo / 2, hi * 1.01):
            with pytest.raises(RangeError):
                sur.density(np.zeros(2), t, np.zeros(2))

    def test_mismatched_model(self, tiny_ckpt):
        with pytest.raises(ConfigError):
            Surrogate.from_checkpoint(tiny_ckpt, model=brownian(3))

    def test_density_matches_interpolated_theta(self, sur, tiny_ckpt, rng):
        x, x0 = rng.standard_normal((10, 2)), rng.standard_normal(2)
        tau = 0.5 * (tiny_ckpt.times[3] + tiny_ckpt.times[4])
        np.testing.assert_allclose(sur.density(x, tau, x0), density_value(theta_at(tiny_ckpt, tau), tau, x0, x, sur.model), rtol=1e-15)
        np.testing.assert_array_equal(density(sur, x, tau, x0), sur.density(x, tau, x0))

    def test_mass_and_accuracy(self, sur):
        grid = GridSpec(-6, 6, 201)
        assert grid.integrate(sur.density(grid.points(), 0.4, np.array([0.5, 0.5]))) == pytest.approx(1.0, abs=1e-3)
        assert relative_l2_error(sur, 0.4, np.zeros(2)) < 0.05

    def test_nonzero_start_time(self, tiny_ckpt, rng):
        shifted = Surrogate(tiny_ckpt, tiny_ckpt.flow, model_from_meta(tiny_ckpt.meta), s=1.0)
        base = Surrogate.from_checkpoint(tiny_ckpt)
        x = rng.standard_normal((4, 2))
        # the rotated Benes model is autonomous: only elapsed time matters
        np.testing.assert_allclose(shifted.density(x, 1.25, np.zeros(2)), base.density(x, 0.25, np.zeros(2)), rtol=1e-14)
        assert shifted.tpdf(x, 0.25, np.zeros(2)) == pytest.approx(base.tpdf(x, 0.25, np.zeros(2)))


class TestSampling:
    def test_moments_match_density(self, sur):
        # [DERIVED] sample mean vs quadrature mean of the learned density
        x0 = np.array([1.0, -0.5])
        n = 20_000
        xs = sur.sample(0.3, x0, n, np.random.default_rng(0))
        grid = GridSpec(-4, 5, 301)
        pts = grid.points()
        p = sur.density(pts, 0.3, x0)
        mean = np.array([grid.integrate(p * pts[:, i]) for i in range(2)])
        sd = np.sqrt(np.array([grid.integrate(p * (pts[:, i] - mean[i]) ** 2) for i in range(2)]))
        assert np.all(np.abs(xs.mean(0) - mean) < 4 * sd / math.sqrt(n))

    def test_seeded(self, sur):
        a = sample(sur, 0.2, np.zeros(2), 50, 7)
        assert a.tobytes() == sur.sample(0.2, np.zeros(2), 50, 7).tobytes()
        assert a.shape == (50, 2)


class TestGreenConvolution:
    def test_point_mass(self, sur, rng):
        x = rng.standard_normal((6, 2))
        y = np.array([0.3, -0.4])
        got = green_convolve(sur, point_mass(y), 0.3, x, 5, 0)
        np.testing.assert_allclose(got, sur.density(x, 0.3, y), rtol=1e-13)

    def test_mixture_sampler_and_mass(self, sur):
        grid = GridSpec(-5, 5, 81)
        vals = sur.green_convolve(MixtureInit(), 0.4, grid.points(), 200, 1)
        assert grid.integrate(vals) == pytest.approx(1.0, abs=1e-2)
        again = sur.green_convolve(MixtureInit(), 0.4, grid.points(), 200, 1)
        assert vals.tobytes() == again.tobytes()
