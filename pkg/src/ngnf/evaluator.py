"""Online use of a trained checkpoint: density queries, sampling and
convolution against arbitrary initial laws."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from . import config as kv
from . import integrator
from .errors import ConfigError, RangeError
from .flow import FlowConfig, inverse
from .integrator import Checkpoint, theta_at
from .sde import SdeModel, density_value, get_model
from .source import SourceGaussian


def model_from_meta(meta: dict) -> SdeModel:
    params = kv.section(meta, "model")
    name = params.pop("name", None)
    if name is None:
        raise ConfigError("checkpoint does not record a model name")
    return get_model(name, **params)


@dataclass(frozen=True)
class Surrogate:
    ckpt: Checkpoint
    flowcfg: FlowConfig
    model: SdeModel
    s: float = 0.0

    def __post_init__(self):
        if self.flowcfg != self.ckpt.flow:
            raise ConfigError("surrogate flow config differs from the checkpoint's")
        if self.model.dim != self.flowcfg.dim:
            raise ConfigError(f"model dimension {self.model.dim} != flow dimension {self.flowcfg.dim}")

    @classmethod
    def from_checkpoint(cls, ckpt: Union[Checkpoint, str], model: SdeModel | None = None) -> "Surrogate":
        if not isinstance(ckpt, Checkpoint):
            ckpt = integrator.load(ckpt)
        if model is None:
            model = model_from_meta(ckpt.meta)
        return cls(ckpt, ckpt.flow, model, float(ckpt.meta.get("horizon.s", 0.0)))

    @property
    def t_range(self) -> tuple[float, float]:
        return self.s + self.ckpt.t_start, self.s + self.ckpt.t_end

    def elapsed(self, t) -> float:
        """Elapsed time ``t - s``, checked against the trained window."""
        lo, hi = self.t_range
        t = float(t)
        # checkpoint times are elapsed times; tolerate round-off from s + tau
        if not lo - 1e-12 * max(1.0, abs(lo)) <= t <= hi + 1e-12 * max(1.0, abs(hi)):
            raise RangeError(f"t={t!r} outside trained window [{lo!r}, {hi!r}]")
        return min(max(t - self.s, self.ckpt.t_start), self.ckpt.t_end)

    def tpdf(self, x, tau, x0):
        """Density at elapsed time ``tau`` (kernel form used by the benchmarks)."""
        return self.density(x, self.s + float(tau), x0)

    def density(self, x, t, x0):
        tau = self.elapsed(t)
        return density_value(theta_at(self.ckpt, tau), tau, x0, x, self.model, self.s)

    def sample(self, t, x0, n: int, rng) -> np.ndarray:
        tau = self.elapsed(t)
        rng = np.random.default_rng(rng)
        x0 = np.broadcast_to(np.asarray(x0, dtype=np.float64), (n, self.flowcfg.dim))
        z = SourceGaussian.build(self.model, tau, x0, self.s).sample(rng)
        return inverse(theta_at(self.ckpt, tau), z, x0)

    def green_convolve(self, p0_sampler: Callable, t, x_set, n_mc: int, rng) -> np.ndarray:
        """Monte Carlo estimate of ``int rho(x | t, x0) p0(x0) dx0``.

        ``p0_sampler(n, rng)`` returns ``n`` start points; objects with a
        ``sample`` method are accepted too.
        """
        tau = self.elapsed(t)
        rng = np.random.default_rng(rng)
        draw = getattr(p0_sampler, "sample", p0_sampler)
        x0s = np.atleast_2d(draw(n_mc, rng))
        theta = theta_at(self.ckpt, tau)
        x_set = np.atleast_2d(np.asarray(x_set, dtype=np.float64))
        acc = np.zeros(x_set.shape[0])
        for x0 in x0s:
            acc += density_value(theta, tau, x0, x_set, self.model, self.s)
        return acc / x0s.shape[0]


def point_mass(y) -> Callable:
    y = np.asarray(y, dtype=np.float64)
    return lambda n, rng: np.broadcast_to(y, (n, y.size)).copy()


# functional aliases mirroring the method names
def density(sur: Surrogate, x, t, x0):
    return sur.density(x, t, x0)


def sample(sur: Surrogate, t, x0, n: int, rng):
    return sur.sample(t, x0, n, rng)


def green_convolve(sur: Surrogate, p0_sampler, t, x_set, n_mc: int, rng):
    return sur.green_convolve(p0_sampler, t, x_set, n_mc, rng)
