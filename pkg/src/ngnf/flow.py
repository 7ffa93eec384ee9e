"""Conditional Real-NVP flow built from affine coupling layers.

Every layer copies an idle block of ``m`` coordinates and affinely maps the
remaining ``d - m`` ones::

    x_act <- x_act * (1 + beta * tanh(s(c))) + exp(xi) * tanh(t(c)),
    c = (x_idle, x0)

``s`` and ``t`` are each one step of a GRU cell (zero initial hidden state)
followed by a dense head.  Even layers reverse the coordinate order before
and after the update so all layers share the same first-``m``-idle code.

Derivatives with respect to ``x`` come from second-order jets pushed
through the layers; derivatives with respect to the parameter vector come
from an explicit reverse sweep over the recorded layer values.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import jets
from .errors import ConfigError, DomainError
from .jets import Jet

GATES = 3  # GRU gate order: reset, update, new


@dataclass(frozen=True)
class FlowConfig:
    dim: int = 2
    layers: int = 10
    split: int = 1
    beta: float = 0.9
    hidden: int = 4

    def __post_init__(self):
        if self.dim < 2:
            raise ConfigError(f"flow dimension must be >= 2, got {self.dim}")
        if self.layers < 2 or self.layers % 2:
            raise ConfigError(f"number of layers must be even and >= 2, got {self.layers}")
        if not 1 <= self.split < self.dim:
            raise ConfigError(f"split must satisfy 1 <= m < d, got m={self.split}, d={self.dim}")
        if not 0.0 < self.beta < 1.0:
            raise ConfigError(f"beta must lie in (0, 1), got {self.beta}")
        if self.hidden < 1:
            raise ConfigError(f"hidden size must be positive, got {self.hidden}")

    @property
    def active(self) -> int:
        return self.dim - self.split

    @property
    def cond(self) -> int:
        return self.split + self.dim


@dataclass(frozen=True)
class Slot:
    layer: int  # 1-based
    net: str  # "s", "t", or "" for the shift modulation xi
    name: str
    shape: tuple
    start: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def stop(self) -> int:
        return self.start + self.size


@dataclass(frozen=True)
class ParamLayout:
    config: FlowConfig
    slots: tuple
    size: int

    def slot(self, layer: int, net: str, name: str) -> Slot:
        return self._index[(layer, net, name)]

    @functools.cached_property
    def _index(self):
        return {(s.layer, s.net, s.name): s for s in self.slots}

    def unpack(self, values: np.ndarray) -> list:
        """Per-layer dictionaries of reshaped views into ``values``."""
        layers = [{"s": {}, "t": {}} for _ in range(self.config.layers)]
        for s in self.slots:
            arr = values[s.start:s.stop].reshape(s.shape)
            if s.net:
                layers[s.layer - 1][s.net][s.name] = arr
            else:
                layers[s.layer - 1][s.name] = arr
        return layers


def _net_shapes(cfg: FlowConfig):
    H = cfg.hidden
    return [
        ("weight_ih", (GATES * H, cfg.cond)),
        ("weight_hh", (GATES * H, H)),
        ("bias_ih", (GATES * H,)),
        ("bias_hh", (GATES * H,)),
        ("head_weight", (cfg.active, H)),
        ("head_bias", (cfg.active,)),
    ]


@functools.lru_cache(maxsize=None)
def _layout(cfg: FlowConfig) -> ParamLayout:
    slots = []
    pos = 0
    for layer in range(1, cfg.layers + 1):
        for net in ("s", "t"):
            for name, shape in _net_shapes(cfg):
                slots.append(Slot(layer, net, name, shape, pos))
                pos = slots[-1].stop
        slots.append(Slot(layer, "", "xi", (cfg.active,), pos))
        pos = slots[-1].stop
    return ParamLayout(cfg, tuple(slots), pos)


def param_count(config: FlowConfig) -> tuple[int, ParamLayout]:
    """Number of trainable parameters and the slice manifest of the flat vector."""
    layout = _layout(config)
    return layout.size, layout


@dataclass(frozen=True)
class ParamVector:
    values: np.ndarray
    layout: ParamLayout = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, copy=True)
        if vals.shape != (self.layout.size,):
            raise ConfigError(
                f"parameter vector has shape {vals.shape}, layout expects ({self.layout.size},)"
            )
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def config(self) -> FlowConfig:
        return self.layout.config

    @classmethod
    def from_array(cls, config: FlowConfig, values) -> "ParamVector":
        return cls(values, param_count(config)[1])

    def replace(self, values) -> "ParamVector":
        return ParamVector(values, self.layout)

    def get(self, layer: int, net: str, name: str) -> np.ndarray:
        s = self.layout.slot(layer, net, name)
        return self.values[s.start:s.stop].reshape(s.shape)


def identity_init(config: FlowConfig, seed: int) -> ParamVector:
    """Parameters for which the flow is exactly the identity map.

    Output heads and ``xi`` are zero, so ``s = t = 0`` for every input; GRU
    internals are small seeded uniforms so parameter gradients are not all
    degenerate at the start of time integration.
    """
    M, layout = param_count(config)
    rng = np.random.default_rng(seed)
    values = np.zeros(M)
    bound = 0.1 / np.sqrt(config.hidden)
    for s in layout.slots:
        if s.name in ("weight_ih", "weight_hh", "bias_ih", "bias_hh"):
            values[s.start:s.stop] = rng.uniform(-bound, bound, s.size)
    return ParamVector(values, layout)


class FlowEval(NamedTuple):
    y: np.ndarray
    log_det: np.ndarray


# ---------------------------------------------------------------------------
# layer evaluation


def _gru_head(p: dict, c: Jet):
    H = p["weight_hh"].shape[1]
    bhh = p["bias_hh"]
    gi = jets.linear(c, p["weight_ih"], p["bias_ih"])
    r = jets.sigmoid(gi[:H] + bhh[:H])
    z = jets.sigmoid(gi[H:2 * H] + bhh[H:2 * H])
    # zero initial hidden state: weight_hh @ h0 vanishes, only bias_hh survives
    n = jets.tanh(gi[2 * H:] + r * bhh[2 * H:])
    h = (1.0 - z) * n
    out = jets.linear(h, p["head_weight"], p["head_bias"])
    return out, (r.val, z.val, n.val, h.val)


def _layer(p: dict, cfg: FlowConfig, u: Jet, x0: np.ndarray):
    m = cfg.split
    a, b = u[:m], u[m:]
    c = jets.concat([a, jets.constant(x0, a)])
    s, cache_s = _gru_head(p["s"], c)
    t, cache_t = _gru_head(p["t"], c)
    scale = 1.0 + jets.tanh(s) * cfg.beta
    shift = jets.tanh(t) * np.exp(p["xi"])
    out = jets.concat([a, b * scale + shift])
    ldet = jets.total(jets.log(scale))
    record = {
        "c": c.val,
        "b": b.val,
        "s": s.val,
        "t": t.val,
        "cache_s": cache_s,
        "cache_t": cache_t,
    }
    return out, ldet, record


def _batch(x, x0, dim):
    x = np.asarray(x, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    single = x.ndim == 1 and x0.ndim == 1
    X = np.atleast_2d(x)
    X0 = np.atleast_2d(x0)
    if X.shape[-1] != dim or X0.shape[-1] != dim:
        raise DomainError(f"expected points of dimension {dim}, got {x.shape} and {x0.shape}")
    X, X0 = np.broadcast_arrays(X, X0)
    if not (np.isfinite(X).all() and np.isfinite(X0).all()):
        raise DomainError("non-finite input coordinates")
    return np.ascontiguousarray(X), np.ascontiguousarray(X0), single


class Sweep:
    """One pass through all layers, with optional x-derivatives.

    ``y`` and ``log_det`` are jets with respect to the input coordinates
    (order 0, 1 or 2).  :meth:`pullback` contracts cotangents on ``y`` and
    ``log_det`` against their parameter Jacobians.
    """

    def __init__(self, theta: ParamVector, x, x0, order: int = 0):
        cfg = theta.config
        self.theta = theta
        self.x, self.x0, self.single = _batch(x, x0, cfg.dim)
        self._params = theta.layout.unpack(theta.values)
        u = jets.seed(self.x, order)
        ldet = None
        self.tape = []
        for l, p in enumerate(self._params, 1):
            flip = l % 2 == 0
            if flip:
                u = u[::-1]
            out, ld, record = _layer(p, cfg, u, self.x0)
            if flip:
                out = out[::-1]
            self.tape.append(record)
            ldet = ld if ldet is None else ldet + ld
            u = out
        self.y = u
        self.log_det = ldet

    def pullback(self, ybar: np.ndarray, lbar: np.ndarray) -> np.ndarray:
        """Vector-Jacobian products with respect to the flat parameters.

        ``ybar`` has shape (B, K, d) and ``lbar`` shape (B, K); the result
        has shape (B, K, M) and holds ``ybar . dy/dtheta + lbar * dlogdet/dtheta``
        for each of the ``K`` cotangents.
        """
        cfg = self.theta.config
        layout = self.theta.layout
        m, beta = cfg.split, cfg.beta
        B, K = ybar.shape[:2]
        G = np.zeros((B, K, layout.size))
        xbar = np.array(ybar, dtype=np.float64)
        lbar = np.asarray(lbar, dtype=np.float64)
        for l in range(cfg.layers, 0, -1):
            rec, p = self.tape[l - 1], self._params[l - 1]
            flip = l % 2 == 0
            if flip:
                xbar = xbar[..., ::-1]
            obar_a, obar_b = xbar[..., :m], xbar[..., m:]
            ts, tt = np.tanh(rec["s"]), np.tanh(rec["t"])
            ex = np.exp(p["xi"])
            scale = 1.0 + beta * ts
            dscale = beta * (1.0 - ts * ts)
            sbar = obar_b * (rec["b"] * dscale)[:, None] + lbar[..., None] * (dscale / scale)[:, None]
            tbar = obar_b * (ex * (1.0 - tt * tt))[:, None]
            xibar = obar_b * (ex * tt)[:, None]
            bbar = obar_b * scale[:, None]
            cbar = _gru_pullback(G, layout, l, "s", p["s"], rec["c"], rec["cache_s"], sbar)
            cbar += _gru_pullback(G, layout, l, "t", p["t"], rec["c"], rec["cache_t"], tbar)
            xi = layout.slot(l, "", "xi")
            G[..., xi.start:xi.stop] = xibar
            xbar = np.concatenate([obar_a + cbar[..., :m], bbar], axis=-1)
            if flip:
                xbar = xbar[..., ::-1]
        return G


def _gru_pullback(G, layout, layer, net, p, c, cache, outbar):
    r, z, n, h = cache
    H = h.shape[-1]
    B, K = outbar.shape[:2]

    def put(name, value):
        s = layout.slot(layer, net, name)
        G[..., s.start:s.stop] = value.reshape(B, K, -1)

    put("head_weight", outbar[..., :, None] * h[:, None, None, :])
    put("head_bias", outbar)
    hbar = outbar @ p["head_weight"]
    pre_n = hbar * ((1.0 - z) * (1.0 - n * n))[:, None]
    pre_z = -hbar * (n * z * (1.0 - z))[:, None]
    pre_r = pre_n * (p["bias_hh"][2 * H:] * r * (1.0 - r))[:, None]
    pre_i = np.concatenate([pre_r, pre_z, pre_n], axis=-1)
    put("weight_ih", pre_i[..., :, None] * c[:, None, None, :])
    put("bias_ih", pre_i)
    put("bias_hh", np.concatenate([pre_r, pre_z, pre_n * r[:, None]], axis=-1))
    # weight_hh multiplies the zero initial state: its slot stays zero
    return pre_i @ p["weight_ih"]


# ---------------------------------------------------------------------------
# public operations


def scale_shift(layer: int, theta: ParamVector, c) -> tuple[np.ndarray, np.ndarray]:
    """Raw (pre-tanh) scale and shift network outputs of one layer."""
    cfg = theta.config
    if not 1 <= layer <= cfg.layers:
        raise ConfigError(f"layer index {layer} outside [1, {cfg.layers}]")
    c = np.asarray(c, dtype=np.float64)
    C = np.atleast_2d(c)
    if C.shape[-1] != cfg.cond:
        raise DomainError(f"conditioning vector must have length {cfg.cond}")
    p = theta.layout.unpack(theta.values)[layer - 1]
    s, _ = _gru_head(p["s"], Jet(C))
    t, _ = _gru_head(p["t"], Jet(C))
    if c.ndim == 1:
        return s.val[0], t.val[0]
    return s.val, t.val


def couple_forward(layer: int, theta: ParamVector, x_prev, x0):
    """Apply a single coupling layer; returns the new point and its log-det factor."""
    cfg = theta.config
    if not 1 <= layer <= cfg.layers:
        raise ConfigError(f"layer index {layer} outside [1, {cfg.layers}]")
    X, X0, single = _batch(x_prev, x0, cfg.dim)
    p = theta.layout.unpack(theta.values)[layer - 1]
    flip = layer % 2 == 0
    u = Jet(X[:, ::-1] if flip else X)
    out, ld, _ = _layer(p, cfg, u, X0)
    y = out.val[:, ::-1] if flip else out.val
    ld = ld.val[:, 0]
    if single:
        return y[0], float(ld[0])
    return y, ld


def forward(theta: ParamVector, x, x0) -> FlowEval:
    sw = Sweep(theta, x, x0)
    y, ld = sw.y.val, sw.log_det.val[:, 0]
    if sw.single:
        return FlowEval(y[0], float(ld[0]))
    return FlowEval(y, ld)


def inverse(theta: ParamVector, z, x0) -> np.ndarray:
    cfg = theta.config
    m, beta = cfg.split, cfg.beta
    Z, X0, single = _batch(z, x0, cfg.dim)
    params = theta.layout.unpack(theta.values)
    x = Z.copy()
    for l in range(cfg.layers, 0, -1):
        p = params[l - 1]
        flip = l % 2 == 0
        out = x[:, ::-1] if flip else x
        a, b_new = out[:, :m], out[:, m:]
        c = Jet(np.concatenate([a, X0], axis=1))
        s, _ = _gru_head(p["s"], c)
        t, _ = _gru_head(p["t"], c)
        b = (b_new - np.exp(p["xi"]) * np.tanh(t.val)) / (1.0 + beta * np.tanh(s.val))
        u = np.concatenate([a, b], axis=1)
        x = u[:, ::-1] if flip else u
    x = np.ascontiguousarray(x)
    return x[0] if single else x


def grad_theta_density_inputs(theta: ParamVector, x, x0):
    """Parameter Jacobians of the mapped point and of the log-determinant.

    Returns ``(dy/dtheta, dlogdet/dtheta)`` with shapes (d, M) and (M,) for a
    single point, or (B, d, M) and (B, M) for a batch.
    """
    sw = Sweep(theta, x, x0)
    d = theta.config.dim
    B = sw.x.shape[0]
    ybar = np.zeros((B, d + 1, d))
    ybar[:, :d, :] = np.eye(d)
    lbar = np.zeros((B, d + 1))
    lbar[:, d] = 1.0
    G = sw.pullback(ybar, lbar)
    dy, dl = G[:, :d, :], G[:, d, :]
    if sw.single:
        return dy[0], dl[0]
    return dy, dl


def layer_outputs(theta: ParamVector, x, x0) -> list:
    """Intermediate points ``x^0, ..., x^L`` (for inspecting the flow layer by layer)."""
    cfg = theta.config
    X, X0, single = _batch(x, x0, cfg.dim)
    pts = [X]
    for l in range(1, cfg.layers + 1):
        y, _ = couple_forward(l, theta, pts[-1], X0)
        pts.append(y)
    return [p[0] for p in pts] if single else pts
