"""Flat ``dotted.key = value`` documents and the run configuration.

The format is a strict subset of TOML (dotted keys, scalars and arrays),
written in canonical form: one key per line, keys sorted, floats in
shortest round-trip notation.  It is used both for run configuration files
and for checkpoint headers.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping

try:
    import tomllib as tomli
except ModuleNotFoundError:  # Python < 3.11
    import tomli

from .errors import ConfigError
from .flow import FlowConfig
from .galerkin import GalerkinConfig

# ---------------------------------------------------------------------------
# canonical key/value text


def _quote(text: str) -> str:
    out = []
    for ch in text:
        if ch in '"\\':
            out.append("\\" + ch)
        elif ord(ch) < 0x20 or ord(ch) == 0x7F:
            out.append(f"\\u{ord(ch):04x}")
        else:
            out.append(ch)
    return '"' + "".join(out) + '"'


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    if isinstance(value, str):
        return _quote(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    if hasattr(value, "tolist"):
        return _fmt(value.tolist())
    raise ConfigError(f"cannot serialise {type(value).__name__} value {value!r}")


def dumps(flat: Mapping[str, Any]) -> str:
    lines = []
    for key in sorted(flat):
        if flat[key] is None:
            continue
        lines.append(f"{key} = {_fmt(flat[key])}")
    return "\n".join(lines) + "\n"


def _flatten(tree: Mapping, prefix: str = "") -> dict:
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def loads(text: str) -> dict:
    try:
        return _flatten(tomli.loads(text))
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed key/value document: {exc}") from exc


def load(path) -> dict:
    try:
        with open(path, "rb") as fh:
            text = fh.read().decode("utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads(text)


def section(flat: Mapping[str, Any], name: str) -> dict:
    pre = name + "."
    return {k[len(pre):]: v for k, v in flat.items() if k.startswith(pre)}


# ---------------------------------------------------------------------------
# integrator settings live here so the checkpoint module can share them


@dataclass(frozen=True)
class IntegratorConfig:
    t_start: float = 3e-3
    t_end: float = 3.0
    rtol: float = 1e-3
    atol: float = 1e-6
    h_init: float = 1e-3
    h_min: float = 1e-8
    h_max: float = 0.05
    checkpoint_stride: int = 1

    def __post_init__(self):
        if not 0.0 < self.t_start < self.t_end:
            raise ConfigError(f"need 0 < t_start < t_end, got {self.t_start}, {self.t_end}")
        if not (self.rtol > 0 and self.atol > 0):
            raise ConfigError("rtol and atol must be positive")
        if not 0.0 < self.h_min <= self.h_init <= self.h_max:
            raise ConfigError("need 0 < h_min <= h_init <= h_max")
        if self.checkpoint_stride < 1:
            raise ConfigError("checkpoint_stride must be >= 1")


def _build(cls, values: Mapping[str, Any], where: str):
    known = {f for f in cls.__dataclass_fields__}
    extra = set(values) - known
    if extra:
        raise ConfigError(f"unknown keys in [{where}]: {sorted(extra)}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"bad [{where}] section: {exc}") from exc


@dataclass(frozen=True)
class RunConfig:
    model: str = "benes_rot"
    model_params: dict = field(default_factory=dict)
    flow: FlowConfig = FlowConfig()
    galerkin: GalerkinConfig = GalerkinConfig()
    integrator: IntegratorConfig = IntegratorConfig()
    s: float = 0.0
    T: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if not (self.T > self.s >= 0.0):
            raise ConfigError(f"horizon must satisfy T > s >= 0, got [{self.s}, {self.T}]")
        if abs(self.integrator.t_end - (self.T - self.s)) > 1e-12 * max(1.0, self.T):
            raise ConfigError("integrator.t_end must equal T - s")

    @classmethod
    def from_flat(cls, flat: Mapping[str, Any]) -> "RunConfig":
        known_top = {"model.name", "horizon.s", "horizon.T", "seed"}
        prefixes = ("model.", "flow.", "galerkin.", "integrator.", "horizon.")
        stray = [k for k in flat if k not in known_top and not k.startswith(prefixes)]
        if stray:
            raise ConfigError(f"unknown configuration keys: {sorted(stray)}")
        s = float(flat.get("horizon.s", 0.0))
        T = float(flat.get("horizon.T", 3.0))
        seed = int(flat.get("seed", 0))
        model_params = section(flat, "model")
        name = model_params.pop("name", "benes_rot")
        flow = _build(FlowConfig, section(flat, "flow"), "flow")
        gal = section(flat, "galerkin")
        gal.setdefault("seed", seed)
        galerkin = _build(GalerkinConfig, gal, "galerkin")
        integ = section(flat, "integrator")
        integ.setdefault("t_end", T - s)
        integ.setdefault("t_start", 1e-3 * (T - s))
        integ = {k: (int(v) if k == "checkpoint_stride" else float(v)) for k, v in integ.items()}
        integ.setdefault("h_init", min(IntegratorConfig.h_init, integ.get("h_max", IntegratorConfig.h_max)))
        integrator = _build(IntegratorConfig, integ, "integrator")
        return cls(name, model_params, flow, galerkin, integrator, s, T, seed)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_flat(load(path))

    def to_flat(self) -> dict:
        flat = {"model.name": self.model, "horizon.s": float(self.s), "horizon.T": float(self.T), "seed": self.seed}
        flat.update({f"model.{k}": v for k, v in self.model_params.items()})
        for name, sub in (("flow", self.flow), ("galerkin", self.galerkin), ("integrator", self.integrator)):
            flat.update({f"{name}.{k}": v for k, v in asdict(sub).items()})
        return flat

    def build_model(self):
        from .sde import get_model

        return get_model(self.model, **self.model_params)


def benes_config(**overrides) -> RunConfig:
    """Rotated Benes run: 10 coupling layers, GRU width 4, horizon [0, 3]."""
    flat = {
        "model.name": "benes_rot",
        "model.angle": math.pi / 3,
        "flow.dim": 2,
        "flow.layers": 10,
        "flow.split": 1,
        "flow.hidden": 4,
        "flow.beta": 0.9,
        "galerkin.n_samples": 2000,
        "galerkin.mu_std": 0.75,
        "horizon.s": 0.0,
        "horizon.T": 3.0,
    }
    flat.update(overrides)
    return RunConfig.from_flat(flat)
