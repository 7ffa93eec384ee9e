"""Adaptive Bogacki-Shampine 3(2) integration of the parameter ODE, and the
checkpoint container with its binary file format.

File layout (all integers little-endian)::

    b"NGNF" | u32 version | u32 header length | header (UTF-8 key/value text)
    | K*M float64 row-major | u64 checksum

The checksum is an 8-byte BLAKE2b digest of the header and numeric block.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import __version__
from . import config as kv
from .config import IntegratorConfig
from .errors import (
    ChecksumError,
    CheckpointError,
    ConfigMismatchError,
    IntegrationError,
    RangeError,
    TruncatedFileError,
    VersionMismatchError,
)
from .flow import FlowConfig, ParamVector, param_count

MAGIC = b"NGNF"
FORMAT_VERSION = 1

# Bogacki-Shampine tableau
_C = (0.0, 0.5, 0.75, 1.0)
_A = ((), (0.5,), (0.0, 0.75), (2 / 9, 1 / 3, 4 / 9))
_B3 = (2 / 9, 1 / 3, 4 / 9, 0.0)
_E = (-5 / 72, 1 / 12, 1 / 9, -1 / 8)  # third minus second order weights


@dataclass
class Checkpoint:
    flow: FlowConfig
    times: np.ndarray  # (K,)
    thetas: np.ndarray  # (K, M)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.thetas = np.asarray(self.thetas, dtype=np.float64)
        M = param_count(self.flow)[0]
        if self.thetas.ndim != 2 or self.thetas.shape != (self.times.size, M):
            raise ConfigMismatchError(
                f"theta block shape {self.thetas.shape} does not match "
                f"{self.times.size} times x M={M}"
            )
        if self.times.size and np.any(np.diff(self.times) <= 0):
            raise CheckpointError("checkpoint times must be strictly increasing")

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def param(self, k: int) -> ParamVector:
        return ParamVector.from_array(self.flow, self.thetas[k])


def integrate(
    theta0: ParamVector,
    vel_field: Callable,
    icfg: IntegratorConfig,
    meta: Optional[dict] = None,
    on_step: Optional[Callable[[dict], None]] = None,
) -> Checkpoint:
    """Integrate ``dtheta/dtau = vel_field(theta, tau)`` from t_start to t_end.

    If ``vel_field`` sets ``accepts_stream``, it is called with a third
    argument: the index of the step being attempted, shared by all stages of
    that step (and by retries after a rejection).  All stages of a step then
    see the same sample stream, so the embedded error estimate measures
    truncation error rather than sampling noise; the first-same-as-last
    reuse is dropped in that case because the next step uses a new stream.
    """
    streamed = getattr(vel_field, "accepts_stream", False)

    def f(y, t, k):
        return np.asarray(vel_field(y, t, k) if streamed else vel_field(y, t), dtype=np.float64)

    t, t_end = icfg.t_start, icfg.t_end
    y = np.array(theta0.values, dtype=np.float64)
    h = min(icfg.h_init, icfg.h_max, t_end - t)
    times, rows = [t], [y.copy()]
    step = 0
    accepted = 0
    k1 = f(y, t, step)
    while t < t_end:
        h = min(h, t_end - t)
        last = t + h >= t_end
        k2 = f(y + h * _A[1][0] * k1, t + _C[1] * h, step)
        k3 = f(y + h * (_A[2][1] * k2), t + _C[2] * h, step)
        y_new = y + h * (_B3[0] * k1 + _B3[1] * k2 + _B3[2] * k3)
        t_new = t_end if last else t + h
        k4 = f(y_new, t_new, step)
        err_vec = h * (_E[0] * k1 + _E[1] * k2 + _E[2] * k3 + _E[3] * k4)
        scale = icfg.atol + icfg.rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.sqrt(np.mean((err_vec / scale) ** 2))) if y.size else 0.0
        if not np.isfinite(err):
            raise IntegrationError(f"non-finite error estimate at tau={t!r}, h={h!r}")
        if err <= 1.0:
            t, y = t_new, y_new
            accepted += 1
            if on_step is not None:
                on_step({"tau": t, "h": h, "err": err, "step": accepted})
            if accepted % icfg.checkpoint_stride == 0 or t >= t_end:
                times.append(t)
                rows.append(y.copy())
            step += 1
            if t < t_end:
                k1 = f(y, t, step) if streamed else k4
            factor = 5.0 if err == 0.0 else min(5.0, 0.9 * err ** (-1 / 3))
        else:
            factor = max(0.2, 0.9 * err ** (-1 / 3))
            if h <= icfg.h_min:
                raise IntegrationError(
                    f"step size underflow at tau={t!r}: h={h!r}, error estimate {err!r}"
                )
        h = min(max(h * factor, icfg.h_min), icfg.h_max)
    ck = Checkpoint(theta0.config, np.array(times), np.array(rows), dict(meta or {}))
    ck.meta.setdefault("integrator.accepted_steps", accepted)
    return ck


def theta_at(ckpt: Checkpoint, tau: float) -> ParamVector:
    """Piecewise-linear interpolation of the stored parameter trajectory."""
    tau = float(tau)
    times = ckpt.times
    if not times[0] <= tau <= times[-1]:
        raise RangeError(f"tau={tau!r} outside checkpoint range [{times[0]!r}, {times[-1]!r}]")
    k = int(np.searchsorted(times, tau, side="right")) - 1
    if k >= times.size - 1 or times[k] == tau:
        return ckpt.param(min(k, times.size - 1))
    w = (tau - times[k]) / (times[k + 1] - times[k])
    row = (1.0 - w) * ckpt.thetas[k] + w * ckpt.thetas[k + 1]
    return ParamVector.from_array(ckpt.flow, row)


# ---------------------------------------------------------------------------
# file format


def _header(ckpt: Checkpoint) -> bytes:
    flat = {f"flow.{k}": v for k, v in vars(ckpt.flow).items()}
    flat.update(ckpt.meta)
    flat["ckpt.count"] = int(ckpt.times.size)
    flat["ckpt.params"] = int(ckpt.thetas.shape[1])
    flat["ckpt.times"] = [float(t) for t in ckpt.times]
    flat.setdefault("meta.version", __version__)
    return kv.dumps(flat).encode("utf-8")


def to_bytes(ckpt: Checkpoint) -> bytes:
    header = _header(ckpt)
    payload = header + ckpt.thetas.astype("<f8").tobytes(order="C")
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return MAGIC + struct.pack("<II", FORMAT_VERSION, len(header)) + payload + digest


def save(ckpt: Checkpoint, path) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(to_bytes(ckpt))
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc


def from_bytes(blob: bytes, expected_flow: Optional[FlowConfig] = None) -> Checkpoint:
    if len(blob) < 12:
        raise TruncatedFileError("checkpoint shorter than its fixed preamble")
    if blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic bytes)")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    if len(blob) < 12 + hlen + 8:
        raise TruncatedFileError("checkpoint truncated inside header")
    payload, digest = blob[12:-8], blob[-8:]
    try:
        flat = kv.loads(payload[:hlen].decode("utf-8"))
        K, M = int(flat.pop("ckpt.count")), int(flat.pop("ckpt.params"))
    except Exception as exc:
        if hashlib.blake2b(payload, digest_size=8).digest() != digest:
            raise ChecksumError("checkpoint checksum mismatch") from exc
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from exc
    if len(payload) - hlen != K * M * 8:
        raise TruncatedFileError(f"numeric block holds {len(payload) - hlen} bytes, expected {K * M * 8}")
    if hashlib.blake2b(payload, digest_size=8).digest() != digest:
        raise ChecksumError("checkpoint checksum mismatch")
    times = np.asarray(flat.pop("ckpt.times"), dtype=np.float64)
    flow_kw = kv.section(flat, "flow")
    for k in flow_kw:
        flat.pop(f"flow.{k}")
    flow = FlowConfig(**flow_kw)
    if expected_flow is not None and flow != expected_flow:
        raise ConfigMismatchError(f"checkpoint was trained for {flow}, expected {expected_flow}")
    if param_count(flow)[0] != M:
        raise ConfigMismatchError(f"checkpoint stores M={M} parameters, architecture needs {param_count(flow)[0]}")
    thetas = np.frombuffer(payload[hlen:], dtype="<f8").reshape(K, M).astype(np.float64)
    return Checkpoint(flow, times, thetas, flat)


def load(path, expected_flow: Optional[FlowConfig] = None) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return from_bytes(blob, expected_flow)
