"""Offline phase: identity initialisation, Galerkin time integration, checkpoint."""

from __future__ import annotations

import csv
import logging
import time
import warnings
from typing import Optional, TextIO

from . import __version__
from .config import RunConfig
from .errors import ConfigError
from .flow import identity_init
from .galerkin import GalerkinVelocity
from .integrator import Checkpoint, integrate

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "tau", "h", "err", "residual", "eta_norm", "wall")


def train(cfg: RunConfig, log_file: Optional[TextIO] = None) -> Checkpoint:
    """Run the full offline phase for ``cfg``.

    When ``log_file`` is given, one CSV row per accepted step is written with
    the Galerkin residual and velocity norm of the step's last stage.
    Wall-clock time goes to the log only, so checkpoints stay reproducible.
    """
    model = cfg.build_model()
    if model.dim != cfg.flow.dim:
        raise ConfigError(f"model {cfg.model!r} has dimension {model.dim}, flow has {cfg.flow.dim}")
    theta0 = identity_init(cfg.flow, cfg.seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore" if log_file is None else "default")
        vel = GalerkinVelocity(cfg.flow, model, cfg.galerkin, cfg.s)
    writer = None
    if log_file is not None:
        writer = csv.writer(log_file, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
    start = time.perf_counter()

    def on_step(info):
        row = dict(info, **vel.last, wall=time.perf_counter() - start)
        log.info("step %(step)d tau=%(tau).5f h=%(h).3g residual=%(residual).3g", row)
        if writer is not None:
            writer.writerow([_cell(row[c]) for c in LOG_COLUMNS])
            log_file.flush()

    meta = {k: v for k, v in cfg.to_flat().items() if not k.startswith("flow.")}
    meta["meta.version"] = __version__
    return integrate(theta0, vel, cfg.integrator, meta=meta, on_step=on_step)


def _cell(v):
    return repr(float(v)) if isinstance(v, float) else str(v)
