"""End-to-end run: source on the entry surface, stretched in-lens solve,
constant-kappa post-lens solve, and on-axis diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math
from typing import NamedTuple, Optional
import warnings

import numpy as np

from . import stability
from .geometry import LensGeometry, SingularityError, dropped_term_bound
from .physics import GaussianSource, OpticalParameters, lens_entry_profile
from .scheme import (
    GridSpec,
    StepError,
    assemble_pair,
    homogeneous_field,
    lens_field,
    propagate,
)

log = logging.getLogger(__name__)


class StabilityViolation(RuntimeError):
    """Lens grid finer than the in-lens stability limit (strict mode)."""


class NumericalFailure(RuntimeError):
    def __init__(self, segment: str, step: int, reason: str):
        super().__init__(f"{segment} segment, {reason}")
        self.segment = segment
        self.step = step


@dataclass
class SimulationConfig:
    optics: OpticalParameters
    source: GaussianSource
    geom: LensGeometry
    M: int
    N: int
    post_length: Optional[float] = None
    post_steps: Optional[int] = None
    source_wavenumber: str = "kappa0"
    snapshot_stride: int = 0
    strict: bool = False

    def __post_init__(self):
        if self.post_length is None:
            self.post_length = 4.0 * self.geom.Z
        if not self.post_length > 0:
            raise ValueError("post-lens length must be positive")
        if self.post_steps is None:
            self.post_steps = max(1, int(round(self.post_length / self.lens_grid.tau)))
        if self.source_wavenumber not in ("kappa0", "kappa1"):
            raise ValueError("source_wavenumber must be 'kappa0' or 'kappa1'")
        if self.snapshot_stride < 0:
            raise ValueError("snapshot stride must be >= 0")

    @property
    def lens_grid(self) -> GridSpec:
        return GridSpec.uniform(self.geom.R1, self.geom.Z, self.M, self.N)

    @property
    def post_grid(self) -> GridSpec:
        return GridSpec.uniform(self.geom.R1, self.post_length, self.M, self.post_steps)

    @property
    def source_kappa(self) -> float:
        return getattr(self.optics, self.source_wavenumber)

    def geometric_focus(self) -> float:
        """Thin-lens focal length ``R/(n2 - n1)`` (relative index for n1 != 1)."""
        return self.geom.R * self.optics.n1 / (self.optics.n2 - self.optics.n1)


class Focus(NamedTuple):
    z: float
    peak: float
    at_endpoint: bool


@dataclass
class PropagationRecord:
    z: np.ndarray
    axis: np.ndarray
    lens_snapshots: list = field(default_factory=list)
    post_snapshots: list = field(default_factory=list)
    dropped_term_bound: float = math.nan
    h: float = math.nan
    h_min: float = math.nan
    M_max: int = 0
    lens_condition: bool = True
    n_lens: int = 0

    @property
    def intensity(self) -> np.ndarray:
        return intensity(self.axis)


def intensity(u):
    """Numerical intensity ``sqrt(re**2 + im**2)``."""
    u = np.asarray(u)
    return np.hypot(u.real, u.imag)


def find_focus(z, trace) -> Focus:
    """Location and height of the trace maximum, refined by a parabola
    through the three samples around the discrete maximum."""
    z = np.asarray(z, dtype=float)
    t = np.asarray(trace, dtype=float)
    if t.size == 0:
        raise ValueError("empty trace")
    i = int(np.argmax(t))
    if i == 0 or i == t.size - 1:
        return Focus(float(z[i]), float(t[i]), True)
    x0, x1, x2 = z[i - 1 : i + 2]
    y0, y1, y2 = t[i - 1 : i + 2]
    d01 = (y1 - y0) / (x1 - x0)
    d12 = (y2 - y1) / (x2 - x1)
    a = (d12 - d01) / (x2 - x0)
    if a >= 0:
        return Focus(float(x1), float(y1), False)
    b = d01 - a * (x0 + x1)
    zv = -b / (2 * a)
    c = y0 - a * x0 * x0 - b * x0
    return Focus(float(zv), float(a * zv * zv + b * zv + c), False)


def on_axis_trace(record: PropagationRecord) -> np.ndarray:
    """Columns z, re, im, intensity of the m = 0 row across both segments."""
    u = record.axis
    return np.column_stack([record.z, u.real, u.imag, intensity(u)])


def check_lens_grid(config: SimulationConfig):
    """Return (h_min, M_max, ok) and warn or raise when h <= h_min."""
    kappa = config.optics.kappa1
    hm = stability.h_min(config.geom, kappa)
    m_max = stability.max_M(config.geom, kappa) if hm > 0 else np.iinfo(np.int64).max
    ok = config.lens_grid.h > hm
    if not ok:
        msg = (
            f"lens grid h={config.lens_grid.h:.6g} is below h_min={hm:.6g} "
            f"(M={config.M} exceeds M_max={m_max})"
        )
        if config.strict:
            raise StabilityViolation(msg)
        warnings.warn(msg, RuntimeWarning)
    return hm, m_max, ok


def run_simulation(config: SimulationConfig, initial=None) -> PropagationRecord:
    """Propagate the source through the lens and the post-lens region.

    ``initial`` overrides the entry-surface source vector (length M+1).
    """
    geom = config.geom
    lg, pg = config.lens_grid, config.post_grid
    M = config.M
    hm, m_max, ok = check_lens_grid(config)
    try:
        bound = dropped_term_bound(geom)
    except SingularityError:
        bound = math.inf
    log.info("dropped-term bound %.6g, h_min %.6g, M_max %d", bound, hm, m_max)

    if initial is None:
        u0 = lens_entry_profile(geom, config.source, config.source_kappa, M)
    else:
        u0 = np.array(initial, dtype=complex)
        if u0.shape != (M + 1,):
            raise ValueError(f"initial vector must have length {M + 1}")

    n_total = config.N + config.post_steps + 1
    z = np.empty(n_total)
    axis = np.empty(n_total, dtype=complex)
    rec = PropagationRecord(
        z=z, axis=axis, dropped_term_bound=bound, h=lg.h, h_min=hm, M_max=m_max,
        lens_condition=ok, n_lens=config.N,
    )
    stride = config.snapshot_stride

    def lens_step(n, u):
        z[n] = n * lg.tau
        axis[n] = u[0]
        if stride and (n % stride == 0 or n == config.N):
            rec.lens_snapshots.append((n, u.copy()))

    def lens_pair(n):
        return assemble_pair(
            lens_field(geom, config.optics.kappa1, M, (n - 0.5) * lg.tau), lg.h, lg.tau
        )

    try:
        u_exit = propagate(u0, lens_pair, config.N, lens_step)
    except StepError as exc:
        raise NumericalFailure("lens", exc.step, str(exc)) from exc

    post_pair = assemble_pair(homogeneous_field(config.optics.kappa0, M, pg.h), pg.h, pg.tau)
    off = config.N

    def post_step(n, u):
        if n == 0:
            if stride:
                rec.post_snapshots.append((geom.Z, u.copy()))
            return
        z[off + n] = geom.Z + n * pg.tau
        axis[off + n] = u[0]
        if stride and (n % stride == 0 or n == config.post_steps):
            rec.post_snapshots.append((geom.Z + n * pg.tau, u.copy()))

    try:
        propagate(u_exit, lambda n: post_pair, config.post_steps, post_step)
    except StepError as exc:
        raise NumericalFailure("post-lens", exc.step, str(exc)) from exc
    return rec

