"""Matrix stability analysis of the two-level schemes.

With ``B = G + A`` and ``C = G - A`` the step operator ``E = B^{-1} C`` has
eigenvalues ``(1 - l)/(1 + l)`` for the eigenvalues ``l`` of ``G^{-1} A``, so
``rho(E) <= 1`` exactly when ``G^{-1} A`` has no eigenvalue with negative real
part.  In the stretched lens the extra condition ``h > 2*max|gamma*phi|``
bounds the usable transverse resolution.
"""

from __future__ import annotations

from dataclasses import dataclass
import math
from typing import NamedTuple, Optional, Sequence
import warnings

import numpy as np
from scipy.optimize import minimize_scalar

from .geometry import GeometryError, LensGeometry, derive_aperture, stretch_maps
from .scheme import TridiagonalOperatorPair, thomas_solve

DENSE_LIMIT = 512
IMAG_TOL = 1e-10


class DimensionLimitError(ValueError):
    pass


@dataclass
class StabilityReport:
    spectral_radius: float
    max_real_eigenvalue_of_A: float
    h_min: float
    M_max: int
    verdict: bool
    h: float = math.nan
    lens_condition: bool = True
    growth_constant: Optional[float] = None
    converged: bool = True

    FIELDS = (
        "spectral_radius",
        "max_real_eigenvalue_of_A",
        "h",
        "h_min",
        "M_max",
        "lens_condition",
        "growth_constant",
        "converged",
        "verdict",
    )

    def as_row(self) -> list:
        return [getattr(self, f) for f in self.FIELDS]


def _check_dim(n: int, limit: int):
    if n > limit:
        raise DimensionLimitError(f"dense analysis limited to dimension {limit}, got {n}")


def semistability_check(A, dense_limit: int = DENSE_LIMIT) -> float:
    """Largest real part over the eigenvalues of A."""
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    _check_dim(A.shape[0], dense_limit)
    return float(np.linalg.eigvals(A).real.max())


def is_positive_semistable(A, tol: float = IMAG_TOL, dense_limit: int = DENSE_LIMIT) -> bool:
    """True when every eigenvalue of A has real part >= -tol."""
    A = np.asarray(A)
    _check_dim(A.shape[0], dense_limit)
    return bool(np.linalg.eigvals(A).real.min() >= -tol)


def step_matrix(pair: TridiagonalOperatorPair, dense_limit: int = DENSE_LIMIT) -> np.ndarray:
    """Dense ``E = B^{-1} C``."""
    _check_dim(pair.B.size, dense_limit)
    return np.linalg.solve(pair.B.to_dense(), pair.C.to_dense())


class PowerResult(NamedTuple):
    radius: float
    converged: bool
    iterations: int


def power_iteration(
    pair: TridiagonalOperatorPair, rtol: float = 1e-8, max_iter: int = 10_000, seed: int = 0
) -> PowerResult:
    """Estimate rho(B^{-1} C) by repeated stepping with normalization.

    Converged means the Rayleigh-quotient modulus is stable to ``rtol`` for
    three consecutive iterations and the eigen-residual ``|E u - l u|`` is
    below ``sqrt(rtol)*|l|``; the second test rejects iterates that cycle
    between eigenvectors of equal modulus.
    """
    rng = np.random.default_rng(seed)
    n = pair.B.size
    u = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    u /= np.linalg.norm(u)
    est = 0.0
    hits = 0
    nv = 0.0
    for it in range(1, max_iter + 1):
        v = thomas_solve(pair.B, pair.C.matvec(u))
        nv = float(np.linalg.norm(v))
        if nv == 0.0:
            return PowerResult(0.0, True, it)
        lam = np.vdot(u, v)
        new = float(abs(lam))
        if est > 0 and abs(new - est) <= rtol * est:
            hits += 1
            if hits >= 3 and np.linalg.norm(v - lam * u) <= math.sqrt(rtol) * new:
                return PowerResult(max(new, nv), True, it)
        else:
            hits = 0
        est = new
        u = v / nv
    return PowerResult(max(est, nv), False, max_iter)


def spectral_radius(
    pair: TridiagonalOperatorPair, mode: str = "dense", dense_limit: int = DENSE_LIMIT, **kw
) -> float:
    """rho(B^{-1} C), by dense eigenvalues or power iteration."""
    if mode == "dense":
        return float(np.abs(np.linalg.eigvals(step_matrix(pair, dense_limit))).max())
    if mode == "power":
        res = power_iteration(pair, **kw)
        if not res.converged:
            warnings.warn(
                f"power iteration did not converge in {res.iterations} iterations; "
                f"best estimate {res.radius:.12g}",
                RuntimeWarning,
            )
        return res.radius
    raise ValueError(f"unknown mode {mode!r}")


def growth_constant(E, nsteps: int) -> float:
    """Empirical Lax-Richtmyer constant ``max_{n<=nsteps} ||E^n||_inf``."""
    E = np.asarray(E)
    P = np.eye(E.shape[0], dtype=E.dtype)
    best = 1.0
    for _ in range(nsteps):
        P = E @ P
        best = max(best, float(np.abs(P).sum(axis=1).max()))
    return best


def _gamma_phi(geom: LensGeometry, kappa: float, xi, zeta):
    ev = stretch_maps(xi, zeta, geom)
    return 2.0 * np.abs(ev.gamma(kappa) * ev.phi)


def h_min(geom: LensGeometry, kappa: float, n_xi: int = 512, n_zeta: int = 512) -> float:
    """Smallest stable transverse step ``2*max|gamma*phi|`` over the lens.

    The maximum is taken on an ``n_xi x n_zeta`` lattice over
    ``[0, R1] x [0, Z]`` and then polished along each axis inside the
    neighbouring lattice cells.
    """
    if not kappa > 0:
        raise GeometryError("kappa must be positive")
    if n_xi < 256 or n_zeta < 256:
        raise ValueError("sampling lattice must be at least 256 x 256")
    xi = np.linspace(0.0, geom.R1, n_xi)
    zeta = np.linspace(0.0, geom.Z, n_zeta)
    vals = _gamma_phi(geom, kappa, xi[:, None], zeta[None, :])
    i, j = np.unravel_index(np.argmax(vals), vals.shape)
    best = float(vals[i, j])
    if best == 0.0:
        return 0.0
    xb, zb = xi[i], zeta[j]
    for _ in range(2):
        lo, hi = xi[max(i - 1, 0)], xi[min(i + 1, n_xi - 1)]
        res = minimize_scalar(
            lambda x: -_gamma_phi(geom, kappa, x, zb), bounds=(lo, hi), method="bounded",
            options={"xatol": 1e-12 * geom.R1},
        )
        if -res.fun > best:
            best, xb = float(-res.fun), float(res.x)
        lo, hi = zeta[max(j - 1, 0)], zeta[min(j + 1, n_zeta - 1)]
        res = minimize_scalar(
            lambda z: -_gamma_phi(geom, kappa, xb, z), bounds=(lo, hi), method="bounded",
            options={"xatol": 1e-12 * geom.Z},
        )
        if -res.fun > best:
            best, zb = float(-res.fun), float(res.x)
    return best


def max_M(geom: LensGeometry, kappa: float, **kw) -> int:
    """Largest transverse node count compatible with ``h > h_min``."""
    hm = h_min(geom, kappa, **kw)
    if hm == 0.0:
        return np.iinfo(np.int64).max
    return int(math.floor(geom.R1 / hm))


TABLE31_Z = (0.1, 0.3, 0.5, 0.7, 0.9)
TABLE31_K = (8000.0, 10000.0, 12000.0)


def table31(
    R: float = 1.0,
    Z_list: Sequence[float] = TABLE31_Z,
    k_list: Sequence[float] = TABLE31_K,
    margin: float = 1e-6,
) -> list:
    """``max_M`` for each (Z, k) with the aperture at the taper radius.

    Cells whose geometry is invalid hold None.
    """
    rows = []
    for Z in Z_list:
        row = []
        for k in k_list:
            try:
                geom = LensGeometry(R, Z, derive_aperture(R, Z) * (1 - margin))
                row.append(max_M(geom, k))
            except GeometryError:
                row.append(None)
        rows.append(row)
    return rows


RADIUS_TOL = 1e-8


def _radius(pair, dense_limit, power_kw):
    """(rho, converged) choosing dense mode when the dimension allows."""
    if pair.B.size <= dense_limit:
        return spectral_radius(pair, "dense", dense_limit), True
    res = power_iteration(pair, **power_kw)
    return res.radius, res.converged


def _max_re_A(pair, dense_limit) -> float:
    if pair.B.size > dense_limit:
        return math.nan
    return semistability_check(pair.A.to_dense(), dense_limit)


def homogeneous_report(
    kappa: float, M: int, h: float, tau: float, dense_limit: int = DENSE_LIMIT, **power_kw
) -> StabilityReport:
    """Report for the constant-kappa scheme (no lower step-size restriction)."""
    from .scheme import assemble_pair, homogeneous_field

    pair = assemble_pair(homogeneous_field(kappa, M, h), h, tau)
    rho, conv = _radius(pair, dense_limit, power_kw)
    return StabilityReport(
        spectral_radius=rho,
        max_real_eigenvalue_of_A=_max_re_A(pair, dense_limit),
        h_min=0.0,
        M_max=int(np.iinfo(np.int64).max),
        verdict=bool(rho <= 1 + RADIUS_TOL),
        h=h,
        lens_condition=True,
        converged=conv,
    )


def lens_report(
    geom: LensGeometry,
    kappa: float,
    M: int,
    N: int,
    samples: int = 3,
    dense_limit: int = DENSE_LIMIT,
    hmin: Optional[float] = None,
    **power_kw,
) -> StabilityReport:
    """Report for the stretched in-lens scheme at ``samples`` evenly spread steps.

    The radius and max Re(A) are the worst values over the sampled steps.
    """
    from .scheme import GridSpec, assemble_pair, lens_field

    grid = GridSpec.uniform(geom.R1, geom.Z, M, N)
    hm = h_min(geom, kappa) if hmin is None else hmin
    steps = np.unique(np.linspace(1, N, max(1, samples)).round().astype(int))
    rho, re_a, conv = 0.0, -math.inf, True
    for n in steps:
        pair = assemble_pair(lens_field(geom, kappa, M, (n - 0.5) * grid.tau), grid.h, grid.tau)
        r, c = _radius(pair, dense_limit, power_kw)
        rho, conv = max(rho, r), conv and c
        re_a = max(re_a, _max_re_A(pair, dense_limit))
    return StabilityReport(
        spectral_radius=rho,
        max_real_eigenvalue_of_A=re_a if math.isfinite(re_a) else math.nan,
        h_min=hm,
        M_max=int(math.floor(geom.R1 / hm)) if hm > 0 else int(np.iinfo(np.int64).max),
        verdict=bool(rho <= 1 + RADIUS_TOL),
        h=grid.h,
        lens_condition=bool(grid.h > hm),
        converged=conv,
    )
