"""Independent oracles for the main build.

Nothing here touches the stepping internals of :mod:`zstretch.scheme`
beyond its public operations.  The dense linear algebra is written out by
hand (partial-pivoting elimination, Hessenberg reduction plus shifted QR) so
it shares no code path with the Thomas solver or with LAPACK.
"""

from __future__ import annotations

from dataclasses import dataclass
import math
from typing import Callable, NamedTuple, Optional, Sequence

import numba
import numpy as np

from .geometry import LensGeometry, stretch_maps, z_inverse
from .physics import paraxial_gaussian
from .scheme import (
    PdeCoefficients,
    assemble_pair,
    advance,
    homogeneous_field,
    row_coefficients,
)


class SingularMatrixError(ArithmeticError):
    pass


# ---------------------------------------------------------------- dense algebra


def dense_solve_oracle(a, b) -> np.ndarray:
    """Gaussian elimination with partial pivoting."""
    a = np.array(a, dtype=complex)
    b = np.array(b, dtype=complex)
    n = a.shape[0]
    if a.shape != (n, n) or b.shape[0] != n:
        raise ValueError("shape mismatch")
    if n > 2048:
        raise ValueError("dense oracle limited to dimension 2048")
    scale = np.abs(a).max() if n else 0.0
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        if abs(a[p, k]) <= 1e-14 * scale:
            raise SingularMatrixError(f"zero pivot in column {k}")
        if p != k:
            a[[k, p]] = a[[p, k]]
            b[[k, p]] = b[[p, k]]
        f = a[k + 1 :, k] / a[k, k]
        a[k + 1 :, k:] -= np.outer(f, a[k, k:])
        b[k + 1 :] -= f[:, None] * b[k] if b.ndim == 2 else f * b[k]
    x = np.empty_like(b)
    for k in range(n - 1, -1, -1):
        x[k] = (b[k] - a[k, k + 1 :] @ x[k + 1 :]) / a[k, k]
    return x


@numba.njit(cache=True)
def _hessenberg(a):
    n = a.shape[0]
    v = np.empty(n, dtype=np.complex128)
    for k in range(n - 2):
        alpha = 0.0
        for i in range(k + 1, n):
            alpha += abs(a[i, k]) ** 2
        alpha = np.sqrt(alpha)
        if alpha == 0.0:
            continue
        x0 = a[k + 1, k]
        ph = x0 / abs(x0) if x0 != 0 else 1.0 + 0j
        vn = 0.0
        for i in range(k + 1, n):
            v[i] = a[i, k]
        v[k + 1] += ph * alpha
        for i in range(k + 1, n):
            vn += abs(v[i]) ** 2
        vn = np.sqrt(vn)
        for i in range(k + 1, n):
            v[i] /= vn
        # a <- P a P with P = I - 2 v v^H
        for j in range(k, n):
            w = 0j
            for i in range(k + 1, n):
                w += np.conj(v[i]) * a[i, j]
            for i in range(k + 1, n):
                a[i, j] -= 2.0 * v[i] * w
        for i in range(n):
            w = 0j
            for j in range(k + 1, n):
                w += a[i, j] * v[j]
            for j in range(k + 1, n):
                a[i, j] -= 2.0 * w * np.conj(v[j])
        for i in range(k + 2, n):
            a[i, k] = 0.0
    return a


@numba.njit(cache=True)
def _shifted_qr(h, max_sweeps):
    n = h.shape[0]
    eig = np.zeros(n, dtype=np.complex128)
    hi = n - 1
    sweeps = 0
    eps = 2.220446049250313e-16
    cs = np.zeros(n, dtype=np.float64)
    sn = np.zeros(n, dtype=np.complex128)
    since = 0
    while hi >= 0:
        if hi == 0:
            eig[0] = h[0, 0]
            hi -= 1
            continue
        # deflation search
        lo = hi
        while lo > 0:
            s = abs(h[lo - 1, lo - 1]) + abs(h[lo, lo])
            if s == 0.0:
                s = 1.0
            if abs(h[lo, lo - 1]) <= eps * s:
                h[lo, lo - 1] = 0.0
                break
            lo -= 1
        if lo == hi:
            eig[hi] = h[hi, hi]
            hi -= 1
            since = 0
            continue
        if sweeps >= max_sweeps:
            for i in range(hi + 1):
                eig[i] = h[i, i]
            return eig, False
        sweeps += 1
        since += 1
        # Wilkinson shift from the trailing 2x2 block
        a = h[hi - 1, hi - 1]
        b = h[hi - 1, hi]
        c = h[hi, hi - 1]
        d = h[hi, hi]
        tr = a + d
        det = a * d - b * c
        disc = np.sqrt(tr * tr / 4.0 - det)
        l1 = tr / 2.0 + disc
        l2 = tr / 2.0 - disc
        mu = l1 if abs(l1 - d) < abs(l2 - d) else l2
        if since % 11 == 10:
            mu = mu + abs(h[hi, hi - 1])
        for i in range(lo, hi + 1):
            h[i, i] -= mu
        # QR by Givens on rows lo..hi, then RQ
        for k in range(lo, hi):
            x = h[k, k]
            y = h[k + 1, k]
            r = np.sqrt(abs(x) ** 2 + abs(y) ** 2)
            if r == 0.0:
                cs[k] = 1.0
                sn[k] = 0.0
                continue
            if x == 0:
                c_ = 0.0
                s_ = np.conj(y) / abs(y)
            else:
                c_ = abs(x) / r
                s_ = (x / abs(x)) * np.conj(y) / r
            cs[k] = c_
            sn[k] = s_
            for j in range(k, hi + 1):
                t1 = h[k, j]
                t2 = h[k + 1, j]
                h[k, j] = c_ * t1 + s_ * t2
                h[k + 1, j] = -np.conj(s_) * t1 + c_ * t2
        for k in range(lo, hi):
            c_ = cs[k]
            s_ = sn[k]
            for i in range(lo, min(k + 2, hi) + 1):
                t1 = h[i, k]
                t2 = h[i, k + 1]
                h[i, k] = c_ * t1 + np.conj(s_) * t2
                h[i, k + 1] = -s_ * t1 + c_ * t2
        for i in range(lo, hi + 1):
            h[i, i] += mu
    return eig, True


class EigenResult(NamedTuple):
    values: np.ndarray
    converged: bool


def dense_eigenvalues(a, max_sweeps_per_eig: int = 60) -> EigenResult:
    """All eigenvalues of a dense complex matrix (dimension <= 512)."""
    a = np.array(a, dtype=np.complex128)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("matrix must be square")
    if n > 512:
        raise ValueError("dense eigen oracle limited to dimension 512")
    if n == 0:
        return EigenResult(np.zeros(0, complex), True)
    h = _hessenberg(np.ascontiguousarray(a))
    vals, ok = _shifted_qr(h, max_sweeps_per_eig * n)
    return EigenResult(vals, bool(ok))


def eigen_residual(a, lam: complex, iters: int = 3) -> float:
    """``||A v - lam v|| / ||A||`` after inverse iteration from a fixed start."""
    a = np.asarray(a, dtype=complex)
    n = a.shape[0]
    norm = np.linalg.norm(a, 2)
    shift = lam + 1e-10 * max(norm, 1.0)
    m = a - shift * np.eye(n)
    v = np.ones(n, dtype=complex) / math.sqrt(n)
    for _ in range(iters):
        try:
            v = dense_solve_oracle(m, v)
        except SingularMatrixError:
            return 0.0
        v /= np.linalg.norm(v)
    return float(np.linalg.norm(a @ v - lam * v) / norm)


def match_spectra(x, y) -> float:
    """Largest distance in an optimal one-to-one pairing of two spectra."""
    from scipy.optimize import linear_sum_assignment

    x = np.asarray(x)
    y = np.asarray(y)
    cost = np.abs(x[:, None] - y[None, :])
    i, j = linear_sum_assignment(cost)
    return float(cost[i, j].max()) if x.size else 0.0


# ---------------------------------------------------------------- map derivatives


def psi_printed(xi, zeta, geom: LensGeometry):
    """The frequently quoted closed form for d2(zeta)/dr2 (kept for comparison)."""
    R, Z = geom.R, geom.Z
    s = np.sqrt(R * R - np.square(xi))
    rho = Z - R + s
    return (zeta - Z) * (R**3 - s * (R * R + 2 * np.square(xi)) - Z) / (s**3 * rho**2)


@dataclass
class MapCheck:
    points: np.ndarray
    phi_err: np.ndarray
    theta_err: np.ndarray
    psi_err: np.ndarray
    psi_printed_err: np.ndarray

    @property
    def printed_psi_consistent(self) -> bool:
        return bool(np.max(self.psi_printed_err) <= 1e-4)

    def summary(self) -> dict:
        return {
            "points": len(self.points),
            "max_rel_err_phi": float(np.max(self.phi_err)),
            "max_rel_err_theta": float(np.max(self.theta_err)),
            "max_rel_err_psi": float(np.max(self.psi_err)),
            "max_rel_err_psi_printed": float(np.max(self.psi_printed_err)),
            "printed_psi_consistent": self.printed_psi_consistent,
        }


def _rel(num, ref, floor):
    return np.abs(num - ref) / np.maximum(np.abs(ref), floor)


def map_derivative_oracle(geom: LensGeometry, points, delta: Optional[float] = None) -> MapCheck:
    """Compare the analytic metric terms with Richardson-extrapolated central
    differences of :func:`zeta_forward` at computational points (xi, zeta)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    xi, zeta = pts[:, 0], pts[:, 1]
    d = 1e-5 * geom.R if delta is None else delta
    r = xi
    z = z_inverse(xi, zeta, geom)

    def zf(rr, zz):
        # the map formula itself, so stencils may straddle the axis and the exit plane
        sq = np.sqrt(geom.R * geom.R - rr * rr)
        return geom.Z * (zz - geom.R + sq) / (geom.Z - geom.R + sq)

    def d1r(step):
        return (zf(r + step, z) - zf(r - step, z)) / (2 * step)

    def d1z(step):
        return (zf(r, z + step) - zf(r, z - step)) / (2 * step)

    def d2r(step):
        return (zf(r + step, z) - 2 * zf(r, z) + zf(r - step, z)) / (step * step)

    def rich(f):
        return (4 * f(d / 2) - f(d)) / 3

    phi_n, theta_n = rich(d1r), rich(d1z)
    psi_n = d2r(10 * d)  # second differences are round-off bound at small steps
    psi_n = (4 * d2r(5 * d) - psi_n) / 3
    ev = stretch_maps(xi, zeta, geom)
    floor = 1e-12
    return MapCheck(
        points=pts,
        phi_err=_rel(phi_n, ev.phi, floor),
        theta_err=_rel(theta_n, ev.theta, floor),
        psi_err=_rel(psi_n, ev.psi, floor),
        psi_printed_err=_rel(psi_n, psi_printed(xi, zeta, geom), floor),
    )


def interior_points(geom: LensGeometry, n: int, seed: int = 0, margin: float = 0.02) -> np.ndarray:
    """Random computational points away from the axis, the taper and the end planes."""
    rng = np.random.default_rng(seed)
    xi = rng.uniform(margin, 1 - margin, n) * geom.R1
    zeta = rng.uniform(margin, 1 - margin, n) * geom.Z
    # keep a finite distance from the taper where rho -> 0
    xi = np.minimum(xi, _xi_with_rho(geom, 0.05 * geom.Z))
    return np.column_stack([xi, zeta])


def _xi_with_rho(geom: LensGeometry, rho: float) -> float:
    s = rho - geom.Z + geom.R
    return math.sqrt(max(geom.R**2 - s * s, 0.0))


# ---------------------------------------------------------------- convergence


class ConvergenceRow(NamedTuple):
    h: float
    tau: float
    error: float
    order: Optional[float]


def _with_orders(rows) -> list:
    out = []
    for i, (h, tau, err) in enumerate(rows):
        order = None
        if i > 0 and err > 0 and rows[i - 1][2] > 0:
            h0, t0 = rows[i - 1][0], rows[i - 1][1]
            factor = h0 / h if h0 != h else t0 / tau
            if factor != 1:
                order = math.log(rows[i - 1][2] / err) / math.log(factor)
        out.append(ConvergenceRow(h, tau, err, order))
    return out


@dataclass(frozen=True)
class Manufactured:
    """Smooth test function with the derivatives the operator needs."""

    w: Callable
    w_r: Callable
    w_rr: Callable
    w_z: Callable
    w_rz: Callable


SIN_COS = Manufactured(
    w=lambda r, z: np.sin(2 * r) * np.cos(3 * z),
    w_r=lambda r, z: 2 * np.cos(2 * r) * np.cos(3 * z),
    w_rr=lambda r, z: -4 * np.sin(2 * r) * np.cos(3 * z),
    w_z=lambda r, z: -3 * np.sin(2 * r) * np.sin(3 * z),
    w_rz=lambda r, z: -6 * np.cos(2 * r) * np.sin(3 * z),
)


def apply_operator(c: PdeCoefficients, f: Manufactured, r, z):
    """Exact ``P w`` at (r, z)."""
    return (
        c.c5 * f.w_rz(r, z) + c.c4 * f.w_rr(r, z) + c.c3 * f.w_r(r, z)
        + c.c2 * f.w_z(r, z) + c.c1 * f.w(r, z) + c.c0
    )


def apply_difference_operator(c: PdeCoefficients, f: Manufactured, r, z, h, tau):
    """Six-point difference operator centred at the reference point (r, z)."""
    row = row_coefficients(c, h, tau)
    zn, zo = z + tau / 2, z - tau / 2
    w = f.w
    return (
        row.new_plus * w(r + h, zn) + row.new_center * w(r, zn) + row.new_minus * w(r - h, zn)
        - row.old_plus * w(r + h, zo) - row.old_center * w(r, zo) - row.old_minus * w(r - h, zo)
        + row.c0
    )


def paraxial_coefficients(kappa: float) -> Callable:
    return lambda r, z: PdeCoefficients(0.0, 1.0, 1.0 / r, -2j * kappa, 0.0, 0.0)


def truncation_order_study(
    f: Manufactured = SIN_COS,
    coeffs: Callable = paraxial_coefficients(1.0),
    levels: int = 4,
    h0: float = 0.05,
    sigma: float = 0.5,
    points=None,
) -> list:
    """Max-norm of ``(P - P_h,tau) w`` at fixed reference points while h and
    tau are halved together (sigma = tau/h fixed)."""
    if levels < 3:
        raise ValueError("need at least three levels")
    if points is None:
        rr, zz = np.meshgrid(np.linspace(0.3, 1.2, 7), np.linspace(0.2, 1.0, 7))
        points = np.column_stack([rr.ravel(), zz.ravel()])
    pts = np.asarray(points, dtype=float)
    r, z = pts[:, 0], pts[:, 1]
    c = coeffs(r, z)
    exact = apply_operator(c, f, r, z)
    rows = []
    for lev in range(levels):
        h = h0 / 2**lev
        tau = sigma * h
        approx = apply_difference_operator(c, f, r, z, h, tau)
        rows.append((h, tau, float(np.max(np.abs(approx - exact)))))
    return _with_orders(rows)


def paraxial_residual(fn: Callable, r, z, kappa: float, step: float = 1e-3) -> np.ndarray:
    """Relative residual of ``2i*kappa*u_z - u_rr - u_r/r`` for ``fn(r, z)``,
    with fourth-order central differences."""
    r = np.asarray(r, dtype=float)
    z = np.asarray(z, dtype=float)
    d = step

    def c4(g, x):
        return (-g(x + 2 * d) + 8 * g(x + d) - 8 * g(x - d) + g(x - 2 * d)) / (12 * d)

    def c4_2(g, x):
        return (-g(x + 2 * d) + 16 * g(x + d) - 30 * g(x) + 16 * g(x - d) - g(x - 2 * d)) / (
            12 * d * d
        )

    u_z = c4(lambda zz: fn(r, zz), z)
    u_r = c4(lambda rr: fn(rr, z), r)
    u_rr = c4_2(lambda rr: fn(rr, z), r)
    lap = u_rr + u_r / r
    res = 2j * kappa * u_z - lap
    return np.abs(res) / np.maximum(np.abs(2j * kappa * u_z) + np.abs(lap), 1e-300)


@dataclass
class FreeSpaceStudy:
    rows: list
    kappa: float
    beta0: float
    width: float
    length: float
    edge_ratio: float

    @property
    def ratios(self) -> list:
        return [a.error / b.error for a, b in zip(self.rows, self.rows[1:])]


def _r_weighted_l2(v, h):
    r = np.arange(v.size) * h
    w = r.copy()
    w[-1] *= 0.5
    return math.sqrt(float(np.sum(w * np.abs(v) ** 2) * h))


def free_space_convergence(
    kappa: float = 100.0,
    beta0: float = 0.15,
    width: float = 1.0,
    length: Optional[float] = None,
    levels: Sequence = ((128, 256), (256, 512), (512, 1024)),
) -> FreeSpaceStudy:
    """Constant-kappa scheme against the exact Gaussian beam.

    ``length`` defaults to one Rayleigh range ``kappa*beta0**2/2``.
    """
    if length is None:
        length = kappa * beta0 * beta0 / 2
    edge = float(np.max(np.abs(paraxial_gaussian(width, np.linspace(0, length, 64), beta0, kappa))))
    edge_ratio = edge / abs(paraxial_gaussian(0.0, 0.0, beta0, kappa))
    if edge_ratio > 1e-8:
        raise ValueError(f"envelope at r=width is {edge_ratio:.2g} of the peak; widen the domain")
    rows = []
    for M, N in levels:
        h, tau = width / M, length / N
        pair = assemble_pair(homogeneous_field(kappa, M, h), h, tau)
        r = np.arange(M + 1) * h
        u = paraxial_gaussian(r, 0.0, beta0, kappa) + 0j
        for _ in range(N):
            u = advance(u, pair)
        ref = paraxial_gaussian(r, length, beta0, kappa)
        rows.append((h, tau, _r_weighted_l2(u - ref, h) / _r_weighted_l2(ref, h)))
    return FreeSpaceStudy(_with_orders(rows), kappa, beta0, width, length, edge_ratio)
