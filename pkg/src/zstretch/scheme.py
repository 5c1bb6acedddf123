"""Six-point two-level Crank-Nicolson scheme for

    c5*u_rz + c4*u_rr + c3*u_r + c2*u_z + c1*u + c0 = 0

on a uniform (r, z) grid, with mirror (Neumann) closures at r = 0 and r = R1.

One propagation step solves ``B u_n = C u_{n-1} + q`` where B and C are
complex tridiagonal.  Interior rows are scaled by ``2*tau/c2`` so that
``G = (B + C)/2`` has 2 on its diagonal; for the constant-coefficient
paraxial equation this gives the familiar

    -a(1 + 1/2m) u[m+1] + (2 + 2a) u[m] - a(1 - 1/2m) u[m-1],   a = -i*tau/(2*kappa*h**2)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numba
import numpy as np

from .geometry import LensGeometry, stretch_maps


class StepError(ArithmeticError):
    """Propagation step ``step`` failed (singular pivot or non-finite values)."""

    def __init__(self, step: int, reason: str):
        super().__init__(f"step {step}: {reason}")
        self.step = step


class SingularPivotError(ArithmeticError):
    """A forward-elimination pivot vanished in the tridiagonal solve."""

    def __init__(self, index: int):
        super().__init__(f"singular pivot at row {index}")
        self.index = index


@dataclass(frozen=True)
class GridSpec:
    M: int
    N: int
    h: float
    tau: float

    def __post_init__(self):
        if self.M < 2 or self.N < 1:
            raise ValueError(f"need M >= 2 and N >= 1, got M={self.M}, N={self.N}")
        if not (self.h > 0 and self.tau > 0):
            raise ValueError("grid spacings must be positive")

    @classmethod
    def uniform(cls, width: float, length: float, M: int, N: int) -> "GridSpec":
        return cls(M, N, width / M, length / N)

    @property
    def sigma(self) -> float:
        return self.tau / self.h

    @property
    def r(self) -> np.ndarray:
        return np.arange(self.M + 1) * self.h

    def z(self, n):
        return np.asarray(n) * self.tau


@dataclass(frozen=True)
class PdeCoefficients:
    """Coefficients c5..c0; each may be a scalar or a per-node array."""

    c5: complex = 0.0
    c4: complex = 0.0
    c3: complex = 0.0
    c2: complex = 0.0
    c1: complex = 0.0
    c0: complex = 0.0

    def at(self, idx) -> "PdeCoefficients":
        def pick(c):
            return c[idx] if np.ndim(c) else c

        return PdeCoefficients(*(pick(c) for c in self.as_tuple()))

    def as_tuple(self):
        return (self.c5, self.c4, self.c3, self.c2, self.c1, self.c0)


@dataclass(frozen=True)
class StencilRow:
    """Weights of ``new . u_n = old . u_{n-1} - c0`` at one node."""

    new_plus: complex
    new_center: complex
    new_minus: complex
    old_plus: complex
    old_center: complex
    old_minus: complex
    c0: complex


def row_coefficients(c: PdeCoefficients, h: float, tau: float) -> StencilRow:
    if not (h > 0 and tau > 0):
        raise ValueError("h and tau must be positive")
    cross = c.c5 / (2 * h * tau)
    diff2 = c.c4 / (2 * h * h)
    diff1 = c.c3 / (4 * h)
    return StencilRow(
        new_plus=cross + diff2 + diff1,
        new_center=-c.c4 / (h * h) + c.c2 / tau + c.c1 / 2,
        new_minus=-cross + diff2 - diff1,
        old_plus=cross - diff2 - diff1,
        old_center=c.c4 / (h * h) + c.c2 / tau - c.c1 / 2,
        old_minus=-cross - diff2 + diff1,
        c0=c.c0,
    )


def homogeneous_coefficients(kappa: float, m, h: float) -> PdeCoefficients:
    """Coefficients of ``u_rr + u_r/r - 2i*kappa*u_z = 0`` at ``r = m*h``."""
    if not kappa > 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    m = np.asarray(m)
    if np.any(m <= 0):
        raise ValueError("1/r is singular at m = 0; the axis uses the boundary row")
    c3 = 1.0 / (m * h)
    return PdeCoefficients(0.0, 1.0, c3[()] if c3.ndim == 0 else c3, -2j * kappa, 0.0, 0.0)


def lens_coefficients(xi, zeta, kappa: float, geom: LensGeometry) -> PdeCoefficients:
    """Coefficients of the stretched in-lens equation at interior points (xi > 0)."""
    xi = np.asarray(xi, dtype=float)
    if np.any(xi <= 0):
        raise ValueError("lens coefficients need xi > 0; the axis uses the boundary row")
    ev = stretch_maps(xi, zeta, geom)
    return PdeCoefficients(
        c5=2.0 * ev.phi,
        c4=1.0,
        c3=1.0 / xi,
        c2=-2j * kappa * ev.theta + ev.psi + ev.phi_over_xi,
        c1=0.0,
        c0=0.0,
    )


def homogeneous_field(kappa: float, M: int, h: float) -> PdeCoefficients:
    """Per-node coefficients of the constant-kappa equation; c3 is unused at m = 0."""
    m = np.arange(M + 1, dtype=float)
    c3 = np.zeros(M + 1)
    c3[1:] = 1.0 / (m[1:] * h)
    return PdeCoefficients(0.0, 1.0, c3, -2j * kappa, 0.0, 0.0)


def lens_field(geom: LensGeometry, kappa: float, M: int, zeta: float) -> PdeCoefficients:
    """Per-node in-lens coefficients on ``xi_m = m*R1/M`` at one zeta level."""
    xi = np.arange(M + 1) * (geom.R1 / M)
    xi[-1] = geom.R1
    ev = stretch_maps(xi, zeta, geom)
    c3 = np.zeros(M + 1)
    c3[1:] = 1.0 / xi[1:]
    c2 = -2j * kappa * ev.theta + ev.psi + ev.phi_over_xi
    return PdeCoefficients(2.0 * ev.phi, 1.0, c3, c2, 0.0, 0.0)


@dataclass
class Tridiagonal:
    """Square tridiagonal matrix; ``lower[0]`` and ``upper[-1]`` are ignored."""

    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.ascontiguousarray(self.lower, dtype=complex)
        self.diag = np.ascontiguousarray(self.diag, dtype=complex)
        self.upper = np.ascontiguousarray(self.upper, dtype=complex)
        if not (self.lower.shape == self.diag.shape == self.upper.shape):
            raise ValueError("diagonals must have equal length")
        self.lower[0] = 0
        self.upper[-1] = 0

    @property
    def size(self) -> int:
        return self.diag.shape[0]

    def matvec(self, u):
        u = np.asarray(u)
        out = self.diag * u
        out[1:] += self.lower[1:] * u[:-1]
        out[:-1] += self.upper[:-1] * u[1:]
        return out

    def to_dense(self) -> np.ndarray:
        n = self.size
        a = np.zeros((n, n), dtype=complex)
        idx = np.arange(n)
        a[idx, idx] = self.diag
        a[idx[1:], idx[:-1]] = self.lower[1:]
        a[idx[:-1], idx[1:]] = self.upper[:-1]
        return a

    def __add__(self, other: "Tridiagonal") -> "Tridiagonal":
        return Tridiagonal(self.lower + other.lower, self.diag + other.diag, self.upper + other.upper)

    def __sub__(self, other: "Tridiagonal") -> "Tridiagonal":
        return Tridiagonal(self.lower - other.lower, self.diag - other.diag, self.upper - other.upper)

    def scaled(self, factor) -> "Tridiagonal":
        return Tridiagonal(self.lower * factor, self.diag * factor, self.upper * factor)


@dataclass
class TridiagonalOperatorPair:
    """``B u_n = C u_{n-1} + source`` for one propagation step."""

    B: Tridiagonal
    C: Tridiagonal
    source: Optional[np.ndarray] = None

    @property
    def G(self) -> Tridiagonal:
        return (self.B + self.C).scaled(0.5)

    @property
    def A(self) -> Tridiagonal:
        return (self.B - self.C).scaled(0.5)


def assemble_pair(coeffs: PdeCoefficients, h: float, tau: float) -> TridiagonalOperatorPair:
    """Build B and C from a per-node coefficient field of length M+1.

    Rows 0 and M are mirror closures of the second-difference term (the
    first-derivative and cross terms drop out there), as in the printed
    boundary rows ``(2 + 2a) u0 - 2a u1``.
    """
    c = [np.asarray(v, dtype=complex) for v in coeffs.as_tuple()]
    n = max(v.size for v in c)
    c5, c4, c3, c2, c1, c0 = (np.broadcast_to(v, (n,)).copy() for v in c)
    if n < 3:
        raise ValueError("need at least three nodes")
    if np.any(c2 == 0):
        raise ValueError("c2 must be nonzero for the row normalization")
    scale = 2 * tau / c2
    row = row_coefficients(PdeCoefficients(c5, c4, c3, c2, c1, c0), h, tau)

    b_lo, b_di, b_up = row.new_minus * scale, row.new_center * scale, row.new_plus * scale
    c_lo, c_di, c_up = row.old_minus * scale, row.old_center * scale, row.old_plus * scale

    for m, nb in ((0, 1), (n - 1, n - 2)):
        w = scale[m] * c4[m] / (h * h)
        b_di[m] = 2 - w + scale[m] * c1[m] / 2
        c_di[m] = 2 + w - scale[m] * c1[m] / 2
        if nb > m:
            b_up[m], c_up[m] = w, -w
        else:
            b_lo[m], c_lo[m] = w, -w

    source = None
    if np.any(c0 != 0):
        source = -scale * c0
    return TridiagonalOperatorPair(
        Tridiagonal(b_lo, b_di, b_up), Tridiagonal(c_lo, c_di, c_up), source
    )


@numba.njit(cache=True)
def _thomas_kernel(lower, diag, upper, rhs, tol):
    n = diag.shape[0]
    cp = np.empty(n, dtype=np.complex128)
    x = np.empty(n, dtype=np.complex128)
    piv = diag[0]
    if abs(piv) < tol:
        return x, 0
    cp[0] = upper[0] / piv
    x[0] = rhs[0] / piv
    for i in range(1, n):
        piv = diag[i] - lower[i] * cp[i - 1]
        if abs(piv) < tol:
            return x, i
        cp[i] = upper[i] / piv
        x[i] = (rhs[i] - lower[i] * x[i - 1]) / piv
    for i in range(n - 2, -1, -1):
        x[i] -= cp[i] * x[i + 1]
    return x, -1


def thomas_solve(tri: Tridiagonal, rhs) -> np.ndarray:
    """Solve ``tri @ x = rhs`` by forward elimination without pivoting."""
    rhs = np.ascontiguousarray(rhs, dtype=complex)
    if rhs.shape != tri.diag.shape:
        raise ValueError("rhs length does not match the matrix")
    scale = max(np.abs(tri.diag).max(), np.abs(tri.lower).max(), np.abs(tri.upper).max())
    x, bad = _thomas_kernel(tri.lower, tri.diag, tri.upper, rhs, 1e-14 * scale)
    if bad >= 0:
        raise SingularPivotError(int(bad))
    return x


def advance(u_prev, pair: TridiagonalOperatorPair) -> np.ndarray:
    """One step: solve ``B u_n = C u_{n-1} (+ source)``."""
    u_prev = np.asarray(u_prev)
    if u_prev.shape != pair.B.diag.shape:
        raise ValueError("vector length does not match the operator")
    rhs = pair.C.matvec(u_prev)
    if pair.source is not None:
        rhs = rhs + pair.source
    return thomas_solve(pair.B, rhs)


@dataclass
class ComplexField:
    """Envelope samples ``values[m, j]`` at propagation indices ``steps[j]``."""

    values: np.ndarray
    grid: GridSpec
    segment: str
    steps: list = field(default_factory=list)


def propagate(
    u0,
    pair_at: Callable[[int], TridiagonalOperatorPair],
    nsteps: int,
    on_step: Optional[Callable[[int, np.ndarray], None]] = None,
) -> np.ndarray:
    """March ``nsteps`` steps from ``u0``; ``pair_at(n)`` builds step n (1-based).

    ``on_step(n, u_n)`` is called after every step, and once with n = 0.
    """
    u = np.array(u0, dtype=complex)
    if on_step is not None:
        on_step(0, u)
    for n in range(1, nsteps + 1):
        try:
            u = advance(u, pair_at(n))
        except SingularPivotError as exc:
            raise StepError(n, str(exc)) from exc
        if not np.all(np.isfinite(u)):
            raise StepError(n, "non-finite field values")
        if on_step is not None:
            on_step(n, u)
    return u
