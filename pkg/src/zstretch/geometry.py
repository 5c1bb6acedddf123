"""Lens domain and the z-stretching map onto a rectangular computational domain.

The lens segment is the part of the sphere ``(z - R)**2 + r**2 <= R**2`` with
``0 <= z <= Z`` and ``0 <= r <= R1``.  The map keeps ``xi = r`` and sends the
curved entry surface ``z = R - sqrt(R**2 - r**2)`` onto ``zeta = 0`` while the
exit plane ``z = Z`` stays fixed::

    zeta = Z * (z - R + s) / rho,    s = sqrt(R**2 - r**2),    rho = Z - R + s

All functions broadcast over numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

RHO_RTOL = 1e-12
S_RTOL = 1e-12
DEFAULT_TAPER_MARGIN = 1e-6


class GeometryError(ValueError):
    """Point or parameters outside the lens domain."""


class SingularityError(GeometryError):
    """The stretching map degenerates (taper point or lens rim)."""


@dataclass(frozen=True)
class LensGeometry:
    """Plano-convex lens segment.

    R is the radius of the spherical entry surface, Z the axial thickness and
    R1 the transverse aperture of the computational domain.
    """

    R: float
    Z: float
    R1: float

    def __post_init__(self):
        R, Z, R1 = self.R, self.Z, self.R1
        if not all(math.isfinite(v) for v in (R, Z, R1)):
            raise GeometryError(f"LensGeometry: non-finite parameters R={R}, Z={Z}, R1={R1}")
        if R <= 0 or Z <= 0:
            raise GeometryError(f"LensGeometry: need R > 0 and Z > 0, got R={R}, Z={Z}")
        if Z >= 2 * R:
            raise GeometryError(f"LensGeometry: need Z < 2R, got Z={Z}, R={R}")
        if R1 <= 0 or R1 >= R:
            raise GeometryError(f"LensGeometry: need 0 < R1 < R, got R1={R1}, R={R}")
        if R1 > derive_aperture(R, Z):
            raise GeometryError(
                f"LensGeometry: R1={R1} exceeds the taper radius {derive_aperture(R, Z)}"
            )

    @classmethod
    def with_taper_aperture(cls, R: float, Z: float, margin: float = DEFAULT_TAPER_MARGIN):
        """Geometry whose aperture is the taper radius shrunk by ``margin``."""
        return cls(R, Z, derive_aperture(R, Z) * (1.0 - margin))

    @property
    def rho_tol(self) -> float:
        return RHO_RTOL * self.Z

    @property
    def s_tol(self) -> float:
        return S_RTOL * self.R

    def sqrt_term(self, r):
        """``sqrt(R**2 - r**2)``."""
        return np.sqrt(self.R * self.R - np.square(r))

    def rho(self, r):
        """Axial length of the lens at radius r, ``Z - R + sqrt(R**2 - r**2)``."""
        return self.Z - self.R + self.sqrt_term(r)

    def entry_surface(self, r):
        """Axial position of the curved entry surface at radius r."""
        return self.R - self.sqrt_term(r)


def derive_aperture(R: float, Z: float) -> float:
    """Radius at which the spherical entry surface meets the exit plane."""
    if not (R > 0 and 0 < Z < 2 * R):
        raise GeometryError(f"taper radius needs 0 < Z < 2R, got R={R}, Z={Z}")
    return math.sqrt(Z * (2 * R - Z))


def _check_radius(xi, geom: LensGeometry):
    xi = np.asarray(xi, dtype=float)
    if np.any(xi < 0) or np.any(xi > geom.R1 * (1 + 1e-14)):
        raise GeometryError(f"radius outside [0, R1={geom.R1}]")
    s = geom.sqrt_term(xi)
    rho = geom.Z - geom.R + s
    if np.any(rho <= geom.rho_tol):
        raise SingularityError(f"rho <= {geom.rho_tol:g}: radius at or beyond the taper point")
    if np.any(s <= geom.s_tol):
        raise SingularityError("sqrt(R^2 - r^2) vanishes: radius at the lens rim")
    return xi, s, rho


def zeta_forward(r, z, geom: LensGeometry):
    """Map a physical point inside the lens segment to its stretched coordinate."""
    r, s, rho = _check_radius(r, geom)
    z = np.asarray(z, dtype=float)
    slack = 1e-12 * geom.Z
    if np.any(z < geom.R - s - slack) or np.any(z > geom.Z + slack):
        raise GeometryError("z outside the lens segment")
    out = geom.Z * (z - geom.R + s) / rho
    return out[()] if out.ndim == 0 else out


def z_inverse(xi, zeta, geom: LensGeometry):
    """Physical z of the computational point (xi, zeta)."""
    xi, s, rho = _check_radius(xi, geom)
    zeta = np.asarray(zeta, dtype=float)
    if np.any(zeta < 0) or np.any(zeta > geom.Z * (1 + 1e-14)):
        raise GeometryError("zeta outside [0, Z]")
    out = zeta * rho / geom.Z + geom.R - s
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class StretchEvaluation:
    """Metric terms of the stretching map at computational points.

    ``phi_over_xi`` is phi/xi with the analytic axis limit substituted at
    xi = 0.
    """

    phi: np.ndarray
    psi: np.ndarray
    theta: np.ndarray
    rho: np.ndarray
    phi_over_xi: np.ndarray

    def gamma(self, kappa: float):
        return 1.0 / (2j * kappa * self.theta - self.psi - self.phi_over_xi)


def stretch_maps(xi, zeta, geom: LensGeometry) -> StretchEvaluation:
    """Evaluate d(zeta)/dr, d2(zeta)/dr2 and d(zeta)/dz at (xi, zeta).

    The second derivative uses the chain-rule form
    ``(zeta - Z) * (rho*R**2 + 2*xi**2*s) / (rho**2 * s**3)``; the
    frequently quoted closed form with ``R**3 - s*(R**2 + 2*xi**2) - Z`` in the
    bracket disagrees with the true derivative (see ``verify.map_derivative_oracle``).
    """
    xi, s, rho = _check_radius(xi, geom)
    zeta = np.asarray(zeta, dtype=float)
    R, Z = geom.R, geom.Z
    dz = zeta - Z
    phi_over_xi = dz / (s * rho)
    phi = xi * phi_over_xi
    psi = dz * (rho * R * R + 2.0 * xi * xi * s) / (rho * rho * s**3)
    theta = Z / rho
    shape = np.broadcast_shapes(xi.shape, zeta.shape)

    def _b(a):
        a = np.broadcast_to(a, shape)
        return a[()] if a.ndim == 0 else np.array(a)

    return StretchEvaluation(_b(phi), _b(psi), _b(theta), _b(rho), _b(phi_over_xi))


def gamma(xi, zeta, geom: LensGeometry, kappa: float):
    """Scale ``1 / (2i*kappa*theta - psi - phi/xi)`` of the in-lens scheme."""
    if not kappa > 0:
        raise GeometryError(f"kappa must be positive, got {kappa}")
    return stretch_maps(xi, zeta, geom).gamma(kappa)


def dropped_term_bound(geom: LensGeometry) -> float:
    """Bound on the coefficient of the dropped u_zeta_zeta term relative to u_zz."""
    R, Z, R1 = geom.R, geom.Z, geom.R1
    bracket = Z - (R - math.sqrt(R * R - R1 * R1))
    if bracket <= geom.rho_tol:
        raise SingularityError("dropped-term bound diverges at the taper aperture")
    return R1 * R1 * Z / ((R * R - R1 * R1) * bracket)
