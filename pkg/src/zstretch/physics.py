"""Optical parameters, wave numbers and beam sources."""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .geometry import GeometryError, LensGeometry


@dataclass(frozen=True)
class OpticalParameters:
    wavelength: float
    n1: float
    n2: float
    kappa0: float
    kappa1: float

    @classmethod
    def from_kappa1(cls, kappa1: float, n1: float, n2: float) -> "OpticalParameters":
        """Build from a prescribed lens wave number, keeping kappa1/kappa0 = n2/n1."""
        if not (kappa1 > 0 and n1 > 0 and n2 > 0):
            raise ValueError("kappa1, n1 and n2 must be positive")
        wavelength = 2 * math.pi * n2 / kappa1
        return cls(wavelength, n1, n2, kappa1 * n1 / n2, kappa1)


def wavenumbers(wavelength: float, n1: float, n2: float) -> OpticalParameters:
    """Wave numbers ``2*pi*n/wavelength`` outside (n1) and inside (n2) the lens."""
    if not (wavelength > 0 and n1 > 0 and n2 > 0):
        raise ValueError(
            f"wavelength, n1, n2 must be positive, got {wavelength}, {n1}, {n2}"
        )
    return OpticalParameters(
        wavelength, n1, n2, 2 * math.pi * n1 / wavelength, 2 * math.pi * n2 / wavelength
    )


@dataclass(frozen=True)
class GaussianSource:
    """Incident beam.

    ``kind="gaussian"`` is the point-source Gaussian beam; ``z0=math.inf``
    drops its wavefront curvature and the constant phase ``exp(i*k*z0)``.
    ``kind="exponential"`` is the radial profile ``exp(-r/beta0)``.
    """

    beta0: float
    z0: float = math.inf
    kind: str = "gaussian"

    def __post_init__(self):
        if not self.beta0 > 0:
            raise ValueError(f"beta0 must be positive, got {self.beta0}")
        if self.z0 == 0 or math.isnan(self.z0):
            raise ValueError("z0 must be nonzero")
        if self.kind not in ("gaussian", "exponential"):
            raise ValueError(f"unknown source kind {self.kind!r}")


def gaussian_envelope(r, z, src: GaussianSource, k: float):
    """Point-source Gaussian beam ``A/(1+i*t) * exp(i*k*z - r**2/(beta**2*(1+i*t)))``.

    Here ``t = 2*z/(beta**2*k)``, ``1/beta**2 = 1/beta0**2 + i*k/(2*z0)`` and
    ``A = exp(i*k*z0)``.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise GeometryError("radius must be nonnegative")
    z = np.asarray(z, dtype=float)
    if math.isinf(src.z0):
        inv_beta2 = 1.0 / src.beta0**2 + 0j
        amp = 1.0 + 0j
    else:
        inv_beta2 = 1.0 / src.beta0**2 + 1j * k / (2.0 * src.z0)
        amp = np.exp(1j * k * src.z0)
    denom = 1.0 + 1j * (2.0 * z * inv_beta2 / k)
    if np.any(denom == 0):
        raise ZeroDivisionError("1 + i*theta vanishes")
    u = amp / denom * np.exp(1j * k * z - r * r * inv_beta2 / denom)
    return u[()] if u.ndim == 0 else u


def exponential_profile(r, beta0: float):
    """Radial profile ``exp(-r/beta0)``."""
    return np.exp(-np.asarray(r, dtype=float) / beta0) + 0j


def paraxial_gaussian(r, z, beta0: float, kappa: float):
    """Exact Gaussian-beam solution of ``2i*kappa*u_z = u_rr + u_r/r``.

    Waist ``beta0`` at ``z = 0``; ``u = exp(-r**2/(beta0**2*q))/q`` with
    ``q = 1 - 2i*z/(kappa*beta0**2)``.
    """
    r = np.asarray(r, dtype=float)
    q = 1.0 - 2j * np.asarray(z, dtype=float) / (kappa * beta0 * beta0)
    u = np.exp(-r * r / (beta0 * beta0 * q)) / q
    return u[()] if np.ndim(u) == 0 else u


def lens_entry_profile(geom: LensGeometry, src: GaussianSource, k: float, M: int):
    """Source sampled on the curved entry surface at ``r_m = m*R1/M``.

    This is the zeta = 0 initial vector of the in-lens solve.
    """
    if M < 2:
        raise ValueError(f"need M >= 2, got {M}")
    r = np.arange(M + 1) * (geom.R1 / M)
    if src.kind == "exponential":
        return exponential_profile(r, src.beta0)
    return gaussian_envelope(r, geom.entry_surface(r), src, k)
