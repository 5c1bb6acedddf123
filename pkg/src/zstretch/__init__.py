"""Paraxial beam propagation through a plano-convex lens on a z-stretched grid."""

from .geometry import (
    GeometryError,
    LensGeometry,
    SingularityError,
    StretchEvaluation,
    derive_aperture,
    dropped_term_bound,
    gamma,
    stretch_maps,
    z_inverse,
    zeta_forward,
)
from .physics import (
    GaussianSource,
    OpticalParameters,
    gaussian_envelope,
    lens_entry_profile,
    wavenumbers,
)

__version__ = "0.1.0"

__all__ = [
    "GaussianSource",
    "GeometryError",
    "LensGeometry",
    "OpticalParameters",
    "SingularityError",
    "StretchEvaluation",
    "derive_aperture",
    "dropped_term_bound",
    "gamma",
    "gaussian_envelope",
    "lens_entry_profile",
    "stretch_maps",
    "wavenumbers",
    "z_inverse",
    "zeta_forward",
]
