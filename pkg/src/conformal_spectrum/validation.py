"""Input checks shared by the estimators and the command line."""
from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array

from .assembly import DensityField
from .exceptions import ConfigurationError
from .surface import TriangleMesh


def check_mesh(mesh) -> TriangleMesh:
    if not isinstance(mesh, TriangleMesh):
        raise TypeError(f"expected a TriangleMesh, got {type(mesh).__name__}")
    if mesh.n_triangles == 0:
        raise ValueError("mesh has no triangles")
    return mesh


def check_density(density, mesh: TriangleMesh) -> np.ndarray:
    """Per-vertex density values as a finite 1-D float array matching ``mesh``."""
    values = density.values if isinstance(density, DensityField) else density
    values = check_array(values, ensure_2d=False, dtype=float, input_name="density")
    if values.ndim != 1 or values.shape[0] != mesh.n_vertices:
        raise ValueError(
            f"density must have shape ({mesh.n_vertices},), got {values.shape}"
        )
    return values


def check_stages(stages, mesh: TriangleMesh):
    """Normalize ``(cap, values)`` pairs; caps must increase strictly."""
    if stages is None:
        return None
    out = [(float(c), check_density(v, mesh)) for c, v in stages]
    caps = [c for c, _ in out]
    if any(b <= a for a, b in zip(caps, caps[1:])):
        raise ConfigurationError("stage caps must be strictly increasing")
    return out


def check_caps(caps) -> list:
    caps = [float(c) for c in np.atleast_1d(caps)]
    if not caps:
        raise ConfigurationError("cap schedule is empty")
    if any(not np.isfinite(c) or c <= 0 for c in caps):
        raise ConfigurationError("caps must be positive and finite")
    if any(b <= a for a, b in zip(caps, caps[1:])):
        raise ConfigurationError("cap schedule must be strictly increasing")
    return caps


def check_index(k) -> int:
    if not isinstance(k, numbers.Integral) or isinstance(k, bool) or k < 1:
        raise ConfigurationError(f"eigenvalue index k must be an integer >= 1, got {k!r}")
    return int(k)


def check_positive(name: str, value) -> float:
    if not isinstance(value, numbers.Real) or isinstance(value, bool) or not value > 0:
        raise ConfigurationError(f"{name} must be positive, got {value!r}")
    return float(value)
