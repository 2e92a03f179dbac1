"""Maximize Laplace eigenvalues over conformal densities on triangulated surfaces."""
from ._version import __version__
from .assembly import DensityField, assemble_mass, assemble_stiffness
from .certify import (
    HarmonicMapCertificate,
    disk_dirichlet_spectrum,
    harmonic_map_certificate,
    sphere_spectrum,
    torus_spectrum,
)
from .concentration import (
    MeasureDecomposition,
    check_quantization,
    detect_atoms,
    mobius_normalize,
    singular_spectrum,
)
from .config import RunConfig, load_config, parse_config
from .density_opt import (
    FeasibleSet,
    SpectralObjective,
    ascend,
    continuation,
    eigenvalue_derivative,
    project_to_feasible,
)
from .eigensolver import SpectralResult, solve_dirichlet, solve_smallest
from .estimators import AtomDetector, ConformalEigenvalueMaximizer
from .exceptions import (
    AssemblyError,
    CapacityError,
    ConfigurationError,
    ConvergenceError,
    DegenerateMeshError,
    SpectrumError,
    StaleEigenpairError,
)
from .surface import (
    FlatTorus,
    RoundSphere,
    TriangleMesh,
    build_sphere_mesh,
    build_torus_mesh,
    geodesic_ball,
)

__all__ = [name for name in dir() if not name.startswith("_")] + ["__version__"]
