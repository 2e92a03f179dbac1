"""Exception hierarchy shared by all modules."""


class SpectrumError(Exception):
    """Base class for errors raised by this package."""


class CapacityError(SpectrumError, ValueError):
    """A requested size exceeds a documented implementation cap."""


class DegenerateMeshError(SpectrumError, ValueError):
    """Mesh or submesh has no usable geometry (empty interior, too few cells)."""


class AssemblyError(SpectrumError, ValueError):
    """Finite element assembly failed, e.g. on a zero-area triangle."""


class ConfigurationError(SpectrumError, ValueError):
    """Inconsistent parameters: infeasible constraint set, bad flags, bad config."""


class ConvergenceError(SpectrumError, RuntimeError):
    """Iterative solver did not converge.

    Attributes
    ----------
    residuals : ndarray or None
        Best residuals reached before giving up.
    iterate : object or None
        Optional state (e.g. the density) at which the failure happened.
    """

    def __init__(self, message, residuals=None, iterate=None):
        super().__init__(message)
        self.residuals = residuals
        self.iterate = iterate


class StaleEigenpairError(SpectrumError, ValueError):
    """Eigenpair residual is too large to differentiate through."""
