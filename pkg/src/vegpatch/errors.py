"""Exception and warning types shared across the package."""


class VegpatchError(Exception):
    """Base class for all package errors."""


class BadGrid(VegpatchError):
    """Grid construction with invalid half-width or node count."""


class NonIntegrable(VegpatchError):
    """Kernel moment quadrature failed to converge within budget."""


class DomainTooSmall(VegpatchError):
    """No grid node is far enough from the boundary for the diagnostic."""


class SingularSystem(VegpatchError):
    """Tridiagonal elimination hit a zero pivot."""


class Blowup(VegpatchError):
    """Time integration produced a non-finite or huge value."""

    def __init__(self, step: int, node: int, value: float):
        self.step = step
        self.node = node
        self.value = value
        super().__init__(f"blowup at step {step}, node {node}: value {value!r}")


class EnvelopeViolated(VegpatchError):
    """Simulated biomass exceeded the closed-form decay envelope."""

    def __init__(self, t: float, margin: float):
        self.t = t
        self.margin = margin
        super().__init__(f"decay envelope violated at t={t:.6g} by {margin:.3e}")


class NewtonDiverged(VegpatchError):
    """Newton corrector exceeded its iteration cap or blew up."""


class SingularJacobian(VegpatchError):
    """Direct solve of the Newton system failed."""


class ConfigError(VegpatchError):
    """Invalid or incomplete run configuration."""


class UnstableTimestep(ConfigError):
    """Requested explicit time step violates the stability guard."""


class ResolutionWarning(UserWarning):
    """Grid spacing too coarse to resolve the dispersal kernel."""
