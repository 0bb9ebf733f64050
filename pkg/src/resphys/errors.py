"""Exception hierarchy shared by every resphys module.

All errors raised by the library derive from :class:`ResPhysError`, so callers
(the CLI in particular) can catch one type and still get a precise class name
for machine-readable reporting.
"""

from __future__ import annotations


class ResPhysError(Exception):
    """Base class for all library errors."""


class MeshError(ResPhysError, ValueError):
    """Mesh construction or mesh invariant violation."""


class MaterialError(ResPhysError, ValueError):
    """Material parameters outside their physical range."""


class DegenerateElementError(ResPhysError):
    """Elements with det F <= 0 at some quadrature point."""

    def __init__(self, elements: list[int]) -> None:
        self.elements = elements
        super().__init__(f"degenerate elements (det F <= 0): {elements}")

    def __reduce__(self):
        return type(self), (self.elements,)


class SimulationError(ResPhysError):
    """Non-finite state or singular system during a simulation step."""


class NewtonConvergenceError(SimulationError):
    def __init__(self, residual: float, iterations: int) -> None:
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"Newton did not converge in {iterations} iterations (last residual {residual:.3e})"
        )

    def __reduce__(self):
        return type(self), (self.residual, self.iterations)


class RolloutError(SimulationError):
    def __init__(self, index: int, cause: Exception) -> None:
        self.index = index
        self.cause = cause
        super().__init__(f"rollout failed at step {index}: {cause}")

    def __reduce__(self):
        return type(self), (self.index, self.cause)


class MarkerError(ResPhysError, ValueError):
    """Marker attachment failure or degenerate marker face."""


class RegistrationError(ResPhysError, ValueError):
    """Point sets that do not determine a rigid transform."""


class FitError(ResPhysError):
    def __init__(self, message: str, timestep: int | None = None) -> None:
        self.timestep = timestep
        self.message = message
        prefix = f"timestep {timestep}: " if timestep is not None else ""
        super().__init__(prefix + message)

    def __reduce__(self):
        return type(self), (self.message, self.timestep)


class TrainingError(ResPhysError):
    def __init__(self, message: str, epoch: int, batch: int | None = None) -> None:
        self.message = message
        self.epoch = epoch
        self.batch = batch
        where = f"epoch {epoch}" + (f", batch {batch}" if batch is not None else "")
        super().__init__(f"{where}: {message}")

    def __reduce__(self):
        return type(self), (self.message, self.epoch, self.batch)


class SysIdError(ResPhysError):
    """System identification could not evaluate any finite loss."""


class ArtifactError(ResPhysError, FileNotFoundError):
    def __init__(self, artifact: str) -> None:
        self.artifact = artifact
        super().__init__(f"missing artifact: {artifact}")

    def __reduce__(self):
        return type(self), (self.artifact,)


class ContainerError(ResPhysError, ValueError):
    """Malformed on-disk container or manifest."""


class ConfigError(ResPhysError, ValueError):
    """Run settings that cannot be carried out (empty search budget, impossible splits)."""
