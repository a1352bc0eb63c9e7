"""Exceptions raised by ``orbistab``.

Every error carries an ``exit_code`` so that the command line frontend can map
failures onto its documented exit codes without inspecting messages, and a
``tag`` used as the prefix of the one line message printed on standard error.

:attr exit_code: Process exit code used by ``orbistab.__main__``.
:attr tag: Kebab case identifier of the failure.
"""

from typing import Any, Optional


class OrbistabError(Exception):

    exit_code: int = 1
    tag: str = "error"

    def __str__(self) -> str:
        return f"{self.tag}: {super().__str__()}"


# Configuration and IO (exit 2).
class ConfigurationError(OrbistabError):

    exit_code = 2
    tag = "config-error"


class MissingArtifactError(OrbistabError):

    exit_code = 2
    tag = "missing-artifact"


# Infeasibility (exit 3).
class InfeasibleOrbitError(OrbistabError):

    exit_code = 3
    tag = "infeasible-orbit"


class InconsistentParameterizationError(OrbistabError):

    exit_code = 3
    tag = "inconsistent-parameterization"


class NotApplicableError(OrbistabError):

    exit_code = 3
    tag = "not-applicable"


# Verification (exit 4).
class NoCertificateError(OrbistabError):
    """The Riccati residual stagnated above tolerance.

    :attr best_residual: Smallest maximum nodal residual reached.
    """

    exit_code = 4
    tag = "no-certificate"

    def __init__(self, message: str, best_residual: float):
        super().__init__(message)
        self.best_residual = best_residual


class InfeasiblePsdError(OrbistabError):

    exit_code = 4
    tag = "infeasible-psd"


class VerificationFailedError(OrbistabError):

    exit_code = 4
    tag = "verification-failed"


class DecreaseViolatedError(OrbistabError):

    exit_code = 4
    tag = "decrease-violated"


# Numerics (exit 5).
class SingularDynamicsError(OrbistabError):

    exit_code = 5
    tag = "singular-dynamics"


class NumericBlowupError(OrbistabError):

    exit_code = 5
    tag = "numeric-blowup"

    def __init__(self, message: str, trace: Optional[Any] = None):
        super().__init__(message)
        self.trace = trace


class IntegrationError(OrbistabError):

    exit_code = 5
    tag = "integration-failure"


class OutsideNeighborhoodError(OrbistabError):
    """The projection iteration did not converge.

    :attr best_residual: Smallest absolute residual of the scalar condition.
    """

    exit_code = 5
    tag = "outside-neighborhood"

    def __init__(self, message: str, best_residual: float):
        super().__init__(message)
        self.best_residual = best_residual


class ImplicitFunctionError(OrbistabError):

    exit_code = 5
    tag = "implicit-function-violation"


class EscapedTubeError(OrbistabError):
    """The state left the projection's neighbourhood during a simulation.

    :attr trace: The ``SimulationTrace`` recorded up to the failure.
    """

    exit_code = 5
    tag = "escaped-tube"

    def __init__(self, message: str, trace: Optional[Any] = None):
        super().__init__(message)
        self.trace = trace
