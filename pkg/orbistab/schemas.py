"""Documents written next to the numerical artifacts."""

from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, computed_field


class Document(BaseModel):

    model_config = ConfigDict(extra="forbid")


class Sidecar(Document):
    """Provenance of one artifact, stored as ``<artifact>.meta.json``.

    :attr tool_version: Version of ``orbistab`` that wrote the artifact.
    :attr config_hash: ``RunConfig.config_hash()`` of the run.
    :attr command: Subcommand that produced the artifact.
    :attr artifact: File name of the artifact.
    """

    tool_version: str
    config_hash: str
    command: str
    artifact: str


class Multiplier(Document):

    real: float
    imag: float
    modulus: float


class RiccatiSummary(Document):
    """Outcome of a certified Riccati solve."""

    residual_max: float
    residual_tol: float
    min_eigenvalue: float
    fourier_order: int
    collocation_points: int
    outer_iterations: int
    multipliers: List[Multiplier]
    neutral_index: Optional[int]
    neutral_tangent_angle: Optional[float]
    config: Dict[str, Any]


class SimulationSummary(Document):

    controller: str
    integrator: str
    samples: int
    period: float
    convergence_time: Optional[float]
    final_norm_x_perp: float
    max_norm_x_perp: float
    seed: int


class VerifyCheck(Document):
    """One property of the battery run by ``orbistab verify``.

    :attr comparison: How ``measured`` is compared with ``threshold``.
    """

    name: str
    measured: float
    threshold: float
    comparison: Literal["<", "<=", ">", ">=", "=="]
    passed: bool
    detail: Optional[str] = None


class VerifyReport(Document):

    config_hash: str
    checks: List[VerifyCheck]

    @computed_field  # type: ignore[misc]
    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def failures(self) -> List[VerifyCheck]:
        return [check for check in self.checks if not check.passed]
