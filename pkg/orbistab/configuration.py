from hashlib import sha256
from json import dumps
from os import path
from typing import Any, Dict, List, Literal, Optional, Tuple, Type, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, FiniteFloat, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict

from .errors import ConfigurationError
from .mechanics import MechanicalSystem, build_system
from .orbit import OrbitParameterization, build_template
from .projection import ProjectionOperator
from .riccati import SolverConfig
from .sim import SimConfig

REFERENCE_CONFIG = path.realpath(path.join(path.dirname(__file__), "reference.json"))

# Interface names accepted next to the canonical ones.
TEMPLATE_ALIASES = {"eq15": "cosine_swing"}
VERSION_ALIAS = "spec_version"

Matrix = List[List[FiniteFloat]]


def _positive_definite(value: Optional[Matrix], name: str) -> Optional[Matrix]:

    if value is None:
        return value
    matrix = np.asarray(value, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"`{name}` must be a square matrix.")
    if not np.allclose(matrix, matrix.T, atol=1e-12):
        raise ValueError(f"`{name}` must be symmetric.")
    if np.min(np.linalg.eigvalsh(matrix)) <= 0:
        raise ValueError(f"`{name}` must be positive definite.")
    return value


class Section(BaseModel):

    model_config = ConfigDict(extra="forbid")


class RunConfig(BaseSettings):
    """Settings of one planning, stabilization and simulation run.

    Values come from a JSON (or YAML) file and may be overridden by environment
    variables such as ``ORBISTAB_RICCATI__KAPPA=0.2``.

    :attr schema_version: Always ``1``; also accepted as ``spec_version``.
    :attr system: Mechanical system.
    :attr orbit: Orbit template and velocity profile grid.
    :attr projection: Projection operator.
    :attr linearization: Feedforward choice and grid of the transverse linearization.
    :attr riccati: Weights and discretization of the Riccati solve.
    :attr simulation: Initial state, integrator and measurement noise.
    """

    model_config = SettingsConfigDict(env_prefix="ORBISTAB_", env_nested_delimiter="__", extra="forbid")

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:

        return env_settings, init_settings

    class SystemSection(Section):
        """:attr name: Built-in system.
        :attr parameters: Keyword arguments of the system constructor, e.g. ``g``.
        """

        name: Literal["cart_pendulum"] = "cart_pendulum"
        parameters: Dict[str, FiniteFloat] = Field(default_factory=dict)

    class OrbitSection(Section):
        """:attr template: ``cosine_swing``, also accepted as ``eq15``.
        :attr a2: Pendulum amplitude of the cosine swing.
        :attr gain: Cart amplitude coefficient.
        :attr grid: Nodes of the velocity profile.
        """

        template: Literal["cosine_swing"] = "cosine_swing"
        a2: FiniteFloat = 0.1129
        gain: FiniteFloat = 1.5
        grid: int = Field(default=2048, ge=16)

        @field_validator("template", mode="before")
        @classmethod
        def resolve_alias(cls, value):
            return TEMPLATE_ALIASES.get(value, value) if isinstance(value, str) else value

    class ProjectionSection(Section):
        """:attr weight: Weight of the ``min_distance`` condition, identity when omitted."""

        variant: Literal["implicit_phase", "min_distance"] = "implicit_phase"
        max_iter: int = Field(default=50, ge=1)
        tol: FiniteFloat = Field(default=1e-12, gt=0)
        weight: Optional[Matrix] = None

        @field_validator("weight")
        @classmethod
        def check_weight(cls, value):
            return _positive_definite(value, "weight")

    class LinearizationSection(Section):

        feedforward: Literal["on_orbit", "mixed", "full"] = "mixed"
        grid: int = Field(default=512, ge=16)

    class RiccatiSection(Section):
        """:attr Q: State weight, identity when omitted.
        :attr Gamma: Input weight, ``0.1 I`` when omitted.
        :attr collocation_points: ``4 N + 1`` when omitted.
        """

        Q: Optional[Matrix] = None
        Gamma: Optional[Matrix] = None
        kappa: FiniteFloat = Field(default=0.1, ge=0)
        fourier_order: int = Field(default=40, ge=1)
        collocation_points: Optional[int] = None
        psd_margin: FiniteFloat = Field(default=0.0, ge=0)
        residual_tol: FiniteFloat = Field(default=2e-4, gt=0)
        max_outer_iterations: int = Field(default=4, ge=1)
        max_evaluations: int = Field(default=200, ge=1)
        sweep_periods: int = Field(default=10, ge=0)

        @field_validator("Q", "Gamma")
        @classmethod
        def check_weights(cls, value, info):
            return _positive_definite(value, info.field_name)

    class SimulationSection(Section):
        """:attr noise_std: Measurement noise, one level or one per state channel.
        :attr seed: Key of the Philox noise generator.
        """

        initial_state: List[FiniteFloat] = Field(default_factory=lambda: [0.1, 0.4, -0.1, -0.2])
        duration: FiniteFloat = Field(default=20.0, gt=0)
        step: FiniteFloat = Field(default=1e-3, gt=0)
        integrator: Literal["rk4", "rk45"] = "rk4"
        noise_std: Union[FiniteFloat, List[FiniteFloat]] = 1e-3
        seed: int = Field(default=0, ge=0, lt=2**64)
        controller: Literal["closed_loop", "open_loop", "none"] = "closed_loop"
        sample_interval: FiniteFloat = Field(default=1e-2, gt=0)
        convergence_threshold: FiniteFloat = Field(default=0.01, gt=0)

    schema_version: Literal[1] = 1
    system: SystemSection = Field(default_factory=SystemSection)
    orbit: OrbitSection = Field(default_factory=OrbitSection)
    projection: ProjectionSection = Field(default_factory=ProjectionSection)
    linearization: LinearizationSection = Field(default_factory=LinearizationSection)
    riccati: RiccatiSection = Field(default_factory=RiccatiSection)
    simulation: SimulationSection = Field(default_factory=SimulationSection)

    @model_validator(mode="before")
    @classmethod
    def resolve_version_alias(cls, data):
        if not isinstance(data, dict) or VERSION_ALIAS not in data:
            return data
        data = dict(data)
        version = data.pop(VERSION_ALIAS)
        if data.setdefault("schema_version", version) != version:
            raise ValueError(f"`{VERSION_ALIAS}` {version} contradicts `schema_version` {data['schema_version']}.")
        return data

    @classmethod
    def load(cls, filepath: str) -> "RunConfig":
        """Read and validate a configuration file."""

        try:
            with open(filepath, "r") as file:
                data = yaml.safe_load(file)
        except (OSError, yaml.YAMLError) as err:
            raise ConfigurationError(f"Cannot read configuration `{filepath}`: {err}") from err
        if not isinstance(data, dict):
            raise ConfigurationError(f"Configuration `{filepath}` must hold a mapping.")

        try:
            return cls(**data)
        except ValidationError as err:
            raise ConfigurationError(f"Invalid configuration `{filepath}`: {err}") from err

    @classmethod
    def reference(cls) -> "RunConfig":
        return cls.load(REFERENCE_CONFIG)

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON of the validated settings."""

        canonical = dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return sha256(canonical.encode()).hexdigest()

    def with_seed(self, seed: Optional[int]) -> "RunConfig":
        if seed is None:
            return self
        return self.model_copy(update={"simulation": self.simulation.model_copy(update={"seed": seed})})

    # Builders
    def make_system(self) -> MechanicalSystem:
        return build_system(self.system.name, **self.system.parameters)

    def make_template(self):
        return build_template(self.orbit.template, a2=self.orbit.a2, gain=self.orbit.gain)

    def make_projection(self, orbit: OrbitParameterization) -> ProjectionOperator:
        weight = None if self.projection.weight is None else np.asarray(self.projection.weight)
        return ProjectionOperator(
            orbit=orbit, variant=self.projection.variant, max_iter=self.projection.max_iter, tol=self.projection.tol, weight=weight
        )

    def make_solver(self) -> SolverConfig:
        section: Dict[str, Any] = self.riccati.model_dump()
        for key in ("Q", "Gamma"):
            section[key] = None if section[key] is None else np.asarray(section[key], dtype=float)
        return SolverConfig(**section)

    def make_simulation(self) -> SimConfig:
        return SimConfig(feedforward=self.linearization.feedforward, **self.simulation.model_dump())
