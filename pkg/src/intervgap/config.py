"""Analysis and data-generator configuration files (YAML, version 1).

An analysis config names a data file, variable roles, the estimand queries
and the simulation settings.  Parsing is strict: unknown keys are errors,
so that a typo never silently falls back to a default.  ``dump`` followed
by ``parse`` returns an equal config.
"""

from __future__ import annotations

from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticError, model_validator

from .data import (
    ASSUMPTION_FLAGS,
    AssumptionLedger,
    CounterfactualGroup,
    CounterfactualQuery,
    FixConstant,
    FixGroupMean,
    Filter,
    InterventionSpec,
    ObservedGroup,
    Pooled,
    RoleMap,
)
from .errors import SchemaError
from .gcomp import FitOptions, GcompSettings, Sweep

VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# -- intervention sources ------------------------------------------------------


class ObservedGroupSource(_Strict):
    type: Literal["observed_group"]
    group: Literal[0, 1]
    given: tuple[str, ...] = ("C",)

    def build(self):
        return ObservedGroup(self.group, self.given)


class CounterfactualGroupSource(_Strict):
    type: Literal["counterfactual_group"]
    group: Literal[0, 1]
    given: tuple[str, ...] = ("C",)

    def build(self):
        return CounterfactualGroup(self.group, self.given)


class PooledSource(_Strict):
    type: Literal["pooled"]
    given: tuple[str, ...] = ()

    def build(self):
        return Pooled(self.given)


class FixConstantSource(_Strict):
    type: Literal["fix_constant"]
    values: dict[str, float]

    def build(self):
        return FixConstant(self.values)


class FixGroupMeanSource(_Strict):
    type: Literal["fix_group_mean"]
    group: Literal[0, 1]

    def build(self):
        return FixGroupMean(self.group)


SourceConfig = Annotated[
    Union[ObservedGroupSource, CounterfactualGroupSource, PooledSource,
          FixConstantSource, FixGroupMeanSource],
    Field(discriminator="type"),
]


# -- queries ------------------------------------------------------------------


class QueryConfig(_Strict):
    """One query, or a single-mediator sweep when ``sweep`` lists mediators."""

    name: str
    kind: str
    population: Literal["exposed", "control", "whole"] = "exposed"
    exposure_set_to: Optional[Literal[0, 1]] = None
    target: Optional[tuple[str, ...]] = None
    source: Optional[SourceConfig] = None
    sweep: Optional[tuple[str, ...]] = None

    @model_validator(mode="after")
    def _shape(self):
        if self.sweep is not None:
            if self.target is not None:
                raise ValueError(f"query {self.name!r}: give either target or sweep, not both")
            if not self.sweep:
                raise ValueError(f"query {self.name!r}: sweep lists no mediators")
            if self.source is None:
                raise ValueError(f"query {self.name!r}: a sweep needs a source")
        if (self.target is None) != (self.source is None) and self.sweep is None:
            raise ValueError(f"query {self.name!r}: target and source go together")
        return self

    def build(self):
        """A CounterfactualQuery or a Sweep."""
        if self.sweep is not None:
            iv = InterventionSpec(self.sweep[:1], self.source.build())
            template = CounterfactualQuery(self.kind, iv, self.population,
                                           self.exposure_set_to, self.name)
            return Sweep(self.name, template, tuple(self.sweep))
        iv = None if self.target is None else InterventionSpec(self.target, self.source.build())
        return CounterfactualQuery(self.kind, iv, self.population, self.exposure_set_to, self.name)


class DecompositionConfig(_Strict):
    name: str
    flavor: Literal["classic", "ob_m"] = "ob_m"
    mediator: str


# -- the rest -------------------------------------------------------------------


class FilterConfig(_Strict):
    column: str
    op: Literal["==", "!=", "<", "<=", ">", ">="]
    value: float

    def build(self) -> Filter:
        return Filter(self.column, self.op, self.value)


class DataConfig(_Strict):
    path: str
    filters: tuple[FilterConfig, ...] = ()


class RolesConfig(_Strict):
    exposure: str
    outcome: str
    mediators: tuple[str, ...]
    covariates: tuple[str, ...] = ()
    confounders: tuple[str, ...] = ()
    binary: Optional[tuple[str, ...]] = None

    def build(self) -> RoleMap:
        return RoleMap(self.exposure, self.outcome, self.mediators, self.covariates,
                       self.confounders, self.binary)


class SettingsConfig(_Strict):
    z_draws: int = Field(300, ge=1)
    b_bootstrap: int = Field(1000, ge=0)
    workers: int = Field(1, ge=1)
    stochastic_outcome: bool = True
    interactions: Literal["all", "none"] = "all"
    screen: Optional[int] = Field(None, ge=1)
    positivity_threshold: float = Field(0.01, ge=0.0, le=1.0)
    failure_threshold: float = Field(0.02, ge=0.0, le=1.0)
    chunk_rows: int = Field(100_000, ge=1)

    def build(self, seed: int, workers: int | None = None) -> GcompSettings:
        return GcompSettings(
            z_draws=self.z_draws, b_bootstrap=self.b_bootstrap, seed=seed,
            workers=workers or self.workers, stochastic_outcome=self.stochastic_outcome,
            fit=FitOptions(self.interactions, self.screen),
            positivity_threshold=self.positivity_threshold,
            failure_threshold=self.failure_threshold, chunk_rows=self.chunk_rows,
        )


class OutputConfig(_Strict):
    dir: str = "out"
    formats: tuple[Literal["json", "tsv"], ...] = ("json", "tsv")


class AnalysisConfig(_Strict):
    """Top-level analysis config."""

    version: Literal[1]
    seed: int = Field(ge=0)
    data: DataConfig
    roles: RolesConfig
    settings: SettingsConfig = SettingsConfig()
    assumptions: tuple[str, ...] = ()
    queries: tuple[QueryConfig, ...] = ()
    decompositions: tuple[DecompositionConfig, ...] = ()
    output: OutputConfig = OutputConfig()

    @model_validator(mode="after")
    def _names(self):
        names = [q.name for q in self.queries] + [d.name for d in self.decompositions]
        dup = sorted({n for n in names if names.count(n) > 1})
        if dup:
            raise ValueError(f"duplicate query names: {dup}")
        unknown = [a for a in self.assumptions if a not in ASSUMPTION_FLAGS]
        if unknown:
            raise ValueError(f"unknown assumption flags {unknown}; known: {list(ASSUMPTION_FLAGS)}")
        return self

    def ledger(self) -> AssumptionLedger:
        return AssumptionLedger.from_flags(self.assumptions)

    def data_path(self, base: Path | None = None) -> Path:
        p = Path(self.data.path)
        return p if p.is_absolute() or base is None else base / p


# -- data generators ----------------------------------------------------------------


class EquationConfig(_Strict):
    name: str
    role: Literal["C", "A", "L", "M", "Y"]
    family: Literal["logistic", "linear"] = "logistic"
    intercept: float = 0.0
    coefs: dict[str, float] = {}
    sd: float = Field(1.0, gt=0.0)


class DgpConfig(_Strict):
    """Data-generator config for ``simulate``.

    ``equations`` describes a parametric model; ``scm`` a discrete model
    in the :meth:`DiscreteSCM.to_dict` layout.  ``truth`` lists queries
    whose true values go to the sidecar file.
    """

    version: Literal[1]
    seed: int = Field(0, ge=0)
    equations: Optional[tuple[EquationConfig, ...]] = None
    scm: Optional[dict] = None
    truth: tuple[QueryConfig, ...] = ()

    @model_validator(mode="after")
    def _one_model(self):
        if (self.equations is None) == (self.scm is None):
            raise ValueError("give exactly one of equations or scm")
        return self

    def build(self):
        from .oracle import DiscreteSCM, ParametricDGP
        from .oracle.dgp import Equation

        if self.scm is not None:
            return DiscreteSCM.from_dict(self.scm)
        return ParametricDGP([Equation(**e.model_dump()) for e in self.equations])


# -- io --------------------------------------------------------------------------


def _format_errors(exc: PydanticError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)


def _load(cls, source):
    # YAML text always spans lines; a one-line string is a path
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise SchemaError(f"cannot read config {source}: {exc}") from None
    else:
        text = str(source)
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SchemaError(f"not valid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise SchemaError("config must be a mapping")
    try:
        return cls.model_validate(raw)
    except PydanticError as exc:
        raise SchemaError(_format_errors(exc)) from None


def parse(source) -> AnalysisConfig:
    """Parse an analysis config from a path or YAML text.

    Raises
    ------
    SchemaError
        Invalid YAML or a schema violation; the message lists every problem.
    """
    return _load(AnalysisConfig, source)


def parse_dgp(source) -> DgpConfig:
    return _load(DgpConfig, source)


def dump(cfg: BaseModel) -> str:
    """YAML text that :func:`parse` turns back into an equal config."""
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)
