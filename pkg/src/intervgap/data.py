"""Tabular sample, variable roles and the intervention vocabulary.

Everything here is immutable once built.  Estimators receive a
:class:`Dataset` plus a :class:`RoleMap` and describe what they want to
simulate with :class:`InterventionSpec` and :class:`CounterfactualQuery`.
"""

from __future__ import annotations

import csv
import logging
import math
import operator
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DegenerateGroupError, SchemaError, ValidationError

logger = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "na", "nan", ".", "null", "none"})


# ---------------------------------------------------------------------------
# Dataset


@dataclass(frozen=True)
class Dataset:
    """Column store of float64 vectors sharing one length.

    Parameters
    ----------
    columns : mapping of str to array_like
        Named vectors.  They are copied, cast to float64 and made read-only.
    dropped_count : int
        Rows removed during ingestion (gaps or failed filters).
    """

    columns: Mapping[str, np.ndarray]
    dropped_count: int = 0

    def __post_init__(self):
        cols = {}
        n = None
        for name, values in self.columns.items():
            arr = np.array(values, dtype=np.float64, copy=True).reshape(-1)
            if n is None:
                n = arr.shape[0]
            elif arr.shape[0] != n:
                raise ValidationError(
                    f"column {name!r} has length {arr.shape[0]}, expected {n}"
                )
            if not np.all(np.isfinite(arr)):
                bad = int(np.flatnonzero(~np.isfinite(arr))[0])
                raise ValidationError(f"column {name!r} has a missing value", row=bad)
            arr.flags.writeable = False
            cols[name] = arr
        if not n:
            raise ValidationError("dataset has no rows")
        object.__setattr__(self, "columns", MappingProxyType(cols))

    @property
    def n_rows(self) -> int:
        return next(iter(self.columns.values())).shape[0]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.columns)

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise SchemaError(f"unknown column {name!r}") from None

    def __contains__(self, name) -> bool:
        return name in self.columns

    def take(self, index) -> "Dataset":
        """Rows selected by an integer index array or boolean mask."""
        index = np.asarray(index)
        return Dataset({k: v[index] for k, v in self.columns.items()})

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        """Stack the named columns into an (n_rows, len(names)) array."""
        if not names:
            return np.empty((self.n_rows, 0))
        return np.column_stack([self[n] for n in names])


# ---------------------------------------------------------------------------
# Roles


@dataclass(frozen=True)
class RoleMap:
    """Variable roles.  ``mediators`` is the working order.

    ``binary`` lists the columns (other than the exposure) that hold 0/1
    values and therefore get logistic models.  ``None`` means "infer from
    the data" via :func:`resolve_binary`.
    """

    exposure: str
    outcome: str
    mediators: tuple[str, ...]
    covariates: tuple[str, ...] = ()
    confounders: tuple[str, ...] = ()
    binary: tuple[str, ...] | None = None

    def __post_init__(self):
        for name in ("mediators", "covariates", "confounders"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.binary is not None:
            object.__setattr__(self, "binary", tuple(self.binary))
        if not self.mediators:
            raise SchemaError("at least one mediator is required")
        seen = {}
        for role, names in (
            ("exposure", (self.exposure,)),
            ("outcome", (self.outcome,)),
            ("covariate", self.covariates),
            ("confounder", self.confounders),
            ("mediator", self.mediators),
        ):
            for n in names:
                if n in seen:
                    raise SchemaError(
                        f"column {n!r} is declared both as {seen[n]} and as {role}"
                    )
                seen[n] = role
        if self.binary is not None:
            unknown = [b for b in self.binary if b not in seen]
            if unknown:
                raise SchemaError(f"binary columns without a role: {unknown}")

    @property
    def all_columns(self) -> tuple[str, ...]:
        return (
            (self.exposure, self.outcome)
            + self.covariates
            + self.confounders
            + self.mediators
        )

    @property
    def base(self) -> tuple[str, ...]:
        """Pre-mediator regressors, C then L."""
        return self.covariates + self.confounders

    def is_binary(self, name: str) -> bool:
        if name == self.exposure:
            return True
        return self.binary is not None and name in self.binary

    def check_columns(self, available: Iterable[str]) -> None:
        available = set(available)
        missing = [c for c in self.all_columns if c not in available]
        if missing:
            raise SchemaError(f"columns not found: {missing}")


def resolve_binary(roles: RoleMap, data: Dataset) -> RoleMap:
    """Fill ``roles.binary`` from the data when it was left as ``None``."""
    if roles.binary is not None:
        return roles
    found = []
    for name in roles.covariates + roles.confounders + roles.mediators + (roles.outcome,):
        v = data[name]
        if np.all((v == 0.0) | (v == 1.0)):
            found.append(name)
    return replace(roles, binary=tuple(found))


# ---------------------------------------------------------------------------
# Ingestion

_COMPARATORS = {
    "==": operator.eq,
    "!=": operator.ne,
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}


@dataclass(frozen=True)
class Filter:
    """Row predicate ``column <op> value``; rows failing it are dropped."""

    column: str
    op: str
    value: float

    def __post_init__(self):
        if self.op not in _COMPARATORS:
            raise SchemaError(f"unknown comparator {self.op!r}")

    def mask(self, values: np.ndarray) -> np.ndarray:
        return _COMPARATORS[self.op](values, self.value)


def _parse_float(token: str) -> float:
    t = token.strip()
    if t.lower() in MISSING_TOKENS:
        return math.nan
    return float(t)


def _split_header(line: str) -> tuple[str, list[str]]:
    delimiter = "\t" if "\t" in line else ","
    return delimiter, [h.strip() for h in next(csv.reader([line], delimiter=delimiter))]


def read_header(path) -> list[str]:
    """Column names of a delimited file; reads the first line only."""
    with open(path, newline="") as fh:
        return _split_header(fh.readline())[1]


def ingest(path, roles: RoleMap, filters: Sequence[Filter] = ()) -> Dataset:
    """Read a comma- or tab-delimited table with a header row.

    Rows with gaps in any needed column, or failing any filter, are dropped
    and counted in ``Dataset.dropped_count``.  Binary-role columns must hold
    only 0 or 1.
    """
    with open(path, newline="") as fh:
        delimiter, header = _split_header(fh.readline())
        wanted = list(dict.fromkeys(roles.all_columns + tuple(f.column for f in filters)))
        missing = [c for c in wanted if c not in header]
        if missing:
            raise SchemaError(f"columns not found in {path}: {missing}")
        pos = [header.index(c) for c in wanted]
        rows = []
        for lineno, rec in enumerate(csv.reader(fh, delimiter=delimiter), start=1):
            if not rec or (len(rec) == 1 and not rec[0].strip()):
                continue
            vals = []
            for c, p in zip(wanted, pos):
                token = rec[p] if p < len(rec) else ""
                try:
                    vals.append(_parse_float(token))
                except ValueError:
                    raise ValidationError(
                        f"non-numeric value {token!r} in column {c!r}", row=lineno
                    ) from None
            rows.append(vals)
    raw = np.array(rows, dtype=np.float64).reshape(len(rows), len(wanted))
    keep = np.all(np.isfinite(raw), axis=1)
    for f in filters:
        with np.errstate(invalid="ignore"):
            keep &= f.mask(raw[:, wanted.index(f.column)])
    for j, c in enumerate(wanted):
        if c in roles.all_columns and roles.is_binary(c):
            col = raw[:, j]
            bad = keep & (col != 0.0) & (col != 1.0)
            if bad.any():
                row = int(np.flatnonzero(bad)[0]) + 1
                raise ValidationError(f"non-binary value {col[row - 1]!r} in {c!r}", row=row)
    dropped = int(raw.shape[0] - keep.sum())
    if dropped:
        logger.info("ingest %s: dropped %d of %d rows", path, dropped, raw.shape[0])
    data = Dataset(
        {c: raw[keep, wanted.index(c)] for c in roles.all_columns},
        dropped_count=dropped,
    )
    return data


def write_table(path, data: Dataset, columns: Sequence[str] | None = None) -> None:
    """Write a comma-delimited table with full float precision."""
    columns = list(columns or data.names)
    mat = data.matrix(columns)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(columns) + "\n")
        for row in mat:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


# ---------------------------------------------------------------------------
# Group summaries


def group_masks(data: Dataset, roles: RoleMap) -> tuple[np.ndarray, np.ndarray]:
    a = data[roles.exposure]
    exposed = a == 1.0
    control = a == 0.0
    if not exposed.any() or not control.any():
        raise DegenerateGroupError(
            f"exposure groups have sizes ({int(exposed.sum())}, {int(control.sum())})"
        )
    return exposed, control


def ordered_mean(values: np.ndarray) -> float:
    """Mean accumulated strictly left to right.

    ``np.mean`` uses pairwise summation whose grouping depends on array
    length; a fixed order keeps reported numbers independent of that.
    """
    values = np.asarray(values, dtype=np.float64)
    return float(math.fsum(values) / values.shape[0])


@dataclass(frozen=True)
class GroupStats:
    n_exposed: int
    n_control: int
    means_exposed: Mapping[str, float]
    means_control: Mapping[str, float]

    @property
    def disparity(self) -> float:
        """E[Y|A=1] - E[Y|A=0] for the outcome column."""
        return self.means_exposed["__outcome__"] - self.means_control["__outcome__"]

    def to_dict(self) -> dict:
        return {
            "n_exposed": self.n_exposed,
            "n_control": self.n_control,
            "means_exposed": {k: v for k, v in self.means_exposed.items() if k != "__outcome__"},
            "means_control": {k: v for k, v in self.means_control.items() if k != "__outcome__"},
            "disparity": self.disparity,
        }


def group_stats(data: Dataset, roles: RoleMap) -> GroupStats:
    """Per-group means of every role column and the outcome disparity."""
    exposed, control = group_masks(data, roles)
    names = (roles.outcome,) + roles.covariates + roles.confounders + roles.mediators
    m1 = {n: ordered_mean(data[n][exposed]) for n in names}
    m0 = {n: ordered_mean(data[n][control]) for n in names}
    m1["__outcome__"] = m1[roles.outcome]
    m0["__outcome__"] = m0[roles.outcome]
    return GroupStats(
        n_exposed=int(exposed.sum()),
        n_control=int(control.sum()),
        means_exposed=MappingProxyType(m1),
        means_control=MappingProxyType(m0),
    )


# ---------------------------------------------------------------------------
# Interventions


@dataclass(frozen=True)
class ObservedGroup:
    """Draw I from P(I | A=group, given) estimated on that exposure stratum.

    ``given`` may name covariates, confounders and mediators that precede
    every member of I.  ``("C",)`` and ``("C", "L")`` are shorthands for all
    covariates and all covariates plus confounders.  An empty ``given``
    resamples observed I-vectors of the stratum.
    """

    group: int
    given: tuple[str, ...] = ("C",)

    def __post_init__(self):
        if self.group not in (0, 1):
            raise SchemaError("group must be 0 or 1")
        object.__setattr__(self, "given", tuple(self.given))


@dataclass(frozen=True)
class Pooled:
    """Draw I from P(I | given) estimated on both groups together."""

    given: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "given", tuple(self.given))


@dataclass(frozen=True)
class CounterfactualGroup:
    """Draw I from the law of I under exposure ``group`` given ``given``.

    Identified by the observed stratum law under no unmeasured confounding,
    so numerically it follows :class:`ObservedGroup`.  Only valid for
    queries that set the exposure, and ``given`` may not contain mediators.
    """

    group: int
    given: tuple[str, ...] = ("C",)

    def __post_init__(self):
        if self.group not in (0, 1):
            raise SchemaError("group must be 0 or 1")
        object.__setattr__(self, "given", tuple(self.given))


@dataclass(frozen=True)
class FixConstant:
    """Set each member of I to a constant."""

    values: Mapping[str, float]

    def __post_init__(self):
        object.__setattr__(
            self, "values", MappingProxyType({k: float(v) for k, v in dict(self.values).items()})
        )

    def __hash__(self):
        return hash(tuple(sorted(self.values.items())))

    def __eq__(self, other):
        return isinstance(other, FixConstant) and dict(self.values) == dict(other.values)


@dataclass(frozen=True)
class FixGroupMean:
    """Set each member of I to its sample mean in exposure group ``group``."""

    group: int

    def __post_init__(self):
        if self.group not in (0, 1):
            raise SchemaError("group must be 0 or 1")


Source = ObservedGroup | Pooled | CounterfactualGroup | FixConstant | FixGroupMean


def expand_given(given: Sequence[str], roles: RoleMap) -> tuple[str, ...]:
    """Replace the ``C`` / ``L`` shorthands by column names, keeping order."""
    out = []
    for g in given:
        if g == "C":
            out.extend(roles.covariates)
        elif g == "L":
            out.extend(roles.confounders)
        else:
            out.append(g)
    return tuple(dict.fromkeys(out))


@dataclass(frozen=True)
class InterventionSpec:
    """Which mediators are intervened on (I) and where their values come from.

    The remaining mediators R keep their natural group-specific law.
    """

    target: tuple[str, ...]
    source: Source

    def __post_init__(self):
        object.__setattr__(self, "target", tuple(self.target))
        if not self.target:
            raise SchemaError("intervention target must be nonempty")
        if len(set(self.target)) != len(self.target):
            raise SchemaError("intervention target has duplicates")

    def validate(self, roles: RoleMap) -> None:
        unknown = [t for t in self.target if t not in roles.mediators]
        if unknown:
            raise SchemaError(f"intervention targets undeclared mediators: {unknown}")
        src = self.source
        if isinstance(src, FixConstant):
            if set(src.values) != set(self.target):
                raise SchemaError("FixConstant must give one value per target mediator")
        if isinstance(src, (ObservedGroup, Pooled, CounterfactualGroup)):
            given = expand_given(src.given, roles)
            allowed = set(roles.covariates) | set(roles.confounders) | set(roles.mediators)
            bad = [g for g in given if g not in allowed]
            if bad:
                raise SchemaError(f"conditioning set references undeclared columns: {bad}")
            med_given = [g for g in given if g in roles.mediators]
            if med_given:
                if isinstance(src, CounterfactualGroup):
                    raise SchemaError("CounterfactualGroup cannot condition on mediators")
                overlap = set(med_given) & set(self.target)
                if overlap:
                    raise SchemaError(f"conditioning set overlaps the target: {sorted(overlap)}")
                first = min(roles.mediators.index(t) for t in self.target)
                late = [g for g in med_given if roles.mediators.index(g) > first]
                if late:
                    raise SchemaError(
                        f"conditioning mediators {late} do not precede the intervened block"
                    )

    def ordered_target(self, roles: RoleMap) -> tuple[str, ...]:
        return tuple(m for m in roles.mediators if m in self.target)


# ---------------------------------------------------------------------------
# Queries

ESTIMAND_KINDS = (
    "TE", "NIE", "NDE", "IIE", "IIE_R", "IDE", "DEP", "IE", "RE",
    "IE_obs", "RE_obs", "CDE", "PercentReduction",
)
APPROACH3_KINDS = frozenset({"IE_obs", "RE_obs", "PercentReduction"})
POPULATIONS = ("exposed", "control", "whole")


@dataclass(frozen=True)
class CounterfactualQuery:
    """One estimand request.

    ``exposure_set_to`` is required for effects of the exposure (Approach 1
    and 2 kinds) and must be absent for the observed-group kinds.  For the
    observed-group kinds, ``population="whole"`` requests the joint effect
    on both groups, reported with per-group components.
    """

    kind: str
    intervention: InterventionSpec | None = None
    population: str = "exposed"
    exposure_set_to: int | None = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in ESTIMAND_KINDS:
            raise SchemaError(f"unknown estimand kind {self.kind!r}")
        if self.population not in POPULATIONS:
            raise SchemaError(f"unknown population {self.population!r}")
        if self.kind in APPROACH3_KINDS:
            if self.exposure_set_to is not None:
                raise SchemaError(f"{self.kind} does not set the exposure")
        elif self.exposure_set_to not in (0, 1):
            raise SchemaError(f"{self.kind} requires exposure_set_to in {{0, 1}}")
        needs_intervention = self.kind not in ("TE",)
        if needs_intervention and self.intervention is None:
            raise SchemaError(f"{self.kind} requires an intervention")
        if self.kind == "RE_obs" and self.population != "exposed":
            raise SchemaError("RE_obs is defined on the exposed population")
        if not self.name:
            object.__setattr__(self, "name", self.kind)

    def validate(self, roles: RoleMap) -> None:
        iv = self.intervention
        if iv is None:
            return
        iv.validate(roles)
        if self.exposure_set_to is not None and isinstance(iv.source, (ObservedGroup, Pooled)):
            given = expand_given(iv.source.given, roles)
            if any(g in roles.mediators for g in given):
                raise SchemaError(
                    "queries that set the exposure cannot condition on observed mediators"
                )
        if self.kind in ("IDE", "NIE", "NDE") and set(iv.target) != set(roles.mediators):
            raise SchemaError(f"{self.kind} intervenes on all mediators")
        if self.kind in ("NIE", "NDE") and roles.confounders:
            raise SchemaError(
                f"{self.kind} is only identified without exposure-induced confounders"
            )
        if self.kind in ("IIE", "IIE_R", "DEP", "NIE") and not isinstance(
            iv.source, (ObservedGroup, CounterfactualGroup)
        ):
            raise SchemaError(f"{self.kind} contrasts two group laws; use a group source")


# ---------------------------------------------------------------------------
# Assumptions


ASSUMPTION_FLAGS = (
    "consistency",
    "positivity",
    "A1",
    "A2",
    "A3",
    "A4_no_L",
    "A5_no_LM_interaction",
    "exogeneity",
    "linearity",
    "correct_specification",
)


@dataclass(frozen=True)
class AssumptionLedger:
    """User-asserted assumptions.  They select interpretation labels only."""

    consistency: bool = False
    positivity: bool = False
    A1: bool = False
    A2: bool = False
    A3: bool = False
    A4_no_L: bool = False
    A5_no_LM_interaction: bool = False
    exogeneity: bool = False
    linearity: bool = False
    correct_specification: bool = False

    @classmethod
    def from_flags(cls, flags: Iterable[str]) -> "AssumptionLedger":
        flags = list(flags)
        unknown = [f for f in flags if f not in ASSUMPTION_FLAGS]
        if unknown:
            raise SchemaError(f"unknown assumption flags: {unknown}")
        return cls(**{f: True for f in flags})

    def asserted(self) -> tuple[str, ...]:
        return tuple(f for f in ASSUMPTION_FLAGS if getattr(self, f))
