"""Parametric structural equations for synthetic data.

Each :class:`Equation` is a GLM in earlier variables: logistic equations
give binary variables, linear ones give Gaussian variables.  Terms are
variable names or ``"a:b"`` products.  When every non-outcome variable is
binary the model converts exactly to a :class:`DiscreteSCM`, so the
enumeration oracle supplies truth.  Otherwise :meth:`ParametricDGP.structural_truth`
evaluates counterfactual means by simulating the equations themselves.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit, ndtri

from ..data import (
    CounterfactualGroup,
    CounterfactualQuery,
    Dataset,
    ObservedGroup,
    RoleMap,
    expand_given,
)
from ..errors import EvaluationError, ValidationError
from ..rng import generator
from .scm import DiscreteSCM, Variable

logger = logging.getLogger(__name__)

FAMILIES = ("logistic", "linear")
DGP_STREAM = 0xD6F


@dataclass(frozen=True)
class Equation:
    """Structural equation for one variable.

    ``coefs`` maps a term (``"x"`` or ``"x:y"``) to its coefficient.
    ``sd`` is the Gaussian noise sd of linear equations.
    """

    name: str
    role: str
    family: str = "logistic"
    intercept: float = 0.0
    coefs: Mapping[str, float] = field(default_factory=dict)
    sd: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"{self.name}: unknown family {self.family!r}")
        if self.role not in ("C", "A", "L", "M", "Y"):
            raise ValidationError(f"{self.name}: unknown role {self.role!r}")
        if self.role == "A" and self.family != "logistic":
            raise ValidationError("the exposure equation must be logistic")
        if self.role == "Y" and self.family != "linear":
            raise ValidationError("the outcome equation must be linear")
        object.__setattr__(self, "coefs", dict(sorted(self.coefs.items())))

    @property
    def parents(self) -> tuple[str, ...]:
        seen = []
        for term in self.coefs:
            for p in term.split(":"):
                if p not in seen:
                    seen.append(p)
        return tuple(seen)

    def eta(self, cols: Mapping[str, np.ndarray]) -> np.ndarray:
        out = self.intercept
        for term, b in self.coefs.items():
            x = 1.0
            for p in term.split(":"):
                x = x * cols[p]
            out = out + b * x
        return np.asarray(out, dtype=np.float64)

    def mean(self, cols) -> np.ndarray:
        eta = self.eta(cols)
        return expit(eta) if self.family == "logistic" else eta

    def to_dict(self) -> dict:
        return {"name": self.name, "role": self.role, "family": self.family,
                "intercept": self.intercept, "coefs": dict(self.coefs), "sd": self.sd}

    @classmethod
    def from_dict(cls, d: dict) -> "Equation":
        return cls(d["name"], d["role"], d.get("family", "logistic"), float(d.get("intercept", 0.0)),
                   {k: float(v) for k, v in d.get("coefs", {}).items()}, float(d.get("sd", 1.0)))


class ParametricDGP:
    """Ordered structural equations (C..., A, L..., M..., Y)."""

    def __init__(self, equations: Sequence[Equation]):
        order = ("C", "A", "L", "M", "Y")
        eqs = sorted(equations, key=lambda e: order.index(e.role))
        if [e.role for e in eqs].count("A") != 1 or [e.role for e in eqs].count("Y") != 1:
            raise ValidationError("need exactly one exposure and one outcome equation")
        if not any(e.role == "M" for e in eqs):
            raise ValidationError("need at least one mediator")
        seen = set()
        for e in eqs:
            bad = [p for p in e.parents if p not in seen]
            if bad:
                raise ValidationError(f"{e.name}: terms use {bad} which are not earlier variables")
            seen.add(e.name)
        if len(seen) != len(eqs):
            raise ValidationError("duplicate variable names")
        self.equations = tuple(eqs)
        self.by_name = {e.name: e for e in eqs}

    def names(self, role: str) -> tuple[str, ...]:
        return tuple(e.name for e in self.equations if e.role == role)

    @property
    def exposure(self) -> str:
        return self.names("A")[0]

    @property
    def outcome(self) -> str:
        return self.names("Y")[0]

    def roles(self) -> RoleMap:
        return RoleMap(
            exposure=self.exposure,
            outcome=self.outcome,
            mediators=self.names("M"),
            covariates=self.names("C"),
            confounders=self.names("L"),
            binary=tuple(e.name for e in self.equations
                         if e.family == "logistic" and e.role in ("C", "L", "M")),
        )

    def to_dict(self) -> dict:
        return {"equations": [e.to_dict() for e in self.equations]}

    @classmethod
    def from_dict(cls, d: dict) -> "ParametricDGP":
        return cls([Equation.from_dict(e) for e in d["equations"]])

    # -- simulation ---------------------------------------------------------

    def noise(self, n: int, rng: np.random.Generator) -> dict:
        """One uniform per variable and unit; linear equations map it to a normal."""
        return {e.name: rng.random(n) for e in self.equations}

    def propagate(self, noise: Mapping[str, np.ndarray], do: Mapping | None = None) -> dict:
        """Evaluate the equations on fixed noise, overriding variables in ``do``."""
        do = do or {}
        cols = {}
        for e in self.equations:
            if e.name in do:
                cols[e.name] = np.broadcast_to(np.asarray(do[e.name], dtype=np.float64),
                                               noise[e.name].shape)
                continue
            u = noise[e.name]
            if e.family == "logistic":
                cols[e.name] = (u < e.mean(cols)).astype(np.float64)
            else:
                cols[e.name] = e.eta(cols) + e.sd * ndtri(np.clip(u, 1e-300, 1 - 1e-16))
        return cols

    def generate(self, n: int, seed: int) -> Dataset:
        """Seed-deterministic sample of n units."""
        if n < 1:
            raise ValidationError("n must be at least 1")
        cols = self.propagate(self.noise(n, generator(seed, DGP_STREAM)))
        return Dataset({e.name: np.array(cols[e.name]) for e in self.equations})

    # -- truth ------------------------------------------------------------------

    def to_scm(self) -> DiscreteSCM:
        """Exact discrete model; requires every non-outcome variable to be binary."""
        variables = []
        for e in self.equations:
            parents = e.parents
            if e.role != "Y" and e.family != "logistic":
                raise EvaluationError(f"{e.name} is continuous; no discrete equivalent")
            grids = np.array(list(itertools.product((0.0, 1.0), repeat=len(parents))))
            cols = {p: grids[:, i] if len(parents) else np.zeros(1) for i, p in enumerate(parents)}
            shape = (2,) * len(parents)
            if e.role == "Y":
                table = np.broadcast_to(e.mean(cols), (max(len(grids), 1),)).reshape(shape)
                variables.append(Variable(e.name, "Y", parents, table))
            else:
                p1 = np.broadcast_to(e.mean(cols), (max(len(grids), 1),))
                table = np.stack([1.0 - p1, p1], axis=-1).reshape(shape + (2,))
                variables.append(Variable(e.name, e.role, parents, table))
        return DiscreteSCM(variables, y_sd=self.by_name[self.outcome].sd)

    def path_products(self, n: int = 200_000, seed: int = 0) -> dict[str, float]:
        """Per mediator: (E[M_k | do A=1] - E[M_k | do A=0]) times its main Y coefficient.

        The exposure effect on the mediator is on its mean scale and
        includes paths through earlier variables; it is computed on common
        noise, so it is exact up to Monte Carlo error of order n^-1/2.
        """
        noise = self.noise(n, generator(seed, DGP_STREAM, 1))
        w1 = self.propagate(noise, {self.exposure: 1.0})
        w0 = self.propagate(noise, {self.exposure: 0.0})
        y = self.by_name[self.outcome]
        return {m: float(np.mean(w1[m] - w0[m])) * y.coefs.get(m, 0.0) for m in self.names("M")}

    def structural_truth(self, query: CounterfactualQuery, n: int = 400_000, seed: int = 0) -> float:
        """Counterfactual effect by simulating the equations.

        Supports TE and the exposure-setting kinds IIE, IE and RE with a
        group source given C (observed and counterfactual group sources
        coincide because the exposure depends on C only).  The intervened
        block is replaced by an independent copy drawn from the reference
        world with the same C; the rest follows the structural equations.
        Accurate to Monte Carlo error of order n^-1/2.
        """
        roles = self.roles()
        kind = query.kind
        rng = generator(seed, DGP_STREAM, 2)
        noise = self.noise(n, rng)
        a = 1.0 if query.exposure_set_to is None else float(query.exposure_set_to)
        A = self.exposure

        def y_mean(cols):
            return float(np.mean(self.by_name[self.outcome].eta(cols)))

        if kind == "TE":
            return y_mean(self.propagate(noise, {A: 1.0})) - y_mean(self.propagate(noise, {A: 0.0}))
        if kind not in ("IIE", "IE", "RE") or query.intervention is None:
            raise EvaluationError(f"structural truth does not cover {kind}")
        src = query.intervention.source
        if not isinstance(src, (ObservedGroup, CounterfactualGroup)) or \
                expand_given(src.given, roles) != roles.covariates:
            raise EvaluationError("structural truth needs a group source given C")
        if query.population != "whole":
            raise EvaluationError("structural truth covers the whole population only")
        target = query.intervention.ordered_target(roles)
        rest = tuple(m for m in roles.mediators if m not in target)
        s = float(src.group)

        def world(x):
            # a fresh copy of every non-C variable under A = x, sharing C
            fresh = self.noise(n, rng)
            fresh.update({c: noise[c] for c in roles.covariates})
            return self.propagate(fresh, {A: x})

        def mu(base, i_world, r_world):
            cols = dict(base)
            cols.update({m: i_world[m] for m in target})
            cols.update({m: r_world[m] for m in rest})
            return y_mean(cols)

        nat = self.propagate(noise, {A: a})
        if kind == "IIE":
            # I and R drawn independently given C; L from a third copy
            r_world = world(a)
            i_noise = self.noise(n, rng)
            i_noise.update({c: noise[c] for c in roles.covariates})
            i_a = self.propagate(i_noise, {A: a})
            i_s = self.propagate(i_noise, {A: s})
            return mu(nat, i_a, r_world) - mu(nat, i_s, r_world)
        # R keeps its natural joint law with L given C; I is an independent copy
        sim = mu(nat, world(s), nat)
        if kind == "IE":
            return y_mean(nat) - sim
        return sim - y_mean(self.propagate(noise, {A: s}))


def random_binary_dgp(rng: np.random.Generator, *, n_l: int = 1, n_m: int = 2,
                      y_interactions: bool = True, y_sd: float = 1.0) -> ParametricDGP:
    """Random model with one binary C, binary L and M, and a linear outcome.

    Every variable depends on all earlier ones through main effects; with
    ``y_interactions`` the outcome also has an M1 x L1 (or M1 x C1) term.
    Such a model converts exactly to a :class:`DiscreteSCM`.
    """
    def u(lo, hi):
        return float(rng.uniform(lo, hi))

    eqs = [Equation("C1", "C", intercept=u(-0.5, 0.5))]
    eqs.append(Equation("A", "A", intercept=u(-0.5, 0.5), coefs={"C1": u(-1, 1)}))
    earlier = ["C1", "A"]
    for i in range(n_l):
        name = f"L{i + 1}"
        eqs.append(Equation(name, "L", intercept=u(-0.5, 0.5),
                            coefs={p: u(-1, 1) for p in earlier}))
        earlier.append(name)
    for i in range(n_m):
        name = f"M{i + 1}"
        coefs = {p: u(-1, 1) for p in earlier}
        # a clear exposure effect on every mediator
        coefs["A"] = float(rng.choice([-1, 1]) * u(0.8, 1.5))
        eqs.append(Equation(name, "M", intercept=u(-0.5, 0.5), coefs=coefs))
        earlier.append(name)
    coefs = {p: float(rng.normal()) for p in earlier}
    if y_interactions:
        coefs["L1:M1" if n_l else "C1:M1"] = float(rng.normal())
    eqs.append(Equation("Y", "Y", "linear", float(rng.normal()), coefs, y_sd))
    return ParametricDGP(eqs)


def application_dgp() -> ParametricDGP:
    """A wage-gap shaped model with ten mediators.

    Group means follow the shape of a typical gender wage study: exposure
    share 0.518 independent of an age-like covariate, two binary
    confounders, eight binary and two continuous mediators and a log-wage
    outcome with a gap of about -0.09.  Work experience (``M9``) carries
    the largest exposure-mediator-outcome path product by a wide margin.
    """
    E = Equation
    eqs = [
        E("C", "C", "linear", 44.3, {}, sd=12.0),
        E("A", "A", "logistic", 0.072, {}),
        E("L1", "L", "logistic", 0.9, {"C": -0.02, "A": -0.04}),
        E("L2", "L", "logistic", -1.05, {"C": -0.006, "A": -0.12}),
        E("M1", "M", "logistic", 0.3, {"C": -0.005, "A": 0.12, "L2": -0.6}),
        E("M2", "M", "logistic", -2.2, {"C": 0.004, "A": -0.2, "M1": 1.9}),
        E("M3", "M", "logistic", -1.85, {"A": -0.45, "M1": 0.5, "M2": 2.2}),
        E("M4", "M", "logistic", -1.9, {"C": 0.045, "A": -0.32, "L2": -0.3}),
        E("M5", "M", "logistic", -0.2, {"A": 1.5, "M3": -0.3}),
        E("M6", "M", "logistic", -1.25, {"A": -1.0, "M3": 1.0, "M2": 0.4}),
        E("M7", "M", "logistic", 2.4, {"A": -2.35, "L1": -0.5, "A:L1": -0.6}),
        E("M8", "M", "logistic", -0.1, {"A": -0.5, "M7": 0.2}),
        E("M9", "M", "linear", 0.45, {"A": -0.12, "M7": 0.06, "L1": -0.02, "C": -0.0015}, sd=0.15),
        E("M10", "M", "linear", 40.5, {"A": -0.4, "M2": 10.0, "M3": 8.0, "M6": 3.0}, sd=11.0),
        E("Y", "Y", "linear", 2.75, {
            "C": 0.006, "A": -0.005, "L1": 0.02, "L2": -0.08,
            "M1": 0.03, "M2": 0.06, "M3": 0.05, "M4": 0.02, "M5": -0.015,
            "M6": 0.05, "M7": 0.02, "M8": 0.01, "M9": 0.25, "M10": 0.002,
            "M7:L1": 0.015,
        }, sd=0.42),
    ]
    return ParametricDGP(eqs)
