"""Finite-support structural causal models with exact enumeration.

A :class:`DiscreteSCM` lists its variables by role: covariates C, latent
U, exposure A, exposure-induced confounders L, mediators M and outcome Y.
Every non-outcome variable has a conditional probability table; Y has a
table of conditional means (plus a residual sd used only for sampling).

Two independent evaluators work on the same model:

* :func:`enumerate_identified` sums the observed-data identification
  formulas using only the observational conditionals of (C, A, L, M, Y).
* :func:`counterfactual_truth` manipulates the structural tables (setting
  A or mediator values and integrating over U) and so does not rely on any
  identifying assumption.

They agree whenever the latent structure respects the assumptions of the
formula in question.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..data import (
    CounterfactualGroup,
    CounterfactualQuery,
    Dataset,
    FixConstant,
    FixGroupMean,
    ObservedGroup,
    Pooled,
    RoleMap,
    expand_given,
)
from ..errors import EvaluationError, PositivityError, ValidationError
from ..rng import generator

ROLE_ORDER = ("C", "U", "A", "L", "M")
ROLES = ROLE_ORDER + ("Y",)
DEFAULT_CAP = 4096


@dataclass(frozen=True, eq=False)
class Variable:
    """One node.

    ``table`` has one axis per parent (in ``parents`` order) plus, for
    non-outcome variables, a final axis over ``values`` holding
    probabilities.  For the outcome it holds conditional means.
    """

    name: str
    role: str
    parents: tuple[str, ...] = ()
    table: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5]))
    values: tuple[float, ...] = (0.0, 1.0)

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValidationError(f"unknown role {self.role!r} for {self.name!r}")
        object.__setattr__(self, "parents", tuple(self.parents))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "table", np.asarray(self.table, dtype=np.float64))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "role": self.role,
            "parents": list(self.parents),
            "values": list(self.values),
            "table": self.table.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Variable":
        return cls(d["name"], d["role"], tuple(d.get("parents", ())),
                   np.asarray(d["table"], dtype=np.float64),
                   tuple(d.get("values", (0.0, 1.0))))


class DiscreteSCM:
    """Validated discrete structural model.

    Parameters
    ----------
    variables : sequence of Variable
        Any order; they are arranged by role (C, U, A, L, M, Y) keeping the
        given order within a role, which must be topological.
    y_sd : float
        Residual sd of the outcome, used by :meth:`sample` only.
    cap : int
        Maximum number of joint states of the non-outcome variables.
    """

    def __init__(self, variables: Sequence[Variable], y_sd: float = 1.0, cap: int = DEFAULT_CAP):
        by_role = {r: [v for v in variables if v.role == r] for r in ROLES}
        if len(by_role["A"]) != 1 or len(by_role["Y"]) != 1:
            raise ValidationError("need exactly one exposure and one outcome")
        if not by_role["M"]:
            raise ValidationError("need at least one mediator")
        if by_role["A"][0].values != (0.0, 1.0):
            raise ValidationError("exposure must take values (0, 1)")
        self.variables = tuple(v for r in ROLES for v in by_role[r])
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ValidationError("duplicate variable names")
        self.y_sd = float(y_sd)
        self.cap = int(cap)
        self.by_name = {v.name: v for v in self.variables}
        allowed = {
            "C": set(),
            "U": set(),
            "A": {"C", "U"},
            "L": {"C", "U", "A"},
            "M": {"C", "U", "A", "L"},
            "Y": {"C", "U", "A", "L", "M"},
        }
        seen = []
        for v in self.variables:
            for p in v.parents:
                if p not in self.by_name:
                    raise ValidationError(f"{v.name}: unknown parent {p!r}")
                pr = self.by_name[p].role
                same_role_prior = pr == v.role and p in seen and v.role in ("C", "L", "M")
                if pr not in allowed[v.role] and not same_role_prior:
                    raise ValidationError(f"{v.name} ({v.role}) cannot have parent {p} ({pr})")
            shape = tuple(len(self.by_name[p].values) for p in v.parents)
            if v.role != "Y":
                shape = shape + (len(v.values),)
                if v.table.shape != shape:
                    raise ValidationError(f"{v.name}: table shape {v.table.shape} != {shape}")
                if np.any(v.table < 0) or np.max(np.abs(v.table.sum(-1) - 1.0)) > 1e-12:
                    raise ValidationError(f"{v.name}: probability rows must sum to 1")
            elif v.table.shape != shape:
                raise ValidationError(f"{v.name}: mean table shape {v.table.shape} != {shape}")
            seen.append(v.name)
        if self.n_states > self.cap:
            raise ValidationError(f"{self.n_states} joint states exceed the cap of {self.cap}")

    # -- structure --------------------------------------------------------

    def names(self, role: str) -> tuple[str, ...]:
        return tuple(v.name for v in self.variables if v.role == role)

    @property
    def exposure(self) -> str:
        return self.names("A")[0]

    @property
    def outcome(self) -> str:
        return self.names("Y")[0]

    @property
    def n_states(self) -> int:
        return math.prod(len(v.values) for v in self.variables if v.role != "Y")

    def roles(self) -> RoleMap:
        observed = [v for v in self.variables if v.role in ("C", "L", "M")]
        return RoleMap(
            exposure=self.exposure,
            outcome=self.outcome,
            mediators=self.names("M"),
            covariates=self.names("C"),
            confounders=self.names("L"),
            binary=tuple(v.name for v in observed if v.values == (0.0, 1.0)),
        )

    def to_dict(self) -> dict:
        return {"y_sd": self.y_sd, "variables": [v.to_dict() for v in self.variables]}

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteSCM":
        return cls([Variable.from_dict(v) for v in d["variables"]], d.get("y_sd", 1.0))

    # -- sampling ----------------------------------------------------------

    def sample(self, n: int, seed: int) -> Dataset:
        """Ancestral sample of the observed variables; Y gets Gaussian noise."""
        if n < 1:
            raise ValidationError("n must be at least 1")
        rng = generator(seed, 0x5C3)
        idx = {}
        cols = {}
        for v in self.variables:
            if v.parents:
                sizes = [len(self.by_name[p].values) for p in v.parents]
                flat = np.ravel_multi_index([idx[p] for p in v.parents], sizes)
            else:
                flat = np.zeros(n, dtype=np.intp)
            if v.role == "Y":
                mean = v.table.reshape(-1)[flat]
                cols[v.name] = mean + self.y_sd * rng.standard_normal(n)
                continue
            probs = v.table.reshape(-1, len(v.values))[flat]
            cdf = np.cumsum(probs, axis=1)
            u = rng.random(n)
            k = np.minimum((u[:, None] >= cdf[:, :-1]).sum(axis=1), len(v.values) - 1)
            idx[v.name] = k
            if v.role != "U":
                cols[v.name] = np.asarray(v.values)[k]
        order = self.names("C") + (self.exposure,) + self.names("L") + self.names("M") + (self.outcome,)
        return Dataset({c: cols[c] for c in order})


# ---------------------------------------------------------------------------
# Tensor calculus over the joint state space


def _mprod(factors):
    """Product that treats 0 * nan as 0; nan survives only where no factor is 0."""
    shape = np.broadcast_shapes(*(np.shape(f) for f in factors))
    out = np.ones(shape)
    zero = np.zeros(shape, dtype=bool)
    for f in factors:
        f = np.asarray(f, dtype=np.float64)
        zero |= f == 0.0
        out = out * f
    out[zero] = 0.0
    return out


class _Calc:
    """Joint tables of one SCM, axes ordered (C..., U..., A, L..., M...)."""

    def __init__(self, scm: DiscreteSCM):
        self.scm = scm
        self.names = [v.name for v in scm.variables if v.role != "Y"]
        self.pos = {n: i for i, n in enumerate(self.names)}
        self.size = [len(scm.by_name[n].values) for n in self.names]
        self.C = scm.names("C")
        self.U = scm.names("U")
        self.A = scm.exposure
        self.L = scm.names("L")
        self.M = scm.names("M")
        self.observed = [n for n in self.names if n not in self.U]
        self.P = self.joint({})
        ey = self.embed(scm.by_name[scm.outcome], {})
        self.EY = np.broadcast_to(ey, self.P.shape)
        self.Pobs = self.keep(self.P, self.observed)
        with np.errstate(invalid="ignore", divide="ignore"):
            self.EYobs = self.keep(self.P * self.EY, self.observed) / self.Pobs

    # -- basic operations

    def embed(self, var: Variable, fix: dict) -> np.ndarray:
        tab = var.table
        names = list(var.parents) + ([var.name] if var.role != "Y" else [])
        for name in list(names):
            if name in fix and name != var.name:
                ax = names.index(name)
                tab = np.take(tab, fix[name], axis=ax)
                names.pop(ax)
        order = sorted(range(len(names)), key=lambda k: self.pos[names[k]])
        tab = np.transpose(tab, order)
        shape = [1] * len(self.names)
        for k in order:
            shape[self.pos[names[k]]] = self.size[self.pos[names[k]]]
        return tab.reshape(shape)

    def joint(self, fix: dict) -> np.ndarray:
        out = np.ones([1 if n in fix else s for n, s in zip(self.names, self.size)])
        for v in self.scm.variables:
            if v.role == "Y" or v.name in fix:
                continue
            out = out * self.embed(v, fix)
        return out

    def keep(self, arr, names: Iterable[str]) -> np.ndarray:
        names = set(names)
        axes = tuple(i for i, n in enumerate(self.names) if n not in names and arr.shape[i] > 1)
        return arr.sum(axis=axes, keepdims=True) if axes else arr

    def cond(self, arr, target, given) -> np.ndarray:
        num = self.keep(arr, list(target) + list(given))
        den = self.keep(arr, given)
        with np.errstate(invalid="ignore", divide="ignore"):
            return num / den

    def sel(self, arr, name, idx) -> np.ndarray:
        ax = self.pos[name]
        if arr.shape[ax] == 1:
            return arr
        return np.take(arr, [idx], axis=ax)

    def msum(self, factors, keep=()) -> np.ndarray:
        return self.keep(_mprod(factors), keep)

    def total(self, factors, what: str) -> float:
        prod = _mprod(factors)
        bad = np.isnan(prod)
        if bad.any():
            cell = np.unravel_index(int(np.flatnonzero(bad)[0]), prod.shape)
            desc = ", ".join(
                f"{n}={self.scm.by_name[n].values[i]:g}"
                for n, i, s in zip(self.names, cell, prod.shape) if s > 1 and n not in self.U
            )
            raise PositivityError(f"{what} needs a zero-probability cell ({desc})")
        return float(prod.sum())

    # -- observational pieces

    def obs(self, a):
        """P(A=a, c, l, m) with U summed out."""
        return self.sel(self.Pobs, self.A, a)

    def p_group(self, a) -> float:
        return float(self.obs(a).sum())

    def mean_y(self, a) -> float:
        return self.total([self.obs(a), self.sel(self.EYobs, self.A, a)], "E[Y|A]") / self.p_group(a)

    def pop_c(self, population: str):
        if population == "whole":
            return self.keep(self.Pobs, self.C)
        a = 1 if population == "exposed" else 0
        return self.keep(self.obs(a), self.C) / self.p_group(a)

    def group_mean(self, a, name) -> float:
        vals = np.asarray(self.scm.by_name[name].values)
        shape = [1] * len(self.names)
        shape[self.pos[name]] = len(vals)
        return float((self.obs(a) * vals.reshape(shape)).sum() / self.p_group(a))

    def fixed_law(self, values: dict):
        """Degenerate (or, for binary 0/1 supports, interpolated) law of I."""
        out = np.ones([1] * len(self.names))
        for name, v in values.items():
            support = self.scm.by_name[name].values
            w = np.zeros(len(support))
            if v in support:
                w[support.index(v)] = 1.0
            elif support == (0.0, 1.0):
                w[:] = (1.0 - v, v)
            else:
                raise EvaluationError(f"value {v} is outside the support of {name}")
            shape = [1] * len(self.names)
            shape[self.pos[name]] = len(support)
            out = out * w.reshape(shape)
        return out


def _split(query: CounterfactualQuery, calc: _Calc):
    iv = query.intervention
    target = tuple(m for m in calc.M if m in iv.target)
    rest = tuple(m for m in calc.M if m not in iv.target)
    return target, rest


def _given(source, calc: _Calc) -> tuple[str, ...]:
    out = []
    for g in source.given:
        if g == "C":
            out.extend(calc.C)
        elif g == "L":
            out.extend(calc.L)
        else:
            out.append(g)
    return tuple(out)


def _group_source(query) -> tuple[int, tuple]:
    src = query.intervention.source
    if not isinstance(src, (ObservedGroup, CounterfactualGroup)):
        raise EvaluationError(f"{query.kind} needs a group-law source, got {type(src).__name__}")
    return src.group, src.given


# ---------------------------------------------------------------------------
# Identification formulas


def _observed_sim(calc: _Calc, g: int, target, rest, source, weight_law, ey_law):
    """Mean outcome in group g after drawing I from ``source`` and R from
    P(R | A=g, C, L), all evaluated under ``weight_law`` / ``ey_law``.

    ``weight_law`` is a joint over (..., A, ...) whose A=g slice weights the
    units; ``ey_law`` holds conditional means with the same axes.
    """
    if isinstance(source, FixConstant):
        q_i = calc.fixed_law(dict(source.values))
        given = ()
    elif isinstance(source, FixGroupMean):
        q_i = calc.fixed_law({m: calc.group_mean(source.group, m) for m in target})
        given = ()
    elif isinstance(source, Pooled):
        given = _given(source, calc)
        q_i = calc.cond(calc.Pobs, target, given)
    else:
        given = _given(source, calc)
        q_i = calc.cond(calc.obs(source.group), target, given)
    q_r = calc.cond(calc.obs(g), rest, calc.C + calc.L)
    ey = calc.sel(ey_law, calc.A, g)
    # R is summed first: mediators in the conditioning set appear as the
    # unit's observed values in the weight, and as fresh draws inside R
    h = calc.msum([q_r, ey], keep=[n for n in calc.names if n not in rest])
    med_given = [m for m in given if m in calc.M]
    w_g = calc.sel(weight_law, calc.A, g)
    w = calc.keep(w_g, calc.C + calc.U + calc.L + tuple(med_given)) / float(w_g.sum())
    return calc.total([w, q_i, h], "observed-group simulation")


def _approach12_mu(calc: _Calc, a, pc, law_i, law_r):
    """sum_c P(c) sum_l P(l|a,c) sum_m E[Y|a,c,l,m] law_i law_r."""
    p_l = calc.cond(calc.obs(a), calc.L, calc.C)
    ey = calc.sel(calc.EYobs, calc.A, a)
    return calc.total([pc, p_l, law_i, law_r, ey], "interventional mean")


def iie_formula(scm: DiscreteSCM, target, exposure=1, reference=0, population="whole") -> float:
    """Interventional indirect effect through ``target`` with C-conditional laws.

    sum E[Y|a,c,l,m] (P(i|a,c) - P(i|a*,c)) P(r|a,c) P(l|a,c) P(c).
    """
    calc = _Calc(scm)
    target = tuple(m for m in calc.M if m in target)
    rest = tuple(m for m in calc.M if m not in target)
    pc = calc.pop_c(population)
    q1 = calc.cond(calc.obs(exposure), target, calc.C)
    q0 = calc.cond(calc.obs(reference), target, calc.C)
    qr = calc.cond(calc.obs(exposure), rest, calc.C)
    return (_approach12_mu(calc, exposure, pc, q1, qr)
            - _approach12_mu(calc, exposure, pc, q0, qr))


def ie_formula(scm: DiscreteSCM, target, exposure=1, reference=0, population="whole") -> float:
    """Reduction in E[Y_a] when I is drawn from the reference law given C.

    sum E[Y|a,c,l,m] (P(m|a,l,c) - P(i|a*,c) P(r|a,l,c)) P(l|a,c) P(c).
    """
    calc = _Calc(scm)
    target = tuple(m for m in calc.M if m in target)
    rest = tuple(m for m in calc.M if m not in target)
    pc = calc.pop_c(population)
    p_m = calc.cond(calc.obs(exposure), calc.M, calc.C + calc.L)
    q0 = calc.cond(calc.obs(reference), target, calc.C)
    qr = calc.cond(calc.obs(exposure), rest, calc.C + calc.L)
    return (_approach12_mu(calc, exposure, pc, p_m, 1.0)
            - _approach12_mu(calc, exposure, pc, q0, qr))


def ie_obs_formula(scm: DiscreteSCM, target, given=("C",)) -> float:
    """Change in the exposed group's mean when I follows the control law.

    E[Y|A=1] - sum E[Y|1,c,l,m] P(i|0,c) P(r|1,l,c) P(l|1,c) P(c|1).
    """
    calc = _Calc(scm)
    target = tuple(m for m in calc.M if m in target)
    rest = tuple(m for m in calc.M if m not in target)
    src = ObservedGroup(0, tuple(given))
    sim = _observed_sim(calc, 1, target, rest, src, calc.Pobs, calc.EYobs)
    return calc.mean_y(1) - sim


def ie_mean_formula(scm: DiscreteSCM, target) -> float:
    """Exposed-group change when I is fixed at its control-group mean.

    E[Y|A=1] - sum E[Y|1, m=E[M|A=0], l, c] P(l|1,c) P(c|1), with the
    conditional mean interpolated multilinearly between 0 and 1.
    """
    calc = _Calc(scm)
    target = tuple(m for m in calc.M if m in target)
    rest = tuple(m for m in calc.M if m not in target)
    sim = _observed_sim(calc, 1, target, rest, FixGroupMean(0), calc.Pobs, calc.EYobs)
    return calc.mean_y(1) - sim


def marginal_iie_formula(scm: DiscreteSCM, exposure=1, reference=0) -> float:
    """Indirect effect through all mediators with marginal mediator laws.

    sum E[Y|1,m,l,c] (P(m|A=1) - P(m|A=0)) P(l|1,c) P(c).
    """
    calc = _Calc(scm)
    pc = calc.pop_c("whole")
    q1 = calc.cond(calc.obs(exposure), calc.M, ())
    q0 = calc.cond(calc.obs(reference), calc.M, ())
    return (_approach12_mu(calc, exposure, pc, q1, 1.0)
            - _approach12_mu(calc, exposure, pc, q0, 1.0))


def enumerate_identified(scm: DiscreteSCM, query: CounterfactualQuery) -> float:
    """Evaluate the identification formula for ``query`` by exhaustive summation.

    Uses only observational conditionals of (C, A, L, M, Y).

    Raises
    ------
    PositivityError
        A conditioning cell the formula needs has probability zero.
    EvaluationError
        No formula is implemented for this query.
    """
    calc = _Calc(scm)
    kind = query.kind
    if kind in ("IE_obs", "RE_obs", "PercentReduction"):
        target, rest = _split(query, calc)
        src = query.intervention.source

        def sim(g):
            return _observed_sim(calc, g, target, rest, src, calc.Pobs, calc.EYobs)

        if kind == "RE_obs":
            return sim(1) - calc.mean_y(0)
        parts = []
        if query.population in ("exposed", "whole"):
            parts.append(calc.mean_y(1) - sim(1))
        if query.population in ("control", "whole"):
            parts.append(sim(0) - calc.mean_y(0))
        return float(sum(parts))

    a = query.exposure_set_to
    pc = calc.pop_c(query.population)
    cl = calc.C + calc.L

    def ey_a(x):
        p_m = calc.cond(calc.obs(x), calc.M, cl)
        return _approach12_mu(calc, x, pc, p_m, 1.0)

    if kind == "TE":
        return ey_a(a) - ey_a(1 - a)
    target, rest = _split(query, calc)
    src = query.intervention.source
    if kind == "CDE":
        if not isinstance(src, FixConstant):
            raise EvaluationError("CDE needs a FixConstant source")
        fixed = calc.fixed_law(dict(src.values))

        def mu(x):
            return _approach12_mu(calc, x, pc, fixed, calc.cond(calc.obs(x), rest, cl))

        return mu(a) - mu(1 - a)
    s, given = _group_source(query)
    given = _given(query.intervention.source, calc)
    if any(g in calc.M for g in given):
        raise EvaluationError("exposure-setting formulas cannot condition on mediators")

    def law(x, names, g):
        return calc.cond(calc.obs(x), names, g)

    if kind == "IIE":
        qr = law(a, rest, calc.C)
        return (_approach12_mu(calc, a, pc, law(a, target, given), qr)
                - _approach12_mu(calc, a, pc, law(s, target, given), qr))
    if kind == "IIE_R":
        qi = law(s, target, given)
        return (_approach12_mu(calc, a, pc, qi, law(a, rest, calc.C))
                - _approach12_mu(calc, a, pc, qi, law(s, rest, calc.C)))
    if kind in ("IE", "RE"):
        mu = _approach12_mu(calc, a, pc, law(s, target, given), law(a, rest, cl))
        return ey_a(a) - mu if kind == "IE" else mu - ey_a(s)
    if kind in ("IDE", "NDE"):
        qm = law(s, calc.M, given)
        return _approach12_mu(calc, a, pc, qm, 1.0) - _approach12_mu(calc, s, pc, qm, 1.0)
    if kind == "NIE":
        return (_approach12_mu(calc, a, pc, law(a, calc.M, given), 1.0)
                - _approach12_mu(calc, a, pc, law(s, calc.M, given), 1.0))
    if kind == "DEP":
        parts = {}
        for k in ("TE", "IIE", "IIE_R", "IDE"):
            q = CounterfactualQuery(k, query.intervention if k != "IDE" else _all_m(query, calc),
                                    query.population, a)
            parts[k] = enumerate_identified(scm, q)
        return parts["TE"] - parts["IIE"] - parts["IIE_R"] - parts["IDE"]
    raise EvaluationError(f"no identification formula for {kind}")


def _all_m(query, calc):
    from ..data import InterventionSpec

    return InterventionSpec(calc.M, query.intervention.source)


# ---------------------------------------------------------------------------
# Structural truth


class _Truth:
    """Counterfactual laws obtained by setting A in the structural tables."""

    def __init__(self, calc: _Calc):
        self.calc = calc
        self._cf = {}

    def cf(self, a):
        """P(c, u, L_a, M_a) with the A axis collapsed."""
        if a not in self._cf:
            self._cf[a] = self.calc.joint({self.calc.A: a})
        return self._cf[a]

    def ey(self, a):
        c = self.calc
        return c.embed(c.scm.by_name[c.scm.outcome], {c.A: a})

    def pop_weight(self, population):
        """P(A=g | c, u) / P(A=g), or 1 for the whole population."""
        c = self.calc
        if population == "whole":
            return 1.0
        g = 1 if population == "exposed" else 0
        pa = c.cond(c.P, (c.A,), c.C + c.U)
        return c.sel(pa, c.A, g) / c.p_group(g)

    def mean(self, a, pw, law_i=None, law_r=None) -> float:
        """E[Y_{a, I~law_i, R~law_r}]; natural mediators when laws are None."""
        c = self.calc
        cf = self.cf(a)
        if law_i is None:
            return c.total([pw, cf, self.ey(a)], "E[Y_a]")
        base = c.keep(cf, c.C + c.U + c.L)
        return c.total([pw, base, law_i, law_r, self.ey(a)], "interventional truth")

    def law(self, a, names, given):
        c = self.calc
        return c.cond(c.keep(self.cf(a), c.observed), names, given)


def _coupled_mean(truth: _Truth, a, s, pw) -> float:
    """E[Y_{a M_s}] with L_a and L_s driven by one uniform noise per L."""
    c = truth.calc
    scm = c.scm
    ey = np.broadcast_to(truth.ey(a), truth.cf(a).shape)
    cf_s = truth.cf(s)
    m_cond = c.cond(cf_s, c.M, c.C + c.U + c.L)
    pw = np.broadcast_to(np.asarray(pw, dtype=float), [1] * len(c.names)) if np.ndim(pw) == 0 else pw
    base = c.keep(cf_s, c.C + c.U)
    total = 0.0
    cu_axes = [c.pos[n] for n in c.C + c.U]
    for cu in itertools.product(*(range(c.size[i]) for i in cu_axes)):
        assign = dict(zip(c.C + c.U, cu))
        idx = [0] * len(c.names)
        for n, i in assign.items():
            idx[c.pos[n]] = i
        p_cu = base[tuple(idx)]
        w = pw[tuple(i if pw.shape[k] > 1 else 0 for k, i in enumerate(idx))]
        if p_cu == 0 or w == 0:
            continue
        for la, ls, prob in _couple_l(scm, c, assign, a, s):
            full = list(idx)
            for n, i in zip(c.L, ls):
                full[c.pos[n]] = i
            sl_m = tuple(full[: c.pos[c.M[0]]])
            mc = m_cond[tuple(k if m_cond.shape[j] > 1 else 0 for j, k in enumerate(sl_m))]
            full_a = list(idx)
            for n, i in zip(c.L, la):
                full_a[c.pos[n]] = i
            ey_a = ey[tuple(k if ey.shape[j] > 1 else 0 for j, k in enumerate(full_a[: c.pos[c.M[0]]]))]
            total += p_cu * w * prob * float(np.sum(_mprod([mc.reshape(-1), ey_a.reshape(-1)])))
    return total


def _couple_l(scm, c, assign, a, s):
    """Joint law of (L_a, L_s) under comonotone coupling of each L's noise."""
    states = [((), (), 1.0)]
    for name in c.L:
        var = scm.by_name[name]
        nxt = []
        for la, ls, p in states:
            rows = []
            for x, prev in ((a, la), (s, ls)):
                env = dict(assign)
                env[c.A] = x
                env.update(zip(c.L, prev))
                rows.append(var.table[tuple(env[q] for q in var.parents)])
            cuts = sorted(set(np.concatenate([[0.0], np.cumsum(rows[0]), np.cumsum(rows[1])]).clip(0, 1)))
            cdf_a, cdf_s = np.cumsum(rows[0]), np.cumsum(rows[1])
            for lo, hi in zip(cuts[:-1], cuts[1:]):
                if hi <= lo:
                    continue
                mid = 0.5 * (lo + hi)
                ia = min(int(np.searchsorted(cdf_a, mid, side="right")), len(var.values) - 1)
                is_ = min(int(np.searchsorted(cdf_s, mid, side="right")), len(var.values) - 1)
                nxt.append((la + (ia,), ls + (is_,), p * (hi - lo)))
        states = nxt
    return states


def counterfactual_truth(scm: DiscreteSCM, query: CounterfactualQuery) -> float:
    """True value of ``query`` from the structural model.

    Stochastic interventions integrate over laws computed from the model
    itself (for the exposure-setting kinds, the counterfactual laws of
    I_a given C in the whole population).  NIE and NDE are cross-world: they
    use one uniform noise per variable with comonotone coupling of L across
    worlds, so their value depends on that representation.
    """
    calc = _Calc(scm)
    truth = _Truth(calc)
    kind = query.kind
    if kind in ("IE_obs", "RE_obs", "PercentReduction"):
        target, rest = _split(query, calc)
        src = query.intervention.source

        def sim(g):
            # units keep their latent values: weights and outcome means carry U
            return _observed_sim(calc, g, target, rest, src, calc.P, calc.EY)

        if kind == "RE_obs":
            return sim(1) - calc.mean_y(0)
        parts = []
        if query.population in ("exposed", "whole"):
            parts.append(calc.mean_y(1) - sim(1))
        if query.population in ("control", "whole"):
            parts.append(sim(0) - calc.mean_y(0))
        return float(sum(parts))

    a = query.exposure_set_to
    pw = truth.pop_weight(query.population)
    cl = calc.C + calc.L
    if kind == "TE":
        return truth.mean(a, pw) - truth.mean(1 - a, pw)
    target, rest = _split(query, calc)
    src = query.intervention.source
    if kind == "CDE":
        if not isinstance(src, FixConstant):
            raise EvaluationError("CDE needs a FixConstant source")
        fixed = calc.fixed_law(dict(src.values))

        def mu(x):
            return truth.mean(x, pw, fixed, truth.law(x, rest, cl))

        return mu(a) - mu(1 - a)
    s, _ = _group_source(query)
    given = _given(src, calc)
    law = truth.law
    if kind == "IIE":
        qr = law(a, rest, calc.C)
        return truth.mean(a, pw, law(a, target, given), qr) - truth.mean(a, pw, law(s, target, given), qr)
    if kind == "IIE_R":
        qi = law(s, target, given)
        return truth.mean(a, pw, qi, law(a, rest, calc.C)) - truth.mean(a, pw, qi, law(s, rest, calc.C))
    if kind in ("IE", "RE"):
        mu = truth.mean(a, pw, law(s, target, given), law(a, rest, cl))
        return truth.mean(a, pw) - mu if kind == "IE" else mu - truth.mean(s, pw)
    if kind == "IDE":
        qm = law(s, calc.M, given)
        return truth.mean(a, pw, qm, 1.0) - truth.mean(s, pw, qm, 1.0)
    if kind == "NIE":
        return truth.mean(a, pw) - _coupled_mean(truth, a, s, pw)
    if kind == "NDE":
        return _coupled_mean(truth, a, s, pw) - truth.mean(s, pw)
    if kind == "DEP":
        parts = {}
        for k in ("TE", "IIE", "IIE_R", "IDE"):
            q = CounterfactualQuery(k, query.intervention if k != "IDE" else _all_m(query, calc),
                                    query.population, a)
            parts[k] = counterfactual_truth(scm, q)
        return parts["TE"] - parts["IIE"] - parts["IIE_R"] - parts["IDE"]
    raise EvaluationError(f"no structural evaluator for {kind}")


# ---------------------------------------------------------------------------
# Random models

LATENT_VARIANTS = {
    "none": (),
    "LM": (("L", "M"),),
    "M_LY": (("M",), ("L", "Y")),
    "AM": (("A", "M"),),
    "AM_LY": (("A", "M"), ("L", "Y")),
    "ALY_M": (("A", "L", "Y"), ("M",)),
}


def _random_cpt(rng, parent_sizes, k, lo=0.1):
    shape = tuple(parent_sizes) + (k,)
    if k == 2:
        p = rng.uniform(lo, 1.0 - lo, size=tuple(parent_sizes))
        return np.stack([1.0 - p, p], axis=-1)
    raw = rng.gamma(3.0, size=shape) + lo
    return raw / raw.sum(axis=-1, keepdims=True)


def random_scm(rng: np.random.Generator, *, n_c: int = 1, n_l: int = 1, n_m: int = 2,
               latent: str = "none", exposure_depends_on_c: bool = True,
               c_levels: int = 2, y_additive_in_m: bool = False,
               y_sd: float = 1.0) -> DiscreteSCM:
    """Random model with the standard layout C -> A -> L -> M -> Y.

    Every non-root variable depends on all earlier observed variables of the
    roles it may depend on.  ``latent`` picks which roles share unmeasured
    binary causes (keys of ``LATENT_VARIANTS``).  With ``y_additive_in_m``
    the outcome mean is f(c, u, a, l) + g(m), i.e. no mediator interactions
    with anything else.
    """
    variables = []
    cs = [f"C{i + 1}" for i in range(n_c)]
    for i, c in enumerate(cs):
        sizes = [c_levels] * i
        variables.append(Variable(c, "C", tuple(cs[:i]), _random_cpt(rng, sizes, c_levels),
                                  tuple(range(c_levels))))
    children = {}
    for j, group in enumerate(LATENT_VARIANTS[latent]):
        u = f"U{j + 1}"
        variables.append(Variable(u, "U", (), _random_cpt(rng, [], 2, lo=0.25)))
        for role in group:
            children.setdefault(role, []).append(u)
    sizes = {c: c_levels for c in cs}

    def add(name, role, parents):
        ps = tuple(parents) + tuple(children.get(role, ()))
        tab = _random_cpt(rng, [sizes.get(p, 2) for p in ps], 2)
        variables.append(Variable(name, role, ps, tab))

    add("A", "A", cs if exposure_depends_on_c else ())
    ls = [f"L{i + 1}" for i in range(n_l)]
    for i, l in enumerate(ls):
        add(l, "L", cs + ["A"] + ls[:i])
    ms = [f"M{i + 1}" for i in range(n_m)]
    for i, m in enumerate(ms):
        add(m, "M", cs + ["A"] + ls + ms[:i])
    ups = tuple(cs + ["A"] + ls) + tuple(children.get("Y", ()))
    if y_additive_in_m:
        base = rng.normal(size=tuple(sizes.get(p, 2) for p in ups))
        g = rng.normal(size=(2,) * n_m)
        tab = base.reshape(base.shape + (1,) * n_m) + g.reshape((1,) * base.ndim + g.shape)
        variables.append(Variable("Y", "Y", ups + tuple(ms), tab))
    else:
        ps = ups + tuple(ms)
        variables.append(Variable("Y", "Y", ps, rng.normal(size=tuple(sizes.get(p, 2) for p in ps))))
    return DiscreteSCM(variables, y_sd=y_sd)
