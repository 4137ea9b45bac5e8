"""Monte Carlo g-computation.

A query is translated into a small set of *scenarios*.  Each scenario
describes one simulated population mean: which rows are used, whether the
exposure is set (then L is drawn from its model given C, otherwise the
observed L is kept), the law of the intervened block I and the law of the
remaining mediators R.  The effect is a fixed linear combination of
scenario means and observed group means.

Random numbers are addressed by (seed, bootstrap replicate, job, stream,
repetition); see :mod:`intervgap.rng`.  Within a job, scenarios that need
the same draw (for example the natural R-block of every member of a
single-mediator sweep) share it.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import ndtri

from .. import glm
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
    ordered_mean,
)
from ..errors import PositivityError, SchemaError
from ..rng import label_key, uniform_block
from .chains import POOLED, FitOptions, ModelCache

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GcompSettings:
    """Simulation and inference settings.

    z_draws : Monte Carlo repetitions per unit.
    b_bootstrap : bootstrap replicates (0 gives point estimates only).
    seed : master seed; required.
    workers : processes used for bootstrap replicates.
    stochastic_outcome : draw Y from its model (default) rather than use
        its conditional mean; both give the same expectation.
    positivity_threshold : abort a query when a larger fraction of
        simulated unit draws leaves the training range of some model.
    failure_threshold : fail a query when a larger fraction of bootstrap
        replicates errors.
    chunk_rows : repetitions are processed in chunks of about this many
        unit draws to bound memory.
    """

    z_draws: int = 300
    b_bootstrap: int = 1000
    seed: int = 0
    workers: int = 1
    stochastic_outcome: bool = True
    fit: FitOptions = FitOptions()
    positivity_threshold: float = 0.01
    failure_threshold: float = 0.02
    chunk_rows: int = 100_000

    def __post_init__(self):
        if self.z_draws < 1:
            raise SchemaError("z_draws must be at least 1")
        if self.b_bootstrap < 0:
            raise SchemaError("b_bootstrap must be non-negative")
        if self.workers < 1:
            raise SchemaError("workers must be at least 1")


# ---------------------------------------------------------------------------
# Scenario vocabulary


@dataclass(frozen=True)
class Law:
    """Law of a mediator block.

    kind
        ``natural``: marginal of the block under the stratum's full
        mediator chain, given C and L (``mode="CL"``) or given C only with
        L drawn from its stratum model (``mode="C"``).
        ``dedicated``: chain fitted for the block given ``given``.
        ``empirical``: resampled observed rows of the stratum.
        ``fixed``: constants in ``values``.
        ``groupmean``: the stratum sample means.
    group
        Exposure stratum, or ``None`` for the pooled sample.
    """

    kind: str
    group: int | None = None
    mode: str = "CL"
    given: tuple[str, ...] = ()
    values: tuple[tuple[str, float], ...] = ()

    def describe(self) -> str:
        g = "pooled" if self.group is None else self.group
        if self.kind == "natural":
            return f"natural[{g},{self.mode}]"
        if self.kind == "dedicated":
            return f"dedicated[{g}|{','.join(self.given)}]"
        if self.kind == "empirical":
            return f"empirical[{g}]"
        if self.kind == "fixed":
            return "fixed[" + ",".join(f"{k}={v!r}" for k, v in self.values) + "]"
        return f"groupmean[{g}]"


@dataclass(frozen=True)
class Scenario:
    """One simulated mean.

    population : rows used (1, 0, or ``None`` for all rows).
    exposure : value A is set to, or ``None`` to keep each unit's group
        (then ``population`` must be a group).
    target : intervened mediators in working order.
    law_i, law_r : laws of the intervened block and of the rest.
    """

    population: int | None
    exposure: int | None
    target: tuple[str, ...]
    law_i: Law
    law_r: Law | None

    @property
    def y_group(self) -> int:
        return self.exposure if self.exposure is not None else self.population


def source_law(source, roles: RoleMap, group: int | None = None) -> Law:
    """Translate an intervention source into a :class:`Law`.

    ``group`` overrides the source's stratum (used for the "own group"
    side of indirect-effect contrasts).
    """
    if isinstance(source, FixConstant):
        return Law("fixed", values=tuple(sorted(source.values.items())))
    if isinstance(source, FixGroupMean):
        return Law("groupmean", group=source.group if group is None else group)
    if isinstance(source, Pooled):
        given = expand_given(source.given, roles)
        return Law("empirical", None) if not given else Law("dedicated", None, given=given)
    if isinstance(source, (ObservedGroup, CounterfactualGroup)):
        g = source.group if group is None else group
        given = expand_given(source.given, roles)
        cl = set(roles.covariates) | set(roles.confounders)
        if not given:
            return Law("empirical", g)
        if set(given) == cl:
            return Law("natural", g, "CL")
        if roles.confounders and set(given) == set(roles.covariates):
            return Law("natural", g, "C")
        return Law("dedicated", g, given=given)
    raise SchemaError(f"unsupported intervention source {source!r}")


# ---------------------------------------------------------------------------
# Query plans


@dataclass(frozen=True)
class Plan:
    """Scenarios plus the linear combination giving each component.

    Each component is a tuple of ``(coefficient, operand)`` where operand is
    ``("sim", label)`` or ``("obs", group)`` for an observed group mean.
    """

    scenarios: Mapping[str, Scenario]
    components: Mapping[str, tuple]


def _group_of(population: str):
    return {"exposed": 1, "control": 0, "whole": None}[population]


def plan_query(query: CounterfactualQuery, roles: RoleMap) -> Plan:
    """Scenarios and contrasts for one query."""
    query.validate(roles)
    kind = query.kind
    meds = roles.mediators
    iv = query.intervention
    sc = {}
    if kind in ("IE_obs", "RE_obs", "PercentReduction"):
        target = iv.ordered_target(roles)
        rest = tuple(m for m in meds if m not in target)
        law_i = source_law(iv.source, roles)

        def sim(g):
            label = f"sim[{g}]"
            sc[label] = Scenario(g, None, target, law_i,
                                 Law("natural", g, "CL") if rest else None)
            return ("sim", label)

        if kind == "RE_obs":
            return Plan(sc, {"total": ((1.0, sim(1)), (-1.0, ("obs", 0)))})
        comps = {}
        if query.population in ("exposed", "whole"):
            comps["exposed"] = ((1.0, ("obs", 1)), (-1.0, sim(1)))
        if query.population in ("control", "whole"):
            comps["control"] = ((1.0, sim(0)), (-1.0, ("obs", 0)))
        return Plan(sc, comps)

    a = query.exposure_set_to
    pop = _group_of(query.population)

    def natural_mean(x):
        label = f"E[Y_{x}]"
        sc[label] = Scenario(pop, x, meds, Law("natural", x, "CL"), None)
        return ("sim", label)

    if kind == "TE":
        return Plan(sc, {"total": ((1.0, natural_mean(a)), (-1.0, natural_mean(1 - a)))})

    target = iv.ordered_target(roles)
    rest = tuple(m for m in meds if m not in target)

    def mu(x, law_i, law_r, tgt=target):
        label = f"mu[{x};{law_i.describe()};{law_r.describe() if law_r else '-'}]"
        sc[label] = Scenario(pop, x, tgt, law_i, law_r)
        return ("sim", label)

    def rest_law(g, mode):
        return Law("natural", g, mode) if rest else None

    if kind == "CDE":
        law = source_law(iv.source, roles)
        return Plan(sc, {"total": ((1.0, mu(a, law, rest_law(a, "CL"))),
                                   (-1.0, mu(1 - a, law, rest_law(1 - a, "CL"))))})
    s = iv.source.group
    own = source_law(iv.source, roles, group=a)
    ref = source_law(iv.source, roles)
    if kind == "IIE":
        return Plan(sc, {"total": ((1.0, mu(a, own, rest_law(a, "C"))),
                                   (-1.0, mu(a, ref, rest_law(a, "C"))))})
    if kind == "IIE_R":
        return Plan(sc, {"total": ((1.0, mu(a, ref, rest_law(a, "C"))),
                                   (-1.0, mu(a, ref, rest_law(s, "C"))))})
    if kind == "IE":
        return Plan(sc, {"total": ((1.0, natural_mean(a)), (-1.0, mu(a, ref, rest_law(a, "CL"))))})
    if kind == "RE":
        return Plan(sc, {"total": ((1.0, mu(a, ref, rest_law(a, "CL"))), (-1.0, natural_mean(s)))})
    if kind in ("IDE", "NDE"):
        return Plan(sc, {"total": ((1.0, mu(a, ref, None, meds)), (-1.0, mu(s, ref, None, meds)))})
    if kind == "NIE":
        return Plan(sc, {"total": ((1.0, mu(a, own, None, meds)), (-1.0, mu(a, ref, None, meds)))})
    if kind == "DEP":
        # TE minus the indirect (I and R) and direct interventional effects
        return Plan(sc, {"total": (
            (1.0, natural_mean(a)),
            (-1.0, mu(a, own, rest_law(a, "C"))),
            (1.0, mu(a, ref, rest_law(s, "C"))),
            (-1.0, mu(a, ref, None, meds)),
            (1.0, mu(s, ref, None, meds)),
            (-1.0, natural_mean(s)),
        )})
    raise SchemaError(f"cannot plan {kind}")


# ---------------------------------------------------------------------------
# Simulation


class _Env:
    """Columns available to models for one (population, exposure) setting."""

    def __init__(self, cols: dict, flag):
        self.cols = cols
        self.flag = flag


class Simulator:
    """Runs the scenarios of one job on one dataset.

    Parameters
    ----------
    cache : ModelCache
    settings : GcompSettings
    key : tuple of int
        Stream prefix (bootstrap replicate, job).
    """

    def __init__(self, cache: ModelCache, settings: GcompSettings, key: tuple[int, ...],
                 dump_dir: str | None = None):
        self.cache = cache
        self.roles = cache.roles
        self.settings = settings
        self.key = tuple(key)
        self.dump_dir = dump_dir

    # -- random numbers

    def _u(self, desc: str, width: int, n: int) -> np.ndarray:
        return uniform_block(self.settings.seed, self.key + (label_key(desc),), self.reps, width, n)

    # -- building blocks

    def _rows(self, pop):
        return self.cache.rows(POOLED if pop is None else pop)

    def _draw_chain(self, models, cols, u, flag):
        """Sequentially draw each model's response; ``u`` is (reps, k, n)."""
        out = {}
        for j, m in enumerate(models):
            row = {**cols, **out}
            flag = flag | m.out_of_support(row)
            out[m.response] = glm.draw_from_uniform(m, row, u[:, j, :])
        return out, flag

    def _env(self, pop, exposure) -> _Env:
        key = ("env", pop, exposure)
        if key in self._memo:
            return self._memo[key]
        rows = self._rows(pop)
        data = self.cache.data
        cols = {c: data[c][rows] for c in self.roles.covariates}
        flag = np.zeros((len(self.reps), rows.size), dtype=bool)
        if exposure is None:
            for c in self.roles.confounders + self.roles.mediators:
                cols[c] = data[c][rows]
        elif self.roles.confounders:
            models = self.cache.confounders(exposure)
            u = self._u(f"L|{pop}|{exposure}", len(models), rows.size)
            drawn, flag = self._draw_chain(models, cols, u, flag)
            cols.update(drawn)
        env = _Env(cols, flag)
        self._memo[key] = env
        return env

    def _draw(self, law: Law, slot: str, pop, exposure, names) -> tuple[dict, np.ndarray]:
        # natural draws cover every mediator; other laws depend on the block
        block = () if law.kind == "natural" else tuple(names)
        key = ("draw", law, slot, pop, exposure if law.kind != "empirical" else None, block)
        if key in self._memo:
            return self._memo[key]
        rows = self._rows(pop)
        n = rows.size
        env = self._env(pop, exposure)
        flag = np.zeros((len(self.reps), n), dtype=bool)
        tag = f"{law.describe()}|{slot}|{pop}|{exposure}"
        if law.kind == "natural":
            cols = {c: env.cols[c] for c in self.roles.covariates}
            if law.mode == "CL":
                for c in self.roles.confounders:
                    cols[c] = env.cols[c]
                flag = flag | env.flag
            elif self.roles.confounders:
                lm = self.cache.confounders(law.group)
                u = self._u("Lnuis|" + tag, len(lm), n)
                drawn, flag = self._draw_chain(lm, cols, u, flag)
                cols.update(drawn)
            models = self.cache.natural(law.group)
            u = self._u(tag, len(models), n)
            out, flag = self._draw_chain(models, cols, u, flag)
        elif law.kind == "dedicated":
            models = self.cache.dedicated(law.group, tuple(names), law.given)
            cols = {c: env.cols[c] for c in law.given}
            if any(c in self.roles.confounders for c in law.given):
                flag = flag | env.flag
            u = self._u(tag, len(models), n)
            out, flag = self._draw_chain(models, cols, u, flag)
        elif law.kind == "empirical":
            pool = self.cache.empirical(law.group, tuple(names))
            u = self._u(f"{law.describe()}|{slot}|{pop}", 1, n)[:, 0, :]
            idx = np.minimum((u * pool.shape[0]).astype(np.intp), pool.shape[0] - 1)
            out = {m: pool[:, j][idx] for j, m in enumerate(names)}
        elif law.kind == "fixed":
            vals = dict(law.values)
            out = {m: np.full((len(self.reps), n), vals[m]) for m in names}
        else:
            out = {m: np.full((len(self.reps), n), self.cache.group_mean(law.group, m))
                   for m in names}
        res = (out, flag)
        self._memo[key] = res
        return res

    def _scenario(self, label: str, sc: Scenario):
        meds = self.roles.mediators
        env = self._env(sc.population, sc.exposure)
        flag = env.flag
        drawn_i, f = self._draw(sc.law_i, "I", sc.population, sc.exposure, sc.target)
        flag = flag | f
        mvals = {m: drawn_i[m] for m in sc.target}
        rest = tuple(m for m in meds if m not in sc.target)
        if rest:
            drawn_r, f = self._draw(sc.law_r, "R", sc.population, sc.exposure, rest)
            flag = flag | f
            mvals.update({m: drawn_r[m] for m in rest})
        model = self.cache.outcome(sc.y_group)
        row = {c: env.cols[c] for c in self.roles.base}
        row.update(mvals)
        flag = flag | model.out_of_support(row)
        if self.settings.stochastic_outcome:
            n = self._rows(sc.population).size
            u = self._u(f"Y|{sc.population}|{sc.exposure}|{sc.y_group}", 1, n)[:, 0, :]
            y = glm.draw_from_uniform(model, row, u)
        else:
            y = glm.predict_mean(model, row)
        y = np.broadcast_to(y, flag.shape)
        if self.dump_dir and self.reps[0] == 0:
            self._dump(label, row, y)
        return y.mean(axis=1), int(np.count_nonzero(flag)), flag.size

    def _dump(self, label, row, y):
        os.makedirs(self.dump_dir, exist_ok=True)
        safe = "".join(ch if ch.isalnum() else "_" for ch in label)
        path = os.path.join(self.dump_dir, f"{self.key[-1]:08x}_{safe}.csv")
        names = list(row) + [self.roles.outcome]
        cols = [np.broadcast_to(row[c], y.shape)[0] for c in row] + [y[0]]
        with open(path, "w") as fh:
            fh.write(",".join(names) + "\n")
            for vals in zip(*cols):
                fh.write(",".join(repr(float(v)) for v in vals) + "\n")

    def run(self, scenarios: Mapping[str, Scenario]) -> dict:
        """Per-repetition means and positivity counts for every scenario."""
        z = self.settings.z_draws
        sizes = {self._rows(sc.population).size for sc in scenarios.values()}
        per_chunk = max(1, self.settings.chunk_rows // max(sizes or {1}))
        means = {k: np.empty(z) for k in scenarios}
        flagged = dict.fromkeys(scenarios, 0)
        total = dict.fromkeys(scenarios, 0)
        for z0 in range(0, z, per_chunk):
            self.reps = range(z0, min(z, z0 + per_chunk))
            self._memo = {}
            for label in sorted(scenarios):
                m, f, t = self._scenario(label, scenarios[label])
                means[label][z0:z0 + len(self.reps)] = m
                flagged[label] += f
                total[label] += t
        self._memo = {}
        return {k: (means[k], flagged[k], total[k]) for k in scenarios}


# ---------------------------------------------------------------------------
# Point estimation on one dataset


@dataclass
class PointResult:
    """Estimate of one query on one dataset (no bootstrap)."""

    components: dict                # name -> (point, mc_se)
    total: tuple                    # (point, mc_se)
    positivity_rate: float
    scenario_means: dict = field(default_factory=dict)


def _combine(plan: Plan, sims: dict, obs: dict, z: int) -> PointResult:
    comps = {}
    per_rep_total = np.zeros(z)
    point_total = 0.0
    for name, terms in plan.components.items():
        per_rep = np.zeros(z)
        for coef, (kind, ref) in terms:
            per_rep = per_rep + coef * (sims[ref][0] if kind == "sim" else obs[ref])
        point = float(per_rep.mean())
        se = float(per_rep.std(ddof=1) / math.sqrt(z)) if z > 1 else float("nan")
        comps[name] = (point, se)
        per_rep_total = per_rep_total + per_rep
        point_total += point
    se_total = float(per_rep_total.std(ddof=1) / math.sqrt(z)) if z > 1 else float("nan")
    labels = {ref for terms in plan.components.values() for _, (k, ref) in terms if k == "sim"}
    flagged = sum(sims[l][1] for l in labels)
    size = sum(sims[l][2] for l in labels)
    return PointResult(
        comps, (point_total, se_total), flagged / size if size else 0.0,
        {l: float(sims[l][0].mean()) for l in sorted(labels)},
    )


def observed_means(data: Dataset, roles: RoleMap) -> dict:
    a = data[roles.exposure]
    y = data[roles.outcome]
    return {1: ordered_mean(y[a == 1.0]), 0: ordered_mean(y[a == 0.0])}


def run_plans(cache: ModelCache, plans: Mapping[str, Plan], settings: GcompSettings,
              key: tuple[int, ...], dump_dir: str | None = None) -> dict:
    """Evaluate several plans that share one random-number namespace."""
    scenarios = {}
    local = {}
    for pname, plan in plans.items():
        for label, sc in plan.scenarios.items():
            scenarios[f"{pname}::{label}"] = sc
        local[pname] = Plan(plan.scenarios, {
            c: tuple((coef, (k, f"{pname}::{ref}" if k == "sim" else ref)) for coef, (k, ref) in terms)
            for c, terms in plan.components.items()
        })
    sims = Simulator(cache, settings, key, dump_dir).run(scenarios)
    obs = observed_means(cache.data, cache.roles)
    out = {}
    for pname, plan in local.items():
        res = _combine(plan, sims, obs, settings.z_draws)
        if res.positivity_rate > settings.positivity_threshold:
            raise PositivityError(
                f"{pname}: {res.positivity_rate:.2%} of simulated draws fall outside the "
                f"fitted support (threshold {settings.positivity_threshold:.2%})"
            )
        out[pname] = res
    return out


def simulate_counterfactual_mean(data: Dataset, roles: RoleMap, scenario: Scenario,
                                 settings: GcompSettings, cache: ModelCache | None = None,
                                 key: tuple[int, ...] = (0, 0)):
    """Mean outcome under one scenario.

    Returns
    -------
    mean : float
        Average of the repetition means.
    rep_means : ndarray, shape (z_draws,)
    """
    cache = cache or ModelCache(data, roles, settings.fit)
    means, _, _ = Simulator(cache, settings, key).run({"s": scenario})["s"]
    return float(means.mean()), means
