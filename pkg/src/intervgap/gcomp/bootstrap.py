"""Effect estimation with nonparametric bootstrap inference.

Replicate 0 is the full sample; replicates 1..B resample rows with
replacement within each exposure group and refit every model.  Replicates
are independent, so they can run in worker processes; results are reduced
in replicate order and never depend on the number of workers.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ..data import CounterfactualQuery, Dataset, InterventionSpec, RoleMap, group_masks
from ..errors import EstimationError, IntervgapError
from ..rng import generator, label_key
from .chains import ModelCache
from .engine import GcompSettings, PointResult, observed_means, plan_query, run_plans

logger = logging.getLogger(__name__)

BOOT_STREAM = 0xB007


@dataclass(frozen=True)
class Sweep:
    """One query per mediator, each intervening on that mediator alone.

    The template's intervention target is replaced for every member; all
    members share random draws.
    """

    name: str
    template: CounterfactualQuery
    mediators: tuple[str, ...]

    def members(self) -> list[tuple[str, CounterfactualQuery]]:
        out = []
        for m in self.mediators:
            iv = InterventionSpec((m,), self.template.intervention.source)
            name = f"{self.name}[{m}]"
            out.append((name, replace(self.template, intervention=iv, name=name)))
        return out


@dataclass
class EffectEstimate:
    """Point estimate, Monte Carlo error and bootstrap interval of one effect."""

    name: str
    kind: str
    point: float = float("nan")
    mc_se: float = float("nan")
    percent_of_gap: float = float("nan")
    boot_se: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    percent_ci_low: float | None = None
    percent_ci_high: float | None = None
    n_boot: int = 0
    n_failed: int = 0
    positivity_rate: float = 0.0
    ci_excludes_point: bool = False
    components: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def combined_se(self) -> float:
        return math.sqrt(self.mc_se ** 2 + (self.boot_se or 0.0) ** 2)

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "kind": self.kind,
            "point": self.point,
            "mc_se": self.mc_se,
            "percent_of_gap": self.percent_of_gap,
            "positivity_rate": self.positivity_rate,
            "error": self.error,
        }
        if self.boot_se is not None:
            out.update({
                "boot_se": self.boot_se,
                "ci": [self.ci_low, self.ci_high],
                "percent_ci": [self.percent_ci_low, self.percent_ci_high],
                "n_boot": self.n_boot,
                "n_failed": self.n_failed,
                "ci_excludes_point": self.ci_excludes_point,
            })
        if self.components:
            out["components"] = {k: v.to_dict() for k, v in self.components.items()}
        return out


# ---------------------------------------------------------------------------
# Jobs


@dataclass(frozen=True)
class _Job:
    name: str
    members: tuple                # ((member name, kind, plan or error), ...)


def _jobs(items, roles: RoleMap) -> list[_Job]:
    jobs = []
    for item in items:
        if isinstance(item, Sweep):
            members = item.members()
        else:
            members = [(item.name, item)]
        planned = []
        for name, q in members:
            try:
                planned.append((name, q.kind, plan_query(q, roles)))
            except IntervgapError as exc:
                planned.append((name, q.kind, exc))
        jobs.append(_Job(item.name, tuple(planned)))
    return jobs


def resample(data: Dataset, roles: RoleMap, seed: int, b: int) -> Dataset:
    """Stratified bootstrap sample; row order follows the drawn source rows."""
    exposed, control = group_masks(data, roles)
    rng = generator(seed, BOOT_STREAM, b)
    idx = []
    for mask in (exposed, control):
        rows = np.flatnonzero(mask)
        idx.append(rows[rng.integers(0, rows.size, rows.size)])
    return data.take(np.sort(np.concatenate(idx), kind="stable"))


def evaluate_replicate(data: Dataset, roles: RoleMap, jobs, settings: GcompSettings, b: int,
                       dump_dir: str | None = None):
    """Run every job on replicate ``b``.

    Returns (results, disparity, cache) where results maps member name to
    a PointResult or an error message.
    """
    d = data if b == 0 else resample(data, roles, settings.seed, b)
    cache = ModelCache(d, roles, settings.fit)
    obs = observed_means(d, roles)
    results = {}
    for job in jobs:
        plans = {n: p for n, _, p in job.members if not isinstance(p, Exception)}
        for n, _, p in job.members:
            if isinstance(p, Exception):
                results[n] = f"{type(p).__name__}: {p}"
        key = (b, label_key(job.name))
        try:
            results.update(run_plans(cache, plans, settings, key, dump_dir))
        except (IntervgapError, np.linalg.LinAlgError) as exc:
            if len(plans) == 1:
                results[next(iter(plans))] = f"{type(exc).__name__}: {exc}"
                continue
            # members draw from the same streams, so running them one by one
            # gives the same numbers for those that succeed
            for n, p in plans.items():
                try:
                    results.update(run_plans(cache, {n: p}, settings, key, dump_dir))
                except (IntervgapError, np.linalg.LinAlgError) as exc2:
                    results[n] = f"{type(exc2).__name__}: {exc2}"
    return results, obs[1] - obs[0], cache


def _summarize(res: PointResult):
    return {
        "total": res.total[0],
        "components": {k: v[0] for k, v in res.components.items()},
    }


# worker globals, set once per process
_W = {}


def _init_worker(data, roles, jobs, settings):
    _W.update(data=data, roles=roles, jobs=jobs, settings=settings)


def _replicate_task(b):
    results, gap, _ = evaluate_replicate(_W["data"], _W["roles"], _W["jobs"], _W["settings"], b)
    return b, {k: (v if isinstance(v, str) else _summarize(v)) for k, v in results.items()}, gap


@dataclass
class Analysis:
    """Everything produced by :func:`bootstrap`."""

    estimates: dict
    disparity: float
    models: list
    replicate_failures: int = 0


def _percentiles(values):
    lo, hi = np.percentile(values, [2.5, 97.5])
    return float(lo), float(hi)


def bootstrap(data: Dataset, roles: RoleMap, queries: Sequence, settings: GcompSettings,
              dump_dir: str | None = None) -> Analysis:
    """Estimate every query (or :class:`Sweep`) with bootstrap intervals.

    With ``b_bootstrap == 0`` only point estimates and Monte Carlo errors
    are returned.
    """
    jobs = _jobs(queries, roles)
    full, gap, cache = evaluate_replicate(data, roles, jobs, settings, 0, dump_dir)
    B = settings.b_bootstrap
    reps = {}
    gaps = np.full(B, np.nan)
    if B > 0:
        if settings.workers > 1:
            with ProcessPoolExecutor(settings.workers, initializer=_init_worker,
                                     initargs=(data, roles, jobs, settings)) as pool:
                out = list(pool.map(_replicate_task, range(1, B + 1), chunksize=1))
        else:
            _init_worker(data, roles, jobs, settings)
            out = [_replicate_task(b) for b in range(1, B + 1)]
            _W.clear()
        out.sort(key=lambda t: t[0])
        for b, res, g in out:
            reps[b] = res
            gaps[b - 1] = g

    estimates = {}
    for job in jobs:
        for name, kind, _ in job.members:
            estimates[name] = _estimate(name, kind, full[name], reps, gaps, gap, settings)
    return Analysis(estimates, gap, [m.summary() for m in cache.fitted()])


def _percent(value, gap):
    """Percent of the disparity; undefined (nan) when there is no disparity."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(gap == 0, np.nan, 100.0 * np.asarray(value, dtype=float) / gap)


def _estimate(name, kind, full, reps, gaps, gap, settings) -> EffectEstimate:
    if isinstance(full, str):
        return EffectEstimate(name, kind, error=full)
    comps = {}
    for c, (p, se) in full.components.items():
        comps[c] = EffectEstimate(f"{name}.{c}", kind, p, se, float(_percent(p, gap)))
    # the total's percent is the sum of component percents so that the
    # component split adds up exactly
    pct_total = sum(e.percent_of_gap for e in comps.values())
    est = EffectEstimate(name, kind, full.total[0], full.total[1], pct_total,
                         positivity_rate=full.positivity_rate)
    if len(comps) > 1:
        est.components = comps
    B = settings.b_bootstrap
    if B == 0:
        return est
    vals = [reps[b].get(name) for b in range(1, B + 1)]
    ok = [i for i, v in enumerate(vals) if isinstance(v, dict)]
    est.n_boot = len(ok)
    est.n_failed = B - len(ok)
    if est.n_failed > settings.failure_threshold * B:
        first = next(v for v in vals if isinstance(v, str))
        est.error = (f"{est.n_failed} of {B} bootstrap replicates failed "
                     f"(first: {first})")
    if len(ok) < 2:
        est.error = est.error or "fewer than two successful bootstrap replicates"
        return est
    g = gaps[ok]

    def fill(target: EffectEstimate, draws):
        draws = np.asarray(draws)
        target.boot_se = float(draws.std(ddof=1))
        target.ci_low, target.ci_high = _percentiles(draws)
        pct = _percent(draws, g)
        if np.all(np.isfinite(pct)):
            target.percent_ci_low, target.percent_ci_high = _percentiles(pct)
        target.n_boot, target.n_failed = est.n_boot, est.n_failed
        target.ci_excludes_point = not (target.ci_low <= target.point <= target.ci_high)

    fill(est, [vals[i]["total"] for i in ok])
    for c, comp in est.components.items():
        fill(comp, [vals[i]["components"][c] for i in ok])
    if est.ci_excludes_point:
        logger.warning("%s: point estimate lies outside its percentile interval", name)
    return est


def estimate_effect(data: Dataset, roles: RoleMap, query: CounterfactualQuery,
                    settings: GcompSettings) -> EffectEstimate:
    """Point estimate and Monte Carlo error of one query (no bootstrap)."""
    res = bootstrap(data, roles, [query], replace(settings, b_bootstrap=0))
    est = res.estimates[query.name]
    if est.error:
        raise EstimationError(est.error)
    return est


def sweep_single_mediators(data: Dataset, roles: RoleMap, template: CounterfactualQuery,
                           settings: GcompSettings, mediators: Sequence[str] | None = None,
                           name: str = "sweep") -> list[EffectEstimate]:
    """One estimate per mediator; failures are reported in ``error`` fields."""
    meds = tuple(mediators or roles.mediators)
    sweep = Sweep(name, template, meds)
    res = bootstrap(data, roles, [sweep], settings)
    return [res.estimates[n] for n, _ in sweep.members()]
