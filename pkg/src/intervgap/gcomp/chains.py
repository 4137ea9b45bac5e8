"""Model fitting for the simulation engine.

A :class:`ModelCache` fits, on demand and at most once, every model a set
of queries needs on one (possibly resampled) dataset:

* natural mediator chains per exposure stratum, M_k ~ C + L + M_1..M_{k-1};
* confounder chains per stratum, L_j ~ C + L_1..L_{j-1};
* outcome models per stratum, Y ~ C + L + M;
* dedicated chains for intervened blocks with a custom conditioning set,
  I_k ~ given + I_1..I_{k-1}, on a stratum or on the pooled sample.

Interactions are picked by :func:`intervgap.glm.select` among all pairs of
regressors unless the settings turn selection off.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .. import glm
from ..data import Dataset, RoleMap, group_masks, ordered_mean
from ..errors import ConvergenceError, SingularDesignError

logger = logging.getLogger(__name__)

POOLED = None


def stratum_label(g) -> str:
    return "pooled" if g is POOLED else f"A={g}"


@dataclass(frozen=True)
class FitOptions:
    """How models are specified.

    interactions : "all" searches all pairwise interactions by AIC,
        "none" fits main effects only.
    screen : score-test pre-screening width for logistic selection
        (``None`` fits every candidate).
    """

    interactions: str = "all"
    screen: int | None = None


class ModelCache:
    """Lazily fitted models for one dataset."""

    def __init__(self, data: Dataset, roles: RoleMap, options: FitOptions = FitOptions()):
        self.data = data
        self.roles = roles
        self.options = options
        exposed, control = group_masks(data, roles)
        self._rows = {1: np.flatnonzero(exposed), 0: np.flatnonzero(control),
                      POOLED: np.arange(data.n_rows)}
        self._strata = {}
        self._models = {}
        self._empirical = {}

    # -- data access ---------------------------------------------------------

    def rows(self, g) -> np.ndarray:
        return self._rows[g]

    def stratum(self, g) -> Dataset:
        if g not in self._strata:
            self._strata[g] = self.data if g is POOLED else self.data.take(self._rows[g])
        return self._strata[g]

    def group_mean(self, g, name) -> float:
        return ordered_mean(self.stratum(g)[name])

    def empirical(self, g, names: tuple) -> np.ndarray:
        """Observed rows of ``names`` in stratum ``g`` as an (N, len(names)) array."""
        key = (g, names)
        if key not in self._empirical:
            self._empirical[key] = self.stratum(g).matrix(names)
        return self._empirical[key]

    # -- fitting -------------------------------------------------------------

    def _fit(self, g, response, regressors) -> glm.FittedModel:
        key = (g, response, tuple(regressors))
        if key in self._models:
            return self._models[key]
        family = glm.LOGISTIC if self.roles.is_binary(response) else glm.LINEAR
        regressors = tuple(regressors)
        if self.options.interactions == "none":
            candidates = glm.TermSet(regressors)
        else:
            candidates = glm.TermSet.all_pairs(regressors)
        try:
            model = glm.select(self.stratum(g), response, candidates, family,
                               stratum_label(g), screen=self.options.screen)
        except (SingularDesignError, ConvergenceError) as exc:
            annotated = type(exc)(f"model for {response} on {stratum_label(g)}: {exc}")
            raise annotated from exc
        self._models[key] = model
        return model

    def natural(self, g) -> list[glm.FittedModel]:
        base = self.roles.base
        meds = self.roles.mediators
        return [self._fit(g, m, base + meds[:k]) for k, m in enumerate(meds)]

    def confounders(self, g) -> list[glm.FittedModel]:
        cov = self.roles.covariates
        ls = self.roles.confounders
        return [self._fit(g, l, cov + ls[:k]) for k, l in enumerate(ls)]

    def outcome(self, g) -> glm.FittedModel:
        return self._fit(g, self.roles.outcome, self.roles.base + self.roles.mediators)

    def dedicated(self, g, target: tuple, given: tuple) -> list[glm.FittedModel]:
        return [self._fit(g, t, tuple(given) + target[:k]) for k, t in enumerate(target)]

    def fitted(self) -> list[glm.FittedModel]:
        """Every model fitted so far, in a stable order."""
        keys = sorted(self._models, key=lambda k: (stratum_label(k[0]), k[1], k[2]))
        return [self._models[k] for k in keys]


def fit_chain(data: Dataset, roles: RoleMap, stratum, target: tuple | None = None,
              given: tuple | None = None, options: FitOptions = FitOptions()) -> list[glm.FittedModel]:
    """Fit a mediator chain on one stratum (0, 1 or ``None`` for pooled).

    Without ``target``/``given`` this is the natural chain over all
    mediators in working order.  With them it is a dedicated chain for the
    intervened block ``target`` conditional on ``given``.
    """
    cache = ModelCache(data, roles, options)
    if target is None:
        return cache.natural(stratum)
    return cache.dedicated(stratum, tuple(target), tuple(given or ()))
