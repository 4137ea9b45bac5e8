"""Twofold Oaxaca-Blinder decompositions of a group outcome gap.

Two group-stratified linear outcome models share one term structure:
the alpha model is fitted on the exposed group (A=1), the omega model on
the control group (A=0).  With an intercept, OLS reproduces each group's
outcome mean at the group means of the regressors, so both decompositions
below add up to the marginal disparity exactly.

``classic``
    explained = sum_j alpha_j (mean_1(x_j) - mean_0(x_j)), unexplained = rest.
``ob_m``
    OB_M is the part associated with the mediator's mean difference: the
    exposed group's mean minus the alpha model evaluated with the mediator
    at its control-group mean and everything else at exposed-group means.
    OB_RE is the rest.

Means of interaction terms are means of rowwise products, never products
of means, which is what makes the identities exact.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import glm
from .data import AssumptionLedger, Dataset, RoleMap, group_masks, ordered_mean
from .errors import ValidationError

logger = logging.getLogger(__name__)

CLASSIC = "classic"
OB_M = "ob_m"

# cumulative assumption ladder for reading OB_M / OB_RE causally
LADDER = (
    ("statistical contrast of conditional means", ()),
    ("IE_M(obs) / RE_M(obs)", ("consistency", "positivity", "A2", "linearity",
                               "correct_specification")),
    ("IE_M / RE_M", ("exogeneity",)),
    ("IIE_M = NIE_M / IDE_M = NDE_M", ()),      # plus A4_no_L or A5_no_LM_interaction
)


@dataclass
class ObDecomposition:
    """Result of a twofold decomposition.

    ``per_term_explained`` holds each term's share of ``explained``
    (classic) or of ``ob_m`` (ob_m flavor).
    """

    flavor: str
    mediator: str
    marginal_disparity: float
    explained: float
    unexplained: float
    per_term_explained: dict
    alpha_model: glm.FittedModel
    omega_model: glm.FittedModel
    ob_m: float | None = None
    ob_re: float | None = None
    # the coefficient-difference form of the unexplained / OB_RE part,
    # computed independently as a check on the identity
    unexplained_direct: float | None = None
    ledger: AssumptionLedger = field(default_factory=AssumptionLedger)

    @property
    def percent_explained(self) -> float:
        if self.marginal_disparity == 0:
            return float("nan")
        return 100.0 * self.explained / self.marginal_disparity

    def to_dict(self) -> dict:
        out = {
            "flavor": self.flavor,
            "mediator": self.mediator,
            "marginal_disparity": self.marginal_disparity,
            "explained": self.explained,
            "unexplained": self.unexplained,
            "unexplained_direct": self.unexplained_direct,
            "per_term_explained": dict(self.per_term_explained),
            "percent_explained": self.percent_explained,
            "interpretation": interpret(self),
            "models": {"alpha": self.alpha_model.summary(), "omega": self.omega_model.summary()},
        }
        if self.flavor == OB_M:
            out["ob_m"] = self.ob_m
            out["ob_re"] = self.ob_re
        return out


def default_terms(roles: RoleMap, mediator: str) -> glm.TermSet:
    """M, every L, M x each L, and every C."""
    ls = roles.confounders
    return glm.TermSet((mediator,) + ls + roles.covariates, tuple((mediator, l) for l in ls))


def _term_columns(terms: glm.TermSet, data: Dataset) -> dict[str, np.ndarray]:
    X = terms.design(data)
    return {name: X[:, j] for j, name in enumerate(terms.names) if j > 0}


def _models(data, roles, mediator, terms, models):
    if mediator not in roles.mediators:
        raise ValidationError(f"{mediator!r} is not a declared mediator")
    if terms is None:
        terms = default_terms(roles, mediator)
    required = {mediator, *roles.confounders, *roles.covariates}
    missing = required - set(terms.mains)
    if missing:
        raise ValidationError(f"outcome terms must include {sorted(missing)}")
    exposed, control = group_masks(data, roles)
    d1, d0 = data.take(np.flatnonzero(exposed)), data.take(np.flatnonzero(control))
    if models is None:
        alpha = glm.fit(d1, roles.outcome, terms, glm.LINEAR, "A=1")
        omega = glm.fit(d0, roles.outcome, terms, glm.LINEAR, "A=0")
    else:
        alpha, omega = models
        if alpha.terms != terms or omega.terms != terms:
            raise ValidationError(
                "both outcome models must have exactly the requested term set; "
                "models selected separately per group cannot be decomposed")
        if alpha.family != glm.LINEAR or omega.family != glm.LINEAR:
            raise ValidationError("decomposition needs linear outcome models")
    return terms, d1, d0, alpha, omega


def _means(terms, d):
    return {k: ordered_mean(v) for k, v in _term_columns(terms, d).items()}


def decompose_classic(data: Dataset, roles: RoleMap, mediator: str,
                      terms: glm.TermSet | None = None, *, models=None,
                      ledger: AssumptionLedger | None = None) -> ObDecomposition:
    """Explained / unexplained split of E[Y|A=1] - E[Y|A=0].

    Parameters
    ----------
    mediator : str
        The single mediator M of the outcome model.
    terms : TermSet, optional
        Must contain M, every L and every C as main effects.  Defaults to
        :func:`default_terms`.
    models : (FittedModel, FittedModel), optional
        Injected alpha (A=1) and omega (A=0) models; they must use ``terms``.

    Raises
    ------
    SingularDesignError
        Either stratum's design is rank deficient.
    ValidationError
        Terms are incomplete or injected models use other terms.
    """
    terms, d1, d0, alpha, omega = _models(data, roles, mediator, terms, models)
    y1, y0 = ordered_mean(d1[roles.outcome]), ordered_mean(d0[roles.outcome])
    gap = y1 - y0
    m1, m0 = _means(terms, d1), _means(terms, d0)
    a, w = alpha.coef, omega.coef
    per_term = {k: a[k] * (m1[k] - m0[k]) for k in m1}
    explained = math.fsum(per_term.values())
    direct = math.fsum([a["(Intercept)"] - w["(Intercept)"]]
                       + [(a[k] - w[k]) * m0[k] for k in m0])
    return ObDecomposition(CLASSIC, mediator, gap, explained, gap - explained, per_term,
                           alpha, omega, unexplained_direct=direct,
                           ledger=ledger or AssumptionLedger())


def decompose_ob_m(data: Dataset, roles: RoleMap, mediator: str,
                   terms: glm.TermSet | None = None, *, models=None,
                   ledger: AssumptionLedger | None = None) -> ObDecomposition:
    """OB_M / OB_RE split of E[Y|A=1] - E[Y|A=0].

    The evaluation point sets M to its control-group mean and every other
    main effect to its exposed-group mean.  A term involving M is valued
    at the product of its factors' point values; a term without M keeps
    its exposed-group mean and so contributes nothing to OB_M.  With the
    default terms this is alpha_1 (E[M|1] - E[M|0]) + sum_l alpha_{ML}
    (E[ML|1] - E[M|0] E[L|1]).

    Parameters and errors as in :func:`decompose_classic`.
    """
    terms, d1, d0, alpha, omega = _models(data, roles, mediator, terms, models)
    y1, y0 = ordered_mean(d1[roles.outcome]), ordered_mean(d0[roles.outcome])
    gap = y1 - y0
    m1, m0 = _means(terms, d1), _means(terms, d0)
    point = {k: m1[k] for k in terms.mains}
    point[mediator] = m0[mediator]
    at_point = dict(m1)
    for p, q in terms.interactions:
        if mediator in (p, q):
            at_point[f"{p}:{q}"] = point[p] * point[q]
    at_point[mediator] = point[mediator]
    a, w = alpha.coef, omega.coef
    per_term = {k: a[k] * (m1[k] - at_point[k]) for k in m1}
    ob_m = math.fsum(per_term.values())
    # OB_RE as the alpha model at the point minus the omega model at the
    # control means
    direct = math.fsum([a["(Intercept)"] - w["(Intercept)"]]
                       + [a[k] * at_point[k] for k in m1] + [-w[k] * m0[k] for k in m0])
    return ObDecomposition(OB_M, mediator, gap, ob_m, gap - ob_m, per_term, alpha, omega,
                           ob_m=ob_m, ob_re=gap - ob_m, unexplained_direct=direct,
                           ledger=ledger or AssumptionLedger())


def interpret(dec: ObDecomposition) -> str:
    """Deepest estimand label the asserted assumptions support.

    The classic flavor has no causal reading and is always labelled as a
    statistical contrast.  Numbers are never changed.
    """
    if dec.flavor == CLASSIC:
        return LADDER[0][0]
    asserted = set(dec.ledger.asserted())
    label = LADDER[0][0]
    needed = set()
    for row, flags in LADDER[1:3]:
        needed |= set(flags)
        if not needed <= asserted:
            return label
        label = row
    if asserted & {"A4_no_L", "A5_no_LM_interaction"}:
        label = LADDER[3][0]
    return label

