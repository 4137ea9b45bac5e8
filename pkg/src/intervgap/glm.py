"""Linear and logistic regression with AIC-driven interaction selection.

These are the simulation primitives of the g-computation engine: every
model can return a mean prediction and a random draw for arbitrary
(broadcastable) rows.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg
from scipy.special import expit, ndtri

from .data import Dataset
from .errors import (
    ConvergenceError,
    EvaluationError,
    SchemaError,
    SingularDesignError,
    ValidationError,
)

logger = logging.getLogger(__name__)

LINEAR = "linear"
LOGISTIC = "logistic"
FAMILIES = (LINEAR, LOGISTIC)

MAX_ITER = 50
GRAD_TOL = 1e-8
# |eta| beyond this means fitted probabilities within ~6e-16 of 0 or 1
SEPARATION_ETA = 36.0
RANK_TOL = 1e-10


def _pair(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class TermSet:
    """Intercept, main effects and two-way interactions.

    Interaction pairs are stored with their members sorted and the pairs
    themselves sorted by name, so equal term sets compare equal.
    """

    mains: tuple[str, ...]
    interactions: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        mains = tuple(self.mains)
        if len(set(mains)) != len(mains):
            raise ValidationError(f"duplicate main effects in {mains}")
        pairs = sorted({_pair(*p) for p in self.interactions})
        for a, b in pairs:
            if a == b:
                raise ValidationError(f"interaction of {a!r} with itself")
            if a not in mains or b not in mains:
                raise ValidationError(f"interaction {a}:{b} lacks a parent main effect")
        object.__setattr__(self, "mains", mains)
        object.__setattr__(self, "interactions", tuple(pairs))

    @classmethod
    def all_pairs(cls, mains: Sequence[str]) -> "TermSet":
        return cls(tuple(mains), tuple(itertools.combinations(mains, 2)))

    def with_interaction(self, pair) -> "TermSet":
        return TermSet(self.mains, self.interactions + (_pair(*pair),))

    @property
    def names(self) -> tuple[str, ...]:
        return ("(Intercept)",) + self.mains + tuple(f"{a}:{b}" for a, b in self.interactions)

    def __len__(self) -> int:
        return 1 + len(self.mains) + len(self.interactions)

    def design(self, data) -> np.ndarray:
        """Model matrix for a Dataset or a mapping of equal-length columns."""
        cols = {m: np.asarray(_get(data, m), dtype=np.float64) for m in self.mains}
        n = len(next(iter(cols.values()))) if cols else _nrows(data)
        X = np.empty((n, len(self)))
        X[:, 0] = 1.0
        for j, m in enumerate(self.mains, start=1):
            X[:, j] = cols[m]
        k = 1 + len(self.mains)
        for j, (a, b) in enumerate(self.interactions, start=k):
            np.multiply(cols[a], cols[b], out=X[:, j])
        return X

    def to_dict(self) -> dict:
        return {"mains": list(self.mains), "interactions": [list(p) for p in self.interactions]}


def _get(row, name):
    try:
        return row[name]
    except (KeyError, SchemaError):
        raise EvaluationError(f"row is missing regressor {name!r}") from None


def _nrows(data) -> int:
    if isinstance(data, Dataset):
        return data.n_rows
    return len(next(iter(data.values())))


@dataclass(frozen=True)
class FittedModel:
    """A fitted regression; immutable and safe to share across workers."""

    family: str
    response: str
    terms: TermSet
    coefficients: np.ndarray
    stderr: np.ndarray
    n_obs: int
    loglik: float
    aic: float
    residual_sd: float | None = None
    subgroup: str = ""
    support: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    iterations: int = 0

    def __post_init__(self):
        if self.coefficients.shape != (len(self.terms),):
            raise ValidationError("coefficient vector does not match the term set")
        for arr in (self.coefficients, self.stderr):
            arr.flags.writeable = False
        object.__setattr__(self, "support", MappingProxyType(dict(self.support)))

    @property
    def coef(self) -> dict[str, float]:
        return dict(zip(self.terms.names, map(float, self.coefficients)))

    def linear_predictor(self, row) -> np.ndarray | float:
        b = self.coefficients
        vals = {m: _get(row, m) for m in self.terms.mains}
        k = 1 + len(self.terms.mains)
        terms = [(b[j], (m,)) for j, m in enumerate(self.terms.mains, start=1)]
        terms += [(b[j], pq) for j, pq in enumerate(self.terms.interactions, start=k)]
        shapes = [np.broadcast_shapes(*(np.shape(vals[n]) for n in names)) for _, names in terms]
        full = np.broadcast_shapes(*shapes) if shapes else ()
        # terms that vary only per unit are summed on the small shape first,
        # the rest accumulate in place in one buffer
        base = b[0]
        big = []
        for (coef, names), shape in zip(terms, shapes):
            if full and shape == full:
                big.append((coef, names))
                continue
            t = vals[names[0]] if len(names) == 1 else vals[names[0]] * vals[names[1]]
            base = base + coef * t
        if not big:
            return base
        eta = np.empty(full)
        eta[...] = base
        scratch = np.empty(full)
        for coef, names in big:
            if len(names) == 1:
                np.multiply(vals[names[0]], coef, out=scratch)
            else:
                np.multiply(vals[names[0]], vals[names[1]], out=scratch)
                scratch *= coef
            eta += scratch
        return eta

    def out_of_support(self, row) -> np.ndarray | bool:
        """True where any regressor lies outside its training range."""
        flag = False
        for m, (lo, hi) in self.support.items():
            v = _get(row, m)
            if np.ndim(v) == 0:
                flag = flag | (v < lo) | (v > hi)
            elif np.any(v < lo) or np.any(v > hi):
                flag = flag | (v < lo) | (v > hi)
        return flag

    def summary(self) -> dict:
        out = {
            "response": self.response,
            "family": self.family,
            "subgroup": self.subgroup,
            "n_obs": self.n_obs,
            "terms": list(self.terms.names),
            "coefficients": [float(c) for c in self.coefficients],
            "aic": float(self.aic),
        }
        if self.residual_sd is not None:
            out["residual_sd"] = float(self.residual_sd)
        return out


# ---------------------------------------------------------------------------
# Fitting


def _rank_check(X: np.ndarray, names: Sequence[str]) -> None:
    _, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size == 0:
        return
    scale = d[0] if d[0] > 0 else 1.0
    rank = int(np.sum(d > RANK_TOL * scale * max(X.shape)))
    # all-zero columns need an absolute test: they pass a relative one when
    # every column is zero
    zero = [j for j in range(X.shape[1]) if not np.any(X[:, j])]
    if rank < X.shape[1] or zero:
        bad = sorted(set(int(j) for j in piv[rank:]) | set(zero))
        cols = [names[j] for j in bad]
        raise SingularDesignError(f"design is rank deficient; collinear columns: {cols}", cols)


def _support(data, terms: TermSet) -> dict:
    out = {}
    for m in terms.mains:
        v = np.asarray(_get(data, m))
        out[m] = (float(v.min()), float(v.max()))
    return out


def _gaussian_loglik(rss: float, n: int) -> float:
    s2 = max(rss / n, np.finfo(float).tiny)
    return -0.5 * n * (math.log(2.0 * math.pi * s2) + 1.0)


def _fit_linear(X, y):
    Q, R = np.linalg.qr(X)
    beta = scipy.linalg.solve_triangular(R, Q.T @ y)
    resid = y - X @ beta
    rss = float(resid @ resid)
    return beta, rss, Q, R


def _logistic_loglik(eta, y):
    # log(1 + exp(eta)) computed stably
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def _irls(X, y, beta0=None, max_iter=MAX_ITER):
    """Newton-Raphson for the logistic likelihood with step halving.

    Returns (beta, loglik, information matrix, iterations).
    """
    n, p = X.shape
    if beta0 is None:
        beta = np.zeros(p)
        ybar = min(max(y.mean(), 1e-6), 1 - 1e-6)
        beta[0] = math.log(ybar / (1.0 - ybar))
    else:
        beta = np.array(beta0, dtype=np.float64)
    eta = X @ beta
    ll = _logistic_loglik(eta, y)
    for it in range(1, max_iter + 1):
        mu = expit(eta)
        w = mu * (1.0 - mu)
        grad = X.T @ (y - mu)
        if np.max(np.abs(grad)) < GRAD_TOL:
            H = (X * w[:, None]).T @ X
            return beta, ll, H, it - 1
        H = (X * w[:, None]).T @ X
        try:
            step = scipy.linalg.solve(H, grad, assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            raise ConvergenceError("information matrix is singular (separation?)") from None
        t = 1.0
        while True:
            cand = beta + t * step
            eta_c = X @ cand
            ll_c = _logistic_loglik(eta_c, y)
            if ll_c >= ll - 1e-12 * abs(ll) or t < 1e-4:
                break
            t *= 0.5
        small = np.max(np.abs(t * step)) <= 1e-12 * (1.0 + np.max(np.abs(beta)))
        beta, eta, ll = cand, eta_c, ll_c
        if np.max(np.abs(eta)) > SEPARATION_ETA:
            raise ConvergenceError(
                "fitted probabilities reached 0 or 1: (quasi-)complete separation"
            )
        if small:
            # the score cannot be driven lower in double precision
            mu = expit(eta)
            H = (X * (mu * (1.0 - mu))[:, None]).T @ X
            return beta, ll, H, it
    raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations")


def fit(data, response: str, terms: TermSet, family: str, subgroup: str = "",
        *, _beta0=None, _rank_checked=False) -> FittedModel:
    """Maximum-likelihood fit of a linear or logistic model.

    Parameters
    ----------
    data : Dataset or mapping of columns
    response : str
        Response column.
    terms : TermSet
    family : {"linear", "logistic"}
    subgroup : str
        Label of the stratum the rows come from, kept for reporting.

    Raises
    ------
    SingularDesignError
        The expanded design is rank deficient.
    ConvergenceError
        Logistic fit separated or hit the iteration limit.
    """
    if family not in FAMILIES:
        raise ValidationError(f"unknown family {family!r}")
    y = np.asarray(_get(data, response), dtype=np.float64)
    X = terms.design(data)
    n, p = X.shape
    if n <= p:
        raise SingularDesignError(f"{n} rows cannot identify {p} coefficients", terms.names)
    if not _rank_checked:
        _rank_check(X, terms.names)
    if family == LINEAR:
        beta, rss, Q, R = _fit_linear(X, y)
        sd = math.sqrt(rss / (n - p))
        ll = _gaussian_loglik(rss, n)
        Rinv = scipy.linalg.solve_triangular(R, np.eye(p))
        se = sd * np.sqrt(np.sum(Rinv * Rinv, axis=1))
        return FittedModel(LINEAR, response, terms, beta, se, n, ll,
                           -2.0 * ll + 2.0 * (p + 1), sd, subgroup, _support(data, terms))
    if np.any((y != 0.0) & (y != 1.0)):
        raise ValidationError(f"logistic response {response!r} must be 0/1")
    if y.min() == y.max():
        raise ConvergenceError(f"response {response!r} is constant in {subgroup or 'sample'}")
    beta, ll, H, it = _irls(X, y, _beta0)
    try:
        cov = scipy.linalg.inv(H)
        se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        se = np.full(p, np.nan)
    return FittedModel(LOGISTIC, response, terms, beta, se, n, ll, -2.0 * ll + 2.0 * p,
                       None, subgroup, _support(data, terms), it)


# ---------------------------------------------------------------------------
# Selection


def _greedy_linear(data, response, base: TermSet, candidates, subgroup):
    current = fit(data, response, base, LINEAR, subgroup)
    y = np.asarray(_get(data, response), dtype=np.float64)
    n = y.shape[0]
    remaining = list(candidates)
    while remaining:
        X = current.terms.design(data)
        Q, _ = np.linalg.qr(X)
        resid = y - X @ current.coefficients
        rss = float(resid @ resid)
        Z = np.column_stack([np.asarray(_get(data, a)) * np.asarray(_get(data, b))
                             for a, b in remaining])
        Zt = Z - Q @ (Q.T @ Z)
        norm2 = np.einsum("ij,ij->j", Zt, Zt)
        raw2 = np.einsum("ij,ij->j", Z, Z)
        ok = (raw2 > 0) & (norm2 > 1e-12 * raw2)
        gain = np.where(ok, (resid @ Z) ** 2 / np.where(ok, norm2, 1.0), -np.inf)
        p_new = len(current.terms) + 1
        new_rss = np.maximum(rss - gain, 0.0)
        aic = np.array([
            -2.0 * _gaussian_loglik(r, n) + 2.0 * (p_new + 1) if o else np.inf
            for r, o in zip(new_rss, ok)
        ])
        for pair, o in zip(remaining, ok):
            if not o:
                logger.debug("skip %s:%s for %s: collinear", pair[0], pair[1], response)
        j = int(np.argmin(aic))
        if not aic[j] < current.aic:
            break
        try:
            current = fit(data, response, current.terms.with_interaction(remaining[j]),
                          LINEAR, subgroup)
        except SingularDesignError:
            logger.info("skip %s:%s for %s: singular", *remaining[j], response)
        remaining.pop(j)
    return current


def _score_rank(data, current: FittedModel, remaining):
    """Score statistics for adding each candidate to a logistic fit."""
    X = current.terms.design(data)
    y = np.asarray(_get(data, current.response))
    mu = expit(X @ current.coefficients)
    w = mu * (1.0 - mu)
    Z = np.column_stack([np.asarray(_get(data, a)) * np.asarray(_get(data, b))
                         for a, b in remaining])
    H = (X * w[:, None]).T @ X
    XWZ = (X * w[:, None]).T @ Z
    adj = np.einsum("ij,ij->j", XWZ, scipy.linalg.solve(H, XWZ, assume_a="pos"))
    V = np.einsum("ij,ij->j", Z * w[:, None], Z) - adj
    U = Z.T @ (y - mu)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(V > 1e-12 * np.maximum(np.einsum("ij,ij->j", Z, Z), 1e-300), U * U / V, -np.inf)
    return s


def _greedy_logistic(data, response, base, candidates, subgroup, screen):
    current = fit(data, response, base, LOGISTIC, subgroup)
    remaining = list(candidates)
    while remaining:
        pool = remaining
        if screen is not None and len(remaining) > screen:
            s = _score_rank(data, current, remaining)
            order = np.argsort(-s, kind="stable")[:screen]
            pool = [remaining[i] for i in sorted(order)]
        # the current design has full rank, so a candidate only needs its
        # own column checked against the current span
        Q, _ = np.linalg.qr(current.terms.design(data))
        best = None
        for pair in list(pool):
            z = np.asarray(_get(data, pair[0])) * np.asarray(_get(data, pair[1]))
            zt = z - Q @ (Q.T @ z)
            if not zt @ zt > 1e-12 * (z @ z):
                logger.info("skip %s:%s for %s: collinear", pair[0], pair[1], response)
                remaining.remove(pair)
                continue
            terms = current.terms.with_interaction(pair)
            # warm start with a zero at the new column's sorted position
            pos = terms.names.index(f"{pair[0]}:{pair[1]}")
            b0 = np.insert(current.coefficients, pos, 0.0)
            try:
                m = fit(data, response, terms, LOGISTIC, subgroup, _beta0=b0,
                        _rank_checked=True)
            except (SingularDesignError, ConvergenceError) as exc:
                logger.info("skip %s:%s for %s: %s", pair[0], pair[1], response, exc)
                remaining.remove(pair)
                continue
            if best is None or m.aic < best[0].aic:
                best = (m, pair)
        if best is None or not best[0].aic < current.aic:
            break
        current = best[0]
        remaining.remove(best[1])
    return current


def _exhaustive(data, response, base, candidates, family, subgroup):
    best = None
    for k in range(len(candidates) + 1):
        for combo in itertools.combinations(candidates, k):
            terms = TermSet(base.mains, base.interactions + combo)
            try:
                m = fit(data, response, terms, family, subgroup)
            except (SingularDesignError, ConvergenceError) as exc:
                if k == 0:
                    raise
                logger.info("skip subset %s for %s: %s", combo, response, exc)
                continue
            if best is None or m.aic < best.aic:
                best = m
    return best


def select(data, response: str, candidate_terms: TermSet, family: str,
           subgroup: str = "", *, exhaustive: bool = False,
           screen: int | None = None) -> FittedModel:
    """AIC-based forward selection of interactions; mains are always kept.

    Starts from the mains-only model and repeatedly adds the candidate
    interaction with the lowest AIC until no addition lowers it.  Ties go
    to the lexicographically first term name.

    Parameters
    ----------
    candidate_terms : TermSet
        Mains to keep and interaction pairs to search.
    exhaustive : bool
        Search all subsets instead (only allowed for <= 10 candidates).
    screen : int, optional
        Logistic family only: rank candidates by their score statistic and
        fit only the best ``screen`` of them at each step.  ``None`` fits
        every candidate.
    """
    base = TermSet(candidate_terms.mains)
    candidates = list(candidate_terms.interactions)
    if exhaustive:
        if len(candidates) > 10:
            raise ValidationError("exhaustive search is limited to 10 candidates")
        return _exhaustive(data, response, base, candidates, family, subgroup)
    if not candidates:
        return fit(data, response, base, family, subgroup)
    if family == LINEAR:
        return _greedy_linear(data, response, base, candidates, subgroup)
    return _greedy_logistic(data, response, base, candidates, subgroup, screen)


# ---------------------------------------------------------------------------
# Prediction and simulation


def predict_mean(model: FittedModel, row):
    """Conditional mean at ``row`` (a mapping of scalars or arrays)."""
    eta = model.linear_predictor(row)
    if model.family == LINEAR:
        return eta
    if isinstance(eta, np.ndarray):
        return expit(eta, out=eta)
    return expit(eta)


def draw_from_uniform(model: FittedModel, row, u):
    """Transform uniforms ``u`` into model draws.

    Linear models use the inverse normal CDF; logistic models return
    ``1.0`` where ``u`` falls below the fitted probability.
    """
    mean = predict_mean(model, row)
    if model.family == LINEAR:
        # shift keeps ndtri away from u == 0
        return mean + model.residual_sd * ndtri(u + 2.0 ** -54)
    return (u < mean).astype(np.float64)


def draw(model: FittedModel, row, rng: np.random.Generator):
    """One random draw per row from the fitted conditional law."""
    mean = np.asarray(predict_mean(model, row))
    u = rng.random(mean.shape)
    out = draw_from_uniform(model, row, u)
    return float(out) if np.ndim(out) == 0 else out
