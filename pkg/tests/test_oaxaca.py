import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from intervgap import glm, oaxaca
from intervgap.data import AssumptionLedger, Dataset, RoleMap
from intervgap.errors import SingularDesignError, ValidationError
from intervgap.gcomp import resample
from intervgap.oracle import Equation, ParametricDGP
from intervgap.oracle.scm import ie_mean_formula

ROLES = RoleMap("A", "Y", ("M",), ("C",), ("L",))


def _injected(coefs_by_name, terms):
    beta = np.array([coefs_by_name.get(n, 0.0) for n in terms.names])
    return glm.FittedModel(glm.LINEAR, "Y", terms, beta, np.zeros(len(beta)), 10, 0.0, 0.0,
                           residual_sd=1.0)


def _arith_data():
    # exposed: E[M]=.6, E[L]=.5, E[ML]=.3 ; control: E[M]=.4
    m1 = [1, 1, 1, 1, 1, 1, 0, 0, 0, 0]
    l1 = [1, 1, 1, 0, 0, 0, 1, 1, 0, 0]
    m0 = [1, 1, 1, 1, 0, 0, 0, 0, 0, 0]
    l0 = [0, 1, 0, 1, 0, 1, 0, 1, 0, 1]
    rng = np.random.default_rng(0)
    return Dataset({"A": [1] * 10 + [0] * 10, "Y": rng.normal(size=20), "M": m1 + m0,
                    "L": l1 + l0, "C": rng.normal(size=20)})


def test_ob_m_arithmetic_example():
    d = _arith_data()
    terms = oaxaca.default_terms(ROLES, "M")
    alpha = _injected({"(Intercept)": 0.3, "M": 2.0, "L:M": 0.5, "L": -1.0, "C": 0.7}, terms)
    omega = _injected({"(Intercept)": 0.1, "M": 1.0, "L": 0.2}, terms)
    dec = oaxaca.decompose_ob_m(d, ROLES, "M", models=(alpha, omega))
    assert dec.ob_m == pytest.approx(2 * 0.2 + 0.5 * (0.3 - 0.4 * 0.5), abs=1e-14)
    assert dec.ob_m == pytest.approx(0.45, abs=1e-14)
    assert dec.ob_m + dec.ob_re == pytest.approx(dec.marginal_disparity, abs=1e-14)


def test_classic_with_equal_coefficients_and_shifted_mediator():
    d = _arith_data()
    terms = oaxaca.default_terms(ROLES, "M")
    same = {"(Intercept)": 1.0, "M": 1.5, "L": 0.4, "C": 0.0, "L:M": 0.25}
    dec = oaxaca.decompose_classic(d, ROLES, "M", models=(_injected(same, terms), _injected(same, terms)))
    ml1, ml0 = 0.3, np.mean(np.array([1, 1, 1, 1, 0, 0, 0, 0, 0, 0]) * np.array([0, 1, 0, 1, 0, 1, 0, 1, 0, 1]))
    expected = 1.5 * 0.2 + 0.4 * (0.5 - 0.5) + 0.25 * (ml1 - ml0)
    assert dec.explained == pytest.approx(expected, abs=1e-14)
    # coefficient part vanishes when alpha = omega
    assert dec.unexplained_direct == pytest.approx(0.0, abs=1e-14)


def test_identical_groups():
    rng = np.random.default_rng(1)
    half = {k: rng.normal(size=50) for k in ("Y", "M", "C")}
    half["L"] = (rng.random(50) < 0.5).astype(float)
    d = Dataset({"A": [1] * 50 + [0] * 50, **{k: np.concatenate([v, v]) for k, v in half.items()}})
    classic = oaxaca.decompose_classic(d, ROLES, "M")
    assert classic.marginal_disparity == 0
    assert abs(classic.explained) < 1e-12
    assert abs(classic.unexplained) < 1e-12
    # fixing M at its mean breaks the M-L dependence, leaving alpha_ML * cov(M, L)
    dec = oaxaca.decompose_ob_m(d, ROLES, "M")
    m, l = half["M"], half["L"]
    cov = np.mean(m * l) - m.mean() * l.mean()
    assert dec.ob_m == pytest.approx(dec.alpha_model.coef["L:M"] * cov, abs=1e-12)


def _dgp(shift, coefs, seed, n):
    rng = np.random.default_rng(seed)
    a = np.repeat([1.0, 0.0], [n // 2, n - n // 2])
    c = rng.normal(size=n) + 0.3 * a
    l = (rng.random(n) < 0.3 + 0.3 * a).astype(float)
    m = rng.normal(size=n) + shift * a + 0.5 * l
    y = coefs[0] + coefs[1] * m + coefs[2] * l + coefs[3] * m * l + coefs[4] * c + a * coefs[5] + rng.normal(size=n)
    return Dataset({"A": a, "Y": y, "M": m, "L": l, "C": c})


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(40, 400),
       st.lists(st.floats(-3, 3), min_size=6, max_size=6), st.floats(0.2, 2.0))
def test_additivity_and_direct_forms(seed, n, coefs, shift):
    d = _dgp(shift, coefs, seed, n)
    for fn in (oaxaca.decompose_classic, oaxaca.decompose_ob_m):
        dec = fn(d, ROLES, "M")
        gap = dec.marginal_disparity
        scale = max(1.0, abs(gap))
        assert abs(dec.explained + dec.unexplained_direct - gap) < 1e-9 * scale


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.1, 10.0), st.floats(-50, 50))
def test_affine_equivariance(seed, k, b):
    d = _dgp(1.0, [0.5, 1.0, -0.5, 0.3, 0.2, 0.1], seed, 200)
    moved = Dataset({**{c: d[c] for c in d.names}, "Y": k * d["Y"] + b})
    for fn in (oaxaca.decompose_classic, oaxaca.decompose_ob_m):
        x, y = fn(d, ROLES, "M"), fn(moved, ROLES, "M")
        tol = 1e-8 * (1 + abs(b) + k)
        assert y.explained == pytest.approx(k * x.explained, abs=tol)
        assert y.unexplained == pytest.approx(k * x.unexplained, abs=tol)


def test_injected_models_must_share_the_requested_terms():
    d = _dgp(1.0, [0, 1, 1, 0, 0, 0], 0, 200)
    terms = oaxaca.default_terms(ROLES, "M")
    other = glm.TermSet(terms.mains)
    with pytest.raises(ValidationError, match="term set"):
        oaxaca.decompose_ob_m(d, ROLES, "M", models=(_injected({}, other), _injected({}, terms)))


def test_terms_must_cover_every_regressor():
    d = _dgp(1.0, [0, 1, 1, 0, 0, 0], 0, 200)
    with pytest.raises(ValidationError, match="C"):
        oaxaca.decompose_classic(d, ROLES, "M", glm.TermSet(("M", "L")))


def test_constant_mediator_in_a_group_is_singular():
    d = _dgp(1.0, [0, 1, 1, 0, 0, 0], 0, 200)
    m = np.array(d["M"])
    m[d["A"] == 0] = 0.0
    d2 = Dataset({**{c: d[c] for c in d.names}, "M": m})
    with pytest.raises(SingularDesignError):
        oaxaca.decompose_ob_m(d2, ROLES, "M")


def test_ob_m_agrees_with_the_enumeration_oracle():
    dgp = ParametricDGP([
        Equation("C", "C", intercept=0.2),
        Equation("A", "A", intercept=0.0, coefs={"C": 0.5}),
        Equation("L", "L", intercept=-0.3, coefs={"C": 0.4, "A": 0.8}),
        Equation("M", "M", intercept=-0.2, coefs={"C": 0.3, "A": -1.0, "L": 0.6}),
        Equation("Y", "Y", "linear", 1.0, {"C": 0.3, "A": -0.4, "L": 0.5, "M": 0.8, "L:M": 0.4}, 1.0),
    ])
    truth = ie_mean_formula(dgp.to_scm(), ("M",))
    roles = dgp.roles()
    data = dgp.generate(100_000, 21)
    est = oaxaca.decompose_ob_m(data, roles, "M").ob_m
    reps = [oaxaca.decompose_ob_m(resample(data, roles, 21, b), roles, "M").ob_m for b in range(1, 41)]
    se = np.std(reps, ddof=1)
    assert abs(est - truth) < 4 * se


class TestInterpret:
    def dec(self, flavor, flags):
        d = _dgp(1.0, [0, 1, 1, 0, 0, 0], 0, 200)
        fn = oaxaca.decompose_ob_m if flavor == "ob_m" else oaxaca.decompose_classic
        return fn(d, ROLES, "M", ledger=AssumptionLedger.from_flags(flags))

    def test_no_flags(self):
        assert oaxaca.interpret(self.dec("ob_m", [])) == "statistical contrast of conditional means"

    def test_first_row(self):
        flags = ["consistency", "positivity", "A2", "linearity", "correct_specification"]
        assert oaxaca.interpret(self.dec("ob_m", flags)) == "IE_M(obs) / RE_M(obs)"

    def test_second_row(self):
        flags = ["consistency", "positivity", "A2", "linearity", "correct_specification", "exogeneity"]
        assert oaxaca.interpret(self.dec("ob_m", flags)) == "IE_M / RE_M"

    def test_third_row(self):
        flags = ["consistency", "positivity", "A2", "linearity", "correct_specification",
                 "exogeneity", "A4_no_L"]
        assert oaxaca.interpret(self.dec("ob_m", flags)).startswith("IIE_M = NIE_M")

    def test_rows_are_cumulative(self):
        # exogeneity without the first row's assumptions earns nothing
        assert oaxaca.interpret(self.dec("ob_m", ["exogeneity", "A4_no_L"])) == \
            "statistical contrast of conditional means"

    def test_classic_is_always_statistical(self):
        flags = list(AssumptionLedger.__dataclass_fields__)
        assert oaxaca.interpret(self.dec("classic", flags)) == "statistical contrast of conditional means"

    def test_numbers_do_not_depend_on_flags(self):
        a = self.dec("ob_m", [])
        b = self.dec("ob_m", ["consistency", "positivity", "A2", "linearity", "correct_specification"])
        assert a.ob_m == b.ob_m
