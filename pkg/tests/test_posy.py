import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cosynth.posy import (
    AssumptionViolation,
    Monomial,
    NotPosynomialError,
    Posynomial,
    PosyMatrix,
    PosySyntaxError,
    UnboundParameterError,
    matrix_star,
    parse_posynomial,
    posy_add,
    posy_divide,
    posy_eval,
    posy_mul,
)

P = parse_posynomial
NAMES = ("v1", "v2", "v3")

monomials = st.builds(
    Monomial.make,
    st.floats(0.01, 10.0),
    st.dictionaries(st.sampled_from(NAMES), st.integers(-2, 3).map(float), max_size=3),
)
posynomials = st.lists(monomials, max_size=4).map(Posynomial)
valuations = st.fixed_dictionaries({n: st.floats(0.05, 2.0) for n in NAMES})


def test_like_terms_merge():
    assert P("2*v1") + P("3*v1") == P("5*v1")


def test_additive_identity():
    f = P("v1 + 2*v2")
    assert f + Posynomial() == f


def test_disjoint_terms_concatenate():
    assert P("v1 + 2*v2") + P("v2^2") == P("v1 + 2*v2 + v2^2")


def test_monomial_product():
    assert P("v1") * P("v2") == P("v1*v2")


def test_binomial_expansion():
    assert P("1 + v1") * P("1 + v1") == P("1 + 2*v1 + v1^2")


def test_zero_annihilates():
    assert (P("v1 + v2") * Posynomial()).is_zero


def test_eval_reference_values():
    val = {"v2": 0.3501, "v3": 0.2998, "v5": 0.5, "v6": 0.5, "v7": 0.5}
    assert posy_eval(Posynomial.const(0.5), {}) == 0.5
    assert posy_eval(P("v3"), val) == 0.2998
    assert posy_eval(P("v2*v5"), val) == pytest.approx(0.17505, abs=1e-15)
    assert posy_eval(posy_mul(P("v6 + v7"), P("v3")), val) == pytest.approx(0.2998, abs=1e-15)


def test_eval_missing_parameter_is_named():
    with pytest.raises(UnboundParameterError) as exc:
        P("v1 + v9").evaluate({"v1": 1.0})
    assert exc.value.name == "v9"


def test_parse_rejects_negative_coefficient():
    with pytest.raises(PosySyntaxError, match="positive"):
        P("-0.3")


@pytest.mark.parametrize("text", ["", "v1 +", "v1 ** 2", "2 v1", "v1^", "(v1)"])
def test_parse_rejects_malformed(text):
    with pytest.raises(PosySyntaxError):
        P(text)


def test_parse_scientific_and_real_exponents():
    f = P("1e-3*v1^0.5 + v2^-1")
    assert f.evaluate({"v1": 4.0, "v2": 2.0}) == pytest.approx(0.002 + 0.5)


def test_str_round_trips():
    f = P("0.5*v1^2 + v2 + 3")
    assert P(str(f)) == f


def test_divide_by_monomial():
    assert posy_divide(P("v1*v2 + v1"), P("2*v1")) == P("0.5*v2 + 0.5")


def test_divide_proportional():
    assert posy_divide(P("2*v1 + 2*v2"), P("v1 + v2")) == Posynomial.const(2.0)


def test_divide_general_sum_fails():
    with pytest.raises(NotPosynomialError):
        posy_divide(P("v1"), P("v1 + v2"))


@settings(max_examples=1000, deadline=None)
@given(posynomials, posynomials, valuations)
def test_evaluation_homomorphism(f, g, v):
    fa, ga = f.evaluate(v), g.evaluate(v)
    assert math.isclose(posy_add(f, g).evaluate(v), fa + ga, rel_tol=1e-12, abs_tol=1e-300)
    assert math.isclose(posy_mul(f, g).evaluate(v), fa * ga, rel_tol=1e-12, abs_tol=1e-300)


@settings(max_examples=200, deadline=None)
@given(posynomials, valuations)
def test_positivity(f, v):
    assert f.is_zero or f.evaluate(v) > 0


@settings(max_examples=200, deadline=None)
@given(posynomials)
def test_canonical_form_idempotent(f):
    again = Posynomial(f.terms)
    assert again == f and again.terms == f.terms


# --------------------------------------------------------------------------
# matrices


def test_star_of_zero_is_identity():
    assert matrix_star(PosyMatrix.zeros(11)) == PosyMatrix.identity(11)


def test_star_nilpotent():
    p = PosyMatrix([[Posynomial(), P("v1")], [Posynomial(), Posynomial()]])
    star = matrix_star(p, "nilpotent-truncation")
    assert star == PosyMatrix([[Posynomial.one(), P("v1")], [Posynomial(), Posynomial.one()]])


def test_star_constant():
    star = matrix_star(PosyMatrix([[Posynomial.const(0.5)]]), "constant-inverse")
    assert star[0, 0].constant_value == pytest.approx(2.0, abs=1e-15)


def test_star_rejects_parametric_cycle():
    p = PosyMatrix([[Posynomial(), P("v1")], [P("v2"), Posynomial()]])
    with pytest.raises(AssumptionViolation):
        matrix_star(p)


def test_star_rejects_unit_spectral_radius():
    with pytest.raises(AssumptionViolation):
        matrix_star(PosyMatrix([[Posynomial.one()]]), "constant-inverse")


def _random_dag_matrix(rng, n, parametric):
    rows = [[Posynomial() for _ in range(n)] for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < 0.5:
                c = float(rng.uniform(0.05, 0.5))
                rows[i][j] = Posynomial.var(NAMES[(i + j) % 3], coeff=c) if parametric else Posynomial.const(c)
    perm = rng.permutation(n)
    return PosyMatrix([[rows[perm[i]][perm[j]] for j in range(n)] for i in range(n)])


@pytest.mark.parametrize("seed", range(20))
def test_star_nilpotent_symbolic_identity(seed):
    rng = np.random.default_rng(seed)
    p = _random_dag_matrix(rng, int(rng.integers(1, 6)), parametric=True)
    star = matrix_star(p, "nilpotent-truncation")
    # (I - P) S = I  <=>  S = I + P S, which stays inside posynomials
    assert star == PosyMatrix.identity(p.dim) + p @ star


@pytest.mark.parametrize("seed", range(20))
def test_star_residual(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 6))
    a = rng.uniform(0, 1, (n, n)) * (rng.random((n, n)) < 0.6)
    a /= max(1.0, a.sum(axis=1).max()) * rng.uniform(1.1, 2.0)
    p = PosyMatrix.from_array(a)
    star = matrix_star(p, "constant-inverse").evaluate()
    assert np.max(np.abs((np.eye(n) - a) @ star - np.eye(n))) <= 1e-10
    v = {n_: float(x) for n_, x in zip(NAMES, rng.uniform(0.1, 1, 3))}
    q = _random_dag_matrix(rng, n, parametric=True)
    s = matrix_star(q).evaluate(v)
    assert np.max(np.abs((np.eye(n) - q.evaluate(v)) @ s - np.eye(n))) <= 1e-10
