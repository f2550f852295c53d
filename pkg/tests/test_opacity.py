import numpy as np
import pytest

from cosynth.model import parse_model
from cosynth.opacity import (
    DepthInsufficient,
    StochasticityError,
    absorption_probability,
    brute_force_opacity,
    quantify_opacity,
)

from helpers import random_dag_text


def test_network_without_insertion(net, ref_valuation):
    rep = quantify_opacity(net, ref_valuation)
    # the revealing strings are ba and bc, with total mass v3 (v6 + v7) = v3
    assert rep.p_reveal == pytest.approx(0.2998, abs=1e-12)
    assert rep.p_cso == pytest.approx(0.7002, abs=1e-12)
    assert set(rep.revealing_strings) == {("b", "a"), ("b", "c")}
    assert rep.residual <= 1e-10


def test_network_brute_force_agrees(net, ref_valuation):
    a = quantify_opacity(net, ref_valuation)
    b = brute_force_opacity(net, ref_valuation, 8)
    assert abs(a.p_reveal - b.p_reveal) <= 1e-9


def test_opaque_system():
    m = parse_model(
        "psdes\nstates 0 1 2\nevents a\nobservable a\nsecret 1\ninit 0 1\n"
        "trans 0 a 1 : 0.5\ntrans 0 a 2 : 0.5\n"
    )
    assert quantify_opacity(m).p_cso == 1.0


def test_single_run_into_secret():
    m = parse_model("psdes\nstates 0 1\nevents a\nobservable a\nsecret 1\ninit 0 1\ntrans 0 a 1\n")
    assert quantify_opacity(m).p_cso == 0.0


def test_single_absorbing_state():
    m = parse_model("psdes\nstates 0\nevents a\nobservable a\ninit 0 1\n")
    assert brute_force_opacity(m, {}, 1).p_cso == 1.0


def test_depth_zero_is_insufficient(net, ref_valuation):
    with pytest.raises(DepthInsufficient):
        brute_force_opacity(net, ref_valuation, 0)


def test_non_stochastic_valuation_rejected(net, ref_valuation):
    bad = dict(ref_valuation, v1=0.5)
    with pytest.raises(StochasticityError):
        quantify_opacity(net, bad)


def test_absorption_of_simple_chain():
    p = np.array([[0.0, 0.3, 0.7], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    x, res = absorption_probability(p, np.array([False, True, False]))
    assert x == pytest.approx([0.3, 1.0, 0.0])
    assert res <= 1e-12


@pytest.mark.parametrize("seed", range(60))
def test_oracle_agreement(seed):
    m = parse_model(random_dag_text(np.random.default_rng(seed)))
    a = quantify_opacity(m)
    b = brute_force_opacity(m, {}, m.n + 1)
    assert abs(a.p_reveal - b.p_reveal) <= 1e-9
    assert 0.0 <= a.p_reveal <= 1.0
    assert abs(a.p_reveal + a.p_cso - 1.0) <= 1e-12
    assert a.residual <= 1e-10


@pytest.mark.parametrize("seed", range(30))
def test_enlarging_secret_never_helps(seed):
    rng = np.random.default_rng(seed)
    text = random_dag_text(rng)
    m = parse_model(text)
    real = [q for q in m.states if q != m.dummy_initial]
    extra = real[int(rng.integers(0, len(real)))]
    lines = [ln for ln in text.splitlines() if not ln.startswith("secret")]
    bigger = sorted(m.secret | {extra})
    lines.insert(4, "secret " + " ".join(bigger))
    m2 = parse_model("\n".join(lines) + "\n")
    assert quantify_opacity(m2).p_cso <= quantify_opacity(m).p_cso + 1e-12
