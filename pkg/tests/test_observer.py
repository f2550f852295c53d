import itertools

import numpy as np
import pytest

from cosynth.model import parse_model
from cosynth.observer import (
    SecretRevealedAtStart,
    build_observer,
    build_safe_observer,
    check_cso,
    project,
)

from helpers import random_dag_text, runs_by_projection


def test_project():
    m = parse_model("psdes\nstates 0\nevents a b c u\nobservable a b c\ninit 0 1\n")
    assert project(("a", "b", "c"), m) == ("a", "b", "c")
    assert project(("a", "u", "b"), m) == ("a", "b")
    assert project((), m) == ()
    with pytest.raises(ValueError):
        project(("z",), m)


def test_network_observer_mirrors_system(net):
    obs = build_observer(net)
    assert sorted(obs.nodes, key=lambda n: int(min(n))) == [frozenset({q}) for q in net.states]
    for (q, e, q2) in net.trans:
        assert obs.step(frozenset({q}), e) == frozenset({q2})


def test_unobservable_branch_merges_estimate():
    m = parse_model(
        "psdes\nstates 0 1 2\nevents a u\nobservable a\ninit 0 1\n"
        "trans 0 u 1 : 0.5\ntrans 0 a 2 : 0.5\ntrans 1 a 2\n"
    )
    obs = build_observer(m)
    assert obs.initial == frozenset({"0", "1"})
    assert obs.step(obs.initial, "a") == frozenset({"2"})
    assert len(obs.nodes) == 2


def test_single_state_observer():
    m = parse_model("psdes\nstates 0\nevents a\nobservable a\ninit 0 1\n")
    obs = build_observer(m)
    assert obs.nodes == (frozenset({"0"}),) and not obs.edges


def test_network_not_opaque(net):
    verdict = check_cso(build_observer(net))
    assert not verdict.opaque
    assert set(verdict.witnesses) == {("b", "a"), ("b", "c")}
    assert str(verdict) == "not opaque; witnesses: ba, bc"


def test_no_secret_is_opaque():
    m = parse_model("psdes\nstates 0 1\nevents a\nobservable a\ninit 0 1\ntrans 0 a 1\n")
    assert check_cso(build_observer(m)).opaque


def test_unreachable_secret_is_opaque():
    m = parse_model(
        "psdes\nstates 0 1 2\nevents a\nobservable a\nsecret 2\ninit 0 1\ntrans 0 a 1\n"
    )
    assert check_cso(build_observer(m)).opaque


def test_safe_observer_of_network(net):
    obs = build_observer(net)
    safe = build_safe_observer(obs)
    assert set(obs.nodes) - set(safe.nodes) == {frozenset({"8"}), frozenset({"9"})}
    assert safe.accepts(("a", "b", "c", "b"))
    assert not safe.accepts(("b", "a"))


def test_safe_observer_of_non_secret_system():
    m = parse_model("psdes\nstates 0 1\nevents a\nobservable a\ninit 0 1\ntrans 0 a 1\n")
    obs = build_observer(m)
    safe = build_safe_observer(obs)
    assert safe.nodes == obs.nodes and safe.edges == obs.edges


def test_revealed_at_start():
    m = parse_model("psdes\nstates 0\nevents a\nobservable a\nsecret 0\ninit 0 1\n")
    with pytest.raises(SecretRevealedAtStart, match="secret revealed at start"):
        build_safe_observer(build_observer(m))


@pytest.mark.parametrize("seed", range(50))
def test_observer_matches_enumeration(seed):
    m = parse_model(random_dag_text(np.random.default_rng(seed)))
    obs = build_observer(m)
    truth = runs_by_projection(m, m.n + 1)
    sigma = m.observable_events
    for k in range(m.n + 1):
        for w in itertools.product(sigma, repeat=k):
            node = obs.run(w)
            assert (node is not None) == (w in truth)
            if node is not None:
                assert node == frozenset(truth[w])
    for node in obs.nodes:
        succ = [e for e, _ in obs.successors(node)]
        assert len(succ) == len(set(succ))


@pytest.mark.parametrize("seed", range(30))
def test_cso_matches_definition(seed):
    m = parse_model(random_dag_text(np.random.default_rng(seed)))
    truth = runs_by_projection(m, m.n + 1)
    revealed = any(ests and ests <= m.secret for ests in truth.values())
    assert check_cso(build_observer(m)).opaque == (not revealed)


@pytest.mark.parametrize("seed", range(30))
def test_safe_language_is_prefix_closed(seed):
    m = parse_model(random_dag_text(np.random.default_rng(seed)))
    obs = build_observer(m)
    if obs.initial in obs.revealing:
        return
    safe = build_safe_observer(obs)
    truth = runs_by_projection(m, m.n + 1)
    for w, ests in truth.items():
        every_prefix_safe = all(not (truth[w[:k]] <= m.secret) for k in range(len(w) + 1))
        assert safe.accepts(w) == every_prefix_safe
        if safe.accepts(w):
            assert all(safe.accepts(w[:k]) for k in range(len(w)))
