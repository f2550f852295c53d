"""Shared fixtures: the routing-network model, its reference solution and
random model generators."""
from __future__ import annotations

import itertools
from importlib import resources

import numpy as np

from cosynth.model import parse_model
from cosynth.synthesis import build_game, scheduler_from_labels

REFERENCE_VALUATION = {
    "v1": 0.3501, "v2": 0.3501, "v3": 0.2998,
    "v4": 0.5, "v5": 0.5, "v6": 0.5, "v7": 0.5,
}

EPS = 1e-5
# grouped masses are split evenly inside each group
REFERENCE_TABLE = {
    "(0,0),b": {"abc": EPS / 3, "cac": EPS / 3, "cba": EPS / 3,
                "c": 0.5 - EPS, "a": 0.5 - EPS, "ε": EPS},
    "(0,0),c": {"ab": EPS / 2, "ca": EPS / 2, "ε": 1 - EPS},
    "(0,0),a": {"ε": 1 - 2 * EPS, "cb": EPS, "c": EPS},
    "(4,4),b": {"ac": EPS / 2, "ba": EPS / 2, "ε": 1 - EPS},
    "(1,1),b": {"ε": 1 - EPS, "bc": EPS},
}


def network_text() -> str:
    return resources.files("cosynth").joinpath("data/network.psdes").read_text(encoding="utf-8")


def network():
    return parse_model(network_text())


def network_game(m=None):
    return build_game(m or network())


def reference_scheduler(pmdp):
    """Unlisted insertion states put all mass on their first action (ε
    whenever it is available)."""
    return scheduler_from_labels(pmdp, REFERENCE_TABLE)


def random_dag_text(rng: np.random.Generator, max_states: int = 6, unobservable: bool = True) -> str:
    """A random acyclic model with constant probabilities."""
    n = int(rng.integers(2, max_states + 1))
    events = ["a", "b", "u"] if unobservable else ["a", "b"]
    lines = ["psdes", "states " + " ".join(f"q{i}" for i in range(n)),
             "events " + " ".join(events), "observable a b"]
    secret = [f"q{i}" for i in range(n) if rng.random() < 0.3]
    if secret:
        lines.append("secret " + " ".join(secret))
    starts = rng.choice(n - 1, size=int(rng.integers(1, 3)), replace=False) if n > 2 else [0]
    w = rng.dirichlet(np.ones(len(starts)))
    for s, p in zip(starts, w):
        lines.append(f"init q{s} {float(p)!r}")
    for i in range(n - 1):
        pairs = [(e, j) for e in events for j in range(i + 1, n)]
        k = int(rng.integers(0, min(3, len(pairs)) + 1))
        if k == 0:
            continue
        chosen = [pairs[t] for t in rng.choice(len(pairs), size=k, replace=False)]
        probs = rng.dirichlet(np.ones(k))
        for (e, j), p in zip(chosen, probs):
            lines.append(f"trans q{i} {e} q{j} : {float(p)!r}")
    return "\n".join(lines) + "\n"


def random_tree_text(rng: np.random.Generator, max_states: int = 8) -> str:
    """A random tree-shaped parametric model, fully observable, with one
    parameter per branch of every branching state (the routing-network shape)."""
    n = int(rng.integers(3, max_states + 1))
    children: dict[int, list[int]] = {i: [] for i in range(n)}
    for j in range(1, n):
        parent = int(rng.integers(0, j))
        if len(children[parent]) >= 3:
            parent = next(p for p in range(j) if len(children[p]) < 3)
        children[parent].append(j)
    lines = ["psdes", "states " + " ".join(f"q{i}" for i in range(n)),
             "events a b c", "observable a b c", "init q0 1"]
    params, trans = [], []
    counter = itertools.count(1)
    for i, kids in children.items():
        evs = rng.permutation(["a", "b", "c"])
        for e, j in zip(evs, kids):
            if len(kids) == 1:
                trans.append(f"trans q{i} {e} q{j}")
            else:
                v = f"v{next(counter)}"
                params.append(v)
                trans.append(f"trans q{i} {e} q{j} : {v}")
    leaves = [i for i in range(n) if not children[i]]
    inner = [i for i in range(1, n) if children[i]]
    secret = [f"q{i}" for i in range(1, n) if rng.random() < 0.3]
    if secret:
        lines.append("secret " + " ".join(secret))
    avoid = [f"q{i}" for i in leaves + inner if rng.random() < 0.2]
    if avoid:
        lines.append("avoid " + " ".join(avoid))
    if params:
        lines.append("param " + " ".join(params))
    return "\n".join(lines + trans) + "\n"


def runs_by_projection(m, depth):
    """Observed string -> set of end states, by enumerating every run."""
    out: dict[tuple, set] = {}

    def walk(q, proj, d):
        out.setdefault(proj, set()).add(q)
        if d == depth:
            return
        for e, q2, _ in m.outgoing(q):
            walk(q2, proj + ((e,) if e in m.observable else ()), d + 1)

    for q in m.initial_support:
        walk(q, (), 0)
    return out
