"""Probability that the intruder's estimate ever falls inside the secret set."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .model import PsdesModel
from .observer import Observer, build_observer

__all__ = [
    "DepthInsufficient",
    "OpacityReport",
    "StochasticityError",
    "absorption_probability",
    "brute_force_opacity",
    "quantify_opacity",
]


class StochasticityError(ValueError):
    """A valuation under which some row is neither a sink nor stochastic."""


class DepthInsufficient(RuntimeError):
    pass


@dataclass(frozen=True)
class OpacityReport:
    p_reveal: float
    p_cso: float
    revealing_strings: tuple[tuple[str, ...], ...] = ()
    residual: float = 0.0


def check_stochastic(m: PsdesModel, valuation: Mapping[str, float], tol: float = 1e-6) -> np.ndarray:
    a = m.transition_array(valuation)
    sums = a.sum(axis=1)
    for q, s in zip(m.states, sums):
        if s != 0 and abs(s - 1.0) > tol:
            raise StochasticityError(f"row {q} sums to {s:.12g} at the given valuation")
    return a


def absorption_probability(
    p: np.ndarray, targets: np.ndarray
) -> tuple[np.ndarray, float]:
    """Probability of eventually hitting ``targets`` from every state of the
    substochastic chain ``p`` (targets absorbing).  Returns the vector and
    the residual of the solved linear system."""
    n = p.shape[0]
    targets = np.asarray(targets, dtype=bool)
    x = np.zeros(n)
    x[targets] = 1.0
    # states with a path into the targets
    can = targets.copy()
    adj = p > 0
    changed = True
    while changed:
        new = can | (adj[:, can].any(axis=1) & ~targets)
        changed = bool((new != can).any())
        can = new
    unknown = can & ~targets
    if not unknown.any():
        return x, 0.0
    idx = np.flatnonzero(unknown)
    a = np.eye(len(idx)) - p[np.ix_(idx, idx)]
    b = p[np.ix_(idx, np.flatnonzero(targets))].sum(axis=1)
    sol = np.linalg.solve(a, b)
    residual = float(np.max(np.abs(a @ sol - b), initial=0.0))
    x[idx] = sol
    return np.clip(x, 0.0, 1.0), residual


def _first_reveal_strings(obs: Observer, limit: int = 1000) -> tuple[tuple[str, ...], ...]:
    out: list[tuple[str, ...]] = []
    if obs.initial in obs.revealing:
        return ((),)

    def walk(node, word, depth):
        if len(out) >= limit or depth > len(obs.nodes):
            return
        for e, nxt in obs.successors(node):
            if nxt in obs.revealing:
                out.append(word + (e,))
            else:
                walk(nxt, word + (e,), depth + 1)

    walk(obs.initial, (), 0)
    return tuple(out)


def quantify_opacity(
    m: PsdesModel, valuation: Mapping[str, float] | None = None, obs: Observer | None = None
) -> OpacityReport:
    """Compose the evaluated chain with the observer, make revealing
    estimates absorbing and solve for the absorption probability."""
    valuation = valuation or {}
    check_stochastic(m, valuation)
    obs = obs or build_observer(m)
    node_id = {n: i for i, n in enumerate(obs.nodes)}
    # product states (model state, observer node) reachable from the start
    start = [(m.index[q], node_id[obs.initial]) for q in m.states if m.init.get(q, 0) > 0]
    pid: dict[tuple[int, int], int] = {}
    order = []
    for s in start:
        if s not in pid:
            pid[s] = len(order)
            order.append(s)
    edges: list[tuple[int, int, float]] = []
    k = 0
    while k < len(order):
        qi, ni = order[k]
        node = obs.nodes[ni]
        if node not in obs.revealing:
            for e, q2, f in m.outgoing(m.states[qi]):
                if e in m.observable:
                    nxt = obs.step(node, e)
                    tgt = (m.index[q2], node_id[nxt])
                else:
                    tgt = (m.index[q2], ni)
                if tgt not in pid:
                    pid[tgt] = len(order)
                    order.append(tgt)
                edges.append((k, pid[tgt], f.evaluate(valuation)))
        k += 1
    n = len(order)
    p = np.zeros((n, n))
    for a, b, w in edges:
        p[a, b] += w
    targets = np.array([obs.nodes[ni] in obs.revealing for _, ni in order])
    x, residual = absorption_probability(p, targets)
    p_reveal = math.fsum(m.init[m.states[qi]] * x[pid[(qi, ni)]] for qi, ni in start)
    p_reveal = min(max(p_reveal, 0.0), 1.0)
    return OpacityReport(p_reveal, 1.0 - p_reveal, _first_reveal_strings(obs), residual)


def brute_force_opacity(
    m: PsdesModel, valuation: Mapping[str, float] | None, depth: int
) -> OpacityReport:
    """Enumerate every run up to ``depth`` steps.

    Estimates are taken straight from the definition: the estimate after an
    observed string is the set of end states of all runs projecting onto it.
    """
    valuation = valuation or {}
    obs_set = m.observable
    runs: list[tuple[tuple[str, ...], str, float, tuple[str, ...]]] = []
    estimate: dict[tuple[str, ...], set[str]] = {}

    def extend(q, seq, prob, proj, d):
        runs.append((seq, q, prob, proj))
        estimate.setdefault(proj, set()).add(q)
        out = m.outgoing(q)
        if not out:
            return
        if d == depth:
            raise DepthInsufficient(f"run {' '.join(seq) or 'ε'} is still live after {depth} steps")
        for e, q2, f in out:
            p2 = prob * f.evaluate(valuation)
            extend(q2, seq + (e,), p2, proj + ((e,) if e in obs_set else ()), d + 1)

    for q in m.states:
        if m.init.get(q, 0) > 0:
            extend(q, (), m.init[q], (), 0)

    def reveals(proj):
        est = estimate[proj]
        return bool(est) and est <= m.secret

    revealed = set()
    total = 0.0
    if reveals(()):
        return OpacityReport(1.0, 0.0, ((),))
    # a run reveals at its last event iff that event is observable and
    # the shortened projection did not reveal already
    terms = []
    for seq, q, prob, proj in runs:
        if not seq or seq[-1] not in obs_set:
            continue
        if not reveals(proj):
            continue
        if any(reveals(proj[:k]) for k in range(len(proj))):
            continue
        terms.append(prob)
        revealed.add(proj)
    total = math.fsum(terms)
    total = min(max(total, 0.0), 1.0)
    ordered = tuple(sorted(revealed, key=lambda w: (len(w), w)))
    return OpacityReport(total, 1.0 - total, ordered)
