"""Observer (subset) construction, current-state opacity and the safe observer."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .model import PsdesModel

__all__ = [
    "CsoVerdict",
    "Observer",
    "SecretRevealedAtStart",
    "build_observer",
    "build_safe_observer",
    "check_cso",
    "estimate_label",
    "project",
    "unobservable_closure",
]

Estimate = frozenset


class SecretRevealedAtStart(ValueError):
    """The intruder's initial estimate already lies inside the secret set."""


def project(word: Sequence[str], m: PsdesModel) -> tuple[str, ...]:
    """Natural projection onto the observable events."""
    out = []
    for e in word:
        if e not in m.events:
            raise ValueError(f"unknown event {e!r}")
        if e in m.observable:
            out.append(e)
    return tuple(out)


def unobservable_closure(m: PsdesModel, states: Iterable[str]) -> frozenset[str]:
    seen = set(states)
    todo = list(seen)
    while todo:
        q = todo.pop()
        for e, q2, _ in m.outgoing(q):
            if e not in m.observable and q2 not in seen:
                seen.add(q2)
                todo.append(q2)
    return frozenset(seen)


def estimate_label(est: Iterable[str], order: Mapping[str, int] | None = None) -> str:
    items = sorted(est, key=(lambda q: order[q]) if order else None)
    if len(items) == 1:
        return items[0]
    return "{" + ",".join(items) + "}"


@dataclass(frozen=True, eq=False)
class Observer:
    """Deterministic estimate automaton over the observable alphabet.

    ``nodes`` are listed in breadth-first discovery order, which also fixes
    export order.
    """

    alphabet: tuple[str, ...]
    nodes: tuple[Estimate, ...]
    initial: Estimate
    edges: Mapping[tuple[Estimate, str], Estimate]
    revealing: frozenset
    state_order: Mapping[str, int] = field(default_factory=dict, repr=False)
    safe: bool = False

    def step(self, node: Estimate, event: str) -> Estimate | None:
        return self.edges.get((node, event))

    def run(self, word: Sequence[str], start: Estimate | None = None) -> Estimate | None:
        node = self.initial if start is None else start
        for e in word:
            node = self.edges.get((node, e))
            if node is None:
                return None
        return node

    def accepts(self, word: Sequence[str]) -> bool:
        return self.run(word) is not None

    def successors(self, node: Estimate) -> list[tuple[str, Estimate]]:
        return [(e, self.edges[(node, e)]) for e in self.alphabet if (node, e) in self.edges]

    def label(self, node: Estimate) -> str:
        return estimate_label(node, self.state_order)


def build_observer(m: PsdesModel) -> Observer:
    order = m.index
    obs_events = m.observable_events
    initial = unobservable_closure(m, m.initial_support)
    nodes = [initial]
    seen = {initial}
    edges = {}
    queue = deque([initial])
    while queue:
        node = queue.popleft()
        for e in obs_events:
            targets = {
                q2
                for q in sorted(node, key=order.get)
                for e2, q2, _ in m.outgoing(q)
                if e2 == e
            }
            if not targets:
                continue
            nxt = unobservable_closure(m, targets)
            edges[(node, e)] = nxt
            if nxt not in seen:
                seen.add(nxt)
                nodes.append(nxt)
                queue.append(nxt)
    revealing = frozenset(n for n in nodes if n and n <= m.secret)
    return Observer(obs_events, tuple(nodes), initial, edges, revealing, dict(order))


@dataclass(frozen=True)
class CsoVerdict:
    opaque: bool
    witnesses: tuple[tuple[str, ...], ...]

    def __str__(self) -> str:
        if self.opaque:
            return "opaque"
        shown = ", ".join("".join(w) if all(len(e) == 1 for e in w) else " ".join(w)
                          for w in self.witnesses)
        return f"not opaque; witnesses: {shown}"


def _shortest_words(obs: Observer) -> dict[Estimate, tuple[str, ...]]:
    words = {obs.initial: ()}
    queue = deque([obs.initial])
    while queue:
        node = queue.popleft()
        for e, nxt in obs.successors(node):
            if nxt not in words:
                words[nxt] = words[node] + (e,)
                queue.append(nxt)
    return words


def check_cso(obs: Observer) -> CsoVerdict:
    """Opaque iff no reachable estimate lies wholly in the secret set; else
    the shortest observed string reaching each revealing estimate."""
    if not obs.revealing:
        return CsoVerdict(True, ())
    words = _shortest_words(obs)
    ws = sorted(
        (words[n] for n in obs.revealing),
        key=lambda w: (len(w), [obs.alphabet.index(e) for e in w]),
    )
    return CsoVerdict(False, tuple(ws))


def build_safe_observer(obs: Observer) -> Observer:
    """Drop revealing estimates; what is left accepts exactly the observed
    strings whose every prefix keeps the secret hidden."""
    if obs.initial in obs.revealing:
        raise SecretRevealedAtStart("secret revealed at start: initial estimate is all secret")
    keep_edges = {
        k: v for k, v in obs.edges.items() if k[0] not in obs.revealing and v not in obs.revealing
    }
    reach = {obs.initial}
    queue = deque([obs.initial])
    while queue:
        node = queue.popleft()
        for e in obs.alphabet:
            nxt = keep_edges.get((node, e))
            if nxt is not None and nxt not in reach:
                reach.add(nxt)
                queue.append(nxt)
    nodes = tuple(n for n in obs.nodes if n in reach)
    edges = {k: v for k, v in keep_edges.items() if k[0] in reach}
    return Observer(obs.alphabet, nodes, obs.initial, edges, frozenset(), obs.state_order, True)
