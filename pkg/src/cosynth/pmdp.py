"""All-insertion parametric MDP.

The MDP alternates between *system states*, where the model emits its next
observable event with a parametric probability, and *insertion states*,
where the defender picks a string of fabricated observable events to show
the intruder before the real event.  An insertion state with no action that
keeps the intruder's estimate out of the secret set is blocking; blocking
states form the sink set.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .model import PsdesModel, event_matrices
from .observer import Observer, estimate_label
from .posy import NotPosynomialError, Posynomial, matrix_star, posy_divide

__all__ = [
    "BOTTOM",
    "GpIncompatibleModel",
    "InsertionPmdp",
    "InsertionState",
    "SystemState",
    "build_pmdp",
    "enumerate_insertions",
    "format_word",
]

BOTTOM = "⊥"

Word = tuple[str, ...]


class GpIncompatibleModel(ValueError):
    def __init__(self, message: str, state=None):
        self.state = state
        super().__init__(message)


def format_word(word: Sequence[str]) -> str:
    if not word:
        return "ε"
    if all(len(e) == 1 for e in word):
        return "".join(word)
    return " ".join(word)


@dataclass(frozen=True, eq=False)
class SystemState:
    intruder: frozenset
    system: frozenset
    belief: tuple[Posynomial, ...]
    history: Word

    kind = "system"
    event = None


@dataclass(frozen=True, eq=False)
class InsertionState:
    intruder: frozenset
    system: frozenset
    event: str
    belief: tuple[Posynomial, ...]
    history: Word

    kind = "insertion"


def _simple_paths(safe: Observer, start) -> list[tuple[Word, frozenset]]:
    """Labels and end nodes of every node-repetition-free walk from ``start``."""
    out = [((), start)]

    def walk(node, word, visited):
        for e, nxt in safe.successors(node):
            if nxt in visited:
                continue
            out.append((word + (e,), nxt))
            walk(nxt, word + (e,), visited | {nxt})

    walk(start, (), {start})
    return out


def _word_key(alphabet: Sequence[str]):
    pos = {e: i for i, e in enumerate(alphabet)}
    return lambda w: (len(w), [pos[e] for e in w])


def enumerate_insertions(
    intruder: frozenset, event: str, safe: Observer
) -> dict[Word, frozenset]:
    """Safe insertions before ``event`` when the intruder believes ``intruder``.

    Maps each insertion string to the intruder estimate after the inserted
    string and the real event.  Empty when the state is blocking.
    """
    found = {}
    for word, node in _simple_paths(safe, intruder):
        nxt = safe.step(node, event)
        if nxt is not None:
            found[word] = nxt
    key = _word_key(safe.alphabet)
    return {w: found[w] for w in sorted(found, key=key)}


@dataclass(eq=False)
class InsertionPmdp:
    """Bipartite game graph.

    ``states[0]`` is the initial system state.  ``actions[i]`` lists the
    available actions; ``transitions[(i, action)]`` lists ``(j, prob)``.
    System states carry the single action :data:`BOTTOM` (absent at goal
    states), insertion states carry insertion strings.
    """

    model: PsdesModel
    observer: Observer
    safe: Observer
    states: list
    actions: dict[int, tuple]
    transitions: dict[tuple[int, object], list[tuple[int, Posynomial]]]
    sinks: frozenset[int]
    goals: frozenset[int]

    initial = 0

    def label(self, i: int) -> str:
        s = self.states[i]
        lab = f"({self.observer.label(s.intruder)},{self.observer.label(s.system)})"
        if s.kind == "insertion":
            lab += f",{s.event}"
        return lab

    def find(self, label: str) -> list[int]:
        return [i for i in range(len(self.states)) if self.label(i) == label]

    def is_system(self, i: int) -> bool:
        return self.states[i].kind == "system"

    @property
    def system_states(self) -> list[int]:
        return [i for i, s in enumerate(self.states) if s.kind == "system"]

    @property
    def insertion_states(self) -> list[int]:
        return [i for i, s in enumerate(self.states) if s.kind == "insertion"]

    def successors(self, i: int) -> list[tuple[object, int, Posynomial]]:
        return [(a, j, p) for a in self.actions.get(i, ()) for j, p in self.transitions[(i, a)]]

    def event_successor(self, i: int, event: str) -> int | None:
        for _, j, _ in self.successors(i):
            if self.states[j].event == event:
                return j
        return None

    def equivalent_actions(self, i: int) -> list[tuple[Word, ...]]:
        """Insertion actions at ``i`` grouped by their common successor."""
        groups: dict[int, list] = {}
        for a in self.actions.get(i, ()):
            (j, _), = self.transitions[(i, a)]
            groups.setdefault(j, []).append(a)
        return [tuple(g) for g in groups.values()]

    def can_reach(self, targets: Iterable[int]) -> frozenset[int]:
        """States with a path into ``targets`` (targets included)."""
        preds: dict[int, set[int]] = {}
        for i in range(len(self.states)):
            for _, j, _ in self.successors(i):
                preds.setdefault(j, set()).add(i)
        seen = set(targets)
        todo = list(seen)
        while todo:
            j = todo.pop()
            for i in preds.get(j, ()):
                if i not in seen:
                    seen.add(i)
                    todo.append(i)
        return frozenset(seen)

    def evaluate(self, valuation: Mapping[str, float], scheduler: Mapping | None = None) -> np.ndarray:
        """Transition matrix of the chain induced by ``scheduler`` at
        ``valuation`` (uniform choice where the scheduler is silent)."""
        n = len(self.states)
        p = np.zeros((n, n))
        for i in range(n):
            acts = self.actions.get(i, ())
            for a in acts:
                if a == BOTTOM:
                    w = 1.0
                elif scheduler is not None:
                    w = scheduler.get((i, a), 0.0)
                else:
                    w = 1.0 / len(acts)
                for j, f in self.transitions[(i, a)]:
                    p[i, j] += w * f.evaluate(valuation)
        return p

    def stats(self) -> dict[str, int]:
        return {
            "states": len(self.states),
            "system_states": len(self.system_states),
            "insertion_states": len(self.insertion_states),
            "sinks": len(self.sinks),
            "goals": len(self.goals),
            "insertion_actions": sum(
                len(self.actions.get(i, ())) for i in self.insertion_states
            ),
        }


def _proportional(a: Sequence[Posynomial], b: Sequence[Posynomial]) -> bool:
    na = sum(a, Posynomial())
    nb = sum(b, Posynomial())
    return all((x * nb).isclose(y * na) for x, y in zip(a, b))


def _normalized(belief: tuple[Posynomial, ...]) -> tuple[Posynomial, ...]:
    total = sum(belief, Posynomial())
    if total.is_monomial:
        return tuple(posy_divide(x, total) for x in belief)
    return belief


def build_pmdp(m: PsdesModel, obs: Observer, safe: Observer) -> InsertionPmdp:
    """Unfold the insertion game breadth first.

    From a system state with belief ``pi`` the model emits observable ``e``
    with probability ``|pi P_uo* P_e| / |pi|``; the insertion state it leads
    to then offers every safe insertion, each reaching one system state with
    probability one.  States agreeing on both estimates, the pending event
    and the normalised belief are merged.
    """
    mats, p_uo = event_matrices(m)
    star = matrix_star(p_uo, "auto")
    step = {e: star @ mats[e] for e in m.observable_events}

    states: list = []
    buckets: dict[tuple, list[int]] = {}
    actions: dict[int, tuple] = {}
    transitions: dict[tuple[int, object], list[tuple[int, Posynomial]]] = {}
    queue: deque[int] = deque()

    def intern(state) -> int:
        key = (state.kind, state.intruder, state.system, state.event)
        for i in buckets.get(key, ()):
            if _proportional(states[i].belief, state.belief):
                return i
        states.append(state)
        i = len(states) - 1
        buckets.setdefault(key, []).append(i)
        queue.append(i)
        return i

    intern(SystemState(safe.initial, obs.initial, _normalized(m.init_vector()), ()))
    sinks, goals = set(), set()
    while queue:
        i = queue.popleft()
        s = states[i]
        if s.kind == "system":
            mass = sum(s.belief, Posynomial())
            out = []
            for e in m.observable_events:
                post = step[e].rmul_vector(s.belief)
                post_mass = sum(post, Posynomial())
                if post_mass.is_zero:
                    continue
                try:
                    prob = posy_divide(post_mass, mass)
                except NotPosynomialError:
                    raise GpIncompatibleModel(
                        f"probability of {e!r} after observing "
                        f"{format_word(s.history)!r} is ({post_mass})/({mass}), "
                        "which is not a posynomial",
                        state=s,
                    ) from None
                nxt = InsertionState(s.intruder, s.system, e, _normalized(post), s.history + (e,))
                out.append((intern(nxt), prob))
            if out:
                actions[i] = (BOTTOM,)
                transitions[(i, BOTTOM)] = out
            else:
                goals.add(i)
        else:
            options = enumerate_insertions(s.intruder, s.event, safe)
            if not options:
                sinks.add(i)
                continue
            system_next = obs.step(s.system, s.event)
            acts = []
            for word, intruder_next in options.items():
                j = intern(SystemState(intruder_next, system_next, s.belief, s.history))
                acts.append(word)
                transitions[(i, word)] = [(j, Posynomial.one())]
            actions[i] = tuple(acts)

    return InsertionPmdp(
        model=m,
        observer=obs,
        safe=safe,
        states=states,
        actions=actions,
        transitions=transitions,
        sinks=frozenset(sinks),
        goals=frozenset(goals),
    )
