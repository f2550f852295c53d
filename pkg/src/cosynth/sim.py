"""Monte Carlo estimates of revelation and avoid-set probabilities.

All runs advance together as numpy arrays.  Randomness comes from a
counter-based hash of ``(seed, run, step, slot)``, so a run's draws do not
depend on how many other runs share the batch or in what order they are
processed.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .model import PsdesModel
from .observer import Observer
from .pmdp import BOTTOM, InsertionPmdp
from .synthesis import check_scheduler

__all__ = ["SimConfig", "SimReport", "default_max_steps", "simulate", "uniforms"]

_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _mix(x: np.ndarray) -> np.ndarray:
    """splitmix64 finaliser, vectorised over uint64 arrays."""
    x = x + _GOLDEN
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def uniforms(seed: int, runs: np.ndarray, step: int, slot: int) -> np.ndarray:
    """One uniform in [0, 1) per entry of ``runs`` for the given step and slot."""
    with np.errstate(over="ignore"):
        key = _mix(np.full(1, seed & 0xFFFFFFFFFFFFFFFF, dtype=np.uint64))
        key = _mix(key ^ np.uint64(step & 0xFFFFFFFF) << np.uint64(8) ^ np.uint64(slot))
        x = _mix(key ^ _mix(runs.astype(np.uint64)))
    return (x >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


@dataclass(frozen=True)
class SimConfig:
    runs: int
    seed: int = 0
    max_steps: int | None = None
    first_run: int = 0

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be at least 1")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")


@dataclass(frozen=True)
class SimReport:
    runs: int
    completed: int
    truncated: int
    reveal_count: int
    reach_d_count: int

    @property
    def reveal_freq(self) -> float:
        return self.reveal_count / self.completed if self.completed else math.nan

    @property
    def reach_d_freq(self) -> float:
        return self.reach_d_count / self.completed if self.completed else math.nan

    def _se(self, p: float) -> float:
        return math.sqrt(p * (1.0 - p) / self.completed) if self.completed else math.nan

    @property
    def reveal_se(self) -> float:
        return self._se(self.reveal_freq)

    @property
    def reach_d_se(self) -> float:
        return self._se(self.reach_d_freq)

    def __add__(self, other: "SimReport") -> "SimReport":
        return SimReport(
            self.runs + other.runs,
            self.completed + other.completed,
            self.truncated + other.truncated,
            self.reveal_count + other.reveal_count,
            self.reach_d_count + other.reach_d_count,
        )

    def to_dict(self) -> dict:
        return {
            "runs": self.runs,
            "completed": self.completed,
            "truncated": self.truncated,
            "reveal_freq": self.reveal_freq,
            "reveal_se": self.reveal_se,
            "reach_d_freq": self.reach_d_freq,
            "reach_d_se": self.reach_d_se,
        }

    def to_text(self) -> str:
        return "\n".join([
            f"runs: {self.runs} (completed {self.completed}, truncated {self.truncated})",
            f"revelation frequency: {self.reveal_freq:.6f} ± {self.reveal_se:.6f}",
            f"avoid-set frequency:  {self.reach_d_freq:.6f} ± {self.reach_d_se:.6f}",
        ])


def _longest_string(obs: Observer) -> int:
    depth: dict = {}

    def walk(node, stack):
        if node in depth:
            return depth[node]
        if node in stack:
            raise ValueError("observer has a cycle; observed strings are unbounded")
        stack.add(node)
        best = max((1 + walk(n, stack) for _, n in obs.successors(node)), default=0)
        stack.discard(node)
        depth[node] = best
        return best

    return walk(obs.initial, set())


def default_max_steps(pmdp: InsertionPmdp) -> int:
    return 10 * max(1, _longest_string(pmdp.observer))


def _cumulative(rows: list[list[float]]) -> np.ndarray:
    width = max((len(r) for r in rows), default=0)
    out = np.full((len(rows), max(width, 1)), np.inf)
    for i, r in enumerate(rows):
        if r:
            c = np.cumsum(r)
            out[i, : len(r)] = c / c[-1]
            out[i, len(r) - 1] = np.inf  # absorb rounding in the last bucket
    return out


def _pick(cum: np.ndarray, rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    return (u[:, None] >= cum[rows]).sum(axis=1)


def simulate(
    m: PsdesModel,
    pmdp: InsertionPmdp,
    valuation: Mapping[str, float],
    scheduler: Mapping,
    cfg: SimConfig,
) -> SimReport:
    """Sample runs of the model under the insertion scheduler.

    A run reveals the secret when a real event leads to a blocking
    insertion state.  Every visit to the avoid set counts, also after
    revelation.  Runs still live after ``max_steps`` model steps are
    counted as truncated and excluded from the frequencies.
    """
    check_scheduler(pmdp, scheduler)
    max_steps = cfg.max_steps or default_max_steps(pmdp)
    n = m.n
    ev_index = {e: k for k, e in enumerate(m.events)}
    observable = np.array([e in m.observable for e in m.events])

    # model transitions per state
    probs, tgt, evs = [], [], []
    for q in m.states:
        out = m.outgoing(q)
        probs.append([f.evaluate(valuation) for _, _, f in out])
        tgt.append([m.index[q2] for _, q2, _ in out])
        evs.append([ev_index[e] for e, _, _ in out])
    live_row = np.array([bool(r) for r in probs])
    width = max(max((len(r) for r in tgt), default=0), 1)
    cum_q = _cumulative(probs)
    tgt_q = np.zeros((n, width), dtype=np.int64)
    ev_q = np.zeros((n, width), dtype=np.int64)
    for i in range(n):
        tgt_q[i, : len(tgt[i])] = tgt[i]
        ev_q[i, : len(evs[i])] = evs[i]

    # PMDP: system state x event -> insertion state, insertion state -> actions
    ns = len(pmdp.states)
    ins_of = np.full((ns, len(m.events)), -1, dtype=np.int64)
    for i in pmdp.system_states:
        for j, _ in pmdp.transitions.get((i, BOTTOM), []):
            ins_of[i, ev_index[pmdp.states[j].event]] = j
    is_sink = np.zeros(ns, dtype=bool)
    is_sink[list(pmdp.sinks)] = True
    act_w, act_t = [], []
    for i in range(ns):
        acts = pmdp.actions.get(i, ()) if not pmdp.is_system(i) else ()
        act_w.append([scheduler.get((i, a), 0.0) for a in acts])
        act_t.append([pmdp.transitions[(i, a)][0][0] for a in acts])
    cum_a = _cumulative(act_w)
    aw = max(max((len(r) for r in act_t), default=0), 1)
    tgt_a = np.zeros((ns, aw), dtype=np.int64)
    for i, r in enumerate(act_t):
        tgt_a[i, : len(r)] = r

    runs = np.arange(cfg.first_run, cfg.first_run + cfg.runs, dtype=np.int64)
    init_states = [q for q in m.states if m.init.get(q, 0) > 0]
    cum_init = _cumulative([[m.init[q] for q in init_states]])
    pick0 = _pick(cum_init, np.zeros(cfg.runs, dtype=np.int64), uniforms(cfg.seed, runs, 0, 2))
    q = np.array([m.index[init_states[k]] for k in range(len(init_states))])[pick0]
    ps = np.full(cfg.runs, pmdp.initial, dtype=np.int64)  # -1 once revealed
    avoid = np.array([s in m.avoid for s in m.states])
    hit_d = avoid[q].copy()
    active = live_row[q]

    step = 0
    while active.any() and step < max_steps:
        idx = np.flatnonzero(active)
        k = _pick(cum_q, q[idx], uniforms(cfg.seed, runs[idx], step, 0))
        qs = q[idx]
        e = ev_q[qs, k]
        q[idx] = tgt_q[qs, k]
        hit_d[idx] |= avoid[q[idx]]
        obs_run = observable[e] & (ps[idx] >= 0)
        if obs_run.any():
            j = idx[obs_run]
            ins = ins_of[ps[j], e[obs_run]]
            if np.any(ins < 0):
                raise RuntimeError("sampled event is missing from the game graph")
            blocked = is_sink[ins]
            ps[j[blocked]] = -1
            go = j[~blocked]
            if go.size:
                a = _pick(cum_a, ins[~blocked], uniforms(cfg.seed, runs[go], step, 1))
                ps[go] = tgt_a[ins[~blocked], a]
        active = live_row[q]
        step += 1

    truncated = int(active.sum())
    if truncated:
        warnings.warn(f"{truncated} runs exceeded {max_steps} steps and were excluded")
    done = ~active
    return SimReport(
        runs=cfg.runs,
        completed=int(done.sum()),
        truncated=truncated,
        reveal_count=int((ps[done] < 0).sum()),
        reach_d_count=int(hit_d[done].sum()),
    )
