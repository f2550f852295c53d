"""Parameter and insertion-strategy co-synthesis as a geometric program.

Decision variables are the model parameters ``v``, one scheduler weight
``mu`` per insertion action, upper bounds ``po`` on the probability of
reaching a blocking insertion state, and upper bounds ``pt`` on the
probability of reaching the avoid set.  The objective ``sum 1/v + sum 1/mu``
pushes every parameter row and every scheduler row to sum to one.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import __version__
from .gp import GpConstraint, GpProblem, GpSolution, GpVariable, SolverOptions, solve_gp
from .model import PsdesModel, check_assumptions_at
from .observer import build_observer, build_safe_observer
from .opacity import absorption_probability
from .pmdp import BOTTOM, InsertionPmdp, build_pmdp, format_word
from .posy import Posynomial

__all__ = [
    "InfeasibleByConstruction",
    "Scheduler",
    "SchedulerError",
    "SynthesisResult",
    "SynthesisSpec",
    "VerificationReport",
    "attach_verification",
    "build_game",
    "check_scheduler",
    "determinize_scheduler",
    "encode_program",
    "normalize_scheduler",
    "reach_avoid_probability",
    "reveal_probability",
    "scheduler_from_labels",
    "synthesize",
    "verify_solution",
]

Scheduler = dict  # (insertion state index, inserted word) -> probability

SCHEDULER_TOL = 1e-9
VERIFY_TOL = 1e-9


class InfeasibleByConstruction(ValueError):
    """The thresholds cannot be met whatever the parameters and scheduler."""


class SchedulerError(ValueError):
    pass


@dataclass(frozen=True)
class SynthesisSpec:
    gamma: float
    lam: float
    param_floor: float = 1e-6
    mu_floor: float = 1e-8

    def __post_init__(self):
        for name, x in (("gamma", self.gamma), ("lambda", self.lam)):
            if not 0.0 <= x <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {x}")
        if not (self.param_floor > 0 and self.mu_floor > 0):
            raise ValueError("floors must be positive")


# --------------------------------------------------------------------------
# encoding


@dataclass
class Encoding:
    """The program plus the maps from PMDP/model objects to variable names."""

    problem: GpProblem
    params: tuple[str, ...]
    mu: dict[tuple[int, tuple], str]
    po: dict[int, str]
    pt: dict[str, str]


def _prefixes(params) -> tuple[str, str, str]:
    pre = ""
    while any(p.startswith(pre + x) for p in params for x in ("mu_", "po_", "pt_")):
        pre += "_"
    return pre + "mu_", pre + "po_", pre + "pt_"


def _model_reach(m: PsdesModel, targets) -> set[str]:
    """States with a path into ``targets`` (targets included)."""
    seen = set(targets)
    changed = True
    while changed:
        changed = False
        for (q, _, q2) in m.trans:
            if q2 in seen and q not in seen:
                seen.add(q)
                changed = True
    return seen


def _model_forward(m: PsdesModel, stop=frozenset()) -> set[str]:
    """States reachable from the initial support without passing through ``stop``."""
    seen = set(m.initial_support)
    todo = [q for q in seen if q not in stop]
    while todo:
        q = todo.pop()
        for _, q2, _ in m.outgoing(q):
            if q2 in stop:
                seen.add(q2)
                continue
            if q2 not in seen:
                seen.add(q2)
                todo.append(q2)
    return seen


def encode_program(pmdp: InsertionPmdp, m: PsdesModel, spec: SynthesisSpec) -> Encoding:
    mu_pre, po_pre, pt_pre = _prefixes(m.params)
    sinks = pmdp.sinks
    to_sink = pmdp.can_reach(sinks)
    if spec.gamma >= 1.0 and pmdp.initial in to_sink:
        raise InfeasibleByConstruction(
            "infeasible by construction: gamma = 1 but a blocking insertion state is reachable"
        )
    to_avoid = _model_reach(m, m.avoid) & _model_forward(m, m.avoid)
    if spec.lam <= 0.0 and to_avoid & set(m.initial_support):
        raise InfeasibleByConstruction(
            "infeasible by construction: lambda = 0 but the avoid set is reachable"
        )

    mu = {}
    for i in pmdp.insertion_states:
        for k, a in enumerate(pmdp.actions.get(i, ())):
            mu[(i, a)] = f"{mu_pre}{i}_{k}"
    po = {i: f"{po_pre}{i}" for i in sorted(to_sink - sinks)}
    pt = {q: f"{pt_pre}{m.index[q]}" for q in m.states if q in to_avoid and q not in m.avoid}

    def po_of(j: int) -> Posynomial:
        if j in sinks:
            return Posynomial.one()
        if j in po:
            return Posynomial.var(po[j])
        return Posynomial.zero()

    def pt_of(q: str) -> Posynomial:
        if q in m.avoid:
            return Posynomial.one()
        if q in pt:
            return Posynomial.var(pt[q])
        return Posynomial.zero()

    cons: list[GpConstraint] = []
    root = pmdp.initial
    if root in po:
        cons.append(GpConstraint(Posynomial.var(po[root]) * (1.0 / (1.0 - spec.gamma)), "opacity"))
    q0 = m.initial_state
    if q0 in pt:
        cons.append(GpConstraint(Posynomial.var(pt[q0]) * (1.0 / spec.lam), "task"))

    for i in pmdp.insertion_states:
        acts = pmdp.actions.get(i, ())
        if not acts:
            continue
        lab = pmdp.label(i)
        total = Posynomial()
        for a in acts:
            x = Posynomial.var(mu[(i, a)])
            total = total + x
            cons.append(GpConstraint(x, f"sched-cap:{i} {lab} {format_word(a)}"))
        cons.append(GpConstraint(total, f"sched-sum:{i} {lab}"))

    for i in pmdp.system_states:
        succ = pmdp.transitions.get((i, BOTTOM), [])
        total = sum((f for _, f in succ), Posynomial())
        if not total.is_constant:
            cons.append(GpConstraint(total, f"mass-sum:{i} {pmdp.label(i)}"))
        for j, f in succ:
            if not f.is_constant:
                cons.append(GpConstraint(f, f"mass-cap:{i}->{j}"))

    for i, name in po.items():
        rhs = Posynomial()
        for a in pmdp.actions.get(i, ()):
            w = Posynomial.one() if a == BOTTOM else Posynomial.var(mu[(i, a)])
            for j, f in pmdp.transitions[(i, a)]:
                rhs = rhs + w * f * po_of(j)
        cons.append(GpConstraint(rhs * Posynomial.var(name, -1.0), f"po:{i} {pmdp.label(i)}"))

    used: set[str] = set()
    for q in m.states:
        s = m.row_sum(q)
        if s.is_constant:
            continue
        used |= s.variables
        cons.append(GpConstraint(s, f"row:{q}"))

    for q, name in pt.items():
        rhs = sum((f * pt_of(q2) for _, q2, f in m.outgoing(q)), Posynomial())
        cons.append(GpConstraint(rhs * Posynomial.var(name, -1.0), f"pt:{q}"))

    variables = [
        GpVariable(v, spec.param_floor, None if v in used else 1.0) for v in m.params
    ]
    variables += [GpVariable(x, spec.mu_floor) for x in mu.values()]
    variables += [GpVariable(x) for x in po.values()]
    variables += [GpVariable(x) for x in pt.values()]

    objective = sum(
        (Posynomial.var(x, -1.0) for x in (*m.params, *mu.values())), Posynomial()
    )
    if objective.is_zero:
        objective = Posynomial.one()
    problem = GpProblem(tuple(variables), objective, tuple(cons))
    return Encoding(problem, tuple(m.params), mu, po, pt)


# --------------------------------------------------------------------------
# schedulers


def normalize_scheduler(pmdp: InsertionPmdp, raw: Mapping) -> Scheduler:
    out = {}
    for i in pmdp.insertion_states:
        acts = pmdp.actions.get(i, ())
        total = math.fsum(raw.get((i, a), 0.0) for a in acts)
        if acts and total <= 0:
            raise SchedulerError(f"scheduler not well-defined: no mass at {pmdp.label(i)}")
        for a in acts:
            out[(i, a)] = raw.get((i, a), 0.0) / total
    return out


def check_scheduler(pmdp: InsertionPmdp, scheduler: Mapping, tol: float = SCHEDULER_TOL) -> None:
    known = {(i, a) for i in pmdp.insertion_states for a in pmdp.actions.get(i, ())}
    extra = set(scheduler) - known
    if extra:
        i, a = sorted(extra, key=repr)[0]
        raise SchedulerError(f"scheduler not well-defined: unknown action {format_word(a)!r} at state {i}")
    for i in pmdp.insertion_states:
        acts = pmdp.actions.get(i, ())
        if not acts:
            continue
        probs = [scheduler.get((i, a), 0.0) for a in acts]
        if min(probs) < 0:
            raise SchedulerError(f"scheduler not well-defined: negative probability at {pmdp.label(i)}")
        total = math.fsum(probs)
        if abs(total - 1.0) > tol:
            raise SchedulerError(
                f"scheduler not well-defined: mass {total:.12g} at {pmdp.label(i)}"
            )


def determinize_scheduler(scheduler: Mapping, pmdp: InsertionPmdp) -> Scheduler:
    """Keep the most likely action per insertion state; ties go to the
    lexicographically smallest inserted string (the empty string first)."""
    out = {}
    for i in pmdp.insertion_states:
        acts = pmdp.actions.get(i, ())
        if not acts:
            continue
        best = max(scheduler.get((i, a), 0.0) for a in acts)
        pick = min(a for a in acts if scheduler.get((i, a), 0.0) == best)
        for a in acts:
            out[(i, a)] = 1.0 if a == pick else 0.0
    return out


# --------------------------------------------------------------------------
# verification


@dataclass(frozen=True)
class VerificationReport:
    reveal_prob: float
    reach_d: float
    gamma: float
    lam: float
    assumptions_ok: bool
    diagnostics: tuple[str, ...] = ()
    gap_opacity: float | None = None
    gap_task: float | None = None

    @property
    def p_cso(self) -> float:
        return 1.0 - self.reveal_prob

    @property
    def opacity_ok(self) -> bool:
        return self.p_cso >= self.gamma - VERIFY_TOL

    @property
    def task_ok(self) -> bool:
        return self.reach_d <= self.lam + VERIFY_TOL

    @property
    def passed(self) -> bool:
        return self.opacity_ok and self.task_ok and self.assumptions_ok

    def to_dict(self) -> dict:
        return {
            "reveal_prob": self.reveal_prob,
            "p_cso": self.p_cso,
            "reach_d": self.reach_d,
            "gamma": self.gamma,
            "lambda": self.lam,
            "assumptions_ok": self.assumptions_ok,
            "diagnostics": list(self.diagnostics),
            "gap_opacity": self.gap_opacity,
            "gap_task": self.gap_task,
            "passed": self.passed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "VerificationReport":
        return cls(
            d["reveal_prob"], d["reach_d"], d["gamma"], d["lambda"], d["assumptions_ok"],
            tuple(d.get("diagnostics", ())), d.get("gap_opacity"), d.get("gap_task"),
        )

    def to_text(self) -> str:
        lines = [
            f"revelation probability: {self.reveal_prob:.10g}",
            f"opacity probability:    {self.p_cso:.10g} (need >= {self.gamma:g})",
            f"avoid-set probability:  {self.reach_d:.10g} (need <= {self.lam:g})",
        ]
        if self.gap_opacity is not None:
            lines.append(f"opacity bound gap:      {self.gap_opacity:.3g}")
        if self.gap_task is not None:
            lines.append(f"task bound gap:         {self.gap_task:.3g}")
        lines.append(f"assumptions:            {'hold' if self.assumptions_ok else 'violated'}")
        lines.extend(f"  - {d}" for d in self.diagnostics)
        lines.append("verdict: " + ("verified" if self.passed else "NOT verified"))
        return "\n".join(lines)


def reach_avoid_probability(m: PsdesModel, valuation: Mapping[str, float]) -> float:
    if not m.avoid:
        return 0.0
    p = m.transition_array(valuation)
    targets = np.array([q in m.avoid for q in m.states])
    x, _ = absorption_probability(p, targets)
    return min(max(math.fsum(w * x[m.index[q]] for q, w in m.init.items()), 0.0), 1.0)


def reveal_probability(pmdp: InsertionPmdp, valuation: Mapping[str, float], scheduler: Mapping) -> float:
    """Probability that the induced chain ends in a blocking insertion state."""
    p = pmdp.evaluate(valuation, scheduler)
    targets = np.zeros(len(pmdp.states), dtype=bool)
    targets[list(pmdp.sinks)] = True
    x, _ = absorption_probability(p, targets)
    return float(min(max(x[pmdp.initial], 0.0), 1.0))


def verify_solution(
    m: PsdesModel,
    pmdp: InsertionPmdp,
    valuation: Mapping[str, float],
    scheduler: Mapping,
    spec: SynthesisSpec,
    bounds: tuple[float | None, float | None] = (None, None),
) -> VerificationReport:
    """Recompute both probabilities exactly on the induced chains.

    ``bounds`` optionally carries the solver's ``po`` and ``pt`` values at
    the initial states so the report can show how far they overshoot.
    """
    check_scheduler(pmdp, scheduler)
    missing = [v for v in m.params if v not in valuation]
    if missing:
        raise ValueError(f"valuation lacks parameters {missing}")
    low = [v for v in m.params if not valuation[v] >= spec.param_floor]
    if low:
        raise ValueError(
            f"Assumption 2 violated: {', '.join(low)} below the floor {spec.param_floor:g}"
        )
    report = check_assumptions_at(m, valuation)
    reveal = reveal_probability(pmdp, valuation, scheduler)
    reach = reach_avoid_probability(m, valuation)
    po0, pt0 = bounds
    diags = tuple(d for c in report.checks for d in c.diagnostics)
    return VerificationReport(
        reveal, reach, spec.gamma, spec.lam, report.passed, diags,
        None if po0 is None else po0 - reveal,
        None if pt0 is None else pt0 - reach,
    )


# --------------------------------------------------------------------------
# orchestration


@dataclass
class SynthesisResult:
    status: str
    gamma: float
    lam: float
    valuation: dict[str, float] = field(default_factory=dict)
    scheduler: Scheduler = field(default_factory=dict)
    p_o: dict[int, float] = field(default_factory=dict)
    p_t: dict[str, float] = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    verification: VerificationReport | None = None
    state_labels: dict[int, str] = field(default_factory=dict)
    model_digest: str = ""
    version: str = __version__
    message: str = ""

    @property
    def verified(self) -> bool:
        return self.status == "verified"

    @property
    def spec(self) -> SynthesisSpec:
        return SynthesisSpec(self.gamma, self.lam)

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "model_digest": self.model_digest,
            "status": self.status,
            "message": self.message,
            "gamma": self.gamma,
            "lambda": self.lam,
            "valuation": dict(sorted(self.valuation.items())),
            "scheduler": [
                {"state": i, "label": self.state_labels.get(i, ""), "action": list(a), "prob": p}
                for (i, a), p in self.scheduler.items()
            ],
            "p_o": [
                {"state": i, "label": self.state_labels.get(i, ""), "value": v}
                for i, v in sorted(self.p_o.items())
            ],
            "p_t": dict(sorted(self.p_t.items())),
            "solver": self.solver,
            "verification": None if self.verification is None else self.verification.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthesisResult":
        labels = {e["state"]: e["label"] for e in (*d["scheduler"], *d["p_o"])}
        return cls(
            status=d["status"],
            gamma=d["gamma"],
            lam=d["lambda"],
            valuation=dict(d["valuation"]),
            scheduler={(e["state"], tuple(e["action"])): e["prob"] for e in d["scheduler"]},
            p_o={e["state"]: e["value"] for e in d["p_o"]},
            p_t=dict(d["p_t"]),
            solver=dict(d["solver"]),
            verification=None if d["verification"] is None
            else VerificationReport.from_dict(d["verification"]),
            state_labels=labels,
            model_digest=d["model_digest"],
            version=d["version"],
            message=d.get("message", ""),
        )

    @classmethod
    def from_json(cls, text: str) -> "SynthesisResult":
        return cls.from_dict(json.loads(text))


def build_game(m: PsdesModel) -> InsertionPmdp:
    obs = build_observer(m)
    return build_pmdp(m, obs, build_safe_observer(obs))


def _bounds(result: SynthesisResult, pmdp: InsertionPmdp, m: PsdesModel):
    return result.p_o.get(pmdp.initial), result.p_t.get(m.initial_state)


def attach_verification(result: SynthesisResult, m: PsdesModel, pmdp: InsertionPmdp) -> SynthesisResult:
    """(Re)verify ``result`` in place and set its status accordingly."""
    try:
        rep = verify_solution(
            m, pmdp, result.valuation, result.scheduler, result.spec, _bounds(result, pmdp, m)
        )
    except ValueError as exc:
        result.verification = None
        result.status = "solver-feasible-but-unverified"
        result.message = str(exc)
        return result
    result.verification = rep
    result.status = "verified" if rep.passed else "solver-feasible-but-unverified"
    result.message = "" if rep.passed else "verification failed"
    return result


def synthesize(
    m: PsdesModel,
    spec: SynthesisSpec,
    opts: SolverOptions | None = None,
    pmdp: InsertionPmdp | None = None,
) -> SynthesisResult:
    """Encode, solve, normalise the scheduler and verify.

    Status is ``verified``, ``solver-feasible-but-unverified``,
    ``infeasible`` or ``max-iterations``.  Infeasibility only means the
    encoding found nothing; it is not a proof that no solution exists.
    """
    pmdp = pmdp or build_game(m)
    labels = {i: pmdp.label(i) for i in range(len(pmdp.states))}
    result = SynthesisResult("infeasible", spec.gamma, spec.lam, state_labels=labels,
                             model_digest=m.digest())
    try:
        enc = encode_program(pmdp, m, spec)
    except InfeasibleByConstruction as exc:
        result.message = str(exc)
        return result
    if enc.problem.variables:
        sol = solve_gp(enc.problem, opts)
    else:
        sol = GpSolution({}, enc.problem.objective.evaluate({}), "optimal", {})
    result.solver = {
        "status": sol.status,
        "objective": sol.objective_value,
        "iterations": sol.iterations,
        "kkt_residual": None if math.isnan(sol.kkt_residual) else sol.kkt_residual,
        "max_residual": None if not sol.residuals else sol.max_residual,
        "values": dict(sorted(sol.values.items())),
        "message": sol.message,
    }
    if not sol.feasible:
        result.status = sol.status
        result.message = sol.message or f"solver returned {sol.status}"
        return result
    result.valuation = {v: sol.values[v] for v in m.params}
    raw = {key: sol.values[name] for key, name in enc.mu.items()}
    result.scheduler = normalize_scheduler(pmdp, raw)
    result.p_o = {i: sol.values[name] for i, name in enc.po.items()}
    result.p_t = {q: sol.values[name] for q, name in enc.pt.items()}
    return attach_verification(result, m, pmdp)


def scheduler_from_labels(pmdp: InsertionPmdp, table: Mapping[str, Mapping[str, float]]) -> Scheduler:
    """Build a scheduler from ``{state label: {inserted word: prob}}``; states
    not listed get all mass on their first action.  Labels must be unique."""
    sched = {}
    for i in pmdp.insertion_states:
        acts = pmdp.actions.get(i, ())
        if not acts:
            continue
        row = table.get(pmdp.label(i))
        for a in acts:
            if row is None:
                sched[(i, a)] = 1.0 if a == acts[0] else 0.0
            else:
                sched[(i, a)] = float(row.get(format_word(a), 0.0))
    found = {pmdp.label(i) for i in pmdp.insertion_states}
    unknown = set(table) - found
    if unknown:
        raise KeyError(f"no insertion state labelled {sorted(unknown)[0]!r}")
    return sched
