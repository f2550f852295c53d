"""Parametric stochastic discrete-event system models.

Model files are line oriented::

    psdes
    states  0 1 2
    events  a b u
    observable a b
    secret  2
    avoid   1
    init    0 1
    param   v1 v2
    trans   0 a 1 : v1
    trans   0 b 2 : v2
    trans   1 u 2            # probability 1

``#`` starts a comment.  Directives other than ``psdes`` may repeat; list
directives accumulate.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .posy import (
    AssumptionViolation,
    PosyMatrix,
    PosySyntaxError,
    Posynomial,
    format_number,
    matrix_star,
    parse_posynomial,
)

__all__ = [
    "AssumptionCheck",
    "ModelError",
    "ModelSyntaxError",
    "PsdesModel",
    "ValidationReport",
    "check_assumptions_at",
    "event_matrices",
    "parse_model",
    "read_model",
    "sample_valuations",
    "serialize_model",
    "validate_assumptions",
    "with_unique_initial",
]

DEFAULT_PARAM_FLOOR = 1e-6


class ModelError(ValueError):
    """Structurally invalid model."""


class ModelSyntaxError(ModelError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


Triple = tuple[str, str, str]


@dataclass(frozen=True, eq=False)
class PsdesModel:
    states: tuple[str, ...]
    events: tuple[str, ...]
    observable: frozenset[str]
    secret: frozenset[str]
    avoid: frozenset[str]
    init: Mapping[str, float]
    params: tuple[str, ...]
    trans: Mapping[Triple, Posynomial]
    param_floor: float = DEFAULT_PARAM_FLOOR
    dummy_initial: str | None = None
    index: Mapping[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if not self.states:
            raise ModelError("model has no states")
        if len(set(self.states)) != len(self.states):
            raise ModelError("duplicate state names")
        if len(set(self.events)) != len(self.events):
            raise ModelError("duplicate event names")
        if len(set(self.params)) != len(self.params):
            raise ModelError("duplicate parameter names")
        known = set(self.states)
        for label, group in (("secret", self.secret), ("avoid", self.avoid), ("init", self.init)):
            bad = set(group) - known
            if bad:
                raise ModelError(f"{label} mentions undeclared states {sorted(bad)}")
        bad = set(self.observable) - set(self.events)
        if bad:
            raise ModelError(f"observable mentions undeclared events {sorted(bad)}")
        if any(p < 0 for p in self.init.values()):
            raise ModelError("negative initial probability")
        total = math.fsum(self.init.values())
        if abs(total - 1.0) > 1e-9:
            raise ModelError(f"initial distribution sums to {total}, not 1")
        params = set(self.params)
        for (q, e, q2), f in self.trans.items():
            if q not in known or q2 not in known:
                raise ModelError(f"transition {q} {e} {q2} uses an undeclared state")
            if e not in self.events:
                raise ModelError(f"transition {q} {e} {q2} uses undeclared event {e!r}")
            if f.is_zero:
                raise ModelError(f"transition {q} {e} {q2} has zero probability")
            bad = f.variables - params
            if bad:
                raise ModelError(
                    f"transition {q} {e} {q2} uses undeclared parameters {sorted(bad)}"
                )
        if not self.param_floor > 0:
            raise ModelError("parameter floor must be positive")
        object.__setattr__(self, "index", {s: i for i, s in enumerate(self.states)})

    @property
    def n(self) -> int:
        return len(self.states)

    @property
    def unobservable(self) -> frozenset[str]:
        return frozenset(self.events) - self.observable

    @property
    def observable_events(self) -> tuple[str, ...]:
        """Observable events in declaration order."""
        return tuple(e for e in self.events if e in self.observable)

    @property
    def initial_support(self) -> frozenset[str]:
        return frozenset(q for q, p in self.init.items() if p > 0)

    @property
    def initial_state(self) -> str:
        support = [q for q, p in self.init.items() if p > 0]
        if len(support) != 1:
            raise ModelError("model has no unique initial state; apply with_unique_initial")
        return support[0]

    def outgoing(self, q: str) -> list[tuple[str, str, Posynomial]]:
        """``(event, target, probability)`` triples leaving ``q`` in declaration order."""
        return [(e, q2, f) for (q1, e, q2), f in self.trans.items() if q1 == q]

    def row_sum(self, q: str, events: Iterable[str] | None = None) -> Posynomial:
        evs = None if events is None else set(events)
        total = Posynomial()
        for e, _, f in self.outgoing(q):
            if evs is None or e in evs:
                total = total + f
        return total

    def init_vector(self) -> tuple[Posynomial, ...]:
        return tuple(Posynomial.const(self.init.get(q, 0.0)) for q in self.states)

    def transition_array(self, valuation: Mapping[str, float]) -> np.ndarray:
        """Event-summed transition matrix at ``valuation``."""
        a = np.zeros((self.n, self.n))
        for (q, _, q2), f in self.trans.items():
            a[self.index[q], self.index[q2]] += f.evaluate(valuation)
        return a

    def structurally_equal(self, other: "PsdesModel") -> bool:
        return (
            self.states == other.states
            and self.events == other.events
            and self.observable == other.observable
            and self.secret == other.secret
            and self.avoid == other.avoid
            and dict(self.init) == dict(other.init)
            and self.params == other.params
            and dict(self.trans) == dict(other.trans)
        )

    def digest(self) -> str:
        return hashlib.sha256(serialize_model(self).encode("utf-8")).hexdigest()


# --------------------------------------------------------------------------
# parsing


def _fresh(name: str, taken: Iterable[str]) -> str:
    taken = set(taken)
    while name in taken:
        name = "_" + name
    return name


def with_unique_initial(m: PsdesModel) -> PsdesModel:
    """Return ``m`` unchanged if it starts in one state, else add a dummy
    initial state that moves to the original support on an unobservable
    event with the initial probabilities."""
    support = [q for q in m.states if m.init.get(q, 0.0) > 0]
    if len(support) == 1:
        return m
    q0 = _fresh("q_init", m.states)
    e0 = _fresh("init_", m.events)
    trans = dict(m.trans)
    for q in support:
        trans[(q0, e0, q)] = Posynomial.const(m.init[q])
    return PsdesModel(
        states=(q0, *m.states),
        events=(*m.events, e0),
        observable=m.observable,
        secret=m.secret,
        avoid=m.avoid,
        init={q0: 1.0},
        params=m.params,
        trans=trans,
        param_floor=m.param_floor,
        dummy_initial=q0,
    )


_LIST_DIRECTIVES = ("states", "events", "observable", "secret", "avoid", "param")


def parse_model(text: str, *, unique_initial: bool = True) -> PsdesModel:
    """Parse a model file.  A multi-state initial distribution is converted
    to a unique initial state unless ``unique_initial`` is false."""
    lists: dict[str, list[str]] = {k: [] for k in _LIST_DIRECTIVES}
    init: dict[str, float] = {}
    init_lines: dict[str, int] = {}
    trans: dict[Triple, Posynomial] = {}
    trans_lines: dict[Triple, int] = {}
    dummy = None
    seen_header = False

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, _, rest = line.partition(" ")
        rest = rest.strip()
        if not seen_header:
            if line != "psdes":
                raise ModelSyntaxError("file must start with 'psdes'", lineno)
            seen_header = True
            continue
        if head in _LIST_DIRECTIVES:
            lists[head].extend(rest.split())
        elif head == "init":
            parts = rest.split()
            if len(parts) != 2:
                raise ModelSyntaxError("expected 'init <state> <prob>'", lineno)
            try:
                p = float(parts[1])
            except ValueError:
                raise ModelSyntaxError(f"bad probability {parts[1]!r}", lineno) from None
            if not 0 <= p <= 1:
                raise ModelSyntaxError(f"initial probability {p} outside [0, 1]", lineno)
            if parts[0] in init:
                raise ModelSyntaxError(f"duplicate init for state {parts[0]}", lineno)
            init[parts[0]] = p
            init_lines[parts[0]] = lineno
        elif head == "trans":
            lhs, colon, expr = rest.partition(":")
            parts = lhs.split()
            if len(parts) != 3:
                raise ModelSyntaxError("expected 'trans <src> <event> <dst> [: <expr>]'", lineno)
            key = (parts[0], parts[1], parts[2])
            if key in trans:
                raise ModelSyntaxError(f"duplicate transition {' '.join(key)}", lineno)
            if colon:
                try:
                    f = parse_posynomial(expr)
                except PosySyntaxError as exc:
                    raise ModelSyntaxError(str(exc), lineno) from None
            else:
                f = Posynomial.one()
            trans[key] = f
            trans_lines[key] = lineno
        elif head == "dummy":
            dummy = rest or None
        else:
            raise ModelSyntaxError(f"unknown directive {head!r}", lineno)

    if not seen_header:
        raise ModelSyntaxError("empty model file")

    states, events, params = lists["states"], lists["events"], lists["param"]
    for kind, names in (("state", states), ("event", events), ("parameter", params)):
        dup = {x for x in names if names.count(x) > 1}
        if dup:
            raise ModelSyntaxError(f"duplicate {kind} declaration {sorted(dup)}")
    known_s, known_e, known_p = set(states), set(events), set(params)
    for kind, names in (("secret", lists["secret"]), ("avoid", lists["avoid"])):
        for q in names:
            if q not in known_s:
                raise ModelSyntaxError(f"{kind} state {q!r} is not declared")
    for e in lists["observable"]:
        if e not in known_e:
            raise ModelSyntaxError(f"observable event {e!r} is not declared")
    for q, ln in init_lines.items():
        if q not in known_s:
            raise ModelSyntaxError(f"init state {q!r} is not declared", ln)
    for key, ln in trans_lines.items():
        q, e, q2 = key
        for s in (q, q2):
            if s not in known_s:
                raise ModelSyntaxError(f"state {s!r} is not declared", ln)
        if e not in known_e:
            raise ModelSyntaxError(f"event {e!r} is not declared", ln)
        bad = trans[key].variables - known_p
        if bad:
            raise ModelSyntaxError(f"parameter(s) {sorted(bad)} not declared", ln)
    if not init:
        raise ModelSyntaxError("no init directive")
    total = math.fsum(init.values())
    if abs(total - 1.0) > 1e-9:
        raise ModelSyntaxError(f"initial probabilities sum to {total}, not 1")

    try:
        m = PsdesModel(
            states=tuple(states),
            events=tuple(events),
            observable=frozenset(lists["observable"]),
            secret=frozenset(lists["secret"]),
            avoid=frozenset(lists["avoid"]),
            init=init,
            params=tuple(params),
            trans=trans,
            dummy_initial=dummy,
        )
    except ModelError as exc:
        raise ModelSyntaxError(str(exc)) from None
    return with_unique_initial(m) if unique_initial else m


def read_model(path) -> PsdesModel:
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read())


def serialize_model(m: PsdesModel) -> str:
    lines = ["psdes", "states " + " ".join(m.states)]
    if m.events:
        lines.append("events " + " ".join(m.events))
    if m.observable:
        lines.append("observable " + " ".join(m.observable_events))
    if m.secret:
        lines.append("secret " + " ".join(q for q in m.states if q in m.secret))
    if m.avoid:
        lines.append("avoid " + " ".join(q for q in m.states if q in m.avoid))
    for q in m.states:
        if q in m.init:
            lines.append(f"init {q} {format_number(m.init[q])}")
    if m.params:
        lines.append("param " + " ".join(m.params))
    if m.dummy_initial:
        lines.append(f"dummy {m.dummy_initial}")
    for (q, e, q2), f in m.trans.items():
        if f.is_one():
            lines.append(f"trans {q} {e} {q2}")
        else:
            lines.append(f"trans {q} {e} {q2} : {f}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# matrices


def event_matrices(m: PsdesModel) -> tuple[dict[str, PosyMatrix], PosyMatrix]:
    """Per-event transition matrices and their sum over unobservable events."""
    n = m.n
    zero = Posynomial()
    grids = {e: [[zero] * n for _ in range(n)] for e in m.events}
    for (q, e, q2), f in m.trans.items():
        grids[e][m.index[q]][m.index[q2]] = f
    mats = {e: PosyMatrix(g) for e, g in grids.items()}
    p_uo = PosyMatrix.zeros(n)
    for e in m.events:
        if e not in m.observable:
            p_uo = p_uo + mats[e]
    return mats, p_uo


# --------------------------------------------------------------------------
# assumption checks


@dataclass(frozen=True)
class AssumptionCheck:
    number: int
    passed: bool
    sampled: bool = False
    diagnostics: tuple[str, ...] = ()
    witness: tuple[str, ...] | None = None

    @property
    def status(self) -> str:
        if not self.passed:
            return "fail"
        return "sampled pass" if self.sampled else "pass"


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[AssumptionCheck, ...]
    warnings: tuple[str, ...] = ()
    samples: tuple[dict, ...] = ()

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, number: int) -> AssumptionCheck:
        for c in self.checks:
            if c.number == number:
                return c
        raise KeyError(number)

    def to_text(self) -> str:
        out = []
        for c in self.checks:
            out.append(f"assumption {c.number}: {c.status}")
            out.extend(f"  - {d}" for d in c.diagnostics)
        out.extend(f"warning: {w}" for w in self.warnings)
        out.append("overall: " + ("pass" if self.passed else "fail"))
        return "\n".join(out)


def _simplex_groups(m: PsdesModel) -> list[tuple[float, dict[str, float]]]:
    """Rows whose sum is ``c0 + sum_i c_i * v_i`` with each parameter linear.

    Returns ``(c0, {param: c_i})`` for rows where every parameter occurs in
    exactly one such row, so the rows can be sampled as scaled simplices.
    """
    groups = []
    for q in m.states:
        s = m.row_sum(q)
        if s.is_zero or s.is_constant:
            continue
        c0, lin, ok = 0.0, {}, True
        for t in s.terms:
            if t.is_constant:
                c0 += t.coeff
            elif len(t.exponents) == 1 and t.exponents[0][1] == 1.0:
                lin[t.exponents[0][0]] = t.coeff
            else:
                ok = False
        if ok and lin and c0 < 1:
            groups.append((c0, lin))
    counts: dict[str, int] = {}
    for _, lin in groups:
        for v in lin:
            counts[v] = counts.get(v, 0) + 1
    return [(c0, lin) for c0, lin in groups if all(counts[v] == 1 for v in lin)]


def sample_valuations(m: PsdesModel, count: int, seed: int = 0) -> list[dict[str, float]]:
    """Interior valuations, row-stochastic where rows are affine simplices."""
    rng = np.random.default_rng(seed)
    eps = m.param_floor
    groups = _simplex_groups(m)
    grouped = {v for _, lin in groups for v in lin}
    out = []
    for _ in range(count):
        val: dict[str, float] = {}
        for c0, lin in groups:
            names = sorted(lin)
            w = rng.dirichlet(np.ones(len(names)))
            for name, wi in zip(names, w):
                val[name] = float(max(wi * (1.0 - c0) / lin[name], eps))
        for v in m.params:
            if v not in grouped:
                val[v] = float(rng.uniform(eps, 1.0 - eps))
        out.append(val)
    return out


def _observer_cycle(m: PsdesModel) -> tuple[str, ...] | None:
    from .observer import build_observer

    obs = build_observer(m)
    color: dict = {}
    stack_labels: list[str] = []

    def dfs(node) -> tuple[str, ...] | None:
        color[node] = 1
        for e in obs.alphabet:
            nxt = obs.edges.get((node, e))
            if nxt is None:
                continue
            stack_labels.append(e)
            if color.get(nxt) == 1:
                return tuple(stack_labels)
            if nxt not in color:
                found = dfs(nxt)
                if found:
                    return found
            stack_labels.pop()
        color[node] = 2
        return None

    return dfs(obs.initial)


def _check_rows(m, valuations, tol, exempt, stochastic):
    diags, sampled = [], False
    for q in m.states:
        s = m.row_sum(q)
        if s.is_zero:
            continue
        if s.is_constant:
            if abs(s.constant_value - 1.0) > tol:
                diags.append(f"row {q}: outgoing probabilities sum to constant {s}")
            continue
        sampled = True
        for v in valuations:
            val = s.evaluate(v)
            if val > 1.0 + tol or (stochastic and abs(val - 1.0) > tol):
                diags.append(f"row {q}: sum {s} = {val:.12g} at {v}")
                break
    for q in m.states:
        if q in exempt:
            continue
        u = m.row_sum(q, m.unobservable)
        if u.is_zero:
            continue
        for v in valuations:
            val = u.evaluate(v)
            if val >= 1.0 - 1e-12:
                diags.append(f"row {q}: unobservable mass {val:.12g} is not below 1")
                break
    return diags, sampled


def _check_structure(m, valuations):
    diags = []
    for (q, e, q2), f in m.trans.items():
        if f.is_constant:
            c = f.constant_value
            if not 0 < c <= 1:
                diags.append(f"transition {q} {e} {q2}: constant {c} outside (0, 1]")
            continue
        for v in valuations:
            val = f.evaluate(v)
            if not 0 < val < 1:
                diags.append(
                    f"transition {q} {e} {q2}: {f} = {val:.12g} leaves (0, 1) at {v}"
                )
                break
    return diags


def _assumption1_warnings(m: PsdesModel) -> list[str]:
    out = []
    for (q, e, q2) in m.trans:
        if e in m.observable or q == m.dummy_initial:
            continue
        if not any(e2 in m.observable for (a, e2, b) in m.trans if a == q and b == q2):
            out.append(
                f"unobservable transition {q} {e} {q2} has no observable "
                f"transition between the same states"
            )
    return out


def _validate(m: PsdesModel, valuations: list[dict], tol: float, sampled_mode: bool):
    exempt = {m.dummy_initial} if m.dummy_initial else set()
    d1, s1 = _check_rows(m, valuations, tol, exempt, not sampled_mode)
    a1 = AssumptionCheck(1, not d1, sampled_mode and s1, tuple(d1))

    d2 = _check_structure(m, valuations)
    s2 = sampled_mode and any(not f.is_constant for f in m.trans.values())
    a2 = AssumptionCheck(2, not d2, s2, tuple(d2))

    cycle = _observer_cycle(m)
    if cycle is None:
        a3 = AssumptionCheck(3, True)
    else:
        a3 = AssumptionCheck(
            3, False, False,
            (f"observer has a cycle; observed strings are unbounded: {' '.join(cycle)}",),
            witness=cycle,
        )

    _, p_uo = event_matrices(m)
    try:
        matrix_star(p_uo, "auto")
        a4 = AssumptionCheck(4, True)
    except AssumptionViolation as exc:
        a4 = AssumptionCheck(4, False, False, (str(exc),))
    return ValidationReport((a1, a2, a3, a4), tuple(_assumption1_warnings(m)), tuple(valuations))


def validate_assumptions(m: PsdesModel, samples: int = 10, seed: int = 0) -> ValidationReport:
    """Check the four modelling assumptions; parametric rows are checked at
    ``samples`` interior valuations (a sound rejector, not a proof)."""
    if samples < 1:
        raise ValueError("samples must be at least 1")
    vals = sample_valuations(m, samples, seed) if m.params else [{}]
    return _validate(m, vals, 1e-9, True)


def check_assumptions_at(
    m: PsdesModel, valuation: Mapping[str, float], tol: float = 1e-6
) -> ValidationReport:
    """The same checks at one concrete valuation; rows must sum to 0 or 1."""
    return _validate(m, [dict(valuation)], tol, False)
