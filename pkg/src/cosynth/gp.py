"""Geometric programs and a log-barrier interior-point solver.

A GP minimises a posynomial subject to ``posynomial <= 1`` constraints over
positive variables.  With ``x = exp(y)`` every posynomial becomes a
log-sum-exp of affine functions of ``y``, so the problem is convex.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .posy import Monomial, Posynomial, format_number, parse_posynomial

__all__ = [
    "ConvexProgram",
    "FeasibilityReport",
    "GpConstraint",
    "GpProblem",
    "GpSolution",
    "GpVariable",
    "LogSumExp",
    "SolverOptions",
    "check_feasibility",
    "dump_problem",
    "parse_problem",
    "solve_gp",
    "to_convex_form",
]


@dataclass(frozen=True)
class GpVariable:
    name: str
    lower: float = 1e-12
    upper: float | None = None

    def __post_init__(self):
        if not self.lower > 0:
            raise ValueError(f"variable {self.name}: lower bound must be positive")
        if self.upper is not None and self.upper < self.lower:
            raise ValueError(f"variable {self.name}: upper bound below lower bound")


@dataclass(frozen=True)
class GpConstraint:
    """``expr <= 1``; ``label`` names the encoding rule that produced it."""

    expr: Posynomial
    label: str = ""


@dataclass(frozen=True)
class GpProblem:
    variables: tuple[GpVariable, ...]
    objective: Posynomial
    constraints: tuple[GpConstraint, ...] = ()

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ValueError("duplicate variable names")
        known = set(names)
        if self.objective.is_zero:
            raise ValueError("objective must be a nonzero posynomial")
        for c in (GpConstraint(self.objective, "objective"), *self.constraints):
            bad = c.expr.variables - known
            if bad:
                raise ValueError(f"{c.label or 'constraint'} uses undeclared variables {sorted(bad)}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.variables)


# --------------------------------------------------------------------------
# log-space form


class LogSumExp:
    """``y -> log(sum_k exp(A[k] @ y + b[k]))``."""

    def __init__(self, a: np.ndarray, b: np.ndarray):
        self.A = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)

    @classmethod
    def from_posynomial(cls, f: Posynomial, index: Mapping[str, int]) -> "LogSumExp":
        a = np.zeros((len(f.terms), len(index)))
        b = np.zeros(len(f.terms))
        for k, t in enumerate(f.terms):
            b[k] = math.log(t.coeff)
            for name, e in t.exponents:
                a[k, index[name]] = e
        return cls(a, b)

    def value(self, y: np.ndarray) -> float:
        z = self.A @ y + self.b
        zmax = z.max()
        return float(zmax + math.log(np.exp(z - zmax).sum()))

    def grad(self, y: np.ndarray) -> np.ndarray:
        z = self.A @ y + self.b
        p = np.exp(z - z.max())
        p /= p.sum()
        return self.A.T @ p

    def hess(self, y: np.ndarray) -> np.ndarray:
        z = self.A @ y + self.b
        p = np.exp(z - z.max())
        p /= p.sum()
        g = self.A.T @ p
        return (self.A.T * p) @ self.A - np.outer(g, g)


@dataclass
class ConvexProgram:
    """Log-space image of a GP: minimise ``objective(y)`` s.t. every
    ``constraint(y) <= 0``.  ``names[i]`` is the GP variable behind ``y[i]``;
    variable bounds appear as extra affine constraints."""

    names: tuple[str, ...]
    objective: LogSumExp
    constraints: list[LogSumExp]
    labels: list[str]
    constant_violations: list[tuple[str, float]] = field(default_factory=list)


def _bound_constraints(v: GpVariable) -> list[GpConstraint]:
    out = [GpConstraint(Posynomial([Monomial.make(v.lower, {v.name: -1.0})]), f"bound:{v.name}>=")]
    if v.upper is not None:
        out.append(
            GpConstraint(Posynomial([Monomial.make(1.0 / v.upper, {v.name: 1.0})]), f"bound:{v.name}<=")
        )
    return out


def to_convex_form(p: GpProblem) -> ConvexProgram:
    index = {name: i for i, name in enumerate(p.names)}
    cons, labels, const_bad = [], [], []
    all_cons = list(p.constraints)
    for v in p.variables:
        all_cons.extend(_bound_constraints(v))
    for c in all_cons:
        if c.expr.is_zero:
            continue
        if c.expr.is_constant:
            if c.expr.constant_value > 1.0:
                const_bad.append((c.label, c.expr.constant_value - 1.0))
            continue
        cons.append(LogSumExp.from_posynomial(c.expr, index))
        labels.append(c.label)
    return ConvexProgram(
        p.names, LogSumExp.from_posynomial(p.objective, index), cons, labels, const_bad
    )


class _Stacked:
    """All constraints evaluated at once (terms stacked row-wise)."""

    def __init__(self, funcs: Sequence[LogSumExp], n: int):
        self.m = len(funcs)
        if funcs:
            self.A = np.vstack([f.A for f in funcs])
            self.b = np.concatenate([f.b for f in funcs])
            self.seg = np.repeat(np.arange(self.m), [len(f.b) for f in funcs])
        else:
            self.A = np.zeros((0, n))
            self.b = np.zeros(0)
            self.seg = np.zeros(0, dtype=int)

    def values(self, y):
        z = self.A @ y + self.b
        zmax = np.full(self.m, -np.inf)
        np.maximum.at(zmax, self.seg, z)
        e = np.exp(z - zmax[self.seg])
        s = np.bincount(self.seg, weights=e, minlength=self.m)
        return zmax + np.log(s), e / s[self.seg]

    def derivatives(self, y):
        f, p = self.values(y)
        g = np.zeros((self.m, self.A.shape[1]))
        np.add.at(g, self.seg, p[:, None] * self.A)
        return f, p, g


# --------------------------------------------------------------------------
# solver


@dataclass(frozen=True)
class SolverOptions:
    kkt_tol: float = 1e-6
    feas_tol: float = 1e-8
    gap_tol: float = 1e-10
    mu: float = 10.0
    t0: float = 1.0
    newton_tol: float = 1e-14
    max_iter: int = 2000
    alpha: float = 0.01
    beta: float = 0.5


@dataclass
class GpSolution:
    values: dict[str, float]
    objective_value: float
    status: str
    residuals: dict[str, float]
    iterations: int = 0
    kkt_residual: float = float("nan")
    duality_gap: float = float("nan")
    message: str = ""

    @property
    def feasible(self) -> bool:
        return self.status in ("optimal", "feasible")

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values(), default=-math.inf)


def _centering(obj, cons, y, t, opts, budget):
    """Damped Newton on ``t*obj(y) - sum(log(-f_i(y)))``; returns (y, steps)."""
    steps = 0
    n = y.size

    def phi(y_):
        f, _ = cons.values(y_)
        if np.any(f >= 0):
            return math.inf
        return t * obj.value(y_) - np.log(-f).sum()

    cur = phi(y)
    while steps < budget:
        f, p, g = cons.derivatives(y)
        w = 1.0 / (-f)
        grad = t * obj.grad(y) + g.T @ w
        hess = t * obj.hess(y)
        hess += (cons.A.T * (p * w[cons.seg])) @ cons.A
        hess += (g.T * (w * w - w)) @ g
        try:
            d = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            d = -np.linalg.lstsq(hess + 1e-12 * np.eye(n), grad, rcond=None)[0]
        dec = float(-grad @ d)
        steps += 1
        if not math.isfinite(dec) or dec / 2 <= opts.newton_tol:
            break
        if np.max(np.abs(grad)) <= 1e-3 * opts.kkt_tol * t:
            break
        s = 1.0
        while True:
            cand = y + s * d
            val = phi(cand)
            if val <= cur - opts.alpha * s * dec:
                break
            # near the centre phi's round-off (which grows with t) swamps
            # the predicted decrease; take the full step if phi is flat
            if s == 1.0 and val <= cur + 1e-14 * abs(cur):
                break
            s *= opts.beta
            if s < 1e-14:
                return y, steps
        y, cur = cand, val
        if s * np.max(np.abs(d), initial=0.0) < 1e-12:
            # no representable progress left
            break
    return y, steps


def _barrier(obj, cons, y, opts, stop=None):
    t = opts.t0
    iters = 0
    while True:
        y, k = _centering(obj, cons, y, t, opts, opts.max_iter - iters)
        iters += k
        if stop is not None and stop(y):
            return y, t, iters, "stopped"
        if cons.m / t < opts.gap_tol:
            return y, t, iters, "optimal"
        if iters >= opts.max_iter:
            return y, t, iters, "max-iterations"
        t *= opts.mu


def _start_point(p: GpProblem) -> np.ndarray:
    y = np.zeros(len(p.variables))
    for i, v in enumerate(p.variables):
        if v.upper is None:
            x = max(0.5, 2 * v.lower)
        elif v.lower < 0.5 < v.upper:
            x = 0.5
        else:
            x = math.sqrt(v.lower * v.upper)
        y[i] = math.log(x)
    return y


def _phase_one(cp: ConvexProgram, y0: np.ndarray, opts: SolverOptions):
    """Minimise ``s`` subject to ``f_i(y) <= s`` (and ``s >= -1``)."""
    n = y0.size
    f0 = [c.value(y0) for c in cp.constraints]
    s0 = max(f0) + 1.0
    aug = []
    for c in cp.constraints:
        aug.append(LogSumExp(np.hstack([c.A, -np.ones((len(c.b), 1))]), c.b))
    lower = np.zeros((1, n + 1))
    lower[0, -1] = -1.0
    aug.append(LogSumExp(lower, np.array([-1.0])))
    obj_a = np.zeros((1, n + 1))
    obj_a[0, -1] = 1.0
    obj = LogSumExp(obj_a, np.zeros(1))
    cons = _Stacked(aug, n + 1)
    z = np.append(y0, s0)
    y, t, iters, status = _barrier(obj, cons, z, opts, stop=lambda z_: z_[-1] < -1e-3)
    if status == "stopped" or y[-1] < 0:
        return y[:-1], iters, status
    return None, iters, status


def _kkt_residual(obj, cons, y, t) -> float:
    """Stationarity residual with the better of two dual estimates: the
    barrier duals ``1/(t*(-f))`` and nonnegative least squares over the
    near-active constraints.  The second stays accurate once round-off in
    tiny ``f_i`` dominates the barrier duals."""
    g0 = obj.grad(y)
    if not cons.m:
        return float(np.max(np.abs(g0), initial=0.0))
    f, _, g = cons.derivatives(y)
    lam = 1.0 / (t * (-f))
    best = float(np.max(np.abs(g0 + g.T @ lam)))
    active = np.flatnonzero(f >= -1e-6)
    if active.size:
        ga = g[active]
        est = np.linalg.lstsq(ga.T, -g0, rcond=None)[0]
        est = np.clip(est, 0.0, None)
        best = min(best, float(np.max(np.abs(g0 + ga.T @ est))))
    return best


def solve_gp(p: GpProblem, opts: SolverOptions | None = None) -> GpSolution:
    """Barrier method on the log-space form, with a phase-I search for a
    strictly feasible start.  Deterministic: no randomness is involved."""
    opts = opts or SolverOptions()
    cp = to_convex_form(p)
    names = cp.names
    if cp.constant_violations:
        label, excess = cp.constant_violations[0]
        return GpSolution({}, math.nan, "infeasible", {}, 0,
                          message=f"constant constraint {label!r} exceeds 1 by {excess:g}")
    y = _start_point(p)
    iters = 0
    cons = _Stacked(cp.constraints, len(names))
    if cons.m and np.any(cons.values(y)[0] >= 0):
        y1, iters, status = _phase_one(cp, y, opts)
        if y1 is None and status == "max-iterations":
            return GpSolution({}, math.nan, "max-iterations", {}, iters,
                              message="iteration budget spent searching for a feasible point")
        if y1 is None:
            return GpSolution({}, math.nan, "infeasible", {}, iters,
                              message="no strictly feasible point found")
        y = y1
    if cons.m == 0:
        # unconstrained: plain Newton on the objective
        y, k = _centering(cp.objective, cons, y, 1.0, opts, opts.max_iter)
        t, status = math.inf, "optimal"
        iters += k
    else:
        y, t, k, status = _barrier(cp.objective, cons, y, opts)
        iters += k
    values = {name: float(math.exp(yi)) for name, yi in zip(names, y)}
    kkt = _kkt_residual(cp.objective, cons, y, t)
    residuals = {}
    for c in p.constraints:
        key = c.label or f"c{len(residuals)}"
        val = c.expr.evaluate(values) - 1.0
        residuals[key] = max(residuals.get(key, -math.inf), val)
    gap = cons.m / t if cons.m else 0.0
    worst = float(np.max(cons.values(y)[0], initial=-math.inf)) if cons.m else -math.inf
    if status == "optimal" and (worst > math.log1p(opts.feas_tol) or kkt > opts.kkt_tol):
        status = "feasible" if worst <= math.log1p(opts.feas_tol) else "max-iterations"
    return GpSolution(
        values=values,
        objective_value=p.objective.evaluate(values),
        status=status,
        residuals=residuals,
        iterations=iters,
        kkt_residual=kkt,
        duality_gap=gap,
    )


# --------------------------------------------------------------------------
# feasibility


@dataclass(frozen=True)
class FeasibilityReport:
    max_violation: float
    by_label: dict[str, float]
    violations: tuple[tuple[str, float], ...]

    def ok(self, tol: float = 1e-6) -> bool:
        return self.max_violation <= tol


def _label_group(label: str) -> str:
    return label.split(":", 1)[0] if label else "unlabelled"


def check_feasibility(p: GpProblem, cand: Mapping[str, float], tol: float = 0.0) -> FeasibilityReport:
    """Evaluate every constraint at ``cand``; violation is ``expr - 1``
    (bounds included), grouped by the label prefix before ``:``."""
    missing = set(p.names) - set(cand)
    if missing:
        raise ValueError(f"candidate lacks values for {sorted(missing)}")
    by_label: dict[str, float] = {}
    violations = []
    worst = -math.inf
    checks = list(p.constraints)
    for v in p.variables:
        checks.extend(_bound_constraints(v))
    for c in checks:
        val = c.expr.evaluate(cand) - 1.0
        group = _label_group(c.label)
        by_label[group] = max(by_label.get(group, -math.inf), val)
        worst = max(worst, val)
        if val > tol:
            violations.append((c.label, val))
    return FeasibilityReport(worst if checks else 0.0, by_label, tuple(violations))


# --------------------------------------------------------------------------
# text dump


def dump_problem(p: GpProblem) -> str:
    lines = []
    for v in p.variables:
        hi = "" if v.upper is None else f" {format_number(v.upper)}"
        lines.append(f"var {v.name} {format_number(v.lower)}{hi}")
    lines.append(f"minimize {p.objective}")
    for c in p.constraints:
        lab = f" [{c.label}]" if c.label else ""
        lines.append(f"subject {c.expr} <= 1{lab}")
    return "\n".join(lines) + "\n"


def parse_problem(text: str) -> GpProblem:
    variables, objective, constraints = [], None, []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        head, _, rest = line.partition(" ")
        if head == "var":
            parts = rest.split()
            lo = float(parts[1])
            hi = float(parts[2]) if len(parts) > 2 else None
            variables.append(GpVariable(parts[0], lo, hi))
        elif head == "minimize":
            objective = parse_posynomial(rest)
        elif head == "subject":
            label = ""
            if rest.endswith("]"):
                rest, _, label = rest[:-1].rpartition(" [")
            expr, sep, _ = rest.rpartition("<=")
            if not sep:
                raise ValueError(f"line {lineno}: expected '<= 1'")
            constraints.append(GpConstraint(parse_posynomial(expr), label))
        else:
            raise ValueError(f"line {lineno}: unknown directive {head!r}")
    if objective is None:
        raise ValueError("problem has no objective")
    return GpProblem(tuple(variables), objective, tuple(constraints))
