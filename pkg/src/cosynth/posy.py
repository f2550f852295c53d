"""Posynomials, quasi-posynomial matrices and the unobservable closure.

A posynomial is a sum of monomials ``c * x1^a1 * ... * xm^am`` with ``c > 0``
and real exponents.  The empty sum stands for the constant zero, which keeps
matrix algebra over "posynomial or 0" entries total.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "AssumptionViolation",
    "Monomial",
    "NotPosynomialError",
    "PosyMatrix",
    "PosySyntaxError",
    "Posynomial",
    "UnboundParameterError",
    "format_number",
    "matrix_star",
    "parse_posynomial",
    "posy_add",
    "posy_divide",
    "posy_eval",
    "posy_mul",
]


class PosySyntaxError(ValueError):
    """Malformed posynomial text."""

    def __init__(self, message: str, text: str = "", pos: int | None = None):
        self.text = text
        self.pos = pos
        if pos is not None:
            message = f"{message} (at column {pos + 1} of {text!r})"
        super().__init__(message)


class UnboundParameterError(LookupError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"parameter {name!r} has no value in the valuation")


class NotPosynomialError(ArithmeticError):
    """A quotient that cannot be written as a posynomial."""


class AssumptionViolation(ValueError):
    """A modelling assumption required by the construction does not hold."""


def format_number(x: float) -> str:
    """Shortest text that reads back to exactly ``x``."""
    x = float(x)
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


@dataclass(frozen=True, order=True)
class Monomial:
    """``coeff * prod(name ** exponent)`` with exponents stored sorted by name."""

    exponents: tuple[tuple[str, float], ...]
    coeff: float

    def __post_init__(self):
        if not (self.coeff > 0 and math.isfinite(self.coeff)):
            raise ValueError(f"monomial coefficient must be positive, got {self.coeff}")
        names = [n for n, _ in self.exponents]
        if names != sorted(set(names)):
            raise ValueError("exponent map must be sorted and duplicate-free")
        if any(a == 0 for _, a in self.exponents):
            raise ValueError("exponent map carries a zero entry")

    @classmethod
    def make(cls, coeff: float, exponents: Mapping[str, float] | None = None) -> "Monomial":
        exps = tuple(sorted((n, float(a)) for n, a in (exponents or {}).items() if a != 0))
        return cls(exps, float(coeff))

    @property
    def is_constant(self) -> bool:
        return not self.exponents

    def __mul__(self, other: "Monomial") -> "Monomial":
        exps = dict(self.exponents)
        for n, a in other.exponents:
            exps[n] = exps.get(n, 0.0) + a
        return Monomial.make(self.coeff * other.coeff, exps)

    def evaluate(self, valuation: Mapping[str, float]) -> float:
        value = self.coeff
        for name, a in self.exponents:
            try:
                x = valuation[name]
            except KeyError:
                raise UnboundParameterError(name) from None
            value *= x**a
        return value

    def __str__(self) -> str:
        factors = [n if a == 1 else f"{n}^{format_number(a)}" for n, a in self.exponents]
        if not factors:
            return format_number(self.coeff)
        if self.coeff == 1:
            return "*".join(factors)
        return "*".join([format_number(self.coeff), *factors])


class Posynomial:
    """Immutable canonical posynomial; ``Posynomial()`` is the zero."""

    __slots__ = ("terms", "_hash")

    def __init__(self, terms: Iterable[Monomial] = ()):
        merged: dict[tuple, float] = {}
        for t in terms:
            merged[t.exponents] = merged.get(t.exponents, 0.0) + t.coeff
        self.terms: tuple[Monomial, ...] = tuple(
            Monomial(e, c) for e, c in sorted(merged.items())
        )
        self._hash = hash(self.terms)

    # constructors ---------------------------------------------------------

    @classmethod
    def const(cls, c: float) -> "Posynomial":
        if c == 0:
            return cls()
        return cls([Monomial.make(c)])

    @classmethod
    def var(cls, name: str, exponent: float = 1.0, coeff: float = 1.0) -> "Posynomial":
        return cls([Monomial.make(coeff, {name: exponent})])

    @classmethod
    def zero(cls) -> "Posynomial":
        return cls()

    @classmethod
    def one(cls) -> "Posynomial":
        return cls.const(1.0)

    # structure ------------------------------------------------------------

    @property
    def is_zero(self) -> bool:
        return not self.terms

    @property
    def is_constant(self) -> bool:
        return all(t.is_constant for t in self.terms)

    @property
    def is_monomial(self) -> bool:
        return len(self.terms) == 1

    @property
    def constant_value(self) -> float:
        if not self.is_constant:
            raise ValueError(f"{self} is not constant")
        return self.terms[0].coeff if self.terms else 0.0

    @property
    def variables(self) -> frozenset[str]:
        return frozenset(n for t in self.terms for n, _ in t.exponents)

    def is_one(self) -> bool:
        return self.is_constant and self.constant_value == 1.0

    # arithmetic -----------------------------------------------------------

    @staticmethod
    def _coerce(other) -> "Posynomial":
        if isinstance(other, Posynomial):
            return other
        if isinstance(other, (int, float)) and other >= 0:
            return Posynomial.const(float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return Posynomial(self.terms + other.terms)

    __radd__ = __add__

    def __mul__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return Posynomial(a * b for a in self.terms for b in other.terms)

    __rmul__ = __mul__

    def __pow__(self, k: int) -> "Posynomial":
        if not isinstance(k, int) or k < 0:
            raise ValueError("only nonnegative integer powers are supported")
        result = Posynomial.one()
        for _ in range(k):
            result = result * self
        return result

    def __truediv__(self, other) -> "Posynomial":
        return posy_divide(self, other)

    def evaluate(self, valuation: Mapping[str, float]) -> float:
        return math.fsum(t.evaluate(valuation) for t in self.terms)

    def isclose(self, other: "Posynomial", rel_tol: float = 1e-12) -> bool:
        """Same exponent structure and coefficients equal to ``rel_tol``."""
        if len(self.terms) != len(other.terms):
            return False
        return all(
            a.exponents == b.exponents and math.isclose(a.coeff, b.coeff, rel_tol=rel_tol)
            for a, b in zip(self.terms, other.terms)
        )

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, float)):
            other = Posynomial.const(float(other)) if other >= 0 else None
        if not isinstance(other, Posynomial):
            return NotImplemented
        return self.terms == other.terms

    def __hash__(self) -> int:
        return self._hash

    def __str__(self) -> str:
        if not self.terms:
            return "0"
        return " + ".join(str(t) for t in self.terms)

    def __repr__(self) -> str:
        return f"Posynomial({str(self)!r})"


def posy_add(f: Posynomial, g: Posynomial) -> Posynomial:
    return f + g


def posy_mul(f: Posynomial, g: Posynomial) -> Posynomial:
    return f * g


def posy_eval(f: Posynomial, valuation: Mapping[str, float]) -> float:
    return f.evaluate(valuation)


def posy_divide(f: Posynomial, g) -> Posynomial:
    """Exact quotient ``f / g`` when it is again a posynomial.

    Succeeds when ``g`` is a monomial, or when ``f`` is a constant multiple
    of ``g``.  Anything else raises :class:`NotPosynomialError`.
    """
    if isinstance(g, (int, float)):
        if g <= 0:
            raise NotPosynomialError(f"cannot divide by {g}")
        g = Posynomial.const(float(g))
    if g.is_zero:
        raise ZeroDivisionError("division by the zero posynomial")
    if f.is_zero:
        return Posynomial()
    if g.is_monomial:
        (m,) = g.terms
        inv = Monomial.make(1.0 / m.coeff, {n: -a for n, a in m.exponents})
        return Posynomial(t * inv for t in f.terms)
    if len(f.terms) == len(g.terms) and all(
        a.exponents == b.exponents for a, b in zip(f.terms, g.terms)
    ):
        ratios = [a.coeff / b.coeff for a, b in zip(f.terms, g.terms)]
        if all(math.isclose(r, ratios[0], rel_tol=1e-12) for r in ratios):
            return Posynomial.const(ratios[0])
    raise NotPosynomialError(f"({f}) / ({g}) is not a posynomial")


# --------------------------------------------------------------------------
# text grammar

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*^])"
    r")"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    text_end = len(text.rstrip())
    while pos < text_end:
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise PosySyntaxError("unexpected character", text, pos)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    return tokens


def parse_posynomial(text: str) -> Posynomial:
    """Parse ``term ('+' term)*`` where a term is a ``*``-product of a
    positive coefficient and ``name`` / ``name^real`` factors."""
    tokens = _tokenize(text)
    if not tokens:
        raise PosySyntaxError("empty expression", text, 0)
    i = 0
    terms: list[Monomial] = []

    def peek():
        return tokens[i] if i < len(tokens) else (None, None, len(text))

    while True:
        coeff = 1.0
        exps: dict[str, float] = {}
        while True:
            kind, val, pos = peek()
            if kind == "op" and val == "-":
                raise PosySyntaxError("coefficient must be positive", text, pos)
            if kind == "num":
                c = float(val)
                if c <= 0:
                    raise PosySyntaxError("coefficient must be positive", text, pos)
                coeff *= c
                i += 1
            elif kind == "name":
                i += 1
                a = 1.0
                if peek()[1] == "^":
                    i += 1
                    sign = 1.0
                    k2, v2, p2 = peek()
                    if k2 == "op" and v2 in "+-":
                        sign = -1.0 if v2 == "-" else 1.0
                        i += 1
                        k2, v2, p2 = peek()
                    if k2 != "num":
                        raise PosySyntaxError("expected exponent", text, p2)
                    a = sign * float(v2)
                    i += 1
                exps[val] = exps.get(val, 0.0) + a
            else:
                raise PosySyntaxError("expected coefficient or parameter", text, pos)
            if peek()[1] == "*":
                i += 1
                continue
            break
        terms.append(Monomial.make(coeff, exps))
        kind, val, pos = peek()
        if kind is None:
            break
        if val != "+":
            raise PosySyntaxError("expected '+' or end of expression", text, pos)
        i += 1
    return Posynomial(terms)


# --------------------------------------------------------------------------
# matrices


class PosyMatrix:
    """Square matrix of posynomials (zero entries allowed)."""

    __slots__ = ("rows",)

    def __init__(self, rows: Sequence[Sequence[Posynomial]]):
        rows = tuple(tuple(r) for r in rows)
        n = len(rows)
        if n == 0 or any(len(r) != n for r in rows):
            raise ValueError("PosyMatrix must be square and nonempty")
        self.rows = rows

    @property
    def dim(self) -> int:
        return len(self.rows)

    @classmethod
    def zeros(cls, n: int) -> "PosyMatrix":
        z = Posynomial()
        return cls([[z] * n for _ in range(n)])

    @classmethod
    def identity(cls, n: int) -> "PosyMatrix":
        one, z = Posynomial.one(), Posynomial()
        return cls([[one if i == j else z for j in range(n)] for i in range(n)])

    @classmethod
    def from_array(cls, a) -> "PosyMatrix":
        a = np.asarray(a, dtype=float)
        return cls([[Posynomial.const(float(x)) for x in row] for row in a])

    def __getitem__(self, ij: tuple[int, int]) -> Posynomial:
        i, j = ij
        return self.rows[i][j]

    def __add__(self, other: "PosyMatrix") -> "PosyMatrix":
        return PosyMatrix(
            [[a + b for a, b in zip(ra, rb)] for ra, rb in zip(self.rows, other.rows)]
        )

    def __matmul__(self, other: "PosyMatrix") -> "PosyMatrix":
        n = self.dim
        out = []
        for i in range(n):
            row = []
            for j in range(n):
                terms = []
                for k in range(n):
                    a, b = self.rows[i][k], other.rows[k][j]
                    if a.terms and b.terms:
                        terms.extend(x * y for x in a.terms for y in b.terms)
                row.append(Posynomial(terms))
            out.append(row)
        return PosyMatrix(out)

    def rmul_vector(self, vec: Sequence[Posynomial]) -> tuple[Posynomial, ...]:
        """Row vector times matrix."""
        n = self.dim
        out = []
        for j in range(n):
            terms = []
            for k in range(n):
                a, b = vec[k], self.rows[k][j]
                if a.terms and b.terms:
                    terms.extend(x * y for x in a.terms for y in b.terms)
            out.append(Posynomial(terms))
        return tuple(out)

    @property
    def is_zero(self) -> bool:
        return all(e.is_zero for r in self.rows for e in r)

    @property
    def is_constant(self) -> bool:
        return all(e.is_constant for r in self.rows for e in r)

    def evaluate(self, valuation: Mapping[str, float] | None = None) -> np.ndarray:
        valuation = valuation or {}
        return np.array([[e.evaluate(valuation) for e in r] for r in self.rows])

    def __eq__(self, other) -> bool:
        return isinstance(other, PosyMatrix) and self.rows == other.rows

    def __hash__(self) -> int:
        return hash(self.rows)

    def __repr__(self) -> str:
        body = "; ".join(", ".join(str(e) for e in r) for r in self.rows)
        return f"PosyMatrix([{body}])"


def _nilpotent_star(p: PosyMatrix) -> PosyMatrix | None:
    n = p.dim
    total = PosyMatrix.identity(n)
    power = p
    for _ in range(n):
        if power.is_zero:
            return total
        total = total + power
        power = power @ p
    return total if power.is_zero else None


def _constant_star(p: PosyMatrix) -> PosyMatrix | None:
    if not p.is_constant:
        return None
    a = p.evaluate()
    if np.any(a < 0):
        return None
    n = p.dim
    if np.max(np.abs(np.linalg.eigvals(a)), initial=0.0) >= 1.0:
        return None
    inv = np.linalg.inv(np.eye(n) - a)
    # entries without a connecting path are structurally zero
    reach = np.eye(n, dtype=bool) | (a > 0)
    for k in range(n):
        reach |= reach[:, [k]] & reach[[k], :]
    return PosyMatrix(
        [[Posynomial.const(float(inv[i, j])) if reach[i, j] else Posynomial()
          for j in range(n)] for i in range(n)]
    )


def matrix_star(p: PosyMatrix, mode: str = "auto") -> PosyMatrix:
    """Closure ``sum_k P^k`` of an unobservable-transition matrix.

    ``mode`` is ``"nilpotent-truncation"`` (``P^k = 0`` for some ``k <= dim``,
    summed symbolically), ``"constant-inverse"`` (parameter-free ``P`` with
    spectral radius below one, giving ``(I - P)^-1``), or ``"auto"`` which
    tries them in that order.
    """
    if mode not in ("auto", "nilpotent-truncation", "constant-inverse"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode in ("auto", "nilpotent-truncation"):
        star = _nilpotent_star(p)
        if star is not None:
            return star
    if mode in ("auto", "constant-inverse"):
        star = _constant_star(p)
        if star is not None:
            return star
    raise AssumptionViolation(
        "unobservable transition matrix is neither nilpotent nor a constant "
        "matrix with spectral radius below one"
    )
