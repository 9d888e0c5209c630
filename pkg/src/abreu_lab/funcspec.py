"""Scalar expressions in ``xi1, xi2`` with exact derivatives.

Grammar::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := ('+'|'-') factor | base ('^' integer)?
    base   := number | 'xi1' | 'xi2' | '(' expr ')' | ('exp'|'log') '(' expr ')'

Derivatives are propagated as truncated bivariate Taylor polynomials, so the
values returned by :func:`eval_jet` carry no finite-difference error.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

MAX_ORDER = 4


class ExprSyntaxError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset  # 1-based character position


class FuncDomainError(ArithmeticError):
    """Pointwise evaluation failure (log of a non-positive value, division by zero)."""

    def __init__(self, message: str, subexpr: str, point=None):
        where = "" if point is None else f" at xi={tuple(float(c) for c in point)}"
        super().__init__(f"{message} in '{subexpr}'{where}")
        self.subexpr = subexpr
        self.point = point


# ---------------------------------------------------------------- AST

@dataclass(frozen=True)
class Expr:
    text: str

    @property
    def is_constant(self) -> bool:
        return False


@dataclass(frozen=True)
class Const(Expr):
    value: float

    @property
    def is_constant(self) -> bool:
        return True


@dataclass(frozen=True)
class Var(Expr):
    index: int  # 0 -> xi1, 1 -> xi2


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr

    @property
    def is_constant(self) -> bool:
        return self.arg.is_constant


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr

    @property
    def is_constant(self) -> bool:
        return self.left.is_constant and self.right.is_constant


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: int

    @property
    def is_constant(self) -> bool:
        return self.base.is_constant


@dataclass(frozen=True)
class Func(Expr):
    name: str
    arg: Expr

    @property
    def is_constant(self) -> bool:
        return self.arg.is_constant


# ---------------------------------------------------------------- parser

_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|([A-Za-z_]\w*)|(.))")


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m.end() == pos or (m.group(0).strip() == ""):
            break
        kind = "num" if m.group(1) else "id" if m.group(2) else "op"
        value = m.group(1) or m.group(2) or m.group(3)
        start = m.start(1) if m.group(1) else m.start(2) if m.group(2) else m.start(3)
        tokens.append((kind, value, start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message, tok=None):
        tok = tok or self.peek()
        raise ExprSyntaxError(message, tok[2] + 1)

    def expect(self, value):
        tok = self.peek()
        if tok[1] != value or tok[0] == "end":
            what = "end of input" if tok[0] == "end" else repr(tok[1])
            self.error(f"expected '{value}', found {what}")
        return self.take()

    def span(self, start):
        end = self.tokens[self.i - 1]
        stop = end[2] + len(end[1])
        return self.text[start:stop].strip()

    def parse(self) -> Expr:
        if self.peek()[0] == "end":
            self.error("empty expression")
        e = self.expr()
        if self.peek()[0] != "end":
            self.error(f"unexpected {self.peek()[1]!r}")
        return e

    def expr(self):
        start = self.peek()[2]
        left = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            right = self.term()
            left = BinOp(self.span(start), op, left, right)
        return left

    def term(self):
        start = self.peek()[2]
        left = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            right = self.factor()
            left = BinOp(self.span(start), op, left, right)
        return left

    def factor(self):
        start = self.peek()[2]
        if self.peek()[0] == "op" and self.peek()[1] in ("+", "-"):
            sign = self.take()[1]
            arg = self.factor()
            return arg if sign == "+" else Neg(self.span(start), arg)
        base = self.base()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            sign = 1
            if self.peek()[0] == "op" and self.peek()[1] in ("+", "-"):
                sign = -1 if self.take()[1] == "-" else 1
            tok = self.peek()
            if tok[0] != "num" or not tok[1].isdigit():
                self.error("exponent must be an integer")
            self.take()
            return Pow(self.span(start), base, sign * int(tok[1]))
        return base

    def base(self):
        tok = self.peek()
        start = tok[2]
        if tok[0] == "num":
            self.take()
            return Const(tok[1], float(tok[1]))
        if tok[0] == "id":
            self.take()
            if tok[1] in ("xi1", "xi2"):
                return Var(tok[1], int(tok[1][-1]) - 1)
            if tok[1] in ("exp", "log"):
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Func(self.span(start), tok[1], arg)
            self.error(f"unknown identifier {tok[1]!r}", tok)
        if tok[0] == "op" and tok[1] == "(":
            self.take()
            e = self.expr()
            self.expect(")")
            return e
        if tok[0] == "end":
            self.error("unexpected end of input")
        self.error(f"unexpected {tok[1]!r}")


def parse_expr(text: str) -> Expr:
    """Parse ``text``; syntax errors carry the 1-based character offset."""
    return _Parser(text).parse()


# ---------------------------------------------------------------- Taylor arithmetic

def _index_pairs(order):
    return [(a, b) for a in range(order + 1) for b in range(order + 1 - a)]


class Taylor:
    """Truncated Taylor polynomial ``sum c[a, b] dx^a dy^b`` with ``a + b <= order``.

    Coefficients are arrays over a batch of expansion points.
    """

    __slots__ = ("c", "order")

    def __init__(self, c: np.ndarray, order: int):
        self.c = c
        self.order = order

    @classmethod
    def constant(cls, value, shape, order):
        c = np.zeros((order + 1, order + 1) + shape)
        c[0, 0] = value
        return cls(c, order)

    @classmethod
    def variable(cls, values, index, order):
        t = cls.constant(values, values.shape, order)
        if order >= 1:
            t.c[(1, 0) if index == 0 else (0, 1)] = 1.0
        return t

    @property
    def value(self):
        return self.c[0, 0]

    def __add__(self, other):
        return Taylor(self.c + other.c, self.order)

    def __sub__(self, other):
        return Taylor(self.c - other.c, self.order)

    def __neg__(self):
        return Taylor(-self.c, self.order)

    def scale(self, s):
        return Taylor(self.c * s, self.order)

    def __mul__(self, other):
        k = self.order
        out = np.zeros_like(self.c)
        pairs = _index_pairs(k)
        for a1, b1 in pairs:
            x = self.c[a1, b1]
            for a2, b2 in _index_pairs(k - a1 - b1):
                out[a1 + a2, b1 + b2] += x * other.c[a2, b2]
        return Taylor(out, k)

    def _series(self, coeffs):
        # sum_k coeffs[k] * g^k with g = self - value (no constant term)
        g = Taylor(self.c.copy(), self.order)
        g.c[0, 0] = 0.0
        result = Taylor.constant(coeffs[0], self.value.shape, self.order)
        power = None
        for k in range(1, self.order + 1):
            power = g if power is None else power * g
            result = result + power.scale(coeffs[k])
        return result

    def reciprocal(self):
        f0 = self.value
        return self._series([(-1.0) ** k / f0 ** (k + 1) for k in range(self.order + 1)])

    def exp(self):
        e0 = np.exp(self.value)
        return self._series([e0 / math.factorial(k) for k in range(self.order + 1)])

    def log(self):
        f0 = self.value
        coeffs = [np.log(f0)] + [(-1.0) ** (k + 1) / (k * f0**k) for k in range(1, self.order + 1)]
        return self._series(coeffs)

    def ipow(self, n: int):
        if n < 0:
            return self.reciprocal().ipow(-n)
        result = Taylor.constant(1.0, self.value.shape, self.order)
        base = self
        while n:
            if n & 1:
                result = result * base
            n >>= 1
            if n:
                base = base * base
        return result

    def derivative(self, a: int, b: int):
        return self.c[a, b] * math.factorial(a) * math.factorial(b)


def _first_bad(mask, points):
    idx = int(np.flatnonzero(mask.ravel())[0])
    return None if points is None else points.reshape(-1, 2)[idx]


def _taylor(e: Expr, points: np.ndarray, order: int) -> Taylor:
    shape = points.shape[:-1]
    if isinstance(e, Const):
        return Taylor.constant(e.value, shape, order)
    if isinstance(e, Var):
        return Taylor.variable(points[..., e.index], e.index, order)
    if isinstance(e, Neg):
        return -_taylor(e.arg, points, order)
    if isinstance(e, BinOp):
        left = _taylor(e.left, points, order)
        right = _taylor(e.right, points, order)
        if e.op == "+":
            return left + right
        if e.op == "-":
            return left - right
        if e.op == "*":
            return left * right
        bad = right.value == 0
        if np.any(bad):
            raise FuncDomainError("division by zero", e.right.text, _first_bad(bad, points))
        return left * right.reciprocal()
    if isinstance(e, Pow):
        base = _taylor(e.base, points, order)
        if e.exponent < 0:
            bad = base.value == 0
            if np.any(bad):
                raise FuncDomainError("division by zero", e.base.text, _first_bad(bad, points))
        return base.ipow(e.exponent)
    if isinstance(e, Func):
        arg = _taylor(e.arg, points, order)
        if e.name == "exp":
            return arg.exp()
        bad = ~(arg.value > 0)
        if np.any(bad):
            raise FuncDomainError("log of a non-positive value", e.arg.text, _first_bad(bad, points))
        return arg.log()
    raise TypeError(f"unknown node {e!r}")


def _derivative_tensors(t: Taylor, order: int):
    shape = t.value.shape
    out = [t.value.copy()]
    for k in range(1, order + 1):
        tensor = np.empty(shape + (2,) * k)
        for idx in np.ndindex(*(2,) * k):
            a = k - sum(idx)
            tensor[(...,) + idx] = t.derivative(a, k - a)
        out.append(tensor)
    return out


def eval_jet_many(e: Expr, points, order: int = 3):
    """Derivative tensors ``[value, grad, hess, third, ...]`` at ``(..., 2)`` points."""
    if not 0 <= order <= MAX_ORDER:
        raise ValueError(f"order must be in 0..{MAX_ORDER}")
    points = np.asarray(points, dtype=float)
    if e.is_constant:
        # constant data functions: no propagation needed
        val = _taylor(e, np.zeros((1, 2)), 0).value[0]
        shape = points.shape[:-1]
        return [np.full(shape, val)] + [np.zeros(shape + (2,) * k) for k in range(1, order + 1)]
    return _derivative_tensors(_taylor(e, points, order), order)


def evaluate(e: Expr, points) -> np.ndarray:
    return eval_jet_many(e, points, 0)[0]


@dataclass(frozen=True)
class Jet3:
    value: float
    first: np.ndarray  # (2,)
    second: np.ndarray  # (2, 2)
    third: np.ndarray  # (2, 2, 2)


def eval_jet(e: Expr, xi, order: int = 3) -> Jet3:
    """Value and exact derivatives of ``e`` at a single point, up to ``order`` <= 3."""
    if not 0 <= order <= 3:
        raise ValueError("order must be in 0..3")
    parts = eval_jet_many(e, np.asarray(xi, dtype=float)[None, :], order)
    parts = [p[0] for p in parts]
    full = parts + [np.zeros((2,) * k) for k in range(len(parts), 4)]
    return Jet3(float(full[0]), full[1], full[2], full[3])
