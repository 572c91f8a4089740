"""Symbolic expressions with exact forward-mode derivatives.

Expressions are immutable trees built from constants, the variables
``x1..xn`` and ``y1..ym``, the arithmetic operators, integer powers, and
the unary functions sin, cos, exp, log, sqrt.  First derivatives come
from a one-pass dual-number sweep per coordinate and second derivatives
from hyper-dual sweeps, so there is no truncation error to tune.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

__all__ = [
    "Const",
    "Var",
    "Unary",
    "Binary",
    "Power",
    "Expr",
    "EvalPoint",
    "ParseError",
    "DomainError",
    "parse_expr",
    "format_expr",
    "eval_expr",
    "eval_many",
    "gradient",
    "hessian",
    "max_indices",
]

UNARY_FUNCS = ("sin", "cos", "exp", "log", "sqrt")


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    kind: str  # "x" or "y"
    index: int  # 1-based


@dataclass(frozen=True)
class Unary:
    op: str  # "neg" or one of UNARY_FUNCS
    arg: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str  # "add", "sub", "mul", "div"
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Power:
    base: "Expr"
    exponent: int


Expr = Union[Const, Var, Unary, Binary, Power]


@dataclass(frozen=True)
class EvalPoint:
    """A pair of coordinate tuples (x, y) with finite entries."""

    x: tuple
    y: tuple

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))
        object.__setattr__(self, "y", tuple(float(v) for v in self.y))
        for v in self.x + self.y:
            if not math.isfinite(v):
                raise ValueError("evaluation point has a non-finite entry")

    @staticmethod
    def of(x: Sequence[float], y: Sequence[float]) -> "EvalPoint":
        return EvalPoint(tuple(x), tuple(y))


class ParseError(ValueError):
    """Syntax or naming error, carrying the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte {offset})")
        self.offset = offset


class DomainError(ArithmeticError):
    """Evaluation left the domain of log, sqrt, division, or a power.

    The message names the offending subexpression instead of letting a
    NaN propagate through the computation.
    """

    def __init__(self, message: str, subexpr: "Expr"):
        super().__init__(f"{message} in '{format_expr(subexpr)}'")
        self.subexpr = subexpr


# ---------------------------------------------------------------------------
# dual and hyper-dual numbers


class Dual:
    """First-order dual number a + b*eps with eps^2 = 0."""

    __slots__ = ("a", "b")

    def __init__(self, a: float, b: float = 0.0):
        self.a = a
        self.b = b

    def __add__(self, o):
        if isinstance(o, Dual):
            return Dual(self.a + o.a, self.b + o.b)
        return Dual(self.a + o, self.b)

    __radd__ = __add__

    def __sub__(self, o):
        if isinstance(o, Dual):
            return Dual(self.a - o.a, self.b - o.b)
        return Dual(self.a - o, self.b)

    def __rsub__(self, o):
        return Dual(o - self.a, -self.b)

    def __mul__(self, o):
        if isinstance(o, Dual):
            return Dual(self.a * o.a, self.a * o.b + self.b * o.a)
        return Dual(self.a * o, self.b * o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, Dual):
            return Dual(self.a / o.a, (self.b * o.a - self.a * o.b) / (o.a * o.a))
        return Dual(self.a / o, self.b / o)

    def __rtruediv__(self, o):
        return Dual(o / self.a, -o * self.b / (self.a * self.a))

    def __neg__(self):
        return Dual(-self.a, -self.b)

    def powi(self, k: int):
        if k == 0:
            return Dual(1.0, 0.0)
        d = 0.0 if k == 1 else k * self.a ** (k - 1)
        if k == 1:
            d = 1.0
        return Dual(self.a ** k, d * self.b)

    def sin(self):
        return Dual(math.sin(self.a), math.cos(self.a) * self.b)

    def cos(self):
        return Dual(math.cos(self.a), -math.sin(self.a) * self.b)

    def exp(self):
        e = math.exp(self.a)
        return Dual(e, e * self.b)

    def log(self):
        return Dual(math.log(self.a), self.b / self.a)

    def sqrt(self):
        r = math.sqrt(self.a)
        return Dual(r, self.b / (2.0 * r))


class HyperDual:
    """Second-order number a + b*e1 + c*e2 + d*e1*e2 with e1^2 = e2^2 = 0.

    Seeding e1 on coordinate i and e2 on coordinate j makes the d part
    carry the mixed second partial with respect to (i, j).
    """

    __slots__ = ("a", "b", "c", "d")

    def __init__(self, a, b=0.0, c=0.0, d=0.0):
        self.a = a
        self.b = b
        self.c = c
        self.d = d

    def _chain(self, f0, f1, f2):
        # composition with a scalar function given f, f', f'' at self.a
        return HyperDual(f0, f1 * self.b, f1 * self.c, f1 * self.d + f2 * self.b * self.c)

    def __add__(self, o):
        if isinstance(o, HyperDual):
            return HyperDual(self.a + o.a, self.b + o.b, self.c + o.c, self.d + o.d)
        return HyperDual(self.a + o, self.b, self.c, self.d)

    __radd__ = __add__

    def __sub__(self, o):
        if isinstance(o, HyperDual):
            return HyperDual(self.a - o.a, self.b - o.b, self.c - o.c, self.d - o.d)
        return HyperDual(self.a - o, self.b, self.c, self.d)

    def __rsub__(self, o):
        return HyperDual(o - self.a, -self.b, -self.c, -self.d)

    def __mul__(self, o):
        if isinstance(o, HyperDual):
            return HyperDual(
                self.a * o.a,
                self.a * o.b + self.b * o.a,
                self.a * o.c + self.c * o.a,
                self.a * o.d + self.b * o.c + self.c * o.b + self.d * o.a,
            )
        return HyperDual(self.a * o, self.b * o, self.c * o, self.d * o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, HyperDual):
            return self * o._chain(1.0 / o.a, -1.0 / o.a ** 2, 2.0 / o.a ** 3)
        return HyperDual(self.a / o, self.b / o, self.c / o, self.d / o)

    def __rtruediv__(self, o):
        return o * self._chain(1.0 / self.a, -1.0 / self.a ** 2, 2.0 / self.a ** 3)

    def __neg__(self):
        return HyperDual(-self.a, -self.b, -self.c, -self.d)

    def powi(self, k: int):
        f0 = self.a ** k
        f1 = 0.0 if k == 0 else k * self.a ** (k - 1)
        f2 = 0.0 if k * (k - 1) == 0 else k * (k - 1) * self.a ** (k - 2)
        return self._chain(f0, f1, f2)

    def sin(self):
        s, c = math.sin(self.a), math.cos(self.a)
        return self._chain(s, c, -s)

    def cos(self):
        s, c = math.sin(self.a), math.cos(self.a)
        return self._chain(c, -s, -c)

    def exp(self):
        e = math.exp(self.a)
        return self._chain(e, e, e)

    def log(self):
        return self._chain(math.log(self.a), 1.0 / self.a, -1.0 / self.a ** 2)

    def sqrt(self):
        r = math.sqrt(self.a)
        return self._chain(r, 0.5 / r, -0.25 / (self.a * r))


def _scalar_part(v):
    if isinstance(v, (Dual, HyperDual)):
        return v.a
    return v


def _is_seeded(v):
    if isinstance(v, Dual):
        return v.b != 0.0
    if isinstance(v, HyperDual):
        return v.b != 0.0 or v.c != 0.0
    return False


def _ev(e: Expr, xs, ys):
    """Evaluate e over duck-typed coordinate values (floats, duals, arrays)."""
    t = type(e)
    if t is Const:
        return e.value
    if t is Var:
        seq = xs if e.kind == "x" else ys
        return seq[e.index - 1]
    if t is Binary:
        lv = _ev(e.left, xs, ys)
        rv = _ev(e.right, xs, ys)
        op = e.op
        if op == "add":
            return lv + rv
        if op == "sub":
            return lv - rv
        if op == "mul":
            return lv * rv
        rs = _scalar_part(rv)
        if isinstance(rs, np.ndarray):
            if np.any(rs == 0.0):
                raise DomainError("division by zero", e)
        elif rs == 0.0:
            raise DomainError("division by zero", e)
        return lv / rv
    if t is Power:
        bv = _ev(e.base, xs, ys)
        k = e.exponent
        if k < 0:
            bs = _scalar_part(bv)
            zero = np.any(bs == 0.0) if isinstance(bs, np.ndarray) else bs == 0.0
            if zero:
                raise DomainError("zero raised to a negative power", e)
        if isinstance(bv, (Dual, HyperDual)):
            return bv.powi(k)
        return bv ** k
    # Unary
    op = e.op
    av = _ev(e.arg, xs, ys)
    if op == "neg":
        return -av
    s = _scalar_part(av)
    if op == "log":
        bad = np.any(s <= 0.0) if isinstance(s, np.ndarray) else s <= 0.0
        if bad:
            raise DomainError("log of a nonpositive value", e)
    elif op == "sqrt":
        bad = np.any(s < 0.0) if isinstance(s, np.ndarray) else s < 0.0
        if bad:
            raise DomainError("sqrt of a negative value", e)
        if not isinstance(s, np.ndarray) and s == 0.0 and _is_seeded(av):
            raise DomainError("sqrt is not differentiable at zero", e)
    if isinstance(av, (Dual, HyperDual)):
        return getattr(av, op)()
    if isinstance(av, np.ndarray):
        return getattr(np, op)(av)
    return getattr(math, op)(av)


def eval_expr(e: Expr, p: EvalPoint) -> float:
    """IEEE-double value of e at p; raises DomainError instead of yielding NaN."""
    return float(_ev(e, p.x, p.y))


def eval_many(e: Expr, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Evaluate e at a batch of points: X is (N, n), Y is (N, m)."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise ValueError("eval_many expects X of shape (N, n) and Y of shape (N, m)")
    xs = [X[:, i] for i in range(X.shape[1])]
    ys = [Y[:, j] for j in range(Y.shape[1])]
    out = _ev(e, xs, ys)
    if not isinstance(out, np.ndarray):
        out = np.full(X.shape[0], float(out))
    return out


def gradient(e: Expr, p: EvalPoint) -> np.ndarray:
    """Exact gradient of e at p with respect to (x1..xn, y1..ym)."""
    n, m = len(p.x), len(p.y)
    out = np.empty(n + m)
    for k in range(n + m):
        xs = [Dual(v, 1.0 if i == k else 0.0) for i, v in enumerate(p.x)]
        ys = [Dual(v, 1.0 if n + j == k else 0.0) for j, v in enumerate(p.y)]
        r = _ev(e, xs, ys)
        out[k] = r.b if isinstance(r, Dual) else 0.0
    return out


def hessian(e: Expr, p: EvalPoint) -> np.ndarray:
    """Exact Hessian of e at p; symmetric by construction (each pair computed once)."""
    n, m = len(p.x), len(p.y)
    N = n + m
    H = np.zeros((N, N))
    vals = list(p.x) + list(p.y)
    for i in range(N):
        for j in range(i, N):
            coords = [
                HyperDual(v, 1.0 if k == i else 0.0, 1.0 if k == j else 0.0)
                for k, v in enumerate(vals)
            ]
            r = _ev(e, coords[:n], coords[n:])
            hij = r.d if isinstance(r, HyperDual) else 0.0
            H[i, j] = hij
            H[j, i] = hij
    return H


def max_indices(e: Expr):
    """Largest x and y variable indices appearing in e, as a pair (0 if absent)."""
    t = type(e)
    if t is Const:
        return 0, 0
    if t is Var:
        return (e.index, 0) if e.kind == "x" else (0, e.index)
    if t is Unary:
        return max_indices(e.arg)
    if t is Power:
        return max_indices(e.base)
    lx, ly = max_indices(e.left)
    rx, ry = max_indices(e.right)
    return max(lx, rx), max(ly, ry)


# ---------------------------------------------------------------------------
# parsing

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z]+\d*)"
    r"|(?P<op>[-+*/^()]))"
)


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8"))


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            rest = text[pos:]
            if rest.strip() == "":
                break
            bad = len(text) - len(rest.lstrip())
            raise ParseError(
                f"unexpected character '{text[bad]}'", _byte_offset(text, bad)
            )
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), _byte_offset(text, m.start(kind))))
        pos = m.end()
    tokens.append(("eof", "", _byte_offset(text, len(text))))
    return tokens


class _Parser:
    def __init__(self, text: str, n: int, m: int):
        self.tokens = _tokenize(text)
        self.i = 0
        self.n = n
        self.m = m

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, symbol: str):
        kind, val, off = self.peek()
        if kind != "op" or val != symbol:
            raise ParseError(f"expected '{symbol}'", off)
        return self.advance()

    def parse(self) -> Expr:
        e = self.expression()
        kind, val, off = self.peek()
        if kind != "eof":
            raise ParseError(f"unexpected token '{val}'", off)
        return e

    def expression(self) -> Expr:
        e = self.term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.advance()
                rhs = self.term()
                e = Binary("add" if val == "+" else "sub", e, rhs)
            else:
                return e

    def term(self) -> Expr:
        e = self.factor()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                self.advance()
                rhs = self.factor()
                e = Binary("mul" if val == "*" else "div", e, rhs)
            else:
                return e

    def factor(self) -> Expr:
        e = self.atom()
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.advance()
            e = Power(e, self.integer())
        return e

    def integer(self) -> int:
        sign = 1
        kind, val, off = self.peek()
        if kind == "op" and val == "-":
            self.advance()
            sign = -1
            kind, val, off = self.peek()
        if kind != "num" or not val.isdigit():
            raise ParseError("exponent must be an integer literal", off)
        self.advance()
        return sign * int(val)

    def atom(self) -> Expr:
        kind, val, off = self.advance()
        if kind == "num":
            return Const(float(val))
        if kind == "ident":
            m = re.fullmatch(r"([xy])(\d+)", val)
            if m:
                vkind, idx = m.group(1), int(m.group(2))
                bound = self.n if vkind == "x" else self.m
                if idx < 1 or idx > bound:
                    raise ParseError(
                        f"variable {val} is out of range (declared "
                        f"{vkind} dimension is {bound})",
                        off,
                    )
                return Var(vkind, idx)
            if val in UNARY_FUNCS:
                self.expect_op("(")
                arg = self.expression()
                self.expect_op(")")
                return Unary(val, arg)
            raise ParseError(f"unknown variable or function '{val}'", off)
        if kind == "op" and val == "(":
            e = self.expression()
            self.expect_op(")")
            return e
        if kind == "op" and val == "-":
            return Unary("neg", self.atom())
        raise ParseError(f"unexpected token '{val}'", off)


def parse_expr(text: str, n: int, m: int) -> Expr:
    """Parse text against the declared dimensions n (for x) and m (for y)."""
    return _Parser(text, n, m).parse()


# ---------------------------------------------------------------------------
# printing

_PREC_ADD, _PREC_MUL, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4


def _prec(e: Expr) -> int:
    t = type(e)
    if t is Binary:
        return _PREC_ADD if e.op in ("add", "sub") else _PREC_MUL
    if t is Power:
        return _PREC_POW
    return _PREC_ATOM


def _fmt(e: Expr) -> str:
    t = type(e)
    if t is Const:
        if not math.isfinite(e.value):
            raise ValueError("cannot format a non-finite constant")
        return repr(float(e.value))
    if t is Var:
        return f"{e.kind}{e.index}"
    if t is Unary:
        if e.op == "neg":
            inner = _fmt(e.arg)
            if _prec(e.arg) < _PREC_ATOM or _starts_negative(e.arg):
                inner = f"({inner})"
            return f"-{inner}"
        return f"{e.op}({_fmt(e.arg)})"
    if t is Power:
        base = _fmt(e.base)
        if _prec(e.base) < _PREC_ATOM:
            base = f"({base})"
        return f"{base}^{e.exponent}"
    ls, rs = _fmt(e.left), _fmt(e.right)
    if e.op in ("add", "sub"):
        if _prec(e.right) <= _PREC_ADD:
            rs = f"({rs})"
        return f"{ls} {'+' if e.op == 'add' else '-'} {rs}"
    if _prec(e.left) < _PREC_MUL:
        ls = f"({ls})"
    if _prec(e.right) <= _PREC_MUL:
        rs = f"({rs})"
    return f"{ls} {'*' if e.op == 'mul' else '/'} {rs}"


def _starts_negative(e: Expr) -> bool:
    # "--x1" would re-parse fine, but "-" directly followed by a negated
    # power changes how the exponent binds, so keep nested negs wrapped.
    return isinstance(e, Unary) and e.op == "neg"


def format_expr(e: Expr) -> str:
    """Canonical text for e; re-parsing gives a semantically identical tree."""
    return _fmt(e)
