"""Expression trees for DGP formulas: parsing, evaluation, differentiation.

Grammar, loosest binding first::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right-associative; '**' also accepted
    atom   := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

Evaluation is vectorized over numpy arrays and never returns non-finite
values silently: domain violations raise :class:`~nrwe.errors.DomainError`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

from .errors import DomainError, ParseError, UnknownIdentifier

FUNCTIONS = ("exp", "log", "sin", "cos", "sqrt", "abs", "sign")


class Expr:
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __neg__(self):
        return neg(self)

    def variables(self) -> frozenset:
        raise NotImplementedError

    def __call__(self, **env):
        return evaluate(self, env)


@dataclass(frozen=True, eq=True)
class Const(Expr):
    value: float

    def variables(self):
        return frozenset()

    def __str__(self):
        v = self.value
        return str(int(v)) if float(v).is_integer() and abs(v) < 1e15 else repr(v)


@dataclass(frozen=True, eq=True)
class Var(Expr):
    name: str

    def variables(self):
        return frozenset([self.name])

    def __str__(self):
        return self.name


@dataclass(frozen=True, eq=True)
class Neg(Expr):
    arg: Expr

    def variables(self):
        return self.arg.variables()

    def __str__(self):
        return f"-{_paren(self.arg, 3)}"


@dataclass(frozen=True, eq=True)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr

    def variables(self):
        return self.left.variables() | self.right.variables()

    def __str__(self):
        p = _PREC[self.op]
        if self.op == "^":
            return f"{_paren(self.left, p + 1)}^{_paren(self.right, p)}"
        right_min = p + 1 if self.op in "-/" else p
        return f"{_paren(self.left, p)} {self.op} {_paren(self.right, right_min)}"


@dataclass(frozen=True, eq=True)
class Func(Expr):
    name: str
    arg: Expr

    def variables(self):
        return self.arg.variables()

    def __str__(self):
        return f"{self.name}({self.arg})"


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


def _prec(e: Expr) -> int:
    if isinstance(e, Binary):
        return _PREC[e.op]
    if isinstance(e, Neg):
        return 3
    if isinstance(e, Const) and e.value < 0:
        return 3
    return 5


def _paren(e: Expr, min_prec: int) -> str:
    s = str(e)
    return f"({s})" if _prec(e) < min_prec else s


def _lift(v) -> Expr:
    return v if isinstance(v, Expr) else Const(float(v))


# -- simplifying constructors ------------------------------------------------

def _is(e, value):
    return isinstance(e, Const) and e.value == value


def add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if _is(a, 0):
        return b
    if _is(b, 0):
        return a
    return Binary("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if _is(b, 0):
        return a
    if _is(a, 0):
        return neg(b)
    return Binary("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if _is(a, 0) or _is(b, 0):
        return Const(0.0)
    if _is(a, 1):
        return b
    if _is(b, 1):
        return a
    if isinstance(b, Const) and not isinstance(a, Const):
        a, b = b, a
    return Binary("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is(b, 1):
        return a
    if _is(a, 0) and not _is(b, 0):
        return Const(0.0)
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0:
        return Const(a.value / b.value)
    return Binary("/", a, b)


def power(a: Expr, b: Expr) -> Expr:
    if _is(b, 1):
        return a
    if _is(b, 0):
        return Const(1.0)
    return Binary("^", a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def func(name: str, arg: Expr) -> Expr:
    return Func(name, arg)


# -- parser ------------------------------------------------------------------

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>\*\*|[-+*/^()])
""", re.VERBOSE)


def _tokenize(src: str):
    pos = 0
    out = []
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if m is None:
            raise ParseError(f"unexpected character {src[pos]!r}", _byte_offset(src, pos))
        kind = m.lastgroup
        if kind != "ws":
            text = m.group()
            if text == "**":
                text = "^"
            out.append((kind, text, pos))
        pos = m.end()
    out.append(("end", "", len(src)))
    return out


def _byte_offset(src: str, pos: int) -> int:
    return len(src[:pos].encode("utf-8"))


class _Parser:
    def __init__(self, src, allowed):
        self.src = src
        self.allowed = allowed
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, message, tok=None):
        tok = tok or self.peek()
        raise ParseError(message, _byte_offset(self.src, tok[2]))

    def expect(self, text):
        tok = self.peek()
        if tok[1] != text or tok[0] == "end":
            self.fail(f"expected {text!r}, found {tok[1] or 'end of input'!r}")
        return self.take()

    def parse(self):
        e = self.expr()
        if self.peek()[0] != "end":
            self.fail(f"unexpected {self.peek()[1]!r}")
        return e

    def expr(self):
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            e = Binary(op, e, rhs)
        return e

    def term(self):
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.unary()
            e = Binary(op, e, rhs)
        return e

    def unary(self):
        if self.peek()[1] == "-" and self.peek()[0] == "op":
            self.take()
            return Neg(self.unary())
        if self.peek()[1] == "+" and self.peek()[0] == "op":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            return Binary("^", base, self.unary())
        return base

    def atom(self):
        tok = self.peek()
        kind, text, _ = tok
        if kind == "num":
            self.take()
            return Const(float(text))
        if kind == "name":
            self.take()
            if text in FUNCTIONS:
                if self.peek()[1] != "(":
                    self.fail(f"function {text!r} needs an argument list")
                self.take()
                arg = self.expr()
                self.expect(")")
                return Func(text, arg)
            if text not in self.allowed:
                raise UnknownIdentifier(f"unknown identifier {text!r}",
                                        _byte_offset(self.src, tok[2]))
            if self.peek()[1] == "(":
                self.fail(f"{text!r} is not a function")
            return Var(text)
        if text == "(":
            self.take()
            e = self.expr()
            self.expect(")")
            return e
        self.fail(f"unexpected {text or 'end of input'!r}")


def parse_expr(source: str, allowed_vars=("t", "x")) -> Expr:
    """Parse ``source`` into an expression tree over ``allowed_vars``."""
    if not source or not source.strip():
        raise ParseError("empty expression", 0)
    return _Parser(source, frozenset(allowed_vars)).parse()


# -- evaluation --------------------------------------------------------------

Number = Union[float, np.ndarray]


def _check(values, what):
    if not np.all(np.isfinite(values)):
        raise DomainError(f"non-finite result in {what}")
    return values


def evaluate(e: Expr, env: Mapping[str, Number]) -> Number:
    with np.errstate(all="ignore"):
        return _eval(e, env)


def _eval(e, env):
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        if e.name not in env:
            raise DomainError(f"no value bound for variable {e.name!r}")
        v = env[e.name]
        return np.asarray(v, dtype=float) if np.ndim(v) else float(v)
    if isinstance(e, Neg):
        return -_eval(e.arg, env)
    if isinstance(e, Binary):
        a = _eval(e.left, env)
        b = _eval(e.right, env)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            if np.any(np.asarray(b) == 0):
                raise DomainError(f"division by zero in {e}")
            return _check(a / b, e)
        if e.op == "^":
            a_arr = np.asarray(a)
            b_arr = np.asarray(b)
            bad = (a_arr < 0) & (b_arr != np.round(b_arr))
            if np.any(bad):
                raise DomainError(f"negative base with non-integer exponent in {e}")
            if np.any((a_arr == 0) & (b_arr < 0)):
                raise DomainError(f"zero raised to a negative power in {e}")
            return _check(np.power(a, b), e)
    if isinstance(e, Func):
        u = _eval(e.arg, env)
        name = e.name
        if name == "log":
            if np.any(np.asarray(u) <= 0):
                raise DomainError(f"log of non-positive value in {e}")
            return np.log(u)
        if name == "sqrt":
            if np.any(np.asarray(u) < 0):
                raise DomainError(f"sqrt of negative value in {e}")
            return np.sqrt(u)
        if name == "exp":
            return _check(np.exp(u), e)
        if name == "sin":
            return np.sin(u)
        if name == "cos":
            return np.cos(u)
        if name == "abs":
            return np.abs(u)
        if name == "sign":
            return np.sign(u)
    raise TypeError(f"cannot evaluate {e!r}")


# -- differentiation ---------------------------------------------------------

def differentiate(e: Expr, var: str) -> Expr:
    """Symbolic derivative of ``e`` with respect to ``var``.

    ``abs`` differentiates to ``sign`` (kink at 0) and ``sign`` to 0.
    """
    if var not in e.variables():
        return Const(0.0)
    if isinstance(e, Var):
        return Const(1.0)
    if isinstance(e, Neg):
        return neg(differentiate(e.arg, var))
    if isinstance(e, Binary):
        a, b = e.left, e.right
        da, db = differentiate(a, var), differentiate(b, var)
        if e.op == "+":
            return add(da, db)
        if e.op == "-":
            return sub(da, db)
        if e.op == "*":
            return add(mul(da, b), mul(a, db))
        if e.op == "/":
            if var not in b.variables():
                return div(da, b)
            return div(sub(mul(da, b), mul(a, db)), power(b, Const(2.0)))
        if e.op == "^":
            if var not in b.variables():
                return mul(mul(b, power(a, sub(b, Const(1.0)))), da)
            # a^b * (b' log a + b a'/a)
            return mul(e, add(mul(db, func("log", a)), div(mul(b, da), a)))
    if isinstance(e, Func):
        u = e.arg
        du = differentiate(u, var)
        inner = {
            "exp": lambda: e,
            "log": lambda: div(Const(1.0), u),
            "sin": lambda: func("cos", u),
            "cos": lambda: neg(func("sin", u)),
            "sqrt": lambda: div(Const(1.0), mul(Const(2.0), e)),
            "abs": lambda: func("sign", u),
            "sign": lambda: Const(0.0),
        }[e.name]()
        return mul(inner, du) if not _is(du, 1) else inner
    raise TypeError(f"cannot differentiate {e!r}")
