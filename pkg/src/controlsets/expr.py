"""Arithmetic expressions over state variables and the parameter ``alpha``.

The grammar is small on purpose::

    expr     := term (('+' | '-') term)*
    term     := unary (('*' | '/') unary)*
    unary    := ('-' | '+') unary | power
    power    := primary ('^' exponent)*
    exponent := ('-' | '+')? primary          # must be free of variables
    primary  := NUMBER | NAME | FUNC '(' expr ')' | '(' expr ')'

``FUNC`` is one of ``sqrt sin cos exp ln``.  Expressions are immutable trees
built from :class:`Const`, :class:`Var`, :class:`Unary`, :class:`Binary` and
:class:`Pow`.  They can be evaluated on floats (:func:`evaluate`, raising on
domain errors) or compiled into numpy-vectorized callables (:func:`compile_expr`).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import (EvalDomainError, ExprSyntaxError, UnboundVariable,
                     UnknownIdentifier)

DEFAULT_VARIABLES = ("x", "y", "z", "x1", "x2", "x3", "alpha")
FUNCTIONS = ("sqrt", "sin", "cos", "exp", "ln")


class Expression:
    """Base class of all expression nodes."""

    __slots__ = ()

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return Binary("div", self, _lift(other))

    def __neg__(self):
        return neg(self)

    def variables(self) -> frozenset:
        return frozenset(_walk_vars(self))

    def __str__(self):
        return to_text(self)


@dataclass(frozen=True, eq=True, repr=True)
class Const(Expression):
    value: float


@dataclass(frozen=True, eq=True, repr=True)
class Var(Expression):
    name: str


@dataclass(frozen=True, eq=True, repr=True)
class Unary(Expression):
    op: str  # neg, sqrt, sin, cos, exp, ln
    arg: Expression


@dataclass(frozen=True, eq=True, repr=True)
class Binary(Expression):
    op: str  # add, sub, mul, div
    left: Expression
    right: Expression


@dataclass(frozen=True, eq=True, repr=True)
class Pow(Expression):
    base: Expression
    exponent: float


ZERO = Const(0.0)
ONE = Const(1.0)


def _lift(value) -> Expression:
    if isinstance(value, Expression):
        return value
    return Const(float(value))


def _walk_vars(e):
    if isinstance(e, Var):
        yield e.name
    elif isinstance(e, Unary):
        yield from _walk_vars(e.arg)
    elif isinstance(e, Binary):
        yield from _walk_vars(e.left)
        yield from _walk_vars(e.right)
    elif isinstance(e, Pow):
        yield from _walk_vars(e.base)


def is_zero(e: Expression) -> bool:
    return isinstance(e, Const) and e.value == 0.0


def is_one(e: Expression) -> bool:
    return isinstance(e, Const) and e.value == 1.0


# Simplifying constructors: only 0*e -> 0, 1*e -> e, e +- 0 -> e (and 0 + e -> e).

def add(a: Expression, b: Expression) -> Expression:
    if is_zero(b):
        return a
    if is_zero(a):
        return b
    return Binary("add", a, b)


def sub(a: Expression, b: Expression) -> Expression:
    if is_zero(b):
        return a
    if is_zero(a):
        return neg(b)
    return Binary("sub", a, b)


def mul(a: Expression, b: Expression) -> Expression:
    if is_zero(a) or is_zero(b):
        return ZERO
    if is_one(a):
        return b
    if is_one(b):
        return a
    return Binary("mul", a, b)


def neg(a: Expression) -> Expression:
    if is_zero(a):
        return ZERO
    return Unary("neg", a)


# ---------------------------------------------------------------------------
# parsing

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


@dataclass(frozen=True)
class _Token:
    kind: str  # num, name, op, end
    text: str
    pos: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.lastgroup is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", pos)
        start = m.start(m.lastgroup)
        tokens.append(_Token(m.lastgroup, m.group(m.lastgroup), start))
        pos = m.end()
    tokens.append(_Token("end", "", n))
    return tokens


class _Parser:
    def __init__(self, text, variables):
        self.tokens = _tokenize(text)
        self.i = 0
        self.variables = variables

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def expect_op(self, op):
        t = self.tok
        if t.kind != "op" or t.text != op:
            found = "end of input" if t.kind == "end" else repr(t.text)
            raise ExprSyntaxError(f"expected {op!r}, found {found}", t.pos)
        self.advance()

    def parse(self) -> Expression:
        e = self.expr()
        if self.tok.kind != "end":
            raise ExprSyntaxError(f"expected operator or end of input, found {self.tok.text!r}",
                                  self.tok.pos)
        return e

    def expr(self):
        left = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = "add" if self.advance().text == "+" else "sub"
            left = Binary(op, left, self.term())
        return left

    def term(self):
        left = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = "mul" if self.advance().text == "*" else "div"
            left = Binary(op, left, self.unary())
        return left

    def unary(self):
        t = self.tok
        if t.kind == "op" and t.text == "-":
            self.advance()
            return Unary("neg", self.unary())
        if t.kind == "op" and t.text == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self):
        base = self.primary()
        while self.tok.kind == "op" and self.tok.text == "^":
            self.advance()
            base = Pow(base, self.exponent())
        return base

    def exponent(self) -> float:
        start = self.tok.pos
        sign = 1.0
        if self.tok.kind == "op" and self.tok.text in "+-":
            sign = -1.0 if self.advance().text == "-" else 1.0
        e = self.primary()
        if e.variables():
            raise ExprSyntaxError("exponent must be constant", start)
        try:
            value = sign * evaluate(e, {})
        except EvalDomainError as exc:
            raise ExprSyntaxError(f"invalid exponent ({exc})", start) from None
        return value

    def primary(self):
        t = self.tok
        if t.kind == "num":
            self.advance()
            return Const(float(t.text))
        if t.kind == "name":
            self.advance()
            if t.text in FUNCTIONS:
                self.expect_op("(")
                arg = self.expr()
                self.expect_op(")")
                return Unary(t.text, arg)
            if t.text not in self.variables:
                raise UnknownIdentifier(t.text, t.pos)
            return Var(t.text)
        if t.kind == "op" and t.text == "(":
            self.advance()
            e = self.expr()
            self.expect_op(")")
            return e
        found = "end of input" if t.kind == "end" else repr(t.text)
        raise ExprSyntaxError(f"expected number, name or '(', found {found}", t.pos)


def parse(text: str, variables: Iterable[str] = DEFAULT_VARIABLES) -> Expression:
    """Parse ``text`` into an :class:`Expression`.

    Raises :class:`ExprSyntaxError` with the offending position or
    :class:`UnknownIdentifier` for names outside ``variables``.
    """
    return _Parser(text, frozenset(variables)).parse()


# ---------------------------------------------------------------------------
# evaluation

def _pow(base: float, exponent: float) -> float:
    if float(exponent).is_integer():
        if base == 0.0 and exponent < 0:
            raise EvalDomainError("zero raised to a negative power")
        return base ** int(exponent)
    if base <= 0.0:
        raise EvalDomainError(f"non-integer power of non-positive base {base!r}")
    return base ** exponent


def evaluate(e: Expression, env: Mapping[str, float]) -> float:
    """Evaluate ``e`` in double precision.

    Division by zero, ``ln`` of a non-positive number, ``sqrt`` of a negative
    number and non-integer powers of non-positive bases raise
    :class:`EvalDomainError`.
    """
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return float(env[e.name])
        except KeyError:
            raise UnboundVariable(e.name) from None
    if isinstance(e, Binary):
        a = evaluate(e.left, env)
        b = evaluate(e.right, env)
        if e.op == "add":
            return a + b
        if e.op == "sub":
            return a - b
        if e.op == "mul":
            return a * b
        if b == 0.0:
            raise EvalDomainError("division by zero")
        return a / b
    if isinstance(e, Pow):
        return _pow(evaluate(e.base, env), e.exponent)
    a = evaluate(e.arg, env)
    op = e.op
    if op == "neg":
        return -a
    if op == "sqrt":
        if a < 0.0:
            raise EvalDomainError(f"sqrt of negative number {a!r}")
        return math.sqrt(a)
    if op == "ln":
        if a <= 0.0:
            raise EvalDomainError(f"ln of non-positive number {a!r}")
        return math.log(a)
    if op == "exp":
        try:
            return math.exp(a)
        except OverflowError:
            return math.inf
    return math.sin(a) if op == "sin" else math.cos(a)


# ---------------------------------------------------------------------------
# differentiation

def diff(e: Expression, v: str) -> Expression:
    """Symbolic partial derivative of ``e`` with respect to variable ``v``."""
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == v else ZERO
    if isinstance(e, Binary):
        a, b = e.left, e.right
        da, db = diff(a, v), diff(b, v)
        if e.op == "add":
            return add(da, db)
        if e.op == "sub":
            return sub(da, db)
        if e.op == "mul":
            return add(mul(da, b), mul(a, db))
        # quotient rule
        if is_zero(db):
            return ZERO if is_zero(da) else Binary("div", da, b)
        return Binary("div", sub(mul(da, b), mul(a, db)), Pow(b, 2.0))
    if isinstance(e, Pow):
        du = diff(e.base, v)
        if is_zero(du):
            return ZERO
        return mul(mul(Const(e.exponent), Pow(e.base, e.exponent - 1.0)), du)
    u = e.arg
    du = diff(u, v)
    if is_zero(du):
        return ZERO
    op = e.op
    if op == "neg":
        return neg(du)
    if op == "sqrt":
        return Binary("div", du, mul(Const(2.0), e))
    if op == "sin":
        return mul(Unary("cos", u), du)
    if op == "cos":
        return neg(mul(Unary("sin", u), du))
    if op == "exp":
        return mul(e, du)
    return Binary("div", du, u)  # ln


def gradient(e: Expression, names: Sequence[str]) -> list[Expression]:
    return [diff(e, v) for v in names]


# ---------------------------------------------------------------------------
# printing and compilation

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}
_SYM = {"add": "+", "sub": "-", "mul": "*", "div": "/"}


def _fmt_const(value: float) -> str:
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def to_text(e: Expression) -> str:
    """Render ``e`` in the input grammar; ``parse(to_text(e))`` reproduces ``e``'s value."""
    return _text(e)[0]


def _text(e):
    if isinstance(e, Const):
        s = _fmt_const(e.value)
        return (f"({s})", 5) if e.value < 0 else (s, 5)
    if isinstance(e, Var):
        return e.name, 5
    if isinstance(e, Pow):
        base, p = _text(e.base)
        if p <= _PREC["pow"]:
            base = f"({base})"
        exp = _fmt_const(e.exponent)
        if e.exponent < 0:
            exp = f"({exp})"
        return f"{base}^{exp}", _PREC["pow"]
    if isinstance(e, Unary):
        arg, p = _text(e.arg)
        if e.op == "neg":
            if p < _PREC["neg"]:
                arg = f"({arg})"
            return f"-{arg}", _PREC["neg"]
        return f"{e.op}({arg})", 5
    prec = _PREC[e.op]
    left, lp = _text(e.left)
    right, rp = _text(e.right)
    if lp < prec:
        left = f"({left})"
    if rp <= prec:
        right = f"({right})"
    return f"{left} {_SYM[e.op]} {right}", prec


_NP_FUNC = {"sqrt": "_np.sqrt", "sin": "_np.sin", "cos": "_np.cos",
            "exp": "_np.exp", "ln": "_np.log"}


def _source(e) -> str:
    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Pow):
        base = _source(e.base)
        if e.exponent == 2.0:
            return f"({base})*({base})"
        return f"_pw({base}, {e.exponent!r})"
    if isinstance(e, Unary):
        if e.op == "neg":
            return f"(-({_source(e.arg)}))"
        return f"{_NP_FUNC[e.op]}({_source(e.arg)})"
    return f"(({_source(e.left)}) {_SYM[e.op]} ({_source(e.right)}))"


def _vector_pow(base, exponent):
    if float(exponent).is_integer():
        return np.power(base, exponent)
    return np.where(np.asarray(base) > 0, np.power(np.abs(base), exponent), np.nan)


def compile_expr(e: Expression, names: Sequence[str]) -> Callable:
    """Compile ``e`` into ``f(*values)`` accepting floats or numpy arrays.

    Domain violations produce ``nan``/``inf`` instead of raising, so callers
    working on batches must check finiteness themselves.
    """
    unknown = e.variables() - set(names)
    if unknown:
        raise UnboundVariable(sorted(unknown)[0])
    src = f"def _f({', '.join(names)}):\n    return {_source(e)}\n"
    scope = {"_np": np, "_pw": _vector_pow}
    exec(compile(src, "<expr>", "exec"), scope)
    return scope["_f"]
