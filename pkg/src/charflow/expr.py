"""Coefficient expression language: parsing, evaluation, symbolic derivatives.

Expressions are small ASTs over the variables ``x`` and ``t`` with the
operations + - * / ^ (integer exponent), unary minus and sin/cos/exp.
They are immutable, hashable, print back to parseable source, and carry
exact symbolic derivatives so that downstream quadratures of terms like
``da/dt / a^2`` are free of finite-difference noise.
"""

from __future__ import annotations

import functools
import math
import re
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Expr",
    "Const",
    "Var",
    "Unary",
    "Binary",
    "ParseError",
    "EvalError",
    "parse_expression",
    "differentiate",
    "evaluate",
    "compile_expr",
    "is_zero",
]


class ParseError(ValueError):
    """Malformed expression source; carries the byte offset of the error."""

    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} (at offset {pos})")
        self.pos = pos


class EvalError(ArithmeticError):
    """Raised when evaluation hits a genuine singularity (division by zero)."""


class Expr:
    """Base class for expression nodes."""

    def eval(self, x, t):
        """Checked tree-walk evaluation; x and t may be scalars or arrays."""
        raise NotImplementedError

    def diff(self, var: str) -> "Expr":
        """Exact symbolic derivative with respect to ``var`` ('x' or 't')."""
        raise NotImplementedError

    def __str__(self) -> str:
        return _to_src(self, 0)

    def __call__(self, x, t):
        return compile_expr(self)(x, t)


@dataclass(frozen=True)
class Const(Expr):
    value: float

    def eval(self, x, t):
        return self.value

    def diff(self, var):
        return Const(0.0)


@dataclass(frozen=True)
class Var(Expr):
    name: str  # 'x' or 't'

    def eval(self, x, t):
        return x if self.name == "x" else t

    def diff(self, var):
        return Const(1.0) if self.name == var else Const(0.0)


@dataclass(frozen=True)
class Unary(Expr):
    op: str  # neg | sin | cos | exp
    arg: Expr

    def eval(self, x, t):
        v = self.arg.eval(x, t)
        if self.op == "neg":
            return -v
        if self.op == "sin":
            return np.sin(v)
        if self.op == "cos":
            return np.cos(v)
        return np.exp(v)

    def diff(self, var):
        da = self.arg.diff(var)
        if self.op == "neg":
            return _neg(da)
        if self.op == "sin":
            return _mul(Unary("cos", self.arg), da)
        if self.op == "cos":
            return _neg(_mul(Unary("sin", self.arg), da))
        return _mul(Unary("exp", self.arg), da)


@dataclass(frozen=True)
class Binary(Expr):
    op: str  # + - * / ^
    left: Expr
    right: Expr

    def eval(self, x, t):
        a = self.left.eval(x, t)
        if self.op == "^":
            n = int(self.right.value)  # parser guarantees integer Const
            if n < 0 and np.any(np.asarray(a) == 0.0):
                raise EvalError(f"zero base with negative exponent in '{self}'")
            return a ** n
        b = self.right.eval(x, t)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if np.any(np.asarray(b) == 0.0):
            raise EvalError(f"division by zero in '{self}'")
        return a / b

    def diff(self, var):
        if self.op == "^":
            n = self.right.value
            # d(u^n) = n * u^(n-1) * u'
            return _mul(_mul(_const(n), _pow(self.left, n - 1)), self.left.diff(var))
        da, db = self.left.diff(var), self.right.diff(var)
        if self.op == "+":
            return _add(da, db)
        if self.op == "-":
            return _sub(da, db)
        if self.op == "*":
            return _add(_mul(da, self.right), _mul(self.left, db))
        # quotient rule
        num = _sub(_mul(da, self.right), _mul(self.left, db))
        return _div(num, _pow(self.right, 2))


# ---------------------------------------------------------------------------
# Folding constructors. They keep derivative trees small (constant folding
# and 0/1 identities only; anything fancier is out of scope). Canonical trees
# never hold a negative Const: the sign lives in a 'neg' node so that
# parse(str(e)) reproduces e structurally.

def _const(v: float) -> Expr:
    if v < 0.0:
        return Unary("neg", Const(-v))
    return Const(v)


def _const_value(e: Expr):
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Unary) and e.op == "neg" and isinstance(e.arg, Const):
        return -e.arg.value
    return None


def _neg(a: Expr) -> Expr:
    va = _const_value(a)
    if va is not None:
        return _const(-va)
    if isinstance(a, Unary) and a.op == "neg":
        return a.arg
    return Unary("neg", a)


def _add(a: Expr, b: Expr) -> Expr:
    va, vb = _const_value(a), _const_value(b)
    if va is not None and vb is not None:
        return _const(va + vb)
    if va == 0.0:
        return b
    if vb == 0.0:
        return a
    return Binary("+", a, b)


def _sub(a: Expr, b: Expr) -> Expr:
    va, vb = _const_value(a), _const_value(b)
    if va is not None and vb is not None:
        return _const(va - vb)
    if vb == 0.0:
        return a
    if va == 0.0:
        return _neg(b)
    return Binary("-", a, b)


def _mul(a: Expr, b: Expr) -> Expr:
    va, vb = _const_value(a), _const_value(b)
    if va is not None and vb is not None:
        return _const(va * vb)
    if va == 0.0 or vb == 0.0:
        return Const(0.0)
    if va == 1.0:
        return b
    if vb == 1.0:
        return a
    return Binary("*", a, b)


def _div(a: Expr, b: Expr) -> Expr:
    va, vb = _const_value(a), _const_value(b)
    if va == 0.0:
        return Const(0.0)
    if vb == 1.0:
        return a
    if va is not None and vb is not None and vb != 0.0:
        return _const(va / vb)
    return Binary("/", a, b)


def _pow(base: Expr, n) -> Expr:
    n = float(n)
    if n == 0.0:
        return Const(1.0)
    if n == 1.0:
        return base
    vb = _const_value(base)
    if vb is not None:
        return _const(vb ** n)
    return Binary("^", base, Const(n))


# ---------------------------------------------------------------------------
# Printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _to_src(e: Expr, parent_prec: int) -> str:
    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Unary):
        if e.op == "neg":
            s = "-" + _to_src(e.arg, _PREC["neg"])
            return f"({s})" if parent_prec > _PREC["neg"] else s
        return f"{e.op}({_to_src(e.arg, 0)})"
    assert isinstance(e, Binary)
    if e.op == "^":
        base = _to_src(e.left, _PREC["^"] + 1)  # force parens on non-atoms
        n = int(e.right.value)
        s = f"{base}^{n}"
        return s
    prec = _PREC[e.op]
    left = _to_src(e.left, prec)
    # right child at equal precedence is parenthesized so that reparsing the
    # (left-associative) source reproduces the tree structurally
    right = _to_src(e.right, prec + 1)
    if e.op in "+-":
        s = f"{left} {e.op} {right}"
    else:
        s = f"{left}{e.op}{right}"
    return f"({s})" if prec < parent_prec else s


# ---------------------------------------------------------------------------
# Parser: recursive descent over a token stream with byte offsets.

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)

_FUNCS = ("sin", "cos", "exp")
_VARS = ("x", "t")


def _tokenize(src: str):
    tokens = []
    pos = 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            stripped = src[pos:].lstrip()
            if not stripped:
                break
            at = len(src) - len(stripped)
            raise ParseError(f"unexpected character {stripped[0]!r}", at)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, symbol: str):
        kind, val, pos = self.next()
        if kind != "op" or val != symbol:
            raise ParseError(f"expected {symbol!r}", pos)

    def parse(self) -> Expr:
        e = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {val!r}", pos)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.next()
                e = Binary(val, e, self.term())
            else:
                return e

    def term(self) -> Expr:
        e = self.factor()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                self.next()
                e = Binary(val, e, self.factor())
            else:
                return e

    def factor(self) -> Expr:
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.next()
            return Unary("neg", self.factor())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.next()
            return Binary("^", base, Const(self.exponent()))
        return base

    def exponent(self) -> float:
        sign = 1.0
        kind, val, pos = self.next()
        if kind == "op" and val == "-":
            sign = -1.0
            kind, val, pos = self.next()
        if kind != "num":
            raise ParseError("non-integer exponent", pos)
        v = float(val)
        if v != int(v):
            raise ParseError("non-integer exponent", pos)
        return sign * v

    def atom(self) -> Expr:
        kind, val, pos = self.next()
        if kind == "num":
            return Const(float(val))
        if kind == "ident":
            if val in _VARS:
                return Var(val)
            if val in _FUNCS:
                self.expect_op("(")
                arg = self.expr()
                self.expect_op(")")
                return Unary(val, arg)
            raise ParseError(f"unknown identifier {val!r}", pos)
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect_op(")")
            return e
        raise ParseError(f"unexpected token {val!r}", pos)


def parse_expression(src: str) -> Expr:
    """Parse infix source over x, t into an AST.

    Precedence, tightest first: ^ (integer exponent), unary -, * /, + -.
    Raises :class:`ParseError` with the byte offset on malformed input.
    """
    return _Parser(src).parse()


def differentiate(e: Expr, var: str) -> Expr:
    """Symbolic derivative of ``e`` with respect to ``var`` ('x' or 't')."""
    if var not in _VARS:
        raise ValueError(f"variable must be one of {_VARS}, got {var!r}")
    return e.diff(var)


def evaluate(e: Expr, x, t):
    """Evaluate with broadcasting; always returns an ndarray for array input."""
    v = e.eval(x, t)
    shape = np.broadcast(np.asarray(x), np.asarray(t)).shape
    if shape and np.ndim(v) == 0:
        return np.full(shape, float(v))
    return np.asarray(v, dtype=float) if shape else float(v)


def is_zero(e: Expr) -> bool:
    """True for the literal zero expression (used to short-circuit operators)."""
    return isinstance(e, Const) and e.value == 0.0


def _emit(e: Expr) -> str:
    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Unary):
        if e.op == "neg":
            return f"(-{_emit(e.arg)})"
        return f"np.{e.op}({_emit(e.arg)})"
    if e.op == "^":
        return f"({_emit(e.left)})**({int(e.right.value)})"
    return f"({_emit(e.left)}{e.op}{_emit(e.right)})"


@functools.lru_cache(maxsize=4096)
def compile_expr(e: Expr):
    """Compile to a fast numpy-backed callable f(x, t).

    The compiled path skips the division-by-zero reporting of ``Expr.eval``;
    engines call it only on validated scenarios.
    """
    src = f"lambda x, t: {_emit(e)}"
    fn = eval(src, {"np": np, "math": math})  # noqa: S307 - generated from our own AST
    return fn
