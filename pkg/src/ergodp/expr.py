"""Small arithmetic expression language for problem data.

Expressions are trees over state variables x1..xn and control variables
u1..um, numeric constants, the binary operators + - * / ^, unary minus,
and the functions exp, log, sin, cos, sqrt, abs.  Evaluation is plain
IEEE-754 double arithmetic and broadcasts over numpy arrays, so the same
tree can be evaluated at a single point or at every grid node at once.

Trees are immutable; evaluation has no side effects and is safe to call
from parallel assembly loops.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import DomainError, ExprSyntaxError, UnknownIdentifier

__all__ = [
    "Expr", "Num", "Var", "Neg", "Bin", "Call",
    "parse_expr", "eval_expr", "to_source", "expr_constant",
]


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    kind: str   # "x" or "u"
    index: int  # zero-based


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class Bin:
    op: str  # one of + - * / ^
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    fn: str
    arg: "Expr"


Expr = Union[Num, Var, Neg, Bin, Call]

_FUNCTIONS = ("exp", "log", "sin", "cos", "sqrt", "abs")

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)

_VAR_RE = re.compile(r"^([xu])([1-9]\d*)$")


def _tokenize(source: str):
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            stripped = source[pos:].lstrip()
            if not stripped:
                break
            raise ExprSyntaxError(
                f"unexpected character {stripped[0]!r}",
                len(source) - len(stripped),
                expected=("number", "identifier", "operator"),
            )
        if m.group("num") is not None:
            tokens.append(("num", m.group("num"), m.start("num")))
        elif m.group("ident") is not None:
            tokens.append(("ident", m.group("ident"), m.start("ident")))
        else:
            tokens.append(("op", m.group("op"), m.start("op")))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    """Recursive descent with standard precedence.

    ^ binds tighter than unary minus, which binds tighter than * and /,
    which bind tighter than + and -.  Binary + - * / are left
    associative, ^ is right associative.
    """

    def __init__(self, source: str, n_x=None, n_u=None):
        self.source = source
        self.tokens = _tokenize(source)
        self.pos = 0
        self.n_x = n_x
        self.n_u = n_u

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op):
        kind, value, offset = self.peek()
        if kind == "op" and value == op:
            return self.advance()
        raise ExprSyntaxError(f"expected '{op}'", offset, expected=(op,))

    def parse(self):
        tree = self.sum_expr()
        kind, value, offset = self.peek()
        if kind != "end":
            raise ExprSyntaxError(
                f"trailing input {value!r}", offset, expected=("end of input",)
            )
        return tree

    def sum_expr(self):
        node = self.term()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "+-":
                self.advance()
                node = Bin(value, node, self.term())
            else:
                return node

    def term(self):
        node = self.factor()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "*/":
                self.advance()
                node = Bin(value, node, self.factor())
            else:
                return node

    def factor(self):
        kind, value, _ = self.peek()
        if kind == "op" and value == "-":
            self.advance()
            return Neg(self.factor())
        return self.power()

    def power(self):
        base = self.atom()
        kind, value, _ = self.peek()
        if kind == "op" and value == "^":
            self.advance()
            # exponent may carry its own unary minus: x^-2
            return Bin("^", base, self.factor())
        return base

    def atom(self):
        kind, value, offset = self.advance()
        if kind == "num":
            return Num(float(value))
        if kind == "ident":
            if value in _FUNCTIONS:
                self.expect_op("(")
                arg = self.sum_expr()
                self.expect_op(")")
                return Call(value, arg)
            m = _VAR_RE.match(value)
            if m is None:
                raise UnknownIdentifier(value, offset)
            var_kind, idx = m.group(1), int(m.group(2)) - 1
            limit = self.n_x if var_kind == "x" else self.n_u
            if limit is not None and idx >= limit:
                raise UnknownIdentifier(value, offset)
            return Var(var_kind, idx)
        if kind == "op" and value == "(":
            node = self.sum_expr()
            self.expect_op(")")
            return node
        raise ExprSyntaxError(
            f"unexpected token {value!r}" if value else "unexpected end of input",
            offset,
            expected=("number", "identifier", "("),
        )


def parse_expr(source: str, n_x: int | None = None, n_u: int | None = None) -> Expr:
    """Parse expression source into an AST.

    When ``n_x``/``n_u`` are given, variable indices are validated
    against them; otherwise any positive index is admitted.
    """
    return _Parser(source, n_x, n_u).parse()


def eval_expr(e: Expr, x, u=None):
    """Evaluate ``e`` at state ``x`` and control ``u``.

    ``x`` has shape (n_x,) or (..., n_x); ``u`` likewise with trailing
    dimension n_u.  The result broadcasts over the leading axes.  Raises
    DomainError for log or sqrt of a negative argument.
    """
    x = np.asarray(x, dtype=float)
    if u is not None:
        u = np.asarray(u, dtype=float)
    return _eval(e, x, u)


def _eval(e, x, u):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        if e.kind == "x":
            return x[..., e.index]
        if u is None:
            raise DomainError("expression references a control variable but no control was given")
        return u[..., e.index]
    if isinstance(e, Neg):
        return -_eval(e.operand, x, u)
    if isinstance(e, Bin):
        a = _eval(e.left, x, u)
        b = _eval(e.right, x, u)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.divide(a, b)
        # integral powers are the common case; keep them exact and fast
        with np.errstate(over="ignore", invalid="ignore"):
            if isinstance(e.right, Num) and float(e.right.value).is_integer():
                return np.power(a, int(e.right.value))
            return np.power(a, b)
    if isinstance(e, Call):
        a = _eval(e.arg, x, u)
        if e.fn == "exp":
            return np.exp(a)
        if e.fn == "log":
            if np.any(np.asarray(a) < 0):
                raise DomainError("log of negative argument")
            return np.log(a)
        if e.fn == "sin":
            return np.sin(a)
        if e.fn == "cos":
            return np.cos(a)
        if e.fn == "sqrt":
            if np.any(np.asarray(a) < 0):
                raise DomainError("sqrt of negative argument")
            return np.sqrt(a)
        if e.fn == "abs":
            return np.abs(a)
    raise TypeError(f"not an expression node: {e!r}")


# precedence levels used by the printer; parenthesize a child whenever
# its level is below the level required by its context
_PREC_SUM, _PREC_TERM, _PREC_UNARY, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def to_source(e: Expr) -> str:
    """Pretty-print with minimal parentheses.

    Structural round trip holds: parse(to_source(t)) == t.
    """
    return _print(e, 0)


def _print(e, context):
    if isinstance(e, Num):
        v = e.value
        text = repr(int(v)) if float(v).is_integer() and abs(v) < 1e16 else repr(v)
        return text
    if isinstance(e, Var):
        return f"{e.kind}{e.index + 1}"
    if isinstance(e, Call):
        return f"{e.fn}({_print(e.arg, 0)})"
    if isinstance(e, Neg):
        inner = _print(e.operand, _PREC_UNARY)
        text = f"-{inner}"
        return f"({text})" if context > _PREC_UNARY else text
    if isinstance(e, Bin):
        if e.op in "+-":
            prec = _PREC_SUM
        elif e.op in "*/":
            prec = _PREC_TERM
        else:
            prec = _PREC_POW
        if e.op == "^":
            # right associative: left operand needs the tighter context
            left = _print(e.left, _PREC_ATOM)
            right = _print(e.right, _PREC_POW)
        else:
            # left associative: right operand at equal precedence must
            # keep its parentheses so the tree shape survives reparsing
            left = _print(e.left, prec)
            right = _print(e.right, prec + 1)
        text = f"{left}{e.op}{right}" if e.op == "^" else f"{left} {e.op} {right}"
        return f"({text})" if context > prec else text
    raise TypeError(f"not an expression node: {e!r}")


def expr_constant(value: float) -> Expr:
    return Num(float(value))
