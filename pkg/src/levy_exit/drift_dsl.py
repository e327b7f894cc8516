"""A small expression language for scalar drifts ``f(params, x)``.

Grammar (whitespace is ignored)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' INTEGER)*
    atom   := NUMBER | NAME | '(' expr ')'

``x`` is the state variable; any other name is a parameter.  Exponents must be
non-negative integer literals, so ``-x^2`` parses as ``-(x^2)``.

>>> expr = parse_drift("x - beta*x^3")
>>> eval_drift(expr, {"beta": 1.5}, 2.0)
-10.0
>>> free_parameters(expr)
('beta',)
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

__all__ = [
    "Num", "Var", "Param", "Neg", "Add", "Sub", "Mul", "Div", "Pow",
    "DriftExpr", "DriftParseError", "DriftEvalError",
    "parse_drift", "eval_drift", "free_parameters", "to_text",
    "to_polynomial", "compile_rpn",
]


class DriftParseError(ValueError):
    """Malformed drift text.  ``position`` is a 0-based character offset."""

    def __init__(self, message: str, position: int, text: str):
        self.position = position
        self.text = text
        caret = " " * position + "^"
        super().__init__(f"{message} at position {position}\n  {text}\n  {caret}")


class DriftEvalError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    pass


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "DriftExpr"


@dataclass(frozen=True)
class Add:
    left: "DriftExpr"
    right: "DriftExpr"


@dataclass(frozen=True)
class Sub:
    left: "DriftExpr"
    right: "DriftExpr"


@dataclass(frozen=True)
class Mul:
    left: "DriftExpr"
    right: "DriftExpr"


@dataclass(frozen=True)
class Div:
    left: "DriftExpr"
    right: "DriftExpr"


@dataclass(frozen=True)
class Pow:
    base: "DriftExpr"
    exponent: int


DriftExpr = Union[Num, Var, Param, Neg, Add, Sub, Mul, Div, Pow]

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            start = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise DriftParseError(f"unexpected character {text[start]!r}", start, text)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
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

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, expected: str):
        kind, value, pos = self.peek()
        found = "end of input" if kind == "end" else repr(value)
        raise DriftParseError(f"expected {expected}, found {found}", pos, self.text)

    def parse(self) -> DriftExpr:
        node = self.expr()
        if self.peek()[0] != "end":
            self.fail("operator or end of input")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.advance()[1]
            rhs = self.term()
            node = Add(node, rhs) if op == "+" else Sub(node, rhs)
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.advance()[1]
            rhs = self.unary()
            node = Mul(node, rhs) if op == "*" else Div(node, rhs)
        return node

    def unary(self):
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self):
        node = self.atom()
        while self.peek()[0] == "op" and self.peek()[1] == "^":
            self.advance()
            kind, value, pos = self.peek()
            if kind != "num" or not value.isdigit():
                raise DriftParseError(
                    "exponent must be a non-negative integer literal", pos, self.text
                )
            self.advance()
            node = Pow(node, int(value))
        return node

    def atom(self):
        kind, value, pos = self.peek()
        if kind == "num":
            self.advance()
            v = float(value)
            if not math.isfinite(v):
                raise DriftParseError("numeric literal overflows", pos, self.text)
            return Num(v)
        if kind == "name":
            self.advance()
            return Var() if value == "x" else Param(value)
        if kind == "op" and value == "(":
            self.advance()
            node = self.expr()
            if not (self.peek()[0] == "op" and self.peek()[1] == ")"):
                self.fail("')'")
            self.advance()
            return node
        self.fail("number, name or '('")


def parse_drift(text: str) -> DriftExpr:
    """Parse drift text into an immutable expression tree."""
    if not isinstance(text, str) or not text.strip():
        raise DriftParseError("empty drift expression", 0, text if isinstance(text, str) else "")
    return _Parser(text).parse()


def free_parameters(expr: DriftExpr) -> tuple[str, ...]:
    """Parameter names in order of first appearance (``x`` excluded)."""
    seen: dict[str, None] = {}

    def walk(node):
        if isinstance(node, Param):
            seen.setdefault(node.name, None)
        elif isinstance(node, Neg):
            walk(node.operand)
        elif isinstance(node, Pow):
            walk(node.base)
        elif isinstance(node, (Add, Sub, Mul, Div)):
            walk(node.left)
            walk(node.right)

    walk(expr)
    return tuple(seen)


def _eval(node, env, x):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return x
    if isinstance(node, Param):
        try:
            return float(env[node.name])
        except KeyError:
            raise DriftEvalError(f"unbound drift parameter {node.name!r}") from None
    if isinstance(node, Neg):
        return -_eval(node.operand, env, x)
    if isinstance(node, Pow):
        return _eval(node.base, env, x) ** node.exponent
    left = _eval(node.left, env, x)
    right = _eval(node.right, env, x)
    if isinstance(node, Add):
        return left + right
    if isinstance(node, Sub):
        return left - right
    if isinstance(node, Mul):
        return left * right
    return left / right


def eval_drift(expr: DriftExpr, env: Mapping[str, float], x):
    """Evaluate ``expr`` at ``x`` (scalar or array) with parameters from ``env``.

    Non-finite results, e.g. from division by zero, raise ``DriftEvalError``.
    """
    xa = np.asarray(x, dtype=float)
    with np.errstate(all="ignore"):
        value = np.asarray(_eval(expr, env, xa), dtype=float)
    value = np.broadcast_to(value, xa.shape)
    if not np.all(np.isfinite(value)):
        raise DriftEvalError("drift evaluates to a non-finite value")
    return float(value) if value.ndim == 0 else value.copy()


_PREC = {Add: 1, Sub: 1, Mul: 2, Div: 2, Neg: 3, Pow: 4}
_SYMBOL = {Add: "+", Sub: "-", Mul: "*", Div: "/"}


def to_text(expr: DriftExpr) -> str:
    """Render with the minimal parentheses needed to re-parse to the same tree."""

    def render(node, min_prec):
        if isinstance(node, Num):
            return repr(node.value)
        if isinstance(node, Var):
            return "x"
        if isinstance(node, Param):
            return node.name
        prec = _PREC[type(node)]
        if isinstance(node, Neg):
            s = "-" + render(node.operand, prec)
        elif isinstance(node, Pow):
            s = f"{render(node.base, prec + 1)}^{node.exponent}"
        else:
            # left-associative: the right operand needs strictly higher precedence
            s = f"{render(node.left, prec)} {_SYMBOL[type(node)]} {render(node.right, prec + 1)}"
        return f"({s})" if prec < min_prec else s

    return render(expr, 0)


def to_polynomial(expr: DriftExpr, env: Mapping[str, float]) -> np.ndarray | None:
    """Coefficients ``c`` with ``f(x) = sum c[k] x^k``, or ``None`` if not polynomial.

    Division is accepted only by expressions free of ``x``.
    """
    P = np.polynomial.polynomial

    def poly(node):
        if isinstance(node, Num):
            return np.array([node.value])
        if isinstance(node, Var):
            return np.array([0.0, 1.0])
        if isinstance(node, Param):
            return np.array([float(_eval(node, env, 0.0))])
        if isinstance(node, Neg):
            p = poly(node.operand)
            return None if p is None else -p
        if isinstance(node, Pow):
            p = poly(node.base)
            return None if p is None else P.polypow(p, node.exponent)
        left, right = poly(node.left), poly(node.right)
        if left is None or right is None:
            return None
        if isinstance(node, Add):
            return P.polyadd(left, right)
        if isinstance(node, Sub):
            return P.polysub(left, right)
        if isinstance(node, Mul):
            return P.polymul(left, right)
        right = P.polytrim(right)
        if right.size != 1:
            return None
        with np.errstate(all="ignore"):
            return left / right[0]

    coeffs = poly(expr)
    if coeffs is None or not np.all(np.isfinite(coeffs)):
        return None
    return np.asarray(coeffs, dtype=float)


# Opcodes for the stack program produced by compile_rpn.
OP_CONST, OP_X, OP_NEG, OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_POW = range(8)


def compile_rpn(expr: DriftExpr, env: Mapping[str, float]) -> tuple[np.ndarray, np.ndarray]:
    """Flatten ``expr`` into a postfix program ``(opcodes, operands)``.

    Parameters are bound to constants; ``OP_POW`` carries its exponent in
    ``operands``.  Used by compiled path simulators that cannot walk trees.
    """
    ops: list[int] = []
    args: list[float] = []

    def emit(node):
        if isinstance(node, Num):
            ops.append(OP_CONST); args.append(node.value)
        elif isinstance(node, Param):
            ops.append(OP_CONST); args.append(float(_eval(node, env, 0.0)))
        elif isinstance(node, Var):
            ops.append(OP_X); args.append(0.0)
        elif isinstance(node, Neg):
            emit(node.operand)
            ops.append(OP_NEG); args.append(0.0)
        elif isinstance(node, Pow):
            emit(node.base)
            ops.append(OP_POW); args.append(float(node.exponent))
        else:
            emit(node.left)
            emit(node.right)
            code = {Add: OP_ADD, Sub: OP_SUB, Mul: OP_MUL, Div: OP_DIV}[type(node)]
            ops.append(code); args.append(0.0)

    emit(expr)
    return np.array(ops, dtype=np.int64), np.array(args, dtype=float)
