"""A small arithmetic expression language over ``x`` and ``t``.

Grammar (``^`` binds tighter than unary minus and is right associative)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'

Names are ``x``, ``t`` and the constants ``pi`` and ``e``.  Functions are
listed in ``FUNCTIONS``.  The printer emits a fully parenthesised canonical
form with ``repr`` floats, so ``parse(to_string(parse(s)))`` reproduces the
tree bit for bit.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = ["Num", "Var", "Neg", "BinOp", "Call", "parse", "to_string", "evaluate", "FUNCTIONS", "compile_expr"]


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


def _step(v):
    return np.where(v >= 0.0, 1.0, 0.0)


FUNCTIONS = {
    "sin": (1, np.sin),
    "cos": (1, np.cos),
    "exp": (1, np.exp),
    "log": (1, np.log),
    "sqrt": (1, np.sqrt),
    "abs": (1, np.abs),
    "tanh": (1, np.tanh),
    "step": (1, _step),
    "min": (2, np.minimum),
    "max": (2, np.maximum),
}
CONSTANTS = {"pi": math.pi, "e": math.e}
VARIABLES = ("x", "t")

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(src: str):
    pos, out = 0, []
    src = src.rstrip()
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            raise ConfigError(f"unexpected character at position {pos} in {src!r}", position=pos)
        kind = m.lastgroup
        out.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    out.append(("end", "", len(src)))
    return out


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.toks = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self, value=None):
        tok = self.toks[self.i]
        if value is not None and tok[1] != value:
            raise ConfigError(f"expected {value!r} at position {tok[2]} in {self.src!r}", position=tok[2])
        self.i += 1
        return tok

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.peek() == ("op", "-", self.peek()[2]):
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "name":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                if val not in FUNCTIONS:
                    raise ConfigError(f"unknown function {val!r}", position=pos)
                self.take("(")
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.take(",")
                    args.append(self.expr())
                self.take(")")
                arity = FUNCTIONS[val][0]
                if len(args) != arity:
                    raise ConfigError(f"{val} takes {arity} argument(s), got {len(args)}", position=pos)
                return Call(val, tuple(args))
            if val in VARIABLES or val in CONSTANTS:
                return Var(val)
            raise ConfigError(f"unknown name {val!r}", position=pos)
        if val == "(":
            node = self.expr()
            self.take(")")
            return node
        raise ConfigError(f"unexpected token {val!r} at position {pos} in {self.src!r}", position=pos)


def parse(src) -> object:
    """Parse an expression string (numbers are accepted as-is)."""
    if isinstance(src, (int, float)) and not isinstance(src, bool):
        if not math.isfinite(src):
            raise ConfigError("non-finite constant")
        return Num(float(src)) if src >= 0 else Neg(Num(-float(src)))
    if not isinstance(src, str) or not src.strip():
        raise ConfigError(f"expression must be a non-empty string, got {src!r}")
    p = _Parser(src)
    node = p.expr()
    if p.peek()[0] != "end":
        tok = p.peek()
        raise ConfigError(f"trailing input at position {tok[2]} in {src!r}", position=tok[2])
    return node


def to_string(node) -> str:
    """Canonical fully parenthesised form."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_string(node.arg)})"
    if isinstance(node, BinOp):
        return f"({to_string(node.left)} {node.op} {to_string(node.right)})"
    if isinstance(node, Call):
        return f"{node.name}({', '.join(to_string(a) for a in node.args)})"
    raise TypeError(f"not an expression node: {node!r}")


def evaluate(node, x=0.0, t=0.0):
    """Evaluate with numpy broadcasting over ``x`` and ``t``."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        if node.name == "x":
            return x
        if node.name == "t":
            return t
        return CONSTANTS[node.name]
    if isinstance(node, Neg):
        return -evaluate(node.arg, x, t)
    if isinstance(node, BinOp):
        a = np.asarray(evaluate(node.left, x, t), dtype=float)
        b = np.asarray(evaluate(node.right, x, t), dtype=float)
        with np.errstate(all="ignore"):
            if node.op == "+":
                return a + b
            if node.op == "-":
                return a - b
            if node.op == "*":
                return a * b
            if node.op == "/":
                return a / b
            return np.power(a, b)
    if isinstance(node, Call):
        fun = FUNCTIONS[node.name][1]
        with np.errstate(all="ignore"):
            return fun(*(np.asarray(evaluate(a, x, t), dtype=float) for a in node.args))
    raise TypeError(f"not an expression node: {node!r}")


def uses_t(node) -> bool:
    if isinstance(node, Var):
        return node.name == "t"
    if isinstance(node, Neg):
        return uses_t(node.arg)
    if isinstance(node, BinOp):
        return uses_t(node.left) or uses_t(node.right)
    if isinstance(node, Call):
        return any(uses_t(a) for a in node.args)
    return False


def compile_expr(src):
    """Parse ``src`` and return ``f(x, t)`` that always yields a finite float array."""
    node = parse(src)

    def f(x, t=0.0):
        v = np.broadcast_to(np.asarray(evaluate(node, x, t), dtype=float), np.broadcast(np.asarray(x), np.asarray(t)).shape)
        if not np.all(np.isfinite(v)):
            raise ConfigError(f"expression {to_string(node)} is not finite on the grid")
        return np.array(v)

    f.node = node
    f.depends_on_t = uses_t(node)
    return f
