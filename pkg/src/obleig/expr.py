"""Tiny arithmetic expression language for coefficient fields and test functions.

The grammar (documented in README.md) is parsed by hand into a sympy tree.
Sympy is only used for differentiation; numerical evaluation walks the tree
with numpy so the semantics of ``min``, ``max`` and ``step`` stay exact and
vectorised.
"""

import re
from functools import lru_cache

import numpy as np
import sympy as sp

from .errors import ExpressionError, UndifferentiableField

VARIABLES = ("x", "y", "s", "t")
ALIASES = {"x1": "x", "x2": "y"}
SYMBOLS = {name: sp.Symbol(name, real=True) for name in VARIABLES}
CONSTANTS = {"pi": sp.pi, "e": sp.E}
UNARY = {
    "exp": sp.exp,
    "cos": sp.cos,
    "sin": sp.sin,
    "tanh": sp.tanh,
    "abs": sp.Abs,
    "step": lambda z: sp.Heaviside(z, 1),
}
VARIADIC = {"min": sp.Min, "max": sp.Max}

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(text):
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ExpressionError(f"unexpected character at {pos} in {text!r}")
        kind = m.lastgroup
        tokens.append((kind, m.group(kind)))
        pos = m.end()
    tokens.append(("end", ""))
    return tokens


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self, value=None):
        tok = self.tokens[self.i]
        if value is not None and tok[1] != value:
            raise ExpressionError(f"expected {value!r}, found {tok[1] or 'end'!r} in {self.text!r}")
        self.i += 1
        return tok

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            raise ExpressionError(f"trailing input {self.peek()[1]!r} in {self.text!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            rhs = self.term()
            node = node + rhs if op == "+" else node - rhs
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            rhs = self.unary()
            node = node * rhs if op == "*" else node / rhs
        return node

    def unary(self):
        if self.peek()[1] == "-":
            self.take()
            return -self.unary()
        if self.peek()[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            return sp.Pow(base, self.unary())
        return base

    def atom(self):
        kind, value = self.take()
        if kind == "num":
            return sp.Rational(value) if ("e" not in value.lower()) else sp.Float(value, 30)
        if kind == "name":
            if self.peek()[1] == "(":
                return self.call(value)
            name = ALIASES.get(value, value)
            if name in SYMBOLS:
                return SYMBOLS[name]
            if name in CONSTANTS:
                return CONSTANTS[name]
            raise ExpressionError(f"unknown name {value!r} in {self.text!r}")
        if value == "(":
            node = self.expr()
            self.take(")")
            return node
        raise ExpressionError(f"unexpected {value or 'end'!r} in {self.text!r}")

    def call(self, name):
        self.take("(")
        args = [self.expr()]
        while self.peek()[1] == ",":
            self.take()
            args.append(self.expr())
        self.take(")")
        if name in UNARY:
            if len(args) != 1:
                raise ExpressionError(f"{name} takes one argument")
            return UNARY[name](args[0])
        if name in VARIADIC:
            if len(args) < 2:
                raise ExpressionError(f"{name} takes at least two arguments")
            return VARIADIC[name](*args)
        raise ExpressionError(f"unknown function {name!r} in {self.text!r}")


@lru_cache(maxsize=512)
def parse(text):
    """Parse an expression string into a sympy tree."""
    if not isinstance(text, str) or not text.strip():
        raise ExpressionError("empty expression")
    return _Parser(text).parse()


_NUMPY_UNARY = {
    sp.exp: np.exp,
    sp.cos: np.cos,
    sp.sin: np.sin,
    sp.tanh: np.tanh,
    sp.cosh: np.cosh,
    sp.sinh: np.sinh,
    sp.log: np.log,
    sp.Abs: np.abs,
    sp.sign: np.sign,
}


def evaluate(node, env):
    """Evaluate a sympy tree with numpy arrays bound to the variable names."""
    if node.is_Symbol:
        try:
            return env[node.name]
        except KeyError:
            raise ExpressionError(f"variable {node.name!r} is not bound") from None
    if node.is_Number or node.is_NumberSymbol:
        return float(node)
    func = node.func
    if func is sp.DiracDelta:
        raise UndifferentiableField(f"distributional term in {node}")
    args = [evaluate(a, env) for a in node.args]
    if func is sp.Add:
        out = args[0]
        for a in args[1:]:
            out = out + a
        return out
    if func is sp.Mul:
        out = args[0]
        for a in args[1:]:
            out = out * a
        return out
    if func is sp.Pow:
        base, expo = args
        if node.args[1].is_Integer:
            return np.asarray(base, dtype=float) ** int(node.args[1])
        return np.power(np.asarray(base, dtype=float), expo)
    if func is sp.Heaviside:
        h0 = args[1] if len(args) > 1 else 0.5
        return np.heaviside(args[0], h0)
    if func is sp.Min:
        return _reduce(np.minimum, args)
    if func is sp.Max:
        return _reduce(np.maximum, args)
    if func in _NUMPY_UNARY:
        return _NUMPY_UNARY[func](args[0])
    if func is sp.Piecewise:
        raise ExpressionError(f"piecewise node not supported: {node}")
    raise ExpressionError(f"cannot evaluate {func.__name__}")


def _reduce(op, args):
    out = args[0]
    for a in args[1:]:
        out = op(out, a)
    return out


class Expression:
    """A parsed expression that can be evaluated and differentiated."""

    def __init__(self, text, node=None):
        self.text = text
        self.node = parse(text) if node is None else node

    @property
    def variables(self):
        return sorted(s.name for s in self.node.free_symbols)

    def __call__(self, **env):
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            val = evaluate(self.node, env)
        shape = np.broadcast_shapes(*[np.shape(v) for v in env.values()]) if env else ()
        return np.broadcast_to(np.asarray(val, dtype=float), shape).copy()

    def diff(self, var, order=1):
        node = self.node
        for _ in range(order):
            node = sp.diff(node, SYMBOLS[ALIASES.get(var, var)])
        if node.has(sp.DiracDelta):
            raise UndifferentiableField(f"{self.text} is not {order} times differentiable in {var}")
        return Expression(str(node), node=node)

    def is_constant(self):
        return not self.node.free_symbols

    def __repr__(self):
        return f"Expression({self.text!r})"


def point_env(points):
    """Bind coordinate columns of an (N, d) array to x and y."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    env = {"x": pts[:, 0]}
    if pts.shape[1] > 1:
        env["y"] = pts[:, 1]
    return env
