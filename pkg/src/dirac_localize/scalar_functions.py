"""Periodic scalar functions with analytic first and second derivatives.

Functions come either from the built-in registry or from a small arithmetic
expression grammar:

    expr   = term { ("+" | "-") term }
    term   = factor { ("*" | "/") factor }
    factor = ["+" | "-"] power
    power  = atom [ "^" factor ]           (integer exponents)
    atom   = NUMBER | "pi" | "x" | "y" | "z"
           | ("sin" | "cos") "(" expr ")" | "(" expr ")"

Derivatives are produced symbolically on the parsed tree, so the assembled
perturbations stay exactly local on the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = ["ScalarFunction", "get_function", "parse_expression", "REGISTRY_NAMES"]

_VARS = ("x", "y", "z")


# ---------------------------------------------------------------------------
# expression AST


class Node:
    def ev(self, env):  # pragma: no cover - interface
        raise NotImplementedError

    def diff(self, var: str) -> "Node":  # pragma: no cover - interface
        raise NotImplementedError


@dataclass(frozen=True)
class Const(Node):
    value: float

    def ev(self, env):
        return self.value

    def diff(self, var):
        return Const(0.0)

    def __str__(self):
        return repr(self.value)


@dataclass(frozen=True)
class Var(Node):
    name: str

    def ev(self, env):
        return env[self.name]

    def diff(self, var):
        return Const(1.0 if var == self.name else 0.0)

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Bin(Node):
    op: str
    left: Node
    right: Node

    def ev(self, env):
        a, b = self.left.ev(env), self.right.ev(env)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        return a / b

    def diff(self, var):
        a, b = self.left, self.right
        da, db = a.diff(var), b.diff(var)
        if self.op == "+":
            return Bin("+", da, db)
        if self.op == "-":
            return Bin("-", da, db)
        if self.op == "*":
            return Bin("+", Bin("*", da, b), Bin("*", a, db))
        num = Bin("-", Bin("*", da, b), Bin("*", a, db))
        return Bin("/", num, Bin("*", b, b))

    def __str__(self):
        return f"({self.left} {self.op} {self.right})"


@dataclass(frozen=True)
class Pow(Node):
    base: Node
    exponent: int

    def ev(self, env):
        return self.base.ev(env) ** self.exponent

    def diff(self, var):
        if self.exponent == 0:
            return Const(0.0)
        inner = self.base.diff(var)
        return Bin(
            "*",
            Bin("*", Const(float(self.exponent)), Pow(self.base, self.exponent - 1)),
            inner,
        )

    def __str__(self):
        return f"({self.base}^{self.exponent})"


@dataclass(frozen=True)
class Trig(Node):
    fn: str
    arg: Node

    def ev(self, env):
        val = self.arg.ev(env)
        return np.sin(val) if self.fn == "sin" else np.cos(val)

    def diff(self, var):
        inner = self.arg.diff(var)
        if self.fn == "sin":
            return Bin("*", Trig("cos", self.arg), inner)
        return Bin("*", Bin("-", Const(0.0), Trig("sin", self.arg)), inner)

    def __str__(self):
        return f"{self.fn}({self.arg})"


def _tokenize(text: str) -> list[str]:
    out, i = [], 0
    while i < len(text):
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch in "+-*/^()":
            out.append(ch)
            i += 1
        elif ch.isdigit() or ch == ".":
            j = i
            while j < len(text) and (text[j].isdigit() or text[j] == "."):
                j += 1
            out.append(text[i:j])
            i = j
        elif ch.isalpha():
            j = i
            while j < len(text) and text[j].isalpha():
                j += 1
            out.append(text[i:j])
            i = j
        else:
            raise ValueError(f"unexpected character {ch!r} in expression")
    return out


class _Parser:
    def __init__(self, tokens: list[str]):
        self.toks = tokens
        self.pos = 0

    def peek(self):
        return self.toks[self.pos] if self.pos < len(self.toks) else None

    def take(self, expect=None):
        tok = self.peek()
        if tok is None:
            raise ValueError("unexpected end of expression")
        if expect is not None and tok != expect:
            raise ValueError(f"expected {expect!r}, found {tok!r}")
        self.pos += 1
        return tok

    def parse(self) -> Node:
        node = self.expr()
        if self.peek() is not None:
            raise ValueError(f"trailing input from {self.peek()!r}")
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek() in ("+", "-"):
            op = self.take()
            node = Bin(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.factor()
        while self.peek() in ("*", "/"):
            op = self.take()
            node = Bin(op, node, self.factor())
        return node

    def factor(self) -> Node:
        if self.peek() in ("+", "-"):
            op = self.take()
            inner = self.factor()
            return inner if op == "+" else Bin("-", Const(0.0), inner)
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek() == "^":
            self.take("^")
            exp_node = self.factor()
            if not isinstance(exp_node, Const) or exp_node.value != int(exp_node.value):
                raise ValueError("exponent must be an integer constant")
            return Pow(base, int(exp_node.value))
        return base

    def atom(self) -> Node:
        tok = self.take()
        if tok == "(":
            node = self.expr()
            self.take(")")
            return node
        if tok in ("sin", "cos"):
            self.take("(")
            node = self.expr()
            self.take(")")
            return Trig(tok, node)
        if tok == "pi":
            return Const(math.pi)
        if tok in _VARS:
            return Var(tok)
        try:
            return Const(float(tok))
        except ValueError:
            raise ValueError(f"unknown token {tok!r}") from None


def parse_expression(text: str) -> Node:
    return _Parser(_tokenize(text)).parse()


# ---------------------------------------------------------------------------
# scalar function container


class ScalarFunction:
    """f with analytic gradient and Hessian evaluators on n torus variables."""

    def __init__(self, name: str, tree: Node, n: int):
        self.name = name
        self.n = n
        self.tree = tree
        self._grad = [tree.diff(_VARS[j]) for j in range(n)]
        self._hess = [
            [self._grad[j].diff(_VARS[k]) for k in range(n)] for j in range(n)
        ]

    def _env(self, points: np.ndarray) -> dict:
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points[None, :]
        return {v: points[..., j] for j, v in enumerate(_VARS[: self.n])}

    def value(self, points) -> np.ndarray:
        return np.broadcast_to(self.tree.ev(self._env(points)), np.shape(points)[:-1]).copy()

    def grad(self, points, axis: int) -> np.ndarray:
        env = self._env(points)
        return np.broadcast_to(self._grad[axis].ev(env), np.shape(points)[:-1]).copy()

    def hess(self, points, a: int, b: int) -> np.ndarray:
        env = self._env(points)
        return np.broadcast_to(self._hess[a][b].ev(env), np.shape(points)[:-1]).copy()

    def hess_matrix(self, point: np.ndarray) -> np.ndarray:
        p = np.asarray(point, dtype=float)[None, :]
        return np.array(
            [[float(self.hess(p, a, b)[0]) for b in range(self.n)] for a in range(self.n)]
        )

    def third(self, point: np.ndarray, a: int, b: int, g: int) -> float:
        """Third partial derivative f_{abg} at a single point."""
        env = self._env(np.asarray(point, dtype=float)[None, :])
        node = self._hess[a][b].diff(_VARS[g])
        return float(np.broadcast_to(node.ev(env), (1,))[0])

    def validate(self, periods, samples: int = 64, tol: float = 1e-6, seed: int = 12) -> None:
        """Spot-check periodicity and gradient consistency with differences."""
        rng = np.random.default_rng(seed)
        pts = rng.uniform(0, 2 * math.pi, size=(samples, self.n))
        base = self.value(pts)
        for j in range(self.n):
            shifted = pts.copy()
            shifted[:, j] += periods[j]
            if np.max(np.abs(self.value(shifted) - base)) > tol:
                raise ValueError(f"{self.name} is not periodic in {_VARS[j]}")
        h = 1e-6
        for j in range(self.n):
            plus = pts.copy()
            plus[:, j] += h
            minus = pts.copy()
            minus[:, j] -= h
            fd = (self.value(plus) - self.value(minus)) / (2 * h)
            if np.max(np.abs(fd - self.grad(pts, j))) > tol * max(1.0, np.abs(fd).max()):
                raise ValueError(f"{self.name}: analytic d/d{_VARS[j]} disagrees with differences")


_REGISTRY: dict[str, str] = {
    "cos_x": "cos(x)",
    "cos_theta": "cos(x)",
    "cos_x_plus_cos_y": "cos(x) + cos(y)",
    "bott_mixed": "(2 + sin(y)) * (1 - cos(x))",
}

REGISTRY_NAMES = tuple(sorted(_REGISTRY))


def get_function(name_or_expr: str, n: int) -> ScalarFunction:
    """Look up a registry name or parse an expression in x, y, z."""
    text = _REGISTRY.get(name_or_expr, name_or_expr)
    tree = parse_expression(text)
    return ScalarFunction(name=name_or_expr, tree=tree, n=n)
