"""Parser for conformal-factor expressions in the coordinates x0, x1.

Grammar::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := ('+' | '-') unary | power
    power   := atom ('^' unary)?
    atom    := NUMBER | IDENT | FUNC '(' expr ')' | '(' expr ')'

The tree is built as a sympy expression so that derivatives are exact.
"""
from __future__ import annotations

import re
from functools import lru_cache

import numpy as np
import sympy as sp

from .errors import ExpressionSyntaxError, UnknownIdentifierError

X0, X1 = sp.symbols("x0 x1", real=True)

_FUNCTIONS = {
    "exp": sp.exp,
    "ln": sp.log,
    "sin": sp.sin,
    "cos": sp.cos,
    "tanh": sp.tanh,
}
_VARIABLES = {"x0": X0, "x1": X1}

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<id>[A-Za-z_]\w*)|(?P<op>[-+*/^()]))"
)


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExpressionSyntaxError(f"unexpected character {text[bad]!r}", bad)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, text, pos = self.take()
        if text != value:
            found = "end of input" if kind == "end" else repr(text)
            raise ExpressionSyntaxError(f"expected {value!r}, found {found}", pos)

    def parse(self):
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExpressionSyntaxError(f"unexpected token {text!r}", pos)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            node = node + rhs if op == "+" else node - rhs
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.unary()
            node = node * rhs if op == "*" else node / rhs
        return node

    def unary(self):
        kind, text, _ = self.peek()
        if kind == "op" and text in ("+", "-"):
            self.take()
            inner = self.unary()
            return -inner if text == "-" else inner
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^" and self.peek()[0] == "op":
            self.take()
            return base ** self.unary()
        return base

    def atom(self):
        kind, text, pos = self.take()
        if kind == "num":
            return sp.Rational(text)
        if kind == "id":
            if text in _VARIABLES:
                return _VARIABLES[text]
            if text in _FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return _FUNCTIONS[text](arg)
            raise UnknownIdentifierError(text, pos)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(text)
        raise ExpressionSyntaxError(f"unexpected {found}", pos)


class SigmaExpression:
    """Closed-form scalar field with cached exact partial derivatives.

    ``derivative(i, j)`` returns a vectorised callable for
    d^i/dx0^i d^j/dx1^j of the field, for ``i + j <= MAX_ORDER``.
    """

    MAX_ORDER = 4

    def __init__(self, tree, source=None):
        self.tree = sp.sympify(tree)
        self.source = source if source is not None else str(tree)
        self._cache = {}

    @property
    def is_zero(self):
        return self.tree == 0

    def symbolic(self, i=0, j=0):
        if i + j > self.MAX_ORDER:
            raise ValueError(f"derivative order {i + j} exceeds {self.MAX_ORDER}")
        expr = self.tree
        if i:
            expr = sp.diff(expr, X0, i)
        if j:
            expr = sp.diff(expr, X1, j)
        return expr

    def derivative(self, i=0, j=0):
        key = (i, j)
        fn = self._cache.get(key)
        if fn is None:
            expr = self.symbolic(i, j)
            raw = sp.lambdify((X0, X1), expr, "numpy")
            if expr.free_symbols:
                fn = raw
            else:
                const = float(expr)

                def fn(x0, x1, _c=const):
                    return np.full(np.broadcast(np.asarray(x0), np.asarray(x1)).shape, _c)[()]

            self._cache[key] = fn
        return fn

    def __call__(self, x0, x1):
        return self.derivative(0, 0)(x0, x1)

    def __repr__(self):
        return f"SigmaExpression({self.source!r})"


@lru_cache(maxsize=256)
def parse_sigma(text: str) -> SigmaExpression:
    """Parse a conformal-factor expression into a differentiable tree."""
    if not isinstance(text, str) or not text.strip():
        raise ExpressionSyntaxError("empty expression", 0)
    tree = _Parser(text).parse()
    return SigmaExpression(tree, source=text)
