"""Tiny arithmetic language for user-supplied coefficient functions.

Grammar (whitespace ignored):

    expr   := term (('+' | '-') term)*
    term   := power (('*' | '/') power)*
    power  := unary ('^' INTEGER)?
    unary  := '-' unary | atom
    atom   := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'

Names are restricted to the state variables t, x, y, z, u, v and the
functions min, max, abs, exp.  min and max take two or more arguments,
abs and exp exactly one.  The exponent of '^' must be a nonnegative
integer literal.  Everything evaluates through numpy, so feeding arrays
for any variable broadcasts elementwise.

There is deliberately no eval() anywhere: expressions come from config
files and must not reach the Python interpreter.
"""

from __future__ import annotations

import re

import numpy as np

VARIABLES = ("t", "x", "y", "z", "u", "v")

_FUNCTIONS = {
    "abs": (1, 1),
    "exp": (1, 1),
    "min": (2, None),
    "max": (2, None),
}

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


class ExpressionError(ValueError):
    """Raised for any lexical, syntactic or arity problem in an expression."""


def _tokenize(text):
    pos = 0
    tokens = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            if text[pos:].strip() == "":
                break
            raise ExpressionError(
                f"unexpected character {text[pos]!r} at position {pos} in {text!r}"
            )
        if m.group("num") is not None:
            tokens.append(("num", m.group(0).strip(), pos))
        elif m.group("name") is not None:
            tokens.append(("name", m.group("name"), pos))
        else:
            tokens.append(("op", m.group("op"), pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class Expression:
    """A parsed expression.  Call with keyword arguments for its variables."""

    def __init__(self, text, root, variables):
        self.text = text
        self._root = root
        self.variables = frozenset(variables)

    def __call__(self, **env):
        missing = self.variables - set(env)
        if missing:
            raise ExpressionError(
                f"expression {self.text!r} needs values for {sorted(missing)}"
            )
        return self._root(env)

    def __repr__(self):
        return f"Expression({self.text!r})"


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.variables = set()

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op):
        kind, val, pos = self.take()
        if kind != "op" or val != op:
            raise ExpressionError(
                f"expected {op!r} at position {pos} in {self.text!r}, got {val!r}"
            )

    def parse(self):
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExpressionError(
                f"trailing input {val!r} at position {pos} in {self.text!r}"
            )
        return node

    def expr(self):
        node = self.term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.take()
                rhs = self.term()
                node = _binary(np.add if val == "+" else np.subtract, node, rhs)
            else:
                return node

    def term(self):
        node = self.power()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                self.take()
                rhs = self.power()
                node = _binary(np.multiply if val == "*" else np.divide, node, rhs)
            else:
                return node

    def power(self):
        node = self.unary()
        kind, val, pos = self.peek()
        if kind == "op" and val == "^":
            self.take()
            ekind, etext, epos = self.take()
            if ekind != "num" or not re.fullmatch(r"\d+", etext):
                raise ExpressionError(
                    f"exponent must be a nonnegative integer literal at position"
                    f" {epos} in {self.text!r}"
                )
            k = int(etext)
            node = _unary(lambda a, _k=k: np.power(a, _k), node)
        return node

    def unary(self):
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.take()
            return _unary(np.negative, self.unary())
        return self.atom()

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            const = float(val)
            return lambda env, _c=const: _c
        if kind == "name":
            if val in _FUNCTIONS:
                return self.call(val, pos)
            if val in VARIABLES:
                self.variables.add(val)
                return lambda env, _n=val: env[_n]
            raise ExpressionError(
                f"unknown name {val!r} at position {pos} in {self.text!r};"
                f" variables are {'/'.join(VARIABLES)},"
                f" functions are {'/'.join(sorted(_FUNCTIONS))}"
            )
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        raise ExpressionError(
            f"unexpected token {val!r} at position {pos} in {self.text!r}"
        )

    def call(self, fname, pos):
        self.expect_op("(")
        args = [self.expr()]
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val == ",":
                self.take()
                args.append(self.expr())
            else:
                break
        self.expect_op(")")
        lo, hi = _FUNCTIONS[fname]
        if len(args) < lo or (hi is not None and len(args) > hi):
            raise ExpressionError(
                f"{fname} takes {lo}{'' if hi == lo else ' or more'} argument(s),"
                f" got {len(args)} at position {pos} in {self.text!r}"
            )
        if fname == "abs":
            return _unary(np.abs, args[0])
        if fname == "exp":
            return _unary(np.exp, args[0])
        reducer = np.minimum if fname == "min" else np.maximum
        def node(env, _args=tuple(args), _r=reducer):
            out = _args[0](env)
            for a in _args[1:]:
                out = _r(out, a(env))
            return out
        return node


def _binary(op, a, b):
    return lambda env: op(a(env), b(env))


def _unary(op, a):
    return lambda env: op(a(env))


def parse_expression(text):
    """Parse *text* and return an Expression.

    Raises ExpressionError with a position on any malformed input.
    """
    if not isinstance(text, str) or text.strip() == "":
        raise ExpressionError("empty expression")
    p = _Parser(text)
    root = p.parse()
    return Expression(text, root, p.variables)
