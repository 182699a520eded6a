"""Arithmetic expression language used for Lagrangians, Hamiltonians, maps.

Grammar (``^`` is right-associative)::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := ['-'] base ['^' factor]
    base   := number | name | name '(' expr ')' | '(' expr ')'

A leading minus may not be followed by ``^``: ``-x^2`` is rejected and must be
written ``-(x^2)`` or ``(-x)^2``.
"""

import math
import re
from dataclasses import dataclass

import numpy as np

from . import jet as J
from .errors import ExpressionSyntaxError, FieldDomainError, UnknownVariable, VariableIndexError

FUNCTIONS = {
    "sin": J.sin,
    "cos": J.cos,
    "tan": J.tan,
    "exp": J.exp,
    "log": J.log,
    "sqrt": J.sqrt,
    "abs": J.absolute,
    "sinh": J.sinh,
    "cosh": J.cosh,
    "tanh": J.tanh,
    "atan": J.atan,
}
CONSTANTS = {"pi": math.pi, "e": math.e}


# AST -------------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Const:
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
    fn: str
    arg: object


def serialize(node):
    """Fully parenthesized text that parses back to the same tree."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, (Var, Const)):
        return node.name
    if isinstance(node, Neg):
        return f"(-{serialize(node.arg)})"
    if isinstance(node, BinOp):
        return f"({serialize(node.left)}{node.op}{serialize(node.right)})"
    if isinstance(node, Call):
        return f"{node.fn}({serialize(node.arg)})"
    raise TypeError(f"not an expression node: {node!r}")


def variables(node):
    """Set of variable names referenced by a tree."""
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Neg):
        return variables(node.arg)
    if isinstance(node, BinOp):
        return variables(node.left) | variables(node.right)
    if isinstance(node, Call):
        return variables(node.arg)
    return set()


# tokenizer / parser ----------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)
_INDEXED = re.compile(r"([A-Za-z_]+?)(\d+)$")


def _tokenize(source):
    tokens = []
    pos = 0
    while pos < len(source):
        if source[pos:].strip() == "":
            break
        m = _TOKEN.match(source, pos)
        if not m or m.end() == pos:
            start = pos + (len(source[pos:]) - len(source[pos:].lstrip()))
            raise ExpressionSyntaxError(f"unexpected character {source[start]!r}", source, start)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


class Alphabet:
    """Allowed free variables: indexed families (``x1..xn``) and scalar names."""

    def __init__(self, indexed=None, scalars=()):
        self.indexed = dict(indexed or {})
        self.scalars = set(scalars)

    def check(self, name, source, pos):
        if name in self.scalars:
            return
        m = _INDEXED.match(name)
        if m and m.group(1) in self.indexed:
            idx = int(m.group(2))
            top = self.indexed[m.group(1)]
            if idx < 1 or idx > top:
                raise VariableIndexError(
                    f"variable {name!r} at position {pos} has index outside 1..{top} in {source!r}")
            return
        allowed = sorted(self.scalars) + [f"{p}1..{p}{c}" for p, c in self.indexed.items()]
        raise UnknownVariable(
            f"unknown identifier {name!r} at position {pos} in {source!r}; allowed: {', '.join(allowed)}")

    def names(self):
        out = sorted(self.scalars)
        for prefix, count in self.indexed.items():
            out.extend(f"{prefix}{i}" for i in range(1, count + 1))
        return out


class _Parser:
    def __init__(self, source, alphabet):
        self.source = source
        self.alphabet = alphabet
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, msg, tok=None):
        tok = tok or self.peek()
        raise ExpressionSyntaxError(msg, self.source, tok[2])

    def expect(self, op):
        tok = self.peek()
        if tok[0] != "op" or tok[1] != op:
            self.fail(f"expected {op!r}, found {tok[1] or 'end of input'!r}")
        return self.take()

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            self.fail(f"unexpected token {self.peek()[1]!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            node = BinOp(op, node, self.factor())
        return node

    def factor(self):
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "-":
            self.take()
            node = Neg(self.base())
            nxt = self.peek()
            if nxt[0] == "op" and nxt[1] == "^":
                self.fail("ambiguous '-a^b'; write -(a^b) or (-a)^b", nxt)
            return node
        node = self.base()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            node = BinOp("^", node, self.factor())
        return node

    def base(self):
        tok = self.take()
        kind, text, pos = tok
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            nxt = self.peek()
            if nxt[0] == "op" and nxt[1] == "(":
                if text not in FUNCTIONS:
                    self.fail(f"unknown function {text!r}", tok)
                self.take()
                arg = self.expr()
                self.expect(")")
                return Call(text, arg)
            if text in FUNCTIONS:
                self.fail(f"function {text!r} needs an argument", nxt)
            if text in CONSTANTS:
                return Const(text)
            self.alphabet.check(text, self.source, pos)
            return Var(text)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        self.fail(f"unexpected {text or 'end of input'!r}", tok)


@dataclass(frozen=True)
class Expression:
    """Parsed expression: source text plus syntax tree."""

    source: str
    ast: object

    def serialize(self):
        return serialize(self.ast)

    @property
    def free_variables(self):
        return variables(self.ast)

    def compile(self):
        return compile_ast(self.ast)


def parse(source, alphabet):
    """Parse ``source`` against the allowed variable ``alphabet``."""
    if not isinstance(source, str) or not source.strip():
        raise ExpressionSyntaxError("empty expression", source if isinstance(source, str) else "", 0)
    return Expression(source, _Parser(source, alphabet).parse())


# evaluation ------------------------------------------------------------------

def _fmt(a):
    a = np.asarray(a)
    return repr(a.item()) if a.size == 1 else np.array2string(a.ravel()[:8], precision=6)


def _div(a, b):
    bv = J.value(b)
    if np.any(bv == 0.0):
        raise FieldDomainError(f"division by zero: numerator {_fmt(J.value(a))}, denominator {_fmt(bv)}")
    return a / b


def _log(a):
    av = J.value(a)
    if np.any(av <= 0.0):
        raise FieldDomainError(f"log of non-positive operand {_fmt(av)}")
    return J.log(a)


def _sqrt(a):
    av = J.value(a)
    if np.any(av < 0.0):
        raise FieldDomainError(f"sqrt of negative operand {_fmt(av)}")
    return J.sqrt(a)


def _pow_const(c):
    integral = float(c).is_integer()

    def op(a):
        av = J.value(a)
        if not integral and np.any(av < 0.0):
            raise FieldDomainError(f"non-integer power {c!r} of negative base {_fmt(av)}")
        if c < 0 and np.any(av == 0.0):
            raise FieldDomainError(f"negative power {c!r} of zero base")
        if isinstance(a, J.Jet):
            return a ** c
        with np.errstate(invalid="ignore"):
            return np.power(np.asarray(av, dtype=float), c)

    return op


def _pow(a, b):
    av = J.value(a)
    if np.any(av <= 0.0):
        raise FieldDomainError(f"variable exponent needs a positive base, got {_fmt(av)}")
    if isinstance(a, J.Jet) or isinstance(b, J.Jet):
        return J.exp(b * J.log(a)) if isinstance(a, J.Jet) else J.exp(b * np.log(av))
    return np.power(av, J.value(b))


_FUNC_CHECKED = dict(FUNCTIONS, log=_log, sqrt=_sqrt)


def compile_ast(node):
    """Turn a syntax tree into a closure ``env -> value``.

    ``env`` maps variable names to floats, arrays or jets; the closure works
    uniformly on all of them.
    """
    if isinstance(node, Num):
        c = float(node.value)
        return lambda env: c
    if isinstance(node, Const):
        c = CONSTANTS[node.name]
        return lambda env: c
    if isinstance(node, Var):
        name = node.name
        return lambda env: env[name]
    if isinstance(node, Neg):
        f = compile_ast(node.arg)
        return lambda env: -f(env)
    if isinstance(node, Call):
        f = compile_ast(node.arg)
        fn = _FUNC_CHECKED[node.fn]
        return lambda env: fn(f(env))
    if isinstance(node, BinOp):
        lf = compile_ast(node.left)
        op = node.op
        if op == "^" and isinstance(node.right, Num):
            pw = _pow_const(float(node.right.value))
            return lambda env: pw(lf(env))
        rf = compile_ast(node.right)
        if op == "+":
            return lambda env: lf(env) + rf(env)
        if op == "-":
            return lambda env: lf(env) - rf(env)
        if op == "*":
            return lambda env: lf(env) * rf(env)
        if op == "/":
            return lambda env: _div(lf(env), rf(env))
        if op == "^":
            def power(env):
                b = rf(env)
                if not isinstance(b, J.Jet) and np.ndim(b) == 0:
                    return _pow_const(float(b))(lf(env))
                return _pow(lf(env), b)
            return power
    raise TypeError(f"not an expression node: {node!r}")
