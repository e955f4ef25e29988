"""
Expression parser for user-defined right-hand sides and Lyapunov candidates.

Grammar (highest precedence first):
    atom    :: number | variable | fn '(' expr [, expr] ')' | '(' expr ')'
    power   :: atom [ '^' power ]          (right associative)
    signed  :: '-' signed | power
    term    :: signed [ ('*' | '/') signed ]*
    expr    :: term [ ('+' | '-') term ]*

Variables are x1..xn (state), d1..dm (disturbance) and the scalar
arguments r, s, t used by comparison functions.
"""

import re
from typing import Dict, List, Sequence, Set

import numpy as np
from pyparsing import (
    DelimitedList,
    Forward,
    Group,
    OpAssoc,
    ParseException,
    ParserElement,
    Regex,
    Suppress,
    infix_notation,
    one_of,
)

from core.errors import InputError

ParserElement.enable_packrat()

UNARY_FUNCTIONS = {
    "abs": np.abs,
    "cbrt_signed": np.cbrt,
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
}
BINARY_FUNCTIONS = {
    "min": np.minimum,
    "max": np.maximum,
}
OPERATORS = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": np.divide,
    "^": np.power,
}


class Node:
    def evaluate(self, env: Dict[str, np.ndarray]) -> np.ndarray:
        raise NotImplementedError

    def variables(self) -> Set[str]:
        return set()


class Constant(Node):
    def __init__(self, value: float):
        self.value = value

    def evaluate(self, env):
        return self.value


class Variable(Node):
    def __init__(self, name: str):
        self.name = name

    def evaluate(self, env):
        if self.name not in env:
            raise InputError(f"Unbound variable '{self.name}'")
        return env[self.name]

    def variables(self):
        return {self.name}


class Negate(Node):
    def __init__(self, operand: Node):
        self.operand = operand

    def evaluate(self, env):
        return np.negative(self.operand.evaluate(env))

    def variables(self):
        return self.operand.variables()


class BinaryOp(Node):
    def __init__(self, op: str, left: Node, right: Node):
        self.op = op
        self.left = left
        self.right = right

    def evaluate(self, env):
        return OPERATORS[self.op](self.left.evaluate(env), self.right.evaluate(env))

    def variables(self):
        return self.left.variables() | self.right.variables()


class Call(Node):
    def __init__(self, name: str, args: List[Node]):
        expected = 1 if name in UNARY_FUNCTIONS else 2
        if len(args) != expected:
            raise InputError(f"{name}() takes {expected} argument(s), got {len(args)}")
        self.name = name
        self.args = args

    def evaluate(self, env):
        values = [a.evaluate(env) for a in self.args]
        if self.name in UNARY_FUNCTIONS:
            return UNARY_FUNCTIONS[self.name](values[0])
        return BINARY_FUNCTIONS[self.name](values[0], values[1])

    def variables(self):
        out = set()
        for a in self.args:
            out |= a.variables()
        return out


def _fold_left(tokens):
    items = tokens[0]
    node = items[0]
    for i in range(1, len(items), 2):
        node = BinaryOp(items[i], node, items[i + 1])
    return node


def _fold_right(tokens):
    items = tokens[0]
    node = items[-1]
    for i in range(len(items) - 2, 0, -2):
        node = BinaryOp(items[i], items[i - 1], node)
    return node


def _negate(tokens):
    return Negate(tokens[0][-1])


def _build_grammar():
    expr = Forward()
    number = Regex(r"(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?")
    number.set_parse_action(lambda t: Constant(float(t[0])))
    variable = Regex(r"[xd][1-9][0-9]*|[rst](?![A-Za-z0-9_])")
    variable.set_parse_action(lambda t: Variable(t[0]))
    name = one_of(list(UNARY_FUNCTIONS) + list(BINARY_FUNCTIONS), as_keyword=True)
    call = Group(name + Suppress("(") + Group(DelimitedList(expr)) + Suppress(")"))
    call.set_parse_action(lambda t: Call(t[0][0], list(t[0][1])))
    operand = call | number | variable
    expr <<= infix_notation(
        operand,
        [
            ("^", 2, OpAssoc.RIGHT, _fold_right),
            ("-", 1, OpAssoc.RIGHT, _negate),
            (one_of("* /"), 2, OpAssoc.LEFT, _fold_left),
            (one_of("+ -"), 2, OpAssoc.LEFT, _fold_left),
        ],
    )
    return expr


_GRAMMAR = _build_grammar()


class Expression:
    """
    A parsed expression evaluated elementwise on numpy arrays.

    Args:
        text: Source text, e.g. ``"-x1 + abs(d1)*x2"``
    """

    def __init__(self, text: str):
        self.text = text
        try:
            self.tree = _GRAMMAR.parse_string(text, parse_all=True)[0]
        except ParseException as e:
            raise InputError(f"Cannot parse expression '{text}' at column {e.col}: {e.msg}") from e
        self.variables = self.tree.variables()

    def evaluate(self, env: Dict[str, np.ndarray]) -> np.ndarray:
        with np.errstate(all="ignore"):
            return np.asarray(self.tree.evaluate(env), dtype=float)

    def of_states(self, states: np.ndarray, disturbances: np.ndarray = None) -> np.ndarray:
        """Evaluate on rows of ``states`` (and optionally ``disturbances``)."""
        X = np.atleast_2d(np.asarray(states, dtype=float))
        env = {f"x{i + 1}": X[..., i] for i in range(X.shape[-1])}
        if disturbances is not None:
            D = np.atleast_2d(np.asarray(disturbances, dtype=float))
            env.update({f"d{j + 1}": D[..., j] for j in range(D.shape[-1])})
        out = self.evaluate(env)
        return np.broadcast_to(out, X.shape[:-1]).astype(float)

    def of_scalar(self, values, name: str = "r") -> np.ndarray:
        return self.evaluate({name: np.asarray(values, dtype=float)})

    def check_variables(self, allowed: Sequence[str]) -> None:
        unknown = sorted(self.variables - set(allowed), key=_natural_key)
        if unknown:
            raise InputError(f"Expression '{self.text}' uses undeclared variables: {', '.join(unknown)}")

    def __repr__(self) -> str:
        return f"Expression({self.text!r})"


def _natural_key(name: str):
    return [int(tok) if tok.isdigit() else tok for tok in re.split(r"(\d+)", name)]


class ExpressionRhs:
    """Vectorized right-hand side built from one expression per state component."""

    def __init__(self, expressions: Sequence[str], disturbance_dimension: int):
        self.expressions = [Expression(text) for text in expressions]
        n = len(self.expressions)
        allowed = [f"x{i + 1}" for i in range(n)] + [f"d{j + 1}" for j in range(disturbance_dimension)]
        for e in self.expressions:
            e.check_variables(allowed)

    def __call__(self, X: np.ndarray, D: np.ndarray) -> np.ndarray:
        return np.stack([e.of_states(X, D) for e in self.expressions], axis=-1)
