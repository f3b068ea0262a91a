"""
Field expressions - a tiny arithmetic language for analytic vector fields in scenario files.

Grammar (precedence ^ > unary minus > * / > + -):
    expr   := term (("+"|"-") term)*
    term   := factor (("*"|"/") factor)*
    factor := "-" factor | power
    power  := base ("^" factor)?
    base   := number | ident | ident "(" expr ")" | "(" expr ")"
Identifiers: x, y, z, t and the functions sin, cos, exp, tanh.
"""
import re
from dataclasses import dataclass
from typing import Dict, List, Tuple, Union

import numpy as np

from errors import ExprSyntaxError, UnknownIdentifierError

VARIABLES = ("x", "y", "z", "t")
FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "tanh": np.tanh,
}

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<ident>[A-Za-z_]\w*)|(?P<op>[-+*/^()]))"
)


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "FieldExpr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "FieldExpr"
    right: "FieldExpr"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "FieldExpr"


FieldExpr = Union[Num, Var, Neg, BinOp, Call]

# binding power used by the printer
_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def tokenize(text: str) -> List[Tuple[str, str, int]]:
    """
    Split an expression into (kind, text, position) tokens.

    Raises:
        ExprSyntaxError: on a character that starts no token
    """
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        match = _TOKEN_RE.match(text, pos)
        if match is None or match.end() == pos:
            bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExprSyntaxError(f"Unexpected character {text[bad]!r}", bad)
        kind = match.lastgroup
        start = match.start(kind)
        tokens.append((kind, match.group(kind), start))
        pos = match.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    """Recursive-descent parser over the token list"""

    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.index = 0

    def peek(self) -> Tuple[str, str, int]:
        return self.tokens[self.index]

    def take(self) -> Tuple[str, str, int]:
        token = self.tokens[self.index]
        self.index += 1
        return token

    def expect(self, op: str) -> None:
        kind, value, pos = self.take()
        if kind != "op" or value != op:
            found = "end of input" if kind == "end" else repr(value)
            raise ExprSyntaxError(f"Expected {op!r}, found {found}", pos)

    def expr(self) -> FieldExpr:
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> FieldExpr:
        node = self.factor()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            node = BinOp(op, node, self.factor())
        return node

    def factor(self) -> FieldExpr:
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return Neg(self.factor())
        return self.power()

    def power(self) -> FieldExpr:
        node = self.base()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            # right-associative: the exponent is a full factor
            node = BinOp("^", node, self.factor())
        return node

    def base(self) -> FieldExpr:
        kind, value, pos = self.take()
        if kind == "number":
            return Num(float(value))
        if kind == "ident":
            if value in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(value, arg)
            if value in VARIABLES:
                return Var(value)
            raise UnknownIdentifierError(value, pos)
        if kind == "op" and value == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(value)
        raise ExprSyntaxError(f"Unexpected {found}", pos)


def parse_field_expr(text: str) -> FieldExpr:
    """
    Parse an expression string into a FieldExpr tree.

    Args:
        text: Nonempty expression, e.g. "sin(x)*cos(y)"

    Returns:
        Root node of the syntax tree

    Raises:
        ExprSyntaxError: malformed input, with the offending position
        UnknownIdentifierError: identifier outside x, y, z, t, sin, cos, exp, tanh
    """
    if not text or not text.strip():
        raise ExprSyntaxError("Empty expression", 0)
    parser = _Parser(text)
    node = parser.expr()
    kind, value, pos = parser.peek()
    if kind != "end":
        raise ExprSyntaxError(f"Unexpected {value!r}", pos)
    return node


def format_field_expr(node: FieldExpr) -> str:
    """Print a tree back to text using the minimal parentheses that re-parse to the same tree"""
    return _format(node, 0)


def _format(node: FieldExpr, parent: int) -> str:
    if isinstance(node, Num):
        text = repr(float(node.value))
        # keep exponent notation parseable (no "inf"/"nan" can come out of the parser)
        return text if not text.startswith("-") else f"({text})"
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Call):
        return f"{node.func}({_format(node.arg, 0)})"
    if isinstance(node, Neg):
        prec = _PRECEDENCE["neg"]
        text = "-" + _format(node.operand, prec)
        return f"({text})" if parent > prec else text
    prec = _PRECEDENCE[node.op]
    if node.op == "^":
        left = _format(node.left, prec + 1)
        right = _format(node.right, prec)
    else:
        left = _format(node.left, prec)
        right = _format(node.right, prec + 1)
    text = f"{left} {node.op} {right}" if prec < 4 else f"{left}^{right}"
    return f"({text})" if parent > prec else text


def evaluate_expr(node: FieldExpr, env: Dict[str, Union[float, np.ndarray]]):
    """
    Evaluate a tree with numpy broadcasting.

    Args:
        node: Parsed expression
        env: Values for x, y, z, t (scalars or arrays of a common shape)

    Returns:
        Scalar or array, broadcast over the env values
    """
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        if node.name not in env:
            raise UnknownIdentifierError(node.name, -1)
        return env[node.name]
    if isinstance(node, Neg):
        return -evaluate_expr(node.operand, env)
    if isinstance(node, Call):
        return FUNCTIONS[node.func](evaluate_expr(node.arg, env))
    left = evaluate_expr(node.left, env)
    right = evaluate_expr(node.right, env)
    if node.op == "+":
        return left + right
    if node.op == "-":
        return left - right
    if node.op == "*":
        return left * right
    if node.op == "/":
        return left / right
    return np.power(left, right)


def variables_of(node: FieldExpr) -> set:
    """Names of the variables a tree reads"""
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Num):
        return set()
    if isinstance(node, (Neg,)):
        return variables_of(node.operand)
    if isinstance(node, Call):
        return variables_of(node.arg)
    return variables_of(node.left) | variables_of(node.right)
