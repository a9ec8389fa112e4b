"""
Expression language for matrix-function entries.

Grammar (ASCII only):
    expr    := term (('+' | '-') term)*
    term    := factor (('*' | '/') factor)*
    factor  := '-' factor | power
    power   := primary ('^' integer)?
    primary := number | 'x'<k> | func '(' expr ')' | '(' expr ')'
    func    := sin | cos | sqrt

Unary minus binds looser than '^', so "-x1^2" is -(x1^2).
"""
from __future__ import annotations
import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from pencil_canon.enums import BinaryOp, UnaryOp
from pencil_canon.errors import (
    EvaluationFault,
    ExprSyntaxError,
    UnknownIdentifierError,
    VariableIndexError,
)


@dataclass(frozen=True)
class Const:
    value: float

    def __str__(self) -> str:
        return pretty(self)


@dataclass(frozen=True)
class Var:
    index: int  # 1-based

    def __str__(self) -> str:
        return pretty(self)


@dataclass(frozen=True)
class Unary:
    op: UnaryOp
    child: Expr

    def __str__(self) -> str:
        return pretty(self)


@dataclass(frozen=True)
class Binary:
    op: BinaryOp
    left: Expr
    right: Expr

    def __str__(self) -> str:
        return pretty(self)


Expr = Union[Const, Var, Unary, Binary]

FUNCTIONS: dict[str, UnaryOp] = {
    "sin": UnaryOp.SIN,
    "cos": UnaryOp.COS,
    "sqrt": UnaryOp.SQRT,
}

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()])"
    r")"
)
_VARIABLE = re.compile(r"x([1-9]\d*)")


@dataclass(frozen=True)
class _Token:
    kind: str  # number | ident | op | end
    text: str
    offset: int


def _tokenize(text: str) -> list[_Token]:
    for i, ch in enumerate(text):
        if not ch.isascii():
            raise ExprSyntaxError(f"Non-ASCII character {ch!r}", i, text)
    tokens: list[_Token] = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        match = _TOKEN.match(text, pos)
        if match is None or match.lastgroup is None:
            offset = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExprSyntaxError(f"Unexpected character {text[offset]!r}", offset, text)
        tokens.append(_Token(match.lastgroup, match.group(match.lastgroup), match.start(match.lastgroup)))
        pos = match.end()
    tokens.append(_Token("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, m: int):
        self.text = text
        self.m = m
        self.tokens = _tokenize(text)
        self.pos = 0

    @property
    def current(self) -> _Token:
        return self.tokens[self.pos]

    def _accept(self, *ops: str) -> _Token | None:
        tok = self.current
        if tok.kind == "op" and tok.text in ops:
            self.pos += 1
            return tok
        return None

    def _expect(self, op: str) -> None:
        if self._accept(op) is None:
            tok = self.current
            found = "end of input" if tok.kind == "end" else repr(tok.text)
            raise ExprSyntaxError(f"Expected {op!r}, found {found}", tok.offset, self.text)

    def parse(self) -> Expr:
        if self.current.kind == "end":
            raise ExprSyntaxError("Empty expression", 0, self.text)
        node = self._expr()
        if self.current.kind != "end":
            raise ExprSyntaxError(f"Unexpected {self.current.text!r}", self.current.offset, self.text)
        return node

    def _expr(self) -> Expr:
        node = self._term()
        while (tok := self._accept("+", "-")) is not None:
            op = BinaryOp.ADD if tok.text == "+" else BinaryOp.SUB
            node = Binary(op, node, self._term())
        return node

    def _term(self) -> Expr:
        node = self._factor()
        while (tok := self._accept("*", "/")) is not None:
            op = BinaryOp.MUL if tok.text == "*" else BinaryOp.DIV
            node = Binary(op, node, self._factor())
        return node

    def _factor(self) -> Expr:
        if self._accept("-") is not None:
            return Unary(UnaryOp.NEG, self._factor())
        return self._power()

    def _power(self) -> Expr:
        base = self._primary()
        if self._accept("^") is None:
            return base
        tok = self.current
        if tok.kind != "number" or not tok.text.isdigit():
            raise ExprSyntaxError("Exponent must be a non-negative integer literal", tok.offset, self.text)
        if len(tok.text) > 6:
            raise ExprSyntaxError("Exponent is out of range", tok.offset, self.text)
        self.pos += 1
        return Binary(BinaryOp.POW, base, Const(float(int(tok.text))))

    def _primary(self) -> Expr:
        tok = self.current
        if tok.kind == "number":
            value = float(tok.text)
            if not math.isfinite(value):
                raise ExprSyntaxError(f"Literal {tok.text!r} is out of range", tok.offset, self.text)
            self.pos += 1
            return Const(value)
        if tok.kind == "ident":
            self.pos += 1
            return self._identifier(tok)
        if self._accept("(") is not None:
            node = self._expr()
            self._expect(")")
            return node
        found = "end of input" if tok.kind == "end" else repr(tok.text)
        raise ExprSyntaxError(f"Unexpected {found}", tok.offset, self.text)

    def _identifier(self, tok: _Token) -> Expr:
        is_call = self.current.kind == "op" and self.current.text == "("
        if tok.text in FUNCTIONS:
            if not is_call:
                raise ExprSyntaxError(f"Function {tok.text!r} needs an argument list", self.current.offset, self.text)
            self._expect("(")
            child = self._expr()
            self._expect(")")
            return Unary(FUNCTIONS[tok.text], child)
        variable = _VARIABLE.fullmatch(tok.text)
        if variable is None or is_call:
            what = "function" if is_call else "identifier"
            raise UnknownIdentifierError(f"Unknown {what} {tok.text!r} at offset {tok.offset}", offset=tok.offset)
        index = int(variable.group(1))
        if index > self.m:
            raise VariableIndexError(
                f"Variable {tok.text!r} at offset {tok.offset} exceeds the declared dimension m={self.m}",
                offset=tok.offset,
            )
        return Var(index)


def parse(text: str, m: int) -> Expr:
    """Parse an entry expression over the variables x1..xm"""
    return _Parser(text, m).parse()


# --------------------------------------------------------------------------- #
# Printing                                                                    #
# --------------------------------------------------------------------------- #

_PRECEDENCE = {
    BinaryOp.ADD: 1,
    BinaryOp.SUB: 1,
    BinaryOp.MUL: 2,
    BinaryOp.DIV: 2,
    UnaryOp.NEG: 3,
    BinaryOp.POW: 4,
}
_ATOM = 5


def _precedence(e: Expr) -> int:
    match e:
        case Const(value) if value < 0 or math.copysign(1.0, value) < 0:
            return _PRECEDENCE[UnaryOp.NEG]
        case Unary(UnaryOp.NEG, _):
            return _PRECEDENCE[UnaryOp.NEG]
        case Binary(op, _, _):
            return _PRECEDENCE[op]
    return _ATOM


def _format_number(value: float) -> str:
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value)) if value != 0 or math.copysign(1.0, value) > 0 else "-0"
    return repr(value)


def pretty(e: Expr) -> str:
    """Precedence-aware text that parses back to the same tree shape"""
    match e:
        case Const(value):
            return _format_number(value)
        case Var(index):
            return f"x{index}"
        case Unary(UnaryOp.NEG, child):
            inner = pretty(child)
            return f"-{inner}" if _precedence(child) >= _PRECEDENCE[UnaryOp.NEG] else f"-({inner})"
        case Unary(op, child):
            return f"{op.value}({pretty(child)})"
        case Binary(BinaryOp.POW, base, exponent):
            inner = pretty(base)
            if _precedence(base) <= _PRECEDENCE[BinaryOp.POW]:
                inner = f"({inner})"
            return f"{inner}^{_format_number(exponent.value)}"
        case Binary(op, left, right):
            prec = _PRECEDENCE[op]
            lhs = pretty(left)
            rhs = pretty(right)
            if _precedence(left) < prec:
                lhs = f"({lhs})"
            if _precedence(right) <= prec:
                rhs = f"({rhs})"
            return f"{lhs}{op.value}{rhs}"
    raise TypeError(f"Not an expression node: {e!r}")


# --------------------------------------------------------------------------- #
# Evaluation                                                                  #
# --------------------------------------------------------------------------- #

def _finite(value: float, node: Expr, point) -> float:
    if not math.isfinite(value):
        raise EvaluationFault("non-finite value", pretty(node), point)
    return value


def evaluate(e: Expr, point) -> float:
    """IEEE double evaluation at one point; faults name the offending subexpression"""
    point = tuple(float(v) for v in point)
    return _eval(e, point)


def _eval(e: Expr, point: tuple[float, ...]) -> float:
    match e:
        case Const(value):
            return value
        case Var(index):
            if index > len(point):
                raise VariableIndexError(f"Variable x{index} needs a point of dimension {index}, got {len(point)}")
            return point[index - 1]
        case Unary(op, child):
            value = _eval(child, point)
            if op is UnaryOp.NEG:
                return -value
            if op is UnaryOp.SIN:
                return math.sin(value)
            if op is UnaryOp.COS:
                return math.cos(value)
            if value < 0:
                raise EvaluationFault("sqrt of negative", pretty(e), point)
            return math.sqrt(value)
        case Binary(op, left, right):
            a = _eval(left, point)
            b = _eval(right, point)
            if op is BinaryOp.ADD:
                return _finite(a + b, e, point)
            if op is BinaryOp.SUB:
                return _finite(a - b, e, point)
            if op is BinaryOp.MUL:
                return _finite(a * b, e, point)
            if op is BinaryOp.DIV:
                if b == 0.0:
                    raise EvaluationFault("division by zero", pretty(e), point)
                return _finite(a / b, e, point)
            try:
                return _finite(a ** int(b), e, point)
            except (OverflowError, ZeroDivisionError) as exc:
                raise EvaluationFault(str(exc), pretty(e), point) from exc
    raise TypeError(f"Not an expression node: {e!r}")


def eval_grid(e: Expr, points: np.ndarray) -> np.ndarray:
    """Vectorised evaluation over an (N, m) array of points"""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    with np.errstate(all="ignore"):
        return _eval_grid(e, points)


def _fault_point(mask: np.ndarray, points: np.ndarray) -> tuple[float, ...]:
    return tuple(float(v) for v in points[int(np.flatnonzero(mask)[0])])


def _checked(values: np.ndarray, node: Expr, points: np.ndarray) -> np.ndarray:
    bad = ~np.isfinite(values)
    if bad.any():
        raise EvaluationFault("non-finite value", pretty(node), _fault_point(bad, points))
    return values


def _eval_grid(e: Expr, points: np.ndarray) -> np.ndarray:
    match e:
        case Const(value):
            return np.full(len(points), value)
        case Var(index):
            if index > points.shape[1]:
                raise VariableIndexError(f"Variable x{index} needs points of dimension {index}, got {points.shape[1]}")
            return points[:, index - 1].copy()
        case Unary(op, child):
            values = _eval_grid(child, points)
            if op is UnaryOp.NEG:
                return -values
            if op is UnaryOp.SIN:
                return np.sin(values)
            if op is UnaryOp.COS:
                return np.cos(values)
            negative = values < 0
            if negative.any():
                raise EvaluationFault("sqrt of negative", pretty(e), _fault_point(negative, points))
            return np.sqrt(values)
        case Binary(op, left, right):
            a = _eval_grid(left, points)
            b = _eval_grid(right, points)
            if op is BinaryOp.ADD:
                return _checked(a + b, e, points)
            if op is BinaryOp.SUB:
                return _checked(a - b, e, points)
            if op is BinaryOp.MUL:
                return _checked(a * b, e, points)
            if op is BinaryOp.DIV:
                zero = b == 0.0
                if zero.any():
                    raise EvaluationFault("division by zero", pretty(e), _fault_point(zero, points))
                return _checked(a / b, e, points)
            return _checked(a ** int(right.value), e, points)
    raise TypeError(f"Not an expression node: {e!r}")


def variables(e: Expr) -> set[int]:
    match e:
        case Var(index):
            return {index}
        case Unary(_, child):
            return variables(child)
        case Binary(_, left, right):
            return variables(left) | variables(right)
    return set()


# --------------------------------------------------------------------------- #
# Builders (identity folding only)                                            #
# --------------------------------------------------------------------------- #

ZERO = Const(0.0)
ONE = Const(1.0)


def const(value: float) -> Const:
    return Const(float(value))


def var(index: int) -> Var:
    return Var(index)


def _is(e: Expr, value: float) -> bool:
    return isinstance(e, Const) and e.value == value


def neg(e: Expr) -> Expr:
    if isinstance(e, Const):
        return Const(-e.value if e.value != 0.0 else 0.0)
    return Unary(UnaryOp.NEG, e)


def add(a: Expr, b: Expr) -> Expr:
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    return Binary(BinaryOp.ADD, a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return neg(b)
    return Binary(BinaryOp.SUB, a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is(a, 0.0) or _is(b, 0.0):
        return ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    return Binary(BinaryOp.MUL, a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is(a, 0.0):
        return ZERO
    if _is(b, 1.0):
        return a
    return Binary(BinaryOp.DIV, a, b)


def func(name: str, child: Expr) -> Expr:
    return Unary(FUNCTIONS[name], child)


def total(terms: list[Expr]) -> Expr:
    """Folded sum of a list of terms (0 for an empty list)"""
    out: Expr = ZERO
    for term in terms:
        out = add(out, term)
    return out
