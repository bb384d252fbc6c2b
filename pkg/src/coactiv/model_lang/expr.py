"""Expressions of the guarded-command language.

Expressions are immutable trees.  Numbers are kept exact: integers stay
``int`` and anything non-integral is a :class:`fractions.Fraction`.  Two
evaluation routes exist.  :func:`evaluate` walks the tree and is used for
one-off queries; :func:`compile_expr` generates a Python closure and is what
the state-space explorers call in their inner loops.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterator, Mapping, Sequence, Union

from ..errors import EvaluationError, ModelSyntaxError, ModelTypeError, UndeclaredIdentifierError

Number = Union[int, Fraction]

KEYWORDS = {
    "const", "int", "double", "rational", "bool", "label", "module", "endmodule",
    "rewards", "endrewards", "init", "true", "false", "dtmc", "mdp",
}
FUNCTIONS = {"min", "max", "abs"}


# --------------------------------------------------------------------------- lexer

@dataclass(frozen=True)
class Token:
    kind: str  # NUM, IDENT, KEYWORD, STRING, OP, EOF
    text: str
    line: int
    column: int


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>//[^\n]*)
  | (?P<num>\d+(?:\.\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<string>"[^"\n]*")
  | (?P<op>\.\.|->|<=|>=|!=|=>|[\[\](){};:,+\-*/=<>&|!'?])
    """,
    re.VERBOSE,
)


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos = 0
    line, line_start = 1, 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            raise ModelSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = match.lastgroup
        value = match.group()
        column = pos - line_start + 1
        if kind == "num":
            tokens.append(Token("NUM", value, line, column))
        elif kind == "ident":
            tokens.append(Token("KEYWORD" if value in KEYWORDS else "IDENT", value, line, column))
        elif kind == "string":
            tokens.append(Token("STRING", value[1:-1], line, column))
        elif kind == "op":
            tokens.append(Token("OP", value, line, column))
        newlines = value.count("\n")
        if newlines:
            line += newlines
            line_start = pos + value.rindex("\n") + 1
        pos = match.end()
    tokens.append(Token("EOF", "", line, pos - line_start + 1))
    return tokens


# --------------------------------------------------------------------------- AST

@dataclass(frozen=True)
class Num:
    value: Number
    pos: tuple = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Bool:
    value: bool
    pos: tuple = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Var:
    name: str
    pos: tuple = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class LabelRef:
    name: str
    pos: tuple = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Unary:
    op: str  # "-" or "!"
    operand: "Expr"
    pos: tuple = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"
    pos: tuple = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple
    pos: tuple = field(default=None, compare=False, repr=False)


Expr = Union[Num, Bool, Var, LabelRef, Unary, Binary, Call]

ARITH_OPS = {"+", "-", "*", "/"}
COMPARE_OPS = {"=", "!=", "<", "<=", ">", ">="}
BOOL_OPS = {"&", "|"}


def normalize_number(value) -> Number:
    value = Fraction(value)
    return value.numerator if value.denominator == 1 else value


def parse_number_literal(text: str) -> Number:
    # decimal literals are exact: "0.1" is 1/10, never a binary float
    return normalize_number(Fraction(text))


def walk(expr: Expr) -> Iterator[Expr]:
    yield expr
    if isinstance(expr, Unary):
        yield from walk(expr.operand)
    elif isinstance(expr, Binary):
        yield from walk(expr.left)
        yield from walk(expr.right)
    elif isinstance(expr, Call):
        for arg in expr.args:
            yield from walk(arg)


def free_variables(expr: Expr) -> set[str]:
    return {node.name for node in walk(expr) if isinstance(node, Var)}


# --------------------------------------------------------------------------- parser

class TokenStream:
    def __init__(self, tokens: Sequence[Token]):
        self.tokens = tokens
        self.index = 0

    def peek(self, offset: int = 0) -> Token:
        return self.tokens[min(self.index + offset, len(self.tokens) - 1)]

    def next(self) -> Token:
        tok = self.tokens[self.index]
        if tok.kind != "EOF":
            self.index += 1
        return tok

    def at(self, text: str, kind: str | None = None) -> bool:
        tok = self.peek()
        return tok.text == text and tok.kind in ((kind,) if kind else ("OP", "KEYWORD"))

    def accept(self, text: str) -> Token | None:
        if self.at(text):
            return self.next()
        return None

    def expect(self, text: str) -> Token:
        tok = self.peek()
        if not self.at(text):
            found = tok.text or "end of input"
            raise ModelSyntaxError(f"expected {text!r}, found {found!r}", tok.line, tok.column)
        return self.next()

    def expect_kind(self, kind: str, what: str) -> Token:
        tok = self.peek()
        if tok.kind != kind:
            found = tok.text or "end of input"
            raise ModelSyntaxError(f"expected {what}, found {found!r}", tok.line, tok.column)
        return self.next()

    def error(self, message: str) -> ModelSyntaxError:
        tok = self.peek()
        return ModelSyntaxError(message, tok.line, tok.column)


def parse_expression(stream: TokenStream) -> Expr:
    return _parse_or(stream)


def _pos(tok: Token) -> tuple:
    return (tok.line, tok.column)


def _parse_or(ts):
    left = _parse_and(ts)
    while ts.at("|"):
        tok = ts.next()
        left = Binary("|", left, _parse_and(ts), _pos(tok))
    return left


def _parse_and(ts):
    left = _parse_not(ts)
    while ts.at("&"):
        tok = ts.next()
        left = Binary("&", left, _parse_not(ts), _pos(tok))
    return left


def _parse_not(ts):
    if ts.at("!"):
        tok = ts.next()
        return Unary("!", _parse_not(ts), _pos(tok))
    return _parse_compare(ts)


def _parse_compare(ts):
    left = _parse_additive(ts)
    tok = ts.peek()
    if tok.kind == "OP" and tok.text in COMPARE_OPS:
        ts.next()
        left = Binary(tok.text, left, _parse_additive(ts), _pos(tok))
        after = ts.peek()
        if after.kind == "OP" and after.text in COMPARE_OPS:
            raise ModelSyntaxError("comparisons do not chain; add parentheses", after.line, after.column)
    return left


def _parse_additive(ts):
    left = _parse_multiplicative(ts)
    while ts.peek().kind == "OP" and ts.peek().text in ("+", "-"):
        tok = ts.next()
        left = Binary(tok.text, left, _parse_multiplicative(ts), _pos(tok))
    return left


def _parse_multiplicative(ts):
    left = _parse_unary(ts)
    while ts.peek().kind == "OP" and ts.peek().text in ("*", "/"):
        tok = ts.next()
        left = Binary(tok.text, left, _parse_unary(ts), _pos(tok))
    return left


def _parse_unary(ts):
    if ts.at("-"):
        tok = ts.next()
        operand = _parse_unary(ts)
        if isinstance(operand, Num):
            return Num(-operand.value, _pos(tok))
        return Unary("-", operand, _pos(tok))
    return _parse_primary(ts)


def _parse_primary(ts):
    tok = ts.peek()
    if tok.kind == "NUM":
        ts.next()
        return Num(parse_number_literal(tok.text), _pos(tok))
    if tok.kind == "KEYWORD" and tok.text in ("true", "false"):
        ts.next()
        return Bool(tok.text == "true", _pos(tok))
    if tok.kind == "STRING":
        ts.next()
        return LabelRef(tok.text, _pos(tok))
    if tok.kind == "IDENT":
        ts.next()
        if tok.text in FUNCTIONS and ts.at("("):
            ts.next()
            args = [parse_expression(ts)]
            while ts.accept(","):
                args.append(parse_expression(ts))
            ts.expect(")")
            arity_ok = len(args) == 1 if tok.text == "abs" else len(args) >= 2
            if not arity_ok:
                raise ModelSyntaxError(f"wrong number of arguments to {tok.text}", tok.line, tok.column)
            return Call(tok.text, tuple(args), _pos(tok))
        return Var(tok.text, _pos(tok))
    if ts.at("("):
        ts.next()
        inner = parse_expression(ts)
        ts.expect(")")
        return inner
    found = tok.text or "end of input"
    raise ModelSyntaxError(f"expected an expression, found {found!r}", tok.line, tok.column)


def parse_expr_text(text: str) -> Expr:
    """Parse a standalone expression such as a label predicate."""
    ts = TokenStream(tokenize(text))
    expr = parse_expression(ts)
    if ts.peek().kind != "EOF":
        raise ts.error(f"unexpected {ts.peek().text!r} after expression")
    return fold(expr)


# --------------------------------------------------------------------------- evaluation

def _div(a, b):
    if b == 0:
        raise EvaluationError("division by zero")
    return normalize_number(Fraction(a) / Fraction(b))


def _apply_binary(op, a, b):
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        return _div(a, b)
    if op == "=":
        return a == b
    if op == "!=":
        return a != b
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    if op == ">=":
        return a >= b
    if op == "&":
        return a and b
    if op == "|":
        return a or b
    raise EvaluationError(f"unknown operator {op}")


def evaluate(expr: Expr, env: Mapping[str, Number], labels=frozenset()):
    """Evaluate ``expr`` by walking the tree.

    ``env`` maps variable (or constant) names to values and ``labels`` is the
    set of label names that hold, consulted by ``"label"`` references.
    """
    if isinstance(expr, (Num, Bool)):
        return expr.value
    if isinstance(expr, Var):
        try:
            return env[expr.name]
        except KeyError:
            line, col = expr.pos or (None, None)
            raise UndeclaredIdentifierError(f"undeclared identifier {expr.name!r}", line, col) from None
    if isinstance(expr, LabelRef):
        return expr.name in labels
    if isinstance(expr, Unary):
        value = evaluate(expr.operand, env, labels)
        return -value if expr.op == "-" else not value
    if isinstance(expr, Binary):
        if expr.op == "&":
            return bool(evaluate(expr.left, env, labels)) and bool(evaluate(expr.right, env, labels))
        if expr.op == "|":
            return bool(evaluate(expr.left, env, labels)) or bool(evaluate(expr.right, env, labels))
        return _apply_binary(expr.op, evaluate(expr.left, env, labels), evaluate(expr.right, env, labels))
    if isinstance(expr, Call):
        args = [evaluate(a, env, labels) for a in expr.args]
        if expr.func == "abs":
            return abs(args[0])
        return min(args) if expr.func == "min" else max(args)
    raise EvaluationError(f"cannot evaluate {expr!r}")


def fold(expr: Expr) -> Expr:
    """Fold constant subtrees into literals (``1/2`` becomes ``Num(1/2)``)."""
    if isinstance(expr, Unary):
        operand = fold(expr.operand)
        if isinstance(operand, (Num, Bool)):
            return _literal(evaluate(Unary(expr.op, operand), {}), expr.pos)
        return Unary(expr.op, operand, expr.pos)
    if isinstance(expr, Binary):
        left, right = fold(expr.left), fold(expr.right)
        if isinstance(left, (Num, Bool)) and isinstance(right, (Num, Bool)):
            return _literal(evaluate(Binary(expr.op, left, right), {}), expr.pos)
        return Binary(expr.op, left, right, expr.pos)
    if isinstance(expr, Call):
        args = tuple(fold(a) for a in expr.args)
        if all(isinstance(a, Num) for a in args):
            return _literal(evaluate(Call(expr.func, args), {}), expr.pos)
        return Call(expr.func, args, expr.pos)
    return expr


def _literal(value, pos):
    if isinstance(value, bool):
        return Bool(value, pos)
    return Num(normalize_number(value), pos)


def substitute(expr: Expr, bindings: Mapping[str, Number]) -> Expr:
    """Replace variables named in ``bindings`` by literals, then fold."""
    def go(e):
        if isinstance(e, Var) and e.name in bindings:
            return _literal(bindings[e.name], e.pos)
        if isinstance(e, Unary):
            return Unary(e.op, go(e.operand), e.pos)
        if isinstance(e, Binary):
            return Binary(e.op, go(e.left), go(e.right), e.pos)
        if isinstance(e, Call):
            return Call(e.func, tuple(go(a) for a in e.args), e.pos)
        return e
    return fold(go(expr))


# --------------------------------------------------------------------------- typing

def infer_type(expr: Expr, names: Mapping[str, str]) -> str:
    """Return ``"int"`` or ``"bool"``; raise on ill-typed or undeclared names.

    ``names`` maps identifiers to their type.  Label references are boolean.
    """
    line, col = expr.pos or (None, None)
    if isinstance(expr, Num):
        return "int"
    if isinstance(expr, (Bool, LabelRef)):
        return "bool"
    if isinstance(expr, Var):
        if expr.name not in names:
            raise UndeclaredIdentifierError(f"undeclared identifier {expr.name!r}", line, col)
        return names[expr.name]
    if isinstance(expr, Unary):
        inner = infer_type(expr.operand, names)
        want = "int" if expr.op == "-" else "bool"
        if inner != want:
            raise ModelTypeError(f"operator {expr.op!r} expects {want}, got {inner}", line, col)
        return want
    if isinstance(expr, Binary):
        lt, rt = infer_type(expr.left, names), infer_type(expr.right, names)
        if expr.op in BOOL_OPS:
            if lt != "bool" or rt != "bool":
                raise ModelTypeError(f"operator {expr.op!r} expects booleans", line, col)
            return "bool"
        if expr.op in ("=", "!=") and lt == rt:
            return "bool"
        if lt != "int" or rt != "int":
            raise ModelTypeError(f"operator {expr.op!r} expects numbers", line, col)
        return "bool" if expr.op in COMPARE_OPS else "int"
    if isinstance(expr, Call):
        for arg in expr.args:
            if infer_type(arg, names) != "int":
                raise ModelTypeError(f"{expr.func} expects numeric arguments", line, col)
        return "int"
    raise ModelTypeError(f"unknown expression {expr!r}", line, col)


# --------------------------------------------------------------------------- compilation

def _codegen(expr: Expr, index: Mapping[str, int], consts: list) -> str:
    if isinstance(expr, Num):
        if isinstance(expr.value, Fraction):
            consts.append(expr.value)
            return f"_c{len(consts) - 1}"
        return repr(expr.value)
    if isinstance(expr, Bool):
        return "True" if expr.value else "False"
    if isinstance(expr, Var):
        if expr.name not in index:
            line, col = expr.pos or (None, None)
            raise UndeclaredIdentifierError(f"undeclared identifier {expr.name!r}", line, col)
        return f"s[{index[expr.name]}]"
    if isinstance(expr, LabelRef):
        return f"({expr.name!r} in L)"
    if isinstance(expr, Unary):
        inner = _codegen(expr.operand, index, consts)
        return f"(-{inner})" if expr.op == "-" else f"(not {inner})"
    if isinstance(expr, Binary):
        a = _codegen(expr.left, index, consts)
        b = _codegen(expr.right, index, consts)
        if expr.op == "/":
            return f"_div({a}, {b})"
        op = {"=": "==", "&": "and", "|": "or"}.get(expr.op, expr.op)
        return f"({a} {op} {b})"
    if isinstance(expr, Call):
        args = ", ".join(_codegen(a, index, consts) for a in expr.args)
        return f"{expr.func}({args})"
    raise EvaluationError(f"cannot compile {expr!r}")


def compile_expr(expr: Expr, variables: Sequence[str]) -> Callable:
    """Compile ``expr`` into ``f(state, labels=frozenset())``.

    ``state`` is a tuple aligned with ``variables``.
    """
    index = {name: i for i, name in enumerate(variables)}
    consts: list = []
    body = _codegen(expr, index, consts)
    namespace = {"_div": _div, "min": min, "max": max, "abs": abs}
    namespace.update({f"_c{i}": c for i, c in enumerate(consts)})
    return eval(f"lambda s, L=frozenset(): {body}", namespace)  # noqa: S307 - generated from a typed AST


# --------------------------------------------------------------------------- printing

_PREC = {"|": 1, "&": 2, "=": 4, "!=": 4, "<": 4, "<=": 4, ">": 4, ">=": 4, "+": 5, "-": 5, "*": 6, "/": 6}


def format_number(value: Number) -> str:
    value = normalize_number(value)
    if isinstance(value, Fraction):
        return f"{value.numerator}/{value.denominator}"
    return str(value)


def _precedence(expr: Expr) -> int:
    if isinstance(expr, Binary):
        return _PREC[expr.op]
    if isinstance(expr, Unary):
        return 3 if expr.op == "!" else 7
    if isinstance(expr, Num):
        if isinstance(expr.value, Fraction):
            return 6
        return 7 if expr.value < 0 else 8
    return 8


def to_text(expr: Expr) -> str:
    """Canonical text that re-parses (and re-folds) to an equal tree."""
    if isinstance(expr, Num):
        return format_number(expr.value)
    if isinstance(expr, Bool):
        return "true" if expr.value else "false"
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, LabelRef):
        return f'"{expr.name}"'
    if isinstance(expr, Call):
        return f"{expr.func}({', '.join(to_text(a) for a in expr.args)})"
    if isinstance(expr, Unary):
        need = 3 if expr.op == "!" else 7
        inner = to_text(expr.operand)
        if _precedence(expr.operand) < need or (expr.op == "-" and _precedence(expr.operand) == 7):
            inner = f"({inner})"
        return f"{expr.op}{inner}"
    if isinstance(expr, Binary):
        p = _PREC[expr.op]
        left, right = to_text(expr.left), to_text(expr.right)
        lp, rp = _precedence(expr.left), _precedence(expr.right)
        if lp < p or (p == 4 and lp == 4):
            left = f"({left})"
        if rp <= p:
            right = f"({right})"
        return f"{left} {expr.op} {right}"
    raise EvaluationError(f"cannot print {expr!r}")
