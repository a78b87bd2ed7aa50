"""Right-hand-side expressions to tapes.

A program lists one derivative expression per line (or ``;``-separated on
one line).  Expressions use ``+ - * /``, parentheses, numeric literals, the
state variables and the functions ``abs min max sin cos tan exp log sqrt``.
``#`` starts a comment.  Two optional directive lines configure the state::

    vars: x, v
    x0: 1.0, 0.0
    v
    -x - abs(x - 1)/2 + abs(x + 1)/2

Without ``vars`` the states are ``x1 .. xn`` (a single state may also be
called ``x``); without ``x0`` the initial state is zero.

The syntax is checked with Python's own parser and then restricted to the
grammar above; nodes are recorded left to right, depth first.
"""

from __future__ import annotations

import ast
import re
from dataclasses import dataclass

import numpy as np

from .adcore import Op, Tape, TapeBuilder

__all__ = ["ExpressionError", "ExpressionProgram", "parse_expression", "parse_program", "FUNCTIONS"]

FUNCTIONS = {
    "abs": 1,
    "sin": 1,
    "cos": 1,
    "tan": 1,
    "exp": 1,
    "log": 1,
    "sqrt": 1,
    "min": 2,
    "max": 2,
}

_DIRECTIVE = re.compile(r"^\s*(vars|x0)\s*:(.*)$")
_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


class ExpressionError(ValueError):
    """Malformed expression; ``line`` and ``column`` are 1-based."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(where + message)


@dataclass(frozen=True, eq=False)
class ExpressionProgram:
    names: tuple
    tape: Tape
    x0: np.ndarray
    source: str = ""


def _split_directives(source: str):
    names = None
    x0 = None
    body = []
    for lineno, raw in enumerate(source.splitlines(), start=1):
        m = _DIRECTIVE.match(raw.split("#", 1)[0])
        if m is None:
            body.append(raw)
            continue
        body.append("")  # keep line numbers
        key, rest = m.group(1), m.group(2)
        items = [s.strip() for s in rest.split(",") if s.strip()]
        if key == "vars":
            for s in items:
                if not _NAME.match(s) or s in FUNCTIONS:
                    raise ExpressionError(f"invalid variable name {s!r}", lineno, 1)
            if len(set(items)) != len(items):
                raise ExpressionError("duplicate variable name", lineno, 1)
            names = items
        else:
            try:
                x0 = [float(s) for s in items]
            except ValueError:
                raise ExpressionError(f"invalid initial value list {rest.strip()!r}", lineno, 1) from None
    return body, names, x0


def _parse_body(lines):
    # leading blanks would be indentation errors for Python; strip and
    # remember how much was removed so columns stay correct
    shifts = []
    cleaned = []
    for raw in lines:
        stripped = raw.lstrip(" \t")
        shifts.append(len(raw) - len(stripped))
        cleaned.append(stripped)
    text = "\n".join(cleaned)
    try:
        module = ast.parse(text, mode="exec")
    except SyntaxError as exc:
        line = exc.lineno or 1
        col = (exc.offset or 1) + (shifts[line - 1] if 0 < line <= len(shifts) else 0)
        raise ExpressionError(f"syntax error: {exc.msg}", line, col) from None
    exprs = []
    for stmt in module.body:
        if not isinstance(stmt, ast.Expr):
            raise ExpressionError("expected an expression", stmt.lineno,
                                  stmt.col_offset + 1 + shifts[stmt.lineno - 1])
        exprs.append(stmt.value)
    return exprs, shifts


class _Recorder:
    def __init__(self, builder: TapeBuilder, variables: dict, shifts):
        self.b = builder
        self.vars = variables
        self.shifts = shifts

    def error(self, node, message):
        line = getattr(node, "lineno", None)
        col = getattr(node, "col_offset", 0) + 1
        if line is not None:
            col += self.shifts[line - 1]
        raise ExpressionError(message, line, col)

    def visit(self, node):
        if isinstance(node, ast.Constant):
            v = node.value
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                self.error(node, f"unsupported literal {v!r}")
            return self.b.constant(float(v))
        if isinstance(node, ast.Name):
            if node.id not in self.vars:
                self.error(node, f"unknown identifier {node.id!r}")
            return self.vars[node.id]
        if isinstance(node, ast.UnaryOp):
            if isinstance(node.op, ast.USub):
                return -self.visit(node.operand)
            if isinstance(node.op, ast.UAdd):
                return self.visit(node.operand)
            self.error(node, "unsupported unary operator")
        if isinstance(node, ast.BinOp):
            ops = {ast.Add: "__add__", ast.Sub: "__sub__", ast.Mult: "__mul__", ast.Div: "__truediv__"}
            name = ops.get(type(node.op))
            if name is None:
                self.error(node, f"unsupported operator {type(node.op).__name__}")
            left = self.visit(node.left)
            right = self.visit(node.right)
            return getattr(left, name)(right)
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name):
                self.error(node, "only plain function names can be called")
            fname = node.func.id
            if fname not in FUNCTIONS:
                self.error(node.func, f"unknown function {fname!r}")
            if node.keywords or len(node.args) != FUNCTIONS[fname]:
                self.error(node, f"{fname} expects {FUNCTIONS[fname]} argument(s), got {len(node.args)}")
            args = [self.visit(a) for a in node.args]
            if fname == "abs":
                return self.b.abs(args[0])
            if fname == "max":
                return self.b.max(*args)
            if fname == "min":
                return self.b.min(*args)
            return self.b.unary(fname, args[0])
        self.error(node, f"unsupported syntax {type(node).__name__}")


def parse_program(source: str, variables=None) -> ExpressionProgram:
    """Parse a program into tape, state names and initial state."""
    body, names, x0 = _split_directives(source)
    exprs, shifts = _parse_body(body)
    if not exprs:
        raise ExpressionError("no expressions found")
    n = len(exprs)
    if variables is not None:
        names = list(variables)
    if names is None:
        names = [f"x{i + 1}" for i in range(n)]
        aliases = {"x": 0} if n == 1 else {}
    else:
        aliases = {}
    if len(names) != n:
        raise ExpressionError(f"{len(names)} variables declared but {n} expressions given")
    if x0 is None:
        x0 = [0.0] * n
    if len(x0) != n:
        raise ExpressionError(f"x0 has {len(x0)} entries, expected {n}")
    builder = TapeBuilder(n)
    inputs = builder.inputs
    table = {name: inputs[i] for i, name in enumerate(names)}
    for alias, i in aliases.items():
        table.setdefault(alias, inputs[i])
    rec = _Recorder(builder, table, shifts)
    outputs = [rec.visit(e) for e in exprs]
    tape = builder.build(outputs)
    return ExpressionProgram(tuple(names), tape, np.array(x0, dtype=float), source)


def parse_expression(source: str, variables=None) -> Tape:
    """Parse ``source`` into a tape with one output per expression.

    Examples
    --------
    >>> tape = parse_expression("abs(x)")
    >>> float(tape([-2.0])[0])
    2.0
    """
    return parse_program(source, variables).tape
