"""Evaluation tapes and their piecewise linear (tangent / secant) models.

A :class:`Tape` is a straight-line program over the library
``{+, -, *, neg, recip, sin, cos, tan, exp, log, sqrt, abs}``.  Every ``abs``
node is a *switching variable*; its argument decides which affine piece of the
local model is active.

Linearization keeps ``abs`` exact and replaces every smooth elemental by a
linear map, so the resulting :class:`PLModel` is a genuine piecewise linear
function of the increment.  In secant mode the model interpolates the tape at
both anchors.
"""

from __future__ import annotations

import inspect
import math
from dataclasses import dataclass, field
from functools import cached_property
from enum import IntEnum
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Op",
    "Tape",
    "TapeBuilder",
    "Var",
    "PLModel",
    "EvaluationDomainError",
    "record_tape",
    "evaluate",
    "linearize_tangent",
    "linearize_secant",
    "pl_increment",
    "pl_nonincremental",
    "signature_at",
    "SECANT_EPS",
]

# relative threshold below which a secant slope falls back to the derivative
SECANT_EPS = 1e-10


class Op(IntEnum):
    INPUT = 0
    CONST = 1
    ADD = 2
    SUB = 3
    MUL = 4
    NEG = 5
    RECIP = 6
    SIN = 7
    COS = 8
    TAN = 9
    EXP = 10
    LOG = 11
    SQRT = 12
    ABS = 13


UNARY_KINDS = {
    "neg": Op.NEG,
    "recip": Op.RECIP,
    "sin": Op.SIN,
    "cos": Op.COS,
    "tan": Op.TAN,
    "exp": Op.EXP,
    "log": Op.LOG,
    "sqrt": Op.SQRT,
}

_SMOOTH_UNARY = frozenset(UNARY_KINDS.values())

_FUNC = {
    Op.NEG: lambda u: -u,
    Op.RECIP: lambda u: 1.0 / u,
    Op.SIN: math.sin,
    Op.COS: math.cos,
    Op.TAN: math.tan,
    Op.EXP: math.exp,
    Op.LOG: math.log,
    Op.SQRT: math.sqrt,
}

# derivative expressed through the argument u and the value w = phi(u)
_DERIV = {
    Op.NEG: lambda u, w: -1.0,
    Op.RECIP: lambda u, w: -w * w,
    Op.SIN: lambda u, w: math.cos(u),
    Op.COS: lambda u, w: -math.sin(u),
    Op.TAN: lambda u, w: 1.0 + w * w,
    Op.EXP: lambda u, w: w,
    Op.LOG: lambda u, w: 1.0 / u,
    Op.SQRT: lambda u, w: 0.5 / w,
}

_NP_FUNC = {
    Op.NEG: np.negative,
    Op.RECIP: np.reciprocal,
    Op.SIN: np.sin,
    Op.COS: np.cos,
    Op.TAN: np.tan,
    Op.EXP: np.exp,
    Op.LOG: np.log,
    Op.SQRT: np.sqrt,
}


class EvaluationDomainError(ValueError):
    """A smooth elemental was evaluated outside its domain."""

    def __init__(self, node: int, op: Op, arg: float):
        self.node = node
        self.op = op
        self.arg = arg
        super().__init__(f"node {node} ({op.name.lower()}) undefined at argument {arg!r}")


@dataclass(frozen=True)
class Tape:
    """Immutable evaluation procedure.

    ``nodes[i]`` is ``(op, j, k, const)``; ``j`` and ``k`` are operand indices
    (``-1`` when unused), ``const`` holds the literal of a CONST node or the
    input position of an INPUT node.
    """

    n_inputs: int
    nodes: tuple
    output_indices: tuple
    abs_nodes: tuple = field(init=False)
    input_nodes: tuple = field(init=False)

    def __post_init__(self):
        inputs = [None] * self.n_inputs
        abs_nodes = []
        for i, (op, j, k, c) in enumerate(self.nodes):
            if op == Op.INPUT:
                pos = int(c)
                if not 0 <= pos < self.n_inputs or inputs[pos] is not None:
                    raise ValueError(f"bad input position {pos} at node {i}")
                inputs[pos] = i
            for operand in (j, k):
                assert operand < i, "operands must precede their use"
            if op == Op.ABS:
                abs_nodes.append(i)
        if any(p is None for p in inputs):
            raise ValueError("every input position needs an INPUT node")
        for o in self.output_indices:
            if not 0 <= o < len(self.nodes):
                raise ValueError(f"output index {o} out of range")
        object.__setattr__(self, "abs_nodes", tuple(abs_nodes))
        object.__setattr__(self, "input_nodes", tuple(inputs))

    @property
    def n_outputs(self) -> int:
        return len(self.output_indices)

    @property
    def n_abs(self) -> int:
        return len(self.abs_nodes)

    @property
    def is_smooth(self) -> bool:
        return not self.abs_nodes

    def __len__(self):
        return len(self.nodes)

    @cached_property
    def forward(self) -> Callable:
        """Compiled kernel returning all intermediates (no domain diagnostics)."""
        from ._codegen import compile_forward

        return compile_forward(self)

    @cached_property
    def sweep(self) -> Callable:
        from ._codegen import compile_sweep

        return compile_sweep(self)

    def __call__(self, x):
        return evaluate(self, x)[0]

    def evaluate_batch(self, X):
        """Evaluate on a batch ``X`` of shape ``(n_inputs, N)`` with numpy."""
        X = np.asarray(X, dtype=float)
        v = []
        for op, j, k, c in self.nodes:
            if op == Op.INPUT:
                v.append(X[int(c)])
            elif op == Op.CONST:
                v.append(np.full(X.shape[1:], c))
            elif op == Op.ADD:
                v.append(v[j] + v[k])
            elif op == Op.SUB:
                v.append(v[j] - v[k])
            elif op == Op.MUL:
                v.append(v[j] * v[k])
            elif op == Op.ABS:
                v.append(np.abs(v[j]))
            else:
                v.append(_NP_FUNC[op](v[j]))
        return np.array([v[o] for o in self.output_indices])

    def to_source(self, names: Sequence[str] | None = None) -> str:
        """Render the outputs as ``;``-separated infix expressions."""
        if names is None:
            names = [f"x{i + 1}" for i in range(self.n_inputs)]
        text = []
        for op, j, k, c in self.nodes:
            if op == Op.INPUT:
                text.append(names[int(c)])
            elif op == Op.CONST:
                text.append(f"({c!r})")
            elif op == Op.ADD:
                text.append(f"({text[j]} + {text[k]})")
            elif op == Op.SUB:
                text.append(f"({text[j]} - {text[k]})")
            elif op == Op.MUL:
                text.append(f"({text[j]} * {text[k]})")
            elif op == Op.NEG:
                text.append(f"(-{text[j]})")
            elif op == Op.RECIP:
                text.append(f"(1 / {text[j]})")
            else:
                text.append(f"{op.name.lower()}({text[j]})")
        return " ; ".join(text[o] for o in self.output_indices)


class Var:
    """Handle to a node under construction; supports the usual operators."""

    __slots__ = ("builder", "index")

    def __init__(self, builder: TapeBuilder, index: int):
        self.builder = builder
        self.index = index

    def _coerce(self, other) -> Var:
        if isinstance(other, Var):
            if other.builder is not self.builder:
                raise ValueError("operands belong to different tapes")
            return other
        return self.builder.constant(float(other))

    def __add__(self, other):
        return self.builder.binary(Op.ADD, self, self._coerce(other))

    def __radd__(self, other):
        return self.builder.binary(Op.ADD, self._coerce(other), self)

    def __sub__(self, other):
        return self.builder.binary(Op.SUB, self, self._coerce(other))

    def __rsub__(self, other):
        return self.builder.binary(Op.SUB, self._coerce(other), self)

    def __mul__(self, other):
        return self.builder.binary(Op.MUL, self, self._coerce(other))

    def __rmul__(self, other):
        return self.builder.binary(Op.MUL, self._coerce(other), self)

    def __truediv__(self, other):
        return self.builder.divide(self, self._coerce(other))

    def __rtruediv__(self, other):
        return self.builder.divide(self._coerce(other), self)

    def __neg__(self):
        return self.builder.unary(Op.NEG, self)

    def __pos__(self):
        return self

    def __abs__(self):
        return self.builder.abs(self)

    def __repr__(self):
        return f"Var({self.index})"


class TapeBuilder:
    """Records a program node by node.

    ``max``/``min`` are expanded through ``abs`` and division through ``recip``
    followed by ``mul``.  Unary operations on constants are folded.
    """

    def __init__(self, n_inputs: int):
        self.n_inputs = n_inputs
        self.nodes: list[tuple] = []
        self.inputs = [self._push(Op.INPUT, -1, -1, float(i)) for i in range(n_inputs)]

    def _push(self, op, j=-1, k=-1, c=0.0) -> Var:
        n = len(self.nodes)
        if j >= n or k >= n:
            raise ValueError("operand refers to a node that does not exist yet")
        self.nodes.append((Op(op), j, k, c))
        return Var(self, n)

    def _is_const(self, v: Var) -> bool:
        return self.nodes[v.index][0] == Op.CONST

    def constant(self, value: float) -> Var:
        return self._push(Op.CONST, -1, -1, float(value))

    def binary(self, op: Op, a: Var, b: Var) -> Var:
        if op not in (Op.ADD, Op.SUB, Op.MUL):
            raise ValueError(f"not a binary operation: {op!r}")
        return self._push(op, a.index, b.index)

    def unary(self, op, a: Var) -> Var:
        if isinstance(op, str):
            if op not in UNARY_KINDS:
                raise ValueError(f"unknown unary kind {op!r}")
            op = UNARY_KINDS[op]
        if op not in _SMOOTH_UNARY:
            raise ValueError(f"unknown unary kind {op!r}")
        if self._is_const(a):
            value = self.nodes[a.index][3]
            try:
                return self.constant(_FUNC[op](value))
            except (ValueError, ZeroDivisionError):
                raise EvaluationDomainError(a.index, op, value) from None
        return self._push(op, a.index)

    def abs(self, a: Var) -> Var:
        if self._is_const(a):
            return self.constant(abs(self.nodes[a.index][3]))
        return self._push(Op.ABS, a.index)

    def divide(self, a: Var, b: Var) -> Var:
        return self.binary(Op.MUL, a, self.unary(Op.RECIP, b))

    def max(self, a, b) -> Var:
        a, b = self._var(a), self._var(b)
        return (a + b + self.abs(a - b)) * 0.5

    def min(self, a, b) -> Var:
        a, b = self._var(a), self._var(b)
        return (a + b - self.abs(a - b)) * 0.5

    def _var(self, a) -> Var:
        return a if isinstance(a, Var) else self.constant(a)

    def build(self, outputs: Sequence) -> Tape:
        outs = tuple(self._var(o).index for o in outputs)
        return Tape(self.n_inputs, tuple(self.nodes), outs)


def record_tape(program: Callable, n_inputs: int) -> Tape:
    """Record ``program`` into a tape.

    ``program`` receives the list of input variables plus the builder (when it
    accepts two arguments) and returns the sequence of output variables.

    >>> tape = record_tape(lambda x: [abs(x[0])], 1)
    >>> tape.n_abs
    1
    """
    b = TapeBuilder(n_inputs)
    if len(inspect.signature(program).parameters) >= 2:
        outputs = program(b.inputs, b)
    else:
        outputs = program(b.inputs)
    if isinstance(outputs, Var) or np.isscalar(outputs):
        outputs = [outputs]
    return b.build(outputs)


def _forward(tape: Tape, x) -> list:
    v = []
    append = v.append
    for i, (op, j, k, c) in enumerate(tape.nodes):
        if op == 4:
            append(v[j] * v[k])
        elif op == 2:
            append(v[j] + v[k])
        elif op == 3:
            append(v[j] - v[k])
        elif op == 13:
            append(abs(v[j]))
        elif op == 1:
            append(c)
        elif op == 0:
            append(float(x[int(c)]))
        else:
            try:
                append(_FUNC[op](v[j]))
            except (ValueError, ZeroDivisionError, OverflowError):
                raise EvaluationDomainError(i, Op(op), v[j]) from None
    return v


def evaluate(tape: Tape, x) -> tuple[np.ndarray, list]:
    """Evaluate ``tape`` at ``x``; return outputs and all intermediates."""
    if len(x) != tape.n_inputs:
        raise ValueError(f"expected {tape.n_inputs} inputs, got {len(x)}")
    try:
        v = tape.forward(x)
    except (ValueError, ZeroDivisionError, OverflowError):
        v = _forward(tape, x)
    return np.array([v[o] for o in tape.output_indices]), v


@dataclass(frozen=True, eq=False)
class PLModel:
    """Piecewise linear model of a tape around ``x_mid``.

    ``v_mid`` holds the reference intermediates, ``slope`` the (tangent or
    secant) slope of each smooth unary node, and ``abs_value`` the stored
    reference value of each abs node (``|v_mid[j]|`` in tangent mode, the mean
    of the endpoint magnitudes in secant mode).  Increments propagate through
    abs as ``|v_mid[j] + dv_j| - abs_value[i]``, which makes the secant model
    interpolate the tape at both anchors.
    """

    mode: str
    tape: Tape
    x_lo: np.ndarray
    x_hi: np.ndarray
    x_mid: np.ndarray
    f_ref: np.ndarray
    v_mid: list
    slope: list
    v_lo: list | None = None
    v_hi: list | None = None

    @property
    def abs_value(self) -> list:
        return [self.v_mid[i] for i in self.tape.abs_nodes]

    def increment(self, dx) -> np.ndarray:
        dv = self._increments(dx)
        return np.array([dv[o] for o in self.tape.output_indices])

    def _increments(self, dx) -> list:
        vm = self.v_mid
        s = self.slope
        dv = []
        append = dv.append
        for i, (op, j, k, c) in enumerate(self.tape.nodes):
            if op == 4:
                append(vm[j] * dv[k] + dv[j] * vm[k])
            elif op == 2:
                append(dv[j] + dv[k])
            elif op == 3:
                append(dv[j] - dv[k])
            elif op == 13:
                append(abs(vm[j] + dv[j]) - vm[i])
            elif op == 1:
                append(0.0)
            elif op == 0:
                append(float(dx[int(c)]))
            else:
                append(s[i] * dv[j])
        return dv

    def __call__(self, x) -> np.ndarray:
        return self.nonincremental(x)

    def nonincremental(self, x) -> np.ndarray:
        return self.f_ref + self.increment(np.asarray(x, dtype=float) - self.x_mid)

    def switching_values(self, dx) -> np.ndarray:
        """Arguments ``v_mid[j] + dv_j`` of every abs node at increment ``dx``."""
        dv = self._increments(dx)
        nodes = self.tape.nodes
        return np.array([self.v_mid[nodes[i][1]] + dv[nodes[i][1]] for i in self.tape.abs_nodes])

    def signature(self, dx, eps: float = 0.0) -> tuple:
        z = self.switching_values(dx)
        return tuple(0 if abs(zi) <= eps else (1 if zi > 0 else -1) for zi in z)

    def increment_batch(self, DX) -> np.ndarray:
        """Vectorized :meth:`increment` for ``DX`` of shape ``(n_inputs, N)``."""
        DX = np.asarray(DX, dtype=float)
        zero = np.zeros(DX.shape[1:])
        vm, s = self.v_mid, self.slope
        dv = []
        for i, (op, j, k, c) in enumerate(self.tape.nodes):
            if op == Op.INPUT:
                dv.append(DX[int(c)])
            elif op == Op.CONST:
                dv.append(zero)
            elif op == Op.ADD:
                dv.append(dv[j] + dv[k])
            elif op == Op.SUB:
                dv.append(dv[j] - dv[k])
            elif op == Op.MUL:
                dv.append(vm[j] * dv[k] + dv[j] * vm[k])
            elif op == Op.ABS:
                dv.append(np.abs(vm[j] + dv[j]) - vm[i])
            else:
                dv.append(s[i] * dv[j])
        return np.array([dv[o] for o in self.tape.output_indices])


def _tangent_slopes(tape: Tape, v: list) -> list:
    slope = [0.0] * len(v)
    for i, (op, j, k, c) in enumerate(tape.nodes):
        if op in _SMOOTH_UNARY:
            slope[i] = _DERIV[op](v[j], v[i])
    return slope


def linearize_tangent(tape: Tape, x_mid) -> PLModel:
    """Tangent-mode piecewise linearization at ``x_mid``."""
    x_mid = np.array(x_mid, dtype=float)
    y, v = evaluate(tape, x_mid)
    return PLModel("tangent", tape, x_mid, x_mid.copy(), x_mid, y, v, _tangent_slopes(tape, v))


def _secant_parts(tape: Tape, v_lo: list, v_hi: list):
    nodes = tape.nodes
    v_mid = [0.5 * (a + b) for a, b in zip(v_lo, v_hi)]
    slope = [0.0] * len(v_mid)
    for i, (op, j, k, c) in enumerate(nodes):
        if op >= 5 and op != 13:
            du = v_hi[j] - v_lo[j]
            if abs(du) > SECANT_EPS * max(1.0, abs(v_lo[j]), abs(v_hi[j])):
                slope[i] = (v_hi[i] - v_lo[i]) / du
            else:
                u = v_mid[j]
                slope[i] = _DERIV[op](u, _FUNC[op](u))
    return v_mid, slope


def secant_from_values(tape: Tape, x_lo, x_hi, v_lo: list, v_hi: list) -> PLModel:
    """Secant model from already evaluated intermediates at both anchors."""
    v_mid, slope = _secant_parts(tape, v_lo, v_hi)
    x_mid = 0.5 * (x_lo + x_hi)
    outs = tape.output_indices
    f_ref = np.array([v_mid[o] for o in outs])
    return PLModel("secant", tape, x_lo, x_hi, x_mid, f_ref, v_mid, slope, v_lo, v_hi)


def linearize_secant(tape: Tape, x_lo, x_hi) -> PLModel:
    """Secant-mode piecewise linearization between ``x_lo`` and ``x_hi``."""
    x_lo = np.array(x_lo, dtype=float)
    x_hi = np.array(x_hi, dtype=float)
    _, v_lo = evaluate(tape, x_lo)
    _, v_hi = evaluate(tape, x_hi)
    return secant_from_values(tape, x_lo, x_hi, v_lo, v_hi)


def pl_increment(model: PLModel, dx) -> np.ndarray:
    return model.increment(dx)


def pl_nonincremental(model: PLModel, x) -> np.ndarray:
    return model.nonincremental(x)


def signature_at(model: PLModel, dx, eps: float = 0.0) -> tuple:
    """Signs of the switching values at increment ``dx`` (``|z| <= eps`` gives 0)."""
    return model.signature(dx, eps)
