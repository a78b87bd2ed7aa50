"""Piecewise-linearization based integrators for Lipschitzian ODEs.

The right-hand side is recorded as a tape of elementary operations where
``abs`` is the only nonsmooth operation.  Secant piecewise-linear models of
the tape drive a generalized trapezoidal rule that integrates exactly across
kinks, with dense output, local error estimates and adaptive stepping.
"""

__version__ = "0.1.0"

from .adcore import (
    EvaluationDomainError,
    PLModel,
    Tape,
    TapeBuilder,
    evaluate,
    linearize_secant,
    linearize_tangent,
    record_tape,
)
from .control import (
    ErrorEstimate,
    LipschitzEstimates,
    abs_quadratic_integral,
    estimate_constants,
    estimate_error,
    integrate_adaptive,
    propose_step,
)
from .estimator import PLTrapIntegrator
from .integrate import (
    IVP,
    FPOptions,
    StepFailure,
    StepResult,
    Trajectory,
    classical_trap_step,
    generalized_midpoint_step,
    generalized_trap_step,
    integrate_fixed,
    richardson_extrapolate,
)
from .output import DenseOutput, DenseTrajectory, dense_eval, dense_from_step
from .parser import ExpressionError, parse_expression, parse_program
from .plseg import decompose_segment, integrate_segment
from .problems import abslinear, diode_circuit, get_problem, rolling_stone

__all__ = [name for name in dir() if not name.startswith("_")]
