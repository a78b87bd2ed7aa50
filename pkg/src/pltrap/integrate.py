"""One-step integrators for Lipschitzian IVPs and fixed-step trajectories.

Three implicit rules are provided, all solved by plain fixed-point iteration
started from an explicit Euler predictor:

* the classical trapezoidal rule,
* the generalized trapezoidal rule, which integrates the secant PL model of
  the right-hand side exactly along the chord ``x_check -> x_hat``,
* the generalized midpoint rule, which does the same with the tangent model
  at the chord midpoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .adcore import (
    EvaluationDomainError,
    PLModel,
    Tape,
    evaluate,
    linearize_tangent,
    secant_from_values,
)
from .plseg import KinkOverflowError, SegmentDecomposition, decompose_segment, segment_integral

__all__ = [
    "IVP",
    "FPOptions",
    "StepResult",
    "Trajectory",
    "StepFailure",
    "classical_trap_step",
    "generalized_trap_step",
    "generalized_midpoint_step",
    "make_step",
    "integrate_fixed",
    "richardson_extrapolate",
    "METHODS",
]

METHODS = ("classical", "generalized", "midpoint")


class StepFailure(RuntimeError):
    """The implicit step equation could not be solved."""

    def __init__(self, message: str, residual: float = math.inf, iterations: int = 0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class FPOptions:
    """Fixed-point iteration settings.

    ``slope_source`` selects the kink slopes kept for dense output: ``"model"``
    uses the PL model along the chord (exactly continuous interpolant),
    ``"function"`` re-evaluates the right-hand side at the kink states.
    """

    atol: float = 1e-12
    rtol: float = 1e-12
    max_iter: int = 50
    patience: int = 5
    slope_source: str = "model"

    def __post_init__(self):
        if self.atol < 0 or self.rtol < 0 or self.atol + self.rtol <= 0:
            raise ValueError("fixed-point tolerances must be nonnegative and not both zero")
        if self.max_iter < 1 or self.patience < 1:
            raise ValueError("max_iter and patience must be positive")
        if self.slope_source not in ("model", "function"):
            raise ValueError(f"unknown slope_source {self.slope_source!r}")

    @property
    def tol(self) -> float:
        return max(self.atol, self.rtol)


@dataclass(frozen=True)
class IVP:
    """Autonomous problem ``x' = F(x)``, ``x(t0) = x0`` on ``[t0, t_end]``."""

    tape: Tape
    x0: np.ndarray
    t0: float = 0.0
    t_end: float = 1.0

    def __post_init__(self):
        if self.tape.n_inputs != self.tape.n_outputs:
            raise ValueError("right-hand side must map R^n to R^n")
        x0 = np.array(self.x0, dtype=float).reshape(-1)
        if x0.size != self.tape.n_inputs:
            raise ValueError(f"x0 has {x0.size} entries, tape expects {self.tape.n_inputs}")
        object.__setattr__(self, "x0", x0)
        if not self.t_end > self.t0:
            raise ValueError("t_end must exceed t0")


@dataclass(eq=False)
class StepResult:
    """Data of one accepted step.

    ``params``, ``kink_states`` and ``kink_slopes`` list the step fraction,
    state and slope at the start, at each kink and at the end of the step.
    """

    method: str
    x_check: np.ndarray
    x_hat: np.ndarray
    h: float
    params: np.ndarray
    kink_states: np.ndarray
    kink_slopes: np.ndarray
    fp_iterations: int
    fp_residual: float
    decomposition: SegmentDecomposition | None = None
    model: PLModel | None = None

    @property
    def n_kinks(self) -> int:
        return len(self.params) - 2


@dataclass(eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    steps: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    failure: StepFailure | None = None


def _converged(x_new, x_old, fp: FPOptions):
    res = float(np.max(np.abs(x_new - x_old))) if x_new.size else 0.0
    return res, res <= fp.atol + fp.rtol * float(np.max(np.abs(x_new)))


def _fixed_point(update, x, fp: FPOptions):
    """Iterate ``x <- update(x)``; ``update`` returns ``(x_new, payload)``."""
    best = math.inf
    stall = 0
    res = math.inf
    for it in range(1, fp.max_iter + 1):
        try:
            x_new, payload = update(x)
        except (EvaluationDomainError, KinkOverflowError, FloatingPointError, OverflowError) as exc:
            raise StepFailure(f"iteration {it}: {exc}", res, it) from exc
        if not np.all(np.isfinite(x_new)):
            raise StepFailure(f"iteration {it}: nonfinite iterate", res, it)
        res, ok = _converged(x_new, x, fp)
        if ok:
            return x_new, payload, it, res
        if res < best:
            best, stall = res, 0
        else:
            stall += 1
            if stall >= fp.patience:
                raise StepFailure(f"fixed-point iteration stalled at residual {res:.3e}", res, it)
        x = x_new
    raise StepFailure(f"no convergence in {fp.max_iter} iterations (residual {res:.3e})", res, fp.max_iter)


def classical_trap_step(tape: Tape, x_check, h: float, fp: FPOptions = FPOptions()) -> StepResult:
    """Trapezoidal rule ``x_hat = x_check + h/2 (F(x_check) + F(x_hat))``."""
    x_check = np.asarray(x_check, dtype=float)
    f_check = evaluate(tape, x_check)[0]
    base = x_check + 0.5 * h * f_check

    def update(x):
        return base + 0.5 * h * evaluate(tape, x)[0], None

    x_hat, _, it, res = _fixed_point(update, x_check + h * f_check, fp)
    f_hat = evaluate(tape, x_hat)[0]
    return StepResult(
        "classical", x_check, x_hat, h, np.array([0.0, 1.0]),
        np.array([x_check, x_hat]), np.array([f_check, f_hat]), it, res,
    )


def _kink_data(x_check, h, dec: SegmentDecomposition, tape: Tape, fp: FPOptions):
    states = x_check + h * dec.partial_integrals()
    if fp.slope_source == "model":
        slopes = dec.values
    else:
        slopes = np.array([evaluate(tape, s)[0] for s in states])
    return states, slopes


def _intermediates(tape: Tape, x: list) -> list:
    try:
        return tape.forward(x)
    except (ValueError, ZeroDivisionError, OverflowError):
        return evaluate(tape, x)[1]


def generalized_trap_step(tape: Tape, x_check, h: float, fp: FPOptions = FPOptions()) -> StepResult:
    """Generalized trapezoidal rule.

    Solves ``x = x_check + h G(x)`` where ``G(x)`` is the exact mean of the
    secant model through ``x_check`` and ``x`` along the chord between them.
    The returned state is the last update, so the stored model and
    decomposition reproduce it exactly.
    """
    x_check = np.asarray(x_check, dtype=float)
    f_check, v_check = evaluate(tape, x_check)
    xc = x_check.tolist()

    def update(x):
        xl = x.tolist()
        model = secant_from_values(tape, x_check, x, v_check, _intermediates(tape, xl))
        d = [b - a for a, b in zip(xc, xl)]
        g = segment_integral(model, [-0.5 * di for di in d], d)
        return x_check + h * np.array(g), model

    x_hat, model, it, res = _fixed_point(update, x_check + h * f_check, fp)
    return _finish("generalized", tape, x_check, x_hat, h, model, it, res, fp)


def _finish(method, tape, x_check, x_hat, h, model, it, res, fp):
    half = 0.5 * (model.x_hi - model.x_lo)
    dec = decompose_segment(model, -half, half)
    states, slopes = _kink_data(x_check, h, dec, tape, fp)
    states[-1] = x_hat
    return StepResult(method, x_check, x_hat, h, dec.params, states, slopes, it, res, dec, model)


def generalized_midpoint_step(tape: Tape, x_check, h: float, fp: FPOptions = FPOptions()) -> StepResult:
    """Generalized midpoint rule with the tangent model at the chord midpoint."""
    x_check = np.asarray(x_check, dtype=float)
    f_check = evaluate(tape, x_check)[0]
    xc = x_check.tolist()

    def update(x):
        model = linearize_tangent(tape, 0.5 * (x_check + x))
        d = [b - a for a, b in zip(xc, x.tolist())]
        g = segment_integral(model, [-0.5 * di for di in d], d)
        # keep the chord endpoints for the final decomposition
        model = _with_chord(model, x_check, x)
        return x_check + h * np.array(g), model

    x_hat, model, it, res = _fixed_point(update, x_check + h * f_check, fp)
    return _finish("midpoint", tape, x_check, x_hat, h, model, it, res, fp)


def _with_chord(model: PLModel, lo, hi) -> PLModel:
    from dataclasses import replace

    return replace(model, x_lo=lo, x_hi=hi)


_STEPPERS = {
    "classical": classical_trap_step,
    "generalized": generalized_trap_step,
    "midpoint": generalized_midpoint_step,
}


def make_step(method: str):
    try:
        return _STEPPERS[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}") from None


def richardson_extrapolate(x_full, x_two_halves):
    """Eliminate the ``h**2`` error term: ``(4 x_two_halves - x_full) / 3``."""
    return (4.0 * np.asarray(x_two_halves, dtype=float) - np.asarray(x_full, dtype=float)) / 3.0


def time_grid(t0: float, t_end: float, h: float, max_steps: int = 10_000_000) -> np.ndarray:
    """Uniform grid with spacing ``h``; the last step is shortened to end at ``t_end``."""
    if not h > 0:
        raise ValueError("step size must be positive")
    n = math.ceil((t_end - t0) / h * (1 - 1e-12))
    if n > max_steps:
        raise ValueError(f"{n} steps exceed the limit of {max_steps}")
    times = t0 + h * np.arange(n + 1, dtype=float)
    times[-1] = t_end
    return times


def _march(ivp: IVP, times, method, fp, keep_steps, substeps=1):
    step = make_step(method)
    x = ivp.x0.copy()
    states = [x]
    steps = []
    n_fp = 0
    failure = None
    for t_a, t_b in zip(times[:-1], times[1:]):
        dt = (t_b - t_a) / substeps
        try:
            for _ in range(substeps):
                r = step(ivp.tape, x, dt, fp)
                x = r.x_hat
                n_fp += r.fp_iterations
                if keep_steps:
                    steps.append(r)
        except StepFailure as exc:
            failure = exc
            break
        states.append(x)
    stats = {"steps": len(states) - 1, "rejects": 0, "fp_iterations": n_fp}
    return np.array(states), steps, stats, failure


def integrate_fixed(
    ivp: IVP,
    h: float,
    method: str = "generalized",
    extrapolate: bool = False,
    fp: FPOptions = FPOptions(),
    keep_steps: bool = True,
    extrapolation: str = "local",
) -> Trajectory:
    """Integrate with uniform steps.

    With ``extrapolate`` every grid value is a Richardson combination of a
    step of size ``h`` and two steps of size ``h/2``.  ``extrapolation``
    selects how the combination is used:

    ``"local"``
        both start from the previous extrapolated value, which is propagated.
    ``"passive"``
        both start from the previous fine (two half steps) value, which is
        propagated; the extrapolated values are reported only.
    ``"global"``
        a run with step ``h`` and an independent run with step ``h/2`` are
        combined on the common grid; neither is altered by the combination.

    A step failure stops the integration; the partial trajectory is returned
    with ``failure`` set.
    """
    make_step(method)
    times = time_grid(ivp.t0, ivp.t_end, h)
    if not extrapolate:
        states, steps, stats, failure = _march(ivp, times, method, fp, keep_steps)
        return Trajectory(times[: len(states)], states, steps, stats, failure)

    if extrapolation not in ("local", "passive", "global"):
        raise ValueError(f"unknown extrapolation mode {extrapolation!r}")
    if extrapolation != "global":
        return _integrate_local_extrapolation(ivp, times, method, fp, keep_steps,
                                              propagate_fine=extrapolation == "passive")

    coarse, steps_c, stats_c, fail_c = _march(ivp, times, method, fp, False)
    fine, steps_f, stats_f, fail_f = _march(ivp, times, method, fp, keep_steps, substeps=2)
    n = min(len(coarse), len(fine))
    states = richardson_extrapolate(coarse[:n], fine[:n])
    stats = {k: stats_c[k] + stats_f[k] for k in stats_c}
    traj = Trajectory(times[:n], states, steps_f, stats, fail_c or fail_f)
    traj.coarse = coarse[:n]
    traj.fine = fine[:n]
    return traj


def _integrate_local_extrapolation(ivp, times, method, fp, keep_steps, propagate_fine=False):
    step = make_step(method)
    x = ivp.x0.copy()
    states = [x]
    steps = []
    n_fp = 0
    failure = None
    for t_a, t_b in zip(times[:-1], times[1:]):
        dt = t_b - t_a
        try:
            full = step(ivp.tape, x, dt, fp)
            half1 = step(ivp.tape, x, dt / 2, fp)
            half2 = step(ivp.tape, half1.x_hat, dt / 2, fp)
        except StepFailure as exc:
            failure = exc
            break
        n_fp += full.fp_iterations + half1.fp_iterations + half2.fp_iterations
        if keep_steps:
            steps.extend([half1, half2])
        x_ex = richardson_extrapolate(full.x_hat, half2.x_hat)
        states.append(x_ex)
        x = half2.x_hat if propagate_fine else x_ex
    states = np.array(states)
    stats = {"steps": 3 * (len(states) - 1), "rejects": 0, "fp_iterations": n_fp}
    return Trajectory(times[: len(states)], states, steps, stats, failure)
