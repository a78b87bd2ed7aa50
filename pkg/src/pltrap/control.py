"""Local error estimation and adaptive step-size control.

The estimate of a generalized trapezoidal step has two parts: a curvature
term ``h * gamma * ||x_hat - x_check||**2 / 12`` accounting for the error of
the secant model, and a deviation term ``beta * sum_i int ||q_i(t)|| dt``
measuring how far the piecewise-quadratic dense output strays from the
straight chord.  ``beta`` and ``gamma`` are Lipschitz-type constants of the
right-hand side; :func:`estimate_constants` produces sampled surrogates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .adcore import Tape, evaluate, linearize_secant
from .integrate import (
    IVP,
    FPOptions,
    StepFailure,
    StepResult,
    Trajectory,
    generalized_trap_step,
)
from .output import dense_from_step

__all__ = [
    "LipschitzEstimates",
    "ErrorEstimate",
    "abs_quadratic_integral",
    "sup_norm_integral",
    "estimate_error",
    "estimate_constants",
    "propose_step",
    "integrate_adaptive",
    "StepSizeUnderflow",
]

# sup-norm integrals switch from exact splitting to Simpson above this dimension
_EXACT_MAX_DIM = 32
_SIMPSON_POINTS = 33
_ROUNDING = 64 * np.finfo(float).eps


@dataclass(frozen=True)
class LipschitzEstimates:
    """Constants ``beta`` (Lipschitz) and ``gamma`` (secant-model curvature)."""

    beta: float
    gamma: float
    source: str = "user"

    def __post_init__(self):
        for name in ("beta", "gamma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and nonnegative, got {v!r}")
        if self.source not in ("user", "sampled"):
            raise ValueError(f"unknown source {self.source!r}")


@dataclass(frozen=True)
class ErrorEstimate:
    total: float
    term_curvature: float
    term_deviation: float


def _quad_roots(a: float, b: float, c: float) -> list:
    """Real roots of ``a t**2 + b t + c`` (empty if identically zero)."""
    if a == 0.0:
        if b == 0.0:
            return []
        return [-c / b]
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return []
    q = -0.5 * (b + math.copysign(math.sqrt(disc), b))
    roots = [q / a]
    if q != 0.0:
        roots.append(c / q)
    return roots


def _signed_integral(a, b, c, t0, t1):
    # Simpson's rule is exact for quadratics
    tm = 0.5 * (t0 + t1)
    f = lambda t: (a * t + b) * t + c
    return (t1 - t0) * (f(t0) + 4.0 * f(tm) + f(t1)) / 6.0


def abs_quadratic_integral(a: float, b: float, c: float, L: float) -> float:
    """Exact ``int_0^L |a t**2 + b t + c| dt``.

    The interval is split at the real roots of the quadratic, so the sign is
    fixed on each piece and the integral of the polynomial is exact.

    Examples
    --------
    >>> abs_quadratic_integral(1.0, 0.0, -0.25, 1.0)
    0.25
    """
    if L < 0:
        raise ValueError("L must be nonnegative")
    if L == 0:
        return 0.0
    cuts = sorted(r for r in _quad_roots(a, b, c) if 0.0 < r < L)
    knots = [0.0, *cuts, L]
    return float(sum(abs(_signed_integral(a, b, c, t0, t1)) for t0, t1 in zip(knots[:-1], knots[1:])))


def sup_norm_integral(A, B, C, L: float) -> float:
    """``int_0^L max_k |A_k t**2 + B_k t + C_k| dt`` for a vector quadratic.

    For dimension up to 32 the interval is split at every root of each
    component and of every pairwise sum and difference, so that one
    component dominates with a fixed sign on each piece.  Larger systems use
    composite Simpson quadrature with 33 nodes.
    """
    A, B, C = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (A, B, C))
    if L <= 0:
        return 0.0
    n = A.size
    if n > _EXACT_MAX_DIM:
        t = np.linspace(0.0, L, _SIMPSON_POINTS)
        vals = np.max(np.abs(np.outer(t * t, A) + np.outer(t, B) + C), axis=1)
        w = np.ones(_SIMPSON_POINTS)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        return float(L / (3 * (_SIMPSON_POINTS - 1)) * np.dot(w, vals))
    cuts = set()
    for k in range(n):
        cuts.update(_quad_roots(A[k], B[k], C[k]))
        for m in range(k + 1, n):
            cuts.update(_quad_roots(A[k] - A[m], B[k] - B[m], C[k] - C[m]))
            cuts.update(_quad_roots(A[k] + A[m], B[k] + B[m], C[k] + C[m]))
    knots = [0.0, *sorted(r for r in cuts if 0.0 < r < L), L]
    total = 0.0
    for t0, t1 in zip(knots[:-1], knots[1:]):
        if t1 <= t0:
            continue
        tm = 0.5 * (t0 + t1)
        vals = (A * tm + B) * tm + C
        k = int(np.argmax(np.abs(vals)))
        total += abs(_signed_integral(A[k], B[k], C[k], t0, t1))
    return total


def estimate_error(step: StepResult, consts: LipschitzEstimates) -> ErrorEstimate:
    """Two-term local error estimate of a generalized step.

    Raises
    ------
    ValueError
        If the step carries no dense-output data.
    """
    dense = dense_from_step(step)
    h = step.h
    delta = np.asarray(step.x_hat) - np.asarray(step.x_check)
    norm = float(np.max(np.abs(delta))) if delta.size else 0.0
    curvature = h * consts.gamma * norm * norm / 12.0
    chord_slope = delta / h
    integral = 0.0
    for i, L in enumerate(dense.lengths):
        integral += sup_norm_integral(
            dense.a[i],
            dense.b[i] - chord_slope,
            dense.c[i] - step.x_check - dense.tau[i] * delta,
            float(L),
        )
    deviation = consts.beta * integral
    return ErrorEstimate(float(curvature + deviation), float(curvature), float(deviation))


def estimate_constants(tape: Tape, center, radius: float, samples: int = 64,
                       seed: int = 0, safety: float = 2.0) -> LipschitzEstimates:
    """Sampled surrogates for ``beta`` and ``gamma`` on a box.

    ``beta`` is the largest difference quotient ``||F(u) - F(w)|| / ||u - w||``
    over all pairs of ``samples`` uniform points in the infinity-norm ball;
    ``gamma`` is the largest ``2 ||F(u) - S(u)|| / (||u - w|| ||u - v||)`` over
    random triples, where ``S`` is the secant model anchored at ``w`` and
    ``v``.  Both are multiplied by ``safety``.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    if samples < 2:
        raise ValueError("need at least two samples")
    center = np.asarray(center, dtype=float).reshape(-1)
    rng = np.random.default_rng(seed)
    X = center + radius * rng.uniform(-1.0, 1.0, size=(samples, center.size))
    F = tape.evaluate_batch(X.T).T
    dX = np.max(np.abs(X[:, None, :] - X[None, :, :]), axis=2)
    dF = np.max(np.abs(F[:, None, :] - F[None, :, :]), axis=2)
    mask = dX > 0
    if not np.any(mask):
        raise ValueError("degenerate sampling: all points coincide")
    beta = float(np.max(dF[mask] / dX[mask]))

    gamma = 0.0
    if not tape.is_smooth or any(op not in (0, 1, 2, 3, 5) for op, *_ in tape.nodes):
        n_triples = 4 * samples
        idx = rng.integers(0, samples, size=(n_triples, 3))
        for iu, iw, iv in idx:
            if iw == iv:
                continue
            u, w, v = X[iu], X[iw], X[iv]
            duw = np.max(np.abs(u - w))
            duv = np.max(np.abs(u - v))
            if duw == 0 or duv == 0:
                continue
            model = linearize_secant(tape, w, v)
            gap = np.max(np.abs(F[iu] - model(u)))
            # discrepancies at rounding level carry no curvature information
            gap = max(0.0, gap - _ROUNDING * (1.0 + np.max(np.abs(F[iu]))))
            gamma = max(gamma, 2.0 * float(gap) / float(duw * duv))
    return LipschitzEstimates(safety * beta, safety * gamma, "sampled")


def propose_step(est: ErrorEstimate, tol: float, h: float, fac_min: float = 0.2,
                 fac_max: float = 5.0, safety: float = 0.9):
    """Accept/reject decision and next step size of an order-3 controller.

    Returns
    -------
    accept : bool
    h_new : float
    """
    if not tol > 0 or not h > 0:
        raise ValueError("tol and h must be positive")
    total = est.total
    if total <= 0:
        factor = fac_max
    else:
        factor = safety * (tol / total) ** (1.0 / 3.0)
    factor = min(fac_max, max(fac_min, factor))
    return total <= tol, h * factor


class StepSizeUnderflow(StepFailure):
    """The adaptive controller asked for a step below ``h_min``."""


def integrate_adaptive(
    ivp: IVP,
    tol: float,
    consts: LipschitzEstimates | None = None,
    fp: FPOptions = FPOptions(),
    h0: float | None = None,
    h_min: float | None = None,
    max_steps: int = 1_000_000,
    fac_min: float = 0.2,
    fac_max: float = 5.0,
    safety: float = 0.9,
    seed: int = 0,
) -> Trajectory:
    """Adaptive generalized trapezoidal integration.

    Every step is checked with :func:`estimate_error`; rejected steps are
    retried with the proposed smaller size.  A fixed-point failure counts as
    a rejection and halves the step.  If the step size falls below ``h_min``
    (default ``1e-12 (t_end - t0)``) the run stops and ``failure`` is set.

    When ``consts`` is omitted they are sampled on the unit ball around
    ``x0`` with :func:`estimate_constants`.

    The returned trajectory has ``estimates`` (one :class:`ErrorEstimate`
    per accepted step) and ``stats`` with counts of steps, rejections,
    fixed-point failures and underflows.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    span = ivp.t_end - ivp.t0
    if consts is None:
        consts = estimate_constants(ivp.tape, ivp.x0, 1.0, seed=seed)
    if h_min is None:
        h_min = 1e-12 * span
    h = span / 100.0 if h0 is None else float(h0)
    t, x = ivp.t0, ivp.x0.copy()
    times, states, steps, estimates = [t], [x], [], []
    stats = {"steps": 0, "rejects": 0, "fp_failures": 0, "fp_iterations": 0, "underflows": 0}
    failure = None
    while t < ivp.t_end:
        if stats["steps"] >= max_steps:
            failure = StepFailure(f"step limit {max_steps} reached at t={t!r}")
            break
        last = t + h >= ivp.t_end * (1 - 1e-15) - 1e-300 if ivp.t_end > 0 else t + h >= ivp.t_end
        h_try = ivp.t_end - t if last else h
        if h_try < h_min:
            stats["underflows"] += 1
            failure = StepSizeUnderflow(f"step size {h_try:.3e} below h_min={h_min:.3e} at t={t!r}")
            break
        try:
            step = generalized_trap_step(ivp.tape, x, h_try, fp)
        except StepFailure:
            stats["fp_failures"] += 1
            stats["rejects"] += 1
            h = 0.5 * h_try
            continue
        stats["fp_iterations"] += step.fp_iterations
        est = estimate_error(step, consts)
        accept, h_new = propose_step(est, tol, h_try, fac_min, fac_max, safety)
        if not accept:
            stats["rejects"] += 1
            h = h_new
            continue
        t = ivp.t_end if last else t + h_try
        x = step.x_hat
        times.append(t)
        states.append(x)
        steps.append(step)
        estimates.append(est)
        stats["steps"] += 1
        h = h_new
    traj = Trajectory(np.array(times), np.array(states), steps, stats, failure)
    traj.estimates = estimates
    return traj
