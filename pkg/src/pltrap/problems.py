"""Benchmark problems and the experiments run on them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .adcore import Tape, record_tape
from .integrate import (
    IVP,
    FPOptions,
    StepFailure,
    integrate_fixed,
    make_step,
    richardson_extrapolate,
)

__all__ = [
    "Problem",
    "rolling_stone",
    "rolling_stone_potential",
    "diode_circuit",
    "diode_g",
    "abslinear",
    "abslinear_branch",
    "get_problem",
    "PROBLEMS",
    "ROLLING_STONE_PERIOD",
    "convergence_study",
    "fitted_order",
    "kink_step_study",
    "energy_study",
    "energy_variation",
    "reference_solution",
]

ROLLING_STONE_PERIOD = 2 * math.pi + 4

# circuit constants
DIODE_L = 1e-6
DIODE_C = 1e-13
DIODE_OMEGA = 3e9
DIODE_ALPHA = 2.0
DIODE_BETA = 1e-5


@dataclass(frozen=True, eq=False)
class Problem:
    """A benchmark IVP with optional closed-form solution and energy."""

    name: str
    tape: Tape
    x0: np.ndarray
    t_end: float
    solution: Callable | None = None
    energy: Callable | None = None
    reference: str = "analytic"
    t0: float = 0.0
    meta: dict = field(default_factory=dict)

    def ivp(self, t_end: float | None = None, x0=None, t0: float | None = None) -> IVP:
        return IVP(
            self.tape,
            self.x0 if x0 is None else x0,
            self.t0 if t0 is None else t0,
            self.t_end if t_end is None else t_end,
        )


def rolling_stone_potential(x):
    """Flat-bottomed parabola: zero on [-1, 1], ``(|x| - 1)**2 / 2`` outside."""
    x = np.asarray(x, dtype=float)
    return 0.5 * np.maximum(np.abs(x) - 1.0, 0.0) ** 2


def _rolling_stone_solution(t):
    t = np.asarray(t, dtype=float)
    s = np.mod(t, ROLLING_STONE_PERIOD)
    pi = math.pi
    x1 = np.select(
        [s <= pi, s < pi + 2, s < 2 * pi + 2],
        [1 + np.sin(s), 1 - (s - pi), -1 - np.sin(2 - s)],
        s - 3 - 2 * pi,
    )
    x2 = np.select(
        [s <= pi, s < pi + 2, s < 2 * pi + 2],
        [np.cos(s), -np.ones_like(s), np.cos(2 - s)],
        np.ones_like(s),
    )
    return np.stack([x1, x2], axis=-1)


def _rolling_stone_energy(x):
    x = np.asarray(x, dtype=float)
    return rolling_stone_potential(x[..., 0]) + 0.5 * x[..., 1] ** 2


def rolling_stone() -> Problem:
    """Frictionless point mass on a parabola with a flat section on ``[-1, 1]``."""
    tape = record_tape(
        lambda x: [x[1], -x[0] - abs(x[0] - 1) / 2 + abs(x[0] + 1) / 2], 2
    )
    return Problem(
        "rolling_stone",
        tape,
        np.array([1.0, 1.0]),
        ROLLING_STONE_PERIOD,
        solution=_rolling_stone_solution,
        energy=_rolling_stone_energy,
    )


def diode_g(z, alpha: float = DIODE_ALPHA, beta: float = DIODE_BETA):
    """Piecewise linear diode law: ``z/alpha`` for ``z >= 0``, ``z/beta`` below."""
    az = abs(z)
    return (z + az) / (2 * alpha) + (z - az) / (2 * beta)


def diode_circuit(scaled: bool = True, periods: float = 3.0) -> Problem:
    """LC circuit with a diode in place of the resistor.

    States are (time, charge, current).  With ``scaled`` the system is written
    in units where the forcing frequency is 1, the charge unit is ``C`` volts
    and the current unit is ``C * omega``; the dynamics are identical but all
    states are of order one, so absolute tolerances are meaningful.  The
    unscaled form uses SI units.
    """
    L, C, w, a, b = DIODE_L, DIODE_C, DIODE_OMEGA, DIODE_ALPHA, DIODE_BETA
    if scaled:
        k = 1.0 / (L * C * w * w)
        cw = C * w

        def program(x, tb):
            g = cw * diode_g(x[2], a, b)
            return [tb.constant(1.0), x[2], -(x[1] - tb.unary("sin", x[0]) + g) * k]

        period = 2 * math.pi
        units = {"time": 1.0 / w, "charge": C, "current": C * w}
    else:

        def program(x, tb):
            g = diode_g(C * x[2], a, b)
            v = tb.unary("sin", w * x[0])
            return [tb.constant(1.0), x[2], -(x[1] - C * v + g) * (1.0 / (L * C))]

        period = 2 * math.pi / w
        units = {"time": 1.0, "charge": 1.0, "current": 1.0}
    return Problem(
        "diode",
        record_tape(program, 3),
        np.zeros(3),
        periods * period,
        reference="fine_step",
        meta={"scaled": scaled, "period": period, "units": units},
    )


def abslinear_branch(a: float, b: float, region: int):
    """Solution of ``x' = a|x| + b x + 1`` through 0 at t = 0 inside one region.

    ``region=+1`` is the half line ``x > 0`` where the slope is ``b + a``;
    ``region=-1`` is ``x < 0`` with slope ``b - a``.
    """
    lam = b + a if region > 0 else b - a
    if lam == 0:
        raise ValueError("b - a and b + a must be nonzero")
    return lambda t: np.expm1(np.asarray(t, dtype=float) * lam) / lam


def abslinear(a: float = 2.25, b: float = -1.25) -> Problem:
    """Scalar ``x' = a|x| + b x + 1`` with its closed-form solution through 0 at t = 0.

    Since ``x'(0) = 1 > 0`` the solution is negative for ``t < 0`` and
    positive for ``t > 0``; the two branches are glued at the kink.
    """
    if b - a == 0 or b + a == 0:
        raise ValueError("b - a and b + a must be nonzero")
    x_pos = abslinear_branch(a, b, +1)
    x_neg = abslinear_branch(a, b, -1)

    def solution(t):
        t = np.asarray(t, dtype=float)
        return np.where(t >= 0, x_pos(np.maximum(t, 0.0)), x_neg(np.minimum(t, 0.0)))[..., None]

    tape = record_tape(lambda x: [a * abs(x[0]) + b * x[0] + 1.0], 1)
    return Problem(
        "abslinear", tape, np.zeros(1), 1.0, solution=solution,
        meta={"a": a, "b": b},
    )


PROBLEMS = {
    "rolling_stone": rolling_stone,
    "diode": diode_circuit,
    "abslinear": abslinear,
}


def get_problem(name: str, **kwargs) -> Problem:
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
    return factory(**kwargs)


def fitted_order(h, err) -> float:
    """Least-squares slope of ``log2(err)`` against ``log2(h)``."""
    return float(np.polyfit(np.log2(h), np.log2(err), 1)[0])


def reference_solution(problem: Problem, times, rtol: float = 1e-13, atol: float = 1e-15):
    """Reference states at ``times``.

    Uses the closed form when available.  Otherwise the IVP is solved with an
    eighth-order Runge-Kutta method that is restarted at every kink (sign change
    of a switching variable) so that each piece is smooth.
    """
    times = np.asarray(times, dtype=float)
    if problem.solution is not None and problem.reference == "analytic":
        return problem.solution(times)
    return _event_restarted_solution(problem, times, rtol, atol)


def _event_restarted_solution(problem, times, rtol, atol):
    from scipy.integrate import solve_ivp

    tape = problem.tape
    abs_args = [tape.nodes[i][1] for i in tape.abs_nodes]

    def switching(x):
        from .adcore import _forward

        v = _forward(tape, x)
        return [v[j] for j in abs_args]

    def rhs(t, x):
        return tape(x)

    events = []
    for s in range(len(abs_args)):
        ev = lambda t, x, s=s: switching(x)[s]
        ev.terminal = True
        events.append(ev)

    t_cur, x_cur = float(problem.t0), np.array(problem.x0, dtype=float)
    t_end = float(times[-1])
    out = np.empty((len(times), len(x_cur)))
    filled = 0
    while t_cur < t_end and filled < len(times):
        sol = solve_ivp(
            rhs, (t_cur, t_end), x_cur, method="DOP853", rtol=rtol, atol=atol,
            events=events, dense_output=True,
        )
        t_stop = sol.t[-1]
        while filled < len(times) and times[filled] <= t_stop:
            out[filled] = sol.sol(times[filled])
            filled += 1
        if sol.status != 1:
            break
        # step a hair past the kink so the event does not fire again at once
        nudge = 1e-12 * max(1.0, abs(t_stop))
        x_cur = sol.sol(t_stop)
        t_cur = t_stop
        sol2 = solve_ivp(rhs, (t_cur, min(t_cur + nudge, t_end)), x_cur, method="DOP853",
                         rtol=rtol, atol=atol)
        t_cur, x_cur = sol2.t[-1], sol2.y[:, -1]
    while filled < len(times):
        out[filled] = x_cur
        filled += 1
    return out


def convergence_study(
    problem: Problem,
    method: str,
    extrapolate: bool,
    h_list,
    fp: FPOptions = FPOptions(),
    t_end: float | None = None,
    reference=None,
):
    """Global error and fitted order for each step size.

    Returns a list of ``(h, error, order)`` rows; ``order`` is the fitted
    slope over all rows, repeated on each row.  ``error`` is the maximum
    infinity-norm deviation over the integration grid.
    """
    h_list = np.asarray(h_list, dtype=float)
    ratios = h_list[:-1] / h_list[1:]
    if len(h_list) < 2 or not np.allclose(ratios, 2.0):
        raise ValueError("h_list must be geometric with ratio 2")
    ivp = problem.ivp(t_end=t_end)
    if reference is None and not (problem.solution is not None and problem.reference == "analytic"):
        reference = _nested_reference(problem, ivp, h_list)
    errors = []
    for h in h_list:
        traj = integrate_fixed(ivp, h, method, extrapolate, fp, keep_steps=False)
        if traj.failure is not None:
            raise traj.failure
        if reference is None:
            ref = reference_solution(problem, traj.times)
        else:
            ref = reference(traj.times)
        errors.append(float(np.max(np.abs(traj.states - ref))))
    order = fitted_order(h_list, errors)
    return [(float(h), e, order) for h, e in zip(h_list, errors)]


def _nested_reference(problem, ivp, h_list):
    """Reference on the finest grid, reused for every coarser grid.

    Halving a step size is exact in floating point, so coarse grid times
    appear verbatim in the finest grid; other times fall back to a fresh
    reference solve.
    """
    from .integrate import time_grid

    fine_times = time_grid(ivp.t0, ivp.t_end, float(np.min(h_list)))
    fine_ref = reference_solution(problem, fine_times)

    def lookup(times):
        idx = np.searchsorted(fine_times, times)
        idx = np.minimum(idx, len(fine_times) - 1)
        if np.array_equal(fine_times[idx], times):
            return fine_ref[idx]
        return reference_solution(problem, times)

    return lookup


def kink_step_study(a: float = 2.25, b: float = -1.25, theta: float = 0.25, h_list=None,
                    fp: FPOptions = FPOptions(atol=1e-15, rtol=1e-15)):
    """Single-step local errors across the kink of ``x' = a|x| + bx + 1``.

    The step starts at the exact state a fraction ``theta`` of the step
    before the kink crossing.  Returns rows
    ``(method, h, error, error/h**2, error/h**3)`` for the classical and
    generalized rules and their Richardson-extrapolated variants.
    """
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    if h_list is None:
        h_list = 2.0 ** -np.arange(4, 11)
    prob = abslinear(a, b)
    rows = []
    for name in ("classical", "generalized"):
        step = make_step(name)
        for h in h_list:
            x0 = prob.solution(-theta * h)
            exact = prob.solution((1 - theta) * h)
            try:
                full = step(prob.tape, x0, h, fp).x_hat
                half = step(prob.tape, step(prob.tape, x0, h / 2, fp).x_hat, h / 2, fp).x_hat
            except StepFailure as exc:
                raise StepFailure(f"{name} step with h={h} failed: {exc}") from exc
            if not (x0[0] < 0 <= exact[0]):
                raise ValueError(f"step of size {h} does not cross the kink")
            for label, x in ((name, full), (name + "+richardson", richardson_extrapolate(full, half))):
                err = float(np.max(np.abs(x - exact)))
                rows.append((label, float(h), err, err / h**2, err / h**3))
    order = ["classical", "classical+richardson", "generalized", "generalized+richardson"]
    rows.sort(key=lambda r: (order.index(r[0]), -r[1]))
    return rows


def energy_variation(energies, e0: float) -> float:
    """Root-sum-square deviation of the energy from its initial value."""
    dev = np.asarray(energies, dtype=float) - e0
    return float(math.sqrt(np.sum(dev * dev)))


def energy_study(problem: Problem, method: str = "generalized", h: float = 0.1,
                 n_periods: float = 10, fp: FPOptions = FPOptions(atol=1e-13, rtol=1e-13),
                 extrapolate: bool = False):
    """Energy drift of a fixed-step run.

    Returns ``(metric, trajectory, deviations)`` where ``deviations[i]`` is
    ``H(x_i) - H(x_0)`` for every step ``i >= 1``.
    """
    if problem.energy is None:
        raise ValueError(f"problem {problem.name!r} has no energy functional")
    period = problem.meta.get("period", ROLLING_STONE_PERIOD)
    ivp = problem.ivp(t_end=problem.t0 + n_periods * period)
    traj = integrate_fixed(ivp, h, method, extrapolate, fp, keep_steps=False)
    if traj.failure is not None:
        raise traj.failure
    e0 = float(problem.energy(problem.x0))
    dev = problem.energy(traj.states[1:]) - e0
    return energy_variation(dev + e0, e0), traj, dev
