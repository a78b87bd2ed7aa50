"""Piecewise-quadratic dense output for accepted steps.

On each subinterval between consecutive kinks the interpolant is the
quadratic that starts at the kink state with the kink slope and ends with the
next kink slope.  With model slopes (the default of
:class:`~pltrap.integrate.FPOptions`) the pieces join continuously and hit
every kink state and the step end exactly.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass

import numpy as np

from .integrate import StepResult

__all__ = ["DenseOutput", "DenseTrajectory", "dense_from_step", "dense_eval", "MERGE_EPS"]

MERGE_EPS = 1e-14


@dataclass(frozen=True, eq=False)
class DenseOutput:
    """Interpolant of one step.

    Attributes
    ----------
    h : float
        Step size.
    tau : ndarray, shape (k + 1,)
        Step fractions of the piece boundaries, from 0 to 1.
    a, b, c : ndarray, shape (k, n)
        Coefficients of ``p_i(t) = a_i t**2 + b_i t + c_i`` where ``t`` is
        local time inside piece ``i``.
    """

    h: float
    tau: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    @property
    def n_pieces(self) -> int:
        return len(self.tau) - 1

    @property
    def lengths(self) -> np.ndarray:
        """Duration ``h (tau[i+1] - tau[i])`` of each piece."""
        return self.h * np.diff(self.tau)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if t.ndim == 0:
            return dense_eval(self, float(t))
        return np.array([dense_eval(self, float(s)) for s in t])


def _merge(params, states, slopes):
    """Drop nodes closer than ``MERGE_EPS`` to the previously kept one."""
    keep = [0]
    for i in range(1, len(params)):
        if params[i] - params[keep[-1]] >= MERGE_EPS:
            keep.append(i)
        elif len(keep) > 1:
            # the later node carries the slope valid to its right
            keep[-1] = i
    if keep[-1] != len(params) - 1:
        keep.append(len(params) - 1)
    return params[keep], states[keep], slopes[keep]


def dense_from_step(step: StepResult) -> DenseOutput:
    """Build the piecewise-quadratic interpolant of ``step``.

    Raises
    ------
    ValueError
        If the step carries no kink data.
    """
    params = getattr(step, "params", None)
    if params is None or step.kink_states is None or step.kink_slopes is None:
        raise ValueError("step has no kink data")
    params = np.asarray(params, dtype=float)
    states = np.asarray(step.kink_states, dtype=float)
    slopes = np.asarray(step.kink_slopes, dtype=float)
    if len(params) < 2 or states.shape[0] != len(params) or slopes.shape[0] != len(params):
        raise ValueError("inconsistent kink data")
    tau, states, slopes = _merge(params, states, slopes)
    lengths = step.h * np.diff(tau)
    a = (slopes[1:] - slopes[:-1]) / (2.0 * lengths[:, None])
    return DenseOutput(float(step.h), tau, a, slopes[:-1].copy(), states[:-1].copy())


def dense_eval(d: DenseOutput, t: float) -> np.ndarray:
    """Evaluate the interpolant at local time ``t`` in ``[0, h]``."""
    if not 0.0 <= t <= d.h:
        raise ValueError(f"t={t!r} lies outside [0, {d.h!r}]")
    starts = d.h * d.tau
    i = min(bisect.bisect_right(starts.tolist(), t) - 1, d.n_pieces - 1)
    s = t - starts[i]
    return (d.a[i] * s + d.b[i]) * s + d.c[i]


class DenseTrajectory:
    """Concatenated dense output of consecutive steps starting at ``t0``."""

    def __init__(self, t0: float, steps):
        self.pieces = [dense_from_step(s) for s in steps]
        if not self.pieces:
            raise ValueError("no steps")
        hs = [p.h for p in self.pieces]
        self.starts = t0 + np.concatenate([[0.0], np.cumsum(hs)])

    @property
    def t_span(self):
        return float(self.starts[0]), float(self.starts[-1])

    def __call__(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        lo, hi = self.t_span
        tol = 1e-12 * max(1.0, abs(hi))
        if np.any(t < lo - tol) or np.any(t > hi + tol):
            raise ValueError(f"times must lie in [{lo}, {hi}]")
        idx = np.clip(np.searchsorted(self.starts, t, side="right") - 1, 0, len(self.pieces) - 1)
        out = np.empty((len(t), self.pieces[0].c.shape[1]))
        for r, (i, s) in enumerate(zip(idx, t)):
            piece = self.pieces[i]
            local = min(max(s - self.starts[i], 0.0), piece.h)
            out[r] = dense_eval(piece, local)
        return out
