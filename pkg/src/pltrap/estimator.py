"""Estimator-style wrapper: ``fit`` integrates, ``predict`` samples the result.

>>> est = PLTrapIntegrator("rolling_stone", h=0.1, t_end=1.0).fit([1.0, 1.0])
>>> est.predict([0.5]).shape
(1, 2)
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .adcore import Tape
from .control import integrate_adaptive
from .integrate import IVP, METHODS, FPOptions, integrate_fixed
from .output import DenseTrajectory
from .parser import parse_expression
from .problems import PROBLEMS, get_problem

__all__ = ["PLTrapIntegrator", "check_state", "check_times"]


def check_state(x, n: int | None = None) -> np.ndarray:
    """Validate an initial state given as a vector or a single-row matrix."""
    arr = check_array(np.atleast_2d(np.asarray(x, dtype=float)), ensure_2d=True)
    if arr.shape[0] != 1:
        raise ValueError(f"expected one initial state, got {arr.shape[0]} rows")
    arr = arr[0]
    if n is not None and arr.size != n:
        raise ValueError(f"state has {arr.size} entries, the right-hand side expects {n}")
    return arr


def check_times(t) -> np.ndarray:
    """Validate query times: a finite 1-d array."""
    return check_array(np.atleast_1d(np.asarray(t, dtype=float)), ensure_2d=False).reshape(-1)


def _resolve_rhs(rhs) -> Tape:
    if isinstance(rhs, Tape):
        return rhs
    if isinstance(rhs, str):
        if rhs in PROBLEMS:
            return get_problem(rhs).tape
        return parse_expression(rhs)
    raise TypeError("rhs must be a Tape, a problem name or an expression string")


class PLTrapIntegrator(BaseEstimator):
    """Integrate ``x' = F(x)`` from an initial state.

    Parameters
    ----------
    rhs : Tape or str
        The right-hand side: a tape, a built-in problem name or an
        expression program.
    method : {"generalized", "classical", "midpoint"}
    h : float, optional
        Fixed step size.  Exactly one of ``h`` and ``tol`` must be set.
    tol : float, optional
        Local error tolerance for adaptive stepping (generalized method).
    t_end, t0 : float
        Integration interval.
    fp_atol, fp_rtol : float
        Fixed-point tolerances.
    seed : int
        Seed for sampling the estimator constants in adaptive mode.

    Attributes
    ----------
    trajectory_ : Trajectory
    times_, states_ : ndarray
    dense_ : DenseTrajectory
    """

    def __init__(self, rhs="rolling_stone", method="generalized", h=None, tol=None,
                 t_end=1.0, t0=0.0, fp_atol=1e-12, fp_rtol=1e-12, seed=0):
        self.rhs = rhs
        self.method = method
        self.h = h
        self.tol = tol
        self.t_end = t_end
        self.t0 = t0
        self.fp_atol = fp_atol
        self.fp_rtol = fp_rtol
        self.seed = seed

    def fit(self, X, y=None):
        """Integrate from the initial state ``X``; ``y`` is ignored."""
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if (self.h is None) == (self.tol is None):
            raise ValueError("set exactly one of h (fixed step) and tol (adaptive)")
        tape = _resolve_rhs(self.rhs)
        x0 = check_state(X, tape.n_inputs)
        ivp = IVP(tape, x0, float(self.t0), float(self.t_end))
        fp = FPOptions(atol=self.fp_atol, rtol=self.fp_rtol)
        if self.tol is not None:
            if self.method != "generalized":
                raise ValueError("adaptive stepping uses the generalized method")
            traj = integrate_adaptive(ivp, self.tol, fp=fp, seed=self.seed)
        else:
            traj = integrate_fixed(ivp, self.h, self.method, False, fp, keep_steps=True)
        if traj.failure is not None:
            raise traj.failure
        self.trajectory_ = traj
        self.times_ = traj.times
        self.states_ = traj.states
        self.dense_ = DenseTrajectory(float(self.t0), traj.steps)
        self.n_features_in_ = tape.n_inputs
        return self

    def predict(self, X):
        """States at the times ``X`` from the piecewise-quadratic dense output."""
        check_is_fitted(self, "dense_")
        return self.dense_(check_times(X))
