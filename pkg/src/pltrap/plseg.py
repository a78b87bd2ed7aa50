"""Kink marching along a line segment and exact integration of a PL model.

Along ``dx(tau) = p + tau * (q - p)`` every intermediate increment of a
:class:`~pltrap.adcore.PLModel` is piecewise affine in ``tau``.  Inside a
region of constant signature all switching values are affine, so the next
kink is the smallest positive root of a handful of linear equations and no
bisection is needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adcore import PLModel

__all__ = [
    "SegmentDecomposition",
    "KinkOverflowError",
    "decompose_segment",
    "integrate_segment",
    "ADVANCE_EPS",
]

ADVANCE_EPS = 1e-14
# a switching value this small relative to its scale counts as sitting on its kink
_ON_KINK = 1e-12


class KinkOverflowError(RuntimeError):
    """More breakpoints than ``max_kinks`` were found on one segment."""


@dataclass(frozen=True, eq=False)
class SegmentDecomposition:
    """Breakpoints of a PL model along a segment.

    ``params`` runs from 0 to 1; ``signatures[i]`` is the signature on
    ``(params[i], params[i+1])``; ``values[i]`` is the model output and
    ``kink_points[i]`` the input-space point at ``params[i]``.
    """

    params: np.ndarray
    signatures: list
    values: np.ndarray
    kink_points: np.ndarray

    @property
    def n_kinks(self) -> int:
        return len(self.params) - 2

    def partial_integrals(self) -> np.ndarray:
        """Integral of the model from 0 up to each ``params[i]``."""
        dtau = np.diff(self.params)[:, None]
        pieces = 0.5 * (self.values[:-1] + self.values[1:]) * dtau
        out = np.zeros_like(self.values)
        np.cumsum(pieces, axis=0, out=out[1:])
        return out

    def integral(self) -> np.ndarray:
        return self.partial_integrals()[-1]


def _sweep(model: PLModel, p, d, tau: float):
    """Propagate value and tau-derivative of every increment at ``tau``.

    Abs nodes take the sign of their argument, or the sign of its derivative
    when the argument sits on the kink, so the returned slopes belong to the
    region just past ``tau``.
    """
    vm = model.v_mid
    s = model.slope
    val = []
    der = []
    z_list = []
    dz_list = []
    on_kink = []
    sig = []
    for i, (op, j, k, c) in enumerate(model.tape.nodes):
        if op == 4:
            a, b = vm[j], vm[k]
            val.append(a * val[k] + val[j] * b)
            der.append(a * der[k] + der[j] * b)
        elif op == 2:
            val.append(val[j] + val[k])
            der.append(der[j] + der[k])
        elif op == 3:
            val.append(val[j] - val[k])
            der.append(der[j] - der[k])
        elif op == 13:
            z = vm[j] + val[j]
            dz = der[j]
            if abs(z) > _ON_KINK * (abs(vm[j]) + abs(val[j]) + abs(dz)):
                sigma = 1 if z > 0 else -1
                kinked = False
            else:
                sigma = 1 if dz > 0 else (-1 if dz < 0 else 0)
                kinked = True
            val.append(abs(z) - vm[i])
            der.append(sigma * dz)
            z_list.append(z)
            dz_list.append(dz)
            on_kink.append(kinked)
            sig.append(sigma)
        elif op == 1:
            val.append(0.0)
            der.append(0.0)
        elif op == 0:
            ci = int(c)
            val.append(p[ci] + tau * d[ci])
            der.append(d[ci])
        else:
            val.append(s[i] * val[j])
            der.append(s[i] * der[j])
    outs = model.tape.output_indices
    return [val[o] for o in outs], z_list, dz_list, on_kink, tuple(sig)


def _march(model: PLModel, p: list, d: list, max_kinks: int, sweep=None):
    """Breakpoints, increment values and signatures along ``p + tau d``."""
    if sweep is None:
        sweep = model.tape.sweep
    vm, sl = model.v_mid, model.slope
    params = [0.0]
    values = []
    signatures = []
    tau = 0.0
    while True:
        out, z, dz, on_kink, sig = sweep(vm, sl, p, d, tau)
        values.append(out)
        signatures.append(sig)
        nxt = 1.0
        for zs, dzs, kinked in zip(z, dz, on_kink):
            if kinked or zs * dzs >= 0.0:
                continue
            root = tau - zs / dzs
            if tau + ADVANCE_EPS < root < nxt:
                nxt = root
        if nxt >= 1.0:
            break
        if len(params) > max_kinks:
            raise KinkOverflowError(f"more than {max_kinks} kinks on one segment")
        params.append(nxt)
        tau = nxt
    values.append(sweep(vm, sl, p, d, 1.0)[0])
    params.append(1.0)
    return params, values, signatures


def _interpreted_sweep(model: PLModel):
    return lambda vm, sl, p, d, tau: _sweep(model, p, d, tau)


def _check_segment(model, p, q):
    p = np.asarray(p, dtype=float)
    d = np.asarray(q, dtype=float) - p
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(d))):
        raise FloatingPointError("nonfinite segment endpoints")
    return p, d


def decompose_segment(model: PLModel, p, q, max_kinks: int | None = None,
                      compiled: bool = True) -> SegmentDecomposition:
    """Split the increment segment ``p -> q`` at every kink of ``model``.

    Parameters
    ----------
    model : PLModel
    p, q : array_like
        Segment endpoints as increments relative to ``model.x_mid``.
    max_kinks : int, optional
        Defaults to ``10 * n_abs + 64``.
    compiled : bool
        Use the tape's generated kernel (default) or the node interpreter.

    Returns
    -------
    SegmentDecomposition
    """
    p, d = _check_segment(model, p, q)
    if max_kinks is None:
        max_kinks = 10 * model.tape.n_abs + 64
    sweep = None if compiled else _interpreted_sweep(model)
    params, values, signatures = _march(model, p.tolist(), d.tolist(), max_kinks, sweep)
    params = np.array(params)
    values = model.f_ref + np.array(values)
    if not np.all(np.isfinite(values)):
        raise FloatingPointError("nonfinite model values along segment")
    kink_points = model.x_mid + p + params[:, None] * d
    return SegmentDecomposition(params, signatures, values, kink_points)


def segment_integral(model: PLModel, p, d, max_kinks: int | None = None) -> list:
    """Fast path of :func:`integrate_segment` on plain float lists.

    ``p`` is the start increment and ``d`` the segment direction.
    """
    if max_kinks is None:
        max_kinks = 10 * model.tape.n_abs + 64
    params, values, _ = _march(model, p, d, max_kinks)
    m = len(values[0])
    acc = [0.0] * m
    for a in range(len(params) - 1):
        w = 0.5 * (params[a + 1] - params[a])
        va, vb = values[a], values[a + 1]
        for c in range(m):
            acc[c] += w * (va[c] + vb[c])
    f_ref = model.f_ref
    return [f_ref[c] + acc[c] for c in range(m)]


def integrate_segment(model: PLModel, p, q) -> np.ndarray:
    """Exact ``int_0^1 model(x_mid + p + tau (q - p)) dtau``."""
    return decompose_segment(model, p, q).integral()
