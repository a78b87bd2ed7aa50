"""Shared helpers: random tape generators and quadrature oracles."""

import numpy as np
import pytest

from pltrap.adcore import TapeBuilder


def random_tape(rng, n_inputs=2, n_outputs=None, n_ops=12, pl_only=False):
    """Random tape mixing linear operations, ``abs`` and (optionally) smooth ones.

    Smooth operations are applied only to bounded arguments so that every
    tape is defined on all of R^n.
    """
    n_outputs = n_inputs if n_outputs is None else n_outputs
    b = TapeBuilder(n_inputs)
    pool = list(b.inputs)
    kinds = ["add", "sub", "scale", "abs", "abs", "shift"]
    if not pl_only:
        kinds += ["sin", "cos", "mul", "exp", "recip", "sqrt"]
    for _ in range(n_ops):
        kind = kinds[rng.integers(len(kinds))]
        u = pool[rng.integers(len(pool))]
        w = pool[rng.integers(len(pool))]
        c = float(rng.uniform(-1.5, 1.5))
        if kind == "add":
            v = u + w
        elif kind == "sub":
            v = u - w
        elif kind == "scale":
            v = c * u
        elif kind == "shift":
            v = u + c
        elif kind == "abs":
            v = abs(u + c)
        elif kind == "sin":
            v = b.unary("sin", u)
        elif kind == "cos":
            v = b.unary("cos", u)
        elif kind == "mul":
            v = b.unary("sin", u) * w
        elif kind == "exp":
            v = b.unary("exp", b.unary("sin", u))
        elif kind == "recip":
            v = 1.0 / (2.0 + b.unary("sin", u))
        else:
            v = b.unary("sqrt", 1.0 + abs(u))
        pool.append(v)
    # outputs: combinations of the last few nodes so that most ops matter
    outs = []
    for _ in range(n_outputs):
        picks = rng.choice(len(pool), size=min(3, len(pool)), replace=False)
        acc = pool[picks[0]]
        for p in picks[1:]:
            acc = acc + float(rng.uniform(-1, 1)) * pool[p]
        outs.append(acc)
    return b.build(outs)


def chord_quadrature(tape, a, b, panels=1_000_000):
    """Composite midpoint rule for ``int_0^1 F(a + t (b - a)) dt``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    t = (np.arange(panels) + 0.5) / panels
    X = a[:, None] + np.outer(b - a, t)
    return tape.evaluate_batch(X).mean(axis=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def adaptive_trapezoid(f, panels=1_000_000, refine=1000):
    """Trapezoid rule on ``[0, 1]`` for a vector-valued ``f(t) -> (m, len(t))``.

    Panels across which the integrand is not affine (a kink inside or at a
    neighbouring node) are re-integrated with ``refine`` sub-panels, which
    brings the kink error of a piecewise linear integrand down to rounding.
    """
    t = np.linspace(0.0, 1.0, panels + 1)
    y = np.atleast_2d(f(t))
    width = 1.0 / panels
    contrib = 0.5 * width * (y[:, :-1] + y[:, 1:])
    d2 = np.abs(y[:, :-2] - 2 * y[:, 1:-1] + y[:, 2:])
    scale = 1.0 + np.max(np.abs(y))
    bent = np.nonzero(np.any(d2 > 1e-12 * scale, axis=0))[0]
    flagged = np.unique(np.concatenate([bent, bent + 1]))
    for i in flagged:
        s = np.linspace(t[i], t[i + 1], refine + 1)
        ys = np.atleast_2d(f(s))
        contrib[:, i] = np.sum(0.5 * (ys[:, :-1] + ys[:, 1:]), axis=1) * (width / refine)
    return np.sum(contrib, axis=1)
