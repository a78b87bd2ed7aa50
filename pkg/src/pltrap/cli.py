"""Command-line front end.

Subcommands
-----------
integrate  fixed-step or adaptive trajectory, CSV ``t,x1..xn``
converge   global error against a reference for halving step sizes, ``h,error,order``
kinkstep   single-step errors across the kink of ``x' = a|x| + bx + 1``,
           ``method,h,error,err_h2,err_h3``
energy     energy drift of a fixed-step run, ``step,t,energy,deviation``
estimate   per-step error-estimator terms of generalized steps

Exit status is 0 on success, 2 for invalid configuration and 3 for numerical
failure; failures also print a one-line JSON record to stderr.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import os
import platform
import sys
from dataclasses import asdict, dataclass

import numpy as np

from . import __version__
from .control import estimate_constants, estimate_error, integrate_adaptive
from .integrate import METHODS, FPOptions, StepFailure, integrate_fixed
from .parser import ExpressionError, parse_program
from .plseg import KinkOverflowError
from .problems import (
    PROBLEMS,
    ROLLING_STONE_PERIOD,
    Problem,
    convergence_study,
    energy_study,
    get_problem,
    kink_step_study,
)

__all__ = ["RunConfig", "ConfigError", "run", "main", "build_parser"]

COMMANDS = ("integrate", "converge", "kinkstep", "energy", "estimate")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(ValueError):
    """Invalid combination of options."""


@dataclass
class RunConfig:
    command: str
    problem: str | None = None
    expr: str | None = None
    method: str = "generalized"
    h: float | None = None
    h0: float | None = None
    levels: int | None = None
    t_end: float | None = None
    tol: float | None = None
    extrapolate: bool = False
    adaptive: bool = False
    theta: float = 0.25
    a: float = 2.25
    b: float = -1.25
    periods: float | None = None
    fp_atol: float | None = None
    fp_rtol: float | None = None
    out: str | None = None
    format: str = "csv"
    seed: int = 0

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"unknown format {self.format!r}")
        if self.problem is not None and self.expr is not None:
            raise ConfigError("give either --problem or --expr, not both")
        if self.problem is not None and self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}; choose from {sorted(PROBLEMS)}")
        for name in ("h", "h0", "tol", "t_end", "periods", "fp_atol", "fp_rtol"):
            v = getattr(self, name)
            if v is not None and not (math.isfinite(v) and v > 0):
                raise ConfigError(f"--{name.replace('_', '-')} must be positive")
        if self.levels is not None and self.levels < 2:
            raise ConfigError("--levels must be at least 2")
        if not 0 < self.theta < 1:
            raise ConfigError("--theta must lie in (0, 1)")
        if self.command in ("integrate", "estimate"):
            if self.adaptive:
                if self.tol is None or self.h is not None:
                    raise ConfigError("adaptive runs take --tol and no --h")
                if self.extrapolate:
                    raise ConfigError("--extrapolate applies to fixed-step runs only")
            elif self.h is None or self.tol is not None:
                raise ConfigError("fixed-step runs take --h and no --tol (use --adaptive with --tol)")
        if self.command == "estimate" and self.method != "generalized":
            raise ConfigError("the error estimator applies to the generalized method only")
        return self

    def fp_options(self, default: FPOptions = FPOptions()) -> FPOptions:
        return FPOptions(
            atol=default.atol if self.fp_atol is None else self.fp_atol,
            rtol=default.rtol if self.fp_rtol is None else self.fp_rtol,
        )


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--problem", choices=sorted(PROBLEMS))
    common.add_argument("--expr", metavar="FILE", help="expression file defining the right-hand side")
    common.add_argument("--method", choices=METHODS, default="generalized")
    common.add_argument("--h", type=float)
    common.add_argument("--h0", type=float)
    common.add_argument("--levels", type=int)
    common.add_argument("--t-end", type=float)
    common.add_argument("--tol", type=float)
    common.add_argument("--extrapolate", action="store_true")
    common.add_argument("--adaptive", action="store_true")
    common.add_argument("--theta", type=float, default=0.25)
    common.add_argument("--a", type=float, default=2.25)
    common.add_argument("--b", type=float, default=-1.25)
    common.add_argument("--periods", type=float)
    common.add_argument("--fp-atol", type=float)
    common.add_argument("--fp-rtol", type=float)
    common.add_argument("--out", metavar="FILE")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--seed", type=int, default=0)
    parser = argparse.ArgumentParser(prog="pltrap", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


# ---------------------------------------------------------------- problems


def _load_problem(cfg: RunConfig) -> Problem:
    if cfg.expr is not None:
        try:
            with open(cfg.expr, encoding="utf-8") as fh:
                source = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read expression file: {exc}") from None
        prog = parse_program(source)
        return Problem("expr", prog.tape, prog.x0, 1.0, reference="fine_step",
                       meta={"names": list(prog.names)})
    name = cfg.problem or "rolling_stone"
    if name == "abslinear":
        return get_problem(name, a=cfg.a, b=cfg.b)
    return get_problem(name)


def _period(prob: Problem) -> float:
    return prob.meta.get("period", ROLLING_STONE_PERIOD)


def _horizon(cfg: RunConfig, prob: Problem) -> float:
    if cfg.t_end is not None:
        return cfg.t_end
    if cfg.periods is not None:
        return prob.t0 + cfg.periods * _period(prob)
    return prob.t_end


def _default_h0(prob: Problem, t_span: float) -> float:
    if prob.name == "diode":
        return _period(prob) / 256
    if prob.name == "rolling_stone":
        return ROLLING_STONE_PERIOD / 16
    return t_span / 16


# ---------------------------------------------------------------- commands


def _cmd_integrate(cfg, prob):
    ivp = prob.ivp(t_end=_horizon(cfg, prob))
    fp = cfg.fp_options()
    if cfg.adaptive:
        traj = integrate_adaptive(ivp, cfg.tol, fp=fp, seed=cfg.seed)
    else:
        traj = integrate_fixed(ivp, cfg.h, cfg.method, cfg.extrapolate, fp, keep_steps=False)
    n = ivp.x0.size
    columns = ["t"] + [f"x{i + 1}" for i in range(n)]
    rows = [[t, *x] for t, x in zip(traj.times.tolist(), traj.states.tolist())]
    return columns, rows, {"stats": traj.stats}, traj.failure


def _cmd_converge(cfg, prob):
    t_end = _horizon(cfg, prob)
    h0 = cfg.h0 if cfg.h0 is not None else _default_h0(prob, t_end - prob.t0)
    levels = cfg.levels if cfg.levels is not None else 6
    h_list = h0 * 2.0 ** -np.arange(levels)
    table = convergence_study(prob, cfg.method, cfg.extrapolate, h_list, cfg.fp_options(), t_end=t_end)
    rows = [list(r) for r in table]
    return ["h", "error", "order"], rows, {"order": table[0][2]}, None


def _cmd_kinkstep(cfg, prob):
    h0 = cfg.h0 if cfg.h0 is not None else 2.0 ** -4
    levels = cfg.levels if cfg.levels is not None else 7
    h_list = h0 * 2.0 ** -np.arange(levels)
    fp = cfg.fp_options(FPOptions(atol=1e-15, rtol=1e-15))
    table = kink_step_study(cfg.a, cfg.b, cfg.theta, h_list, fp)
    return ["method", "h", "error", "err_h2", "err_h3"], [list(r) for r in table], {}, None


def _cmd_energy(cfg, prob):
    h = cfg.h if cfg.h is not None else 0.1
    periods = cfg.periods if cfg.periods is not None else 10.0
    fp = cfg.fp_options(FPOptions(atol=1e-13, rtol=1e-13))
    metric, traj, dev = energy_study(prob, cfg.method, h, periods, fp, cfg.extrapolate)
    e0 = float(prob.energy(prob.x0))
    rows = [[i + 1, t, d + e0, d] for i, (t, d) in enumerate(zip(traj.times[1:].tolist(), dev.tolist()))]
    return ["step", "t", "energy", "deviation"], rows, {"metric": metric}, None


def _cmd_estimate(cfg, prob):
    ivp = prob.ivp(t_end=_horizon(cfg, prob))
    fp = cfg.fp_options()
    consts = estimate_constants(ivp.tape, ivp.x0, 1.0, seed=cfg.seed)
    if cfg.adaptive:
        traj = integrate_adaptive(ivp, cfg.tol, consts, fp)
        estimates = traj.estimates
    else:
        traj = integrate_fixed(ivp, cfg.h, "generalized", False, fp, keep_steps=True)
        estimates = [estimate_error(s, consts) for s in traj.steps]
    rows = [
        [i + 1, t, s.h, s.n_kinks, e.total, e.term_curvature, e.term_deviation]
        for i, (t, s, e) in enumerate(zip(traj.times[1:].tolist(), traj.steps, estimates))
    ]
    meta = {"stats": traj.stats, "beta": consts.beta, "gamma": consts.gamma, "constants": consts.source}
    columns = ["step", "t", "h", "kinks", "total", "term_curvature", "term_deviation"]
    return columns, rows, meta, traj.failure


_COMMANDS = {
    "integrate": _cmd_integrate,
    "converge": _cmd_converge,
    "kinkstep": _cmd_kinkstep,
    "energy": _cmd_energy,
    "estimate": _cmd_estimate,
}


# ---------------------------------------------------------------- output


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    return v


def render(cfg: RunConfig, columns, rows, meta) -> str:
    """Serialize a result table as CSV or JSON text."""
    if cfg.format == "csv":
        buf = io.StringIO()
        buf.write(",".join(columns) + "\n")
        for r in rows:
            buf.write(",".join(_fmt(v) for v in r) + "\n")
        if "metric" in meta:
            buf.write(f"# metric,{_fmt(meta['metric'])}\n")
        return buf.getvalue()
    doc = {
        "metadata": {
            "command": cfg.command,
            "config": asdict(cfg),
            "versions": {
                "pltrap": __version__,
                "numpy": np.__version__,
                "python": platform.python_version(),
            },
            **meta,
        },
        "columns": list(columns),
        "rows": [[v if isinstance(v, str) else v for v in r] for r in rows],
    }
    return json.dumps(_jsonable(doc), indent=1, sort_keys=False) + "\n"


def _error_record(kind: str, exc: BaseException) -> str:
    return json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)})


def run(cfg: RunConfig, stdout=None) -> int:
    """Execute ``cfg`` and write its output; returns the exit status."""
    stdout = sys.stdout if stdout is None else stdout
    try:
        cfg.validate()
        prob = _load_problem(cfg)
        columns, rows, meta, failure = _COMMANDS[cfg.command](cfg, prob)
    except (ConfigError, ExpressionError) as exc:
        print(_error_record("config", exc), file=sys.stderr)
        return EXIT_CONFIG
    except (StepFailure, KinkOverflowError, FloatingPointError, ArithmeticError) as exc:
        print(_error_record("numerical", exc), file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(_error_record("config", exc), file=sys.stderr)
        return EXIT_CONFIG
    text = render(cfg, columns, rows, meta)
    if cfg.out is None:
        stdout.write(text)
    else:
        with open(cfg.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    if failure is not None:
        print(_error_record("numerical", failure), file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = RunConfig(**vars(args))
    try:
        return run(cfg)
    except BrokenPipeError:
        # reader went away (e.g. ``| head``); silence the flush at exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
