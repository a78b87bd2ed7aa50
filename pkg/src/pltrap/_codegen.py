"""Translate a tape into straight-line Python functions.

The interpreters in :mod:`pltrap.adcore` and :mod:`pltrap.plseg` are the
reference; the generated kernels compute the same quantities without
per-node dispatch and are used on the hot paths of the integrators.
"""

from __future__ import annotations

import math

_UNARY_SRC = {
    5: "-{a}",
    6: "1.0 / {a}",
    7: "_sin({a})",
    8: "_cos({a})",
    9: "_tan({a})",
    10: "_exp({a})",
    11: "_log({a})",
    12: "_sqrt({a})",
}

_NAMESPACE = {
    "_sin": math.sin,
    "_cos": math.cos,
    "_tan": math.tan,
    "_exp": math.exp,
    "_log": math.log,
    "_sqrt": math.sqrt,
}

# keep in sync with plseg._ON_KINK
ON_KINK = 1e-12


def _compile(src: str, name: str):
    ns = dict(_NAMESPACE)
    ns["_K"] = ON_KINK
    exec(compile(src, f"<tape {name}>", "exec"), ns)
    return ns[name]


def forward_source(tape) -> str:
    lines = ["def forward(x):"]
    for i, (op, j, k, c) in enumerate(tape.nodes):
        if op == 0:
            rhs = f"float(x[{int(c)}])"
        elif op == 1:
            rhs = repr(float(c))
        elif op == 2:
            rhs = f"v{j} + v{k}"
        elif op == 3:
            rhs = f"v{j} - v{k}"
        elif op == 4:
            rhs = f"v{j} * v{k}"
        elif op == 13:
            rhs = f"abs(v{j})"
        else:
            rhs = _UNARY_SRC[op].format(a=f"v{j}")
        lines.append(f"    v{i} = {rhs}")
    lines.append("    return [" + ", ".join(f"v{i}" for i in range(len(tape.nodes))) + "]")
    return "\n".join(lines) + "\n"


def compile_forward(tape):
    return _compile(forward_source(tape), "forward")


def sweep_source(tape) -> str:
    """Value and tau-derivative of every increment along ``p + tau d``."""
    nodes = tape.nodes
    need_mid = set()
    need_slope = set()
    for i, (op, j, k, c) in enumerate(nodes):
        if op == 4:
            need_mid.update((j, k))
        elif op == 13:
            need_mid.update((i, j))
        elif op >= 5:
            need_slope.add(i)
    lines = ["def sweep(vm, sl, p, d, tau):"]
    for i in sorted(need_mid):
        lines.append(f"    m{i} = vm[{i}]")
    for i in sorted(need_slope):
        lines.append(f"    s{i} = sl[{i}]")
    zs, dzs, ks, sg = [], [], [], []
    for i, (op, j, k, c) in enumerate(nodes):
        if op == 0:
            ci = int(c)
            lines.append(f"    g{i} = d[{ci}]")
            lines.append(f"    v{i} = p[{ci}] + tau * g{i}")
        elif op == 1:
            lines.append(f"    v{i} = 0.0")
            lines.append(f"    g{i} = 0.0")
        elif op == 2:
            lines.append(f"    v{i} = v{j} + v{k}")
            lines.append(f"    g{i} = g{j} + g{k}")
        elif op == 3:
            lines.append(f"    v{i} = v{j} - v{k}")
            lines.append(f"    g{i} = g{j} - g{k}")
        elif op == 4:
            lines.append(f"    v{i} = m{j} * v{k} + v{j} * m{k}")
            lines.append(f"    g{i} = m{j} * g{k} + g{j} * m{k}")
        elif op == 13:
            a = len(zs)
            lines += [
                f"    z{a} = m{j} + v{j}",
                f"    dz{a} = g{j}",
                f"    if abs(z{a}) > _K * (abs(m{j}) + abs(v{j}) + abs(dz{a})):",
                f"        s_{a} = 1 if z{a} > 0 else -1",
                f"        k{a} = False",
                "    else:",
                f"        s_{a} = 1 if dz{a} > 0 else (-1 if dz{a} < 0 else 0)",
                f"        k{a} = True",
                f"    v{i} = abs(z{a}) - m{i}",
                f"    g{i} = s_{a} * dz{a}",
            ]
            zs.append(f"z{a}")
            dzs.append(f"dz{a}")
            ks.append(f"k{a}")
            sg.append(f"s_{a}")
        else:
            lines.append(f"    v{i} = s{i} * v{j}")
            lines.append(f"    g{i} = s{i} * g{j}")
    outs = ", ".join(f"v{o}" for o in tape.output_indices)
    sig = "(" + "".join(f"{s}, " for s in sg) + ")"
    lines.append(
        f"    return [{outs}], [{', '.join(zs)}], [{', '.join(dzs)}], [{', '.join(ks)}], {sig}"
    )
    return "\n".join(lines) + "\n"


def compile_sweep(tape):
    return _compile(sweep_source(tape), "sweep")
