import numpy as np
import pytest

from pltrap.adcore import Op, linearize_secant
from pltrap.parser import ExpressionError, parse_expression, parse_program
from pltrap.problems import diode_circuit, rolling_stone

from conftest import random_tape


def outputs_agree(t1, t2, n, draws=100, tol=1e-14, seed=0):
    rng = np.random.default_rng(seed)
    for x in rng.normal(scale=2, size=(draws, n)):
        y1, y2 = t1(x), t2(x)
        assert np.max(np.abs(y1 - y2)) <= tol * (1 + np.max(np.abs(y1)))


def test_rolling_stone_expression():
    tape = parse_expression("x2 ; -x1 - abs(x1-1)/2 + abs(x1+1)/2")
    assert tape.n_abs == 2
    outputs_agree(tape, rolling_stone().tape, 2)


def test_abs_and_max():
    tape = parse_expression("abs(x)")
    assert tape.n_abs == 1 and tape([-2.0])[0] == 2.0
    mx = parse_expression("max(x,0)")
    assert mx([-1.0])[0] == 0.0 and mx([2.0])[0] == 2.0
    mn = parse_expression("min(x1, 2*x1)")
    assert mn([3.0])[0] == 3.0 and mn([-3.0])[0] == -6.0


def test_precedence():
    t = parse_expression("-x1*2 + 3/x1 - -x1", variables=["x1"])
    x = 1.7
    assert t([x])[0] == pytest.approx(-x * 2 + 3 / x + x, rel=1e-15)


def test_functions():
    t = parse_expression("sin(x1) + cos(x1) * tan(x1) - exp(x1) + log(x1) + sqrt(x1)", variables=["x1"])
    x = 0.8
    ref = np.sin(x) + np.cos(x) * np.tan(x) - np.exp(x) + np.log(x) + np.sqrt(x)
    assert t([x])[0] == pytest.approx(ref, rel=1e-14)


def test_file_format_with_directives_and_comments():
    src = """
    # rolling stone in named variables
    vars: q, p
    x0: 1, 1
    p                                   # dq/dt
    -q - abs(q - 1)/2 + abs(q + 1)/2    # dp/dt
    """
    prog = parse_program(src)
    assert prog.names == ("q", "p")
    np.testing.assert_array_equal(prog.x0, [1.0, 1.0])
    outputs_agree(prog.tape, rolling_stone().tape, 2)


def test_deterministic_node_order():
    src = "x2 * sin(x1) ; abs(x1 - x2)"
    a, b = parse_expression(src), parse_expression(src)
    assert a.nodes == b.nodes
    ops = [op for op, *_ in a.nodes]
    assert ops.index(Op.SIN) < ops.index(Op.ABS)


@pytest.mark.parametrize(
    "src, line, col, fragment",
    [
        ("x1 +", 1, 5, "syntax"),
        ("x1\nx2 + (x1", 2, None, "syntax"),
        ("x1 + y", 1, 6, "unknown identifier"),
        ("erf(x1)", 1, 1, "unknown function"),
        ("sin(x1, x1)", 1, 1, "expects 1"),
        ("max(x1)", 1, 1, "expects 2"),
        ("x1 ** 2", 1, 1, "unsupported operator"),
        ("x1 = 2", 1, 1, "expected an expression"),
        ("'a'", 1, 1, "unsupported literal"),
    ],
)
def test_errors(src, line, col, fragment):
    with pytest.raises(ExpressionError) as exc:
        parse_expression(src, variables=["x1"] if "x2" not in src else None)
    assert fragment in str(exc.value)
    assert exc.value.line == line
    if col is not None:
        assert exc.value.column == col


def test_variable_count_mismatch():
    with pytest.raises(ExpressionError):
        parse_program("vars: a, b\na")
    with pytest.raises(ExpressionError):
        parse_program("x0: 1, 2\nx")
    with pytest.raises(ExpressionError):
        parse_program("# nothing\n")


def test_round_trip_random_tapes():
    rng = np.random.default_rng(5)
    for k in range(30):
        tape = random_tape(rng, 3)
        back = parse_expression(tape.to_source())
        outputs_agree(tape, back, 3, seed=k)


def test_round_trip_diode():
    tape = diode_circuit().tape
    outputs_agree(tape, parse_expression(tape.to_source()), 3)


def test_parsed_tape_linearizes():
    tape = parse_expression("x2 ; -x1 - abs(x1-1)/2 + abs(x1+1)/2")
    m = linearize_secant(tape, [0.5, 0.0], [1.5, 0.2])
    np.testing.assert_allclose(m([1.5, 0.2]), tape([1.5, 0.2]), atol=1e-15)
