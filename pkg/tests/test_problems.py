import math

import numpy as np
import pytest

from pltrap.integrate import FPOptions
from pltrap.problems import (
    ROLLING_STONE_PERIOD,
    abslinear,
    convergence_study,
    diode_circuit,
    diode_g,
    energy_study,
    energy_variation,
    fitted_order,
    get_problem,
    kink_step_study,
    reference_solution,
    rolling_stone,
    rolling_stone_potential,
)


def central_difference_check(prob, times, eps=1e-5, tol=1e-8):
    for t in times:
        dx = (prob.solution(t + eps) - prob.solution(t - eps)) / (2 * eps)
        np.testing.assert_allclose(dx, prob.tape(prob.solution(t)), atol=tol)


def test_rolling_stone_values():
    prob = rolling_stone()
    np.testing.assert_allclose(prob.solution(math.pi / 2)[0], 2.0, atol=1e-15)
    assert prob.solution(math.pi + 1)[0] == pytest.approx(0.0, abs=1e-15)
    assert prob.energy(prob.x0) == 0.5
    assert rolling_stone_potential(0.5) == 0.0
    assert rolling_stone_potential(-3.0) == 2.0


def test_rolling_stone_solution_satisfies_ode():
    prob = rolling_stone()
    rng = np.random.default_rng(0)
    ts = rng.uniform(0, 3 * ROLLING_STONE_PERIOD, 200)
    # keep away from the kinks where the second derivative jumps
    kinks = np.array([0, math.pi, math.pi + 2, 2 * math.pi + 2, ROLLING_STONE_PERIOD])
    phase = np.mod(ts, ROLLING_STONE_PERIOD)
    ts = ts[np.min(np.abs(phase[:, None] - kinks[None]), axis=1) > 1e-3]
    central_difference_check(prob, ts)


def test_rolling_stone_periodic_and_energy_constant():
    prob = rolling_stone()
    ts = np.linspace(0, 20, 101)
    np.testing.assert_allclose(prob.solution(ts + ROLLING_STONE_PERIOD), prob.solution(ts), atol=1e-12)
    assert energy_variation(prob.energy(prob.solution(ts)), 0.5) < 1e-13


def test_diode_problem():
    prob = diode_circuit()
    assert prob.tape.n_abs == 1 and prob.reference == "fine_step"
    assert diode_g(2e-13) == pytest.approx(1e-13)
    assert diode_g(-1e-5) == pytest.approx(-1.0)
    assert prob.t_end == pytest.approx(3 * 2 * math.pi)


def test_diode_scaled_and_physical_agree():
    s, p = diode_circuit(True), diode_circuit(False)
    units = s.meta["units"]
    rng = np.random.default_rng(1)
    for y in rng.normal(size=(5, 3)):
        x = y * np.array([units["time"], units["charge"], units["current"]])
        fy = s.tape(y) * np.array([units["time"], units["charge"], units["current"]]) / units["time"]
        np.testing.assert_allclose(p.tape(x), fy, rtol=1e-10)


def test_abslinear():
    prob = abslinear()
    assert prob.meta == {"a": 2.25, "b": -1.25}
    assert prob.solution(0.0)[0] == 0.0
    central_difference_check(prob, [-0.7, -0.2, 0.3, 0.9])
    with pytest.raises(ValueError):
        abslinear(1.0, 1.0)


def test_get_problem():
    assert get_problem("rolling_stone").name == "rolling_stone"
    with pytest.raises(ValueError):
        get_problem("pendulum")


def test_fitted_order():
    h = 2.0 ** -np.arange(5)
    assert fitted_order(h, 3 * h**2) == pytest.approx(2.0)


def test_convergence_study_rejects_non_geometric():
    with pytest.raises(ValueError):
        convergence_study(rolling_stone(), "generalized", False, [0.1, 0.07])


def test_convergence_rolling_stone_generalized():
    hs = ROLLING_STONE_PERIOD / 2.0 ** np.arange(4, 9)
    rows = convergence_study(rolling_stone(), "generalized", False, hs)
    assert 1.8 <= rows[0][2] <= 2.2
    assert [r[0] for r in rows] == pytest.approx(list(hs))


def test_reference_solution_event_restart_matches_analytic():
    prob = rolling_stone()
    ts = np.linspace(0, ROLLING_STONE_PERIOD, 50)
    numeric = reference_solution(type(prob)(**{**prob.__dict__, "reference": "fine_step"}), ts)
    np.testing.assert_allclose(numeric, prob.solution(ts), atol=1e-10)


def test_kink_step_study_classical_coefficients():
    rows = kink_step_study(theta=0.5)
    cla = [r for r in rows if r[0] == "classical"]
    assert cla[-1][3] == pytest.approx(9 / 16, rel=0.01)
    rows = kink_step_study()
    cla = [r[3] for r in rows if r[0] == "classical"]
    assert cla[-1] == pytest.approx(27 / 64, rel=0.02)
    # normalized errors converge monotonically
    assert np.all(np.diff(cla) < 0)
    with pytest.raises(ValueError):
        kink_step_study(theta=1.0)


def test_energy_study_analytic_trajectory_metric_zero():
    prob = rolling_stone()
    ts = np.linspace(0, 10, 100)
    assert energy_variation(prob.energy(prob.solution(ts)), prob.energy(prob.x0)) < 1e-13


def test_energy_study_generalized_vs_classical():
    prob = rolling_stone()
    gen, _, dev = energy_study(prob, "generalized", 0.1, 2)
    cla, _, _ = energy_study(prob, "classical", 0.1, 2)
    assert gen <= 1e-8 and cla >= 1e3 * gen
    assert len(dev) == math.ceil(2 * ROLLING_STONE_PERIOD / 0.1)
    with pytest.raises(ValueError):
        energy_study(diode_circuit())
