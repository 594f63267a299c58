import numpy as np
import pytest

from birkhoff_ocp.problems import (
    BREAKWELL_DIRAC,
    PROBLEMS,
    breakwell,
    breakwell_analytic,
    get_problem,
    lq_analytic,
    lq_oracle,
    ml1,
    ml1_shooting_oracle,
    orbit_transfer,
    phased_terminal_arc,
)
from birkhoff_ocp.solver import SolverOptions
from birkhoff_ocp.vnv import interpolate_control, propagate_ivp


def test_ml1_data():
    ocp = ml1().ocp
    e = ocp.events(np.array([1.0, -0.783, 1.0]), np.zeros(3), 0.0, 1.0, None)
    np.testing.assert_allclose(ocp.events_lower[:3], [1.0, -0.783, 1.0])
    np.testing.assert_allclose(e[:3], ocp.events_lower[:3])
    assert ocp.path_upper[0] == 1.227
    assert ocp.path_lower[0] == 0.0
    assert ocp.free_final_time


def test_ml1_oracle_single_switch_lands():
    orc = ml1_shooting_oracle()
    assert 0 < orc["t_switch"] < orc["t_final"]
    t = np.array([0.0, orc["t_switch"], orc["t_switch"] + 1e-9, orc["t_final"]])
    u = np.array([0.0, 0.0, 1.227, 1.227])
    bp = ml1()
    prop = propagate_ivp(bp.ocp, interpolate_control(t, u), [1.0, -0.783, 1.0], (0.0, orc["t_final"]))
    assert prop.terminal_error_inf < 1e-6


def test_breakwell_analytic_cost_by_propagation():
    bp = breakwell()
    t = np.linspace(0.0, 1.0, 4001)
    a = breakwell_analytic(t)
    assert a["cost"] == pytest.approx(4 / 0.9)
    assert 0.5 * np.trapezoid(a["u"] ** 2, t) == pytest.approx(a["cost"], rel=1e-5)
    prop = propagate_ivp(bp.ocp, interpolate_control(t, a["u"]), [0.0, 1.0], (0.0, 1.0))
    assert prop.terminal_error_inf < 1e-5
    assert prop.path_violation_inf < 1e-5
    assert bp.ocp.path_upper[0] == 0.1
    assert BREAKWELL_DIRAC == 22.22


def test_lq_analytic_consistency():
    t = np.linspace(0, 1, 101)
    a = lq_analytic(t)
    np.testing.assert_allclose(np.gradient(a["x"], t, edge_order=2), a["v"], atol=1e-3)
    np.testing.assert_allclose(a["u"], -a["lambda_v"])
    assert a["cost"] == 6.0
    np.testing.assert_allclose(a["lambda_x"], -12.0)


def test_orbit_transfer_data():
    bp = orbit_transfer()
    ocp = bp.ocp
    f = ocp.dynamics(np.array([[1.0], [0.0], [0.0], [1.0]]), np.array([[np.pi / 2]]), np.zeros(1), np.zeros((0, 1)))
    assert f[2, 0] == pytest.approx(5e-4)
    np.testing.assert_allclose(ocp.events_lower[-3:], [6.0, 0.0, np.sqrt(1 / 6)])
    assert ocp.cost_scale == 0.01
    assert bp.N == 600 and bp.grid == "cgl"


def test_phased_terminal_arc_meets_target():
    arc = phased_terminal_arc()
    assert arc["miss"] < 1e-8
    assert arc["t_switch"] < arc["t_final"]
    r, _, vr, vt = arc["tail"](arc["t_final"])
    assert r == pytest.approx(6.0, abs=1e-6)
    assert vt == pytest.approx(np.sqrt(1 / 6), abs=1e-6)


def test_registry():
    assert set(PROBLEMS) == {"ml1", "breakwell", "orbit-xfer", "lq"}
    assert get_problem("lq").name == "lq"
    with pytest.raises(KeyError, match="unknown problem"):
        get_problem("nope")


def test_solver_overrides_apply():
    bp = orbit_transfer()
    assert bp.solver_options().initial_penalty == 1e3
    assert bp.solver_options(SolverOptions(max_outer_iters=7)).max_outer_iters == 7
    assert lq_oracle().solver_options() == SolverOptions()


def test_checks_report_residual_and_verdict(lq_solved):
    checks = lq_oracle().run_checks(lq_solved.solution)
    assert set(checks) == {"objective_error", "lambda_x_error", "lambda_v_endpoint_error", "control_error"}
    assert all(ok for _, ok in checks.values())
