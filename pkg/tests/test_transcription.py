import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from birkhoff_ocp.birkhoff import build_birkhoff
from birkhoff_ocp.grids import GRID_NAMES, grid_by_name
from birkhoff_ocp.problems import ml1
from birkhoff_ocp.transcription import (
    EvaluatorError,
    FixedTime,
    FreeFinalTime,
    OcpDefinition,
    TranscriptionError,
    affine_domain_map,
    assemble_linear_system,
    evaluate_nlp,
    resample,
    transcribe,
)


def double_integrator(**kw) -> OcpDefinition:
    base = dict(
        nx=2,
        nu=1,
        dynamics=lambda x, u, t, p: np.vstack([x[1], u[0]]),
        time=FixedTime(0.0, 1.0),
        running_cost=lambda x, u, t, p: 0.5 * u[0] ** 2,
    )
    base.update(kw)
    return OcpDefinition(**base)


def fd_jacobian(fun, z, h=1e-7):
    f0 = fun(z)
    J = np.empty((f0.size, z.size))
    for j in range(z.size):
        zp, zm = z.copy(), z.copy()
        zp[j] += h
        zm[j] -= h
        J[:, j] = (fun(zp) - fun(zm)) / (2 * h)
    return J


def test_domain_map_examples():
    m = affine_domain_map(0, 10)
    assert m(0.0) == pytest.approx(5.0)
    assert m(0.5) == pytest.approx(7.5)
    assert m.gamma == pytest.approx(5.0)
    ident = affine_domain_map(-1, 1)
    assert ident.gamma == 1.0
    np.testing.assert_allclose(ident(np.linspace(-1, 1, 5)), np.linspace(-1, 1, 5))
    assert m.inverse(m(0.3)) == pytest.approx(0.3)


def test_domain_map_rejects_empty_interval():
    with pytest.raises(TranscriptionError):
        affine_domain_map(1.0, 1.0)


def test_linear_system_two_point_lobatto():
    A, C = assemble_linear_system(build_birkhoff(grid_by_name("lgl", 1)))
    np.testing.assert_allclose(A, [[1, 0, 0, 0], [0, 1, -1, -1], [0, 0, 1, 1]], atol=1e-15)
    np.testing.assert_allclose(C, [[1, 0], [1, 0], [-1, 1]])


@pytest.mark.parametrize("N", [1, 5, 17])
def test_linear_system_shapes(N):
    A, C = assemble_linear_system(build_birkhoff(grid_by_name("cg", N)))
    assert A.shape == (N + 2, 2 * N + 2)
    expected = np.zeros((N + 2, 2))
    expected[: N + 1, 0] = 1
    expected[N + 1] = (-1, 1)
    np.testing.assert_array_equal(C, expected)


def test_layout_arithmetic_double_integrator():
    nlp = transcribe(double_integrator(), grid_by_name("cgl", 10))
    assert nlp.n == 2 * 11 + 2 * 11 + 11 + 2 + 2 == 59
    assert nlp.A_lin.shape[0] == 2 * 12


def test_free_final_time_in_layout():
    nlp = transcribe(ml1().ocp, grid_by_name("cgl", 8))
    assert nlp.layout.tb is not None
    z = nlp.consistent(nlp.guess_from_boundary(tb=3.0))
    assert nlp.final_time(z) == pytest.approx(3.0)
    np.testing.assert_allclose(nlp.node_times(z), 1.5 * (nlp.tau + 1))


def test_constant_dynamics_solved_by_linear_block():
    c = np.array([0.5, -2.0])
    ocp = OcpDefinition(nx=2, nu=1, dynamics=lambda x, u, t, p: np.repeat(c[:, None], x.shape[1], axis=1),
                        time=FixedTime(0.0, 4.0))
    for name in GRID_NAMES:
        nlp = transcribe(ocp, grid_by_name(name, 7))
        gamma = 2.0
        xa = np.array([1.0, 3.0])
        V = np.repeat((gamma * c)[:, None], nlp.K, axis=1)
        z = nlp.consistent(nlp.layout.pack(np.zeros((2, nlp.K)), V, np.zeros((1, nlp.K)), xa, np.zeros(2)))
        parts = nlp.layout.unpack(z)
        np.testing.assert_allclose(parts["X"], xa[:, None] + gamma * c[:, None] * (nlp.tau + 1), atol=1e-12)
        assert np.max(np.abs(nlp.linear_residual(z))) <= 1e-12
        coll = nlp.constraints(z)[nlp.blocks["collocation"]]
        assert np.max(np.abs(coll)) <= 1e-12


def test_linear_residual_matches_definition():
    nlp = transcribe(double_integrator(), grid_by_name("lgr", 6))
    z = np.random.default_rng(0).normal(size=nlp.n)
    p = nlp.layout.unpack(z)
    Ba, wB = nlp.birkhoff.Ba, nlp.wB
    res = evaluate_nlp(nlp, z).constraints["linear"].reshape(2, -1)
    direct = p["X"] - p["V"] @ Ba.T - p["xa"][:, None]
    np.testing.assert_allclose(res[:, :-1], direct, atol=1e-12)
    np.testing.assert_allclose(res[:, -1], p["V"] @ wB + p["xa"] - p["xb"], atol=1e-12)


def test_unit_running_cost_sums_weights():
    ocp = double_integrator(running_cost=lambda x, u, t, p: np.ones(x.shape[1]), time=FixedTime(-1.0, 1.0),
                            cost_scale=3.0)
    nlp = transcribe(ocp, grid_by_name("cgr", 9))
    assert nlp.objective(nlp.guess_from_boundary()) == pytest.approx(2.0 * 3.0)


def test_polynomial_trajectory_satisfies_linear_block():
    N = 12
    nlp = transcribe(double_integrator(time=FixedTime(-1.0, 1.0)), grid_by_name("lgl", N))
    tau = nlp.tau
    X = np.vstack([tau**N, 0.5 * tau**3])
    V = np.vstack([N * tau ** (N - 1), 1.5 * tau**2])
    z = nlp.layout.pack(X, V, np.zeros((1, N + 1)), np.array([1.0, -0.5]), X[:, -1])
    assert np.max(np.abs(nlp.linear_residual(z))) <= 1e-9


def test_ml1_collocation_jacobian_matches_finite_differences():
    nlp = transcribe(ml1().ocp, grid_by_name("cgl", 10))
    rng = np.random.default_rng(1)
    z = nlp.consistent(nlp.guess_from_boundary(tb=1.5)) + 0.01 * rng.normal(size=nlp.n)
    sl = nlp.blocks["collocation"]
    J = nlp.jacobian(z).toarray()[sl]
    J_fd = fd_jacobian(lambda v: nlp.constraints(v)[sl], z)
    assert np.max(np.abs(J - J_fd)) / np.max(np.abs(J_fd)) < 1e-5


def test_gradient_matches_finite_differences():
    nlp = transcribe(ml1().ocp, grid_by_name("lgr", 6))
    z = nlp.consistent(nlp.guess_from_boundary(tb=1.2))
    g_fd = fd_jacobian(lambda v: np.atleast_1d(nlp.objective(v)), z)[0]
    np.testing.assert_allclose(nlp.gradient(z), g_fd, atol=1e-6)


def test_lagrangian_hessian_is_symmetric():
    nlp = transcribe(ml1().ocp, grid_by_name("cgl", 6))
    z = nlp.consistent(nlp.guess_from_boundary(tb=1.2))
    y = np.linspace(-1, 1, nlp.m)
    H = nlp.lagrangian_hessian(z, y, 1.0).toarray()
    np.testing.assert_allclose(H, H.T, atol=1e-10)


def test_evaluator_failure_is_named():
    ocp = double_integrator(dynamics=lambda x, u, t, p: np.vstack([x[1], np.full_like(u[0], np.nan)]))
    with pytest.raises(EvaluatorError):
        transcribe(ocp, grid_by_name("cgl", 4))


def test_bad_bounds_rejected():
    with pytest.raises(TranscriptionError):
        double_integrator(events=lambda *a: np.zeros(1), events_lower=np.ones(1), events_upper=np.zeros(1))
    with pytest.raises(TranscriptionError):
        FreeFinalTime(0.0, 2.0, 1.0)


def test_evaluate_wrong_length():
    nlp = transcribe(double_integrator(), grid_by_name("cgl", 4))
    with pytest.raises(TranscriptionError):
        evaluate_nlp(nlp, np.zeros(3))


@settings(max_examples=25, deadline=None)
@given(name=st.sampled_from(GRID_NAMES), N=st.integers(2, 30), seed=st.integers(0, 2**16))
def test_consistent_enforces_linear_block(name, N, seed):
    nlp = transcribe(double_integrator(), grid_by_name(name, N))
    z = nlp.consistent(np.random.default_rng(seed).normal(size=nlp.n))
    assert np.max(np.abs(nlp.linear_residual(z))) <= 1e-10


@settings(max_examples=25, deadline=None)
@given(N=st.integers(2, 40))
def test_resample_identity(N):
    tau = grid_by_name("cgl", N).nodes
    vals = np.vstack([np.sin(tau), tau])
    np.testing.assert_allclose(resample(vals, tau, tau), vals)
