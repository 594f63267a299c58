"""Benchmark problem presets and their checkable analytic conditions.

Each preset bundles an :class:`OcpDefinition`, a recommended grid, a
warm-start ladder and a set of named checks.  A check maps a
:class:`~birkhoff_ocp.vnv.TrajectorySolution` to a nonnegative residual and
passes when the residual is at most its tolerance.  Checks see costates
unscaled (divided by ``cost_scale``).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq, least_squares

from .solver import SolverOptions
from .transcription import FixedTime, FreeFinalTime, OcpDefinition
from .vnv import TrajectorySolution

# ML1 constants
ML1_EXHAUST = 2.349
ML1_TMAX = 1.227
ML1_X0 = (1.0, -0.783, 1.0)

# Breakwell constants
BREAKWELL_ELL = 0.1
BREAKWELL_DIRAC = 22.22

# orbit transfer constants
XFER_ACCEL = 5e-4
XFER_X0 = (1.0, 0.0, 0.0, 1.0)
XFER_RF = 6.0
XFER_COST_SCALE = 0.01


@dataclass(frozen=True)
class NamedCheck:
    name: str
    fn: Callable[[TrajectorySolution], float]
    tol: float
    description: str = ""

    def __call__(self, sol: TrajectorySolution) -> tuple[float, bool]:
        r = float(self.fn(sol))
        return r, bool(r <= self.tol)


@dataclass(frozen=True)
class BenchmarkProblem:
    name: str
    ocp: OcpDefinition
    grid: str = "cgl"
    N: int = 80
    ladder: tuple = (20, 80)
    checks: tuple = ()
    guess: Optional[Callable] = field(default=None, repr=False)
    tol_bc: float = 1e-3
    tol_path: float = 1e-3
    solver_overrides: dict = field(default_factory=dict)

    def solver_options(self, base: Optional[SolverOptions] = None) -> SolverOptions:
        """``base`` (default options when omitted) with this preset's overrides applied."""
        return replace(base or SolverOptions(), **self.solver_overrides)

    def run_checks(self, sol: TrajectorySolution) -> dict[str, tuple[float, bool]]:
        return {c.name: c(sol) for c in self.checks}

    def shape_checks(self) -> dict[str, Callable]:
        return {c.name: c.fn for c in self.checks}


def _lam(sol: TrajectorySolution) -> np.ndarray:
    if not sol.has_duals:
        raise ValueError("check needs costate samples")
    return sol.lam / sol.cost_scale


def _mu(sol: TrajectorySolution) -> np.ndarray:
    return sol.mu / sol.cost_scale


def _affine_fit_deviation(t, y) -> float:
    A = np.vstack([t, np.ones_like(t)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(np.max(np.abs(A @ coef - y)))


# ---------------------------------------------------------------------------
# ML1: one-dimensional moon landing


def _ml1_dynamics(x, u, t, p):
    T = u[0]
    return np.vstack([x[1], -1.0 + T / x[2], -T / ML1_EXHAUST])


def _ml1_jac(x, u, t, p):
    K = x.shape[1]
    T, m = u[0], x[2]
    fx = np.zeros((3, 3, K))
    fx[0, 1] = 1.0
    fx[1, 2] = -T / m**2
    fu = np.zeros((3, 1, K))
    fu[1, 0] = 1.0 / m
    fu[2, 0] = -1.0 / ML1_EXHAUST
    return fx, fu


@lru_cache(maxsize=1)
def ml1_shooting_oracle() -> dict:
    """Switch time, final time and cost of the free-fall / full-thrust landing.

    Free fall from the initial state until ``t_s``, then maximum thrust until
    the velocity reaches zero; ``t_s`` is chosen so that the altitude is zero
    at that instant.
    """
    x0 = np.array(ML1_X0)

    def burn(ts):
        h = x0[0] + x0[1] * ts - 0.5 * ts**2
        v = x0[1] - ts

        def rhs(t, x):
            return [x[1], -1 + ML1_TMAX / x[2], -ML1_TMAX / ML1_EXHAUST]

        stop = lambda t, x: x[1]  # noqa: E731
        stop.terminal, stop.direction = True, 1
        sol = solve_ivp(rhs, (0, 10), [h, v, 1.0], events=stop, rtol=1e-12, atol=1e-13)
        return sol.t_events[0][0], sol.y_events[0][0]

    ts = brentq(lambda s: burn(s)[1][0], 0.0, 0.9, xtol=1e-14)
    dt, xf = burn(ts)
    tf = ts + dt
    return {"t_switch": ts, "t_final": tf, "cost": ML1_TMAX * dt / ML1_EXHAUST, "x_final": xf}


def _ml1_bang_count(sol: TrajectorySolution) -> float:
    T = sol.U[0]
    d = np.minimum(np.abs(T), np.abs(T - ML1_TMAX))
    return float(np.sum(d > 1e-3))


def _ml1_overshoot(sol: TrajectorySolution) -> float:
    T = sol.U[0]
    return float(max(np.max(-T), np.max(T - ML1_TMAX), 0.0))


def _ml1_switches(sol: TrajectorySolution) -> float:
    on = sol.U[0] > 0.5 * ML1_TMAX
    return float(abs(np.sum(np.diff(on.astype(int)) != 0) - 1))


def _ml1_mu_sign(sol: TrajectorySolution) -> float:
    T, mu = sol.U[0], _mu(sol)[0]
    res = 0.0
    at_max = np.abs(T - ML1_TMAX) <= 1e-3
    at_zero = np.abs(T) <= 1e-3
    if np.any(at_max):
        res = max(res, float(np.max(-mu[at_max])))
    if np.any(at_zero):
        res = max(res, float(np.max(mu[at_zero])))
    return max(res, 0.0)


def _ml1_lambda_h(sol: TrajectorySolution) -> float:
    lh = _lam(sol)[0]
    return float(np.max(np.abs(lh - lh.mean())) / max(abs(lh.mean()), 1e-300))


def _ml1_lambda_v(sol: TrajectorySolution) -> float:
    lv = _lam(sol)[1]
    span = float(np.ptp(lv))
    return _affine_fit_deviation(sol.t, lv) / max(span, 1e-300)


def _ml1_lambda_m_final(sol: TrajectorySolution) -> float:
    return float(abs(_lam(sol)[2, -1]))


def ml1() -> BenchmarkProblem:
    """One-degree-of-freedom moon landing with bounded thrust and free final time."""
    x0 = np.array(ML1_X0)
    ocp = OcpDefinition(
        nx=3,
        nu=1,
        dynamics=_ml1_dynamics,
        dynamics_jac=_ml1_jac,
        time=FreeFinalTime(0.0, 0.1, 10.0, 1.5),
        running_cost=lambda x, u, t, p: u[0] / ML1_EXHAUST,
        events=lambda xa, xb, ta, tb, p: np.array([xa[0], xa[1], xa[2], xb[0], xb[1]]),
        events_lower=np.r_[x0, 0.0, 0.0],
        events_upper=np.r_[x0, 0.0, 0.0],
        path=lambda x, u, t, p: u[:1],
        path_lower=np.array([0.0]),
        path_upper=np.array([ML1_TMAX]),
        boundary_guess=(x0, np.array([0.0, 0.0, 0.7])),
        control_guess=np.array([0.5 * ML1_TMAX]),
        name="ml1",
    )
    checks = (
        NamedCheck("off_bound_samples", _ml1_bang_count, 2, "thrust samples farther than 1e-3 from {0, Tmax}"),
        NamedCheck("bound_overshoot", _ml1_overshoot, 1e-3, "largest excursion outside [0, Tmax]"),
        NamedCheck("switch_count_error", _ml1_switches, 0, "|number of off/on switches - 1|"),
        NamedCheck("mu_sign_rule", _ml1_mu_sign, 1e-3, "mu >= 0 at Tmax, mu <= 0 at zero thrust"),
        NamedCheck("lambda_h_constant", _ml1_lambda_h, 1e-2, "relative spread of lambda_h"),
        NamedCheck("lambda_v_affine", _ml1_lambda_v, 1e-2, "affine-fit deviation over range of lambda_v"),
        NamedCheck("lambda_m_final", _ml1_lambda_m_final, 1e-3, "|lambda_m(t_f)|"),
    )
    return BenchmarkProblem("ml1", ocp, "cgl", 80, (20,), checks)


# ---------------------------------------------------------------------------
# Breakwell: state-constrained double integrator


def breakwell_analytic(t, ell: float = BREAKWELL_ELL) -> dict:
    """Closed-form three-arc solution for ``ell <= 1/6``."""
    t = np.asarray(t, dtype=float)
    a = 3 * ell
    s = np.where(t <= 0.5, t, 1.0 - t)
    sign = np.where(t <= 0.5, 1.0, -1.0)
    on = s < a
    q = np.where(on, 1.0 - s / a, 0.0)
    x = np.where(on, ell * (1 - q**3), ell)
    v = sign * q**2
    u = -2.0 / a * q
    lam_x = np.where(t < a, 2 / (9 * ell**2), np.where(t > 1 - a, -2 / (9 * ell**2), 0.0))
    lam_v = -u
    return {"x": x, "v": v, "u": u, "lambda_x": lam_x, "lambda_v": lam_v, "cost": 4 / (9 * ell)}


def _bw_objective(sol: TrajectorySolution) -> float:
    return abs(sol.objective / sol.cost_scale - 4 / (9 * BREAKWELL_ELL))


def breakwell_jump_times(sol: TrajectorySolution) -> np.ndarray:
    """Times where lambda_x crosses the midpoints between its plateau levels.

    Each midpoint must be crossed exactly once and downward; otherwise the
    corresponding entry is ``nan``.  Crossing times are linearly interpolated.
    """
    lx = _lam(sol)[0]
    level = 1.0 / (9 * BREAKWELL_ELL**2)  # half of the jump 2 / (9 ell^2)
    out = []
    for mid in (level, -level):
        above = lx > mid
        flips = np.flatnonzero(above[:-1] != above[1:])
        if flips.size != 1 or not above[flips[0]]:
            out.append(np.nan)
            continue
        i = flips[0]
        s = (lx[i] - mid) / (lx[i] - lx[i + 1])
        out.append(sol.t[i] + s * (sol.t[i + 1] - sol.t[i]))
    return np.array(out)


def _bw_jump_times(sol: TrajectorySolution) -> float:
    times = breakwell_jump_times(sol)
    if np.any(np.isnan(times)):
        return float("inf")
    return float(np.max(np.abs(times - np.array([3 * BREAKWELL_ELL, 1 - 3 * BREAKWELL_ELL]))))


def _bw_plateaus(sol: TrajectorySolution) -> float:
    """Median of lambda_x on each plateau against 2/(9 ell^2), 0, -2/(9 ell^2), relative to the jump."""
    lx = _lam(sol)[0]
    jump = 2 / (9 * BREAKWELL_ELL**2)
    t1, t2 = 3 * BREAKWELL_ELL, 1 - 3 * BREAKWELL_ELL
    err = 0.0
    for lo, hi, target in ((-np.inf, t1 - 0.05, jump), (t1 + 0.05, t2 - 0.05, 0.0), (t2 + 0.05, np.inf, -jump)):
        sel = (sol.t > lo) & (sol.t < hi)
        err = max(err, abs(float(np.median(lx[sel])) - target) / jump)
    return err


def breakwell_contact_masses(sol: TrajectorySolution, rel: float = 1e-3) -> list[dict]:
    """Quadrature mass ``sum w_k mu_k`` and nonzero-node count for each contact.

    Contacts are split at t = 0.5.  Requires quadrature weights on the
    solution; without them the mass is reported as ``nan``.
    """
    mu = _mu(sol)[0]
    scale = float(np.max(np.abs(mu))) or 1.0
    out = []
    for sel in (sol.t <= 0.5, sol.t > 0.5):
        nz = sel & (np.abs(mu) > rel * scale)
        mass = float(np.sum(sol.w[sel] * mu[sel])) if sol.w is not None else float("nan")
        out.append({"mass": mass, "nonzero": int(np.sum(nz))})
    return out


def _bw_mass(sol: TrajectorySolution) -> float:
    return max(abs(c["mass"] - BREAKWELL_DIRAC) / BREAKWELL_DIRAC for c in breakwell_contact_masses(sol))


def _bw_nonzero(sol: TrajectorySolution) -> float:
    return float(max(c["nonzero"] for c in breakwell_contact_masses(sol)))


def breakwell() -> BenchmarkProblem:
    """Double integrator with the state constraint ``x(t) <= 0.1``."""
    ell = BREAKWELL_ELL
    ocp = OcpDefinition(
        nx=2,
        nu=1,
        dynamics=lambda x, u, t, p: np.vstack([x[1], u[0]]),
        time=FixedTime(0.0, 1.0),
        running_cost=lambda x, u, t, p: 0.5 * u[0] ** 2,
        events=lambda xa, xb, ta, tb, p: np.r_[xa, xb],
        events_lower=np.array([0.0, 1.0, 0.0, -1.0]),
        events_upper=np.array([0.0, 1.0, 0.0, -1.0]),
        path=lambda x, u, t, p: x[:1],
        path_lower=np.array([-np.inf]),
        path_upper=np.array([ell]),
        boundary_guess=(np.array([0.0, 1.0]), np.array([0.0, -1.0])),
        name="breakwell",
    )
    checks = (
        NamedCheck("objective_error", _bw_objective, 1e-2, "|J - 4/(9 ell)|"),
        NamedCheck("jump_time_error", _bw_jump_times, 0.02, "distance of lambda_x jumps from 0.3 and 0.7"),
        NamedCheck("plateau_level_error", _bw_plateaus, 5e-2, "plateau medians of lambda_x vs theory, over jump size"),
        NamedCheck("dirac_mass_rel_error", _bw_mass, 0.10, "per-contact mass vs 22.22"),
        NamedCheck("dirac_nonzero_nodes", _bw_nonzero, 3, "nonzero mu nodes per contact"),
    )
    return BenchmarkProblem("breakwell", ocp, "cgl", 100, (20,), checks)


# ---------------------------------------------------------------------------
# low-thrust orbit transfer


def _xfer_dynamics(x, u, t, p):
    r, th, vr, vt = x
    a = u[0]
    return np.vstack([
        vr,
        vt / r,
        vt**2 / r - 1.0 / r**2 + XFER_ACCEL * np.sin(a),
        -vr * vt / r + XFER_ACCEL * np.cos(a),
    ])


def _xfer_jac(x, u, t, p):
    r, th, vr, vt = x
    a = u[0]
    K = x.shape[1]
    fx = np.zeros((4, 4, K))
    fx[0, 2] = 1.0
    fx[1, 0] = -vt / r**2
    fx[1, 3] = 1.0 / r
    fx[2, 0] = -(vt**2) / r**2 + 2.0 / r**3
    fx[2, 3] = 2 * vt / r
    fx[3, 0] = vr * vt / r**2
    fx[3, 2] = -vt / r
    fx[3, 3] = -vr / r
    fu = np.zeros((4, 1, K))
    fu[2, 0] = XFER_ACCEL * np.cos(a)
    fu[3, 0] = -XFER_ACCEL * np.sin(a)
    return fx, fu


@lru_cache(maxsize=1)
def tangential_thrust_arc() -> dict:
    """Propagate tangential thrust (alpha = 0) from the initial orbit until r = 6."""
    def rhs(t, x):
        return _xfer_dynamics(x.reshape(4, 1), np.zeros((1, 1)), None, None).ravel()

    hit = lambda t, x: x[0] - XFER_RF  # noqa: E731
    hit.terminal, hit.direction = True, 1
    sol = solve_ivp(rhs, (0, 1e4), XFER_X0, events=hit, method="DOP853", rtol=1e-10, atol=1e-12, dense_output=True)
    return {"t_final": float(sol.t_events[0][0]), "sol": sol.sol}


XFER_PHASED_SPAN = 600.0


def _phased_alpha(x, c):
    return c[0] + c[1] * np.cos(x[1]) + c[2] * np.sin(x[1])


@lru_cache(maxsize=1)
def phased_terminal_arc() -> dict:
    """Tangential thrust followed by orbit-phased steering that meets the terminal orbit.

    The last ``XFER_PHASED_SPAN`` time units (at most half the arc) of the tangential arc are
    replaced by ``alpha = c0 + c1 cos(theta) + c2 sin(theta)``; ``(c, t_f)``
    are chosen so the propagated state meets ``(r, v_r, v_t)_f`` exactly.
    """
    arc = tangential_thrust_arc()
    ts = arc["t_final"] - min(XFER_PHASED_SPAN, 0.5 * arc["t_final"])
    xs = arc["sol"](ts)

    def rhs(t, x, c):
        return _xfer_dynamics(x.reshape(4, 1), np.array([[_phased_alpha(x, c)]]), None, None).ravel()

    def miss(q):
        x = solve_ivp(rhs, (ts, q[3]), xs, args=(q[:3],), method="DOP853", rtol=1e-10, atol=1e-12).y[:, -1]
        return [x[0] - XFER_RF, x[2], x[3] - np.sqrt(1.0 / XFER_RF)]

    fit = least_squares(miss, np.r_[0.0, 0.0, 0.0, arc["t_final"]], x_scale=np.r_[1.0, 1.0, 1.0, 10.0],
                        xtol=1e-14, ftol=1e-14, gtol=1e-14)
    c, tf = fit.x[:3], float(fit.x[3])
    tail = solve_ivp(rhs, (ts, tf), xs, args=(c,), method="DOP853", rtol=1e-10, atol=1e-12, dense_output=True)
    return {"t_switch": ts, "t_final": tf, "coef": c, "head": arc["sol"], "tail": tail.sol,
            "miss": float(np.max(np.abs(fit.fun)))}


def _xfer_guess(nlp):
    arc = phased_terminal_arc()
    ts, tf = arc["t_switch"], arc["t_final"]
    t = np.linspace(0.0, tf, 20 * nlp.K + 1)
    head = t <= ts
    X = np.empty((4, t.size))
    X[:, head] = arc["head"](t[head]).reshape(4, -1)
    X[:, ~head] = arc["tail"](t[~head]).reshape(4, -1)
    U = np.where(head, 0.0, _phased_alpha(X, arc["coef"]))[None, :]
    return nlp.guess_from_trajectory(t, X, U, tb=tf)


def _xfer_lambda_theta(sol: TrajectorySolution) -> float:
    lam = _lam(sol)
    return float(np.max(np.abs(lam[1])) / np.max(np.abs(lam)))


def _xfer_hamiltonian(sol: TrajectorySolution) -> float:
    lam = _lam(sol)
    f = _xfer_dynamics(sol.X, sol.U, sol.t, None)
    H = np.sum(lam * f, axis=0)
    return float(np.max(np.abs(H + 1.0)))


def _xfer_hmc(sol: TrajectorySolution) -> float:
    lam = _lam(sol)
    a = sol.U[0]
    s = lam[2] * np.sin(a) + lam[3] * np.cos(a)
    return max(float(np.max(s)), 0.0) / float(np.max(np.abs(lam)))


def orbit_transfer() -> BenchmarkProblem:
    """Minimum-time low-thrust transfer from r = 1 to r = 6 with free final angle."""
    x0 = np.array(XFER_X0)
    vf = np.sqrt(1.0 / XFER_RF)
    ocp = OcpDefinition(
        nx=4,
        nu=1,
        dynamics=_xfer_dynamics,
        dynamics_jac=_xfer_jac,
        time=FreeFinalTime(0.0, 10.0, 1e4, phased_terminal_arc()["t_final"]),
        endpoint_cost=lambda xa, xb, ta, tb, p: tb,
        events=lambda xa, xb, ta, tb, p: np.r_[xa, xb[0], xb[2], xb[3]],
        events_lower=np.r_[x0, XFER_RF, 0.0, vf],
        events_upper=np.r_[x0, XFER_RF, 0.0, vf],
        cost_scale=XFER_COST_SCALE,
        boundary_guess=(x0, np.array([XFER_RF, 0.0, 0.0, vf])),
        name="orbit-xfer",
    )
    checks = (
        NamedCheck("lambda_theta_rel", _xfer_lambda_theta, 1e-3, "max|lambda_theta| / max|lambda|"),
        NamedCheck("hamiltonian_error", _xfer_hamiltonian, 1e-2, "max|H + 1| (unscaled)"),
        NamedCheck("hmc_inequality_rel", _xfer_hmc, 1e-3, "max(lambda_vr sin a + lambda_vt cos a)_+ / max|lambda|"),
    )
    return BenchmarkProblem("orbit-xfer", ocp, "cgl", 600, (), checks, guess=_xfer_guess, tol_bc=1e-2,
                            solver_overrides={"initial_penalty": 1e3})


# ---------------------------------------------------------------------------
# LQ oracle


def lq_analytic(t) -> dict:
    t = np.asarray(t, dtype=float)
    return {
        "x": 3 * t**2 - 2 * t**3,
        "v": 6 * t - 6 * t**2,
        "u": 6 - 12 * t,
        "lambda_x": np.full_like(t, -12.0),
        "lambda_v": -6 + 12 * t,
        "cost": 6.0,
        # events multipliers for e = (xa, xb) under lambda(t_a) = -nu_a, lambda(t_b) = nu_b
        "nu": np.array([12.0, 6.0, -12.0, 6.0]),
    }


def lq_oracle() -> BenchmarkProblem:
    """Minimum-energy double integrator from rest at 0 to rest at 1 on [0, 1]."""
    ocp = OcpDefinition(
        nx=2,
        nu=1,
        dynamics=lambda x, u, t, p: np.vstack([x[1], u[0]]),
        dynamics_jac=_lq_jac,
        time=FixedTime(0.0, 1.0),
        running_cost=lambda x, u, t, p: 0.5 * u[0] ** 2,
        events=lambda xa, xb, ta, tb, p: np.r_[xa, xb],
        events_lower=np.array([0.0, 0.0, 1.0, 0.0]),
        events_upper=np.array([0.0, 0.0, 1.0, 0.0]),
        boundary_guess=(np.zeros(2), np.array([1.0, 0.0])),
        name="lq",
    )
    checks = (
        NamedCheck("objective_error", lambda s: abs(s.objective / s.cost_scale - 6.0), 1e-4, "|J - 6|"),
        NamedCheck("lambda_x_error", lambda s: float(np.max(np.abs(_lam(s)[0] + 12.0))), 1e-2, "max|lambda_x + 12|"),
        NamedCheck(
            "lambda_v_endpoint_error",
            lambda s: float(max(abs(_lam(s)[1, 0] + 6.0), abs(_lam(s)[1, -1] - 6.0))),
            1e-2,
            "lambda_v(0) = -6, lambda_v(1) = 6",
        ),
        NamedCheck(
            "control_error",
            lambda s: float(np.max(np.abs(s.U[0] - (6 - 12 * s.t)))),
            1e-4,
            "max|u - (6 - 12 t)|",
        ),
    )
    return BenchmarkProblem("lq", ocp, "cgl", 20, (), checks, tol_bc=1e-6, tol_path=1e-6)


def _lq_jac(x, u, t, p):
    K = x.shape[1]
    fx = np.zeros((2, 2, K))
    fx[0, 1] = 1.0
    fu = np.zeros((2, 1, K))
    fu[1, 0] = 1.0
    return fx, fu


def lq_analytic_solution(N: int = 20) -> TrajectorySolution:
    """Hand-built LQ solution on uniform samples, produced without any solver."""
    t = np.linspace(0.0, 1.0, N + 1)
    a = lq_analytic(t)
    return TrajectorySolution(
        t=t,
        X=np.vstack([a["x"], a["v"]]),
        U=a["u"][None, :],
        objective=6.0,
        lam=np.vstack([a["lambda_x"], a["lambda_v"]]),
        mu=np.zeros((0, t.size)),
        nu=a["nu"],
        status="Analytic",
        problem="lq",
        grid="uniform",
    )


PROBLEMS: dict[str, Callable[[], BenchmarkProblem]] = {
    "ml1": ml1,
    "breakwell": breakwell,
    "orbit-xfer": orbit_transfer,
    "lq": lq_oracle,
}


def get_problem(name: str) -> BenchmarkProblem:
    try:
        return PROBLEMS[name]()
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; expected one of {', '.join(PROBLEMS)}") from None
