"""Method-independent verification of candidate optimal control solutions.

Everything here works from node samples ``(t_i, u(t_i))`` (plus optional
covector samples) and the problem evaluators.  Nothing in this module touches
Birkhoff matrices, so a solution produced by any method can be checked.

Covector units
--------------
Solutions carry covectors of the scaled problem (cost multiplied by
``cost_scale``); they are divided by ``cost_scale`` before any check.  The
path covector ``mu`` is a density per unit of the normalised time tau, so
``mu / gamma`` with ``gamma = (t_b - t_a) / 2`` is its density per unit time.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp

SCHEMA_VERSION = 1
RTOL = 1e-8
ATOL = 1e-10
JUMP_FACTOR = 5.0


class PropagationError(RuntimeError):
    pass


class InterpolationRule(str, enum.Enum):
    PIECEWISE_LINEAR = "linear"
    ZERO_ORDER_HOLD = "zoh"


@dataclass(frozen=True)
class ControlSignal:
    """Continuous-time control built from node samples.

    Outside the sample range the nearest sample value is held.
    """

    breakpoints: np.ndarray
    values: np.ndarray
    rule: InterpolationRule = InterpolationRule.PIECEWISE_LINEAR

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        tb, vals = self.breakpoints, self.values
        if self.rule is InterpolationRule.PIECEWISE_LINEAR:
            out = np.array([np.interp(t, tb, row) for row in vals])
        else:
            idx = np.clip(np.searchsorted(tb, t, side="right") - 1, 0, tb.size - 1)
            out = vals[:, idx]
        return out

    @property
    def span(self) -> tuple[float, float]:
        return float(self.breakpoints[0]), float(self.breakpoints[-1])


def interpolate_control(t, U, rule: InterpolationRule | str = InterpolationRule.PIECEWISE_LINEAR) -> ControlSignal:
    """Build ``u(t) = sum_i u(t_i) zeta_i(t)`` from samples.

    Parameters
    ----------
    t : array_like, shape (K,)
        Strictly increasing sample times.
    U : array_like, shape (nu, K) or (K,)
        Control samples.
    rule : {"linear", "zoh"}
    """
    t = np.asarray(t, dtype=float).ravel()
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if U.shape[1] != t.size:
        raise ValueError(f"{t.size} breakpoints but control samples have shape {U.shape}")
    if t.size < 2:
        raise ValueError("need at least two samples")
    if np.any(np.diff(t) <= 0):
        raise ValueError("control breakpoints must be strictly increasing (duplicate or unsorted times)")
    t.setflags(write=False)
    U = U.copy()
    U.setflags(write=False)
    return ControlSignal(t, U, InterpolationRule(rule))


@dataclass(frozen=True)
class PropagationResult:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    x_final: np.ndarray
    path_violation_inf: float
    terminal_error: np.ndarray

    @property
    def terminal_error_inf(self) -> float:
        return float(np.max(np.abs(self.terminal_error), initial=0.0))


def _bound_violation(v, lo, hi) -> np.ndarray:
    return np.maximum(np.maximum(lo - v, v - hi), 0.0)


def _breaks_inside(control: ControlSignal, t0: float, t1: float) -> np.ndarray:
    b = np.asarray(control.breakpoints)
    inner = b[(b > t0) & (b < t1)]
    return np.concatenate([[t0], inner, [t1]])


def propagate_ivp(
    ocp,
    control: ControlSignal,
    x_a,
    t_span,
    p=None,
    rtol: float = RTOL,
    atol: float = ATOL,
    n_dense: Optional[int] = None,
) -> PropagationResult:
    """Integrate ``x' = f(x, u(t), t, p)`` from ``x_a`` with an adaptive RK4(5) pair.

    Integration restarts at every control breakpoint so the kinks of the
    interpolated control never sit inside a step.  The trajectory is sampled
    at ``n_dense`` (default ``10 K``) uniform times for the path scan, and the
    terminal error is the event-bound violation with the propagated final
    state in place of ``x^b``.
    """
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t1 > t0:
        raise ValueError("empty propagation span")
    nx = ocp.nx
    pv = np.zeros(ocp.n_params) if p is None else np.asarray(p, dtype=float)
    pcol = pv.reshape(-1, 1)

    def rhs(t, x):
        u = control(np.array([t]))
        return np.asarray(ocp.dynamics(x.reshape(nx, 1), u, np.array([t]), pcol), dtype=float).ravel()

    breaks = _breaks_inside(control, t0, t1)
    K = control.breakpoints.size
    n_dense = 10 * K if n_dense is None else int(n_dense)
    t_dense = np.linspace(t0, t1, n_dense)
    x_dense = np.empty((nx, n_dense))
    x = np.asarray(x_a, dtype=float).copy()
    for a, b in zip(breaks[:-1], breaks[1:]):
        sol = solve_ivp(rhs, (a, b), x, method="RK45", rtol=rtol, atol=atol, dense_output=True)
        if not sol.success:
            raise PropagationError(f"integration failed on [{a:.6g}, {b:.6g}]: {sol.message}")
        sel = (t_dense >= a) & (t_dense <= b)
        if np.any(sel):
            x_dense[:, sel] = sol.sol(t_dense[sel])
        x = sol.y[:, -1]
    x_final = x
    x_dense[:, -1] = x_final
    u_dense = control(t_dense)

    viol = 0.0
    if ocp.nh:
        h = np.asarray(ocp.path(x_dense, u_dense, t_dense, np.repeat(pcol, n_dense, axis=1)))
        h = h.reshape(ocp.nh, -1)
        lo = np.asarray(ocp.path_lower, dtype=float)[:, None]
        hi = np.asarray(ocp.path_upper, dtype=float)[:, None]
        viol = float(np.max(_bound_violation(h, lo, hi), initial=0.0))

    term = np.zeros(0)
    if ocp.ne:
        e = np.asarray(ocp.events(np.asarray(x_a, dtype=float), x_final, t0, t1, pv), dtype=float)
        lo = np.asarray(ocp.events_lower, dtype=float)
        hi = np.asarray(ocp.events_upper, dtype=float)
        term = np.where(e > hi, e - hi, np.where(e < lo, e - lo, 0.0))
    return PropagationResult(t_dense, x_dense, u_dense, x_final, viol, term)


def rk4_fixed(fun: Callable, t_span, x0, n_steps: int) -> np.ndarray:
    """Classical fixed-step RK4; used to confirm the propagator's order."""
    t, t1 = float(t_span[0]), float(t_span[1])
    h = (t1 - t) / n_steps
    x = np.asarray(x0, dtype=float).copy()
    for _ in range(n_steps):
        k1 = fun(t, x)
        k2 = fun(t + h / 2, x + h / 2 * k1)
        k3 = fun(t + h / 2, x + h / 2 * k2)
        k4 = fun(t + h, x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return x


@dataclass(frozen=True)
class FeasibilityReport:
    terminal_error_inf: float
    path_violation_inf: float
    verdict: bool
    tol_bc: float
    tol_path: float


def feasibility_certificate(ocp, prop: PropagationResult, tol_bc: float = 1e-3, tol_path: float = 1e-3) -> FeasibilityReport:
    term = prop.terminal_error_inf
    verdict = bool(term <= tol_bc and prop.path_violation_inf <= tol_path)
    return FeasibilityReport(term, prop.path_violation_inf, verdict, tol_bc, tol_path)


# ---------------------------------------------------------------------------
# solution interchange


@dataclass
class TrajectorySolution:
    """Node samples of a candidate primal-dual solution.

    ``lam``, ``mu`` and ``nu`` are optional; without them only the
    feasibility certificate can run.
    """

    t: np.ndarray
    X: np.ndarray
    U: np.ndarray
    objective: float = float("nan")
    tf: Optional[float] = None
    V: Optional[np.ndarray] = None
    lam: Optional[np.ndarray] = None
    mu: Optional[np.ndarray] = None
    nu: Optional[np.ndarray] = None
    w: Optional[np.ndarray] = None
    status: str = "Unknown"
    kkt: dict = field(default_factory=dict)
    cost_scale: float = 1.0
    problem: str = ""
    grid: str = ""
    xa: Optional[np.ndarray] = None
    p: Optional[np.ndarray] = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).ravel()
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.U = np.atleast_2d(np.asarray(self.U, dtype=float))
        for name in ("V", "lam", "mu", "w", "xa", "p", "nu"):
            val = getattr(self, name)
            if val is not None:
                arr = np.asarray(val, dtype=float)
                if name in ("V", "lam", "mu"):
                    arr = arr.reshape(-1, self.t.size) if arr.size else np.zeros((0, self.t.size))
                setattr(self, name, arr)
        if self.tf is None:
            self.tf = float(self.t[-1])

    @property
    def has_duals(self) -> bool:
        return self.lam is not None and self.lam.size > 0

    @property
    def initial_state(self) -> np.ndarray:
        return self.X[:, 0] if self.xa is None else self.xa

    def to_json(self) -> dict:
        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "schema": SCHEMA_VERSION,
            "problem": self.problem,
            "grid": self.grid,
            "status": self.status,
            "objective": self.objective,
            "tf": self.tf,
            "cost_scale": self.cost_scale,
            "kkt": self.kkt,
            "t": arr(self.t),
            "X": arr(self.X),
            "U": arr(self.U),
            "V": arr(self.V),
            "lambda": arr(self.lam),
            "mu": arr(self.mu),
            "nu": arr(self.nu),
            "w": arr(self.w),
            "xa": arr(self.xa),
            "p": arr(self.p),
        }

    @classmethod
    def from_json(cls, data: dict) -> "TrajectorySolution":
        if data.get("schema") != SCHEMA_VERSION:
            raise ValueError(f"unsupported solution schema {data.get('schema')!r}")
        for key in ("t", "X", "U"):
            if data.get(key) is None:
                raise ValueError(f"solution JSON is missing {key!r}")
        return cls(
            t=data["t"],
            X=data["X"],
            U=data["U"],
            objective=float(data.get("objective", float("nan"))),
            tf=data.get("tf"),
            V=data.get("V"),
            lam=data.get("lambda"),
            mu=data.get("mu"),
            nu=data.get("nu"),
            w=data.get("w"),
            status=data.get("status", "Unknown"),
            kkt=data.get("kkt") or {},
            cost_scale=float(data.get("cost_scale", 1.0)),
            problem=data.get("problem", ""),
            grid=data.get("grid", ""),
            xa=data.get("xa"),
            p=data.get("p"),
        )

    @classmethod
    def from_result(cls, res, problem: str = "") -> "TrajectorySolution":
        """Build from a solver result (anything with ``nlp``, ``solution``, ``duals``)."""
        nlp, sol, duals = res.nlp, res.solution, res.duals
        parts = nlp.layout.unpack(sol.z)
        return cls(
            t=nlp.node_times(sol.z),
            X=parts["X"],
            U=parts["U"],
            V=parts["V"],
            objective=sol.objective,
            tf=nlp.final_time(sol.z),
            lam=duals.lam,
            mu=duals.mu,
            nu=duals.nu,
            w=np.asarray(nlp.wB),
            status=sol.status.value,
            kkt=dict(sol.kkt),
            cost_scale=nlp.ocp.cost_scale,
            problem=problem,
            grid=f"{nlp.grid.spec.name}:{nlp.grid.N}",
            xa=parts["xa"],
            p=parts["p"],
        )


def save_solution(sol: TrajectorySolution, path) -> None:
    with open(path, "w") as fh:
        json.dump(sol.to_json(), fh, indent=1)


def load_solution(path) -> TrajectorySolution:
    with open(path) as fh:
        return TrajectorySolution.from_json(json.load(fh))


# ---------------------------------------------------------------------------
# Pontryagin residuals


@dataclass(frozen=True)
class PontryaginReport:
    available: bool
    hmc_stationarity: float = float("nan")
    hmc_complementarity: float = float("nan")
    adjoint_consistency: float = float("nan")
    hamiltonian_value: dict = field(default_factory=dict)
    hamiltonian_evolution: float = float("nan")
    transversality: dict = field(default_factory=dict)
    costate_shape_checks: dict = field(default_factory=dict)
    hamiltonian: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass(frozen=True)
class VnvReport:
    feasibility: FeasibilityReport
    pontryagin: PontryaginReport

    def to_json(self) -> dict:
        pont = asdict(self.pontryagin)
        H = pont.pop("hamiltonian")
        pont["hamiltonian"] = None if H is None else np.asarray(H).tolist()
        return {"schema": SCHEMA_VERSION, "feasibility": asdict(self.feasibility), "pontryagin": pont}


def _params(sol: TrajectorySolution, ocp) -> np.ndarray:
    if sol.p is not None and np.size(sol.p) == ocp.n_params:
        return np.asarray(sol.p, dtype=float)
    if ocp.param_guess is not None:
        return np.asarray(ocp.param_guess, dtype=float)
    return np.zeros(ocp.n_params)


def _hbar(ocp, x, u, t, p, lam, mu_t):
    """Unscaled augmented Hamiltonian at node columns."""
    f = np.asarray(ocp.dynamics(x, u, t, p)).reshape(ocp.nx, -1)
    H = np.sum(lam * f, axis=0)
    if ocp.running_cost is not None:
        H = H + np.broadcast_to(ocp.running_cost(x, u, t, p), (t.size,))
    Hbar = H
    if ocp.nh and mu_t is not None and mu_t.size:
        h = np.asarray(ocp.path(x, u, t, p)).reshape(ocp.nh, -1)
        Hbar = H + np.sum(mu_t * h, axis=0)
    return H, Hbar


def _column_gradient(fun, arr, step=1e-6) -> np.ndarray:
    """Central differences of a per-column scalar with respect to each row of ``arr``."""
    arr = np.asarray(arr, dtype=float)
    G = np.empty_like(arr)
    for r in range(arr.shape[0]):
        h = step * np.maximum(1.0, np.abs(arr[r]))
        ap, am = arr.copy(), arr.copy()
        ap[r] += h
        am[r] -= h
        G[r] = (fun(ap) - fun(am)) / (2 * h)
    return G


def detect_jumps(lam: np.ndarray, factor: float = JUMP_FACTOR) -> np.ndarray:
    """Indices i where some costate row jumps across the gap (i, i+1)."""
    d = np.abs(np.diff(lam, axis=1))
    flagged = np.zeros(d.shape[1], dtype=bool)
    for row in d:
        med = np.median(row)
        if med > 0:
            flagged |= row > factor * med
        else:
            flagged |= row > 0
    return np.flatnonzero(flagged)


def pontryagin_report(ocp, sol: TrajectorySolution, shape_checks: Optional[dict] = None,
                      active_tol: float = 1e-3) -> PontryaginReport:
    """Residuals of the Pontryagin necessary conditions at the nodes.

    Costates are unscaled first.  Residuals are absolute unless named
    otherwise; ``adjoint_consistency`` and ``hamiltonian_evolution`` are
    relative to ``1 + max|lambda|`` and skip nodes next to detected jumps.
    """
    if not sol.has_duals:
        return PontryaginReport(available=False)
    s = sol.cost_scale
    t, X, U = sol.t, sol.X, sol.U
    K = t.size
    p = _params(sol, ocp)
    P = np.repeat(p.reshape(-1, 1), K, axis=1)
    lam = sol.lam / s
    gamma = 0.5 * (t[-1] - t[0])
    mu = (sol.mu / s) if (sol.mu is not None and sol.mu.size) else np.zeros((ocp.nh, K))
    mu_t = mu / gamma
    nu = (np.asarray(sol.nu, dtype=float) / s) if sol.nu is not None else np.zeros(ocp.ne)
    lam_scale = 1.0 + float(np.max(np.abs(lam)))

    H, _ = _hbar(ocp, X, U, t, P, lam, mu_t)

    # (a) Hamiltonian minimisation: stationarity in u and the sign rule on mu
    dHu = _column_gradient(lambda uu: _hbar(ocp, X, uu, t, P, lam, mu_t)[1], U)
    hmc_stat = float(np.max(np.abs(dHu)))
    comp = 0.0
    if ocp.nh:
        h = np.asarray(ocp.path(X, U, t, P)).reshape(ocp.nh, -1)
        lo = np.asarray(ocp.path_lower, dtype=float)[:, None]
        hi = np.asarray(ocp.path_upper, dtype=float)[:, None]
        at_hi = np.abs(h - hi) <= active_tol * (1 + np.abs(hi))
        at_lo = np.abs(h - lo) <= active_tol * (1 + np.abs(lo))
        inside = ~(at_hi | at_lo)
        res = np.zeros_like(mu)
        res = np.where(at_hi & ~at_lo, np.maximum(-mu, 0.0), res)
        res = np.where(at_lo & ~at_hi, np.maximum(mu, 0.0), res)
        res = np.where(inside, np.abs(mu), res)
        comp = float(np.max(res))

    # (b) adjoint equation away from costate jumps
    jumps = detect_jumps(lam)
    excluded = np.zeros(K, dtype=bool)
    for i in jumps:
        excluded[max(i - 1, 0) : min(i + 3, K)] = True
    excluded[[0, -1]] = True
    dlam = np.gradient(lam, t, axis=1)
    dHx = _column_gradient(lambda xx: _hbar(ocp, xx, U, t, P, lam, mu_t)[1], X)
    keep = ~excluded
    adj = float(np.max(np.abs(dlam + dHx)[:, keep], initial=0.0)) / lam_scale

    # (d) Hamiltonian evolution dH/dt = dHbar/dt
    dH = np.gradient(H, t)
    dHt = _column_gradient(lambda tt: _hbar(ocp, X, U, tt[0], P, lam, mu_t)[1], t[None, :])[0]
    evo = float(np.max(np.abs(dH - dHt)[keep], initial=0.0)) / lam_scale

    # (c), (e): endpoint conditions from Ebar = E + nu^T e
    xa, xb = sol.initial_state, X[:, -1]
    ta, tb = float(t[0]), float(t[-1])

    def ebar(v):
        a, b = v[: ocp.nx], v[ocp.nx : 2 * ocp.nx]
        ta_, tb_ = v[2 * ocp.nx], v[2 * ocp.nx + 1]
        val = 0.0
        if ocp.endpoint_cost is not None:
            val += float(ocp.endpoint_cost(a, b, ta_, tb_, p))
        if ocp.ne:
            val += float(nu @ np.asarray(ocp.events(a, b, ta_, tb_, p), dtype=float))
        return val

    v0 = np.concatenate([xa, xb, [ta, tb]])
    g = np.empty_like(v0)
    for i in range(v0.size):
        hstep = 1e-6 * max(1.0, abs(v0[i]))
        vp, vm = v0.copy(), v0.copy()
        vp[i] += hstep
        vm[i] -= hstep
        g[i] = (ebar(vp) - ebar(vm)) / (2 * hstep)
    dE_xa, dE_xb = g[: ocp.nx], g[ocp.nx : 2 * ocp.nx]
    dE_ta, dE_tb = g[-2], g[-1]
    transversality = {
        "a": float(np.max(np.abs(lam[:, 0] + dE_xa))),
        "b": float(np.max(np.abs(lam[:, -1] - dE_xb))),
    }
    # H(t_b) = -dEbar/dt_b; only a condition when t_b is free
    ham_value = {"b": float(abs(H[-1] + dE_tb))} if ocp.free_final_time else {}

    shapes = {}
    for name, fn in (shape_checks or {}).items():
        shapes[name] = float(fn(sol))
    return PontryaginReport(
        available=True,
        hmc_stationarity=hmc_stat,
        hmc_complementarity=comp,
        adjoint_consistency=adj,
        hamiltonian_value=ham_value,
        hamiltonian_evolution=evo,
        transversality=transversality,
        costate_shape_checks=shapes,
        hamiltonian=H,
    )


def verify_solution(ocp, sol: TrajectorySolution, tol_bc: float = 1e-3, tol_path: float = 1e-3,
                    rule: InterpolationRule | str = InterpolationRule.PIECEWISE_LINEAR,
                    shape_checks: Optional[dict] = None) -> tuple[VnvReport, PropagationResult]:
    """Interpolate, propagate, certify feasibility and score the necessary conditions."""
    control = interpolate_control(sol.t, sol.U, rule)
    prop = propagate_ivp(ocp, control, sol.initial_state, (sol.t[0], sol.t[-1]), p=_params(sol, ocp))
    feas = feasibility_certificate(ocp, prop, tol_bc, tol_path)
    pont = pontryagin_report(ocp, sol, shape_checks)
    return VnvReport(feas, pont), prop
