"""Augmented-Lagrangian NLP solver and covector extraction.

The solver works on any object exposing the ``TranscribedNlp`` protocol:
``n``, ``m``, ``cl``, ``cu``, ``blocks``, ``objective``, ``gradient``,
``constraints``, ``jacobian`` and ``lagrangian_hessian``.  Transcribed
problems also carry an exactly-solvable linear block (``A_lin`` plus an
``elimination`` map expressing X and xb through V and xa); the solver keeps
that block satisfied to rounding at every iterate and recovers its
multipliers from stationarity in the eliminated variables.

Multiplier convention: the Lagrangian is ``J + y^T c``.  For a row with
bounds ``l <= c <= u``, ``y >= 0`` when the upper bound is active and
``y <= 0`` when the lower bound is active.
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .birkhoff import build_birkhoff
from .grids import GridSpec, make_grid
from .transcription import EvaluatorError, OcpDefinition, TranscribedNlp, affine_domain_map, resample, transcribe

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e12
MULTIPLIER_SAFEGUARD = 1e10
PENALTY_DECREASE = 0.5
STALL_OUTER_ITERS = 3
# relative Hessian shifts (equilibrated scale): the smallest one tried, and the
# largest still treated as an unshifted Newton step
SHIFT_FLOOR = 1e-15
SHIFT_NEGLIGIBLE = 1e-8
# the primal-dual polish is tried once the infeasibility and the relative
# stationarity fall below these
POLISH_FEASIBILITY = 1e-2
POLISH_STATIONARITY = 1e-3
POLISH_ITERS = 15


class SolverStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    FEASIBLE = "Feasible"
    MAX_ITER = "MaxIter"
    DIVERGED = "Diverged"


@dataclass(frozen=True)
class SolverOptions:
    feasibility_tol: float = 1e-8
    optimality_tol: float = 1e-6
    complementarity_tol: float = 1e-6
    max_outer_iters: int = 60
    max_inner_iters: int = 500
    initial_penalty: float = 10.0
    penalty_growth: float = 10.0
    initial_guess: Optional[np.ndarray] = None
    initial_multipliers: Optional[np.ndarray] = None
    least_squares_multipliers: bool = True
    restoration_iters: int = 20
    kkt_polish: bool = True
    time_limit: Optional[float] = None

    def __post_init__(self):
        for name in ("feasibility_tol", "optimality_tol", "complementarity_tol", "initial_penalty"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.penalty_growth > 1:
            raise ValueError("penalty_growth must exceed 1")


@dataclass
class NlpSolution:
    z: np.ndarray
    multipliers: dict
    status: SolverStatus
    kkt: dict
    objective: float
    outer_iterations: int = 0
    inner_iterations: int = 0
    penalty: float = 0.0


@dataclass
class DualTrajectories:
    lam: np.ndarray
    mu: np.ndarray
    nu: np.ndarray
    hamiltonian: np.ndarray
    cost_scale: float = 1.0


class SimpleNlp:
    """Small dense NLP built from callables, for problems without a Birkhoff block.

    ``constraints(x)`` returns an array with bounds ``cl <= c <= cu``;
    ``hessian(x, y, obj_factor)`` returns the Lagrangian Hessian.  Missing
    derivatives are replaced by finite differences.
    """

    def __init__(self, n, objective, constraints=None, cl=(), cu=(), gradient=None,
                 jacobian=None, hessian=None):
        self.n = int(n)
        self._f, self._c = objective, constraints
        self.cl = np.atleast_1d(np.asarray(cl, dtype=float))
        self.cu = np.atleast_1d(np.asarray(cu, dtype=float))
        self.m = self.cl.size
        self.blocks = {"constraints": slice(0, self.m)}
        self._g, self._J, self._H = gradient, jacobian, hessian
        self.A_lin = sp.csr_matrix((0, self.n))
        self.elimination = None

    def objective(self, x):
        return float(self._f(x))

    def constraints(self, x):
        return np.zeros(0) if self._c is None else np.atleast_1d(np.asarray(self._c(x), dtype=float))

    def gradient(self, x):
        if self._g is not None:
            return np.asarray(self._g(x), dtype=float)
        return _fd_jacobian(lambda v: np.atleast_1d(self.objective(v)), x)[0]

    def jacobian(self, x):
        if self.m == 0:
            return sp.csr_matrix((0, self.n))
        J = self._J(x) if self._J is not None else _fd_jacobian(self.constraints, x)
        return sp.csr_matrix(J)

    def lagrangian_hessian(self, x, y, obj_factor=1.0):
        if self._H is not None:
            return sp.csr_matrix(self._H(x, y, obj_factor))

        def grad_l(v):
            g = obj_factor * self.gradient(v)
            if self.m:
                g = g + self.jacobian(v).T @ y
            return g

        H = _fd_jacobian(grad_l, x, step=1e-5)
        return sp.csr_matrix(0.5 * (H + H.T))

    def consistent(self, x):
        return np.asarray(x, dtype=float)


def _fd_jacobian(fun, x, step=1e-6):
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(fun(x))
    J = np.empty((f0.size, x.size))
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        J[:, i] = (np.atleast_1d(fun(xp)) - np.atleast_1d(fun(xm))) / (2 * h)
    return J


class _Reduced:
    """Map between reduced variables and the full decision vector."""

    def __init__(self, nlp):
        el = getattr(nlp, "elimination", None)
        self.n = nlp.n
        self.blocks = None
        if el is None:
            self.dep = np.zeros(0, dtype=int)
            self.indep = np.arange(nlp.n)
            self.E = np.zeros((0, 0))
            self.nc = 0
        else:
            dep, indep, core, E = el["dep"], el["indep"], el["core"], el["E"]
            groups = el.get("groups")
            if groups:
                # group-major order makes E block diagonal with contiguous blocks
                drow = np.concatenate([d for d, _ in groups])
                ccol = np.concatenate([k for _, k in groups])
                dep, core, E = dep[drow], core[ccol], E[np.ix_(drow, ccol)]
                bounds = np.cumsum([0] + [len(d) for d, _ in groups])
                cbounds = np.cumsum([0] + [len(k) for _, k in groups])
                self.blocks = [(slice(bounds[i], bounds[i + 1]), slice(cbounds[i], cbounds[i + 1]))
                               for i in range(len(groups))]
            # eliminated-variable drivers first, so every scatter below is a slice
            rest = np.setdiff1d(np.arange(indep.size), core)
            self.indep = np.concatenate([indep[core], indep[rest]])
            self.dep, self.E, self.nc = dep, E, core.size
        self.nr = self.indep.size

    def expand(self, r):
        z = np.empty(self.n)
        z[self.indep] = r
        if self.dep.size:
            z[self.dep] = self.E @ r[: self.nc]
        return z

    def reduce(self, z):
        return np.asarray(z, dtype=float)[self.indep].copy()

    def grad(self, g):
        gr = g[self.indep].copy()
        if self.dep.size:
            gr[: self.nc] += self.E.T @ g[self.dep]
        return gr

    def jac(self, J: sp.csr_matrix) -> np.ndarray:
        J = J.tocsc()
        Jr = J[:, self.indep].toarray()
        if self.dep.size:
            Jr[:, : self.nc] += J[:, self.dep] @ self.E
        return Jr

    def hess(self, H: sp.csr_matrix) -> np.ndarray:
        H = H.tocsr()
        R = H[self.indep][:, self.indep].toarray()
        if self.dep.size:
            nc = self.nc
            Hd = H[self.dep]
            M = (Hd[:, self.indep].T @ self.E)  # (indep, core)
            R[:, :nc] += M
            R[:nc, :] += M.T
            R[:nc, :nc] += self._sandwich(Hd[:, self.dep].tocsr())
        R += R.T
        R *= 0.5
        return R

    def _sandwich(self, Hdd) -> np.ndarray:
        """E^T Hdd E, assembled block by block when E is block diagonal."""
        if self.blocks is None:
            return self.E.T @ (Hdd @ self.E)
        S = np.zeros((self.nc, self.nc))
        for a, (da, ka) in enumerate(self.blocks):
            Ea = self.E[da, ka]
            Hrow = Hdd[da]
            for db, kb in self.blocks[a:]:
                Hab = Hrow[:, db]
                if Hab.nnz == 0:
                    continue
                blk = Ea.T @ (Hab @ self.E[db, kb])
                S[ka, kb] += blk
                if kb != ka:
                    S[kb, ka] += blk.T
        return S


def _project(v, lo, hi):
    return np.minimum(np.maximum(v, lo), hi)


def _complementarity(c, y, lo, hi):
    """max |y| * distance to the bound its sign points at (inequality rows only)."""
    ineq = lo < hi
    if not np.any(ineq):
        return 0.0
    cc, yy = c[ineq], y[ineq]
    gap = np.zeros_like(cc)
    up = yy > 0
    gap[up] = np.abs(hi[ineq][up] - cc[up])
    gap[~up] = np.abs(cc[~up] - lo[ineq][~up])
    gap[~np.isfinite(gap)] = 0.0
    return float(np.max(np.abs(yy) * gap, initial=0.0))


def _violation(c, lo, hi):
    if c.size == 0:
        return 0.0
    return float(np.max(np.abs(c - _project(c, lo, hi))))


def _restore_feasibility(nlp, red, r, max_iter, tol):
    """Gauss-Newton minimum-norm steps on equality and violated rows.

    Returns the reduced point with the smallest violation seen.
    """
    lo, hi = nlp.cl, nlp.cu
    c = nlp.constraints(red.expand(r))
    viol = _violation(c, lo, hi)
    for _ in range(max_iter):
        if viol <= tol:
            break
        d = c - _project(c, lo, hi)
        rows = np.flatnonzero((lo == hi) | (d != 0))
        Jr = red.jac(nlp.jacobian(red.expand(r))[rows])
        step = la.lstsq(Jr, -d[rows], lapack_driver="gelsy", check_finite=False)[0]
        alpha, improved = 1.0, False
        for _ls in range(20):
            c_t = nlp.constraints(red.expand(r + alpha * step))
            v_t = _violation(c_t, lo, hi)
            if np.isfinite(v_t) and v_t < viol:
                improved = True
                break
            alpha *= 0.5
        if not improved:
            break
        r, c, viol = r + alpha * step, c_t, v_t
        log.debug("restore viol=%.3e alpha=%.3g", viol, alpha)
    return r


def _control_positions(nlp, red) -> np.ndarray:
    """Reduced-vector positions of the control samples (empty without a layout)."""
    layout = getattr(nlp, "layout", None)
    if layout is None:
        return np.zeros(0, dtype=int)
    pos = np.full(nlp.n, -1)
    pos[red.indep] = np.arange(red.nr)
    return pos[np.arange(layout.U.start, layout.U.stop)]


def _least_squares_multipliers(nlp, red, z, tol=1e-8):
    """First-order multiplier estimate at ``z`` for equality and active rows.

    Stationarity is imposed in every reduced variable except the controls,
    which are not optimal at a guess; this yields the adjoint of the guess's
    own control history.  Inactive inequality rows get zero; signs are
    projected so that each estimate points at the bound it presses on.
    """
    c = nlp.constraints(z)
    lo, hi = nlp.cl, nlp.cu
    at_hi = c >= hi - tol
    at_lo = c <= lo + tol
    rows = np.flatnonzero((lo == hi) | at_hi | at_lo)
    y = np.zeros(nlp.m)
    if rows.size == 0:
        return y
    keep = np.setdiff1d(np.arange(red.nr), _control_positions(nlp, red))
    Jr = red.jac(nlp.jacobian(z)[rows])[:, keep]
    gr = red.grad(nlp.gradient(z))[keep]
    sol = la.lstsq(Jr.T, -gr, lapack_driver="gelsy", check_finite=False)[0]
    y[rows] = sol
    eq = lo == hi
    y[~eq & at_hi & ~at_lo] = np.maximum(y[~eq & at_hi & ~at_lo], 0.0)
    y[~eq & at_lo & ~at_hi] = np.minimum(y[~eq & at_lo & ~at_hi], 0.0)
    return y if np.all(np.isfinite(y)) else np.zeros(nlp.m)


def linear_multipliers(nlp, z, y_nl) -> np.ndarray:
    """Multipliers of the linear block from stationarity in the eliminated variables."""
    A = getattr(nlp, "A_lin", None)
    if A is None or A.shape[0] == 0:
        return np.zeros(0)
    el = nlp.elimination
    g = nlp.gradient(z)
    if nlp.m:
        g = g + nlp.jacobian(z).T @ y_nl
    Ad = A[:, el["dep"]].tocsc()
    return spla.spsolve(Ad.T.tocsc(), -g[el["dep"]])


def kkt_residuals(nlp, z, y_nl, eta=None) -> dict:
    """Stationarity, feasibility and complementarity of a primal-dual point."""
    g = nlp.gradient(z)
    c = nlp.constraints(z)
    if nlp.m:
        g = g + nlp.jacobian(z).T @ y_nl
    A = getattr(nlp, "A_lin", None)
    lin_viol = 0.0
    if A is not None and A.shape[0]:
        if eta is None:
            eta = linear_multipliers(nlp, z, y_nl)
        g = g + A.T @ eta
        lin_viol = float(np.max(np.abs(A @ z)))
    return {
        "stationarity": float(np.max(np.abs(g), initial=0.0)),
        "feasibility": max(_violation(c, nlp.cl, nlp.cu), lin_viol),
        "complementarity": _complementarity(c, y_nl, nlp.cl, nlp.cu),
    }


def _meets(kkt, y, opts) -> bool:
    ymax = float(np.max(np.abs(y), initial=0.0))
    return (
        kkt["feasibility"] <= opts.feasibility_tol
        and kkt["stationarity"] <= opts.optimality_tol * (1.0 + ymax)
        and kkt["complementarity"] <= opts.complementarity_tol
    )


def solve_nlp(nlp, opts: SolverOptions = SolverOptions()) -> NlpSolution:
    """Augmented-Lagrangian outer loop with a damped Newton inner minimiser."""
    red = _Reduced(nlp)
    lo, hi = nlp.cl, nlp.cu
    m = nlp.m
    if opts.initial_guess is not None:
        z0 = np.asarray(opts.initial_guess, dtype=float)
    elif hasattr(nlp, "guess_from_boundary"):
        z0 = nlp.guess_from_boundary()
    else:
        z0 = np.zeros(nlp.n)
    if z0.shape != (nlp.n,) or not np.all(np.isfinite(z0)):
        raise ValueError("initial guess must be a finite vector of the layout length")
    r = red.reduce(z0)
    if m and opts.restoration_iters > 0:
        r = _restore_feasibility(nlp, red, r, opts.restoration_iters, opts.feasibility_tol)
    if opts.initial_multipliers is not None:
        y = np.array(opts.initial_multipliers, dtype=float)
    elif m and opts.least_squares_multipliers:
        y = _least_squares_multipliers(nlp, red, red.expand(r))
    else:
        y = np.zeros(m)
    rho = float(opts.initial_penalty)

    def merit(r_, y_, rho_):
        z_ = red.expand(r_)
        try:
            f = nlp.objective(z_)
            c = nlp.constraints(z_)
        except EvaluatorError:
            return np.inf, z_, None, None
        s = c + y_ / rho_
        d = s - _project(s, lo, hi)
        return f + 0.5 * rho_ * float(d @ d), z_, c, rho_ * d

    # infeasibility target: the penalty grows whenever an outer pass fails to halve it
    v_prev = np.inf
    omega_k = 0.1
    best_stat, stall_count = np.inf, 0
    skip_smaller = 0
    polish_gate = POLISH_STATIONARITY
    total_inner = 0
    status = SolverStatus.MAX_ITER
    delta = 0.0
    kkt = {}
    yhat = y.copy()
    outer = 0
    deadline = np.inf if opts.time_limit is None else time.monotonic() + opts.time_limit

    for outer in range(1, opts.max_outer_iters + 1):
        if opts.kkt_polish and m:
            if not kkt:
                kkt = kkt_residuals(nlp, red.expand(r), y)
            stat_rel = kkt["stationarity"] / (1.0 + float(np.max(np.abs(y), initial=0.0)))
            if kkt["feasibility"] <= POLISH_FEASIBILITY and stat_rel <= polish_gate:
                r_p, y_p, ok, _ = _kkt_polish(nlp, red, r, y, opts)
                kkt_p = kkt_residuals(nlp, red.expand(r_p), y_p) if ok else None
                if ok and _meets(kkt_p, y_p, opts):
                    r, y, yhat, kkt = r_p, y_p, y_p, kkt_p
                    status = SolverStatus.OPTIMAL
                    break
                polish_gate = 0.1 * stat_rel
        ynorm = float(np.max(np.abs(y), initial=0.0))
        omega = max(omega_k, 0.2 * opts.optimality_tol * (1.0 + ynorm))
        phi, z, c, yhat = merit(r, y, rho)
        steps_before = total_inner
        for _ in range(opts.max_inner_iters):
            g_full = nlp.gradient(z)
            J = nlp.jacobian(z) if m else None
            if m:
                g_full = g_full + J.T @ yhat
            gr = red.grad(g_full)
            if np.max(np.abs(gr), initial=0.0) <= omega or time.monotonic() > deadline:
                break
            total_inner += 1
            s = c + y / rho
            active = (s < lo) | (s > hi) | (lo == hi)
            H = nlp.lagrangian_hessian(z, yhat, 1.0)
            if m and np.any(active):
                Ja = J[np.flatnonzero(active)]
                H = H + rho * (Ja.T @ Ja)
            R = red.hess(H)
            step, delta, smaller_ok = _newton_step(R, gr, delta, try_smaller=skip_smaller == 0)
            skip_smaller = 0 if smaller_ok else (skip_smaller - 1 if skip_smaller else 3)
            slope = float(gr @ step)
            if not np.isfinite(slope) or slope >= 0:
                step, slope = -gr, -float(gr @ gr)
            alpha, accepted = 1.0, False
            for _ls in range(40):
                phi_t, z_t, c_t, y_t = merit(r + alpha * step, y, rho)
                if np.isfinite(phi_t) and phi_t <= phi + 1e-4 * alpha * slope:
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                delta = max(100.0 * delta, SHIFT_NEGLIGIBLE)
                if delta > 1e20:
                    break
                continue
            stalled = phi - phi_t <= 8 * np.finfo(float).eps * max(1.0, abs(phi))
            r = r + alpha * step
            phi, z, c, yhat = phi_t, z_t, c_t, y_t
            log.debug("  inner phi=%.12g |g|=%.3e alpha=%.3g delta=%.3g", phi,
                      float(np.max(np.abs(gr))), alpha, delta)
            if abs(phi) > DIVERGENCE_LIMIT or stalled:
                break
            # a full unshifted Newton step that meets the infeasibility target
            # hands control back to the multiplier update
            if alpha == 1.0 and delta <= SHIFT_NEGLIGIBLE and m and np.max(np.abs(yhat - y)) / rho <= max(PENALTY_DECREASE * v_prev, opts.feasibility_tol):
                break

        f = nlp.objective(z)
        if not np.isfinite(f) or abs(f) > DIVERGENCE_LIMIT or rho > DIVERGENCE_LIMIT:
            status = SolverStatus.DIVERGED
            break
        # infeasibility including complementarity of the inequality rows
        v_k = float(np.max(np.abs(yhat - y), initial=0.0)) / rho
        y = np.clip(yhat, -MULTIPLIER_SAFEGUARD, MULTIPLIER_SAFEGUARD)
        if total_inner > steps_before:
            if v_k > max(PENALTY_DECREASE * v_prev, opts.feasibility_tol):
                rho *= opts.penalty_growth
            v_prev = v_k
        omega_k = 0.1 * omega_k
        kkt = kkt_residuals(nlp, z, yhat)
        log.debug("outer %d rho=%.1e f=%.10g %s", outer, rho, f, kkt)
        if _meets(kkt, yhat, opts):
            status = SolverStatus.OPTIMAL
            break
        # feasible but no longer improving: stop rather than grind at rounding level
        if kkt["stationarity"] < 0.9 * best_stat:
            best_stat, stall_count = kkt["stationarity"], 0
        else:
            stall_count += 1
        if kkt["feasibility"] <= opts.feasibility_tol and stall_count >= STALL_OUTER_ITERS:
            break
        if time.monotonic() > deadline:
            log.info("time limit reached after %d outer iterations", outer)
            break
    else:
        outer = opts.max_outer_iters

    z = red.expand(r)
    c = nlp.constraints(z)
    if status is not SolverStatus.OPTIMAL:
        kkt = kkt_residuals(nlp, z, yhat)
        if status is SolverStatus.MAX_ITER and kkt["feasibility"] <= opts.feasibility_tol:
            status = SolverStatus.FEASIBLE
    mult = {name: yhat[sl].copy() for name, sl in nlp.blocks.items()}
    if getattr(nlp, "A_lin", None) is not None and nlp.A_lin.shape[0]:
        mult["linear"] = linear_multipliers(nlp, z, yhat)
    return NlpSolution(
        z=z,
        multipliers=mult,
        status=status,
        kkt=kkt,
        objective=nlp.objective(z),
        outer_iterations=outer,
        inner_iterations=total_inner,
        penalty=rho,
    )


def _kkt_polish(nlp, red, r, y, opts, max_iter=POLISH_ITERS):
    """Primal-dual Newton iterations on the KKT system of the active rows.

    Equality rows and inequality rows whose multiplier is nonzero are held
    at their bounds.  A step is kept only if it reduces the largest of the
    scaled stationarity, infeasibility and complementarity.  Returns the improved
    ``(r, y)``, whether the tolerances were met, and the residual reached.
    """
    lo, hi = nlp.cl, nlp.cu
    eq = lo == hi
    rows = np.flatnonzero(eq | ((y < 0) & np.isfinite(lo)) | ((y > 0) & np.isfinite(hi)))
    target = np.where(eq[rows] | (y[rows] < 0), lo[rows], hi[rows])
    ineq_lo = ~eq[rows] & (y[rows] < 0)
    ineq_hi = ~eq[rows] & (y[rows] > 0)

    def evaluate(r_, y_):
        z_ = red.expand(r_)
        try:
            c_ = nlp.constraints(z_)
            J_ = nlp.jacobian(z_)
            gr_ = red.grad(nlp.gradient(z_) + J_.T @ y_)
        except EvaluatorError:
            return None
        if not (np.all(np.isfinite(c_)) and np.all(np.isfinite(gr_))):
            return None
        stat = float(np.max(np.abs(gr_), initial=0.0)) / (1.0 + float(np.max(np.abs(y_), initial=0.0)))
        feas = _violation(c_, lo, hi)
        comp = _complementarity(c_, y_, lo, hi)
        return z_, c_, J_, gr_, stat, feas, comp

    def merit(ev):
        return max(ev[4] / opts.optimality_tol, ev[5] / opts.feasibility_tol, ev[6] / opts.complementarity_tol)

    def converged(ev):
        return ev[4] <= opts.optimality_tol and ev[5] <= opts.feasibility_tol and ev[6] <= opts.complementarity_tol

    cur = evaluate(r, y)
    if cur is None:
        return r, y, False, np.inf
    theta = merit(cur)
    for _ in range(max_iter):
        z, c, J, gr, stat, feas, comp = cur
        if converged(cur):
            return r, y, True, theta
        R = red.hess(nlp.lagrangian_hessian(z, y, 1.0))
        Jr = red.jac(J[rows])
        nr = R.shape[0]
        K = np.block([[R, Jr.T], [Jr, np.zeros((rows.size, rows.size))]])
        rhs = -np.r_[gr, c[rows] - target]
        scale = np.max(np.abs(K), axis=1)
        D = 1.0 / np.sqrt(np.where(scale > 0, scale, 1.0))
        K *= D[:, None]
        K *= D[None, :]
        try:
            sol = D * la.solve(K, D * rhs, assume_a="sym", check_finite=False)
        except (la.LinAlgError, ValueError):
            break
        if not np.all(np.isfinite(sol)):
            break
        dr, dy = sol[:nr], sol[nr:]
        alpha = 1.0
        for _ls in range(6):
            y_t = y.copy()
            y_t[rows] += alpha * dy
            if np.any(y_t[rows][ineq_lo] > 0) or np.any(y_t[rows][ineq_hi] < 0):
                alpha *= 0.5
                continue
            trial = evaluate(r + alpha * dr, y_t)
            if trial is not None:
                theta_t = merit(trial)
                if theta_t <= (1.0 - 1e-4 * alpha) * theta:
                    break
            alpha *= 0.5
        else:
            break
        r, y, cur, theta = r + alpha * dr, y_t, trial, theta_t
        log.debug("  polish stat=%.3e feas=%.3e alpha=%.3g", trial[4], trial[5], alpha)
    return r, y, converged(cur), theta


def _newton_step(R, g, delta, try_smaller=True):
    """Solve (R + d diag|R|) p = -g for the smallest tried relative shift d that factors.

    The matrix is Jacobi-equilibrated first, so the shift acts relative to
    each variable's own curvature.  Tries ``delta / 10`` (zero once
    negligible) when ``try_smaller`` is set, then ``delta``, then grows the
    shift tenfold.  Returns the step, the shift used and whether the smaller
    trial succeeded.
    """
    d = np.abs(np.diag(R))
    d = np.where(d > 0, d, 1.0)
    D = 1.0 / np.sqrt(d)
    S = R * D[:, None]
    S *= D[None, :]
    rhs = -g * D
    eye = np.eye(R.shape[0])
    shift = (delta / 10.0 if delta > SHIFT_FLOOR else 0.0) if try_smaller else delta
    first = shift
    while shift <= 1e20:
        try:
            cf = la.cho_factor(S + shift * eye, lower=True, check_finite=False)
            return D * la.cho_solve(cf, rhs, check_finite=False), shift, shift == first
        except la.LinAlgError:
            shift = delta if shift < delta else max(10.0 * shift, SHIFT_FLOOR)
    return -g, shift, False


# ---------------------------------------------------------------------------
# covectors


def extract_covectors(sol: NlpSolution, nlp: TranscribedNlp) -> DualTrajectories:
    """Map NLP multipliers to costate, path and event covectors at the nodes.

    ``lambda_k = -psi_k / w_k`` for collocation multipliers ``psi`` and
    ``mu_k = m_k / w_k`` for path multipliers ``m``.  ``mu`` is a density per
    unit tau, so ``sum_k w_k mu_k`` is the path-covector mass over the arc and
    ``mu / gamma`` the density per unit time.  All values are in the units of
    the scaled problem (they carry the factor ``cost_scale``).
    """
    if sol.status not in (SolverStatus.OPTIMAL, SolverStatus.FEASIBLE):
        log.warning("extracting covectors from a %s solution", sol.status.value)
    w = np.asarray(nlp.wB)
    if np.any(w == 0):
        raise ArithmeticError("zero Birkhoff weight")
    ocp, K = nlp.ocp, nlp.K
    z = sol.z
    psi = sol.multipliers["collocation"].reshape(K, ocp.nx).T
    lam = -psi / w
    if ocp.nh:
        mu = sol.multipliers["path"].reshape(K, ocp.nh).T / w
    else:
        mu = np.zeros((0, K))
    nu = np.asarray(sol.multipliers.get("events", np.zeros(0)), dtype=float)
    H = hamiltonian_samples(nlp, z, lam)
    return DualTrajectories(lam=lam, mu=mu, nu=nu, hamiltonian=H, cost_scale=ocp.cost_scale)


def hamiltonian_samples(nlp: TranscribedNlp, z, lam) -> np.ndarray:
    """``cost_scale * F + lambda^T f`` at the nodes."""
    ocp = nlp.ocp
    parts = nlp.layout.unpack(z)
    t = nlp.node_times(z)
    p = np.repeat(parts["p"].reshape(-1, 1), nlp.K, axis=1)
    f = np.asarray(ocp.dynamics(parts["X"], parts["U"], t, p)).reshape(ocp.nx, -1)
    H = np.sum(lam * f, axis=0)
    if ocp.running_cost is not None:
        H = H + ocp.cost_scale * np.broadcast_to(ocp.running_cost(parts["X"], parts["U"], t, p), (nlp.K,))
    return H


# ---------------------------------------------------------------------------
# warm-started solves


@dataclass
class OcpSolveResult:
    nlp: TranscribedNlp
    solution: NlpSolution
    duals: DualTrajectories
    history: list = field(default_factory=list)

    @property
    def times(self):
        return self.nlp.node_times(self.solution.z)

    @property
    def parts(self):
        return self.nlp.layout.unpack(self.solution.z)


def _transfer(prev: OcpSolveResult, nlp: TranscribedNlp):
    """Interpolate a previous primal-dual solution onto a new grid."""
    pp = prev.parts
    tau_old = prev.nlp.tau
    tau_new = nlp.tau
    V = resample(pp["V"], tau_old, tau_new)
    U = resample(pp["U"], tau_old, tau_new)
    z = nlp.layout.pack(np.zeros_like(V), V, U, pp["xa"], pp["xb"], pp["tb"], pp["p"])
    z = nlp.consistent(z)

    y = np.zeros(nlp.m)
    w = nlp.wB
    lam = resample(prev.duals.lam, tau_old, tau_new)
    y[nlp.blocks["collocation"]] = (-lam * w).T.ravel()
    if nlp.ocp.nh:
        mu = resample(prev.duals.mu, tau_old, tau_new)
        y[nlp.blocks["path"]] = (mu * w).T.ravel()
    if nlp.ocp.ne:
        y[nlp.blocks["events"]] = prev.solution.multipliers["events"]
    return z, y


def solve_ocp(
    ocp: OcpDefinition,
    grid_name: str,
    N: int,
    options: SolverOptions = SolverOptions(),
    ladder: Sequence[int] = (20, 80),
    guess: Optional[Callable[[TranscribedNlp], np.ndarray]] = None,
) -> OcpSolveResult:
    """Transcribe and solve, warm-starting through the coarser ``ladder`` orders."""
    rungs = sorted({n for n in ladder if n < N}) + [N]
    prev: Optional[OcpSolveResult] = None
    history = []
    for n in rungs:
        grid = make_grid(GridSpec.from_name(grid_name, n))
        nlp = transcribe(ocp, grid, build_birkhoff(grid))
        y0 = None
        if prev is not None:
            z0, y0 = _transfer(prev, nlp)
        elif guess is not None:
            z0 = guess(nlp)
        elif options.initial_guess is not None and n == N:
            z0 = options.initial_guess
        else:
            z0 = nlp.consistent(nlp.guess_from_boundary())
        rung_opts = replace(options, initial_guess=z0, initial_multipliers=y0)
        sol = solve_nlp(nlp, rung_opts)
        duals = extract_covectors(sol, nlp)
        prev = OcpSolveResult(nlp, sol, duals)
        history.append((n, sol.status, sol.objective, sol.outer_iterations, sol.inner_iterations))
        log.info("N=%d status=%s J=%.10g outer=%d inner=%d", *history[-1][:1], sol.status.value,
                 sol.objective, sol.outer_iterations, sol.inner_iterations)
    prev.history = history
    return prev
