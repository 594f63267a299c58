"""Bolza optimal control problems and their a-form Birkhoff transcription.

Evaluator conventions
---------------------
Node evaluators are vectorised over a trailing node axis::

    dynamics(x, u, t, p)      -> (nx, K)
    running_cost(x, u, t, p)  -> (K,)
    path(x, u, t, p)          -> (nh, K)

with ``x`` of shape ``(nx, K)``, ``u`` of shape ``(nu, K)``, ``t`` of shape
``(K,)`` and ``p`` of shape ``(np, K)``.  Endpoint evaluators take plain
vectors::

    endpoint_cost(xa, xb, ta, tb, p) -> float
    events(xa, xb, ta, tb, p)        -> (ne,)

Decision vector layout (node-major blocks)::

    z = [X[:, 0], ..., X[:, N], V[:, 0], ..., V[:, N], U[:, 0], ..., U[:, N],
         xa, xb, tb (free final time only), p]
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp

from .birkhoff import BirkhoffSystem, build_birkhoff, interpolation_matrix
from .grids import Grid, GridSpec, make_grid

FD_STEP = 1e-6
FD_HESS_STEP = 1e-4


class TranscriptionError(ValueError):
    pass


class EvaluatorError(ArithmeticError):
    """An evaluator returned non-finite values."""

    def __init__(self, evaluator: str, index: Optional[int] = None):
        where = "" if index is None else f" at element {index}"
        super().__init__(f"{evaluator} returned non-finite values{where}")
        self.evaluator = evaluator
        self.index = index


@dataclass(frozen=True)
class FixedTime:
    t_a: float
    t_b: float

    def __post_init__(self):
        if not self.t_b > self.t_a:
            raise TranscriptionError(f"need t_b > t_a, got [{self.t_a}, {self.t_b}]")


@dataclass(frozen=True)
class FreeFinalTime:
    t_a: float
    tb_lower: float
    tb_upper: float
    tb_guess: Optional[float] = None

    def __post_init__(self):
        if not self.tb_upper > self.tb_lower or not self.tb_lower > self.t_a:
            raise TranscriptionError(
                f"final-time bounds [{self.tb_lower}, {self.tb_upper}] must exceed t_a={self.t_a}"
            )

    @property
    def guess(self) -> float:
        if self.tb_guess is not None:
            return self.tb_guess
        return 0.5 * (self.tb_lower + self.tb_upper)


TimeMode = Union[FixedTime, FreeFinalTime]


@dataclass(frozen=True)
class OcpDefinition:
    """Bolza problem data.

    ``boundary_guess`` holds state values at t_a and t_b used for the default
    straight-line initial guess; ``dynamics_jac(x, u, t, p)`` optionally
    returns ``(f_x, f_u)`` with shapes ``(nx, nx, K)`` and ``(nx, nu, K)``.
    """

    nx: int
    nu: int
    dynamics: Callable
    time: TimeMode
    running_cost: Optional[Callable] = None
    endpoint_cost: Optional[Callable] = None
    events: Optional[Callable] = None
    events_lower: np.ndarray = field(default_factory=lambda: np.zeros(0))
    events_upper: np.ndarray = field(default_factory=lambda: np.zeros(0))
    path: Optional[Callable] = None
    path_lower: np.ndarray = field(default_factory=lambda: np.zeros(0))
    path_upper: np.ndarray = field(default_factory=lambda: np.zeros(0))
    n_params: int = 0
    param_guess: Optional[np.ndarray] = None
    cost_scale: float = 1.0
    dynamics_jac: Optional[Callable] = None
    boundary_guess: Optional[tuple] = None
    control_guess: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self):
        for lo, hi, what in (
            (self.events_lower, self.events_upper, "event"),
            (self.path_lower, self.path_upper, "path"),
        ):
            lo = np.asarray(lo, dtype=float)
            hi = np.asarray(hi, dtype=float)
            if lo.shape != hi.shape:
                raise TranscriptionError(f"{what} bounds have mismatched shapes")
            if np.any(lo > hi):
                raise TranscriptionError(f"{what} lower bound exceeds upper bound")
        if not self.cost_scale > 0:
            raise TranscriptionError("cost_scale must be positive")

    @property
    def ne(self) -> int:
        return int(np.size(self.events_lower))

    @property
    def nh(self) -> int:
        return int(np.size(self.path_lower))

    @property
    def free_final_time(self) -> bool:
        return isinstance(self.time, FreeFinalTime)

    def with_cost_scale(self, scale: float) -> "OcpDefinition":
        from dataclasses import replace

        return replace(self, cost_scale=float(scale))


@dataclass(frozen=True)
class DomainMap:
    t_a: float
    t_b: float

    @property
    def gamma(self) -> float:
        return 0.5 * (self.t_b - self.t_a)

    def __call__(self, tau):
        return self.gamma * np.asarray(tau) + 0.5 * (self.t_b + self.t_a)

    def inverse(self, t):
        return (np.asarray(t) - 0.5 * (self.t_b + self.t_a)) / self.gamma


def affine_domain_map(t_a: float, t_b: float) -> DomainMap:
    if not t_b > t_a:
        raise TranscriptionError(f"invalid interval: t_b={t_b} must exceed t_a={t_a}")
    return DomainMap(float(t_a), float(t_b))


def assemble_linear_system(sys: BirkhoffSystem) -> tuple[np.ndarray, np.ndarray]:
    """Dense ``A_a`` ((N+2) x 2(N+1)) and ``C_a`` ((N+2) x 2)."""
    N = sys.N
    A = np.zeros((N + 2, 2 * (N + 1)))
    A[: N + 1, : N + 1] = np.eye(N + 1)
    A[: N + 1, N + 1 :] = -sys.Ba
    A[N + 1, N + 1 :] = sys.wB
    C = np.zeros((N + 2, 2))
    C[: N + 1, 0] = 1.0
    C[N + 1] = (-1.0, 1.0)
    return A, C


@dataclass(frozen=True)
class Layout:
    nx: int
    nu: int
    N: int
    free_tb: bool
    n_params: int

    @property
    def K(self) -> int:
        return self.N + 1

    @property
    def X(self) -> slice:
        return slice(0, self.nx * self.K)

    @property
    def V(self) -> slice:
        s = self.nx * self.K
        return slice(s, 2 * s)

    @property
    def U(self) -> slice:
        s = 2 * self.nx * self.K
        return slice(s, s + self.nu * self.K)

    @property
    def xa(self) -> slice:
        s = self.U.stop
        return slice(s, s + self.nx)

    @property
    def xb(self) -> slice:
        s = self.xa.stop
        return slice(s, s + self.nx)

    @property
    def tb(self) -> Optional[int]:
        return self.xb.stop if self.free_tb else None

    @property
    def p(self) -> slice:
        s = self.xb.stop + int(self.free_tb)
        return slice(s, s + self.n_params)

    @property
    def size(self) -> int:
        return self.p.stop

    def unpack(self, z) -> dict:
        z = np.asarray(z)
        return {
            "X": z[self.X].reshape(self.K, self.nx).T,
            "V": z[self.V].reshape(self.K, self.nx).T,
            "U": z[self.U].reshape(self.K, self.nu).T,
            "xa": z[self.xa],
            "xb": z[self.xb],
            "tb": None if self.tb is None else float(z[self.tb]),
            "p": z[self.p],
        }

    def pack(self, X, V, U, xa, xb, tb=None, p=None) -> np.ndarray:
        z = np.zeros(self.size)
        z[self.X] = np.asarray(X, dtype=float).T.ravel()
        z[self.V] = np.asarray(V, dtype=float).T.ravel()
        z[self.U] = np.asarray(U, dtype=float).T.ravel()
        z[self.xa] = xa
        z[self.xb] = xb
        if self.tb is not None:
            z[self.tb] = tb
        if self.n_params:
            z[self.p] = p
        return z


@dataclass
class NlpEvaluation:
    objective: float
    constraints: dict
    jacobian: sp.csr_matrix


def _finite(values, name):
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise EvaluatorError(name, int(np.flatnonzero(~np.isfinite(values.ravel()))[0]))
    return values


class TranscribedNlp:
    """Problem P_a on a grid: objective, constraint blocks and derivatives.

    Constraint blocks, in order: ``linear`` (A_a rows, exact and linear),
    then the nonlinear rows ``collocation``, ``events``, ``path`` and
    ``time`` (final-time bounds, free-time problems only).
    """

    def __init__(self, ocp: OcpDefinition, grid: Grid, birkhoff: BirkhoffSystem):
        if birkhoff.grid is not grid and birkhoff.N != grid.N:
            raise TranscriptionError("Birkhoff system does not match the grid")
        self.ocp = ocp
        self.grid = grid
        self.birkhoff = birkhoff
        self.layout = Layout(ocp.nx, ocp.nu, grid.N, ocp.free_final_time, ocp.n_params)
        self.tau = np.asarray(grid.nodes)
        self.wB = np.asarray(birkhoff.wB)
        self.t_a = float(ocp.time.t_a)
        self._build_index_maps()
        self._build_linear_block()
        self._build_bounds()

    # ------------------------------------------------------------------ layout

    @property
    def n(self) -> int:
        return self.layout.size

    @property
    def K(self) -> int:
        return self.layout.K

    def _build_index_maps(self):
        L, nx, nu, K = self.layout, self.ocp.nx, self.ocp.nu, self.K
        k = np.arange(K)
        rows = [L.X.start + nx * k + i for i in range(nx)]
        rows += [L.U.start + nu * k + j for j in range(nu)]
        if L.free_tb:
            rows.append(np.full(K, L.tb))
        rows += [np.full(K, L.p.start + j) for j in range(L.n_params)]
        # node_index[r, k]: decision-vector index of local input r at node k
        self.node_index = np.array(rows, dtype=int).reshape(-1, K)
        self.d_node = self.node_index.shape[0]
        ep = list(range(L.xa.start, L.xa.stop)) + list(range(L.xb.start, L.xb.stop))
        if L.free_tb:
            ep.append(L.tb)
        ep += list(range(L.p.start, L.p.stop))
        self.endpoint_index = np.array(ep, dtype=int)

        self.block_sizes = {
            "collocation": nx * K,
            "events": self.ocp.ne,
            "path": self.ocp.nh * K,
            "time": int(L.free_tb),
        }
        self.blocks = {}
        start = 0
        for name, size in self.block_sizes.items():
            self.blocks[name] = slice(start, start + size)
            start += size
        self.m = start

    def _build_linear_block(self):
        """Sparse rows of ``A_a [X^T; V^T] - C_a [xa^T; xb^T]``, state-major."""
        L, nx, N, K = self.layout, self.ocp.nx, self.grid.N, self.K
        Ba, wB = np.asarray(self.birkhoff.Ba), self.wB
        rows, cols, vals = [], [], []
        for i in range(nx):
            r0 = i * (N + 2)
            kk = np.arange(K)
            rows.append(r0 + kk)
            cols.append(L.X.start + nx * kk + i)
            vals.append(np.ones(K))
            r, c = np.meshgrid(kk, kk, indexing="ij")
            rows.append(r0 + r.ravel())
            cols.append(L.V.start + nx * c.ravel() + i)
            vals.append(-Ba.ravel())
            rows.append(r0 + kk)
            cols.append(np.full(K, L.xa.start + i))
            vals.append(-np.ones(K))
            rows.append(np.full(K, r0 + N + 1))
            cols.append(L.V.start + nx * kk + i)
            vals.append(wB)
            rows.append([r0 + N + 1, r0 + N + 1])
            cols.append([L.xa.start + i, L.xb.start + i])
            vals.append([1.0, -1.0])
        self.A_lin = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(nx * (N + 2), self.n),
        )

        # X and xb are affine in (V, xa): the solver eliminates them
        dep = np.concatenate([np.arange(L.X.start, L.X.stop), np.arange(L.xb.start, L.xb.stop)])
        mask = np.ones(self.n, dtype=bool)
        mask[dep] = False
        indep = np.flatnonzero(mask)
        core = np.concatenate([np.arange(L.V.start, L.V.stop), np.arange(L.xa.start, L.xa.stop)])
        E = np.zeros((dep.size, core.size))
        nV = nx * K
        for i in range(nx):
            vcols = nx * np.arange(K) + i
            xrows = nx * np.arange(K) + i
            E[np.ix_(xrows, vcols)] = Ba
            E[xrows, nV + i] = 1.0
            E[nx * K + i, vcols] = wB
            E[nx * K + i, nV + i] = 1.0
        pos = np.full(self.n, -1)
        pos[indep] = np.arange(indep.size)
        # E is block diagonal over states: (X[:, i], xb[i]) depends only on (V[:, i], xa[i])
        groups = [
            (np.r_[nx * np.arange(K) + i, nx * K + i], np.r_[nx * np.arange(K) + i, nV + i])
            for i in range(nx)
        ]
        self.elimination = {"dep": dep, "indep": indep, "core": pos[core], "E": E, "groups": groups}

    def _build_bounds(self):
        ocp, K = self.ocp, self.K
        lo = np.zeros(self.m)
        hi = np.zeros(self.m)
        b = self.blocks
        lo[b["events"]] = ocp.events_lower
        hi[b["events"]] = ocp.events_upper
        lo[b["path"]] = np.tile(np.asarray(ocp.path_lower, dtype=float), K)
        hi[b["path"]] = np.tile(np.asarray(ocp.path_upper, dtype=float), K)
        if self.layout.free_tb:
            lo[b["time"]] = ocp.time.tb_lower
            hi[b["time"]] = ocp.time.tb_upper
        self.cl, self.cu = lo, hi

    # ------------------------------------------------------------- node maths

    def final_time(self, z) -> float:
        tb = self.layout.tb
        return float(z[tb]) if tb is not None else float(self.ocp.time.t_b)

    def node_times(self, z) -> np.ndarray:
        return affine_domain_map(self.t_a, self.final_time(z))(self.tau)

    def _node_inputs(self, z) -> np.ndarray:
        return np.asarray(z, dtype=float)[self.node_index]

    def _split(self, Q):
        nx, nu = self.ocp.nx, self.ocp.nu
        x = Q[:nx]
        u = Q[nx : nx + nu]
        r = nx + nu
        if self.layout.free_tb:
            tb = Q[r]
            r += 1
        else:
            tb = np.full(Q.shape[1], float(self.ocp.time.t_b))
        p = Q[r : r + self.layout.n_params]
        gamma = 0.5 * (tb - self.t_a)
        t = gamma * self.tau + 0.5 * (tb + self.t_a)
        return x, u, t, p, gamma

    def _obj_nodes(self, Q):
        if self.ocp.running_cost is None:
            return np.zeros(Q.shape[1])
        x, u, t, p, gamma = self._split(Q)
        F = np.broadcast_to(self.ocp.running_cost(x, u, t, p), (Q.shape[1],))
        return self.ocp.cost_scale * gamma * self.wB * F

    def _dyn_nodes(self, Q):
        x, u, t, p, gamma = self._split(Q)
        return gamma * np.asarray(self.ocp.dynamics(x, u, t, p)).reshape(self.ocp.nx, -1)

    def _path_nodes(self, Q):
        x, u, t, p, _ = self._split(Q)
        return np.asarray(self.ocp.path(x, u, t, p)).reshape(self.ocp.nh, -1)

    def _node_jacobian(self, fun, Q, m):
        """Central-difference Jacobian, shape (m, d, K)."""
        d, K = Q.shape
        J = np.empty((m, d, K))
        for r in range(d):
            h = FD_STEP * np.maximum(1.0, np.abs(Q[r]))
            Qp = Q.copy()
            Qp[r] += h
            Qm = Q.copy()
            Qm[r] -= h
            J[:, r, :] = (np.reshape(fun(Qp), (m, K)) - np.reshape(fun(Qm), (m, K))) / (2 * h)
        return J

    def _node_hessian(self, phi, Q):
        """Central-difference Hessian of a per-node scalar, shape (d, d, K)."""
        d, K = Q.shape
        H = np.empty((d, d, K))
        h = FD_HESS_STEP * np.maximum(1.0, np.abs(Q))
        f0 = phi(Q)
        for r in range(d):
            Qp = Q.copy()
            Qp[r] += h[r]
            Qm = Q.copy()
            Qm[r] -= h[r]
            H[r, r] = (phi(Qp) - 2 * f0 + phi(Qm)) / h[r] ** 2
            for s in range(r):
                acc = 0.0
                for a, b, sign in ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)):
                    Qs = Q.copy()
                    Qs[r] += a * h[r]
                    Qs[s] += b * h[s]
                    acc = acc + sign * phi(Qs)
                H[r, s] = H[s, r] = acc / (4 * h[r] * h[s])
        return H

    def _dyn_jacobian(self, Q):
        nx, nu = self.ocp.nx, self.ocp.nu
        if self.ocp.dynamics_jac is None:
            return self._node_jacobian(self._dyn_nodes, Q, nx)
        x, u, t, p, gamma = self._split(Q)
        fx, fu = self.ocp.dynamics_jac(x, u, t, p)
        J = np.empty((nx, Q.shape[0], Q.shape[1]))
        J[:, :nx] = gamma * np.asarray(fx).reshape(nx, nx, -1)
        J[:, nx : nx + nu] = gamma * np.asarray(fu).reshape(nx, nu, -1)
        if Q.shape[0] > nx + nu:
            rest = self._node_jacobian(self._dyn_nodes, Q, nx)
            J[:, nx + nu :] = rest[:, nx + nu :]
        return J

    # --------------------------------------------------------- endpoint maths

    def _split_endpoint(self, ep):
        nx = self.ocp.nx
        xa, xb = ep[:nx], ep[nx : 2 * nx]
        r = 2 * nx
        if self.layout.free_tb:
            tb = ep[r]
            r += 1
        else:
            tb = float(self.ocp.time.t_b)
        return xa, xb, self.t_a, tb, ep[r:]

    def _endpoint_cost(self, ep) -> float:
        if self.ocp.endpoint_cost is None:
            return 0.0
        return self.ocp.cost_scale * float(self.ocp.endpoint_cost(*self._split_endpoint(ep)))

    def _events(self, ep) -> np.ndarray:
        if self.ocp.events is None:
            return np.zeros(0)
        return np.asarray(self.ocp.events(*self._split_endpoint(ep)), dtype=float).reshape(-1)

    def _ep_jacobian(self, fun, ep, m):
        J = np.empty((m, ep.size))
        for r in range(ep.size):
            h = FD_STEP * max(1.0, abs(ep[r]))
            e1, e2 = ep.copy(), ep.copy()
            e1[r] += h
            e2[r] -= h
            J[:, r] = (np.reshape(fun(e1), m) - np.reshape(fun(e2), m)) / (2 * h)
        return J

    def _ep_hessian(self, phi, ep):
        d = ep.size
        H = np.empty((d, d))
        h = FD_HESS_STEP * np.maximum(1.0, np.abs(ep))
        f0 = phi(ep)
        for r in range(d):
            e1, e2 = ep.copy(), ep.copy()
            e1[r] += h[r]
            e2[r] -= h[r]
            H[r, r] = (phi(e1) - 2 * f0 + phi(e2)) / h[r] ** 2
            for s in range(r):
                acc = 0.0
                for a, b, sign in ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)):
                    es = ep.copy()
                    es[r] += a * h[r]
                    es[s] += b * h[s]
                    acc += sign * phi(es)
                H[r, s] = H[s, r] = acc / (4 * h[r] * h[s])
        return H

    # ------------------------------------------------------- public interface

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        Q = self._node_inputs(z)
        val = float(np.sum(_finite(self._obj_nodes(Q), "running_cost")))
        return val + _finite(self._endpoint_cost(z[self.endpoint_index]), "endpoint_cost")

    def gradient(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        g = np.zeros(self.n)
        if self.ocp.running_cost is not None:
            Q = self._node_inputs(z)
            J = self._node_jacobian(self._obj_nodes, Q, 1)[0]
            np.add.at(g, self.node_index, J)
        if self.ocp.endpoint_cost is not None:
            ep = z[self.endpoint_index]
            g[self.endpoint_index] += self._ep_jacobian(self._endpoint_cost, ep, 1)[0]
        return g

    def constraints(self, z) -> np.ndarray:
        """Nonlinear constraint rows (collocation, events, path, time)."""
        z = np.asarray(z, dtype=float)
        Q = self._node_inputs(z)
        L = self.layout
        c = np.empty(self.m)
        V = z[L.V].reshape(self.K, self.ocp.nx).T
        c[self.blocks["collocation"]] = (V - _finite(self._dyn_nodes(Q), "dynamics")).T.ravel()
        if self.ocp.ne:
            c[self.blocks["events"]] = _finite(self._events(z[self.endpoint_index]), "events")
        if self.ocp.nh:
            c[self.blocks["path"]] = _finite(self._path_nodes(Q), "path").T.ravel()
        if L.free_tb:
            c[self.blocks["time"]] = z[L.tb]
        return c

    def linear_residual(self, z) -> np.ndarray:
        return self.A_lin @ np.asarray(z, dtype=float)

    def jacobian(self, z) -> sp.csr_matrix:
        z = np.asarray(z, dtype=float)
        Q = self._node_inputs(z)
        nx, nh, K, d = self.ocp.nx, self.ocp.nh, self.K, self.d_node
        L = self.layout
        rows, cols, vals = [], [], []
        k = np.arange(K)

        r0 = self.blocks["collocation"].start
        Jf = self._dyn_jacobian(Q)
        for i in range(nx):
            rr = r0 + nx * k + i
            rows.append(rr)
            cols.append(L.V.start + nx * k + i)
            vals.append(np.ones(K))
            rows.append(np.repeat(rr[None, :], d, axis=0).ravel())
            cols.append(self.node_index.ravel())
            vals.append(-Jf[i].ravel())

        if nh:
            r0 = self.blocks["path"].start
            Jh = self._node_jacobian(self._path_nodes, Q, nh)
            for j in range(nh):
                rr = r0 + nh * k + j
                rows.append(np.repeat(rr[None, :], d, axis=0).ravel())
                cols.append(self.node_index.ravel())
                vals.append(Jh[j].ravel())

        if self.ocp.ne:
            ep = z[self.endpoint_index]
            Je = self._ep_jacobian(self._events, ep, self.ocp.ne)
            r0 = self.blocks["events"].start
            rr, cc = np.meshgrid(r0 + np.arange(self.ocp.ne), self.endpoint_index, indexing="ij")
            rows.append(rr.ravel())
            cols.append(cc.ravel())
            vals.append(Je.ravel())

        if L.free_tb:
            rows.append([self.blocks["time"].start])
            cols.append([L.tb])
            vals.append([1.0])

        J = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.m, self.n),
        )
        if not np.all(np.isfinite(J.data)):
            raise EvaluatorError("jacobian", int(np.flatnonzero(~np.isfinite(J.data))[0]))
        return J

    def lagrangian_hessian(self, z, y, obj_factor: float = 1.0) -> sp.csr_matrix:
        """Hessian of ``obj_factor * J + y^T c`` over the nonlinear rows."""
        z = np.asarray(z, dtype=float)
        y = np.asarray(y, dtype=float)
        nx, nh, K = self.ocp.nx, self.ocp.nh, self.K
        y_col = y[self.blocks["collocation"]].reshape(K, nx).T
        y_path = y[self.blocks["path"]].reshape(K, nh).T if nh else None
        Q = self._node_inputs(z)

        def phi(Qs):
            val = -np.sum(y_col * self._dyn_nodes(Qs), axis=0)
            if self.ocp.running_cost is not None and obj_factor:
                val = val + obj_factor * self._obj_nodes(Qs)
            if nh:
                val = val + np.sum(y_path * self._path_nodes(Qs), axis=0)
            return val

        Hn = self._node_hessian(phi, Q)
        d = self.d_node
        ri = np.repeat(self.node_index[:, None, :], d, axis=1)
        ci = np.repeat(self.node_index[None, :, :], d, axis=0)
        rows, cols, vals = [ri.ravel()], [ci.ravel()], [Hn.ravel()]

        y_ev = y[self.blocks["events"]]
        if self.ocp.ne or self.ocp.endpoint_cost is not None:
            ep = z[self.endpoint_index]

            def phi_ep(e):
                val = obj_factor * self._endpoint_cost(e) if obj_factor else 0.0
                if self.ocp.ne:
                    val += float(y_ev @ self._events(e))
                return val

            He = self._ep_hessian(phi_ep, ep)
            rr, cc = np.meshgrid(self.endpoint_index, self.endpoint_index, indexing="ij")
            rows.append(rr.ravel())
            cols.append(cc.ravel())
            vals.append(He.ravel())
        H = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n, self.n),
        )
        return H

    # ---------------------------------------------------------------- guesses

    def guess_from_boundary(self, x_a=None, x_b=None, u=None, tb=None, p=None) -> np.ndarray:
        """Straight-line state guess; V is its (constant) tau-derivative."""
        ocp = self.ocp
        if x_a is None or x_b is None:
            if ocp.boundary_guess is not None:
                x_a, x_b = ocp.boundary_guess
            else:
                x_a = x_b = np.zeros(ocp.nx)
        x_a = np.asarray(x_a, dtype=float)
        x_b = np.asarray(x_b, dtype=float)
        if u is None:
            u = ocp.control_guess if ocp.control_guess is not None else np.zeros(ocp.nu)
        if tb is None and self.layout.free_tb:
            tb = ocp.time.guess
        if p is None:
            p = ocp.param_guess if ocp.param_guess is not None else np.zeros(ocp.n_params)
        s = 0.5 * (self.tau + 1.0)
        X = x_a[:, None] + s[None, :] * (x_b - x_a)[:, None]
        V = np.repeat((0.5 * (x_b - x_a))[:, None], self.K, axis=1)
        U = np.repeat(np.asarray(u, dtype=float).reshape(-1, 1), self.K, axis=1)
        return self.layout.pack(X, V, U, x_a, x_b, tb, p)

    def guess_from_trajectory(self, t, X, U, tb=None, p=None) -> np.ndarray:
        """Guess from sampled states/controls; V is set from the dynamics."""
        ocp = self.ocp
        if tb is None:
            tb = float(t[-1]) if self.layout.free_tb else None
        if p is None:
            p = ocp.param_guess if ocp.param_guess is not None else np.zeros(ocp.n_params)
        t_end = tb if tb is not None else float(ocp.time.t_b)
        tk = affine_domain_map(self.t_a, t_end)(self.tau)
        t = np.asarray(t, dtype=float)
        Xk = np.array([np.interp(tk, t, row) for row in np.atleast_2d(X)])
        Uk = np.array([np.interp(tk, t, row) for row in np.atleast_2d(U)])
        x_a = np.array([np.interp(self.t_a, t, row) for row in np.atleast_2d(X)])
        z = self.layout.pack(Xk, np.zeros_like(Xk), Uk, x_a, Xk[:, -1], tb, p)
        _, _, tt, pp, gamma = self._split(self._node_inputs(z))
        V = gamma * np.asarray(ocp.dynamics(Xk, Uk, tt, pp)).reshape(ocp.nx, -1)
        return self.consistent(self.layout.pack(Xk, V, Uk, x_a, Xk[:, -1], tb, p))

    def consistent(self, z) -> np.ndarray:
        """Overwrite X and xb so the linear Birkhoff block holds exactly."""
        z = np.array(z, dtype=float)
        el = self.elimination
        r = z[el["indep"]]
        z[el["dep"]] = el["E"] @ r[el["core"]]
        return z


def transcribe(ocp: OcpDefinition, grid: Grid, sys: Optional[BirkhoffSystem] = None) -> TranscribedNlp:
    if sys is None:
        sys = build_birkhoff(grid)
    nlp = TranscribedNlp(ocp, grid, sys)
    z0 = nlp.consistent(nlp.guess_from_boundary())
    # surface evaluator failures at the initial guess with a named error
    nlp.objective(z0)
    nlp.constraints(z0)
    return nlp


def transcribe_named(ocp: OcpDefinition, grid_name: str, N: int) -> TranscribedNlp:
    grid = make_grid(GridSpec.from_name(grid_name, N))
    return transcribe(ocp, grid)


def evaluate_nlp(nlp: TranscribedNlp, z) -> NlpEvaluation:
    """Objective, constraint values per block and the stacked Jacobian.

    The Jacobian rows are ``[linear; collocation; events; path; time]``.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (nlp.n,):
        raise TranscriptionError(f"decision vector must have length {nlp.n}, got {z.shape}")
    c = nlp.constraints(z)
    blocks = {"linear": nlp.linear_residual(z)}
    for name, sl in nlp.blocks.items():
        blocks[name] = c[sl]
    J = sp.vstack([nlp.A_lin, nlp.jacobian(z)]).tocsr()
    return NlpEvaluation(nlp.objective(z), blocks, J)


def resample(values, tau_from, tau_to) -> np.ndarray:
    """Piecewise-linear resampling of node rows onto another tau grid."""
    values = np.atleast_2d(values)
    return np.array([np.interp(tau_to, tau_from, row) for row in values])


__all__ = [
    "DomainMap",
    "EvaluatorError",
    "FixedTime",
    "FreeFinalTime",
    "Layout",
    "NlpEvaluation",
    "OcpDefinition",
    "TranscribedNlp",
    "TranscriptionError",
    "affine_domain_map",
    "assemble_linear_system",
    "evaluate_nlp",
    "interpolation_matrix",
    "resample",
    "transcribe",
]
