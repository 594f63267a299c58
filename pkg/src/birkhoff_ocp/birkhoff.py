"""Birkhoff integration matrices for a grid.

``Ba[k, j]`` integrates the j-th Lagrange cardinal from -1 to tau_k and
``Bb[k, j]`` is minus its integral from tau_k to +1.  Each cardinal is
expanded in Legendre polynomials (exactly, by Gauss quadrature) and
integrated term by term, so both matrices are exact up to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grids import Grid, GridFamily, GridKind, GridSpec, legendre_nodes, legendre_table, make_grid, quadrature_weights

IDENTITY_TOL = 1e-11


@dataclass(frozen=True)
class BirkhoffSystem:
    grid: Grid
    Ba: np.ndarray = field(repr=False)
    Bb: np.ndarray = field(repr=False)
    wB: np.ndarray = field(repr=False)

    @property
    def N(self) -> int:
        return self.grid.N


@dataclass(frozen=True)
class ConditionReport:
    N: int
    cond_full: float
    cond_block: float


def barycentric_weights(nodes) -> np.ndarray:
    """Barycentric weights ``1 / prod_{k != j}(x_j - x_k)``, rescaled to max |w| = 1.

    Products are accumulated in log space so large grids do not overflow.
    """
    x = np.asarray(nodes, dtype=float)
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    log_abs = -np.sum(np.log(np.abs(diff)), axis=1)
    sign = np.prod(np.sign(diff), axis=1)
    return sign * np.exp(log_abs - log_abs.max())


def interpolation_matrix(nodes, targets, bary=None) -> np.ndarray:
    """Matrix mapping values at ``nodes`` to polynomial interpolant values at ``targets``."""
    x = np.asarray(nodes, dtype=float)
    s = np.atleast_1d(np.asarray(targets, dtype=float))
    w = barycentric_weights(x) if bary is None else bary
    diff = s[:, None] - x[None, :]
    exact = diff == 0.0
    diff[exact] = 1.0
    M = w / diff
    M /= M.sum(axis=1, keepdims=True)
    rows = np.flatnonzero(exact.any(axis=1))
    M[rows] = exact[rows].astype(float)
    return M


def _legendre_antiderivatives(N: int, tau: np.ndarray):
    """Tables of int_{-1}^{tau} P_n and int_{tau}^{1} P_n for n = 0..N."""
    P, _ = legendre_table(N + 1, tau)
    left = np.empty((tau.size, N + 1))
    right = np.empty((tau.size, N + 1))
    left[:, 0] = tau + 1.0
    right[:, 0] = 1.0 - tau
    for n in range(1, N + 1):
        # int P_n = (P_{n+1} - P_{n-1}) / (2n + 1); P_{n+1} - P_{n-1} vanishes at +-1
        diff = (P[n + 1] - P[n - 1]) / (2 * n + 1)
        left[:, n] = diff
        right[:, n] = -diff
    return left, right


def build_birkhoff(grid: Grid) -> BirkhoffSystem:
    N = grid.N
    tau = np.asarray(grid.nodes)
    # N + 1 Gauss points integrate the degree-2N products L_j P_n exactly
    s = legendre_nodes(GridKind.GAUSS, N)
    W = quadrature_weights(GridSpec(GridFamily.LEGENDRE, GridKind.GAUSS, N), s)
    Lq = interpolation_matrix(tau, s)
    Ps, _ = legendre_table(N, s)
    coeff = ((2 * np.arange(N + 1) + 1) / 2.0)[:, None] * (Ps @ (W[:, None] * Lq))

    left, right = _legendre_antiderivatives(N, tau)
    Ba = left @ coeff
    Bb = -(right @ coeff)
    wB = W @ Lq
    for a in (Ba, Bb, wB):
        a.setflags(write=False)
    return BirkhoffSystem(grid, Ba, Bb, wB)


def identity_residuals(sys: BirkhoffSystem) -> dict[str, float | None]:
    """Max-abs residuals of the Birkhoff matrix identities.

    Keys: ``prop3`` (Ba - Bb = wB row-wise), ``weights_match`` (wB against the
    grid's own quadrature weights), ``exchange`` (Ba = -E Bb E) and
    ``last_row`` (last row of Ba equals wB).  The last two apply to Lobatto
    grids only and are ``None`` otherwise; ``row0`` is ``None`` on Gauss grids.
    """
    Ba, Bb, wB = sys.Ba, sys.Bb, sys.wB
    out: dict[str, float | None] = {
        "prop3": float(np.max(np.abs(Ba - Bb - wB[None, :]))),
        "weights_match": float(np.max(np.abs(wB - sys.grid.weights))),
        "exchange": None,
        "last_row": None,
        "row0": None,
    }
    if sys.grid.spec.kind is GridKind.LOBATTO:
        out["exchange"] = float(np.max(np.abs(Ba + Bb[::-1, ::-1])))
        out["last_row"] = float(np.max(np.abs(Ba[-1] - wB)))
    if sys.grid.includes_left:
        out["row0"] = float(np.max(np.abs(Ba[0])))
    return out


def condition_report(grid: Grid) -> ConditionReport:
    """2-norm condition numbers of ``[A_a, -C_a]`` and of ``[I, -Ba]``."""
    from .transcription import assemble_linear_system

    sys = build_birkhoff(grid)
    A, C = assemble_linear_system(sys)
    N = grid.N
    full = np.hstack([A, -C])
    block = np.hstack([np.eye(N + 1), -sys.Ba])
    try:
        s_full = np.linalg.svd(full, compute_uv=False)
        s_block = np.linalg.svd(block, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"SVD failed for N={N}: {exc}") from exc
    return ConditionReport(N, float(s_full[0] / s_full[-1]), float(s_block[0] / s_block[-1]))


def birkhoff_for(spec: GridSpec) -> BirkhoffSystem:
    return build_birkhoff(make_grid(spec))
