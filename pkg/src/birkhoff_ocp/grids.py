"""Legendre and Chebyshev grids (Lobatto, Radau, Gauss) with quadrature weights.

All six grids live on [-1, 1] and are ordered left to right.  Radau grids
include the left endpoint only.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

MAX_ORDER = 4096
_NEWTON_CAP = 100


class GridFamily(str, enum.Enum):
    LEGENDRE = "legendre"
    CHEBYSHEV = "chebyshev"


class GridKind(str, enum.Enum):
    LOBATTO = "lobatto"
    RADAU = "radau"
    GAUSS = "gauss"


class GridError(ValueError):
    """Invalid grid order or inconsistent node/weight data."""


class RootFindingError(RuntimeError):
    """Newton iteration for a Legendre node did not converge."""

    def __init__(self, index: int, residual: float):
        super().__init__(
            f"Newton iteration failed for node {index} (residual {residual:.3e})"
        )
        self.index = index


_SHORT_NAMES = {
    "lgl": (GridFamily.LEGENDRE, GridKind.LOBATTO),
    "lgr": (GridFamily.LEGENDRE, GridKind.RADAU),
    "lg": (GridFamily.LEGENDRE, GridKind.GAUSS),
    "cgl": (GridFamily.CHEBYSHEV, GridKind.LOBATTO),
    "cgr": (GridFamily.CHEBYSHEV, GridKind.RADAU),
    "cg": (GridFamily.CHEBYSHEV, GridKind.GAUSS),
}

GRID_NAMES = tuple(_SHORT_NAMES)

# Highest monomial degree integrated exactly, as a function of N.
_EXACTNESS = {
    (GridFamily.LEGENDRE, GridKind.LOBATTO): lambda n: 2 * n - 1,
    (GridFamily.LEGENDRE, GridKind.RADAU): lambda n: 2 * n,
    (GridFamily.LEGENDRE, GridKind.GAUSS): lambda n: 2 * n + 1,
    (GridFamily.CHEBYSHEV, GridKind.LOBATTO): lambda n: n,
    (GridFamily.CHEBYSHEV, GridKind.RADAU): lambda n: n,
    (GridFamily.CHEBYSHEV, GridKind.GAUSS): lambda n: n,
}


@dataclass(frozen=True)
class GridSpec:
    family: GridFamily
    kind: GridKind
    order: int

    def __post_init__(self):
        object.__setattr__(self, "family", GridFamily(self.family))
        object.__setattr__(self, "kind", GridKind(self.kind))
        _check_order(self.order)

    @classmethod
    def from_name(cls, name: str, order: int) -> "GridSpec":
        """Build a spec from a short name such as ``"cgl"`` or ``"lgr"``."""
        try:
            family, kind = _SHORT_NAMES[name.lower()]
        except KeyError:
            raise GridError(
                f"unknown grid {name!r}; expected one of {', '.join(GRID_NAMES)}"
            ) from None
        return cls(family, kind, order)

    @property
    def name(self) -> str:
        return self.family.value[0] + {"lobatto": "gl", "radau": "gr", "gauss": "g"}[
            self.kind.value
        ]

    @property
    def exactness_degree(self) -> int:
        return _EXACTNESS[(self.family, self.kind)](self.order)


@dataclass(frozen=True)
class Grid:
    spec: GridSpec
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @property
    def N(self) -> int:
        return self.spec.order

    @property
    def includes_left(self) -> bool:
        return self.spec.kind in (GridKind.LOBATTO, GridKind.RADAU)

    @property
    def includes_right(self) -> bool:
        return self.spec.kind is GridKind.LOBATTO


def _check_order(N) -> None:
    if int(N) != N or N < 1:
        raise GridError(f"grid order must be an integer >= 1, got {N!r}")
    if N > MAX_ORDER:
        raise GridError(f"grid order {N} exceeds the supported maximum {MAX_ORDER}")


def legendre_table(n: int, tau) -> tuple[np.ndarray, np.ndarray]:
    """Values and derivatives of P_0..P_n at ``tau`` by the three-term recurrence.

    Returns two arrays of shape ``(n + 1, len(tau))``.
    """
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    P = np.empty((n + 1, tau.size))
    dP = np.zeros((n + 1, tau.size))
    P[0] = 1.0
    if n >= 1:
        P[1] = tau
        dP[1] = 1.0
    for k in range(1, n):
        P[k + 1] = ((2 * k + 1) * tau * P[k] - k * P[k - 1]) / (k + 1)
        dP[k + 1] = dP[k - 1] + (2 * k + 1) * P[k]
    return P, dP


def _legendre_pair(n: int, tau: np.ndarray):
    """P_n, P_n', P_{n+1}, P_{n+1}' at tau without storing the whole table."""
    p_prev, p = np.ones_like(tau), tau.copy()
    d_prev, d = np.zeros_like(tau), np.ones_like(tau)
    if n == 0:
        return p_prev, d_prev, p, d
    for k in range(1, n):
        p_next = ((2 * k + 1) * tau * p - k * p_prev) / (k + 1)
        d_next = d_prev + (2 * k + 1) * p
        p_prev, p = p, p_next
        d_prev, d = d, d_next
    p_next = ((2 * n + 1) * tau * p - n * p_prev) / (n + 1)
    d_next = d_prev + (2 * n + 1) * p
    return p, d, p_next, d_next


def _zero_function(kind: GridKind, N: int, tau: np.ndarray):
    """The function whose zeros are the Legendre nodes, with its derivative."""
    pn, dpn, pn1, dpn1 = _legendre_pair(N, tau)
    if kind is GridKind.LOBATTO:
        # z = (1 - t^2) P_N'  and  z' = -N (N + 1) P_N  (Legendre ODE)
        return (1.0 - tau**2) * dpn, -N * (N + 1) * pn
    if kind is GridKind.RADAU:
        return pn + pn1, dpn + dpn1
    return pn1, dpn1


def chebyshev_nodes(kind: GridKind | str, N: int) -> np.ndarray:
    """Chebyshev nodes ``-cos(xi_j pi)``, j = 0..N."""
    kind = GridKind(kind)
    _check_order(N)
    j = np.arange(N + 1)
    if kind is GridKind.LOBATTO:
        xi = j / N
    elif kind is GridKind.RADAU:
        xi = 2 * j / (2 * N + 1)
    else:
        xi = (2 * j + 1) / (2 * N + 2)
    return -np.cos(xi * np.pi)


def legendre_nodes(kind: GridKind | str, N: int) -> np.ndarray:
    """Zeros of the Legendre zero-function of ``kind`` by Newton iteration.

    Each node is seeded with the Chebyshev node of the same kind and index.
    Raises RootFindingError if a node fails to converge within the cap.
    """
    kind = GridKind(kind)
    _check_order(N)
    tau = chebyshev_nodes(kind, N)
    fixed = np.zeros(N + 1, dtype=bool)
    if kind is GridKind.LOBATTO:
        fixed[[0, -1]] = True
    elif kind is GridKind.RADAU:
        fixed[0] = True
    free = ~fixed

    for _ in range(_NEWTON_CAP):
        z, dz = _zero_function(kind, N, tau[free])
        step = z / dz
        tau[free] -= step
        if np.all(np.abs(step) <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(tau[free]))):
            break
    # one more step to settle the last ulp
    z, dz = _zero_function(kind, N, tau[free])
    tau[free] -= z / dz

    z, dz = _zero_function(kind, N, tau)
    bound = 1e-14 * np.maximum(1.0, np.abs(dz))
    bad = np.flatnonzero(free & (np.abs(z) > bound))
    if bad.size:
        raise RootFindingError(int(bad[0]), float(abs(z[bad[0]])))
    if np.any(np.diff(tau) <= 0) or tau[0] < -1 or tau[-1] > 1:
        idx = int(np.flatnonzero(np.diff(tau) <= 0)[0]) if np.any(np.diff(tau) <= 0) else 0
        raise RootFindingError(idx, float("nan"))

    if kind is not GridKind.RADAU:
        # symmetric grids: enforce exact antisymmetry
        tau = 0.5 * (tau - tau[::-1])
    return tau


def _cosine_sum_weights(theta: np.ndarray, kmax: int, last_half: bool) -> np.ndarray:
    """``1 - sum_k b_k cos(2 k theta) / (4 k^2 - 1)`` with b_k = 2 (1 on a halved last term)."""
    acc = np.ones_like(theta)
    for k in range(1, kmax + 1):
        b = 1.0 if (last_half and k == kmax) else 2.0
        acc -= b * np.cos(2 * k * theta) / (4 * k * k - 1)
    return acc


def quadrature_weights(spec: GridSpec, nodes) -> np.ndarray:
    """Quadrature weights matching ``spec`` on its own nodes.

    Chebyshev grids use Clenshaw-Curtis (Lobatto), Fejer's first rule (Gauss)
    and the interpolatory cosine-sum rule on the Radau points.  Legendre grids
    use the classical closed forms.
    """
    nodes = np.asarray(nodes, dtype=float)
    N = spec.order
    if nodes.shape != (N + 1,):
        raise GridError(f"expected {N + 1} nodes for order {N}, got shape {nodes.shape}")

    if spec.family is GridFamily.CHEBYSHEV:
        j = np.arange(N + 1)
        if spec.kind is GridKind.LOBATTO:
            theta = j * np.pi / N
            c = np.full(N + 1, 2.0)
            c[[0, -1]] = 1.0
            return c / N * _cosine_sum_weights(theta, N // 2, last_half=(N % 2 == 0))
        if spec.kind is GridKind.GAUSS:
            n = N + 1
            theta = (2 * j + 1) * np.pi / (2 * n)
            return 2.0 / n * _cosine_sum_weights(theta, n // 2, last_half=False)
        theta = 2 * j * np.pi / (2 * N + 1)
        c = np.ones(N + 1)
        c[0] = 0.5
        return 4.0 * c / (2 * N + 1) * _cosine_sum_weights(theta, N // 2, last_half=False)

    pn, dpn, pn1, dpn1 = _legendre_pair(N, nodes)
    if spec.kind is GridKind.LOBATTO:
        return 2.0 / (N * (N + 1) * pn**2)
    if spec.kind is GridKind.GAUSS:
        return 2.0 / ((1.0 - nodes**2) * dpn1**2)
    return (1.0 - nodes) / ((N + 1) ** 2 * pn**2)


def make_grid(spec: GridSpec) -> Grid:
    if spec.family is GridFamily.CHEBYSHEV:
        nodes = chebyshev_nodes(spec.kind, spec.order)
    else:
        nodes = legendre_nodes(spec.kind, spec.order)
    weights = quadrature_weights(spec, nodes)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return Grid(spec, nodes, weights)


def grid_by_name(name: str, N: int) -> Grid:
    return make_grid(GridSpec.from_name(name, N))


def quadrature_defect(y_values, grid: Grid, exact_integral: float) -> float:
    """Quadrature error ``sum_i y(tau_i) w_i - exact_integral``."""
    y = np.asarray(y_values, dtype=float)
    if y.shape != grid.nodes.shape:
        raise GridError(
            f"y_values has shape {y.shape}, grid has {grid.nodes.size} nodes"
        )
    return float(y @ grid.weights - exact_integral)
