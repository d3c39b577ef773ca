"""Monotone finite-difference approximation of the controlled generator.

The interior lattice of the box is indexed in row-major (axis-0 major) order.
``assemble_generator`` produces a sub-Markov rate matrix: nonnegative
off-diagonal jump rates to axis neighbors, killing (dropped flux) toward the
boundary, and the diagonal balancing the full outflow.  Drift is discretized
by central differences wherever that keeps the scheme monotone
(|m_k| h < a_kk, which preserves second-order accuracy) and by upwind
one-sided differences otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import NonconformingSpacing, NonFiniteCoefficient
from .problems import PolicySpec, ProblemSpec, ValidatedProblem

Problem = ProblemSpec | ValidatedProblem


@dataclass(frozen=True)
class Grid:
    """Interior lattice of a box with spacing h.

    neighbor_table[i, k, 0] is the node index one step down axis k from node i
    (-1 if that step exits the domain); [..., 1] the step up.
    """

    lo: np.ndarray
    hi: np.ndarray
    h: float
    dims: tuple[int, ...]
    nodes: np.ndarray
    neighbor_table: np.ndarray

    @property
    def d(self) -> int:
        return len(self.dims)

    @property
    def n(self) -> int:
        return int(np.prod(self.dims))

    @property
    def boundary_adjacency(self) -> np.ndarray:
        """(n, d, 2) boolean: which stencil arms exit the domain."""
        return self.neighbor_table < 0

    def dist_boundary(self) -> np.ndarray:
        """Distance from each node to the box boundary (min over faces)."""
        below = self.nodes - self.lo[None, :]
        above = self.hi[None, :] - self.nodes
        return np.minimum(below.min(axis=1), above.min(axis=1))

    def interior_mask(self, eps: float) -> np.ndarray:
        """Nodes at distance strictly greater than eps from the boundary."""
        return self.dist_boundary() > eps + 1e-12

    def nearest_index(self, points: np.ndarray) -> np.ndarray:
        """Indices of the interior nodes nearest to the given points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        multi = []
        for k in range(self.d):
            i = np.rint((pts[:, k] - self.lo[k]) / self.h).astype(int) - 1
            multi.append(np.clip(i, 0, self.dims[k] - 1))
        return np.ravel_multi_index(tuple(multi), self.dims)


def build_grid(problem: Problem, h: float) -> Grid:
    """Interior lattice with spacing h; h must divide every side of the box."""
    lo, hi = problem.lo, problem.hi
    dims: list[int] = []
    for k in range(len(lo)):
        side = hi[k] - lo[k]
        steps = side / h
        n_steps = int(round(steps))
        if n_steps < 2 or abs(n_steps * h - side) > 1e-9 * max(1.0, side):
            raise NonconformingSpacing(
                f"spacing h={h} does not divide side {side} of axis {k} "
                f"(needs an integer >= 2 number of cells)"
            )
        dims.append(n_steps - 1)

    axes = [lo[k] + h * np.arange(1, dims[k] + 1) for k in range(len(dims))]
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.column_stack([m.ravel() for m in mesh])

    n = int(np.prod(dims))
    table = np.empty((n, len(dims), 2), dtype=np.int64)
    idx = np.arange(n).reshape(dims)
    for k in range(len(dims)):
        down = np.full(dims, -1, dtype=np.int64)
        up = np.full(dims, -1, dtype=np.int64)
        sl_lo = [slice(None)] * len(dims)
        sl_hi = [slice(None)] * len(dims)
        sl_lo[k] = slice(1, None)
        sl_hi[k] = slice(None, -1)
        down[tuple(sl_lo)] = idx[tuple(sl_hi)]
        up[tuple(sl_hi)] = idx[tuple(sl_lo)]
        table[:, k, 0] = down.ravel()
        table[:, k, 1] = up.ravel()

    return Grid(lo=lo, hi=hi, h=float(h), dims=tuple(dims), nodes=nodes, neighbor_table=table)


@dataclass(frozen=True)
class Generator:
    """Sub-Markov rate matrix on the interior lattice.

    killed[i] >= 0 is the total rate dropped toward the boundary at node i,
    so matrix row sums satisfy rowsum + killed = 0 exactly.
    """

    matrix: sp.csr_matrix
    killed: np.ndarray
    grid: Grid

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def _policy_array(grid: Grid, problem: Problem, policy: int | PolicySpec | np.ndarray) -> np.ndarray:
    if isinstance(policy, (int, np.integer)):
        arr = np.full(grid.n, int(policy), dtype=int)
    elif isinstance(policy, PolicySpec):
        arr = policy.array
    else:
        arr = np.asarray(policy, dtype=int)
    if arr.shape != (grid.n,):
        raise ValueError(f"policy must assign one action per node ({grid.n}), got shape {arr.shape}")
    if arr.min() < 0 or arr.max() >= problem.n_actions:
        raise ValueError("policy contains out-of-range action indices")
    return arr


def drift_under_policy(grid: Grid, problem: Problem, policy: int | PolicySpec | np.ndarray) -> np.ndarray:
    """(n, d) drift values m(x, v(x)) at the grid nodes."""
    assign = _policy_array(grid, problem, policy)
    m = np.empty((grid.n, grid.d), dtype=float)
    for k in np.unique(assign):
        mask = assign == k
        m[mask] = problem.drift(grid.nodes[mask], int(k))
    return m


def assemble_generator(grid: Grid, problem: Problem, policy: int | PolicySpec | np.ndarray) -> Generator:
    """Assemble the killed rate matrix for the given policy (or single action)."""
    m = drift_under_policy(grid, problem, policy)
    sig = problem.sigma(grid.nodes)
    if not (np.all(np.isfinite(m)) and np.all(np.isfinite(sig))):
        raise NonFiniteCoefficient(f"{problem.name}: coefficients not finite on the grid")
    a = sig * sig
    h = grid.h

    n = grid.n
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    diag = np.zeros(n)
    killed = np.zeros(n)
    node_idx = np.arange(n)

    min_rate = 0.0
    for k in range(grid.d):
        diff = a[:, k] / (2.0 * h * h)
        mk = m[:, k]
        central = np.abs(mk) * h < a[:, k]
        up_rate = np.where(central, diff + mk / (2.0 * h), diff + np.maximum(mk, 0.0) / h)
        dn_rate = np.where(central, diff - mk / (2.0 * h), diff + np.maximum(-mk, 0.0) / h)
        min_rate = min(min_rate, float(up_rate.min()), float(dn_rate.min()))
        for sign, rate in ((0, dn_rate), (1, up_rate)):
            nb = grid.neighbor_table[:, k, sign]
            inside = nb >= 0
            rows.append(node_idx[inside])
            cols.append(nb[inside])
            vals.append(rate[inside])
            killed[~inside] += rate[~inside]
        diag -= up_rate + dn_rate

    rows.append(node_idx)
    cols.append(node_idx)
    vals.append(diag)
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    # Monotonicity is structural: both stencil branches produce nonnegative
    # rates, so any negative is an assembly bug.
    assert min_rate >= 0.0, "negative off-diagonal rate; stencil monotonicity broken"
    return Generator(matrix=mat, killed=killed, grid=grid)


def discrete_gradient(grid: Grid, field: np.ndarray, extension: str = "log-zero") -> np.ndarray:
    """Per-axis difference quotients of a node field, (n, d).

    Central differences where both neighbors exist.  At boundary-adjacent
    nodes the "log-zero" rule falls back to the one-sided interior difference
    (appropriate for fields that diverge at the boundary, like log Psi);
    the "zero" rule extends the field by 0 and keeps the central stencil.
    """
    if extension not in ("log-zero", "zero"):
        raise ValueError(f"unknown extension rule {extension!r}")
    f = np.asarray(field, dtype=float)
    if f.shape != (grid.n,):
        raise ValueError(f"field must have shape ({grid.n},), got {f.shape}")
    h = grid.h
    out = np.zeros((grid.n, grid.d))
    for k in range(grid.d):
        dn = grid.neighbor_table[:, k, 0]
        up = grid.neighbor_table[:, k, 1]
        has_dn, has_up = dn >= 0, up >= 0
        f_dn = np.where(has_dn, f[np.maximum(dn, 0)], 0.0)
        f_up = np.where(has_up, f[np.maximum(up, 0)], 0.0)
        both = has_dn & has_up
        g = np.zeros(grid.n)
        g[both] = (f_up[both] - f_dn[both]) / (2.0 * h)
        only_dn = has_dn & ~has_up
        only_up = has_up & ~has_dn
        if extension == "log-zero":
            g[only_dn] = (f[only_dn] - f_dn[only_dn]) / h
            g[only_up] = (f_up[only_up] - f[only_up]) / h
        else:
            g[only_dn] = (0.0 - f_dn[only_dn]) / (2.0 * h)
            g[only_up] = (f_up[only_up] - 0.0) / (2.0 * h)
        out[:, k] = g
    return out


def default_spacing(problem: Problem) -> float:
    """Default grid spacing: 1/64 in d=1, 1/32 in d=2."""
    return 1.0 / 64.0 if problem.dim == 1 else 1.0 / 32.0


def export_coo(gen: Generator, path: str) -> None:
    """Write the rate matrix as 'row col value' triplets."""
    coo = gen.matrix.tocoo()
    with open(path, "w", encoding="utf-8") as fh:
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {float(v)!r}\n")
