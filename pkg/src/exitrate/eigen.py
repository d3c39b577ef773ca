"""Principal eigenpair of a sub-Markov generator, with Collatz-Wielandt bounds.

The principal eigenvalue of G is the (negated) eigenvalue of maximal real
part; its right and left eigenvectors are strictly positive on an irreducible
pattern.  We run shifted inverse power iteration on (sI - G).  The default
shift s = 0 is valid because a killed irreducible generator is nonsingular
(-G is an irreducible M-matrix), and it contracts at the h-independent ratio
lambda/lambda_2; if the residual stalls, the shift is retargeted near the
current Collatz-Wielandt estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .errors import NoConvergence, NonPositiveEigenvector
from .grid import Generator


@dataclass(frozen=True)
class EigenPair:
    """Principal eigen data: G psi = -lam psi, G^T phi = -lam phi.

    psi is max-normalized, phi sum-normalized (a probability vector).
    cw_interval brackets lam for the final psi.
    """

    lam: float
    psi: np.ndarray
    phi: np.ndarray
    residual: float
    residual_left: float
    cw_interval: tuple[float, float]
    iterations: int


def _as_matrix(g: Generator | sp.spmatrix) -> sp.csr_matrix:
    if isinstance(g, Generator):
        return g.matrix
    return sp.csr_matrix(g)


def cw_bounds(g: Generator | sp.spmatrix, psi: np.ndarray) -> tuple[float, float]:
    """Collatz-Wielandt bracket [min, max] of -(G psi)/psi for positive psi."""
    mat = _as_matrix(g)
    psi = np.asarray(psi, dtype=float)
    if np.any(psi <= 0):
        raise NonPositiveEigenvector("cw_bounds requires a strictly positive test vector")
    ratios = -(mat @ psi) / psi
    return float(ratios.min()), float(ratios.max())


def _check_irreducible(mat: sp.csr_matrix) -> None:
    # Copy index arrays: setdiag/eliminate_zeros mutate them in place.
    pattern = sp.csr_matrix(
        (np.ones_like(mat.data), mat.indices.copy(), mat.indptr.copy()), shape=mat.shape
    )
    pattern.setdiag(0)
    pattern.eliminate_zeros()
    n_comp = connected_components(pattern, directed=True, connection="strong", return_labels=False)
    if n_comp != 1:
        raise NonPositiveEigenvector(
            f"generator pattern has {n_comp} strongly connected components; "
            "the principal eigenvector is not positive"
        )


def principal_eigenpair(
    g: Generator | sp.spmatrix, tol: float = 1e-10, max_iter: int = 10000
) -> EigenPair:
    """Positive right/left principal eigenpair by shifted inverse iteration."""
    mat = _as_matrix(g).tocsr()
    n = mat.shape[0]
    if n == 1:
        lam = float(-mat[0, 0])
        one = np.ones(1)
        return EigenPair(lam, one, one.copy(), 0.0, 0.0, (lam, lam), 0)
    _check_irreducible(mat)

    csc = mat.tocsc()
    ident = sp.identity(n, format="csc")

    def factor(shift: float):
        return splu((shift * ident - csc).tocsc())

    try:
        lu = factor(0.0)
        safe_lu = lu
    except RuntimeError:
        # Singular at shift 0 can only happen for a conservative matrix;
        # fall back to the always-nonsingular diagonal-dominant shift.
        safe_shift = 1.0 + float(np.abs(mat.diagonal()).max())
        lu = factor(safe_shift)
        safe_lu = lu

    def solve_step(vec: np.ndarray, transpose: bool) -> np.ndarray:
        y = lu.solve(vec, trans="T") if transpose else lu.solve(vec)
        if not np.all(np.isfinite(y)):
            raise NoConvergence("inverse iteration produced non-finite values")
        if y.sum() < 0:
            y = -y
        return y

    def iterate(transpose: bool, start: np.ndarray) -> tuple[np.ndarray, float, tuple[float, float], int]:
        nonlocal lu
        v = start / np.abs(start).max()
        it = 0
        lo = hi = float("nan")
        while it < max_iter:
            y = solve_step(v, transpose)
            it += 1
            if y.min() <= 0:
                # Retargeted shifts can momentarily lose positivity; one safe
                # step restores it (the safe inverse is entrywise positive).
                lu = safe_lu
                y = solve_step(np.abs(v), transpose)
            v = y / np.abs(y).max()
            r = (mat.T @ v) if transpose else (mat @ v)
            ratios = -r / v
            lo, hi = float(ratios.min()), float(ratios.max())
            lam_est = 0.5 * (lo + hi)
            resid = float(np.abs(r + lam_est * v).max())
            if resid <= tol and (hi - lo) <= 10.0 * tol:
                return v, lam_est, (lo, hi), it
            if it % 40 == 0 and np.isfinite(hi):
                # Stalling: retarget the shift just below -lambda_hi.
                try:
                    lu = factor(-(hi + max(1e-8, hi - lo)))
                except RuntimeError:
                    lu = safe_lu
        raise NoConvergence(
            f"inverse iteration did not reach tol={tol} in {max_iter} steps "
            f"(last interval [{lo}, {hi}])"
        )

    psi, lam, interval, it_r = iterate(False, np.ones(n))
    phi, _, _, it_l = iterate(True, np.ones(n))

    if psi.min() <= 0 or phi.min() <= 0:
        raise NonPositiveEigenvector("iteration converged to a sign-changing vector")

    psi = psi / psi.max()
    phi = phi / phi.sum()
    residual = float(np.abs(mat @ psi + lam * psi).max())
    residual_left = float(np.abs(mat.T @ phi + lam * phi).max())
    return EigenPair(
        lam=lam,
        psi=psi,
        phi=phi,
        residual=residual,
        residual_left=residual_left,
        cw_interval=interval,
        iterations=it_r + it_l,
    )


def export_eigen_csv(grid, pair: EigenPair, path: str) -> None:
    from ._util import write_csv

    coords = [f"x{k + 1}" for k in range(grid.d)]
    rows = (
        list(grid.nodes[i]) + [pair.psi[i], pair.phi[i]]
        for i in range(grid.n)
    )
    write_csv(path, coords + ["psi", "phi"], rows)
