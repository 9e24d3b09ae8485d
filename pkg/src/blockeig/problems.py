"""Ground-truth oracles for validating the eigensolver.

Two independent references are provided for the 7-point Laplacian benchmark:
the closed-form eigenvalues of the stencil (a sum of three 1-d sine-squared
terms), and a brute-force dense eigendecomposition of the assembled matrix
for small problems.  The two share no code with the iterative solver beyond
the small dense eigensolver routine, so agreement between solver, formula,
and brute force is meaningful evidence rather than a tautology.
"""

from dataclasses import dataclass

import numpy as np

from . import multivec as mv
from .operators import Grid3D

__all__ = [
    "AnalyticSpectrum",
    "analytic_spectrum",
    "exact_eigenvalues",
    "dense_matrix",
    "dense_oracle_spectrum",
]

DENSE_ORACLE_LIMIT = 600


@dataclass(frozen=True)
class AnalyticSpectrum:
    """Complete spectrum of the Dirichlet Laplacian on a Grid3D.

    values holds all nx*ny*nz eigenvalues ascending; indices holds the
    matching (i, j, k) mode triples (1-based, as in the defining formula).
    Ties are ordered lexicographically by (i, j, k) so the listing is
    deterministic; any fixed rule works for multiset comparisons.
    """

    grid: Grid3D
    values: np.ndarray
    indices: tuple


def analytic_spectrum(grid):
    """All eigenvalues of the 7-point Dirichlet Laplacian on ``grid``.

    The eigenvalue of mode (i, j, k), 1 <= i <= nx etc., is

        4 [ sin^2(i pi / (2 (nx+1))) + sin^2(j pi / (2 (ny+1)))
            + sin^2(k pi / (2 (nz+1))) ]

    which places the whole spectrum strictly inside (0, 12).
    """
    if not isinstance(grid, Grid3D):
        grid = Grid3D(*grid)

    def axis_terms(count):
        modes = np.arange(1, count + 1)
        return 4.0 * np.sin(modes * np.pi / (2.0 * (count + 1))) ** 2

    tx = axis_terms(grid.nx)
    ty = axis_terms(grid.ny)
    tz = axis_terms(grid.nz)
    values = (tx[:, None, None] + ty[None, :, None] + tz[None, None, :]).ravel()
    ii, jj, kk = np.meshgrid(
        np.arange(1, grid.nx + 1),
        np.arange(1, grid.ny + 1),
        np.arange(1, grid.nz + 1),
        indexing="ij",
    )
    ii = ii.ravel()
    jj = jj.ravel()
    kk = kk.ravel()
    order = np.lexsort((kk, jj, ii, values))
    return AnalyticSpectrum(
        grid=grid,
        values=values[order],
        indices=tuple(
            (int(i), int(j), int(k))
            for i, j, k in zip(ii[order], jj[order], kk[order])
        ),
    )


def exact_eigenvalues(grid, m):
    """The m smallest analytic eigenvalues of the Laplacian on ``grid``,
    ascending, multiplicities preserved."""
    spectrum = analytic_spectrum(grid)
    n = spectrum.values.size
    if not 1 <= m <= n:
        raise ValueError(f"m must be in 1..{n}, got {m}")
    return spectrum.values[:m].copy()


def dense_matrix(op):
    """Assemble an operator into a dense matrix by applying it to the
    columns of the identity."""
    return op(np.eye(op.dim))


def dense_oracle_spectrum(op, n_limit=DENSE_ORACLE_LIMIT):
    """All eigenvalues of a symmetric operator by brute force, ascending.

    Assembles the dense matrix with op applied to coordinate vectors and
    decomposes it with the small dense symmetric eigensolver.  O(n^3), so
    the dimension is capped (default 600) to keep this oracle sub-second.
    """
    if op.dim > n_limit:
        raise ValueError(
            f"operator dimension {op.dim} exceeds the dense oracle limit {n_limit}"
        )
    values, _ = mv.sym_eig(dense_matrix(op))
    return values
