"""Dense multivector blocks and the small matrix algebra used by the solver.

A multivector is a plain (n, k) float64 ndarray holding k column vectors of
dimension n.  The block eigensolver only ever touches tall blocks through a
handful of kernels collected here: Gram products, block updates, Cholesky
factorization of small Gram matrices, triangular solves against the resulting
factors, and dense symmetric eigendecompositions of projected pencils.

Gram matrices and coefficient blocks are small (a few times the block size
squared), so the dense symmetric eigensolvers delegate to LAPACK via scipy.
The Cholesky factorization is written out explicitly because callers need to
know *which* pivot failed: a failed pivot identifies the first numerically
dependent column of the block being orthonormalized, and the solver repairs
its basis by dropping exactly that column.
"""

import numpy as np
from scipy.linalg import eigh, solve_triangular

__all__ = [
    "NotSPD",
    "gram",
    "multiply",
    "cholesky",
    "tri_solve_right",
    "chol_solve",
    "sym_eig",
    "gen_sym_eig",
    "column_norms",
    "seeded_random_fill",
]


class NotSPD(Exception):
    """Raised when a Cholesky pivot fails, i.e. the matrix is not numerically
    symmetric positive definite.

    Attributes
    ----------
    pivot : int
        Zero-based index of the first failing pivot.  When the matrix is the
        B-Gram matrix of a block, this is the index of the first column that
        is numerically dependent on the columns before it.
    """

    def __init__(self, pivot):
        super().__init__(f"matrix is not positive definite (pivot {pivot})")
        self.pivot = int(pivot)


def _as_block(x, name="x"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"{name} must be a 2-d array, got shape {x.shape}")
    return x


def gram(x, y):
    """Gram product ``x.T @ y`` of two blocks sharing the row dimension.

    Returns a (kx, ky) matrix of pairwise column inner products.  For a
    single y block reused against several x blocks this is the only
    reduction the solver performs across the long dimension n.
    """
    x = _as_block(x, "x")
    y = _as_block(y, "y")
    if x.shape[0] != y.shape[0]:
        raise ValueError(
            f"row dimensions differ: x has {x.shape[0]}, y has {y.shape[0]}"
        )
    return x.T @ y


def multiply(x, c):
    """Block update ``x @ c``: combine the columns of x with coefficients c.

    c has shape (kx, r); the result has shape (n, r) and fresh storage.
    """
    x = _as_block(x, "x")
    c = _as_block(c, "c")
    if x.shape[1] != c.shape[0]:
        raise ValueError(
            f"inner dimensions differ: x has {x.shape[1]} columns, "
            f"c has {c.shape[0]} rows"
        )
    return x @ c


def cholesky(g, pivot_floor=0.0):
    """Upper-triangular Cholesky factor R of a small SPD matrix, G = R.T @ R.

    Written out row by row rather than taken from LAPACK so that a pivot
    failure reports the index of the offending column via ``NotSPD.pivot``.
    Only the upper triangle of ``g`` is read.

    pivot_floor, when positive, rejects pivots below ``pivot_floor`` times
    the corresponding diagonal entry.  A pivot that small means the column
    is nearly dependent on the ones before it; factoring through it would
    succeed formally while amplifying roundoff in later solves by the
    (huge) condition number, so callers orthonormalizing iterative bases
    treat it as rank deficiency.

    Raises
    ------
    NotSPD
        If a pivot is not strictly positive (or not finite), or falls below
        the floor.  ``pivot`` is the zero-based index of the first failure.
    """
    g = _as_block(g, "g")
    k = g.shape[0]
    if g.shape[1] != k:
        raise ValueError(f"matrix must be square, got shape {g.shape}")
    r = np.zeros((k, k))
    for j in range(k):
        d = g[j, j] - r[:j, j] @ r[:j, j]
        if not (d > pivot_floor * g[j, j]) or not np.isfinite(d):
            raise NotSPD(j)
        rjj = np.sqrt(d)
        r[j, j] = rjj
        if j + 1 < k:
            r[j, j + 1 :] = (g[j, j + 1 :] - r[:j, j] @ r[:j, j + 1 :]) / rjj
    return r


def tri_solve_right(x, r):
    """Solve ``z @ r = x`` for z, i.e. apply R^{-1} from the right.

    This is how a block is carried through a Cholesky-based change of basis:
    if X = Z R then Z = tri_solve_right(X, R), and the same transform applied
    to A X and B X keeps the cached products consistent.
    """
    x = _as_block(x, "x")
    r = _as_block(r, "r")
    k = r.shape[0]
    if r.shape[1] != k:
        raise ValueError(f"factor must be square, got shape {r.shape}")
    if x.shape[1] != k:
        raise ValueError(
            f"x has {x.shape[1]} columns but the factor is {k} x {k}"
        )
    if np.any(np.diag(r) == 0.0):
        raise ValueError("triangular factor is singular (zero diagonal)")
    if k == 0:
        return x.copy()
    # z r = x  <=>  r.T z.T = x.T, a lower-triangular solve.
    return solve_triangular(r, x.T, trans="T", lower=False).T


def chol_solve(r, rhs):
    """Solve ``(R.T @ R) z = rhs`` given the upper-triangular factor R."""
    r = _as_block(r, "r")
    rhs = np.asarray(rhs, dtype=np.float64)
    if r.shape[0] != r.shape[1]:
        raise ValueError(f"factor must be square, got shape {r.shape}")
    if r.shape[0] == 0:
        return rhs.copy()
    u = solve_triangular(r, rhs, trans="T", lower=False)
    return solve_triangular(r, u, trans="N", lower=False)


def sym_eig(g):
    """Full eigendecomposition of a small symmetric matrix.

    Returns ``(values, vectors)`` with values ascending and vectors
    orthonormal, G @ vectors = vectors @ diag(values).  Only the upper
    triangle of ``g`` is read, matching ``cholesky``.
    """
    g = _as_block(g, "g")
    if g.shape[0] != g.shape[1]:
        raise ValueError(f"matrix must be square, got shape {g.shape}")
    return eigh(g, lower=False)


def gen_sym_eig(gram_a, gram_b, want=None, pivot_floor=0.0):
    """Smallest ``want`` eigenpairs of the pencil gram_a @ c = lam * gram_b @ c.

    gram_a is symmetric, gram_b symmetric positive definite; only the upper
    triangles of both are read (callers may assemble block matrices in their
    upper triangles only).  Solved by the Cholesky change of basis
    gram_b = R.T R, reducing to a standard symmetric problem for
    R^{-T} gram_a R^{-1}.  The returned coefficient block c is
    gram_b-orthonormal: c.T @ gram_b @ c = I.  pivot_floor is forwarded to
    the Cholesky of gram_b.

    Raises
    ------
    NotSPD
        If gram_b fails Cholesky; the solver catches this to trigger its
        basis fallback ladder.
    """
    gram_a = _as_block(gram_a, "gram_a")
    gram_b = _as_block(gram_b, "gram_b")
    k = gram_a.shape[0]
    if gram_a.shape != (k, k) or gram_b.shape != (k, k):
        raise ValueError(
            f"pencil blocks must be square and matching, got "
            f"{gram_a.shape} and {gram_b.shape}"
        )
    if want is None:
        want = k
    if not 0 < want <= k:
        raise ValueError(f"want must be in 1..{k}, got {want}")
    gram_a = np.triu(gram_a) + np.triu(gram_a, 1).T
    r = cholesky(gram_b, pivot_floor=pivot_floor)
    # m = R^{-T} gram_a R^{-1}, formed by two triangular solves.
    m = solve_triangular(r, gram_a, trans="T", lower=False)
    m = solve_triangular(r, m.T, trans="T", lower=False)
    m = 0.5 * (m + m.T)
    values, vectors = eigh(m, lower=False)
    c = solve_triangular(r, vectors[:, :want], trans="N", lower=False)
    return values[:want], c


def column_norms(x):
    """Euclidean norm of each column, as a (k,) array."""
    x = _as_block(x, "x")
    return np.linalg.norm(x, axis=0)


def seeded_random_fill(n, k, seed):
    """Deterministic (n, k) block with entries uniform in (-1, 1).

    The same seed always yields the same block, bit for bit, independent of
    global RNG state.  Used for reproducible random initial guesses.
    """
    if n < 1 or k < 1:
        raise ValueError("dimensions must be positive")
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.uniform(-1.0, 1.0, size=(n, k))
