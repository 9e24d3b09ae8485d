"""Matrix-free operators, preconditioners, and the 3-d Laplacian benchmark.

The eigensolver never sees matrix entries.  It applies operators to (n, k)
blocks of vectors through ``LinearOperator`` and applies preconditioners
through ``Preconditioner``; anything implementing those two call contracts
plugs in.  This module provides the concrete operators used by the tests and
the benchmark driver: dense and diagonal wrappers, the 7-point finite
difference Laplacian on a box grid with homogeneous Dirichlet boundaries,
spectral shifts A + alpha B, and two preconditioners (Jacobi, and a fixed
step count of preconditioned conjugate gradient iterations on the operator
itself).
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Grid3D",
    "LinearOperator",
    "MatrixFreeOperator",
    "DenseOperator",
    "DiagonalOperator",
    "IdentityOperator",
    "Laplacian3D",
    "ShiftedOperator",
    "laplacian3d",
    "shift_operator",
    "Preconditioner",
    "IdentityPreconditioner",
    "JacobiPreconditioner",
    "InnerPCGPreconditioner",
    "jacobi_preconditioner",
    "inner_pcg_preconditioner",
    "probe_diagonal",
    "pcg_solve",
    "PCGBreakdown",
]


@dataclass(frozen=True)
class Grid3D:
    """Regular nx x ny x nz box grid of interior points.

    Linear index of point (i, j, k) is ``i + nx * (j + ny * k)``, so the x
    direction varies fastest.  All indices are zero based.
    """

    nx: int
    ny: int
    nz: int

    def __post_init__(self):
        for name, value in (("nx", self.nx), ("ny", self.ny), ("nz", self.nz)):
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")

    @property
    def n(self):
        """Total number of grid points."""
        return self.nx * self.ny * self.nz

    def index(self, i, j, k):
        """Linear index of grid point (i, j, k)."""
        if not (0 <= i < self.nx and 0 <= j < self.ny and 0 <= k < self.nz):
            raise IndexError(f"point ({i}, {j}, {k}) outside grid {self}")
        return i + self.nx * (j + self.ny * k)


class LinearOperator:
    """Symmetric operator applied to blocks of vectors.

    Subclasses implement ``_apply(x)`` for an (n, k) block and may override
    ``diagonal()`` when the matrix diagonal is cheaply available.  Instances
    are callable; a 1-d vector of length n is accepted and returned as 1-d.
    """

    def __init__(self, dim, spd=False):
        if dim < 1:
            raise ValueError(f"operator dimension must be positive, got {dim}")
        self.dim = int(dim)
        self.spd = bool(spd)

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] != self.dim:
            raise ValueError(
                f"operator of dimension {self.dim} applied to block of shape {x.shape}"
            )
        y = self._apply(x)
        return y[:, 0] if single else y

    def _apply(self, x):
        raise NotImplementedError

    def diagonal(self):
        """Matrix diagonal as a (dim,) array, or None when not cheaply known."""
        return None


class MatrixFreeOperator(LinearOperator):
    """Wrap a block-apply callable ``f(x) -> y`` as a LinearOperator."""

    def __init__(self, dim, apply_block, spd=False, diag=None):
        super().__init__(dim, spd=spd)
        self._apply_block = apply_block
        self._diag = None if diag is None else np.asarray(diag, dtype=np.float64)

    def _apply(self, x):
        y = np.asarray(self._apply_block(x), dtype=np.float64)
        if y.shape != x.shape:
            raise ValueError(
                f"operator apply returned shape {y.shape}, expected {x.shape}"
            )
        return y

    def diagonal(self):
        return None if self._diag is None else self._diag.copy()


class DenseOperator(LinearOperator):
    """Explicit symmetric matrix, mainly for tests and small oracles."""

    def __init__(self, a, spd=False):
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"matrix must be square, got shape {a.shape}")
        if not np.allclose(a, a.T, rtol=0.0, atol=1e-13 * max(1.0, np.abs(a).max())):
            raise ValueError("matrix is not symmetric")
        super().__init__(a.shape[0], spd=spd)
        self.a = 0.5 * (a + a.T)

    def _apply(self, x):
        return self.a @ x

    def diagonal(self):
        return np.diag(self.a).copy()


class DiagonalOperator(LinearOperator):
    def __init__(self, d):
        d = np.asarray(d, dtype=np.float64)
        if d.ndim != 1 or d.size == 0:
            raise ValueError(f"diagonal must be a nonempty 1-d array, got shape {d.shape}")
        super().__init__(d.size, spd=bool(np.all(d > 0.0)))
        self.d = d.copy()

    def _apply(self, x):
        return self.d[:, None] * x

    def diagonal(self):
        return self.d.copy()


class IdentityOperator(LinearOperator):
    def __init__(self, dim):
        super().__init__(dim, spd=True)

    def _apply(self, x):
        return x.copy()

    def diagonal(self):
        return np.ones(self.dim)


class Laplacian3D(LinearOperator):
    """Unscaled 7-point Laplacian on a Grid3D, homogeneous Dirichlet boundary.

    Row p for interior point (i, j, k) reads ``6 x_p - sum of the six axis
    neighbors``; neighbors falling outside the grid are zero.  No 1/h^2
    scaling is applied, so the spectrum lies in (0, 12) regardless of grid
    size.  The operator is symmetric positive definite.
    """

    def __init__(self, grid):
        if not isinstance(grid, Grid3D):
            grid = Grid3D(*grid)
        super().__init__(grid.n, spd=True)
        self.grid = grid

    def _apply(self, x):
        g = self.grid
        k = x.shape[1]
        # View columns as (k, nz, ny, nx) fields; x direction varies fastest.
        f = np.ascontiguousarray(x.T).reshape(k, g.nz, g.ny, g.nx)
        y = 6.0 * f
        y[:, :, :, 1:] -= f[:, :, :, :-1]
        y[:, :, :, :-1] -= f[:, :, :, 1:]
        y[:, :, 1:, :] -= f[:, :, :-1, :]
        y[:, :, :-1, :] -= f[:, :, 1:, :]
        y[:, 1:, :, :] -= f[:, :-1, :, :]
        y[:, :-1, :, :] -= f[:, 1:, :, :]
        return y.reshape(k, g.n).T

    def diagonal(self):
        return np.full(self.dim, 6.0)


class ShiftedOperator(LinearOperator):
    """Spectral shift A + alpha * B (B = identity when omitted).

    Shifting moves every eigenvalue of the pencil (A, B) by exactly alpha
    while leaving eigenvectors untouched, which is the basis of the solver's
    shift-invariance checks.
    """

    def __init__(self, a, b, alpha):
        if b is not None and b.dim != a.dim:
            raise ValueError(
                f"operator dimensions differ: A has {a.dim}, B has {b.dim}"
            )
        super().__init__(a.dim, spd=a.spd and alpha >= 0.0 and (b is None or b.spd))
        self.a = a
        self.b = b
        self.alpha = float(alpha)

    def _apply(self, x):
        y = self.a(x)
        if self.b is None:
            y += self.alpha * x
        else:
            y += self.alpha * self.b(x)
        return y

    def diagonal(self):
        da = self.a.diagonal()
        if da is None:
            return None
        if self.b is None:
            return da + self.alpha
        db = self.b.diagonal()
        if db is None:
            return None
        return da + self.alpha * db


def laplacian3d(grid):
    """7-point Dirichlet Laplacian on a Grid3D (or an (nx, ny, nz) tuple)."""
    return Laplacian3D(grid)


def shift_operator(a, b, alpha):
    """Operator computing A x + alpha B x (pass B = None for the identity)."""
    return ShiftedOperator(a, b, alpha)


class Preconditioner:
    """Block application of an approximate inverse, y = T x.

    T must be symmetric positive definite for the solver's convergence
    theory to apply; the contract here is only the call shape.  As with
    LinearOperator, 1-d vectors pass through as 1-d.
    """

    def __init__(self, dim):
        if dim < 1:
            raise ValueError(f"preconditioner dimension must be positive, got {dim}")
        self.dim = int(dim)

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] != self.dim:
            raise ValueError(
                f"preconditioner of dimension {self.dim} applied to block "
                f"of shape {x.shape}"
            )
        y = self._apply(x)
        return y[:, 0] if single else y

    def _apply(self, x):
        raise NotImplementedError


class IdentityPreconditioner(Preconditioner):
    def _apply(self, x):
        return x.copy()


class JacobiPreconditioner(Preconditioner):
    """Diagonal scaling T = diag(A)^{-1}."""

    def __init__(self, diag):
        diag = np.asarray(diag, dtype=np.float64)
        if diag.ndim != 1:
            raise ValueError(f"diagonal must be 1-d, got shape {diag.shape}")
        if np.any(diag <= 0.0) or not np.all(np.isfinite(diag)):
            raise ValueError("Jacobi preconditioner needs a positive diagonal")
        super().__init__(diag.size)
        self.inv_diag = 1.0 / diag

    def _apply(self, x):
        return self.inv_diag[:, None] * x


def probe_diagonal(op, chunk=256):
    """Recover diag(A) by applying A to blocks of coordinate vectors.

    Costs dim operator applications (batched ``chunk`` columns at a time),
    so this is for operators whose diagonal is not otherwise available.
    """
    n = op.dim
    d = np.empty(n)
    for start in range(0, n, chunk):
        cols = min(chunk, n - start)
        e = np.zeros((n, cols))
        idx = np.arange(cols)
        e[start + idx, idx] = 1.0
        y = op(e)
        d[start : start + cols] = y[start + idx, idx]
    return d


def jacobi_preconditioner(op, probe=False):
    """Jacobi (inverse diagonal) preconditioner for an operator.

    Uses ``op.diagonal()`` when available.  Otherwise the diagonal must be
    probed with dim operator applications, which is expensive enough that it
    only happens when explicitly requested with ``probe=True``.
    """
    d = op.diagonal()
    if d is None:
        if not probe:
            raise ValueError(
                "operator does not expose its diagonal; pass probe=True to "
                "recover it with dim operator applications"
            )
        d = probe_diagonal(op)
    return JacobiPreconditioner(d)


class PCGBreakdown(Exception):
    """Conjugate gradients hit a nonpositive curvature p.T A p, which means
    the operator (or preconditioner) is not positive definite."""


def pcg_solve(a, m, b, max_iter, rtol=0.0):
    """Preconditioned conjugate gradients for A x = b from a zero start.

    Runs at most ``max_iter`` steps; with ``rtol > 0`` stops early once
    ``norm(residual) <= rtol * norm(b)``.  With ``rtol=0`` the step count is
    fixed, which makes the iteration deterministic for a given b.  Returns
    the final iterate.

    Parameters
    ----------
    a : LinearOperator
        Symmetric positive definite operator.
    m : Preconditioner or None
        Symmetric positive definite preconditioner; None means identity.
    b : (n,) array
        Right-hand side.
    """
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 1 or b.size != a.dim:
        raise ValueError(f"right-hand side has shape {b.shape}, expected ({a.dim},)")
    if max_iter < 1:
        raise ValueError(f"max_iter must be positive, got {max_iter}")
    x = np.zeros_like(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x
    r = b.copy()
    z = m(r) if m is not None else r
    p = z.copy()
    rz = r @ z
    for _ in range(max_iter):
        ap = a(p)
        pap = p @ ap
        if not np.isfinite(pap) or pap <= 0.0:
            raise PCGBreakdown(
                f"nonpositive curvature p.T A p = {pap!r}; operator is not SPD"
            )
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        if rtol > 0.0 and np.linalg.norm(r) <= rtol * bnorm:
            break
        z = m(r) if m is not None else r
        rz_next = r @ z
        if rz_next == 0.0:
            break
        p = z + (rz_next / rz) * p
        rz = rz_next
    return x


class InnerPCGPreconditioner(Preconditioner):
    """Preconditioner that approximately inverts A itself by running a fixed
    number of PCG steps on each column.

    With ``steps`` fixed and no residual stopping test, the map b -> x is
    deterministic but not exactly linear in b (the CG step lengths depend on
    b), so this sits slightly outside the linear SPD preconditioner model.
    In practice a handful of steps behaves like a high-quality T and sharply
    reduces outer iteration counts.
    """

    def __init__(self, a, inner, steps):
        if steps < 1:
            raise ValueError(f"steps must be positive, got {steps}")
        if inner is not None and inner.dim != a.dim:
            raise ValueError(
                f"dimensions differ: operator has {a.dim}, inner "
                f"preconditioner has {inner.dim}"
            )
        super().__init__(a.dim)
        self.a = a
        self.inner = inner
        self.steps = int(steps)

    def _apply(self, x):
        y = np.empty_like(x)
        for j in range(x.shape[1]):
            y[:, j] = pcg_solve(self.a, self.inner, x[:, j], self.steps, 0.0)
        return y


def inner_pcg_preconditioner(a, inner, steps):
    """Fixed-step PCG on A as a preconditioner; ``inner`` preconditions the
    PCG iteration itself (e.g. Jacobi, or None for plain CG)."""
    return InnerPCGPreconditioner(a, inner, steps)
