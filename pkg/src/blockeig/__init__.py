"""Matrix-free block preconditioned eigensolver for symmetric pencils.

Computes the smallest eigenpairs of A x = lambda B x where A is symmetric
and B symmetric positive definite, touching A and B only through block
operator applications.  See ``blockeig.lobpcg.solve`` for the solver,
``blockeig.operators`` for the operator and preconditioner contracts, and
``blockeig.problems`` for the validation oracles.
"""

from .lobpcg import (
    Constraints,
    HistoryEntry,
    SolverConfig,
    SolverReport,
    apply_constraints,
    b_orthonormalize,
    solve,
    solve_staged,
)
from .multivec import NotSPD
from .operators import (
    DenseOperator,
    DiagonalOperator,
    Grid3D,
    IdentityOperator,
    IdentityPreconditioner,
    InnerPCGPreconditioner,
    JacobiPreconditioner,
    Laplacian3D,
    LinearOperator,
    MatrixFreeOperator,
    PCGBreakdown,
    Preconditioner,
    ShiftedOperator,
    inner_pcg_preconditioner,
    jacobi_preconditioner,
    laplacian3d,
    pcg_solve,
    shift_operator,
)
from .problems import (
    AnalyticSpectrum,
    analytic_spectrum,
    dense_oracle_spectrum,
    exact_eigenvalues,
)

__version__ = "0.1.0"

__all__ = [
    "Constraints",
    "HistoryEntry",
    "SolverConfig",
    "SolverReport",
    "apply_constraints",
    "b_orthonormalize",
    "solve",
    "solve_staged",
    "NotSPD",
    "DenseOperator",
    "DiagonalOperator",
    "Grid3D",
    "IdentityOperator",
    "IdentityPreconditioner",
    "InnerPCGPreconditioner",
    "JacobiPreconditioner",
    "Laplacian3D",
    "LinearOperator",
    "MatrixFreeOperator",
    "PCGBreakdown",
    "Preconditioner",
    "ShiftedOperator",
    "inner_pcg_preconditioner",
    "jacobi_preconditioner",
    "laplacian3d",
    "pcg_solve",
    "shift_operator",
    "AnalyticSpectrum",
    "analytic_spectrum",
    "dense_oracle_spectrum",
    "exact_eigenvalues",
    "__version__",
]
