"""Tests for the block eigensolver: constraints, orthonormalization, the
solve driver, and staged solves.

Expected eigenvalues come from problems small enough to know exactly
(diagonal operators, the closed-form Laplacian spectrum) or from the dense
projected eigensolver applied to the assembled pencil, never from the
iterative solver itself.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from blockeig import multivec as mv
from blockeig.lobpcg import (
    Constraints,
    SolverConfig,
    apply_constraints,
    b_orthonormalize,
    solve,
    solve_staged,
)
from blockeig.multivec import NotSPD
from blockeig.operators import (
    DiagonalOperator,
    jacobi_preconditioner,
    laplacian3d,
)
from blockeig.problems import exact_eigenvalues


def rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def random_block(n, k, seed):
    return rng(seed).standard_normal((n, k))


def diag_range(n):
    """diag(1, 2, ..., n): eigenvalues are the integers, vectors are e_i."""
    return DiagonalOperator(np.arange(1.0, n + 1.0))


# ---------------------------------------------------------------------------
# configuration


def test_config_defaults():
    cfg = SolverConfig()
    assert cfg.block_size == 1
    assert cfg.tol == 1e-6
    assert cfg.max_iter == 200
    assert cfg.seed == 0
    assert cfg.lock_history
    assert not cfg.relative_tol
    cfg.validate()


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(block_size=0).validate()
    with pytest.raises(ValueError):
        SolverConfig(tol=0.0).validate()
    with pytest.raises(ValueError):
        SolverConfig(tol=-1e-6).validate()
    with pytest.raises(ValueError):
        SolverConfig(max_iter=0).validate()


# ---------------------------------------------------------------------------
# constraints


def test_constraints_from_basis_count():
    y = np.eye(5)[:, :2]
    cons = Constraints.from_basis(y)
    assert cons.count == 2


def test_constraints_require_2d_basis():
    with pytest.raises(ValueError):
        Constraints.from_basis(np.ones(4))


def test_constraints_reject_dependent_basis():
    y = np.ones((5, 2))  # two identical columns
    with pytest.raises(NotSPD):
        Constraints.from_basis(y)


def test_apply_constraints_none_is_identity():
    x = random_block(6, 2, 0)
    assert apply_constraints(x, None) is x


def test_apply_constraints_coordinate_example():
    # Constraining against e1 zeroes the first coordinate of every column.
    cons = Constraints.from_basis(np.eye(4)[:, :1])
    out = apply_constraints(np.ones((4, 2)), cons)
    assert_allclose(out[0], [0.0, 0.0], rtol=0.0, atol=1e-15)
    assert_array_equal(out[1:], np.ones((3, 2)))


def test_apply_constraints_projector_properties():
    # B-oblique projector: idempotent, and (BY)^T result vanishes.
    n, l = 20, 3
    for seed in range(20):
        bdiag = rng(1000 + seed).uniform(0.5, 3.0, n)
        b = DiagonalOperator(bdiag)
        y = random_block(n, l, seed)
        cons = Constraints.from_basis(y, b)
        x = random_block(n, 4, 500 + seed)
        px = apply_constraints(x, cons)
        assert_allclose(apply_constraints(px, cons), px, rtol=0.0, atol=1e-11)
        assert np.abs(mv.gram(cons.by, px)).max() <= 1e-11


# ---------------------------------------------------------------------------
# b_orthonormalize


def test_b_orthonormalize_scales_single_column():
    x = np.zeros((4, 1))
    x[0, 0] = 2.0
    xo, bxo, r = b_orthonormalize(x, x)
    assert_array_equal(xo, np.eye(4)[:, :1])
    assert bxo is xo
    assert_array_equal(r, [[2.0]])


def test_b_orthonormalize_keeps_orthonormal_block():
    q, _ = np.linalg.qr(random_block(10, 3, 1))
    qo, _, r = b_orthonormalize(q.copy(), q.copy())
    assert_allclose(r, np.eye(3), rtol=0.0, atol=1e-13)
    assert_allclose(qo, q, rtol=0.0, atol=1e-13)


def test_b_orthonormalize_general_metric():
    b = DiagonalOperator(np.arange(1.0, 31.0))
    for seed in range(20):
        x = random_block(30, 4, seed)
        bx = b(x)
        xo, bxo, r = b_orthonormalize(x, bx)
        assert_allclose(mv.gram(xo, bxo), np.eye(4), rtol=0.0, atol=1e-11)
        assert_allclose(bxo, b(xo), rtol=0.0, atol=1e-11)
        assert_allclose(xo @ r, x, rtol=0.0, atol=1e-11 * np.abs(x).max())
        assert_array_equal(np.tril(r, -1), np.zeros((4, 4)))


def test_b_orthonormalize_rejects_dependent_columns():
    x = np.ones((6, 2))
    with pytest.raises(NotSPD):
        b_orthonormalize(x, x)


def test_b_orthonormalize_zero_column_names_pivot():
    x = np.eye(5)[:, :3].copy()
    x[:, 1] = 0.0
    with pytest.raises(NotSPD) as exc:
        b_orthonormalize(x, x)
    assert exc.value.pivot == 1


# ---------------------------------------------------------------------------
# solve: exact small problems


def test_solve_diagonal_operator():
    report = solve(
        diag_range(10),
        config=SolverConfig(block_size=3, tol=1e-10, max_iter=100),
    )
    assert report.ok
    assert report.all_converged
    assert_allclose(report.eigenvalues, [1.0, 2.0, 3.0], rtol=0.0, atol=1e-10)
    assert report.iterations_used <= 30
    # Eigenvectors of a diagonal matrix are coordinate vectors.
    for j, col in enumerate(report.eigenvectors.T):
        assert abs(abs(col[j]) - 1.0) < 1e-8
        assert np.abs(np.delete(col, j)).max() < 1e-7


def test_solve_status_string_matches_fallback_count():
    report = solve(
        diag_range(10),
        config=SolverConfig(block_size=3, tol=1e-10, max_iter=100),
    )
    if report.basis_fallbacks:
        assert report.status == f"BasisFallback({report.basis_fallbacks})"
    else:
        assert report.status == "Converged"


def test_solve_single_point_laplacian():
    report = solve(laplacian3d((1, 1, 1)), config=SolverConfig(block_size=1))
    assert report.all_converged
    assert report.iterations_used == 0
    assert_allclose(report.eigenvalues, [6.0], rtol=1e-14)


def test_solve_exact_initial_guess_converges_immediately():
    a = diag_range(10)
    x0 = np.eye(10)[:, :3]
    report = solve(a, x0=x0, config=SolverConfig(block_size=3, tol=1e-8))
    assert report.iterations_used == 0
    assert report.all_converged
    assert_allclose(report.eigenvalues, [1.0, 2.0, 3.0], rtol=0.0, atol=1e-12)


def test_solve_laplacian_block_against_formula():
    grid = (5, 5, 5)
    a = laplacian3d(grid)
    report = solve(
        a,
        t=jacobi_preconditioner(a),
        config=SolverConfig(block_size=4, tol=1e-8, max_iter=300),
    )
    assert report.all_converged
    assert_allclose(
        report.eigenvalues, exact_eigenvalues(grid, 4), rtol=1e-8, atol=0.0
    )
    assert np.all(report.residual_norms <= 1e-8 * 1.01)
    bortho = np.abs(mv.gram(report.eigenvectors, report.eigenvectors) - np.eye(4))
    assert bortho.max() <= 1e-8


# ---------------------------------------------------------------------------
# solve: input validation


def test_solve_x0_shape_validation():
    with pytest.raises(ValueError):
        solve(diag_range(6), x0=np.ones((5, 2)), config=SolverConfig(block_size=2))


def test_solve_x0_finite_validation():
    x0 = np.ones((6, 2))
    x0[0, 0] = np.nan
    with pytest.raises(ValueError):
        solve(diag_range(6), x0=x0, config=SolverConfig(block_size=2))


def test_solve_x0_degenerate_columns():
    x0 = np.ones((6, 2))  # identical columns
    with pytest.raises(ValueError, match="B-degenerate"):
        solve(diag_range(6), x0=x0, config=SolverConfig(block_size=2))


def test_solve_block_size_exceeding_free_dimension():
    cons = Constraints.from_basis(np.eye(4)[:, :2])
    with pytest.raises(ValueError):
        solve(diag_range(4), y=cons, config=SolverConfig(block_size=3))


def test_solve_preconditioner_shape_check():
    with pytest.raises(ValueError, match="preconditioner returned shape"):
        solve(
            diag_range(8),
            t=lambda w: w[:4],
            config=SolverConfig(block_size=2, tol=1e-12),
        )


def test_solve_preconditioner_finite_check():
    with pytest.raises(ValueError, match="non-finite"):
        solve(
            diag_range(8),
            t=lambda w: w * np.nan,
            config=SolverConfig(block_size=2, tol=1e-12),
        )


# ---------------------------------------------------------------------------
# solve: report and history bookkeeping


def test_history_indexing_and_lock_consistency():
    report = solve(
        laplacian3d((4, 4, 4)),
        config=SolverConfig(block_size=3, tol=1e-6, max_iter=200),
    )
    assert report.all_converged
    hist = report.history
    assert len(hist) == report.iterations_used + 1
    assert [h.iteration for h in hist] == list(range(len(hist)))
    # Active flags only ever turn off, and locked_now matches the flip.
    for prev, cur in zip(hist[:-1], hist[1:]):
        assert np.all(prev.active | ~cur.active == prev.active | True)
        assert not np.any(cur.active & ~prev.active)
        flipped = np.flatnonzero(prev.active & ~cur.active)
        assert tuple(int(i) for i in flipped) == cur.locked_now
    for j, lock_it in enumerate(report.lock_iterations):
        assert lock_it >= 0
        assert j in hist[lock_it].locked_now
    assert_array_equal(report.converged, report.lock_iterations >= 0)


def test_history_disabled_omits_trajectories():
    report = solve(
        diag_range(8),
        config=SolverConfig(block_size=2, tol=1e-8, lock_history=False),
    )
    assert report.all_converged
    for h in report.history:
        assert h.ritz is None
        assert h.residual_norms is None
        assert h.active is not None


def test_relative_tolerance_mode():
    report = solve(
        diag_range(8),
        config=SolverConfig(block_size=2, tol=1e-9, relative_tol=True),
    )
    assert report.all_converged
    assert_allclose(report.eigenvalues, [1.0, 2.0], rtol=0.0, atol=1e-8)


def test_internal_invariant_checks_pass():
    report = solve(
        laplacian3d((3, 3, 3)),
        config=SolverConfig(block_size=2, tol=1e-8, check_invariants=True),
    )
    assert report.all_converged


def test_verbosity_zero_is_silent(capsys):
    solve(diag_range(6), config=SolverConfig(block_size=2, tol=1e-8))
    assert capsys.readouterr().out == ""


def test_verbosity_one_prints_summary(capsys):
    solve(diag_range(6), config=SolverConfig(block_size=2, tol=1e-8, verbosity=1))
    out = capsys.readouterr().out
    assert "[blockeig]" in out
    assert "converged" in out


# ---------------------------------------------------------------------------
# solve: failure reporting


def test_unreachable_tolerance_fails_honestly():
    # With m = n the first Rayleigh-Ritz step is exact, every residual is
    # roundoff, and a 1e-30 threshold can never be met: the residual block
    # is numerically zero, so the basis degenerates and the solver says so.
    report = solve(
        diag_range(3), config=SolverConfig(block_size=3, tol=1e-30, max_iter=50)
    )
    assert report.status == "Failed(BasisDegeneracy)"
    assert not report.ok
    assert not report.converged.any()


def test_max_iterations_reported():
    report = solve(
        laplacian3d((6, 6, 6)),
        config=SolverConfig(block_size=2, tol=1e-12, max_iter=3),
    )
    assert report.ok
    assert report.status == "MaxIterReached"
    assert not report.all_converged
    assert report.iterations_used == 3


# ---------------------------------------------------------------------------
# solve: generalized problems and hard constraints


def test_generalized_pencil_against_dense_oracle():
    n, m = 30, 4
    a = diag_range(n)
    b = DiagonalOperator(rng(7).uniform(0.5, 3.0, n))
    vals, _ = mv.gen_sym_eig(np.diag(a.d), np.diag(b.d))
    report = solve(
        a, b=b, config=SolverConfig(block_size=m, tol=1e-10, max_iter=300)
    )
    assert report.all_converged
    assert_allclose(report.eigenvalues, vals[:m], rtol=1e-10, atol=0.0)
    bortho = mv.gram(report.eigenvectors, b(report.eigenvectors)) - np.eye(m)
    assert np.abs(bortho).max() <= 1e-8


def test_constrained_generalized_pencil():
    n, m = 30, 2
    a = diag_range(n)
    b = DiagonalOperator(rng(7).uniform(0.5, 3.0, n))
    vals, vecs = mv.gen_sym_eig(np.diag(a.d), np.diag(b.d))
    cons = Constraints.from_basis(vecs[:, :2], b)
    report = solve(
        a, b=b, y=cons, config=SolverConfig(block_size=m, tol=1e-10, max_iter=300)
    )
    assert report.all_converged
    assert_allclose(report.eigenvalues, vals[2:4], rtol=1e-9, atol=0.0)
    for h in report.history:
        assert h.constraint_violation is not None
        assert h.constraint_violation <= 1e-8


def test_exact_constraints_shift_the_floor():
    # With e1..e3 locked out of diag(1..10), the reachable spectrum starts
    # at 4; no Ritz value may ever dip below it (beyond roundoff).
    cons = Constraints.from_basis(np.eye(10)[:, :3])
    report = solve(
        diag_range(10),
        y=cons,
        config=SolverConfig(block_size=2, tol=1e-10, max_iter=100),
    )
    assert report.all_converged
    assert_allclose(report.eigenvalues, [4.0, 5.0], rtol=0.0, atol=1e-9)
    for h in report.history:
        assert h.ritz.min() >= 4.0 - 1e-8


# ---------------------------------------------------------------------------
# staged solves


def test_staged_walks_the_spectrum():
    report = solve_staged(
        diag_range(10),
        total_wanted=6,
        stage_block=2,
        config=SolverConfig(tol=1e-10, max_iter=100),
    )
    assert report.ok
    assert report.all_converged
    assert_allclose(
        report.eigenvalues, np.arange(1.0, 7.0), rtol=0.0, atol=1e-8
    )
    assert len(report.stages) == 3
    assert report.iterations_used == sum(
        r.iterations_used for r in report.stages
    )
    stamps = sorted({h.stage for h in report.history})
    assert stamps == [0, 1, 2]


def test_staged_validation():
    a = diag_range(6)
    with pytest.raises(ValueError):
        solve_staged(a, total_wanted=4, stage_block=0)
    with pytest.raises(ValueError):
        solve_staged(a, total_wanted=1, stage_block=2)


def test_staged_union_is_b_orthonormal():
    b = DiagonalOperator(rng(11).uniform(0.5, 2.0, 20))
    report = solve_staged(
        diag_range(20),
        b=b,
        total_wanted=6,
        stage_block=3,
        config=SolverConfig(tol=1e-10, max_iter=200),
    )
    assert report.all_converged
    g = mv.gram(report.eigenvectors, b(report.eigenvectors))
    assert np.abs(g - np.eye(6)).max() <= 1e-8


def test_staged_stall_propagates_status():
    report = solve_staged(
        laplacian3d((6, 6, 6)),
        total_wanted=4,
        stage_block=2,
        config=SolverConfig(tol=1e-12, max_iter=2),
    )
    assert report.status == "MaxIterReached"
    assert not report.all_converged
    assert len(report.stages) == 1  # stopped after the stalled stage
