"""Block preconditioned eigensolver for Ax = lambda Bx, smallest eigenvalues.

The solver maintains a block X of m Ritz vectors together with the blocks of
preconditioned residuals W and search directions P, and performs a
Rayleigh-Ritz step on the combined trial subspace each iteration.  All long
operations are blocked: one preconditioner application, one A application,
and one B application per iteration, on the active columns only.

Locking comes in two flavors.  Soft locking removes a converged column's
residual from the iteration (the index leaves the active set J) while the
column keeps its seat in the Rayleigh-Ritz basis, so it continues to improve
for free.  Hard locking constrains the whole iteration to the B-orthogonal
complement of a fixed basis Y of already-accepted eigenvectors; it is how
``solve_staged`` computes a spectrum slice by slice.

Numerical safety hinges on three habits used throughout.  Every column is
scaled to unit B-norm before a Cholesky-based orthonormalization (making the
factorization invariant under column scaling by construction).  Every
Cholesky failure is caught and answered by shrinking the trial basis rather
than aborting, first dropping offending residual columns, then the P block,
and only then giving up.  And because the projected pencil asserts identity
and Lambda diagonal blocks instead of computing them, the solver measures
the real deviation of X^T B X from the identity every iteration and rebuilds
the exact Ritz state when it drifts; the returned eigenvalues are always
recomputed from exactly assembled Gram matrices on exit.  Without the last
habit the asserted blocks slowly become lies, which caps the attainable
accuracy and, amplified through an ill-conditioned basis, can surface as
spurious "converged" eigenvalues.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import multivec as mv
from .multivec import NotSPD

__all__ = [
    "SolverConfig",
    "Constraints",
    "HistoryEntry",
    "SolverReport",
    "apply_constraints",
    "b_orthonormalize",
    "solve",
    "solve_staged",
]

# Relative Cholesky pivot floor for every basis orthonormalization inside the
# solver.  A trial vector whose component orthogonal to the rest of the basis
# is this small (squared, relative to its own norm) carries no usable new
# direction: keeping it would make the projected metric so ill-conditioned
# that its asserted identity blocks turn into O(1) lies and the Ritz step
# returns garbage (observed as spurious near-zero eigenvalues on small
# problems iterated past convergence).  Flooring the pivot converts that
# silent corruption into a NotSPD signal for the basis repair ladder.
PIVOT_FLOOR = 1e-8

# Tolerated deviation of X^T B X from the identity before the Ritz block is
# re-orthonormalized and re-diagonalized in place.  The asserted diagonal
# blocks of the projected pencil are only as true as this bound, and their
# error is amplified by the inverse of the smallest accepted Cholesky pivot,
# so the two limits together cap the Rayleigh-Ritz backward error near
# DRIFT_LIMIT / PIVOT_FLOOR = 1e-3 in the worst accepted step, with the
# drift repaired on the very next iteration.
DRIFT_LIMIT = 1e-11


@dataclass(frozen=True)
class SolverConfig:
    """Knobs for a solve.

    block_size is m, the number of eigenpairs computed together.  tol is the
    per-vector residual 2-norm threshold ``norm(A x - lambda B x) <= tol``
    (absolute by default; set relative_tol to scale it by ``norm(A x)`` per
    column).  seed feeds the random initial block when no X0 is supplied.
    lock_history=False drops the per-iteration Ritz/residual trajectories
    from the report, keeping only the active-set and lock bookkeeping.
    check_invariants enables internal orthogonality assertions after every
    Rayleigh-Ritz step (for tests; roughly doubles the small-matrix work).
    """

    block_size: int = 1
    tol: float = 1e-6
    max_iter: int = 200
    seed: int = 0
    lock_history: bool = True
    verbosity: int = 0
    relative_tol: bool = False
    check_invariants: bool = False

    def validate(self):
        if self.block_size < 1:
            raise ValueError(f"block_size must be >= 1, got {self.block_size}")
        if not self.tol > 0.0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")


class Constraints:
    """Hard-locking basis: iterates are kept B-orthogonal to span(Y).

    Holds Y, the cached product BY, and the Cholesky factor of Y^T B Y, so
    that projections apply with two triangular solves and no operator
    applications.
    """

    def __init__(self, y, by, yby_chol):
        self.y = y
        self.by = by
        self.yby_chol = yby_chol

    @classmethod
    def from_basis(cls, y, b=None):
        """Build constraints from a basis block, computing BY and the factor.

        Raises NotSPD if the columns of y are not linearly B-independent.
        """
        y = np.asarray(y, dtype=np.float64)
        if y.ndim != 2:
            raise ValueError(f"constraint basis must be 2-d, got shape {y.shape}")
        by = b(y) if b is not None else y
        r = mv.cholesky(mv.gram(y, by))
        return cls(y, by, r)

    @property
    def count(self):
        return self.y.shape[1]


def apply_constraints(x, constraints, b=None):
    """Remove from each column of x its B-oblique projection onto span(Y).

    Computes ``x - Y (Y^T B Y)^{-1} (BY)^T x`` using the cached factor; the
    inverse is never formed.  The b argument is accepted for call-site
    symmetry with the solver but is not consulted, since BY is cached.
    After the call ``(BY)^T result`` vanishes to roundoff.
    """
    if constraints is None or constraints.count == 0:
        return x
    rhs = mv.gram(constraints.by, x)
    coef = mv.chol_solve(constraints.yby_chol, rhs)
    return x - constraints.y @ coef


def b_orthonormalize(x, bx, pivot_floor=0.0):
    """B-orthonormalize a block: returns (x', bx', r) with x'^T (b x') = I.

    Columns are first scaled to unit B-norm, then the scaled Gram matrix is
    Cholesky-factored and inverted against the block from the right.  The
    pre-scaling makes the factorization invariant under any further column
    scaling of the input.  bx must hold B @ x and is carried through the same
    transform, so no operator application happens here; pass bx aliasing x
    itself when B is the identity.

    The returned r is the effective upper-triangular factor including the
    scaling, i.e. ``x approx x' @ r``; apply ``tri_solve_right(ax, r)`` to
    carry a cached product A @ x through the same change of basis.

    Raises
    ------
    NotSPD
        If a column has nonpositive or non-finite B-norm (its index is the
        pivot), or if the scaled Gram matrix fails Cholesky at or below
        pivot_floor.
    """
    shared = bx is x
    sq = np.einsum("ij,ij->j", x, bx)
    bad = ~(sq > 0.0) | ~np.isfinite(sq)
    if bad.any():
        raise NotSPD(int(np.flatnonzero(bad)[0]))
    s = np.sqrt(sq)
    xs = x / s
    bxs = xs if shared else bx / s
    r = mv.cholesky(mv.gram(xs, bxs), pivot_floor=pivot_floor)
    xo = mv.tri_solve_right(xs, r)
    bxo = xo if shared else mv.tri_solve_right(bxs, r)
    return xo, bxo, r * s[None, :]


def _orthonormalize_dropping(w, bw):
    """B-orthonormalize w, dropping numerically dependent columns.

    Each Cholesky pivot failure identifies one offending column, which is
    removed before retrying.  Returns (w', bw', dropped_count); the result
    may have zero columns if everything was dependent.
    """
    shared = bw is w
    total = w.shape[1]
    kept = list(range(total))
    while kept:
        wk = w[:, kept]
        bwk = wk if shared else bw[:, kept]
        try:
            wo, bwo, _ = b_orthonormalize(wk, bwk, pivot_floor=PIVOT_FLOOR)
            return wo, bwo, total - len(kept)
        except NotSPD as err:
            del kept[err.pivot]
    return w[:, :0], bw[:, :0], total


@dataclass(frozen=True)
class HistoryEntry:
    """State snapshot at the top of one iteration (iteration 0 is the state
    right after the initial Rayleigh-Ritz step).

    ritz and residual_norms cover all m columns, soft-locked ones included;
    they are None when the config disabled trajectory recording.  active
    reflects the lock test of this iteration (True = still iterating).
    locked_now lists the indices that crossed the threshold at this
    iteration.  fallbacks counts basis repairs during the update that
    produced this state.  constraint_violation is max|{(BY)}^T X| when hard
    constraints are present, else None.  stage is 0 for a plain solve and
    the stage index inside solve_staged.
    """

    iteration: int
    ritz: np.ndarray | None
    residual_norms: np.ndarray | None
    active: np.ndarray
    locked_now: tuple
    fallbacks: int
    constraint_violation: float | None
    stage: int = 0


@dataclass(frozen=True)
class SolverReport:
    """Everything a solve produced.

    eigenvalues are ascending; eigenvectors are the matching B-orthonormal
    columns.  Both come from the exit refresh (an exact Rayleigh-Ritz step
    on the final block), as do residual_norms, which may therefore differ
    slightly from the last history entry.  converged flags each column (a
    column converges by reaching the residual threshold; it then leaves the
    active set for good).
    lock_iterations holds the iteration at which each column locked, -1 if
    it never did.  status is one of "Converged", "MaxIterReached",
    "BasisFallback(<count>)" (finished, but basis repairs were needed), or
    "Failed(<reason>)".  For staged solves, stages holds the per-stage
    reports and history concatenates their entries with the stage field set.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    iterations_used: int
    converged: np.ndarray
    residual_norms: np.ndarray
    lock_iterations: np.ndarray
    history: tuple
    status: str
    basis_fallbacks: int = 0
    stages: tuple = ()

    @property
    def all_converged(self):
        return bool(self.converged.all())

    @property
    def ok(self):
        """True unless the solve aborted on an exhausted fallback ladder."""
        return not self.status.startswith("Failed")


def _check_state(x, bx, constraints):
    g = mv.gram(x, bx)
    err = np.abs(g - np.eye(g.shape[0])).max()
    if err > 1e-10:
        raise RuntimeError(f"block lost B-orthonormality: max deviation {err:.3e}")
    if constraints is not None and constraints.count > 0:
        scale = max(1.0, float(mv.column_norms(x).max()))
        viol = np.abs(mv.gram(constraints.by, x)).max()
        if viol > 1e-10 * scale:
            raise RuntimeError(
                f"block lost constraint orthogonality: max violation {viol:.3e}"
            )


def _refresh_ritz(x, ax, bx, b):
    """Re-establish the exact Ritz state of the block x.

    B-orthonormalizes x, carries the cached product A x through the change of
    basis, and re-diagonalizes the projected operator with an exactly
    computed Gram matrix.  The span of x is untouched; afterwards the
    identity and Lambda blocks asserted by the projected pencil hold to
    roundoff again.  No operator applications.  Raises NotSPD if the block
    itself has become B-degenerate.
    """
    x, bx, r = b_orthonormalize(x, bx)
    ax = mv.tri_solve_right(ax, r)
    lam, q = mv.sym_eig(mv.gram(x, ax))
    x = mv.multiply(x, q)
    ax = mv.multiply(ax, q)
    bx = x if b is None else mv.multiply(bx, q)
    return x, ax, bx, lam


def _project_pencil(lam, x, ax, w, aw, bw, pj, apj, bpj, bx, exact_diagonal=False):
    """Assemble the projected pencil (gramA, gramB) on the basis [x, w, p].

    Only upper-triangular blocks are filled; the small eigensolver reads the
    upper triangle.  The diagonal blocks are Lambda and identities by
    construction (x holds B-orthonormal Ritz vectors, w and p are freshly
    B-orthonormalized); exact_diagonal=True computes them instead, which
    costs three extra Gram products and is useful only as a cross-check.
    """
    m = x.shape[1]
    nw = w.shape[1]
    npj = 0 if pj is None else pj.shape[1]
    dim = m + nw + npj
    ga = np.zeros((dim, dim))
    gb = np.zeros((dim, dim))
    sx = slice(0, m)
    sw = slice(m, m + nw)
    sp = slice(m + nw, dim)
    if exact_diagonal:
        ga[sx, sx] = mv.gram(x, ax)
        gb[sx, sx] = mv.gram(x, bx)
        ga[sw, sw] = mv.gram(w, aw)
        gb[sw, sw] = mv.gram(w, bw)
    else:
        ga[sx, sx] = np.diag(lam)
        gb[sx, sx] = np.eye(m)
        ga[sw, sw] = mv.gram(w, aw)
        gb[sw, sw] = np.eye(nw)
    ga[sx, sw] = mv.gram(x, aw)
    gb[sx, sw] = mv.gram(x, bw)
    if npj:
        ga[sx, sp] = mv.gram(x, apj)
        ga[sw, sp] = mv.gram(w, apj)
        gb[sx, sp] = mv.gram(x, bpj)
        gb[sw, sp] = mv.gram(w, bpj)
        if exact_diagonal:
            ga[sp, sp] = mv.gram(pj, apj)
            gb[sp, sp] = mv.gram(pj, bpj)
        else:
            ga[sp, sp] = mv.gram(pj, apj)
            gb[sp, sp] = np.eye(npj)
    return ga, gb


def solve(a, b=None, t=None, y=None, x0=None, config=None):
    """Compute the m smallest eigenpairs of A x = lambda B x.

    Parameters
    ----------
    a : LinearOperator
        Symmetric operator, applied blockwise.
    b : LinearOperator, optional
        Symmetric positive definite metric; identity when omitted (and then
        no B products are stored or computed at all).
    t : Preconditioner, optional
        Applied to the active residual block once per iteration; identity
        when omitted.
    y : Constraints, optional
        Hard-locking constraints; all iterates stay B-orthogonal to span(Y).
    x0 : (n, m) array, optional
        Initial guess block, m linearly independent columns.  A seeded
        random block is used when omitted.
    config : SolverConfig, optional

    Returns
    -------
    SolverReport

    Notes
    -----
    Per iteration the work on the long dimension is: residuals from cached
    products, one T / one A / one B application on the active columns, two
    tall orthonormalization passes (W and P), and the block recombinations
    after the projected eigenproblem.  The trial basis is [X, W] on the
    first iteration and [X, W_J, P_J] afterwards, where J is the active set.
    """
    cfg = config if config is not None else SolverConfig()
    cfg.validate()
    m = cfg.block_size
    n = a.dim
    ncons = 0 if y is None else y.count
    if m > n - ncons:
        raise ValueError(
            f"block size {m} exceeds the constrained problem dimension "
            f"{n} - {ncons}"
        )

    if x0 is not None:
        x = np.array(x0, dtype=np.float64, copy=True)
        if x.shape != (n, m):
            raise ValueError(f"x0 has shape {x.shape}, expected ({n}, {m})")
        if not np.all(np.isfinite(x)):
            raise ValueError("x0 contains non-finite entries")
    else:
        x = mv.seeded_random_fill(n, m, cfg.seed)

    x = apply_constraints(x, y)
    bx = b(x) if b is not None else x
    try:
        x, bx, _ = b_orthonormalize(x, bx)
    except NotSPD as err:
        raise ValueError(
            f"initial block is B-degenerate at column {err.pivot}"
        ) from err
    ax = a(x)
    lam, q = mv.sym_eig(mv.gram(x, ax))
    x = mv.multiply(x, q)
    ax = mv.multiply(ax, q)
    bx = x if b is None else mv.multiply(bx, q)

    active = np.ones(m, dtype=bool)
    lock_iteration = np.full(m, -1, dtype=np.int64)
    p = ap = bp = None
    history = []
    pending_fallbacks = 0
    total_fallbacks = 0
    failure = None
    norms = np.zeros(m)

    for it in range(cfg.max_iter + 1):
        drift = np.abs(mv.gram(x, bx) - np.eye(m)).max()
        if drift > DRIFT_LIMIT:
            try:
                x, ax, bx, lam = _refresh_ritz(x, ax, bx, b)
            except NotSPD:
                failure = "BasisDegeneracy"
                break
            if cfg.verbosity >= 2:
                print(f"  it {it:4d}  Ritz block re-orthonormalized "
                      f"(drift {drift:.1e})")
        w_full = ax - bx * lam
        norms = mv.column_norms(w_full)
        if cfg.relative_tol:
            thresholds = cfg.tol * mv.column_norms(ax)
        else:
            thresholds = np.full(m, cfg.tol)
        newly = active & (norms < thresholds)
        lock_iteration[newly] = it
        active = active & ~newly
        violation = None
        if ncons:
            violation = float(np.abs(mv.gram(y.by, x)).max())
        history.append(
            HistoryEntry(
                iteration=it,
                ritz=lam.copy() if cfg.lock_history else None,
                residual_norms=norms.copy() if cfg.lock_history else None,
                active=active.copy(),
                locked_now=tuple(int(i) for i in np.flatnonzero(newly)),
                fallbacks=pending_fallbacks,
                constraint_violation=violation,
            )
        )
        total_fallbacks += pending_fallbacks
        pending_fallbacks = 0
        if cfg.verbosity >= 2:
            print(
                f"  it {it:4d}  active {int(active.sum()):3d}  "
                f"max resid {norms.max():.3e}"
            )
        if not active.any() or it == cfg.max_iter:
            break
        if cfg.check_invariants:
            _check_state(x, bx, y)

        j = np.flatnonzero(active)
        w = w_full[:, j]
        if t is not None:
            w = np.asarray(t(w), dtype=np.float64)
            if w.shape != (n, j.size):
                raise ValueError(
                    f"preconditioner returned shape {w.shape}, "
                    f"expected ({n}, {j.size})"
                )
            if not np.all(np.isfinite(w)):
                raise ValueError("preconditioner returned non-finite entries")
        w = apply_constraints(w, y)
        bw = b(w) if b is not None else w
        w, bw, dropped = _orthonormalize_dropping(w, bw)
        pending_fallbacks += dropped
        if w.shape[1] == 0:
            failure = "BasisDegeneracy"
            break
        aw = a(w)

        pj = apj = bpj = None
        if p is not None:
            pj = p[:, j]
            apj = ap[:, j]
            bpj = pj if b is None else bp[:, j]
            try:
                pj, bpj, r_eff = b_orthonormalize(pj, bpj, pivot_floor=PIVOT_FLOOR)
                apj = mv.tri_solve_right(apj, r_eff)
            except NotSPD:
                pj = apj = bpj = None
                pending_fallbacks += 1

        # Rayleigh-Ritz with basis repair: a gramB pivot failure names the
        # first trial vector dependent on its predecessors.  A pivot in the
        # P section (or anywhere while P is present) drops P; one in the W
        # section drops that residual column; one in the X section means
        # the Ritz block itself degenerated, which ends the solve.
        while True:
            ga, gb = _project_pencil(lam, x, ax, w, aw, bw, pj, apj, bpj, bx)
            try:
                lam_new, c = mv.gen_sym_eig(ga, gb, want=m, pivot_floor=PIVOT_FLOOR)
                break
            except NotSPD as err:
                pending_fallbacks += 1
                if pj is not None:
                    pj = apj = bpj = None
                elif m <= err.pivot < m + w.shape[1] and w.shape[1] > 1:
                    keep = np.arange(w.shape[1]) != err.pivot - m
                    w = w[:, keep]
                    aw = aw[:, keep]
                    bw = w if b is None else bw[:, keep]
                else:
                    failure = "BasisDegeneracy"
                    break
        if failure is not None:
            break
        nw = w.shape[1]

        cx = c[:m]
        cw = c[m : m + nw]
        cp = c[m + nw :]
        p_new = mv.multiply(w, cw)
        ap_new = mv.multiply(aw, cw)
        if pj is not None:
            p_new += mv.multiply(pj, cp)
            ap_new += mv.multiply(apj, cp)
        if b is None:
            bp_new = p_new
        else:
            bp_new = mv.multiply(bw, cw)
            if pj is not None:
                bp_new += mv.multiply(bpj, cp)
        x = mv.multiply(x, cx) + p_new
        ax = mv.multiply(ax, cx) + ap_new
        bx = x if b is None else mv.multiply(bx, cx) + bp_new
        p, ap, bp = p_new, ap_new, (p_new if b is None else bp_new)
        lam = lam_new

    total_fallbacks += pending_fallbacks
    if failure is None:
        # Exit refresh: report eigenvalues from exactly computed Gram
        # matrices and a B-orthonormal-to-roundoff block, independent of
        # whatever drift the asserted diagonal blocks accumulated since the
        # last in-loop repair.
        try:
            x, ax, bx, lam = _refresh_ritz(x, ax, bx, b)
            norms = mv.column_norms(ax - bx * lam)
        except NotSPD:
            failure = "BasisDegeneracy"
    converged = ~active
    if failure is not None:
        status = f"Failed({failure})"
    elif total_fallbacks:
        status = f"BasisFallback({total_fallbacks})"
    elif converged.all():
        status = "Converged"
    else:
        status = "MaxIterReached"
    if cfg.verbosity >= 1:
        print(
            f"[blockeig] {status}: {int(converged.sum())}/{m} converged in "
            f"{history[-1].iteration} iterations, max residual {norms.max():.3e}"
        )
    return SolverReport(
        eigenvalues=lam.copy(),
        eigenvectors=x,
        iterations_used=history[-1].iteration,
        converged=converged,
        residual_norms=norms,
        lock_iterations=lock_iteration,
        history=tuple(history),
        status=status,
        basis_fallbacks=total_fallbacks,
    )


def solve_staged(a, b=None, t=None, total_wanted=1, stage_block=1, config=None):
    """Compute total_wanted eigenpairs in stages of stage_block at a time.

    Each stage runs ``solve`` with every previously accepted eigenvector
    hard-locked into the constraints, so stage s computes eigenpairs
    s*stage_block .. (s+1)*stage_block - 1 of the original problem.  Stage
    seeds are offset from config.seed by the stage index, keeping the whole
    procedure deterministic.  Stops early if a stage fails or stalls, and
    reports whatever was accumulated with accurate per-column flags.

    The returned report concatenates the stages: eigenpairs sorted
    ascending, history entries carrying their stage index, iteration count
    summed, and the per-stage reports available in ``stages``.
    """
    cfg = config if config is not None else SolverConfig()
    cfg.validate()
    if stage_block < 1:
        raise ValueError(f"stage_block must be >= 1, got {stage_block}")
    if total_wanted < stage_block:
        raise ValueError(
            f"total_wanted ({total_wanted}) must be >= stage_block ({stage_block})"
        )

    reports = []
    constraints = None
    remaining = total_wanted
    stage = 0
    while remaining > 0:
        mcur = min(stage_block, remaining)
        stage_cfg = replace(cfg, block_size=mcur, seed=cfg.seed + stage)
        report = solve(a, b=b, t=t, y=constraints, config=stage_cfg)
        reports.append(report)
        if not (report.ok and report.all_converged):
            break
        basis = report.eigenvectors
        if constraints is not None:
            basis = np.hstack([constraints.y, basis])
        constraints = Constraints.from_basis(basis, b)
        remaining -= mcur
        stage += 1

    values = np.concatenate([r.eigenvalues for r in reports])
    order = np.argsort(values, kind="stable")
    vectors = np.hstack([r.eigenvectors for r in reports])[:, order]
    converged = np.concatenate([r.converged for r in reports])[order]
    residuals = np.concatenate([r.residual_norms for r in reports])[order]
    locks = np.concatenate([r.lock_iterations for r in reports])[order]
    history = tuple(
        replace(entry, stage=s)
        for s, r in enumerate(reports)
        for entry in r.history
    )
    fallbacks = sum(r.basis_fallbacks for r in reports)
    failed = [r.status for r in reports if not r.ok]
    if failed:
        status = failed[0]
    elif not converged.all():
        status = "MaxIterReached"
    elif fallbacks:
        status = f"BasisFallback({fallbacks})"
    else:
        status = "Converged"
    return SolverReport(
        eigenvalues=values[order],
        eigenvectors=vectors,
        iterations_used=sum(r.iterations_used for r in reports),
        converged=converged,
        residual_norms=residuals,
        lock_iterations=locks,
        history=history,
        status=status,
        basis_fallbacks=fallbacks,
        stages=tuple(reports),
    )
