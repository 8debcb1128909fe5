"""Residual map, linearizations, and the horizontal Newton iteration.

The discrete residual map is ``F(u) = K u - M f(u)`` with ``f(u)`` the
nodal values of the nonlinearity; its exact Jacobian is
``DF(u) = K - M diag(f'(u))``.  Landing on the fiber through a right-hand
side g means solving the horizontal part of ``F(u) = g`` inside one
horizontal affine slice, which is done with an extended linearization

    L_c(u) z = K z - P_Y [ J(u) P_X z ] - c M Q_X z,

where J(u) is the Jacobian's nonlinear block and P/Q are the horizontal and
vertical projections of the two coordinate systems.  L_c acts like the
projected Jacobian on horizontal vectors and like the shifted Laplacian on
vertical ones, so it stays invertible even where DF itself folds.  The
update ``u <- u + P_X h`` with ``L_c(u) h = g - F(u)`` keeps the vertical
coordinate of u pinned while driving the horizontal residual to zero.

``L_c`` is a sparse core ``K - J`` plus a correction of rank at most twice
the vertical dimension; solves factorize the dense assembled matrix at desk
scale and fall back to preconditioned Krylov above it.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NewtonError, SingularOperatorError
from .mesh import Mesh, assemble_mass, assemble_stiffness, assemble_weighted_mass, build_mesh
from .nonlinearity import Nonlinearity, eval_d2f_grid, eval_d2f_nodal, eval_f_nodal
from .spectral import SpectralData, compute_eigenpairs

DENSE_SOLVE_LIMIT = 8192
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 20
DEFAULT_DEPTH_MAX = 6
_RCOND_FLOOR = 1e-14

# Nonlinear block used inside L_c: 'interp' is the symmetric weighted mass
# built from the interpolated derivative values (the discretization the
# residual tables are calibrated against); 'nodal' is the exact Jacobian
# block M diag(f'(u)) of the discrete residual map.
DEFAULT_WEIGHT_MODE = "interp"


@dataclass(frozen=True)
class Problem:
    """Immutable bundle of mesh, matrices, spectral splitting and nonlinearity.

    ``c`` is the spectral shift of the extended linearization; it must avoid
    the eigenvalues indexed by the splitting, and the splitting interval must
    contain the nonlinearity's derivative range.
    """

    mesh: Mesh
    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    spectral: SpectralData
    nonlinearity: Nonlinearity
    c: float = 0.0

    def __post_init__(self):
        if self.spectral.kset is None:
            raise ValueError("spectral data carries no interval; call with_interval first")
        for k in self.spectral.kset:
            lam = self.spectral.eigenvalues[k - 1]
            if abs(self.c - lam) <= 1e-8 * (1.0 + abs(lam)):
                raise ValueError(
                    f"shift c={self.c:g} coincides with eigenvalue {k} ({lam:.9g})"
                )
        a, b = self.spectral.interval
        ra, rb = self.nonlinearity.range_bounds
        slack = 1e-12 * max(1.0, abs(ra), abs(rb))
        if ra < a - slack or rb > b + slack:
            raise ValueError(
                f"splitting interval [{a:g}, {b:g}] does not contain the derivative "
                f"range [{ra:g}, {rb:g}]"
            )


def setup_problem(
    m: int,
    nl: Nonlinearity,
    *,
    interval: tuple[float, float] | None = None,
    eig_count: int = 6,
    c: float = 0.0,
    eps_gap: float | None = None,
) -> Problem:
    """Assemble mesh, matrices and eigenpairs, then bundle them into a Problem.

    ``interval=None`` uses the nonlinearity's certified derivative range.
    """
    mesh = build_mesh(m)
    K = assemble_stiffness(mesh)
    M = assemble_mass(mesh)
    sd = compute_eigenpairs(K, M, eig_count)
    a, b = interval if interval is not None else nl.range_bounds
    sd = sd.with_interval(a, b, eps_gap)
    return Problem(mesh=mesh, stiffness=K, mass=M, spectral=sd, nonlinearity=nl, c=c)


def eval_F(p: Problem, u: np.ndarray) -> np.ndarray:
    """Dual coefficients of the residual map: K u - M f(u)."""
    return p.stiffness @ u - p.mass @ eval_f_nodal(p.nonlinearity, p.mesh, u)


def assemble_DF(p: Problem, u: np.ndarray) -> sp.csr_matrix:
    """Exact Jacobian of eval_F at u: K - M diag(f'(u))."""
    w = eval_d2f_nodal(p.nonlinearity, p.mesh, u)
    return p.stiffness - p.mass @ sp.diags(w)


class LcOperator:
    """Extended linearization at a state u, ready to apply and to solve.

    The operator splits as a sparse core ``K - J`` plus a thin low-rank
    correction; ``solve`` factorizes the dense sum up to
    ``DENSE_SOLVE_LIMIT`` unknowns and otherwise runs preconditioned Krylov
    on the matrix-free form.
    """

    def __init__(self, problem: Problem, u: np.ndarray, weight_mode: str = DEFAULT_WEIGHT_MODE):
        p = problem
        sd = p.spectral
        K = p.stiffness
        if weight_mode == "nodal":
            w = eval_d2f_nodal(p.nonlinearity, p.mesh, u)
            J = sp.csr_matrix(p.mass @ sp.diags(w))
        elif weight_mode == "interp":
            J = assemble_weighted_mass(p.mesh, eval_d2f_grid(p.nonlinearity, p.mesh, u))
        else:
            raise ValueError(f"unknown weight_mode {weight_mode!r}")

        phi = sd.vertical_basis                     # (N, kappa)
        kphi = K @ phi
        jphi = J @ phi
        mphi = p.mass @ phi
        ptjp = phi.T @ jphi                          # kappa x kappa

        self.problem = p
        self.core = sp.csr_matrix(K - J)             # sparse part of L_c
        # rank <= 2*kappa correction: L = core + U @ Vt
        self.U = np.hstack([kphi, jphi - p.c * mphi])
        self.Vt = np.vstack([(J.T @ phi).T - ptjp @ kphi.T, kphi.T])
        self._lu = None
        self._dense = None

    @property
    def n(self) -> int:
        return self.core.shape[0]

    def apply(self, z: np.ndarray) -> np.ndarray:
        """L_c z as a dual field."""
        return self.core @ z + self.U @ (self.Vt @ z)

    def as_dense(self) -> np.ndarray:
        if self._dense is None:
            self._dense = self.core.toarray() + self.U @ self.Vt
        return self._dense

    def solve(self, rhat: np.ndarray) -> np.ndarray:
        """Solve L_c z = rhat; raises SingularOperatorError on breakdown."""
        if self.n <= DENSE_SOLVE_LIMIT:
            return self._solve_dense(rhat)
        return self._solve_krylov(rhat)

    def _solve_dense(self, rhat: np.ndarray) -> np.ndarray:
        if self._lu is None:
            dense = self.as_dense()
            try:
                lu, piv = scipy.linalg.lu_factor(dense)
            except scipy.linalg.LinAlgError as exc:
                raise SingularOperatorError(f"extended linearization is singular: {exc}")
            (gecon,) = scipy.linalg.get_lapack_funcs(("gecon",), (dense,))
            rcond, _ = gecon(lu, np.linalg.norm(dense, 1), norm="1")
            if rcond < _RCOND_FLOOR:
                raise SingularOperatorError(
                    "extended linearization is numerically singular",
                    cond_estimate=np.inf if rcond == 0 else 1.0 / rcond,
                )
            self._lu = (lu, piv)
        return scipy.linalg.lu_solve(self._lu, rhat)

    def _solve_krylov(self, rhat: np.ndarray) -> np.ndarray:
        sd = self.problem.spectral
        op = spla.LinearOperator((self.n, self.n), matvec=self.apply)
        precond = spla.LinearOperator((self.n, self.n), matvec=sd.k_solve)
        z, info = spla.lgmres(op, rhat, M=precond, rtol=1e-12, atol=0.0, maxiter=400)
        if info != 0:
            raise SingularOperatorError(
                f"Krylov solve of the extended linearization stalled (info={info})"
            )
        return z


def apply_Lc(p: Problem, u: np.ndarray, z: np.ndarray, weight_mode: str = DEFAULT_WEIGHT_MODE) -> np.ndarray:
    """One-shot application of the extended linearization at u."""
    return LcOperator(p, u, weight_mode).apply(z)


def solve_Lc(p: Problem, u: np.ndarray, rhat: np.ndarray, weight_mode: str = DEFAULT_WEIGHT_MODE) -> np.ndarray:
    """One-shot solve with the extended linearization at u."""
    return LcOperator(p, u, weight_mode).solve(rhat)


@dataclass
class SolveReport:
    """History of one horizontal Newton run.

    ``residuals`` are the horizontal residual norms normalized by the first
    one (entry 0 is 1 by construction); ``residuals_l2`` the same in the L2
    norm; ``abs_residuals`` the unnormalized dual norms.  ``status`` is one
    of 'converged', 'max-iter', 'continuation-used', 'failed'.
    """

    iterates: list = field(default_factory=list)
    residuals: np.ndarray = None
    residuals_l2: np.ndarray = None
    abs_residuals: np.ndarray = None
    step_seconds: np.ndarray = None
    status: str = "failed"
    continuation_depth: int = 0

    @property
    def converged(self) -> bool:
        return self.status in ("converged", "continuation-used")

    @property
    def final(self) -> np.ndarray:
        return self.iterates[-1]

    @property
    def iterations(self) -> int:
        return len(self.iterates) - 1


def _horizontal_residual(p: Problem, u: np.ndarray, ghat: np.ndarray) -> np.ndarray:
    return p.spectral.project_horizontal_y(ghat - eval_F(p, u))


def fiber_residual(p: Problem, u: np.ndarray, ghat: np.ndarray) -> float:
    """Unnormalized dual norm of the horizontal residual at u."""
    return p.spectral.norm_y(_horizontal_residual(p, u, ghat))


def rhs_scale(p: Problem, ghat: np.ndarray) -> float:
    """Reference scale used for absolute residual tests along one fiber."""
    return 1.0 + p.spectral.norm_y(ghat)


def horizontal_newton(
    p: Problem,
    u0: np.ndarray,
    ghat: np.ndarray,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    resid_scale: float | None = None,
    weight_mode: str = DEFAULT_WEIGHT_MODE,
) -> SolveReport:
    """Drive the horizontal residual of F(u) = g to zero within one slice.

    Iterates solve ``L_c(u_n) h = g - F(u_n)`` and update
    ``u <- u + P_X h``; the projection pins the vertical coordinate of u0
    for the whole run (it also scrubs roundoff that would otherwise leak a
    vertical component into the update).  Convergence is declared when the
    residual drops below ``tol`` relative to the starting residual, or, when
    ``resid_scale`` is given, below ``tol * resid_scale`` absolutely; the
    latter makes runs comparable across different starting points on the
    same fiber.  Non-convergence comes back as a 'max-iter' report, which a
    caller may hand to the continuation driver.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    sd = p.spectral
    u = np.array(u0, dtype=float)
    r = _horizontal_residual(p, u, ghat)
    e0 = sd.norm_y(r)
    e0_l2 = sd.norm_l2_dual(r)
    scale = e0 if resid_scale is None else float(resid_scale)

    iterates = [u.copy()]
    abs_res = [e0]
    res_l2 = [e0_l2]
    seconds = [0.0]

    def normalized():
        denom = e0 if e0 > 0 else 1.0
        denom_l2 = e0_l2 if e0_l2 > 0 else 1.0
        return SolveReport(
            iterates=iterates,
            residuals=np.array(abs_res) / denom,
            residuals_l2=np.array(res_l2) / denom_l2,
            abs_residuals=np.array(abs_res),
            step_seconds=np.array(seconds),
            status=status,
        )

    status = "max-iter"
    if abs_res[-1] <= tol * scale:
        status = "converged"
        return normalized()

    for _ in range(max_iter):
        t0 = time.perf_counter()
        lc = LcOperator(p, u, weight_mode)
        h = lc.solve(ghat - eval_F(p, u))
        u = u + sd.project_horizontal_x(h)
        r = _horizontal_residual(p, u, ghat)
        seconds.append(time.perf_counter() - t0)
        iterates.append(u.copy())
        abs_res.append(sd.norm_y(r))
        res_l2.append(sd.norm_l2_dual(r))
        if not np.isfinite(abs_res[-1]):
            status = "failed"
            return normalized()
        if abs_res[-1] <= tol * scale:
            status = "converged"
            return normalized()
    return normalized()


def continuation_horizontal(
    p: Problem,
    u0: np.ndarray,
    ghat: np.ndarray,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    depth_max: int = DEFAULT_DEPTH_MAX,
    *,
    resid_scale: float | None = None,
    weight_mode: str = DEFAULT_WEIGHT_MODE,
) -> SolveReport:
    """Horizontal Newton with recursive bisection of the horizontal target.

    When the plain iteration stalls, the horizontal segment between the
    start's image and the target is halved: reach the fiber through the
    midpoint first, then continue to the target, recursing on each leg up to
    ``depth_max``.  A run that needed no subdivision reports 'converged';
    one that did reports 'continuation-used' and the depth; exhausted depth
    reports 'failed'.

    All legs share one residual scale (by default the starting residual of
    the overall run), so subdividing relaxes each leg instead of tightening
    it and 'converged' means the same thing for plain and continued runs.
    """
    sd = p.spectral
    if resid_scale is None:
        e0 = sd.norm_y(_horizontal_residual(p, u0, ghat))
        resid_scale = e0 if e0 > 0 else 1.0

    def leg(u_start, target_hat, depth):
        rep = horizontal_newton(
            p, u_start, target_hat, tol, max_iter,
            resid_scale=resid_scale, weight_mode=weight_mode,
        )
        if rep.converged:
            return rep, 0
        if depth <= 0 or rep.status == "failed":
            return rep, -1
        mid_hat = sd.project_vertical_y(target_hat) + 0.5 * (
            sd.project_horizontal_y(eval_F(p, u_start))
            + sd.project_horizontal_y(target_hat)
        )
        rep1, d1 = leg(u_start, mid_hat, depth - 1)
        if d1 < 0 or not rep1.converged:
            return rep1, -1
        rep2, d2 = leg(rep1.final, target_hat, depth - 1)
        if d2 < 0 or not rep2.converged:
            return rep2, -1
        return rep2, 1 + max(d1, d2)

    rep, depth_used = leg(np.array(u0, dtype=float), ghat, depth_max)
    if depth_used < 0 or not rep.converged:
        rep.status = "failed"
        rep.continuation_depth = depth_max
        return rep
    rep.continuation_depth = depth_used
    rep.status = "continuation-used" if depth_used > 0 else "converged"
    return rep


def fiber_point(
    p: Problem,
    ghat: np.ndarray,
    *,
    v: np.ndarray | None = None,
    height=None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    depth_max: int = DEFAULT_DEPTH_MAX,
    weight_mode: str = DEFAULT_WEIGHT_MODE,
) -> np.ndarray:
    """The unique point of the fiber through g with prescribed vertical part.

    Start either from ``v`` (a nodal field inside the vertical subspace) or
    from ``height`` (its coordinates against the vertical eigenbasis) and
    move horizontally until the fiber is reached; the vertical coordinate of
    the result equals the prescribed one.  Falls back to segment
    continuation when the plain iteration stalls.
    """
    sd = p.spectral
    if (v is None) == (height is None):
        raise ValueError("pass exactly one of v or height")
    if v is None:
        v = sd.vertical_from_height(height)
    else:
        v = np.asarray(v, dtype=float)
        horiz = sd.norm_x(sd.project_horizontal_x(v))
        if horiz > 1e-8 * (1.0 + sd.norm_x(v)):
            raise ValueError("start v must lie in the vertical subspace")
    scale = rhs_scale(p, ghat)
    rep = continuation_horizontal(
        p, v, ghat, tol, max_iter, depth_max,
        resid_scale=scale, weight_mode=weight_mode,
    )
    if not rep.converged:
        raise NewtonError(
            "could not reach the fiber from the prescribed vertical start", report=rep
        )
    return rep.final


def move_along_fiber(
    p: Problem,
    u_on_fiber: np.ndarray,
    pstep: np.ndarray,
    ghat: np.ndarray,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    depth_max: int = DEFAULT_DEPTH_MAX,
    weight_mode: str = DEFAULT_WEIGHT_MODE,
) -> np.ndarray:
    """Step to the fiber point whose height is shifted by the vertical ``pstep``.

    Predictor: translate the known fiber point by ``pstep``; corrector:
    horizontal Newton back onto the fiber.  For small steps the predictor
    starts close to the target, so this beats restarting from the vertical
    subspace.  ``pstep = 0`` returns after the initial residual check.
    """
    start = np.asarray(u_on_fiber, dtype=float) + np.asarray(pstep, dtype=float)
    scale = rhs_scale(p, ghat)
    rep = horizontal_newton(
        p, start, ghat, tol, max_iter, resid_scale=scale, weight_mode=weight_mode
    )
    if not rep.converged:
        rep = continuation_horizontal(
            p, start, ghat, tol, max_iter, depth_max,
            resid_scale=scale, weight_mode=weight_mode,
        )
        if not rep.converged:
            raise NewtonError("fiber step did not converge", report=rep)
    return rep.final
