"""Discrete Dirichlet-Laplacian eigenpairs and the two-sided splitting they induce.

Eigenpairs solve the generalized problem ``K phi = lam M phi`` and are
normalized against the stiffness matrix (``phi' K phi = 1``), which is the
discrete H1 normalization.  An interval [a, b] singles out the index set of
eigenvalues inside it; the spanned "vertical" subspace and its complement
split both coordinate systems:

* domain side: ``Q_X z = sum_k (phi_k' K z) phi_k``, ``P_X = I - Q_X``,
* range side:  ``Q_Y g = sum_k (phi_k' g) K phi_k``, ``P_Y = I - Q_Y``,

and ``u -> K u`` is an isometry between them.  All projections here are
orthogonal in the respective inner products ``<u,v> = u' K v`` and
``<g,h> = g' inv(K) h``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    DegenerateSpectrumError,
    EigenConvergenceError,
    InsufficientSpectrumError,
    ResonanceError,
)

DENSE_EIG_LIMIT = 2500
RESIDUAL_TOL = 1e-10
_CLUSTER_RTOL = 1e-9


def analytic_eigenvalues(count: int) -> np.ndarray:
    """Smallest Dirichlet eigenvalues of the continuous rectangle, ascending."""
    vals = sorted(
        np.pi ** 2 * (p ** 2 + q ** 2 / 4.0)
        for p in range(1, 13)
        for q in range(1, 25)
    )
    if count > len(vals):
        raise ValueError("requested more analytic eigenvalues than tabulated")
    return np.array(vals[:count])


def default_eps_gap(a: float, b: float) -> float:
    """Safety margin that keeps eigenvalues decidably away from a, b."""
    return 1e-6 * (b - a)


@dataclass
class SpectralData:
    """Computed eigenpairs plus (optionally) an interval and its index set.

    ``eigenvectors[:, i]`` is the K-orthonormal eigenvector of
    ``eigenvalues[i]``; indices exposed to callers are 1-based (k=1 is the
    smallest eigenvalue) to match the usual numbering of Laplacian modes.
    Instances are treated as immutable; ``with_interval`` returns a copy.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    interval: tuple[float, float] | None = None
    kset: tuple[int, ...] | None = None
    _solvers: dict = field(default_factory=dict, repr=False, compare=False)

    # -- factorized solves -------------------------------------------------

    def k_solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve K x = rhs through a cached factorization."""
        if "K" not in self._solvers:
            self._solvers["K"] = spla.splu(sp.csc_matrix(self.stiffness))
        return self._solvers["K"].solve(rhs)

    def m_solve(self, rhs: np.ndarray) -> np.ndarray:
        if "M" not in self._solvers:
            self._solvers["M"] = spla.splu(sp.csc_matrix(self.mass))
        return self._solvers["M"].solve(rhs)

    # -- interval / index set ----------------------------------------------

    def with_interval(self, a: float, b: float, eps_gap: float | None = None) -> "SpectralData":
        """Copy of this data with [a, b] attached and the index set resolved."""
        kset = index_set(self, a, b, eps_gap)
        return SpectralData(
            eigenvalues=self.eigenvalues,
            eigenvectors=self.eigenvectors,
            stiffness=self.stiffness,
            mass=self.mass,
            interval=(float(a), float(b)),
            kset=tuple(sorted(kset)),
            _solvers=self._solvers,
        )

    @property
    def vertical_basis(self) -> np.ndarray:
        """Columns phi_k for k in the index set, ascending k; shape (N, |kset|)."""
        if self.kset is None:
            raise ValueError("no interval attached; call with_interval first")
        idx = [k - 1 for k in self.kset]
        return self.eigenvectors[:, idx]

    @property
    def n_vertical(self) -> int:
        return 0 if self.kset is None else len(self.kset)

    # -- projections ---------------------------------------------------------

    def project_vertical_x(self, z: np.ndarray) -> np.ndarray:
        phi = self.vertical_basis
        return phi @ (phi.T @ (self.stiffness @ z))

    def project_horizontal_x(self, z: np.ndarray) -> np.ndarray:
        return z - self.project_vertical_x(z)

    def project_vertical_y(self, ghat: np.ndarray) -> np.ndarray:
        phi = self.vertical_basis
        return self.stiffness @ (phi @ (phi.T @ ghat))

    def project_horizontal_y(self, ghat: np.ndarray) -> np.ndarray:
        return ghat - self.project_vertical_y(ghat)

    # -- norms and heights ---------------------------------------------------

    def norm_x(self, u: np.ndarray) -> float:
        return float(np.sqrt(max(u @ (self.stiffness @ u), 0.0)))

    def norm_y(self, ghat: np.ndarray) -> float:
        return float(np.sqrt(max(ghat @ self.k_solve(ghat), 0.0)))

    def norm_l2_dual(self, ghat: np.ndarray) -> float:
        """L2 norm of the P1 function whose dual coefficients are ``ghat``."""
        return float(np.sqrt(max(ghat @ self.m_solve(ghat), 0.0)))

    def height_x(self, u: np.ndarray) -> np.ndarray:
        """Vertical coordinates of u: <u, phi_k> in the domain inner product."""
        phi = self.vertical_basis
        return phi.T @ (self.stiffness @ u)

    def height_y(self, ghat: np.ndarray) -> np.ndarray:
        """Vertical coordinates of ghat against the K phi_k basis."""
        return self.vertical_basis.T @ ghat

    def vertical_from_height(self, t) -> np.ndarray:
        """Nodal field with prescribed vertical coordinates and no horizontal part."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if t.shape != (self.n_vertical,):
            raise ValueError(f"expected {self.n_vertical} height coordinates, got {t.shape}")
        return self.vertical_basis @ t

    def dual_from_height(self, s) -> np.ndarray:
        """Dual field with prescribed vertical coordinates and no horizontal part."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        return self.stiffness @ (self.vertical_basis @ s)


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    """Make the first nonzero coefficient of each column positive."""
    out = vecs.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-12 * np.abs(col).max())
        if nz.size and col[nz[0]] < 0:
            out[:, j] = -col
    return out


def _check_residuals(K, M, lams, vecs):
    res = []
    for lam, v in zip(lams, vecs.T):
        kv = K @ v
        r = np.linalg.norm(kv - lam * (M @ v)) / np.linalg.norm(kv)
        res.append(r)
    return np.array(res)


def _check_clusters(lams):
    lams = np.asarray(lams)
    scale = max(1.0, float(np.abs(lams).max()))
    gaps = np.diff(lams)
    tight = np.flatnonzero(gaps <= _CLUSTER_RTOL * scale)
    if tight.size:
        k = int(tight[0]) + 1
        raise DegenerateSpectrumError(
            f"eigenvalues {k} and {k + 1} coincide numerically "
            f"({lams[k - 1]:.12g} vs {lams[k]:.12g}); repeated eigenvalues are not supported"
        )


def compute_eigenpairs(
    K: sp.spmatrix,
    M: sp.spmatrix,
    count: int,
    *,
    tol: float = RESIDUAL_TOL,
    force_iterative: bool = False,
    max_sweeps: int = 200,
) -> SpectralData:
    """Smallest ``count`` eigenpairs of K phi = lam M phi, K-orthonormal.

    Small problems go through a dense generalized eigensolve; larger ones use
    shift-invert subspace iteration (factorize K once, iterate on inv(K) M
    with Rayleigh-Ritz extraction).  Eigenvectors get a deterministic sign:
    the first nonzero coefficient in node order is positive.
    """
    N = K.shape[0]
    if count < 1:
        raise ValueError("count must be positive")
    if count > min(10, N):
        raise ValueError(f"count={count} exceeds the supported desk scale (<= {min(10, N)})")
    if K.shape != M.shape:
        raise ValueError("stiffness and mass matrices must have matching shapes")

    if N <= DENSE_EIG_LIMIT and not force_iterative:
        lams, vecs = scipy.linalg.eigh(
            K.toarray(), M.toarray(), subset_by_index=(0, count - 1)
        )
        history = []
    else:
        lams, vecs, history = _subspace_iteration(K, M, count, tol, max_sweeps)

    # rescale from M-normalization to K-normalization: phi' K phi = 1
    for j in range(count):
        scale = np.sqrt(vecs[:, j] @ (K @ vecs[:, j]))
        vecs[:, j] /= scale
    vecs = _fix_signs(vecs)

    res = _check_residuals(K, M, lams, vecs)
    if np.any(res > tol):
        raise EigenConvergenceError(
            f"eigenpair residuals {res.max():.3e} exceed tolerance {tol:.1e}",
            residual_history=list(history) + [res.max()],
        )
    _check_clusters(lams)

    return SpectralData(
        eigenvalues=np.asarray(lams, dtype=float),
        eigenvectors=vecs,
        stiffness=sp.csr_matrix(K),
        mass=sp.csr_matrix(M),
    )


def _subspace_iteration(K, M, count, tol, max_sweeps):
    """Shift-invert subspace iteration with Rayleigh-Ritz extraction."""
    N = K.shape[0]
    p = min(N, count + max(3, count // 2 + 1))
    lu = spla.splu(sp.csc_matrix(K))
    rng = np.random.default_rng(20260808)
    X = rng.standard_normal((N, p))
    history = []
    for _ in range(max_sweeps):
        Y = lu.solve(M @ X)
        # Rayleigh-Ritz on span(Y) for the pencil (K, M)
        A = Y.T @ (K @ Y)
        B = Y.T @ (M @ Y)
        A = 0.5 * (A + A.T)
        B = 0.5 * (B + B.T)
        theta, S = scipy.linalg.eigh(A, B)
        X = Y @ S
        res = _check_residuals(K, M, theta[:count], X[:, :count])
        history.append(float(res.max()))
        if res.max() <= 0.1 * tol:
            return theta[:count], X[:, :count].copy(), history
    raise EigenConvergenceError(
        f"subspace iteration did not reach tolerance {tol:.1e} in {max_sweeps} sweeps",
        residual_history=history,
    )


def index_set(
    spec: SpectralData, a: float, b: float, eps_gap: float | None = None
) -> frozenset[int]:
    """1-based indices k with a <= lam_k <= b.

    Raises ResonanceError when an eigenvalue falls within ``eps_gap`` of an
    endpoint, and InsufficientSpectrumError when the computed spectrum does
    not reach past b (the set could otherwise be silently incomplete).
    """
    if not a < b:
        raise ValueError(f"interval endpoints must satisfy a < b, got [{a}, {b}]")
    if eps_gap is None:
        eps_gap = default_eps_gap(a, b)
    lams = spec.eigenvalues
    if lams.max() < b + eps_gap:
        raise InsufficientSpectrumError(
            f"largest computed eigenvalue {lams.max():.6g} does not clear the upper "
            f"endpoint {b:.6g}; compute more eigenpairs"
        )
    for endpoint in (a, b):
        dist = np.abs(lams - endpoint)
        j = int(np.argmin(dist))
        if dist[j] <= eps_gap:
            raise ResonanceError(
                f"eigenvalue {j + 1} ({lams[j]:.9g}) lies within {eps_gap:.3g} "
                f"of the interval endpoint {endpoint:.9g}"
            )
    return frozenset(int(k + 1) for k in np.flatnonzero((lams >= a) & (lams <= b)))
