"""P1 finite elements on uniform triangulations of the rectangle [0,1] x [0,2].

A level-m mesh splits [0,1] and [0,2] into 2^m equal intervals each and cuts
every grid cell along its lower-left to upper-right diagonal.  Only interior
vertices carry degrees of freedom (homogeneous Dirichlet data), numbered
lexicographically by (y, then x) so that every downstream artifact is
reproducible bit for bit.

A P1 function appears in two coordinate systems throughout the package:

* nodal coefficients ``u[j] = u_h(node_j)`` (domain side),
* dual coefficients ``g[i] = (psi_i, g)_L2`` (range side),

tied together by the mass matrix: ``dual = M @ nodal``.  All element
integrals here (stiffness, mass, P1-weighted mass) are polynomial and are
evaluated in closed form per triangle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import EvaluationError

RECT_X = 1.0
RECT_Y = 2.0
MAX_LEVEL = 8

# Exact integrals of products of barycentric coordinates on a triangle:
# T3[a,b,c] * area = integral of psi_a * psi_b * psi_c.
_T3 = np.empty((3, 3, 3))
for _a in range(3):
    for _b in range(3):
        for _c in range(3):
            n_equal = len({_a, _b, _c})
            _T3[_a, _b, _c] = {1: 1.0 / 10.0, 2: 1.0 / 30.0, 3: 1.0 / 60.0}[n_equal]

# Same for pairs: T2[a,b] * area = integral of psi_a * psi_b.
_T2 = (np.ones((3, 3)) + np.eye(3)) / 12.0


@dataclass(frozen=True)
class Mesh:
    """Uniform right-triangle mesh of [0,1] x [0,2] at refinement level m.

    ``interior_index`` maps vertex id -> DOF id (or -1 on the boundary);
    ``interior_nodes`` lists vertex ids in DOF order.  Instances are
    immutable and safe to share between threads.
    """

    m: int
    vertices: np.ndarray        # (n_vertices, 2)
    triangles: np.ndarray       # (n_triangles, 3), counterclockwise
    interior_index: np.ndarray  # (n_vertices,), -1 for boundary vertices
    interior_nodes: np.ndarray  # (N,)

    @property
    def N(self) -> int:
        """Number of interior degrees of freedom."""
        return self.interior_nodes.size

    @property
    def interior_xy(self) -> np.ndarray:
        """Coordinates of the interior nodes, in DOF order."""
        return self.vertices[self.interior_nodes]

    @property
    def cell_size(self) -> tuple[float, float]:
        n = 2 ** self.m
        return RECT_X / n, RECT_Y / n


def build_mesh(m: int) -> Mesh:
    """Build the level-m triangulation.

    Raises ValueError unless 1 <= m <= 8; finer meshes are outside the
    supported desk scale.
    """
    if not isinstance(m, (int, np.integer)) or isinstance(m, bool):
        raise ValueError(f"mesh level must be an integer, got {m!r}")
    if not 1 <= m <= MAX_LEVEL:
        raise ValueError(f"mesh level must satisfy 1 <= m <= {MAX_LEVEL}, got {m}")

    n = 2 ** m
    xs = np.linspace(0.0, RECT_X, n + 1)
    ys = np.linspace(0.0, RECT_Y, n + 1)
    gx, gy = np.meshgrid(xs, ys)  # row index = y line, so vertex order is lex (y, x)
    vertices = np.column_stack([gx.ravel(), gy.ravel()])

    ix, iy = np.meshgrid(np.arange(n), np.arange(n))
    ix = ix.ravel()
    iy = iy.ravel()
    ll = iy * (n + 1) + ix
    lr = ll + 1
    ul = ll + (n + 1)
    ur = ul + 1
    lower = np.column_stack([ll, lr, ur])
    upper = np.column_stack([ll, ur, ul])
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    vx, vy = np.meshgrid(np.arange(n + 1), np.arange(n + 1))
    interior_mask = ((vx > 0) & (vx < n) & (vy > 0) & (vy < n)).ravel()
    interior_index = np.full(vertices.shape[0], -1, dtype=np.int64)
    interior_nodes = np.flatnonzero(interior_mask)
    interior_index[interior_nodes] = np.arange(interior_nodes.size)

    return Mesh(
        m=int(m),
        vertices=vertices,
        triangles=triangles,
        interior_index=interior_index,
        interior_nodes=interior_nodes,
    )


def triangle_areas(mesh: Mesh) -> np.ndarray:
    """Signed areas of all triangles (positive by construction)."""
    pts = mesh.vertices[mesh.triangles]
    e1 = pts[:, 1] - pts[:, 0]
    e2 = pts[:, 2] - pts[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def _p1_gradients(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Per-triangle areas and constant P1 basis gradients, shape (nt, 3, 2)."""
    pts = mesh.vertices[mesh.triangles]
    two_a = 2.0 * triangle_areas(mesh)
    grads = np.empty((mesh.triangles.shape[0], 3, 2))
    for i in range(3):
        d = pts[:, (i + 1) % 3] - pts[:, (i + 2) % 3]  # edge opposite vertex i
        grads[:, i, 0] = d[:, 1] / two_a
        grads[:, i, 1] = -d[:, 0] / two_a
    return 0.5 * two_a, grads


def _scatter_interior(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    """Assemble per-triangle 3x3 blocks into the interior-DOF sparse matrix."""
    dofs = mesh.interior_index[mesh.triangles]  # (nt, 3), -1 for boundary
    rows, cols, vals = [], [], []
    for i in range(3):
        for j in range(3):
            keep = (dofs[:, i] >= 0) & (dofs[:, j] >= 0)
            rows.append(dofs[keep, i])
            cols.append(dofs[keep, j])
            vals.append(local[keep, i, j])
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(mesh.N, mesh.N),
    ).tocsr()
    # local blocks are symmetric; make the assembled matrix exactly so
    return (mat + mat.T) * 0.5


def assemble_stiffness(mesh: Mesh) -> sp.csr_matrix:
    """Stiffness matrix K[i,j] = integral of grad(psi_i) . grad(psi_j)."""
    area, grads = _p1_gradients(mesh)
    local = np.einsum("tic,tjc->tij", grads, grads) * area[:, None, None]
    return _scatter_interior(mesh, local)


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    """Mass matrix M[i,j] = integral of psi_i * psi_j."""
    area = triangle_areas(mesh)
    local = area[:, None, None] * _T2[None, :, :]
    return _scatter_interior(mesh, local)


def assemble_weighted_mass(mesh: Mesh, w: np.ndarray) -> sp.csr_matrix:
    """Weighted mass matrix W[i,j] = integral of w_h * psi_i * psi_j.

    ``w`` holds the nodal values of the weight: either one value per interior
    node (the P1 interpolant then vanishes on the boundary) or one value per
    grid vertex.  The cubic integrand is integrated exactly per triangle.
    """
    w = np.asarray(w, dtype=float)
    n_vert = mesh.vertices.shape[0]
    if w.shape == (mesh.N,):
        full = np.zeros(n_vert)
        full[mesh.interior_nodes] = w
    elif w.shape == (n_vert,):
        full = w
    else:
        raise ValueError(
            f"weight must have length {mesh.N} (interior) or {n_vert} (all vertices), "
            f"got shape {w.shape}"
        )
    if not np.all(np.isfinite(full)):
        raise EvaluationError("weight field contains non-finite values")
    area = triangle_areas(mesh)
    wloc = full[mesh.triangles]  # (nt, 3)
    local = np.einsum("tl,lij->tij", wloc, _T3) * area[:, None, None]
    return _scatter_interior(mesh, local)


def interpolate(expr, mesh: Mesh) -> np.ndarray:
    """Nodal coefficients of the interpolant of ``expr(x, y)`` at interior nodes."""
    xy = mesh.interior_xy
    vals = expr(xy[:, 0], xy[:, 1])
    vals = np.broadcast_to(np.asarray(vals, dtype=float), (mesh.N,)).copy()
    if not np.all(np.isfinite(vals)):
        bad = int(np.flatnonzero(~np.isfinite(vals))[0])
        x, y = xy[bad]
        raise EvaluationError(f"expression is not finite at node ({x:g}, {y:g})")
    return vals


def full_grid_values(mesh: Mesh, u: np.ndarray) -> np.ndarray:
    """Extend interior nodal coefficients to all vertices with zero boundary data."""
    full = np.zeros(mesh.vertices.shape[0])
    full[mesh.interior_nodes] = u
    return full


def matrix_triplets(mat) -> np.ndarray:
    """(row, col, value) triplets of a sparse matrix, sorted by (row, col)."""
    coo = sp.coo_matrix(mat)
    order = np.lexsort((coo.col, coo.row))
    out = np.empty((coo.nnz, 3))
    out[:, 0] = coo.row[order]
    out[:, 1] = coo.col[order]
    out[:, 2] = coo.data[order]
    return out
