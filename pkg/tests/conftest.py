"""Shared fixtures: meshes, matrices, and the standard test problems."""

import numpy as np
import pytest

import fiberfem as ff

LAM = ff.analytic_eigenvalues(6)
LAM1, LAM2, LAM3 = LAM[:3]


def ap_nonlinearity():
    """Fold nonlinearity: derivative range centered at lam1, touching neither neighbor."""
    return ff.make_arctan_family(alpha=(LAM2 - LAM1) / np.pi, beta=LAM1)


def rhs_product_bump(problem, amplitude=-100.0):
    gbar = ff.interpolate(lambda x, y: amplitude * x * (x - 1.0) * y * (y - 2.0), problem.mesh)
    return problem.mass @ gbar


@pytest.fixture(scope="session")
def mesh1():
    return ff.build_mesh(1)


@pytest.fixture(scope="session")
def mesh2():
    return ff.build_mesh(2)


@pytest.fixture(scope="session")
def mesh3():
    return ff.build_mesh(3)


@pytest.fixture(scope="session")
def ap_m2():
    return ff.setup_problem(2, ap_nonlinearity())


@pytest.fixture(scope="session")
def ap_m3():
    return ff.setup_problem(3, ap_nonlinearity())


@pytest.fixture(scope="session")
def ap_m4():
    return ff.setup_problem(4, ap_nonlinearity())


# 7-point Gauss rule on the reference triangle, exact through degree 5;
# independent quadrature oracle for the closed-form element integrals.
_GW = np.array(
    [0.225]
    + [0.13239415278850618] * 3
    + [0.12593918054482715] * 3
)
_GB = np.array(
    [
        [1 / 3, 1 / 3, 1 / 3],
        [0.05971587178976982, 0.47014206410511509, 0.47014206410511509],
        [0.47014206410511509, 0.05971587178976982, 0.47014206410511509],
        [0.47014206410511509, 0.47014206410511509, 0.05971587178976982],
        [0.79742698535308731, 0.10128650732345634, 0.10128650732345634],
        [0.10128650732345634, 0.79742698535308731, 0.10128650732345634],
        [0.10128650732345634, 0.10128650732345634, 0.79742698535308731],
    ]
)


def gauss_triangle(points, func):
    """Integrate func(x, y) over the triangle with the given 3x2 vertex array."""
    xy = _GB @ points
    e1 = points[1] - points[0]
    e2 = points[2] - points[0]
    area = 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])
    return area * float(np.sum(_GW * func(xy[:, 0], xy[:, 1])))


def gauss_mesh(mesh, func):
    """Integrate func over the whole mesh with the 7-point rule per triangle."""
    total = 0.0
    for tri in mesh.triangles:
        total += gauss_triangle(mesh.vertices[tri], func)
    return total


def p1_function(mesh, full_values):
    """Callable evaluating the P1 interpolant with the given per-vertex values."""
    n = 2 ** mesh.m
    hx, hy = mesh.cell_size
    vals = np.asarray(full_values, dtype=float)

    def fn(x, y):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        ix = np.clip((x / hx).astype(int), 0, n - 1)
        iy = np.clip((y / hy).astype(int), 0, n - 1)
        xloc = x / hx - ix
        yloc = y / hy - iy
        ll = iy * (n + 1) + ix
        lr = ll + 1
        ul = ll + (n + 1)
        ur = ul + 1
        # cell split along the lower-left -> upper-right diagonal
        lower = xloc >= yloc
        out = np.where(
            lower,
            vals[ll] * (1 - xloc) + vals[lr] * (xloc - yloc) + vals[ur] * yloc,
            vals[ll] * (1 - yloc) + vals[ur] * xloc + vals[ul] * (yloc - xloc),
        )
        return out

    return fn
