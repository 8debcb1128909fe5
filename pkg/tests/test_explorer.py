"""Fiber traces, root finding along fibers, and the 2-D image-curve tools."""

import numpy as np
import pytest

import fiberfem as ff
from fiberfem.errors import NewtonError, TraceError
from fiberfem.explorer import FiberTrace

from conftest import LAM1, LAM2, ap_nonlinearity


@pytest.fixture(scope="module")
def dh_below():
    """Derivative range (2, 10), splitting interval bracketing the first mode."""
    return ff.setup_problem(3, ff.make_arctan_family(alpha=8 / np.pi, beta=6.0),
                            interval=(2.0, 16.0))


@pytest.fixture(scope="module")
def dh_between():
    """Derivative range (13.5, 18.5) strictly between the first two modes."""
    return ff.setup_problem(3, ff.make_arctan_family(alpha=5 / np.pi, beta=16.0),
                            interval=(11.0, 19.0))


@pytest.fixture(scope="module")
def bump_m4():
    """Frozen non-monotone configuration with three solutions on its fiber."""
    nl = ff.make_bump_family(beta=LAM1 - 2.0, alpha=0.0, gamma=4.0, s0=-15.0, w=6.0)
    return ff.setup_problem(4, nl)


@pytest.fixture(scope="module")
def second_mode_m4():
    nl = ff.make_arctan_family(alpha=(LAM2 - LAM1) / np.pi, beta=LAM2)
    return ff.setup_problem(4, nl)


@pytest.fixture(scope="module")
def two_mode_m3():
    nl = ff.make_arctan_family(alpha=2 * (LAM2 - LAM1) / np.pi, beta=(LAM1 + LAM2) / 2)
    return ff.setup_problem(3, nl)


def rhs_through(p, coeffs):
    u0 = np.zeros(p.mesh.N)
    for k, val in coeffs.items():
        u0 += val * p.spectral.eigenvectors[:, k - 1]
    return ff.eval_F(p, u0)


class TestTrace1D:
    def test_monotone_increasing_below_first_mode(self, dh_below):
        p = dh_below
        ghat = rhs_through(p, {1: -30.0, 2: 10.0})
        tr = ff.trace_fiber_1d(p, ghat, -120, 120, 61)
        assert np.all(np.diff(tr.s) > 0)

    def test_monotone_decreasing_between_modes(self, dh_between):
        p = dh_between
        ghat = rhs_through(p, {1: -30.0, 2: 10.0})
        tr = ff.trace_fiber_1d(p, ghat, -120, 120, 61)
        assert np.all(np.diff(tr.s) < 0)

    def test_fold_shape_up_then_down(self, ap_m4):
        p = ap_m4
        ghat = rhs_through(p, {1: -50.0, 2: 10.0})
        tr = ff.trace_fiber_1d(p, ghat, -120, 120, 121)
        ds = np.diff(tr.s)
        changes = np.flatnonzero(np.diff(np.sign(ds)) != 0)
        assert changes.size == 1          # single max: rises then falls
        assert ds[0] > 0 and ds[-1] < 0
        imax = np.argmax(tr.s)
        assert tr.s[0] < tr.s[imax] and tr.s[-1] < tr.s[imax]

    def test_trace_covers_prescribed_grid(self, ap_m4):
        p = ap_m4
        ghat = rhs_through(p, {1: -50.0})
        tr = ff.trace_fiber_1d(p, ghat, -10, 10, 5)
        assert np.allclose(tr.t, np.linspace(-10, 10, 5))
        assert np.all(np.diff(tr.t) > 0)
        sd = p.spectral
        scale = 1.0 + sd.norm_y(ghat)
        for u in tr.fiber_points:
            assert sd.norm_y(sd.project_horizontal_y(ghat - ff.eval_F(p, u))) <= 1e-8 * scale

    def test_input_validation(self, ap_m4, two_mode_m3):
        ghat = np.zeros(ap_m4.mesh.N)
        with pytest.raises(ValueError):
            ff.trace_fiber_1d(ap_m4, ghat, 0, 10, 1)
        with pytest.raises(ValueError):
            ff.trace_fiber_1d(ap_m4, ghat, 10, 0, 5)
        with pytest.raises(ValueError):
            ff.trace_fiber_1d(two_mode_m3, np.zeros(two_mode_m3.mesh.N), 0, 10, 5)

    def test_abort_attaches_partial_trace(self, ap_m4, monkeypatch):
        p = ap_m4
        ghat = rhs_through(p, {1: -50.0})
        calls = {"n": 0}
        real = ff.move_along_fiber

        def flaky(*args, **kwargs):
            calls["n"] += 1
            if calls["n"] >= 4:
                raise NewtonError("synthetic failure")
            return real(*args, **kwargs)

        monkeypatch.setattr("fiberfem.explorer.move_along_fiber", flaky)
        with pytest.raises(TraceError) as err:
            ff.trace_fiber_1d(p, ghat, -10, 10, 11)
        partial = err.value.partial_trace
        assert partial is not None
        assert 0 < len(partial) < 11


class TestSolve1D:
    def test_unique_solution_below_first_mode(self, dh_below):
        p = dh_below
        ghat = rhs_through(p, {1: -30.0, 2: 10.0})
        tr = ff.trace_fiber_1d(p, ghat, -120, 120, 61)
        sols = ff.solve_on_fiber_1d(p, ghat, tr)
        assert sols.multiplicity == 1
        assert np.all(sols.residuals <= 1e-8)

    def test_unique_solution_between_modes(self, dh_between):
        p = dh_between
        ghat = rhs_through(p, {1: -30.0, 2: 10.0})
        tr = ff.trace_fiber_1d(p, ghat, -120, 120, 61)
        sols = ff.solve_on_fiber_1d(p, ghat, tr)
        assert sols.multiplicity == 1

    def test_fold_two_solutions(self, ap_m4):
        p = ap_m4
        ghat = rhs_through(p, {1: -50.0, 2: 10.0})
        tr = ff.trace_fiber_1d(p, ghat, -120, 120, 121)
        sols = ff.solve_on_fiber_1d(p, ghat, tr)
        assert sols.multiplicity == 2
        assert np.all(sols.residuals <= 1e-8)
        heights = sorted(p.spectral.height_x(u)[0] for u in sols.solutions)
        assert abs(heights[0] - (-50.0)) < 1e-6  # the prescribed preimage is re-found

    def test_three_solutions_nonconvex(self, bump_m4):
        p = bump_m4
        ghat = rhs_through(p, {1: -50.0, 2: 10.0})
        tr = ff.trace_fiber_1d(p, ghat, -120, 120, 121)
        sols = ff.solve_on_fiber_1d(p, ghat, tr)
        assert sols.multiplicity == 3
        assert np.all(sols.residuals <= 1e-8)

    def test_three_solutions_second_mode(self, second_mode_m4):
        p = second_mode_m4
        assert p.spectral.kset == (2,)
        ghat = rhs_through(p, {2: -50.0, 1: 10.0})
        tr = ff.trace_fiber_1d(p, ghat, -120, 120, 121)
        sols = ff.solve_on_fiber_1d(p, ghat, tr)
        assert sols.multiplicity == 3
        assert np.all(sols.residuals <= 1e-8)

    def test_root_count_matches_sign_changes(self, ap_m4):
        p = ap_m4
        ghat = rhs_through(p, {1: -50.0, 2: 10.0})
        tr = ff.trace_fiber_1d(p, ghat, -120, 120, 121)
        s_star = p.spectral.height_y(ghat)[0]
        diff = tr.s - s_star
        crossings = int(np.sum(diff[:-1] * diff[1:] < 0))
        sols = ff.solve_on_fiber_1d(p, ghat, tr)
        assert sols.multiplicity == crossings

    def test_near_touch_reported_separately(self, ap_m4):
        p = ap_m4
        sd = p.spectral
        base = rhs_through(p, {1: -50.0, 2: 10.0})
        tr = ff.trace_fiber_1d(p, base, -120, 120, 121)
        s_max = tr.s.max()
        span = np.ptp(tr.s)
        # same fiber, target height just above the fold maximum
        target = sd.project_horizontal_y(base) + sd.dual_from_height(
            [s_max + 1e-3 * span]
        )
        sols = ff.solve_on_fiber_1d(p, target, tr)
        assert sols.multiplicity == 0
        assert len(sols.near_touches) == 1

    def test_fiber_action_is_not_uniform(self, bump_m4):
        """Qualitative regression: the image wiggle lives on some fibers only.

        The fiber through F(-50 phi1 + 10 phi2) has an interior local maximum
        (the three-solution dip); on the fibers at heights 45 and 100 of the
        second mode the trace is monotone, so the map acts on fibers in a
        visibly non-homogeneous way.
        """
        p = bump_m4

        def interior_local_maxima(c):
            ghat = rhs_through(p, {1: -50.0, 2: c})
            tr = ff.trace_fiber_1d(p, ghat, -120, 120, 61, store_points=False)
            s = tr.s
            return [
                i for i in range(1, len(s) - 1)
                if s[i] > s[i - 1] and s[i] > s[i + 1]
            ]

        assert len(interior_local_maxima(10.0)) == 1
        assert len(interior_local_maxima(45.0)) == 0
        assert len(interior_local_maxima(100.0)) == 0


class TestNewtonFull:
    def test_exact_start_needs_no_correction(self, ap_m4):
        p = ap_m4
        u0 = np.zeros(p.mesh.N)
        for k, val in {1: -50.0, 2: 10.0}.items():
            u0 += val * p.spectral.eigenvectors[:, k - 1]
        ghat = ff.eval_F(p, u0)
        out = ff.newton_full(p, u0, ghat)
        assert np.array_equal(out, u0)

    def test_quadratic_decay_from_perturbed_start(self, ap_m4):
        p = ap_m4
        sd = p.spectral
        u_star = np.zeros(p.mesh.N)
        for k, val in {1: -50.0, 2: 10.0}.items():
            u_star += val * sd.eigenvectors[:, k - 1]
        ghat = ff.eval_F(p, u_star)
        u = u_star + 20.0 * sd.eigenvectors[:, 0]
        import scipy.sparse as sp
        import scipy.sparse.linalg as spla

        residuals = [sd.norm_y(ghat - ff.eval_F(p, u))]
        for _ in range(2):
            jac = sp.csc_matrix(ff.assemble_DF(p, u))
            u = u + spla.splu(jac).solve(ghat - ff.eval_F(p, u))
            residuals.append(sd.norm_y(ghat - ff.eval_F(p, u)))
        r = np.array(residuals)
        # log-residual slope about 2 (measured 2.19), constants about 0.005
        slope = np.log(r[2] / r[1]) / np.log(r[1] / r[0])
        assert 1.5 < slope < 3.0
        assert r[1] <= 0.05 * r[0] ** 2
        assert r[2] <= 0.05 * r[1] ** 2

    def test_divergence_raises(self, ap_m4):
        p = ap_m4
        far = 1e6 * np.ones(p.mesh.N)
        with pytest.raises(NewtonError):
            ff.newton_full(p, far, np.zeros(p.mesh.N), max_iter=2)


class TestTrace2D:
    def test_small_circle_collapses_to_base_image(self, two_mode_m3):
        p = two_mode_m3
        sd = p.spectral
        ghat = np.zeros(p.mesh.N)
        base = ff.fiber_point(p, ghat, height=[0.0, 0.0])
        s0 = sd.height_y(ff.eval_F(p, base))
        tr = ff.trace_circle_2d(p, ghat, 0.5, 16, store_points=False)
        spread = np.linalg.norm(tr.heights_out - s0, axis=1).max()
        assert spread < 1.0

    def test_circle_closes_up(self, two_mode_m3):
        p = two_mode_m3
        sd = p.spectral
        ghat = np.zeros(p.mesh.N)
        tol = 1e-8
        tr = ff.trace_circle_2d(p, ghat, 40.0, 48, tol=tol)
        # wrap once more from the last sample back to the first height
        step = sd.vertical_from_height(tr.heights_in[0] - sd.height_x(tr.fiber_points[-1]))
        wrapped = ff.move_along_fiber(p, tr.fiber_points[-1], step, ghat, tol=tol)
        assert sd.norm_x(wrapped - tr.fiber_points[0]) <= 10 * tol

    def test_fish_curve_self_intersects(self, two_mode_m3):
        p = two_mode_m3
        ghat = np.zeros(p.mesh.N)
        tr = ff.trace_circle_2d(p, ghat, 40.0, 64, store_points=False)
        crossings = ff.find_self_intersections(tr)
        assert len(crossings) == 1
        cross = crossings[0]
        # symmetric problem: the crossing sits on the first-mode axis
        assert abs(cross.point[1]) < 0.5
        assert abs(cross.t_first[1] + cross.t_second[1]) < 1.0

    def test_crossing_stable_under_refinement(self, two_mode_m3):
        p = two_mode_m3
        ghat = np.zeros(p.mesh.N)
        pts = []
        for n in (64, 128):
            tr = ff.trace_circle_2d(p, ghat, 40.0, n, store_points=False)
            pts.append(ff.find_self_intersections(tr)[0].point)
        assert np.linalg.norm(pts[0] - pts[1]) < 0.5

    def test_radial_consistent_with_circle(self, two_mode_m3):
        p = two_mode_m3
        ghat = np.zeros(p.mesh.N)
        tr_c = ff.trace_circle_2d(p, ghat, 40.0, 32, store_points=False)
        tr_r = ff.trace_radial_2d(p, ghat, (1.0, 0.0), 40.0, 5, store_points=False)
        # the ray's endpoint and the circle's first sample share the height (40, 0)
        assert np.allclose(tr_r.heights_in[-1], tr_c.heights_in[0], atol=1e-12)
        assert np.linalg.norm(tr_r.heights_out[-1] - tr_c.heights_out[0]) < 1e-6

    def test_radial_zero_length(self, two_mode_m3):
        p = two_mode_m3
        ghat = np.zeros(p.mesh.N)
        tr = ff.trace_radial_2d(p, ghat, (0.0, 1.0), 0.0, 1, store_points=False)
        assert len(tr) == 1
        assert np.allclose(tr.heights_in[0], (0.0, 0.0))

    def test_dimension_guards(self, ap_m4):
        ghat = np.zeros(ap_m4.mesh.N)
        with pytest.raises(ValueError):
            ff.trace_circle_2d(ap_m4, ghat, 10.0, 16)
        with pytest.raises(ValueError):
            ff.trace_radial_2d(ap_m4, ghat, (1.0, 0.0), 10.0, 5)


def synthetic_trace(points_out, points_in=None, closed=True):
    pts = np.asarray(points_out, dtype=float)
    if points_in is None:
        n = pts.shape[0]
        theta = 2 * np.pi * np.arange(n) / n
        points_in = np.column_stack([np.cos(theta), np.sin(theta)])
    return FiberTrace(
        heights_in=np.asarray(points_in, dtype=float),
        heights_out=pts.copy(),
        g_ref=np.zeros(1),
        kind="circle",
        closed=closed,
    )


class TestIntersectionTools:
    def test_convex_curve_has_no_self_intersection(self):
        theta = np.linspace(0, 2 * np.pi, 33)[:-1]
        tr = synthetic_trace(np.column_stack([3 * np.cos(theta), np.sin(theta)]))
        assert ff.find_intersections_2d(tr) == []

    def test_figure_eight_has_one_crossing(self):
        theta = (np.arange(64) + 0.31) * 2 * np.pi / 64
        eight = np.column_stack([np.sin(2 * theta), np.sin(theta)])
        tr = synthetic_trace(eight)
        crossings = ff.find_self_intersections(tr)
        assert len(crossings) == 1
        assert np.linalg.norm(crossings[0].point) < 0.15  # near the origin
        # the two branches sit on opposite sides of the sampling circle
        assert np.linalg.norm(crossings[0].t_first - crossings[0].t_second) > 1.0

    def test_target_hits_at_crossing_give_two_parameters(self):
        theta = (np.arange(128) + 0.31) * 2 * np.pi / 128
        eight = np.column_stack([np.sin(2 * theta), np.sin(theta)])
        tr = synthetic_trace(eight)
        cross = ff.find_self_intersections(tr)[0]
        hits = ff.find_intersections_2d(tr, target=cross.point, tol=0.05)
        assert len(hits) == 2
        assert np.linalg.norm(hits[0] - hits[1]) > 1.0

    def test_open_trace_skips_wrap_segment(self):
        # an open hook whose only crossing comes from the closing edge
        pts = [(0, 0), (4, 0), (4, 4), (-2, 4), (-2, 2), (2, 2), (2, 3.9)]
        open_tr = synthetic_trace(pts, closed=False)
        closed_tr = synthetic_trace(pts, closed=True)
        assert len(ff.find_self_intersections(open_tr)) == 0
        assert len(ff.find_self_intersections(closed_tr)) == 1
