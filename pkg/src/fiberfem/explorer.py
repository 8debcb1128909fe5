"""Tracing fibers and inverting the finite-dimensional restriction along them.

Once a point of the fiber through g is known, the remaining unknowns of
``F(u) = g`` live in the low-dimensional vertical subspace: sampling the
fiber by height and recording the height of the image yields a computable
map between vertical coordinates.  Solutions correspond to parameters where
the image height hits the height of g; they are bracketed on the sampled
trace, refined by bisection, and polished with full-space Newton.

One-dimensional fibers are swept over an interval of heights; for
two-dimensional fibers the samplers follow a circle and radial rays, and
self-intersections of the polygonal image curve mark heights with several
preimages.

Each trace is sequential (warm starts chain the samples), but distinct
traces only read the shared problem data and may run concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import BisectionError, NewtonError, SingularOperatorError, TraceError
from .solver import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    Problem,
    assemble_DF,
    eval_F,
    fiber_point,
    move_along_fiber,
    rhs_scale,
)

BISECT_WIDTH = 1e-6
SEPARATION_RTOL = 1e-4
DEFAULT_WINDOW = (-120.0, 120.0)
DEFAULT_STEPS = 121


@dataclass
class FiberTrace:
    """Sampled parametrization of one fiber and of the heights of its image.

    ``heights_in[i]`` is the vertical coordinate vector of sample i,
    ``heights_out[i]`` the vertical coordinate vector of its image;
    ``fiber_points`` optionally stores the sampled states (row i is the
    nodal field at sample i).  ``kind`` declares the sampling pattern:
    'line' (1-D sweep, strictly increasing), 'circle' or 'radial' (2-D).
    """

    heights_in: np.ndarray
    heights_out: np.ndarray
    g_ref: np.ndarray
    kind: str
    closed: bool = False
    fiber_points: np.ndarray | None = None

    @property
    def t(self) -> np.ndarray:
        """1-D input heights (only for 'line' and 'radial' traces)."""
        if self.kind == "radial":
            return np.linalg.norm(self.heights_in, axis=1)
        return self.heights_in[:, 0]

    @property
    def s(self) -> np.ndarray:
        """1-D output heights (only meaningful for 'line' traces)."""
        return self.heights_out[:, 0]

    def __len__(self) -> int:
        return self.heights_in.shape[0]


@dataclass
class SolutionSet:
    """Distinct solutions of F(u) = g found along one fiber."""

    solutions: list
    residuals: np.ndarray          # normalized full-equation dual norms
    multiplicity: int
    near_touches: tuple = ()       # heights where the trace grazed the target


def _march(p, ghat, heights, u_start, kind, closed, tol, store_points):
    """Walk the prescribed height samples with warm starts; used by all tracers."""
    sd = p.spectral
    n = heights.shape[0]
    outs = np.empty_like(heights)
    pts = np.empty((n, u_start.size)) if store_points else None
    u = u_start
    done = 0
    try:
        for i in range(n):
            if i > 0:
                pstep = sd.vertical_from_height(heights[i] - sd.height_x(u))
                u = move_along_fiber(p, u, pstep, ghat, tol=tol)
            outs[i] = sd.height_y(eval_F(p, u))
            if store_points:
                pts[i] = u
            done = i + 1
    except (NewtonError, SingularOperatorError) as exc:
        partial = FiberTrace(
            heights_in=heights[:done].copy(),
            heights_out=outs[:done].copy(),
            g_ref=ghat,
            kind=kind,
            closed=False,
            fiber_points=pts[:done].copy() if store_points else None,
        )
        raise TraceError(
            f"fiber trace aborted after {done} of {n} samples: {exc}",
            partial_trace=partial,
        ) from exc
    return FiberTrace(
        heights_in=heights,
        heights_out=outs,
        g_ref=ghat,
        kind=kind,
        closed=closed,
        fiber_points=pts,
    )


def trace_fiber_1d(
    p: Problem,
    ghat: np.ndarray,
    t_min: float = DEFAULT_WINDOW[0],
    t_max: float = DEFAULT_WINDOW[1],
    steps: int = DEFAULT_STEPS,
    *,
    tol: float = DEFAULT_TOL,
    store_points: bool = True,
) -> FiberTrace:
    """Sweep a one-dimensional fiber over a uniform height grid.

    The first sample is reached from the vertical subspace (continuation
    allowed); consecutive samples reuse the previous point as predictor.
    """
    if p.spectral.n_vertical != 1:
        raise ValueError("1-D tracing requires exactly one vertical mode")
    if steps < 2:
        raise ValueError("steps must be at least 2")
    if not t_min < t_max:
        raise ValueError("need t_min < t_max")
    ts = np.linspace(t_min, t_max, steps).reshape(-1, 1)
    u0 = fiber_point(p, ghat, height=[t_min], tol=tol)
    return _march(p, ghat, ts, u0, "line", False, tol, store_points)


def trace_circle_2d(
    p: Problem,
    ghat: np.ndarray,
    radius: float,
    n: int,
    *,
    tol: float = DEFAULT_TOL,
    store_points: bool = True,
) -> FiberTrace:
    """Sample a two-dimensional fiber over a circle of heights.

    The n samples sit at angles 2*pi*j/n and are traversed with warm starts;
    the image polygon is closed by joining the last sample back to the first.
    """
    if p.spectral.n_vertical != 2:
        raise ValueError("circle tracing requires exactly two vertical modes")
    if n < 8:
        raise ValueError("need at least 8 samples around the circle")
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    theta = 2.0 * np.pi * np.arange(n) / n
    heights = radius * np.column_stack([np.cos(theta), np.sin(theta)])
    u0 = fiber_point(p, ghat, height=heights[0], tol=tol)
    return _march(p, ghat, heights, u0, "circle", True, tol, store_points)


def trace_radial_2d(
    p: Problem,
    ghat: np.ndarray,
    direction,
    r_max: float,
    steps: int,
    *,
    tol: float = DEFAULT_TOL,
    store_points: bool = True,
) -> FiberTrace:
    """Sample a two-dimensional fiber along the ray r * direction, r in [0, r_max]."""
    if p.spectral.n_vertical != 2:
        raise ValueError("radial tracing requires exactly two vertical modes")
    if steps < 1:
        raise ValueError("steps must be at least 1")
    d = np.asarray(direction, dtype=float)
    norm = np.linalg.norm(d)
    if norm == 0:
        raise ValueError("direction must be nonzero")
    d = d / norm
    rs = np.linspace(0.0, r_max, steps)
    heights = rs[:, None] * d[None, :]
    u0 = fiber_point(p, ghat, height=heights[0], tol=tol)
    return _march(p, ghat, heights, u0, "radial", False, tol, store_points)


def newton_full(
    p: Problem,
    u0: np.ndarray,
    ghat: np.ndarray,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> np.ndarray:
    """Full-space Newton on F(u) = g from a nearby guess.

    Convergence means the dual-norm residual drops below ``tol`` relative to
    the scale of g.  The Jacobian here is the exact one, so a singular solve
    signals a genuine critical point rather than a discretization artifact.
    """
    sd = p.spectral
    u = np.array(u0, dtype=float)
    scale = rhs_scale(p, ghat)
    r = ghat - eval_F(p, u)
    res = sd.norm_y(r)
    best = res
    for _ in range(max_iter):
        if res <= tol * scale:
            return u
        jac = sp.csc_matrix(assemble_DF(p, u))
        try:
            lu = spla.splu(jac)
        except RuntimeError as exc:
            raise SingularOperatorError(f"Jacobian factorization failed: {exc}")
        delta = lu.solve(r)
        check = np.linalg.norm(jac @ delta - r)
        if not np.isfinite(check) or check > 1e-8 * max(np.linalg.norm(r), 1e-300):
            raise SingularOperatorError(
                "Jacobian is numerically singular at the current iterate"
            )
        u = u + delta
        r = ghat - eval_F(p, u)
        res = sd.norm_y(r)
        if not np.isfinite(res) or res > 1e6 * max(best, tol * scale):
            raise NewtonError("full Newton diverged")
        best = min(best, res)
    if res <= tol * scale:
        return u
    raise NewtonError(f"full Newton did not converge in {max_iter} iterations")


def solve_on_fiber_1d(
    p: Problem,
    ghat: np.ndarray,
    trace: FiberTrace,
    *,
    tol: float = DEFAULT_TOL,
    bisect_width: float = BISECT_WIDTH,
    touch_rtol: float = 1e-2,
) -> SolutionSet:
    """All solutions of F(u) = g bracketed by a one-dimensional trace.

    Every sign change of (image height - target height) along the trace is
    refined by bisection on the fiber parameter down to ``bisect_width``,
    then polished by full Newton.  Heights where the trace grazes the target
    without crossing are reported as near-touches, not solutions.
    """
    if trace.kind != "line":
        raise ValueError("solve_on_fiber_1d needs a 'line' trace")
    if trace.fiber_points is None:
        raise ValueError("trace must store fiber points for warm starts")
    sd = p.spectral
    s_star = float(sd.height_y(ghat)[0])
    ts = trace.t
    diff = trace.s - s_star

    roots: list[np.ndarray] = []
    span = float(np.ptp(trace.s))
    touch_tol = touch_rtol * (span if span > 0 else 1.0)
    near_touches = []

    # direct hits on samples
    hit_idx = set()
    for i in np.flatnonzero(diff == 0.0):
        roots.append(_polish(p, trace.fiber_points[i], ghat, tol))
        hit_idx.add(int(i))

    for i in np.flatnonzero(diff[:-1] * diff[1:] < 0.0):
        u = _bisect_bracket(
            p, ghat, trace.fiber_points[i],
            float(ts[i]), float(ts[i + 1]), float(diff[i]),
            s_star, bisect_width, tol,
        )
        roots.append(_polish(p, u, ghat, tol))

    # tangential near-touches: local minima of |diff| that never cross
    for i in range(1, len(diff) - 1):
        if i in hit_idx:
            continue
        if abs(diff[i]) <= touch_tol and abs(diff[i]) <= abs(diff[i - 1]) and abs(diff[i]) < abs(diff[i + 1]):
            if diff[i - 1] * diff[i] > 0 and diff[i] * diff[i + 1] > 0:
                near_touches.append(float(ts[i]))

    return _collect_solutions(p, ghat, roots, tol, tuple(near_touches))


def _bisect_bracket(p, ghat, u_left, ta, tb, da, s_star, width, tol):
    """Bisect t -> s(t) - s_star inside [ta, tb]; returns the fiber point at the midpoint."""
    sd = p.spectral
    u = np.array(u_left, dtype=float)
    sign_a = np.sign(da)
    for _ in range(200):
        tm = 0.5 * (ta + tb)
        pstep = sd.vertical_from_height(np.array([tm]) - sd.height_x(u))
        u = move_along_fiber(p, u, pstep, ghat, tol=tol)
        dm = float(sd.height_y(eval_F(p, u))[0]) - s_star
        if dm == 0.0:
            return u
        if np.sign(dm) == sign_a:
            ta = tm
        else:
            tb = tm
        if tb - ta <= width:
            return u
    raise BisectionError("bisection on the fiber stagnated", bracket=(ta, tb))


def _polish(p, u, ghat, tol):
    return newton_full(p, u, ghat, tol=tol)


def _collect_solutions(p, ghat, roots, tol, near_touches):
    sd = p.spectral
    scale = rhs_scale(p, ghat)
    distinct: list[np.ndarray] = []
    for u in roots:
        is_new = True
        for v in distinct:
            sep = SEPARATION_RTOL * (1.0 + max(sd.norm_x(u), sd.norm_x(v)))
            if sd.norm_x(u - v) <= sep:
                is_new = False
                break
        if is_new:
            distinct.append(u)
    residuals = np.array([sd.norm_y(ghat - eval_F(p, u)) / scale for u in distinct])
    return SolutionSet(
        solutions=distinct,
        residuals=residuals,
        multiplicity=len(distinct),
        near_touches=near_touches,
    )


@dataclass(frozen=True)
class CurveCrossing:
    """Transverse self-intersection of a polygonal image curve."""

    point: np.ndarray      # image height where the two branches meet
    t_first: np.ndarray    # interpolated input height on the earlier branch
    t_second: np.ndarray   # interpolated input height on the later branch


@dataclass(frozen=True)
class TargetHit:
    """Closest approach of the image polygon to a target height."""

    t: np.ndarray
    s: np.ndarray
    distance: float


def _segments(trace: FiberTrace):
    pts = trace.heights_out
    n = len(trace)
    last = n if trace.closed else n - 1
    for i in range(last):
        yield i, pts[i], pts[(i + 1) % n]


def _seg_intersection(p0, p1, q0, q1):
    """Parameters (a, b) with p0+a(p1-p0) = q0+b(q1-q0), or None if not transverse."""
    r = p1 - p0
    s = q1 - q0
    denom = r[0] * s[1] - r[1] * s[0]
    if denom == 0.0:
        return None
    d = q0 - p0
    a = (d[0] * s[1] - d[1] * s[0]) / denom
    b = (d[0] * r[1] - d[1] * r[0]) / denom
    if 0.0 <= a <= 1.0 and 0.0 <= b <= 1.0:
        return a, b
    return None


def find_self_intersections(trace: FiberTrace) -> list[CurveCrossing]:
    """Transverse crossings of the image polygon with itself.

    Adjacent segments share an endpoint and are skipped; remaining pairs are
    scanned exhaustively, which is plenty at the sample counts used here.
    """
    if trace.heights_out.shape[1] != 2:
        raise ValueError("self-intersection scan requires a 2-D trace")
    segs = list(_segments(trace))
    n = len(trace)
    crossings = []
    for ii in range(len(segs)):
        i, p0, p1 = segs[ii]
        for jj in range(ii + 2, len(segs)):
            j, q0, q1 = segs[jj]
            if trace.closed and i == 0 and j == len(segs) - 1:
                continue  # wrap-around neighbors
            hit = _seg_intersection(p0, p1, q0, q1)
            if hit is None:
                continue
            a, b = hit
            point = p0 + a * (p1 - p0)
            ti = trace.heights_in
            t_first = ti[i] + a * (ti[(i + 1) % n] - ti[i])
            t_second = ti[j] + b * (ti[(j + 1) % n] - ti[j])
            crossings.append(CurveCrossing(point=point, t_first=t_first, t_second=t_second))
    return crossings


def find_target_hits(trace: FiberTrace, target, tol: float | None = None) -> list[TargetHit]:
    """Segments of the image polygon passing within ``tol`` of a target height.

    Consecutive qualifying segments are clustered and only the closest
    approach of each cluster is kept, so one pass of the curve near the
    target produces one hit.
    """
    target = np.asarray(target, dtype=float)
    pts = trace.heights_out
    if pts.shape[1] != 2:
        raise ValueError("target scan requires a 2-D trace")
    if tol is None:
        bbox = pts.max(axis=0) - pts.min(axis=0)
        tol = 0.02 * float(np.linalg.norm(bbox))
    n = len(trace)
    candidates = []
    for i, p0, p1 in _segments(trace):
        r = p1 - p0
        rr = float(r @ r)
        a = 0.0 if rr == 0 else float(np.clip((target - p0) @ r / rr, 0.0, 1.0))
        closest = p0 + a * r
        dist = float(np.linalg.norm(closest - target))
        if dist <= tol:
            ti = trace.heights_in
            t = ti[i] + a * (ti[(i + 1) % n] - ti[i])
            candidates.append((i, TargetHit(t=t, s=closest, distance=dist)))
    hits = []
    cluster: list[tuple[int, TargetHit]] = []
    for idx, hit in candidates:
        if cluster and idx > cluster[-1][0] + 1:
            hits.append(min(cluster, key=lambda c: c[1].distance)[1])
            cluster = []
        cluster.append((idx, hit))
    if cluster:
        hits.append(min(cluster, key=lambda c: c[1].distance)[1])
    # a closed curve may split one pass across the seam; merge those clusters
    if (
        trace.closed
        and len(hits) >= 2
        and candidates
        and candidates[0][0] == 0
        and candidates[-1][0] == n - 1
    ):
        merged = min(hits[0], hits[-1], key=lambda h: h.distance)
        hits = [merged] + hits[1:-1]
    return hits


def find_intersections_2d(trace: FiberTrace, target=None, tol: float | None = None) -> list[np.ndarray]:
    """Approximate preimage heights read off a closed 2-D trace.

    With no target: the input heights of every transverse self-crossing of
    the image polygon (two per crossing).  With a target height: the input
    heights where the image polygon passes within ``tol`` of it.
    """
    if target is None:
        out = []
        for crossing in find_self_intersections(trace):
            out.append(crossing.t_first)
            out.append(crossing.t_second)
        return out
    return [hit.t for hit in find_target_hits(trace, target, tol)]
