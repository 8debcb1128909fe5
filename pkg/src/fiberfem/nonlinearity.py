"""Nonlinearities f(x, s) with bounded s-derivative, and their validation.

A usable nonlinearity must be C1 with f(.,0) bounded and d/ds f bounded on
all of Omega x R; the bound interval is what gets compared against the
Laplacian spectrum.  The built-in families keep ``f`` in closed form (the
arctan primitive, plus an error-function primitive for the Gaussian bump
term) so f and its derivative are consistent to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import erf

from .errors import EvaluationError, InsufficientSpectrumError
from .mesh import Mesh
from .spectral import SpectralData, default_eps_gap, index_set

# validation grid for derivative-range certification
_GRID_POINTS = 100_001
_GRID_SPAN = 1.0e4


@dataclass(frozen=True)
class Nonlinearity:
    """Pair (f, d/ds f) with a certified range interval for the derivative.

    ``f`` and ``d2f`` are vectorized callables of (x, y, s); all built-in
    families are autonomous and ignore (x, y), but the interface carries the
    position so nonautonomous problems fit without change.
    """

    f: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    d2f: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    range_bounds: tuple[float, float]
    label: str


def make_arctan_family(alpha: float, beta: float) -> Nonlinearity:
    """Autonomous f with f'(s) = alpha*arctan(s) + beta and f(0) = 0.

    The primitive is alpha*(s*arctan(s) - log(1+s^2)/2) + beta*s, so the
    derivative range is exactly (beta - alpha*pi/2, beta + alpha*pi/2).
    """
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    alpha = float(alpha)
    beta = float(beta)

    def f(x, y, s):
        s = np.asarray(s, dtype=float)
        return alpha * (s * np.arctan(s) - 0.5 * np.log1p(s * s)) + beta * s

    def d2f(x, y, s):
        s = np.asarray(s, dtype=float)
        return alpha * np.arctan(s) + beta

    half = alpha * np.pi / 2.0
    return Nonlinearity(
        f=f,
        d2f=d2f,
        range_bounds=(beta - half, beta + half),
        label=f"arctan(alpha={alpha:g}, beta={beta:g})",
    )


def make_bump_family(beta: float, alpha: float, gamma: float, s0: float, w: float) -> Nonlinearity:
    """Non-monotone derivative: f'(s) = beta + alpha*arctan(s) + gamma*exp(-((s-s0)/w)^2).

    The Gaussian term integrates to an error function, so f stays in closed
    form with f(0) = 0.  The derivative range is certified on a dense sample
    grid around the bump and the origin, with the arctan asymptotes added
    analytically.
    """
    if w <= 0:
        raise ValueError("bump width w must be positive")
    beta, alpha, gamma, s0, w = map(float, (beta, alpha, gamma, s0, w))

    bump_scale = gamma * w * np.sqrt(np.pi) / 2.0
    erf_at_zero = erf(-s0 / w)

    def f(x, y, s):
        s = np.asarray(s, dtype=float)
        arct = alpha * (s * np.arctan(s) - 0.5 * np.log1p(s * s))
        return beta * s + arct + bump_scale * (erf((s - s0) / w) - erf_at_zero)

    def d2f(x, y, s):
        s = np.asarray(s, dtype=float)
        return beta + alpha * np.arctan(s) + gamma * np.exp(-(((s - s0) / w) ** 2))

    grid = np.unique(
        np.concatenate(
            [
                np.linspace(-_GRID_SPAN, _GRID_SPAN, _GRID_POINTS // 2),
                np.linspace(s0 - 60.0 * w, s0 + 60.0 * w, _GRID_POINTS // 2),
            ]
        )
    )
    vals = d2f(None, None, grid)
    asymptotes = (beta - alpha * np.pi / 2.0, beta + alpha * np.pi / 2.0)
    lo = min(float(vals.min()), min(asymptotes))
    hi = max(float(vals.max()), max(asymptotes))
    pad = 1e-12 * max(1.0, abs(lo), abs(hi))
    return Nonlinearity(
        f=f,
        d2f=d2f,
        range_bounds=(lo - pad, hi + pad),
        label=f"bump(beta={beta:g}, alpha={alpha:g}, gamma={gamma:g}, s0={s0:g}, w={w:g})",
    )


def eval_f_nodal(nl: Nonlinearity, mesh: Mesh, u: np.ndarray) -> np.ndarray:
    """Componentwise f(node_j, u_j) over the interior nodes."""
    xy = mesh.interior_xy
    vals = np.asarray(nl.f(xy[:, 0], xy[:, 1], u), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise EvaluationError(f"f produced non-finite values ({nl.label})")
    return vals


def eval_d2f_nodal(nl: Nonlinearity, mesh: Mesh, u: np.ndarray) -> np.ndarray:
    """Componentwise derivative values d2f(node_j, u_j) over the interior nodes."""
    xy = mesh.interior_xy
    vals = np.asarray(nl.d2f(xy[:, 0], xy[:, 1], u), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise EvaluationError(f"d2f produced non-finite values ({nl.label})")
    return vals


def eval_d2f_grid(nl: Nonlinearity, mesh: Mesh, u: np.ndarray) -> np.ndarray:
    """Derivative values on every grid vertex, using u = 0 on the boundary."""
    from .mesh import full_grid_values

    xy = mesh.vertices
    vals = np.asarray(
        nl.d2f(xy[:, 0], xy[:, 1], full_grid_values(mesh, u)), dtype=float
    )
    if not np.all(np.isfinite(vals)):
        raise EvaluationError(f"d2f produced non-finite values ({nl.label})")
    return vals


@dataclass(frozen=True)
class ValidationVerdict:
    """Outcome of checking a nonlinearity against a computed spectrum."""

    ok: bool
    index_set: frozenset[int]
    interval: tuple[float, float]
    eps_gap: float
    distance_to_a: np.ndarray
    distance_to_b: np.ndarray
    failures: tuple[str, ...]


def validate_appropriate(
    nl: Nonlinearity, spec: SpectralData, eps_gap: float | None = None
) -> ValidationVerdict:
    """Check the usability hypotheses of ``nl`` against computed eigenvalues.

    Verifies that sampled derivative values stay inside the declared range
    interval, that f(.,0) is bounded on a sample of the domain, and that no
    eigenvalue sits within ``eps_gap`` of the interval endpoints; the induced
    index set comes back with the verdict.  Raises
    InsufficientSpectrumError when the computed spectrum is too short to
    certify the upper endpoint.
    """
    a, b = nl.range_bounds
    if eps_gap is None:
        eps_gap = default_eps_gap(a, b) if b > a else 1e-12 * max(1.0, abs(a))
    lams = spec.eigenvalues
    if lams.max() < b + eps_gap:
        raise InsufficientSpectrumError(
            f"computed spectrum tops out at {lams.max():.6g}, below the upper "
            f"endpoint {b:.6g}; compute more eigenpairs to certify the index set"
        )

    failures: list[str] = []

    grid = np.linspace(-_GRID_SPAN, _GRID_SPAN, 20_001)
    dvals = np.asarray(nl.d2f(None, None, grid), dtype=float)
    slack = 1e-9 * max(1.0, abs(a), abs(b))
    if dvals.min() < a - slack or dvals.max() > b + slack:
        failures.append(
            f"sampled derivative range [{dvals.min():.6g}, {dvals.max():.6g}] leaves "
            f"the declared interval [{a:.6g}, {b:.6g}]"
        )

    xs = np.linspace(0.0, 1.0, 33)
    ys = np.linspace(0.0, 2.0, 33)
    gx, gy = np.meshgrid(xs, ys)
    f0 = np.asarray(nl.f(gx.ravel(), gy.ravel(), np.zeros(gx.size)), dtype=float)
    if not np.all(np.isfinite(f0)):
        failures.append("f(., 0) is not finite on the validation grid")

    dist_a = np.abs(lams - a)
    dist_b = np.abs(lams - b)
    kset: frozenset[int] = frozenset()
    if b > a:
        try:
            kset = index_set(spec, a, b, eps_gap)
        except Exception as exc:  # resonance → failing verdict, not an exception
            failures.append(str(exc))
    else:
        # degenerate interval (linear nonlinearity): endpoints must avoid the spectrum
        if dist_a.min() <= eps_gap:
            failures.append(
                f"eigenvalue {int(np.argmin(dist_a)) + 1} coincides with the "
                f"derivative value {a:.9g}"
            )

    return ValidationVerdict(
        ok=not failures,
        index_set=kset,
        interval=(a, b),
        eps_gap=float(eps_gap),
        distance_to_a=dist_a,
        distance_to_b=dist_b,
        failures=tuple(failures),
    )
