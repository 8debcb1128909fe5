"""Command-line front end: config-driven runs that emit CSV artifacts.

Subcommands: mesh | eigs | fiber-point | trace-fiber | solve.  Every
artifact is a CSV file whose first line is a ``#`` comment carrying the
config hash and the column names; reruns of the same config produce
byte-identical files (fixed node order, deterministic solvers, no
timestamps in data).  Exit codes: 0 ok, 2 config error, 3 eigenvalue
failure, 4 solver failure, 5 I/O failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .errors import (
    BisectionError,
    ConfigError,
    DegenerateSpectrumError,
    EigenConvergenceError,
    EvaluationError,
    FiberFemError,
    InsufficientSpectrumError,
    NewtonError,
    ResonanceError,
    SingularOperatorError,
    TraceError,
)
from .explorer import (
    find_self_intersections,
    find_target_hits,
    newton_full,
    solve_on_fiber_1d,
    trace_circle_2d,
    trace_fiber_1d,
    trace_radial_2d,
)
from .mesh import (
    assemble_mass,
    assemble_stiffness,
    build_mesh,
    full_grid_values,
    interpolate,
    matrix_triplets,
)
from .nonlinearity import make_arctan_family, make_bump_family
from .solver import (
    Problem,
    continuation_horizontal,
    eval_F,
    move_along_fiber,
    rhs_scale,
    setup_problem,
)
from .spectral import analytic_eigenvalues

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_EIGS = 3
EXIT_SOLVER = 4
EXIT_IO = 5

_EIG_ERRORS = (
    EigenConvergenceError,
    InsufficientSpectrumError,
    ResonanceError,
    DegenerateSpectrumError,
)
_SOLVER_ERRORS = (
    NewtonError,
    SingularOperatorError,
    TraceError,
    BisectionError,
    EvaluationError,
)


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def _render_csv(columns, rows, cfg_hash: str) -> str:
    lines = [f"# config={cfg_hash} columns={','.join(columns)}"]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def _field_rows(mesh, u):
    full = full_grid_values(mesh, u)
    return [(x, y, v) for (x, y), v in zip(mesh.vertices, full)]


def _build_nonlinearity(cfg: RunConfig):
    if cfg.family == "arctan":
        return make_arctan_family(**cfg.family_params)
    return make_bump_family(**cfg.family_params)


def _build_problem(cfg: RunConfig) -> Problem:
    nl = _build_nonlinearity(cfg)
    return setup_problem(cfg.m, nl, interval=cfg.interval, eig_count=cfg.eig_count, c=cfg.c)


def _coeff_field(p: Problem, coeffs: dict) -> np.ndarray:
    u = np.zeros(p.mesh.N)
    for k, val in coeffs.items():
        u += val * p.spectral.eigenvectors[:, k - 1]
    return u


def _build_rhs(cfg: RunConfig, p: Problem) -> np.ndarray:
    if cfg.rhs_kind == "zero":
        return np.zeros(p.mesh.N)
    if cfg.rhs_kind == "product_bump":
        amp = cfg.rhs_amplitude
        gbar = interpolate(lambda x, y: amp * x * (x - 1.0) * y * (y - 2.0), p.mesh)
        return p.mass @ gbar
    return eval_F(p, _coeff_field(p, cfg.rhs_u0))


def cmd_mesh(cfg: RunConfig, artifacts: dict) -> None:
    mesh = build_mesh(cfg.m)
    h = cfg.config_hash
    artifacts["vertices.csv"] = _render_csv(
        ("vertex", "x", "y"),
        [(i, x, y) for i, (x, y) in enumerate(mesh.vertices)],
        h,
    )
    artifacts["triangles.csv"] = _render_csv(
        ("triangle", "v0", "v1", "v2"),
        [(i, a, b, c) for i, (a, b, c) in enumerate(mesh.triangles)],
        h,
    )
    artifacts["dofmap.csv"] = _render_csv(
        ("vertex", "dof", "x", "y"),
        [
            (v, mesh.interior_index[v], mesh.vertices[v, 0], mesh.vertices[v, 1])
            for v in mesh.interior_nodes
        ],
        h,
    )
    for name, mat in (
        ("stiffness.csv", assemble_stiffness(mesh)),
        ("mass.csv", assemble_mass(mesh)),
    ):
        artifacts[name] = _render_csv(
            ("row", "col", "value"),
            [(int(r), int(c), v) for r, c, v in matrix_triplets(mat)],
            h,
        )


def cmd_eigs(cfg: RunConfig, artifacts: dict) -> None:
    p = _build_problem(cfg)
    exact = analytic_eigenvalues(cfg.eig_count)
    rows = []
    for k in range(cfg.eig_count):
        lam_h = p.spectral.eigenvalues[k]
        rows.append((k + 1, lam_h, exact[k], abs(lam_h - exact[k]) / exact[k]))
    artifacts["eigs.csv"] = _render_csv(
        ("k", "lambda_h", "lambda_exact", "rel_error"), rows, cfg.config_hash
    )


def cmd_fiber_point(cfg: RunConfig, artifacts: dict) -> None:
    p = _build_problem(cfg)
    ghat = _build_rhs(cfg, p)
    u0 = _coeff_field(p, cfg.start)
    rep = continuation_horizontal(
        p, u0, ghat, tol=cfg.tol, max_iter=cfg.max_iter, depth_max=cfg.depth_max
    )
    rows = [
        (n, rep.residuals[n], rep.residuals_l2[n])
        for n in range(len(rep.residuals))
    ]
    artifacts["residuals.csv"] = _render_csv(
        ("n", "e_h1dual", "e_l2"), rows, cfg.config_hash
    )
    if not rep.converged:
        raise NewtonError("fiber-point iteration failed", report=rep)
    artifacts["fiber_point.csv"] = _render_csv(
        ("x", "y", "value"), _field_rows(p.mesh, rep.final), cfg.config_hash
    )


def _trace_rows_1d(trace):
    return [(t, s) for t, s in zip(trace.heights_in[:, 0], trace.heights_out[:, 0])]


def _trace_rows_2d(trace):
    return [
        (ti[0], ti[1], so[0], so[1])
        for ti, so in zip(trace.heights_in, trace.heights_out)
    ]


def cmd_trace(cfg: RunConfig, artifacts: dict) -> None:
    p = _build_problem(cfg)
    ghat = _build_rhs(cfg, p)
    h = cfg.config_hash
    kappa = p.spectral.n_vertical
    if kappa == 1:
        trace = trace_fiber_1d(
            p, ghat, cfg.t_min, cfg.t_max, cfg.steps, tol=cfg.tol, store_points=False
        )
        artifacts["trace.csv"] = _render_csv(("t1", "s1"), _trace_rows_1d(trace), h)
    elif kappa == 2:
        trace = trace_circle_2d(
            p, ghat, cfg.radius, cfg.circle_steps, tol=cfg.tol, store_points=False
        )
        artifacts["trace_circle.csv"] = _render_csv(
            ("t1", "t2", "s1", "s2"), _trace_rows_2d(trace), h
        )
        for i, direction in enumerate(cfg.directions, start=1):
            ray = trace_radial_2d(
                p, ghat, direction, cfg.r_max, cfg.radial_steps, tol=cfg.tol, store_points=False
            )
            artifacts[f"trace_radial_{i}.csv"] = _render_csv(
                ("t1", "t2", "s1", "s2"), _trace_rows_2d(ray), h
            )
    else:
        raise NewtonError(f"tracing supports 1 or 2 vertical modes, found {kappa}")


def _warm_point(p, trace, height):
    """Fiber point at an off-sample height, warm-started from the nearest sample."""
    dist = np.linalg.norm(trace.heights_in - np.asarray(height), axis=1)
    i = int(np.argmin(dist))
    pstep = p.spectral.vertical_from_height(np.asarray(height) - trace.heights_in[i])
    return move_along_fiber(p, trace.fiber_points[i], pstep, trace.g_ref)


def cmd_solve(cfg: RunConfig, artifacts: dict) -> None:
    p = _build_problem(cfg)
    ghat = _build_rhs(cfg, p)
    h = cfg.config_hash
    sd = p.spectral
    kappa = sd.n_vertical
    if kappa == 1:
        trace = trace_fiber_1d(p, ghat, cfg.t_min, cfg.t_max, cfg.steps, tol=cfg.tol)
        artifacts["trace.csv"] = _render_csv(("t1", "s1"), _trace_rows_1d(trace), h)
        sols = solve_on_fiber_1d(p, ghat, trace, tol=cfg.tol)
        solutions = sols.solutions
        residuals = sols.residuals
        if sols.near_touches:
            artifacts["near_touches.csv"] = _render_csv(
                ("t1",), [(t,) for t in sols.near_touches], h
            )
        target = ghat
    elif kappa == 2:
        trace = trace_circle_2d(p, ghat, cfg.radius, cfg.circle_steps, tol=cfg.tol)
        artifacts["trace_circle.csv"] = _render_csv(
            ("t1", "t2", "s1", "s2"), _trace_rows_2d(trace), h
        )
        crossings = find_self_intersections(trace)
        if not crossings:
            raise NewtonError(
                "image curve has no self-intersection; grow the circle radius"
            )
        cross = crossings[0]
        target = sd.project_horizontal_y(ghat) + sd.dual_from_height(cross.point)
        guesses = [
            _warm_point(p, trace, cross.t_first),
            _warm_point(p, trace, cross.t_second),
        ]
        for i, direction in enumerate(cfg.directions, start=1):
            ray = trace_radial_2d(p, ghat, direction, cfg.r_max, cfg.radial_steps, tol=cfg.tol)
            artifacts[f"trace_radial_{i}.csv"] = _render_csv(
                ("t1", "t2", "s1", "s2"), _trace_rows_2d(ray), h
            )
            hits = find_target_hits(ray, cross.point)
            if hits:
                best = min(hits, key=lambda hit: hit.distance)
                guesses.append(_warm_point(p, ray, best.t))
        solutions = []
        for guess in guesses:
            u = newton_full(p, guess, target, tol=cfg.tol)
            if all(
                sd.norm_x(u - v) > 1e-4 * (1.0 + max(sd.norm_x(u), sd.norm_x(v)))
                for v in solutions
            ):
                solutions.append(u)
        scale = rhs_scale(p, target)
        residuals = np.array(
            [sd.norm_y(target - eval_F(p, u)) / scale for u in solutions]
        )
    else:
        raise NewtonError(f"solving supports 1 or 2 vertical modes, found {kappa}")

    t_cols = tuple(f"t{i+1}" for i in range(kappa))
    summary = []
    for i, u in enumerate(solutions, start=1):
        heights = sd.height_x(u)
        summary.append((i, residuals[i - 1]) + tuple(heights))
        artifacts[f"solution_{i:02d}.csv"] = _render_csv(
            ("x", "y", "value"), _field_rows(p.mesh, u), h
        )
    artifacts["solutions.csv"] = _render_csv(
        ("index", "residual") + t_cols, summary, h
    )


_COMMANDS = {
    "mesh": cmd_mesh,
    "eigs": cmd_eigs,
    "fiber-point": cmd_fiber_point,
    "trace-fiber": cmd_trace,
    "solve": cmd_solve,
}


def _flush(artifacts: dict, out_dir: Path, suffix: str = "") -> list[str]:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name in sorted(artifacts):
        path = out_dir / (name + suffix)
        path.write_text(artifacts[name], encoding="utf-8")
        written.append(name + suffix)
    return written


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fiberfem",
        description="Finite-element fiber solver for -Lap(u) - f(u) = g on [0,1]x[0,2]",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="path to an INI run configuration")
    parser.add_argument("--out", default=None, help="output directory (overrides the config)")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    args = parser.parse_args(argv)

    def say(msg):
        if not args.quiet:
            print(msg)

    try:
        cfg = load_config(args.config, override_out=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = Path(cfg.output_dir)
    artifacts: dict[str, str] = {}
    try:
        _COMMANDS[args.command](cfg, artifacts)
    except _EIG_ERRORS as exc:
        print(f"eigenvalue failure: {exc}", file=sys.stderr)
        _write_partial(artifacts, out_dir)
        return EXIT_EIGS
    except _SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        _write_partial(artifacts, out_dir)
        return EXIT_SOLVER
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO

    try:
        written = _flush(artifacts, out_dir)
        manifest = _render_csv(
            ("file", "command"), [(name, args.command) for name in written], cfg.config_hash
        )
        (out_dir / "manifest.csv").write_text(manifest, encoding="utf-8")
    except OSError as exc:
        print(f"I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO

    if args.command == "eigs" and not args.quiet:
        print(artifacts["eigs.csv"], end="")
    say(f"wrote {len(written) + 1} files to {out_dir} (config {cfg.config_hash})")
    return EXIT_OK


def _write_partial(artifacts: dict, out_dir: Path) -> None:
    try:
        _flush(artifacts, out_dir, suffix=".partial")
    except OSError:
        pass  # the original failure is the one worth reporting


if __name__ == "__main__":
    sys.exit(main())
