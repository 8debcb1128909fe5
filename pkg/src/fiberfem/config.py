"""Run configuration: INI parsing, arithmetic expressions, provenance hash.

Numeric fields accept arithmetic expressions over ``pi`` and the analytic
rectangle eigenvalues ``lam1..lam6`` (e.g. ``beta = (lam1 + lam2) / 2``), so
configs can state nonlinearity parameters the way the experiments define
them.  Every field except ``mesh.m`` and the nonlinearity has a default.
The resolved configuration is hashed; the hash is stamped into every output
artifact so results can be traced back to their exact inputs.
"""

from __future__ import annotations

import ast
import configparser
import hashlib
import operator
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .spectral import analytic_eigenvalues

_NAMES = {"pi": float(np.pi)}
for _i, _lam in enumerate(analytic_eigenvalues(6), start=1):
    _NAMES[f"lam{_i}"] = float(_lam)

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}

_FAMILY_PARAMS = {
    "arctan": ("alpha", "beta"),
    "bump": ("beta", "alpha", "gamma", "s0", "w"),
}

_KNOWN_KEYS = {
    "mesh": {"m"},
    "nonlinearity": {"family", "alpha", "beta", "gamma", "s0", "w"},
    "interval": {"a", "b"},
    "rhs": {"kind", "amplitude", "u0"},
    "solver": {"c", "tol", "max_iter", "depth_max", "eig_count", "start"},
    "trace": {
        "t_min", "t_max", "steps",
        "radius", "circle_steps", "r_max", "radial_steps", "directions",
    },
    "output": {"dir"},
}


def eval_expr(text: str, *, section=None, fieldname=None) -> float:
    """Evaluate a restricted arithmetic expression (numbers, + - * / **, pi, lam1..lam6)."""
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"bad expression {text!r}: {exc.msg}", section=section, field=fieldname)

    def walk(node):
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id in _NAMES:
                return _NAMES[node.id]
            raise ConfigError(f"unknown name {node.id!r} in expression {text!r}",
                              section=section, field=fieldname)
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](walk(node.left), walk(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub):
            return -walk(node.operand)
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.UAdd):
            return walk(node.operand)
        raise ConfigError(f"unsupported syntax in expression {text!r}",
                          section=section, field=fieldname)

    return walk(tree)


def _parse_coeffs(text: str, *, section, fieldname) -> dict[int, float]:
    """Parse '1:-50, 2:10' into {1: -50.0, 2: 10.0} (eigen-coefficient form)."""
    out: dict[int, float] = {}
    text = text.strip()
    if not text or text == "0":
        return out
    for chunk in text.split(","):
        if ":" not in chunk:
            raise ConfigError(f"expected k:value pairs, got {chunk.strip()!r}",
                              section=section, field=fieldname)
        k_text, v_text = chunk.split(":", 1)
        try:
            k = int(k_text)
        except ValueError:
            raise ConfigError(f"bad mode index {k_text.strip()!r}", section=section, field=fieldname)
        if k < 1:
            raise ConfigError(f"mode indices are 1-based, got {k}", section=section, field=fieldname)
        if k in out:
            raise ConfigError(f"mode {k} given twice", section=section, field=fieldname)
        out[k] = eval_expr(v_text, section=section, fieldname=fieldname)
    return out


def _parse_directions(text: str, *, section, fieldname) -> tuple[tuple[float, float], ...]:
    dirs = []
    for chunk in text.split(";"):
        parts = chunk.split()
        if len(parts) != 2:
            raise ConfigError(f"each direction needs two components, got {chunk.strip()!r}",
                              section=section, field=fieldname)
        dirs.append((eval_expr(parts[0], section=section, fieldname=fieldname),
                     eval_expr(parts[1], section=section, fieldname=fieldname)))
    return tuple(dirs)


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved run configuration."""

    m: int
    family: str
    family_params: dict
    interval: tuple[float, float] | None
    rhs_kind: str
    rhs_amplitude: float
    rhs_u0: dict
    c: float
    tol: float
    max_iter: int
    depth_max: int
    eig_count: int
    start: dict
    t_min: float
    t_max: float
    steps: int
    radius: float
    circle_steps: int
    r_max: float
    radial_steps: int
    directions: tuple
    output_dir: str = field(compare=False)

    @property
    def config_hash(self) -> str:
        """12-hex digest of the resolved configuration (output path excluded)."""
        parts = []
        for name in sorted(self.__dataclass_fields__):
            if name == "output_dir":
                continue
            value = getattr(self, name)
            if isinstance(value, dict):
                value = sorted(value.items())
            parts.append(f"{name}={value!r}")
        return hashlib.sha256(";".join(parts).encode()).hexdigest()[:12]


def load_config(path: str, *, override_out: str | None = None) -> RunConfig:
    """Parse and validate an INI run configuration."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh, source=path)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc.strerror}")
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"cannot parse config file {path!r}: {exc.message}", line=line)

    for section in parser.sections():
        if section not in _KNOWN_KEYS:
            raise ConfigError("unknown section", section=section)
        for key in parser[section]:
            if key not in _KNOWN_KEYS[section]:
                raise ConfigError("unknown field", section=section, field=key)

    def get(section, key, default=None):
        if parser.has_option(section, key):
            return parser.get(section, key)
        return default

    def get_float(section, key, default):
        raw = get(section, key)
        if raw is None:
            return default
        return eval_expr(raw, section=section, fieldname=key)

    def get_int(section, key, default):
        raw = get(section, key)
        if raw is None:
            return default
        val = eval_expr(raw, section=section, fieldname=key)
        if val != int(val):
            raise ConfigError(f"expected an integer, got {raw!r}", section=section, field=key)
        return int(val)

    if not parser.has_option("mesh", "m"):
        raise ConfigError("required field is missing", section="mesh", field="m")
    m = get_int("mesh", "m", None)
    if not 1 <= m <= 8:
        raise ConfigError(f"mesh level must satisfy 1 <= m <= 8, got {m}",
                          section="mesh", field="m")

    family = get("nonlinearity", "family")
    if family is None:
        raise ConfigError("required field is missing", section="nonlinearity", field="family")
    if family not in _FAMILY_PARAMS:
        raise ConfigError(f"unknown family {family!r} (expected arctan or bump)",
                          section="nonlinearity", field="family")
    family_params = {}
    for pname in _FAMILY_PARAMS[family]:
        raw = get("nonlinearity", pname)
        if raw is None:
            raise ConfigError("required field is missing", section="nonlinearity", field=pname)
        family_params[pname] = eval_expr(raw, section="nonlinearity", fieldname=pname)

    interval = None
    has_a = parser.has_option("interval", "a")
    has_b = parser.has_option("interval", "b")
    if has_a != has_b:
        raise ConfigError("give both endpoints or neither", section="interval",
                          field="a" if not has_a else "b")
    if has_a:
        interval = (get_float("interval", "a", None), get_float("interval", "b", None))
        if not interval[0] < interval[1]:
            raise ConfigError(f"need a < b, got [{interval[0]}, {interval[1]}]", section="interval")

    rhs_kind = get("rhs", "kind", "zero")
    if rhs_kind not in ("product_bump", "f_of_u0", "zero"):
        raise ConfigError(f"unknown rhs kind {rhs_kind!r}", section="rhs", field="kind")
    rhs_amplitude = get_float("rhs", "amplitude", -100.0)
    rhs_u0 = _parse_coeffs(get("rhs", "u0", "0"), section="rhs", fieldname="u0")
    if rhs_kind == "f_of_u0" and not rhs_u0:
        raise ConfigError("f_of_u0 needs nonzero u0 coefficients", section="rhs", field="u0")

    tol = get_float("solver", "tol", 1e-8)
    if tol <= 0:
        raise ConfigError("tol must be positive", section="solver", field="tol")
    max_iter = get_int("solver", "max_iter", 20)
    depth_max = get_int("solver", "depth_max", 6)
    eig_count = get_int("solver", "eig_count", 6)
    if not 1 <= eig_count <= 10:
        raise ConfigError("eig_count must be between 1 and 10", section="solver", field="eig_count")
    start = _parse_coeffs(get("solver", "start", "0"), section="solver", fieldname="start")

    steps = get_int("trace", "steps", 121)
    circle_steps = get_int("trace", "circle_steps", 96)
    radial_steps = get_int("trace", "radial_steps", 61)
    directions = _parse_directions(get("trace", "directions", "1 0; -1 0"),
                                   section="trace", fieldname="directions")

    cfg = RunConfig(
        m=m,
        family=family,
        family_params=family_params,
        interval=interval,
        rhs_kind=rhs_kind,
        rhs_amplitude=rhs_amplitude,
        rhs_u0=rhs_u0,
        c=get_float("solver", "c", 0.0),
        tol=tol,
        max_iter=max_iter,
        depth_max=depth_max,
        eig_count=eig_count,
        start=start,
        t_min=get_float("trace", "t_min", -120.0),
        t_max=get_float("trace", "t_max", 120.0),
        steps=steps,
        radius=get_float("trace", "radius", 40.0),
        circle_steps=circle_steps,
        r_max=get_float("trace", "r_max", 120.0),
        radial_steps=radial_steps,
        directions=directions,
        output_dir=override_out if override_out is not None else get("output", "dir", "out"),
    )
    if not cfg.t_min < cfg.t_max:
        raise ConfigError("need t_min < t_max", section="trace", field="t_min")
    for k in list(cfg.rhs_u0) + list(cfg.start):
        if k > cfg.eig_count:
            raise ConfigError(
                f"mode {k} exceeds eig_count={cfg.eig_count}", section="solver", field="eig_count"
            )
    return cfg
