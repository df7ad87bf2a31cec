"""Run configuration: a flat ``key = value`` text format.

Example::

    mesh.dim = 2
    mesh.cells = 32, 32
    time.T = 1.0
    time.N = 64
    params.alpha = 0.6
    params.mu = 0.3
    params.normalized = true
    init.n.preset = constant
    init.n.value = 1.0
    init.i.preset = gaussian
    init.i.center = 0.5, 0.5
    init.i.width = 0.1
    init.i.amplitude = 0.2
    ...

``#`` starts a comment.  Every key is checked against the table below;
anything else is an error.  Initial fields are materialized at parse time
so the data hypotheses (``inf n0 > 0``, ``h0 >= s0 >= 0``, ``i0 >= 0``)
and the step restriction are reported against the offending key.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, PreconditionError
from .grid import Mesh, build_mesh, read_snapshot
from .model import ModelParams, Nonlinearity, validate_tau

INIT_NAMES = ("n", "s", "i", "h", "d")
PRESET_KEYS = {
    "constant": ("value",),
    "gaussian": ("center", "width", "amplitude", "floor"),
    "rectangle": ("lo", "hi", "inside", "outside"),
    "raster": ("path",),
}
RATE_KEYS = ("alpha", "mu", "beta_i", "beta_e", "sigma", "phi_e", "phi_r", "phi_d")
FACE_AVERAGES = ("harmonic", "arithmetic")


@dataclass(frozen=True)
class FieldSpec:
    preset: str
    value: float = 0.0
    center: tuple[float, ...] = ()
    width: float = 1.0
    amplitude: float = 0.0
    floor: float = 0.0
    lo: tuple[float, ...] = ()
    hi: tuple[float, ...] = ()
    inside: float = 0.0
    outside: float = 0.0
    path: str = ""

    def render(self, mesh: Mesh, base_dir: Path | None = None) -> np.ndarray:
        x = mesh.centers
        if self.preset == "constant":
            return np.full(mesh.n_cells, self.value)
        if self.preset == "gaussian":
            r2 = np.sum((x - np.array(self.center)) ** 2, axis=1)
            return self.floor + self.amplitude * np.exp(-r2 / (2.0 * self.width**2))
        if self.preset == "rectangle":
            inside = np.all((x >= np.array(self.lo)) & (x <= np.array(self.hi)), axis=1)
            return np.where(inside, self.inside, self.outside)
        path = Path(self.path)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        shape, values = read_snapshot(path)
        if tuple(shape) != mesh.shape:
            raise PreconditionError(f"raster {self.path} has shape {shape}, mesh is {mesh.shape}")
        return values


@dataclass(frozen=True)
class RunConfig:
    dim: int
    cells: tuple[int, ...]
    T: float
    N: int
    params: ModelParams
    init: dict
    lengths: tuple[float, ...] = ()
    nonlinearity: Nonlinearity = field(default_factory=Nonlinearity)
    mollify: bool = False
    tol: float = 1e-10
    face_average: str = "harmonic"
    output_dir: str = "out"
    output_every: int = 1
    probe_rate: float | None = None
    base_dir: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.lengths:
            object.__setattr__(self, "lengths", (1.0,) * self.dim)

    @property
    def tau(self) -> float:
        return self.T / self.N

    def mesh(self) -> Mesh:
        return build_mesh(self.dim, self.cells, self.lengths)

    def initial_fields(self, mesh: Mesh | None = None) -> dict:
        mesh = self.mesh() if mesh is None else mesh
        return {name: spec.render(mesh, self.base_dir) for name, spec in self.init.items()}


# -- parsing ------------------------------------------------------------------

def _key_table() -> dict:
    keys = {
        "mesh.dim": "int", "mesh.cells": "ints", "mesh.lengths": "floats",
        "time.T": "float", "time.N": "int",
        "params.normalized": "bool",
        "nonlin.A": "word", "nonlin.A.c": "float", "nonlin.A.A0": "float",
        "nonlin.kappa": "word", "nonlin.kappa.c": "float",
        "nonlin.kappa.a": "float", "nonlin.kappa.b": "float",
        "solver.mollify": "bool", "solver.tol": "float", "solver.face_average": "word",
        "output.dir": "text", "output.every": "int",
        "probe.rate": "float",
    }
    for r in RATE_KEYS:
        keys[f"params.{r}"] = "float"
    field_types = {
        "value": "float", "center": "floats", "width": "float", "amplitude": "float",
        "floor": "float", "lo": "floats", "hi": "floats", "inside": "float",
        "outside": "float", "path": "text",
    }
    for u in INIT_NAMES:
        keys[f"init.{u}.preset"] = "word"
        for name, kind in field_types.items():
            keys[f"init.{u}.{name}"] = kind
    return keys


KEYS = _key_table()


def _convert(kind: str, raw: str):
    if kind == "int":
        return int(raw)
    if kind == "float":
        value = float(raw)
        if not math.isfinite(value):
            raise ValueError("not finite")
        return value
    if kind == "ints":
        return tuple(int(v) for v in raw.split(","))
    if kind == "floats":
        values = tuple(float(v) for v in raw.split(","))
        if not all(math.isfinite(v) for v in values):
            raise ValueError("not finite")
        return values
    if kind == "bool":
        low = raw.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ValueError("expected true or false")
    if kind == "word" and not raw.replace("_", "").isalnum():
        raise ValueError("expected a single word")
    return raw


def parse_assignments(text: str) -> dict[str, tuple[int, str]]:
    """Raw ``key -> (line number, value text)`` with syntax and key checks only."""
    found: dict[str, tuple[int, str]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value'", line=lineno)
        key, value = (part.strip() for part in body.split("=", 1))
        if not key or not value:
            raise ConfigError(f"empty key or value", line=lineno, key=key or None)
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}", line=lineno, key=key)
        if key in found:
            raise ConfigError(
                f"duplicate key {key!r} (first set on line {found[key][0]})",
                line=lineno, key=key,
            )
        found[key] = (lineno, value)
    return found


def parse_config(text: str, base_dir=None) -> RunConfig:
    """Parse and validate a configuration; raises ``ConfigError``."""
    return build_config(parse_assignments(text), base_dir)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text, path.parent)


def build_config(raw: dict[str, tuple[int, str]], base_dir=None) -> RunConfig:
    values = {}
    for key, (lineno, text) in raw.items():
        try:
            values[key] = _convert(KEYS[key], text)
        except ValueError as exc:
            raise ConfigError(f"bad value {text!r} for {key}: {exc}",
                              line=lineno, key=key) from exc

    def line_of(key):
        return raw[key][0] if key in raw else None

    def fail(key, message):
        raise ConfigError(message, line=line_of(key), key=key)

    def need(key):
        if key not in values:
            fail(key, "required key is missing")
        return values[key]

    def guarded(key, build):
        try:
            return build()
        except PreconditionError as exc:
            fail(key, str(exc))

    dim = need("mesh.dim")
    if dim not in (1, 2, 3):
        fail("mesh.dim", f"must be 1, 2 or 3, got {dim}")
    cells = need("mesh.cells")
    if len(cells) == 1:
        cells = cells * dim
    if len(cells) != dim or min(cells) < 1:
        fail("mesh.cells", f"need {dim} positive cell count(s), got {cells}")
    lengths = values.get("mesh.lengths", (1.0,) * dim)
    if len(lengths) == 1:
        lengths = lengths * dim
    if len(lengths) != dim or min(lengths) <= 0:
        fail("mesh.lengths", f"need {dim} positive length(s), got {lengths}")

    T = need("time.T")
    if not T > 0:
        fail("time.T", f"must be positive, got {T}")
    N = need("time.N")
    if N < 1:
        fail("time.N", f"must be a positive integer, got {N}")

    rates = {r: values[f"params.{r}"] for r in RATE_KEYS if f"params.{r}" in values}
    for r in ("alpha", "mu"):
        if not need(f"params.{r}") > 0:
            fail(f"params.{r}", f"must be positive, got {rates[r]}")
    for r, v in rates.items():
        if v < 0:
            fail(f"params.{r}", f"must be nonnegative, got {v}")
    normalized = values.get("params.normalized", False)
    if normalized:
        unit = ModelParams.normalized_model(1.0, 1.0)
        for r, v in rates.items():
            if r not in ("alpha", "mu") and v != getattr(unit, r):
                fail(f"params.{r}", f"normalized parameters fix {r} = {getattr(unit, r)}")
    params = guarded("params.normalized", lambda: ModelParams(**rates, normalized=normalized))
    verdict = validate_tau(params, T / N)
    if not verdict:
        fail("time.N", f"inadmissible time step: {verdict.reason}")

    nonlinearity = _build_nonlinearity(values, fail, guarded)

    init = {}
    for u in INIT_NAMES:
        prefix = f"init.{u}."
        keys = [k for k in values if k.startswith(prefix)]
        if u == "d" and not keys:
            continue
        preset = need(prefix + "preset")
        if preset not in PRESET_KEYS:
            fail(prefix + "preset", f"unknown preset {preset!r}")
        kwargs = {}
        for k in keys:
            name = k[len(prefix):]
            if name == "preset":
                continue
            if name not in PRESET_KEYS[preset]:
                fail(k, f"not a parameter of the {preset} preset")
            kwargs[name] = values[k]
        for name in PRESET_KEYS[preset]:
            if name not in kwargs and not (preset == "gaussian" and name == "floor"):
                fail(prefix + name, f"required by the {preset} preset")
        for name in ("center", "lo", "hi"):
            if name in kwargs and len(kwargs[name]) != dim:
                fail(prefix + name, f"need {dim} coordinate(s), got {kwargs[name]}")
        if preset == "gaussian" and not kwargs["width"] > 0:
            fail(prefix + "width", "must be positive")
        init[u] = FieldSpec(preset, **kwargs)

    face_average = values.get("solver.face_average", "harmonic")
    if face_average not in FACE_AVERAGES:
        fail("solver.face_average", f"must be one of {FACE_AVERAGES}")
    tol = values.get("solver.tol", 1e-10)
    if not 0 < tol < 1:
        fail("solver.tol", f"must lie in (0, 1), got {tol}")
    every = values.get("output.every", 1)
    if every < 1:
        fail("output.every", f"must be a positive integer, got {every}")
    rate = values.get("probe.rate")
    if rate is not None and rate < 0:
        fail("probe.rate", "must be nonnegative")

    config = RunConfig(
        dim=dim, cells=tuple(cells), lengths=tuple(float(v) for v in lengths), T=T, N=N,
        params=params, nonlinearity=nonlinearity, init=init,
        mollify=values.get("solver.mollify", False), tol=tol, face_average=face_average,
        output_dir=values.get("output.dir", "out"), output_every=every, probe_rate=rate,
        base_dir=None if base_dir is None else Path(base_dir),
    )
    _check_initial(config, fail)
    return config


def _build_nonlinearity(values, fail, guarded) -> Nonlinearity:
    a_kind = values.get("nonlin.A", "constant")
    if a_kind == "constant":
        allowed, a_param = "nonlin.A.c", values.get("nonlin.A.c", 1.0)
    elif a_kind == "saturating":
        allowed, a_param = "nonlin.A.A0", values.get("nonlin.A.A0")
        if a_param is None:
            fail("nonlin.A.A0", "required by the saturating preset")
    else:
        fail("nonlin.A", f"unknown preset {a_kind!r}")
    for k in ("nonlin.A.c", "nonlin.A.A0"):
        if k in values and k != allowed:
            fail(k, f"not a parameter of the {a_kind} preset")

    kappa_kind = values.get("nonlin.kappa", "constant")
    names = {"constant": ("c",), "linear": (), "affine": ("a", "b")}.get(kappa_kind)
    if names is None:
        fail("nonlin.kappa", f"unknown preset {kappa_kind!r}")
    for k in ("nonlin.kappa.c", "nonlin.kappa.a", "nonlin.kappa.b"):
        if k in values and k.rsplit(".", 1)[1] not in names:
            fail(k, f"not a parameter of the {kappa_kind} preset")
    if kappa_kind == "constant":
        params = (values.get("nonlin.kappa.c", 1.0),)
    else:
        for name in names:
            if f"nonlin.kappa.{name}" not in values:
                fail(f"nonlin.kappa.{name}", f"required by the {kappa_kind} preset")
        params = tuple(values[f"nonlin.kappa.{name}"] for name in names)
    return guarded("nonlin.kappa", lambda: Nonlinearity(a_kind, a_param, kappa_kind, params))


def _check_initial(config: RunConfig, fail) -> None:
    mesh = config.mesh()
    rendered = {}
    for u, spec in config.init.items():
        key = f"init.{u}.preset"
        try:
            rendered[u] = spec.render(mesh, config.base_dir)
        except (OSError, PreconditionError) as exc:
            fail(f"init.{u}.path" if spec.preset == "raster" else key, str(exc))
        if not np.all(np.isfinite(rendered[u])):
            fail(key, "initial field is not finite")
    n, s, i, h = (rendered[u] for u in ("n", "s", "i", "h"))
    if not n.min() > 0:
        fail("init.n", f"positivity requirement inf n0 > 0 violated (min {n.min():.6g})")
    if s.min() < 0:
        fail("init.s", f"requirement s0 >= 0 violated (min {s.min():.6g})")
    if np.any(h < s):
        fail("init.h", f"requirement h0 >= s0 violated (min h0 - s0 = {np.min(h - s):.6g})")
    if i.min() < 0:
        fail("init.i", f"requirement i0 >= 0 violated (min {i.min():.6g})")
    if "d" in rendered and rendered["d"].min() < 0:
        fail("init.d", f"requirement d0 >= 0 violated (min {rendered['d'].min():.6g})")


# -- emission -----------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_config(config: RunConfig) -> str:
    """Canonical text form; ``parse_config(emit_config(c)) == c``."""
    lines = [
        f"mesh.dim = {config.dim}",
        f"mesh.cells = {_fmt(config.cells)}",
        f"mesh.lengths = {_fmt(config.lengths)}",
        f"time.T = {_fmt(config.T)}",
        f"time.N = {config.N}",
    ]
    p = config.params
    lines += [f"params.alpha = {_fmt(p.alpha)}", f"params.mu = {_fmt(p.mu)}"]
    if p.normalized:
        lines.append("params.normalized = true")
    else:
        lines += [f"params.{r} = {_fmt(getattr(p, r))}" for r in RATE_KEYS[2:]]
    nl = config.nonlinearity
    lines.append(f"nonlin.A = {nl.a_kind}")
    lines.append(f"nonlin.A.{'c' if nl.a_kind == 'constant' else 'A0'} = {_fmt(nl.a_param)}")
    lines.append(f"nonlin.kappa = {nl.kappa_kind}")
    names = {"constant": ("c",), "linear": (), "affine": ("a", "b")}[nl.kappa_kind]
    lines += [f"nonlin.kappa.{n} = {_fmt(v)}" for n, v in zip(names, nl.kappa_params)]
    for u in INIT_NAMES:
        spec = config.init.get(u)
        if spec is None:
            continue
        lines.append(f"init.{u}.preset = {spec.preset}")
        for name in PRESET_KEYS[spec.preset]:
            lines.append(f"init.{u}.{name} = {_fmt(getattr(spec, name))}")
    lines += [
        f"solver.mollify = {_fmt(config.mollify)}",
        f"solver.tol = {_fmt(config.tol)}",
        f"solver.face_average = {config.face_average}",
        f"output.dir = {config.output_dir}",
        f"output.every = {config.output_every}",
    ]
    if config.probe_rate is not None:
        lines.append(f"probe.rate = {_fmt(config.probe_rate)}")
    return "\n".join(lines) + "\n"


def with_overrides(raw: dict[str, tuple[int, str]], overrides: dict[str, str]) -> dict:
    """Raw assignments with some keys replaced (used by parameter sweeps)."""
    merged = dict(raw)
    for key, value in overrides.items():
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}", key=key)
        merged[key] = (0, value)
    return merged


__all__ = [
    "FieldSpec", "RunConfig", "parse_config", "load_config", "emit_config",
    "parse_assignments", "build_config", "with_overrides", "KEYS",
]
