"""Flat ``key = value`` run configuration.

One pair per line, ``#`` starts a comment, blank lines are ignored.  Vector
values are comma separated.  Every key has a default, so an empty file yields
the channel benchmark setup; only commands that need a mesh require ``mesh``.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

MODES = ("unregularized", "regularized")


def _pos(v):
    return v > 0


def _nonneg(v):
    return v >= 0


# key -> (type, default, validator or None, description of the valid range)
SCHEMA = {
    "mesh": (str, "", None, ""),
    "tag_inflow": (str, "inflow", None, ""),
    "tag_walls": (str, "walls", None, ""),
    "tag_outflow": (str, "outflow", None, ""),
    "tag_shape": (str, "shape", None, ""),
    "mu": (float, 1.0, _pos, "must be > 0"),
    "rho": (float, 0.0, _nonneg, "must be >= 0"),
    "g": (float, 20.0, _pos, "must be > 0"),
    "gamma": (float, 1e3, _pos, "must be > 0"),
    "delta": (float, 0.1, _pos, "must be > 0"),
    "f": ("vec2", (0.0, 0.0), None, ""),
    "volume_target": (float, 0.04, _pos, "must be > 0"),
    "barycenter_target": ("vec2", (0.3, 0.45), None, ""),
    "perimeter_target": (float, 0.76, _pos, "must be > 0"),
    "nu": (float, 1e5, _pos, "must be > 0"),
    "lambda": ("vec4", (0.0, 0.0, 0.0, 0.0), None, ""),
    "tau": (float, 0.9, lambda v: 0 < v < 1, "must lie in (0, 1)"),
    "xi": (float, 2.0, lambda v: v > 1, "must be > 1"),
    "inner": (int, 2000, _nonneg, "must be >= 0"),
    "outer": (int, 10, _nonneg, "must be >= 0"),
    "t_max": (float, 6.25e-6, _pos, "must be > 0"),
    "armijo_beta": (float, 1e-4, lambda v: 0 < v < 1, "must lie in (0, 1)"),
    "max_halvings": (int, 20, _nonneg, "must be >= 0"),
    "newton_tol": (float, 1e-6, _pos, "must be > 0"),
    "newton_beta": (float, 1e-4, lambda v: 0 < v < 0.5, "must lie in (0, 0.5)"),
    "newton_max_iter": (int, 200, _pos, "must be > 0"),
    "mode": (str, "unregularized", lambda v: v in MODES, f"must be one of {', '.join(MODES)}"),
    "v_floor": (float, 1e-12, _nonneg, "must be >= 0"),
    "c_tol": (float, 1e-10, _nonneg, "must be >= 0"),
    "quality_floor": (float, 0.05, lambda v: 0 <= v < 1, "must lie in [0, 1)"),
    "mu_hat_shape": (float, 5.0, _pos, "must be > 0"),
    "mu_hat_outer": (float, 1.0, _pos, "must be > 0"),
    "output_dir": (str, "output", lambda v: v != "", "must not be empty"),
    "emit_fields": (bool, True, None, ""),
    "emit_trace": (bool, True, None, ""),
    "gradient_directions": (int, 10, _pos, "must be > 0"),
    "gradient_seed": (int, 0, _nonneg, "must be >= 0"),
    "fd_step": (float, 1e-7, _pos, "must be > 0"),
}

_TRUE = ("1", "true", "yes", "on")
_FALSE = ("0", "false", "no", "off")


def _convert(key, raw, line):
    kind = SCHEMA[key][0]
    try:
        if kind is str:
            return raw
        if kind is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"expected a boolean, got {raw!r}")
        if kind is int:
            val = float(raw)
            if not val.is_integer():
                raise ValueError(f"expected an integer, got {raw!r}")
            return int(val)
        if kind is float:
            val = float(raw)
            if not math.isfinite(val):
                raise ValueError(f"expected a finite number, got {raw!r}")
            return val
        n = int(kind[-1])
        parts = [p.strip() for p in raw.split(",")]
        if len(parts) != n:
            raise ValueError(f"expected {n} comma-separated numbers, got {raw!r}")
        vals = tuple(float(p) for p in parts)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"expected finite numbers, got {raw!r}")
        return vals
    except ValueError as exc:
        raise ConfigError(str(exc), key=key, line=line) from None


def _validate(key, value, line=None):
    check, msg = SCHEMA[key][2], SCHEMA[key][3]
    if check is not None and not check(value):
        raise ConfigError(f"{value!r} {msg}", key=key, line=line)


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {k: v[1] for k, v in SCHEMA.items()})
    base_dir: Path = field(default_factory=Path)
    lines: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def __getattr__(self, key):
        vals = self.__dict__.get("values")
        if vals is not None and key in vals:
            return vals[key]
        raise AttributeError(key)

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.values == other.values

    # --- builders -------------------------------------------------------

    def physics(self):
        from .bingham import PhysicsParams

        v = self.values
        return PhysicsParams(v["mu"], v["rho"], v["g"], v["gamma"], v["delta"], v["f"])

    def auglag(self):
        from .optimizer import AugLagState

        v = self.values
        targets = (v["volume_target"], v["barycenter_target"], v["perimeter_target"])
        return AugLagState(list(v["lambda"]), v["nu"], targets, v["tau"], v["xi"])

    def settings(self, **overrides):
        from .optimizer import OptSettings

        v = self.values
        s = OptSettings(
            inner=v["inner"],
            outer=v["outer"],
            t_max=v["t_max"],
            beta=v["armijo_beta"],
            max_halvings=v["max_halvings"],
            newton_tol=v["newton_tol"],
            newton_beta=v["newton_beta"],
            newton_max_iter=v["newton_max_iter"],
            regularized=v["mode"] == "regularized",
            v_floor=v["v_floor"],
            c_tol=v["c_tol"],
            quality_floor=v["quality_floor"],
            mu_hat_shape=v["mu_hat_shape"],
            mu_hat_outer=v["mu_hat_outer"],
        )
        for k, val in overrides.items():
            setattr(s, k, val)
        return s

    def bcs(self):
        from .bingham import FlowBCs

        return FlowBCs()

    def tag_names(self):
        v = self.values
        return {t: v[f"tag_{t}"] for t in ("inflow", "walls", "outflow", "shape")}

    def mesh_path(self):
        if not self.values["mesh"]:
            raise ConfigError("missing required key 'mesh'", key="mesh")
        p = Path(self.values["mesh"])
        return p if p.is_absolute() else self.base_dir / p

    def load_mesh(self):
        from .mesh import load_msh

        return load_msh(self.mesh_path(), self.tag_names())

    def output_path(self):
        env = os.environ.get("BINGHAMOPT_OUTPUT_DIR")
        p = Path(env) if env else Path(self.values["output_dir"])
        return p if p.is_absolute() or env else self.base_dir / p


def parse_config_text(text, base_dir=None) -> RunConfig:
    cfg = RunConfig(base_dir=Path(base_dir) if base_dir is not None else Path())
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", line=lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError("unknown key", key=key, line=lineno)
        if key in seen:
            raise ConfigError(f"duplicate key (first set on line {seen[key]})", key=key, line=lineno)
        seen[key] = lineno
        val = _convert(key, value, lineno)
        _validate(key, val, lineno)
        cfg.values[key] = val
    cfg.lines = seen
    _cross_check(cfg)
    return cfg


def _cross_check(cfg):
    names = [cfg.values[f"tag_{t}"] for t in ("inflow", "walls", "outflow", "shape")]
    if len(set(names)) != 4:
        raise ConfigError("boundary tag names must be distinct", key="tag_shape", line=cfg.lines.get("tag_shape"))


def parse_config(path) -> RunConfig:
    """Parse and validate a config file; raises :class:`ConfigError`."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    return parse_config_text(text, base_dir=path.parent)


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    return str(value)


def serialize_config(cfg: RunConfig) -> str:
    """Text form listing every key; ``parse_config_text`` inverts it."""
    return "".join(f"{k} = {_format(cfg.values[k])}\n" for k in SCHEMA)
