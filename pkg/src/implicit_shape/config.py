"""Flat "key = value" run configuration with named built-in functions."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .costs import Annulus, Circle, Constant

BUILTIN_G = {"circle": (Circle, 3), "annulus": (Annulus, 4)}


class ConfigError(ValueError):
    pass


def _floats(text, n=None, what="value"):
    try:
        vals = tuple(float(t) for t in text.split())
    except ValueError:
        raise ConfigError(f"expected numbers for {what}, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise ConfigError(f"{what} needs {n} numbers, got {len(vals)}")
    return vals


@dataclass
class RunConfig:
    mesh: str = "structured 80 80"
    rect: str = "-1 1 -1 1"
    pattern: str = "diagonal"
    u_degree: int = 1
    source: str = "constant -4"
    target: str = "constant 1"
    epsilon: float = 1e-4
    tol: float = 1e-6
    dt: float = 1e-3
    scheme: str = "euler"
    variation: str = "consistent"
    period_term: bool = True
    direction: str = "adjoint"
    gamma: str = "inf_norm"
    fallback: str = "none"
    max_iter: int = 200
    initial_g: str = "circle 0.2 0.2 0.5"
    initial_u: str = "zero"
    constraint_negative: str = "none"
    constraint_zero: str = "none"
    pin_point: str = "none"
    output_dir: str = "output"
    seed: int = 0
    figures: bool = True

    def __post_init__(self):
        self.validate()

    # parsing -----------------------------------------------------------

    @classmethod
    def parse(cls, text, origin="<config>"):
        kinds = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            where = f"{origin}:{lineno}"
            if "=" not in line:
                raise ConfigError(f"{where}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in kinds:
                raise ConfigError(f"{where}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"{where}: duplicate key {key!r}")
            try:
                values[key] = _convert(kinds[key], value)
            except ConfigError as exc:
                raise ConfigError(f"{where}: {key}: {exc}") from None
        try:
            return cls(**values)
        except ConfigError as exc:
            raise ConfigError(f"{origin}: {exc}") from None

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.parse(fh.read(), origin=str(path))

    def with_overrides(self, pairs):
        """Apply "key=value" strings on top of this config."""
        text = self.serialize() + "\n".join(pairs) + "\n"
        base = {f.name for f in fields(self)}
        merged = {}
        for line in text.splitlines():
            if "=" in line and not line.lstrip().startswith("#"):
                k = line.split("=", 1)[0].strip()
                if k not in base:
                    raise ConfigError(f"--set: unknown key {k!r}")
                merged[k] = line
        return RunConfig.parse("\n".join(merged.values()), origin="--set")

    def serialize(self):
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            out.append(f"{f.name} = {v}")
        return "\n".join(out) + "\n"

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.serialize())

    # validation and construction ---------------------------------------

    def validate(self):
        for name in ("epsilon", "tol", "dt"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.max_iter < 0:
            raise ConfigError("max_iter must be non-negative")
        if self.u_degree not in (1, 3):
            raise ConfigError("u_degree must be 1 or 3")
        if self.scheme not in ("euler", "rk4"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.variation not in ("consistent", "backward_euler"):
            raise ConfigError(f"unknown variation {self.variation!r}")
        if self.direction not in ("adjoint", "gradient"):
            raise ConfigError(f"unknown direction {self.direction!r}")
        if self.fallback not in ("none", "control"):
            raise ConfigError(f"unknown fallback {self.fallback!r}")
        if self.pattern not in ("diagonal", "crossed"):
            raise ConfigError(f"unknown pattern {self.pattern!r}")
        self.gamma_value()
        self.mesh_spec()
        x0, x1, y0, y1 = _floats(self.rect, 4, "rect")
        if not (x1 > x0 and y1 > y0):
            raise ConfigError("rect must be 'xmin xmax ymin ymax' with positive extent")
        self.source_value()
        self.target_function()
        self.initial_g_spec()
        if self.initial_u != "zero" and not self.initial_u.startswith("file "):
            raise ConfigError("initial_u must be 'zero' or 'file PATH'")
        self.box(self.constraint_negative, "constraint_negative")
        self.segment()
        if self.pin_point != "none":
            _floats(self.pin_point, 2, "pin_point")

    def gamma_value(self):
        if self.gamma in ("inf_norm", "one"):
            return self.gamma
        (g,) = _floats(self.gamma, 1, "gamma")
        if g <= 0:
            raise ConfigError("gamma must be positive")
        return g

    def mesh_spec(self):
        parts = self.mesh.split()
        if parts and parts[0] == "structured" and len(parts) == 3:
            try:
                nx, ny = int(parts[1]), int(parts[2])
            except ValueError:
                raise ConfigError("mesh: structured needs two integers") from None
            if nx < 1 or ny < 1:
                raise ConfigError("mesh: counts must be positive")
            return ("structured", nx, ny)
        if parts and parts[0] == "file" and len(parts) == 2:
            return ("file", parts[1])
        raise ConfigError("mesh must be 'structured NX NY' or 'file PATH'")

    @property
    def rect_tuple(self):
        return _floats(self.rect, 4, "rect")

    def source_value(self):
        parts = self.source.split()
        if len(parts) == 2 and parts[0] == "constant":
            return _floats(parts[1], 1, "source")[0]
        raise ConfigError("source must be 'constant VALUE'")

    def target_function(self):
        parts = self.target.split()
        if len(parts) == 2 and parts[0] == "constant":
            return Constant(_floats(parts[1], 1, "target")[0])
        raise ConfigError("target must be 'constant VALUE'")

    def initial_g_spec(self):
        parts = self.initial_g.split()
        if not parts:
            raise ConfigError("initial_g is empty")
        if parts[0] == "file":
            if len(parts) != 2:
                raise ConfigError("initial_g: 'file PATH'")
            return ("file", parts[1])
        if parts[0] not in BUILTIN_G:
            raise ConfigError(f"initial_g: unknown built-in {parts[0]!r}")
        kind, n = BUILTIN_G[parts[0]]
        return ("builtin", kind(*_floats(" ".join(parts[1:]), n, parts[0])))

    @staticmethod
    def box(text, name):
        if text == "none":
            return None
        parts = text.split()
        if parts[0] != "box":
            raise ConfigError(f"{name} must be 'none' or 'box XMIN XMAX YMIN YMAX'")
        return _floats(" ".join(parts[1:]), 4, name)

    def segment(self):
        if self.constraint_zero == "none":
            return None
        parts = self.constraint_zero.split()
        if parts[0] != "segment":
            raise ConfigError("constraint_zero must be 'none' or 'segment X0 Y0 X1 Y1'")
        return _floats(" ".join(parts[1:]), 4, "constraint_zero")


def _convert(kind, value):
    if kind in (bool, "bool"):
        low = value.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ConfigError(f"expected a boolean, got {value!r}")
    if kind in (int, "int"):
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"expected an integer, got {value!r}") from None
    if kind in (float, "float"):
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"expected a number, got {value!r}") from None
    if not value:
        raise ConfigError("empty value")
    return " ".join(value.split())


EXAMPLES = {
    "1a": {"initial_g": "circle 0.2 0.2 0.5"},
    "1b": {"initial_g": "annulus 0.2 0.2 0.4 0.2"},
}

# reference bands for the summary: (t2 of the first row), final t2, J drop factor
REFERENCE = {
    "1a": {"t2_initial": (1.0, 5.0), "t2_final_max": 5e-3, "drop_min": 100.0,
           "components": (1, 1), "reference_J": (23898.4, 21.133)},
    "1b": {"t2_initial": (1.0, 8.0), "t2_final_max": 5e-3, "drop_min": 100.0,
           "components": (2, 1), "reference_J": (37002.4, 26.3898)},
}


def example_config(name, overrides=()):
    if name not in EXAMPLES:
        raise ConfigError(f"unknown example {name!r}; choose from {sorted(EXAMPLES)}")
    base = RunConfig(output_dir=f"output/example_{name}", **EXAMPLES[name])
    return base.with_overrides(list(overrides)) if overrides else base


def nodes_in_box(nodes, box, pad=1e-12):
    x0, x1, y0, y1 = box
    return np.flatnonzero((nodes[:, 0] >= x0 - pad) & (nodes[:, 0] <= x1 + pad)
                          & (nodes[:, 1] >= y0 - pad) & (nodes[:, 1] <= y1 + pad))


def nodes_on_segment(nodes, seg, tol=1e-9):
    a = np.array(seg[:2])
    b = np.array(seg[2:])
    d = b - a
    s = np.clip((nodes - a) @ d / (d @ d), 0.0, 1.0)
    dist = np.hypot(*(nodes - (a + s[:, None] * d)).T)
    return np.flatnonzero(dist <= tol)
