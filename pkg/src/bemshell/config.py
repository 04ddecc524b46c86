"""Scenario configuration: a flat TOML schema with load tables.

A scenario file fully determines a run: the patch (inline text or a file
path, in the plain-text patch grammar of :mod:`bemshell.nurbs`), the
material, the fluid viscosity, boundary conditions, scheduled loads, the
coupling mode and the integrator/Newton/quadrature/output settings.

Loads carry an activity window [t_on, t_off).  The window may extend to
-inf/+inf; a load whose window ends at t = 0 acts only on the static
pre-solve, which is how a release experiment is written down.
"""

import math
from dataclasses import dataclass

import tomli

from .errors import ConfigError

__all__ = [
    "LoadSpec",
    "ScenarioConfig",
    "format_config",
    "parse_config",
    "read_config",
    "write_config",
]

_MODES = ("fully_implicit", "semi_implicit", "segregated", "dry")
_BC = ("free", "hinged", "clamped")
_LOAD_KINDS = ("body", "surface", "edge", "gravity")
_EDGES = ("umin", "umax", "vmin", "vmax")


@dataclass(frozen=True)
class LoadSpec:
    """One scheduled dead load.

    kind 'gravity' takes the gravitational acceleration as ``vector``
    (m/s^2) and is scaled by the material density at build time; the
    other kinds use force densities directly (N/m^3, N/m^2, N/m).
    """

    kind: str
    vector: tuple
    edge: str = ""
    t_on: float = -math.inf
    t_off: float = math.inf

    def __post_init__(self):
        if self.kind not in _LOAD_KINDS:
            raise ConfigError(
                f"unknown load kind {self.kind!r}; expected one of {_LOAD_KINDS}"
            )
        if self.kind == "edge" and self.edge not in _EDGES:
            raise ConfigError(f"edge load needs edge in {_EDGES}, got {self.edge!r}")
        vec = tuple(float(c) for c in self.vector)
        if len(vec) != 3:
            raise ConfigError("load vector must have 3 components")
        object.__setattr__(self, "vector", vec)
        if not self.t_on < self.t_off:
            raise ConfigError(
                f"load window is empty: t_on={self.t_on}, t_off={self.t_off}"
            )

    def active(self, t):
        return self.t_on <= t < self.t_off


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to reproduce one simulation."""

    name: str = "custom"
    # patch source: exactly one of inline text or a file path
    patch_text: str = ""
    patch_file: str = ""
    patch_degenerate: bool = False
    refine: int = 0
    # material
    E: float = 1.0
    nu: float = 0.0
    rho: float = 1.0
    h: float = 1.0
    # fluid; 0 means no fluid (dry structure)
    eta: float = 0.0
    # boundary conditions per parametric edge
    bc_umin: str = "free"
    bc_umax: str = "free"
    bc_vmin: str = "free"
    bc_vmax: str = "free"
    loads: tuple = ()
    # time integration
    mode: str = "dry"
    dt: float = 0.01
    t_end: float = 1.0
    rho_inf: float = 0.5
    static_presolve: bool = False
    load_steps: int = 4
    # newton
    newton_rel_tol: float = 1e-6
    newton_abs_tol: float = 1e-9
    newton_max_iters: int = 30
    # BEM quadrature
    bem_regular_order: int = 4
    bem_singular_order: int = 12
    bem_near_order: int = 4
    bem_near_factor: float = 2.0
    # observables
    probe: tuple = (1.0, 0.5)
    output_dir: str = ""
    output_cadence: int = 1
    snapshot_every: int = 0

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {_MODES}")
        for edge in _EDGES:
            bc = getattr(self, "bc_" + edge)
            if bc not in _BC:
                raise ConfigError(f"unknown boundary condition {bc!r} on {edge}")
        if bool(self.patch_text) == bool(self.patch_file):
            raise ConfigError("exactly one of patch_text / patch_file is required")
        for quantity in ("E", "rho", "h", "dt", "t_end"):
            if getattr(self, quantity) <= 0.0:
                raise ConfigError(f"{quantity} must be positive")
        if not -1.0 < self.nu < 0.5:
            raise ConfigError(f"nu must lie in (-1, 0.5), got {self.nu}")
        if self.eta < 0.0:
            raise ConfigError("eta must be nonnegative")
        if self.mode != "dry" and self.eta == 0.0:
            raise ConfigError(f"mode {self.mode!r} requires a positive eta")
        if not 0.0 <= self.rho_inf <= 1.0:
            raise ConfigError("rho_inf must lie in [0, 1]")
        if self.refine < 0 or self.load_steps < 1:
            raise ConfigError("refine must be >= 0 and load_steps >= 1")
        if self.output_cadence < 1 or self.snapshot_every < 0:
            raise ConfigError("output_cadence >= 1 and snapshot_every >= 0 required")
        object.__setattr__(self, "probe", tuple(float(c) for c in self.probe))
        if len(self.probe) != 2:
            raise ConfigError("probe must be a parametric (u, v) pair")
        object.__setattr__(self, "loads", tuple(self.loads))
        for load in self.loads:
            for t in (load.t_on, load.t_off):
                if math.isfinite(t) and not 0.0 <= t <= self.t_end:
                    raise ConfigError(
                        f"load schedule time {t} outside [0, {self.t_end}]"
                    )

    @property
    def n_steps(self):
        n = int(round(self.t_end / self.dt))
        if abs(n * self.dt - self.t_end) > 1e-9 * self.t_end:
            raise ConfigError(
                f"t_end = {self.t_end} is not an integer number of steps of {self.dt}"
            )
        return n


# -- parsing -----------------------------------------------------------

_SECTIONS = {
    "material": {"E": "E", "nu": "nu", "rho": "rho", "h": "h"},
    "patch": {
        "text": "patch_text",
        "file": "patch_file",
        "degenerate": "patch_degenerate",
        "refine": "refine",
    },
    "boundary": {e: "bc_" + e for e in _EDGES},
    "newton": {
        "rel_tol": "newton_rel_tol",
        "abs_tol": "newton_abs_tol",
        "max_iters": "newton_max_iters",
    },
    "bem": {
        "regular_order": "bem_regular_order",
        "singular_order": "bem_singular_order",
        "near_order": "bem_near_order",
        "near_factor": "bem_near_factor",
    },
    "output": {
        "directory": "output_dir",
        "cadence": "output_cadence",
        "snapshot_every": "snapshot_every",
    },
}

_TOP_LEVEL = (
    "name", "mode", "dt", "t_end", "rho_inf", "eta",
    "static_presolve", "load_steps", "probe",
)


def parse_config(text):
    """Parse TOML text into a validated ScenarioConfig."""
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"invalid config syntax: {exc}") from None
    kwargs = {}
    for key in list(data):
        if key in _TOP_LEVEL:
            kwargs[key] = data.pop(key)
    for section, mapping in _SECTIONS.items():
        table = data.pop(section, {})
        if not isinstance(table, dict):
            raise ConfigError(f"[{section}] must be a table")
        for key, value in table.items():
            if key not in mapping:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            kwargs[mapping[key]] = value
    loads = data.pop("load", [])
    if data:
        raise ConfigError(f"unknown config keys: {sorted(data)}")
    specs = []
    for entry in loads:
        if not isinstance(entry, dict):
            raise ConfigError("[[load]] entries must be tables")
        try:
            specs.append(LoadSpec(**entry))
        except TypeError as exc:
            raise ConfigError(f"bad load field: {exc}") from None
    kwargs["loads"] = tuple(specs)
    try:
        return ScenarioConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad config field: {exc}") from None


def read_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


# -- serialization -----------------------------------------------------


def _toml_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(float(value)) if isinstance(value, float) else repr(value)
    if isinstance(value, str):
        if "\n" in value:
            return '"""\n' + value.replace("\\", "\\\\").replace('"""', "") + '"""'
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, (tuple, list)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise ConfigError(f"cannot serialize {type(value).__name__} to TOML")


def format_config(config):
    """Serialize to TOML; ``parse_config`` of the result is identical."""
    lines = []
    for key in _TOP_LEVEL:
        value = getattr(config, key)
        if key == "eta" and value == 0.0:
            continue
        lines.append(f"{key} = {_toml_value(value)}")
    for section, mapping in _SECTIONS.items():
        body = []
        for key, attr in mapping.items():
            value = getattr(config, attr)
            default = ScenarioConfig.__dataclass_fields__[attr].default
            if value != default:
                body.append(f"{key} = {_toml_value(value)}")
        if body:
            lines.append(f"\n[{section}]")
            lines.extend(body)
    for load in config.loads:
        lines.append("\n[[load]]")
        lines.append(f"kind = {_toml_value(load.kind)}")
        lines.append(f"vector = {_toml_value(load.vector)}")
        if load.edge:
            lines.append(f"edge = {_toml_value(load.edge)}")
        if math.isfinite(load.t_on):
            lines.append(f"t_on = {_toml_value(load.t_on)}")
        if math.isfinite(load.t_off):
            lines.append(f"t_off = {_toml_value(load.t_off)}")
    return "\n".join(lines) + "\n"


def write_config(path, config):
    with open(path, "w") as fh:
        fh.write(format_config(config))
