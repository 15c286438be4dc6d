"""Run configuration: INI parsing and validation.

Keys before the first section header belong to ``[run]``.  Unknown sections or
keys are rejected.
"""

from __future__ import annotations

import configparser
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

STUDIES = ("freq-h", "freq-p", "time-h", "time-p", "scatter")
SOLVERS = ("monolithic", "schur")
WINDOWS = ("carrier", "time")
BUILTIN_MESHES = ("hexagon", "pentagon")
MAX_DEGREE = 5


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class IncidentConfig:
    amplitude: float = 3.0
    frequency: float = 88.0
    width: float = 0.3
    direction: tuple[float, float] = (1.0, 5.0)
    window: str = "carrier"
    delay: float | None = None  # None: smallest delay keeping the wave off the scatterer at t=0


@dataclass(frozen=True)
class RunConfig:
    mesh: str
    study: str
    degree: int = 1
    levels: int = 4
    refinements: int = 0
    s: complex = 2.8j
    seed: int = 20240101
    samples: int = 25
    solver: str = "monolithic"
    oversampling: int = 1
    scheme: str = "bdf2"
    dt: float = 3.75e-2
    t_end: float = 1.5
    material: str = "benchmark"
    rho_fluid: float = 1.0
    sound_speed: float = 1.0
    constants: dict = field(default_factory=dict)
    incident: IncidentConfig = field(default_factory=IncidentConfig)
    output: str = "."
    snapshot_times: tuple[float, ...] = ()
    grid: int = 41
    grid_margin: float = 0.5

    def to_dict(self) -> dict:
        d = asdict(self)
        d["s"] = _format_complex(self.s)
        return d

    def mesh_path(self) -> Path:
        if self.mesh in BUILTIN_MESHES:
            return Path(__file__).parent / "data" / f"{self.mesh}.msh"
        return Path(self.mesh)


# -- parsing helpers ---------------------------------------------------------------------


def parse_complex(text: str) -> complex:
    t = str(text).strip().lower().replace(" ", "").replace("i", "j")
    try:
        return complex(t)
    except ValueError:
        raise ConfigError(f"invalid complex number {text!r}") from None


def _format_complex(z: complex) -> str:
    return f"{z.real:g}{z.imag:+g}i"


def _floats(text: str) -> tuple[float, ...]:
    parts = [p for p in str(text).replace(",", " ").split() if p]
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"invalid list of numbers {text!r}") from None


_SCHEMA = {
    "run": {
        "mesh": str, "study": str, "degree": int, "levels": int, "refinements": int,
        "s": parse_complex, "seed": int, "samples": int, "solver": str, "oversampling": int,
    },
    "time": {"scheme": str, "dt": float, "t_end": float},
    "material": {
        "preset": str, "rho_fluid": float, "sound_speed": float, "rho_solid": float,
        "lame_lambda": float, "lame_mu": float, "zeta": float, "kappa": float, "eta": float,
    },
    "incident": {
        "amplitude": float, "frequency": float, "width": float, "direction": _floats,
        "window": str, "delay": float,
    },
    "output": {"directory": str, "snapshot_times": _floats, "grid": int, "grid_margin": float},
}

_CONSTANT_KEYS = ("rho_solid", "lame_lambda", "lame_mu", "zeta", "kappa", "eta")


def parse_config_text(text: str, base_dir: Path | None = None) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, strict=True)
    cp.optionxform = str
    try:
        cp.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None
    values: dict[str, dict] = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            try:
                values.setdefault(section, {})[key] = _SCHEMA[section][key](raw)
            except ConfigError:
                raise
            except ValueError:
                raise ConfigError(f"invalid value {raw!r} for {section}.{key}") from None
    run = values.get("run", {})
    if "mesh" not in run:
        raise ConfigError("missing required key 'mesh'")
    if "study" not in run:
        raise ConfigError("missing required key 'study'")
    mesh = run.pop("mesh")
    if mesh not in BUILTIN_MESHES and base_dir is not None and not Path(mesh).is_absolute():
        mesh = str((base_dir / mesh).resolve())
    mat = values.get("material", {})
    constants = {k: mat.pop(k) for k in _CONSTANT_KEYS if k in mat}
    inc = values.get("incident", {})
    out = values.get("output", {})
    cfg = RunConfig(
        mesh=mesh,
        **run,
        **values.get("time", {}),
        material=mat.get("preset", "benchmark"),
        rho_fluid=mat.get("rho_fluid", 1.0),
        sound_speed=mat.get("sound_speed", 1.0),
        constants=constants,
        incident=IncidentConfig(**inc),
        output=out.get("directory", "."),
        snapshot_times=tuple(out.get("snapshot_times", ())),
        grid=out.get("grid", 41),
        grid_margin=out.get("grid_margin", 0.5),
    )
    validate(cfg)
    return cfg


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"configuration file not found: {path}")
    cfg = parse_config_text(path.read_text(encoding="utf-8"), base_dir=path.parent)
    for key, val in cfg.to_dict().items():
        log.info("config %s = %s", key, val)
    return cfg


def validate(cfg: RunConfig) -> None:
    from .fem_assembly import MATERIAL_PRESETS
    from .cq import SCHEMES

    def need(cond, msg):
        if not cond:
            raise ConfigError(msg)

    need(cfg.study in STUDIES, f"unknown study {cfg.study!r} (expected one of {', '.join(STUDIES)})")
    need(cfg.mesh in BUILTIN_MESHES or cfg.mesh_path().is_file(), f"mesh not found: {cfg.mesh}")
    need(1 <= cfg.degree <= MAX_DEGREE, f"degree must be in 1..{MAX_DEGREE}")
    need(cfg.levels >= (1 if cfg.study == "scatter" else 2), "levels must be >= 2 for convergence studies")
    need(cfg.refinements >= 0, "refinements must be >= 0")
    if cfg.study.endswith("-p"):
        need(cfg.degree + cfg.levels - 1 <= MAX_DEGREE,
             f"p-refinement would exceed degree {MAX_DEGREE}")
    need(np.isfinite(cfg.s) and cfg.s.real >= 0 and cfg.s != 0, "s must be nonzero with Re s >= 0")
    need(cfg.seed >= 0, "seed must be nonnegative")
    need(cfg.samples >= 1, "samples must be positive")
    need(cfg.solver in SOLVERS, f"solver must be one of {', '.join(SOLVERS)}")
    need(cfg.oversampling >= 1, "oversampling must be >= 1")
    need(cfg.scheme.lower() in SCHEMES, f"unknown scheme {cfg.scheme!r}")
    need(cfg.dt > 0 and np.isfinite(cfg.dt), "dt must be positive")
    need(cfg.t_end > 0 and np.isfinite(cfg.t_end), "t_end must be positive")
    need(cfg.material in MATERIAL_PRESETS, f"unknown material preset {cfg.material!r}")
    need(cfg.rho_fluid >= 0, "rho_fluid must be nonnegative")
    need(cfg.sound_speed > 0, "sound_speed must be positive")
    for key in ("rho_solid", "lame_mu", "kappa"):
        if key in cfg.constants:
            need(cfg.constants[key] > 0, f"{key} must be positive")
    inc = cfg.incident
    need(len(inc.direction) == 2 and np.hypot(*inc.direction) > 0, "direction needs two components, not both zero")
    need(inc.frequency > 0 and inc.width > 0, "incident frequency and width must be positive")
    need(inc.window in WINDOWS, f"window must be one of {', '.join(WINDOWS)}")
    need(inc.delay is None or inc.delay >= 0, "delay must be nonnegative")
    need(all(0 <= t <= cfg.t_end for t in cfg.snapshot_times), "snapshot times must lie in [0, t_end]")
    need(cfg.grid >= 2, "grid must have at least 2 points per axis")
    need(cfg.grid_margin >= 0, "grid_margin must be nonnegative")
