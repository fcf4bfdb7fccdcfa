"""Experiment configuration files (TOML) with field-level validation.

Keys carry their units (``range_mm``, ``tol_mm``, ``rot_range_deg``).  Every
seed must be given explicitly.  A parsed config converts back to a plain
dict, which is what the run manifests store, so a manifest can be read back
as a config.
"""
from __future__ import annotations

import dataclasses
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .exceptions import ValidationError
from .react import ReactConfig
from .recon import ReconConfig
from .solver import DEFAULT_ROT_SCALE

REQUIRED = object()


@dataclass
class AcquisitionBlock:
    type: str = "epi"  # epi, spiral or file
    ny: int = 192
    nx: int = 160
    spacing_mm: float = 1.0
    n_coils: int = 8
    phantom_seed: int = REQUIRED
    n_shots: int = 24
    lines_per_shot: int = 8
    fov_mm: float = 192.0
    res_mm: float = 1.0
    n_interleaves: int = 30
    samples_per_interleaf: int = 2000
    path: str = ""

    def check(self):
        _choice("acquisition.type", self.type, ("epi", "spiral", "file"))
        _positive("acquisition.ny", self.ny)
        _positive("acquisition.nx", self.nx)
        _positive("acquisition.spacing_mm", self.spacing_mm)
        _positive("acquisition.n_coils", self.n_coils)
        if self.type == "epi" and self.n_shots * self.lines_per_shot != self.ny:
            raise ValidationError(
                f"acquisition.lines_per_shot: {self.n_shots} shots x {self.lines_per_shot} "
                f"lines must equal ny = {self.ny}")
        if self.type == "spiral":
            _positive("acquisition.fov_mm", self.fov_mm)
            _positive("acquisition.res_mm", self.res_mm)
            _positive("acquisition.n_interleaves", self.n_interleaves)
        if self.type == "file" and not self.path:
            raise ValidationError("acquisition.path: required for file trajectories")


@dataclass
class MotionBlock:
    range_mm: float = 2.0
    rot_range_deg: float = 0.0
    seed: int = REQUIRED

    def check(self):
        _nonneg("motion.range_mm", self.range_mm)
        _nonneg("motion.rot_range_deg", self.rot_range_deg)


@dataclass
class NoiseBlock:
    target_snr: float = 3.0  # "inf" disables noise
    seed: int = REQUIRED

    def check(self):
        if not self.target_snr > 0:
            raise ValidationError("noise.target_snr: must be positive (or \"inf\")")


@dataclass
class ReactBlock:
    preset: str = ""
    variant: str = "nesterov"
    n_iters: int = 3
    group_schedule: list = field(default_factory=list)
    n_ramp: int = 3
    sweep_order: list = field(default_factory=lambda: ["LR", "AP"])
    sweep_step_mm: float = 1.0
    sweep_range_mm: object = None
    sweep_every_subproblem: bool = True
    range_mm: object = 2.0  # one value or (LR, AP, SI)
    rot_range_deg: float = 2.0
    tol_mm: float = 0.01
    rot_scale_mm_per_rad: float = DEFAULT_ROT_SCALE
    max_evals: int = 200
    dofs: list = field(default_factory=lambda: [0, 1])
    seed: int = REQUIRED

    def check(self):
        if self.preset:
            _choice("react.preset", self.preset, tuple(PRESETS))
        try:
            self.to_react_config(ReconConfig()).validate()
        except ValidationError as exc:
            raise ValidationError(f"react.{exc}") from None

    def to_react_config(self, recon):
        return ReactConfig(
            variant=self.variant, n_iters=self.n_iters, group_schedule=tuple(self.group_schedule),
            n_ramp=self.n_ramp, sweep_order=tuple(self.sweep_order), sweep_step_mm=self.sweep_step_mm,
            sweep_range_mm=self.sweep_range_mm, sweep_every_subproblem=self.sweep_every_subproblem,
            range_mm=self.range_mm, rot_range_deg=self.rot_range_deg, tol_mm=self.tol_mm,
            rot_scale=self.rot_scale_mm_per_rad, max_evals=self.max_evals, dofs=tuple(self.dofs),
            seed=self.seed, recon=recon)


@dataclass
class ReconBlock:
    oversamp: float = 1.15
    kernel_width: float = 4.0
    kernel: str = "kb"
    density: str = "auto"
    out_of_range: str = "clamp"

    def check(self):
        try:
            self.to_recon_config()
        except ValidationError as exc:
            raise ValidationError(f"recon: {exc}") from None

    def to_recon_config(self, workers=None):
        return ReconConfig(oversamp=self.oversamp, kernel_width=self.kernel_width, kernel=self.kernel,
                           density=self.density, out_of_range=self.out_of_range, workers=workers)


@dataclass
class CostmapBlock:
    grid: int = 64
    half_range_mm: float = 5.0
    axes: list = field(default_factory=lambda: ["LR", "AP"])

    def check(self):
        if int(self.grid) != self.grid or self.grid < 2:
            raise ValidationError("costmap.grid: must be an integer >= 2")
        _positive("costmap.half_range_mm", self.half_range_mm)
        if len(self.axes) != 2:
            raise ValidationError("costmap.axes: exactly two translation axes")


#: Named rows of the parameter table; values override the react block defaults.
PRESETS = {
    "numerical_study": dict(variant="nesterov", n_iters=3, n_ramp=3, tol_mm=0.01,
                            sweep_order=["LR", "AP"], sweep_step_mm=1.0, range_mm=2.0, dofs=[0, 1]),
    "react": dict(variant="grouped", n_iters=6, n_ramp=0, tol_mm=0.1,
                  group_schedule=[32, 16, 8, 4, 2, 1], sweep_order=[], range_mm=2.0,
                  rot_range_deg=2.0, dofs=[0, 1, 2, 3, 4, 5]),
    "react_tran": dict(variant="grouped", n_iters=6, n_ramp=0, tol_mm=0.1,
                       group_schedule=[32, 16, 8, 4, 2, 1], sweep_order=[], range_mm=2.0,
                       dofs=[0, 1, 2]),
    "react_noacc": dict(variant="plain_cd", n_iters=2, n_ramp=0, tol_mm=0.1, sweep_order=[],
                        range_mm=2.0, rot_range_deg=2.0, dofs=[0, 1, 2, 3, 4, 5]),
    "sn_react_stage1": dict(variant="nesterov", n_iters=3, n_ramp=3, tol_mm=0.1,
                            sweep_order=["SI", "AP", "LR"], sweep_step_mm=2.0,
                            sweep_range_mm=[5.0, 2.5, 2.5], range_mm=[2.5, 2.5, 5.0],
                            dofs=[0, 1, 2]),
    "sn_react_stage2": dict(variant="grouped", n_iters=6, n_ramp=0, tol_mm=0.1,
                            group_schedule=[32, 16, 8, 4, 2, 1], sweep_order=[],
                            range_mm=2.0, rot_range_deg=2.0, dofs=[0, 1, 2, 3, 4, 5]),
}

BLOCKS = {
    "acquisition": AcquisitionBlock,
    "motion": MotionBlock,
    "noise": NoiseBlock,
    "react": ReactBlock,
    "recon": ReconBlock,
    "costmap": CostmapBlock,
}


@dataclass
class ExperimentConfig:
    acquisition: AcquisitionBlock
    motion: MotionBlock
    noise: NoiseBlock
    react: ReactBlock
    recon: ReconBlock = field(default_factory=ReconBlock)
    costmap: CostmapBlock = field(default_factory=CostmapBlock)
    output_dir: str = "react_out"

    def to_dict(self):
        d = {name: _block_dict(getattr(self, name)) for name in BLOCKS}
        d["output_dir"] = self.output_dir
        return d

    def react_config(self, workers=None):
        return self.react.to_react_config(self.recon.to_recon_config(workers))


def _block_dict(block):
    out = {}
    for f in dataclasses.fields(block):
        v = getattr(block, f.name)
        if isinstance(v, float) and math.isinf(v):
            v = "inf"
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def _choice(name, value, options):
    if value not in options:
        raise ValidationError(f"{name}: expected one of {list(options)}, got {value!r}")


def _positive(name, value):
    if not value > 0:
        raise ValidationError(f"{name}: must be positive, got {value!r}")


def _nonneg(name, value):
    if not value >= 0:
        raise ValidationError(f"{name}: must be non-negative, got {value!r}")


def _coerce(name, value, default):
    """Match the type of the field default; ``int`` fields reject fractions."""
    if default is REQUIRED or isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(f"{name}: expected an integer, got {value!r}")
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ValidationError(f"{name}: expected true or false, got {value!r}")
        return value
    if isinstance(default, float):
        if value == "inf":
            return math.inf
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ValidationError(f"{name}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ValidationError(f"{name}: expected a list, got {value!r}")
        return value
    return value


def _parse_block(name, cls, raw):
    if not isinstance(raw, dict):
        raise ValidationError(f"{name}: expected a table")
    raw = dict(raw)
    if cls is ReactBlock and raw.get("preset"):
        preset = raw["preset"]
        _choice("react.preset", preset, tuple(PRESETS))
        raw = {**PRESETS[preset], **raw}
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(fields))
    if unknown:
        raise ValidationError(f"{name}.{unknown[0]}: unknown key")
    kwargs = {}
    for fname, f in fields.items():
        if f.default is not dataclasses.MISSING:
            default = f.default
        elif f.default_factory is not dataclasses.MISSING:
            default = f.default_factory()
        else:
            default = REQUIRED
        if fname not in raw:
            if default is REQUIRED:
                raise ValidationError(f"{name}.{fname}: required field is missing")
            continue
        value = raw[fname]
        if default is None or (cls is ReactBlock and fname == "range_mm"):
            kwargs[fname] = value
        else:
            kwargs[fname] = _coerce(f"{name}.{fname}", value, default)
    block = cls(**kwargs)
    block.check()
    return block


def config_from_dict(d):
    """Build and validate an :class:`ExperimentConfig` from nested dicts."""
    if not isinstance(d, dict):
        raise ValidationError("config must be a table")
    unknown = sorted(set(d) - set(BLOCKS) - {"output_dir"})
    if unknown:
        raise ValidationError(f"{unknown[0]}: unknown section")
    blocks = {}
    for name, cls in BLOCKS.items():
        if name not in d and name in ("acquisition", "motion", "noise", "react"):
            raise ValidationError(f"{name}: required section is missing")
        blocks[name] = _parse_block(name, cls, d.get(name, {}))
    out = d.get("output_dir", "react_out")
    if not isinstance(out, str):
        raise ValidationError("output_dir: expected a string")
    return ExperimentConfig(output_dir=out, **blocks)


def load_config(path):
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"{path}: config file not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    return config_from_dict(raw)
