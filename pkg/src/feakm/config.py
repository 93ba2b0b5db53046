"""YAML run configuration with dotted-path validation.

Every key has a default, so an empty file is a valid configuration. Unknown
keys are rejected. Errors name the offending key, e.g. ``keypoint.delta``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .align import AlignConfig
from .geometry import GridSpec, PoseNoiseSpec
from .pipeline import DecoderParams, FusionParams, KeypointParams, MatcherParams, PipelineConfig
from .scene import SceneConfig
from .sweep import DEFAULT_NOISE_LEVELS, SweepConfig, ablation_toggle_sets, default_toggle_sets


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        sep = " " if message.startswith("must") else ": "
        super().__init__(f"{path}{sep}{message}")
        self.path = path


@dataclass(frozen=True)
class SweepSection:
    noise_levels: tuple = tuple(DEFAULT_NOISE_LEVELS)
    trials_per_level: int = 30
    toggles: str = "default"
    seed: int = 0


@dataclass(frozen=True)
class NoiseSection:
    sigma_t: float = 0.0
    sigma_r: float = 0.0


@dataclass(frozen=True)
class MatchSection:
    # extra offset added to the collaborator's reported pose: dx (m), dy (m), dyaw (deg)
    corruption: tuple = (0.0, 0.0, 0.0)
    agent: int = 1


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    output_dir: str = "feakm_out"
    workers: int = 0
    plot: bool = False


@dataclass(frozen=True)
class Toggle:
    correction: bool = True
    confidence_map: bool = True
    multiscale: bool = True


@dataclass(frozen=True)
class RunConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    scene: SceneConfig = field(default_factory=SceneConfig)
    noise: NoiseSection = field(default_factory=NoiseSection)
    keypoint: KeypointParams = field(default_factory=KeypointParams)
    matcher: MatcherParams = field(default_factory=MatcherParams)
    align: AlignConfig = field(default_factory=AlignConfig)
    fusion: FusionParams = field(default_factory=FusionParams)
    decoder: DecoderParams = field(default_factory=DecoderParams)
    sweep: SweepSection = field(default_factory=SweepSection)
    match: MatchSection = field(default_factory=MatchSection)
    run: RunSection = field(default_factory=RunSection)
    toggle: Toggle = field(default_factory=Toggle)

    def scene_config(self) -> SceneConfig:
        return replace(
            self.scene,
            grid=self.grid,
            noise=PoseNoiseSpec(self.noise.sigma_t, self.noise.sigma_r, self.run.seed),
        )

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(self.keypoint, self.matcher, self.align, self.fusion, self.decoder)

    def toggle_sets(self):
        k = self.matcher.k_pairs
        if self.sweep.toggles == "ablation":
            return ablation_toggle_sets(k)
        return default_toggle_sets(k, self.toggle.confidence_map, self.toggle.multiscale, self.toggle.correction)

    def sweep_config(self) -> SweepConfig:
        return SweepConfig(
            noise_levels=tuple(tuple(lv) for lv in self.sweep.noise_levels),
            trials_per_level=self.sweep.trials_per_level,
            scene=replace(self.scene_config()),
            pipeline=self.pipeline_config(),
            toggle_sets=tuple(self.toggle_sets()),
            seed=self.sweep.seed,
        )

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            section = getattr(self, f.name)
            d = {}
            for sf in dataclasses.fields(section):
                if f.name == "scene" and sf.name in ("grid", "noise"):
                    continue
                v = getattr(section, sf.name)
                d[sf.name] = _plain(v)
            out[f.name] = d
        return out


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


# per-key checks beyond type coercion: path -> (predicate, message)
CHECKS = {
    "keypoint.delta": (lambda v: 0.0 <= v <= 1.0, "must lie in [0, 1]"),
    "keypoint.max_points": (lambda v: v >= 1, "must be at least 1"),
    "keypoint.nms_radius": (lambda v: v >= 0, "must be non-negative"),
    "keypoint.coarse_factor": (lambda v: v >= 1, "must be at least 1"),
    "matcher.k_pairs": (lambda v: v >= 2, "must be at least 2"),
    "matcher.temperature": (lambda v: v > 0, "must be positive"),
    "matcher.sinkhorn_iters": (lambda v: v >= 1, "must be at least 1"),
    "matcher.confidence_floor": (lambda v: 0.0 <= v <= 1.0, "must lie in [0, 1]"),
    "matcher.attention_rounds": (lambda v: v >= 0, "must be non-negative"),
    "align.tau_t": (lambda v: v >= 0, "must be non-negative"),
    "align.tau_r_deg": (lambda v: v >= 0, "must be non-negative"),
    "align.ransac_iterations": (lambda v: v >= 1, "must be at least 1"),
    "align.inlier_threshold": (lambda v: v > 0, "must be positive"),
    "fusion.levels": (lambda v: v >= 1, "must be at least 1"),
    "fusion.combine": (lambda v: v in ("mean", "concat"), "must be 'mean' or 'concat'"),
    "decoder.peak_threshold": (lambda v: 0.0 <= v <= 1.0, "must lie in [0, 1]"),
    "noise.sigma_t": (lambda v: v >= 0, "must be non-negative"),
    "noise.sigma_r": (lambda v: v >= 0, "must be non-negative"),
    "sweep.noise_levels": (lambda v: len(v) > 0, "must be non-empty"),
    "sweep.trials_per_level": (lambda v: v >= 1, "must be at least 1"),
    "sweep.toggles": (lambda v: v in ("default", "ablation"), "must be 'default' or 'ablation'"),
    "run.workers": (lambda v: v >= 0, "must be non-negative (0 = all cores)"),
    "scene.n_agents": (lambda v: v >= 2, "must be at least 2"),
    "scene.channels": (lambda v: v >= 2 and v % 2 == 0, "must be an even number >= 2"),
}


def _coerce(path: str, value, default):
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError("expected a boolean")
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or int(value) != value:
                raise TypeError("expected an integer")
            return int(value)
        if isinstance(default, float):
            if isinstance(value, bool):
                raise TypeError("expected a number")
            return float(value)
        if isinstance(default, str):
            if not isinstance(value, str):
                raise TypeError("expected a string")
            return value
        if isinstance(default, tuple):
            if not isinstance(value, (list, tuple)):
                raise TypeError("expected a list")
            if default and isinstance(default[0], tuple):
                return tuple(tuple(float(x) for x in item) for item in value)
            if default and len(value) != len(default):
                raise TypeError(f"expected {len(default)} entries")
            return tuple(float(x) if isinstance(default[0], float) else int(x) for x in value)
        if default is None:
            return None if value is None else int(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from None
    raise ConfigError(path, "unsupported value")


def _build_section(name: str, cls, overrides: dict, base):
    if not isinstance(overrides, dict):
        raise ConfigError(name, "expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    if name == "scene":
        names -= {"grid", "noise"}
    kwargs = {}
    for key, value in overrides.items():
        path = f"{name}.{key}"
        if key not in names:
            raise ConfigError(path, "unknown key")
        v = _coerce(path, value, getattr(base, key))
        if path in CHECKS:
            ok, msg = CHECKS[path]
            if not ok(v):
                raise ConfigError(path, f"{msg} (got {value!r})")
        if name == "sweep" and key == "noise_levels":
            for lv in v:
                if len(lv) != 2 or lv[0] < 0 or lv[1] < 0:
                    raise ConfigError(path, "each level must be a non-negative [sigma_t, sigma_r] pair")
        kwargs[key] = v
    try:
        return replace(base, **kwargs)
    except ValueError as exc:
        raise ConfigError(name, str(exc)) from None


def _read_if_path(source) -> str:
    if isinstance(source, Path):
        return source.read_text()
    try:
        p = Path(source)
        if "\n" not in source and p.is_file():
            return p.read_text()
    except OSError:
        pass
    return str(source)


def load_config(source=None) -> RunConfig:
    """Load from a path, a YAML string, a mapping, or None (defaults)."""
    if source is None:
        data = {}
    elif isinstance(source, dict):
        data = source
    else:
        text = _read_if_path(source)
        data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ConfigError("<root>", "expected a mapping of sections")
    base = RunConfig()
    sections = {}
    for key in data:
        if key not in {f.name for f in dataclasses.fields(RunConfig)}:
            raise ConfigError(key, "unknown section")
    for f in dataclasses.fields(RunConfig):
        if f.name in data:
            sections[f.name] = _build_section(f.name, type(getattr(base, f.name)), data[f.name] or {}, getattr(base, f.name))
    cfg = replace(base, **sections)
    g = cfg.grid
    for lvl in range(1, cfg.fusion.levels + 1):
        fct = 2 ** (lvl - 1)
        if g.H % fct or g.W % fct:
            raise ConfigError("fusion.levels", f"grid {g.H}x{g.W} is not divisible by {fct} at level {lvl}")
    if not 0 < cfg.match.agent < cfg.scene.n_agents:
        raise ConfigError("match.agent", "must index a collaborator (1 .. n_agents-1)")
    return cfg


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
