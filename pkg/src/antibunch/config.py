"""Run configuration: a JSON document mirroring :class:`RunConfig`."""

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional

from .errors import ConfigError, ParameterError
from .streams import DetectorModel, SourceConfig

FORMAT_VERSION = 1
SCENARIOS = ("fock_sweep", "simulate", "analyze", "fig2", "fig3", "fig4", "scaling", "path_ent")
REPRODUCE_SCENARIOS = ("fig2", "fig3", "fig4", "scaling", "path_ent")
FIT_KINDS = ("dip", "peak", "none")


@dataclass(frozen=True)
class AnalysisConfig:
    bin_width_ps: int = 200
    max_lag_ps: int = 50_100
    bg_exclusion_ps: int = 25_000
    peak_halfwidth_ps: int = 1_000
    fit: str = "dip"

    def __post_init__(self):
        for name in ("bin_width_ps", "max_lag_ps", "bg_exclusion_ps", "peak_halfwidth_ps"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise ConfigError(f"analysis.{name} must be a non-negative integer, got {value!r}")
        if self.bin_width_ps < 1 or (2 * self.max_lag_ps) % self.bin_width_ps:
            raise ConfigError("analysis.bin_width_ps must be >= 1 and divide 2 * analysis.max_lag_ps")
        if not self.peak_halfwidth_ps < self.bg_exclusion_ps < self.max_lag_ps:
            raise ConfigError("analysis.bg_exclusion_ps must lie between peak_halfwidth_ps and max_lag_ps")
        if self.fit not in FIT_KINDS:
            raise ConfigError(f"analysis.fit must be one of {FIT_KINDS}, got {self.fit!r}")


@dataclass(frozen=True)
class SweepConfig:
    """Grid for the single-mode g2 sweep: alpha magnitudes for each eta."""

    alpha_min: float = 0.0
    alpha_max: float = 0.2
    alpha_steps: int = 41
    etas: tuple = (0.0, 0.0025, 0.01)

    def __post_init__(self):
        object.__setattr__(self, "etas", tuple(float(e) for e in self.etas))
        if not 0 <= self.alpha_min <= self.alpha_max <= 0.3:
            raise ConfigError("sweep alpha range must satisfy 0 <= alpha_min <= alpha_max <= 0.3")
        if not isinstance(self.alpha_steps, int) or self.alpha_steps < 2:
            raise ConfigError("sweep.alpha_steps must be an integer >= 2")
        if any(not 0 <= e <= 0.25 for e in self.etas):
            raise ConfigError("sweep.etas must lie in [0, 0.25]")


@dataclass(frozen=True)
class RunConfig:
    scenario: str
    # a partial dict for reproduce scenarios, merged onto their defaults
    source: Optional[SourceConfig | dict] = None
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    output_dir: str = "out"
    format_version: int = FORMAT_VERSION
    sweep: SweepConfig = field(default_factory=SweepConfig)
    # which fields the document set explicitly; scenarios fill in the rest
    explicit: frozenset = field(default=frozenset(), compare=False, repr=False)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if self.format_version != FORMAT_VERSION:
            raise ConfigError(f"format_version {self.format_version!r} is not supported (expected {FORMAT_VERSION})")
        if self.scenario == "simulate" and self.source is None:
            raise ConfigError("scenario 'simulate' requires the 'source' field")


def _strict(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)} - {"explicit"}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _build(cls, data, where):
    _strict(cls, data, where)
    try:
        return cls(**data)
    except ConfigError:
        raise
    except (ParameterError, TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def source_from_dict(data, base: Optional[SourceConfig] = None, where="source") -> SourceConfig:
    """Build a SourceConfig; keys not given are taken from ``base`` when present."""
    _strict(SourceConfig, data, where)
    data = dict(data)
    if "detector" in data:
        det = data["detector"]
        _strict(DetectorModel, det, f"{where}.detector")
        if base is not None:
            det = {**dataclasses.asdict(base.detector), **det}
        if isinstance(det.get("efficiency"), list):
            det["efficiency"] = tuple(det["efficiency"])
        data["detector"] = _build(DetectorModel, det, f"{where}.detector")
    if base is not None:
        try:
            return base.replace(**data)
        except (ParameterError, TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    if "source_kind" not in data:
        raise ConfigError(f"{where}.source_kind is required")
    return _build(SourceConfig, data, where)


def config_from_dict(data) -> RunConfig:
    _strict(RunConfig, data, "config")
    if "scenario" not in data:
        raise ConfigError("config.scenario is required")
    data = dict(data)
    explicit = frozenset(data)
    if "source" in data:
        src = data["source"]
        if data["scenario"] in REPRODUCE_SCENARIOS:
            # partial override, merged onto the scenario defaults before any run
            _strict(SourceConfig, src, "source")
            if "detector" in src:
                _strict(DetectorModel, src["detector"], "source.detector")
        else:
            data["source"] = source_from_dict(src)
    if "analysis" in data:
        data["analysis"] = _build(AnalysisConfig, data["analysis"], "analysis")
    if "sweep" in data:
        data["sweep"] = _build(SweepConfig, data["sweep"], "sweep")
    data["explicit"] = explicit
    try:
        return RunConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data)


def source_to_dict(source: SourceConfig) -> dict:
    out = dataclasses.asdict(source)
    out["detector"]["efficiency"] = list(out["detector"]["efficiency"])
    return out
