"""Pipeline configuration read from a YAML document.

Every random stream derives from the single top-level ``seed``; the
population and training sections therefore do not accept their own seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from .errors import ConfigError
from .evaluation import CVSettings
from .modal import Band
from .neurofuzzy import TrainConfig
from .synthdata import PopulationConfig

BAND_PRESETS = ("auto", "reference")


def _int(name, v, minimum=None):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(name, f"must be an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(name, f"must be >= {minimum}, got {v}")
    return v


def _parse_bands(value):
    if isinstance(value, str):
        if value not in BAND_PRESETS:
            raise ConfigError("bands", f"must be one of {BAND_PRESETS} or a list of bands, got {value!r}")
        return value
    if not isinstance(value, (list, tuple)):
        raise ConfigError("bands", f"must be a preset name or a list, got {type(value).__name__}")
    out = []
    for i, item in enumerate(value):
        try:
            out.append(item if isinstance(item, Band) else Band.from_dict(item))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bands[{i}]", f"need lo_hz and hi_hz with 0 < lo <= hi ({exc})") from exc
    return tuple(out)


def _parse_cv(value):
    if value == "loo":
        return "loo"
    if isinstance(value, dict) and set(value) == {"kfold"}:
        return ("kfold", _int("cv.kfold", value["kfold"], 2))
    if isinstance(value, tuple) and len(value) == 2 and value[0] == "kfold":
        return ("kfold", _int("cv.kfold", value[1], 2))
    raise ConfigError("cv", f"must be 'loo' or {{kfold: k}}, got {value!r}")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    population: PopulationConfig = field(default_factory=PopulationConfig)
    bands: object = "auto"
    band_width_pct: float = 6.0
    pca_components: int = 10
    rule_range: tuple = (1, 10)
    selection_folds: int = 10
    selection_error: str = "misclassification"
    n_rules: int | None = None
    cv: object = "loo"
    threshold_mode: str = "optimized"
    paper_mode: bool = False
    relative_importance: float = 1.0
    train: TrainConfig = field(default_factory=TrainConfig)
    skip_failed_folds: bool = False

    def __post_init__(self):
        _int("seed", self.seed)
        object.__setattr__(self, "population", replace(self.population, seed=self.seed))
        object.__setattr__(self, "train", replace(self.train, seed=self.seed))
        object.__setattr__(self, "bands", _parse_bands(self.bands))
        if not 0 < float(self.band_width_pct) < 100:
            raise ConfigError("band_width_pct", f"must lie in (0, 100), got {self.band_width_pct!r}")
        _int("pca_components", self.pca_components, 1)
        rr = self.rule_range
        if not isinstance(rr, (list, tuple)) or len(rr) != 2:
            raise ConfigError("rule_range", f"must be [lo, hi], got {rr!r}")
        lo, hi = _int("rule_range", rr[0], 1), _int("rule_range", rr[1], 1)
        if lo > hi:
            raise ConfigError("rule_range", f"empty range [{lo}, {hi}]")
        object.__setattr__(self, "rule_range", (lo, hi))
        _int("selection_folds", self.selection_folds, 2)
        if self.n_rules is not None:
            _int("n_rules", self.n_rules, 1)
        object.__setattr__(self, "cv", _parse_cv(self.cv))
        for name in ("paper_mode", "skip_failed_folds"):
            if not isinstance(getattr(self, name), bool):
                raise ConfigError(name, f"must be true or false, got {getattr(self, name)!r}")
        c = self.relative_importance
        if isinstance(c, bool) or not isinstance(c, (int, float)) or not c > 0:
            raise ConfigError("relative_importance", f"must be a positive number, got {c!r}")
        # validates threshold_mode and selection_error
        self.cv_settings()

    def cv_settings(self) -> CVSettings:
        return CVSettings(
            pca_components=self.pca_components, n_rules=self.n_rules,
            rule_range=self.rule_range, selection_folds=self.selection_folds,
            selection_error=self.selection_error, threshold_mode=self.threshold_mode,
            paper_mode=self.paper_mode, relative_importance=float(self.relative_importance),
            train=self.train, seed=self.seed, skip_failed_folds=self.skip_failed_folds)

    def to_dict(self):
        pop = self.population.to_dict()
        pop.pop("seed")
        tr = self.train.to_dict()
        tr.pop("seed")
        return {
            "seed": self.seed,
            "population": pop,
            "bands": self.bands if isinstance(self.bands, str) else [b.to_dict() for b in self.bands],
            "band_width_pct": self.band_width_pct,
            "pca_components": self.pca_components,
            "rule_range": list(self.rule_range),
            "selection_folds": self.selection_folds,
            "selection_error": self.selection_error,
            "n_rules": self.n_rules,
            "cv": self.cv if self.cv == "loo" else {"kfold": self.cv[1]},
            "threshold_mode": self.threshold_mode,
            "paper_mode": self.paper_mode,
            "relative_importance": self.relative_importance,
            "train": tr,
            "skip_failed_folds": self.skip_failed_folds,
        }

    @classmethod
    def from_dict(cls, d):
        if d is None:
            d = {}
        if not isinstance(d, dict):
            raise ConfigError("config", "top level must be a mapping")
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown field")
        for section in ("population", "train"):
            sub = d.get(section) or {}
            if not isinstance(sub, dict):
                raise ConfigError(section, "must be a mapping")
            if "seed" in sub:
                raise ConfigError(f"{section}.seed", "set the top-level seed instead")
        if "population" in d:
            d["population"] = PopulationConfig.from_dict(d["population"])
        if "train" in d:
            tr = dict(d["train"] or {})
            unknown = set(tr) - {"max_epochs", "learning_rate", "tolerance"}
            if unknown:
                raise ConfigError(f"train.{sorted(unknown)[0]}", "unknown field")
            d["train"] = TrainConfig(**tr)
        if isinstance(d.get("rule_range"), list):
            d["rule_range"] = tuple(d["rule_range"])
        return cls(**d)

    def with_overrides(self, **changes):
        """Copy with top-level fields replaced; ``None`` values are ignored."""
        d = self.to_dict()
        for k, v in changes.items():
            if v is not None:
                d[k] = v
        return PipelineConfig.from_dict(d)


def load_config(path=None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror or exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"{path}: not valid YAML ({exc})") from exc
    return PipelineConfig.from_dict(data)


def dump_config(config: PipelineConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False)
