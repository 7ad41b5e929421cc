"""Pipeline configuration: a flat ``key = value`` file with dotted keys.

Values are parsed by the type of the field they set. Lists are comma
separated. Precedence, lowest first: field defaults, the named preset,
the config file, ``--set`` overrides. ``CONNLATENT_SEED`` replaces the
seed only when neither the file nor an override sets it.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

from .classifiers.selection import (PAPER_C, PAPER_GAMMA, PAPER_MAX_DEPTH, PAPER_N_TREES,
                                    GridSpec)
from .dvae import TrainConfig
from .errors import ConfigError, ParseError

SEED_ENV = "CONNLATENT_SEED"
COVARIATES = ("age", "sex")
MODELS = ("svm", "rf")


def _key(name, default, **kw):
    if isinstance(default, (list, tuple)):
        return field(default_factory=lambda: tuple(default), metadata={"key": name, **kw})
    return field(default=default, metadata={"key": name, **kw})


@dataclass(frozen=True)
class PipelineConfig:
    metadata_path: str = _key("paths.metadata", "")
    features_path: str = _key("paths.features", "")
    timeseries_dir: str = _key("paths.timeseries", "")
    output_dir: str = _key("paths.output", "out")

    harmonize: bool = _key("harmonize.enabled", True)
    harmonize_fit_on: str = _key("harmonize.fit_on", "train", choices=("train", "all"))
    harmonize_covariates: tuple = _key("harmonize.covariates", ("age", "sex"), subset=COVARIATES)

    use_dvae: bool = _key("features.use_dvae", True)
    augment_covariates: tuple = _key("features.covariates", (), subset=COVARIATES)

    epochs: int = _key("dvae.epochs", 300, min=1)
    batch_size: int = _key("dvae.batch_size", 64, min=1)
    learning_rate: float = _key("dvae.learning_rate", 1e-3, positive=True)
    hidden_dims: tuple = _key("dvae.hidden_dims", (512, 128), item=int)
    latent_dim: int = _key("dvae.latent_dim", 5, min=1)
    noise_variance: float = _key("dvae.noise_variance", 0.1, min=0.0)

    models: tuple = _key("classify.models", MODELS, subset=MODELS)
    svm_C: tuple = _key("grid.svm_C", PAPER_C, item=float)
    svm_gamma: tuple = _key("grid.svm_gamma", PAPER_GAMMA, item=float)
    svm_kernels: tuple = _key("grid.svm_kernels", ("linear", "rbf"), subset=("linear", "rbf"))
    rf_n_trees: tuple = _key("grid.rf_n_trees", PAPER_N_TREES, item=int)
    rf_max_depth: tuple = _key("grid.rf_max_depth", PAPER_MAX_DEPTH, item=int)

    k: int = _key("eval.k", 5, min=2)
    test_fraction: float = _key("eval.test_fraction", 0.2, open_unit=True)
    bootstrap: int = _key("eval.bootstrap", 1000, min=0)
    bootstrap_mode: str = _key("eval.bootstrap_mode", "train", choices=("train", "test"))
    bootstrap_models: tuple = _key("eval.bootstrap_models", MODELS, subset=MODELS)
    permutations: int = _key("eval.permutations", 1000, min=0)
    permutation_models: tuple = _key("eval.permutation_models", MODELS, subset=MODELS)
    losocv: bool = _key("eval.losocv", False)
    min_per_class: int = _key("eval.min_per_class", 20, min=0)

    plots: bool = _key("output.plots", True)
    seed: int = _key("seed", 0, min=0)

    def __post_init__(self):
        for f in dataclasses.fields(self):
            _validate(f, getattr(self, f.name))
        if 0 < self.bootstrap < 100:
            raise ConfigError("eval.bootstrap must be 0 (off) or at least 100")

    def train_config(self):
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                           learning_rate=self.learning_rate, seed=self.seed,
                           hidden_dims=self.hidden_dims, latent_dim=self.latent_dim,
                           noise_variance=self.noise_variance)

    def grid(self):
        return GridSpec(svm_C=self.svm_C, svm_gamma=self.svm_gamma, svm_kernels=self.svm_kernels,
                        rf_n_trees=self.rf_n_trees, rf_max_depth=self.rf_max_depth)

    def as_items(self):
        """``(dotted key, rendered value)`` pairs in declaration order."""
        return [(f.metadata["key"], _render(getattr(self, f.name))) for f in dataclasses.fields(self)]

    def to_text(self):
        return "".join(f"{k} = {v}\n" for k, v in self.as_items())

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


FIELDS = {f.metadata["key"]: f for f in dataclasses.fields(PipelineConfig)}


def _validate(f, value):
    meta, key = f.metadata, f.metadata["key"]
    if "choices" in meta and value not in meta["choices"]:
        raise ConfigError(f"{key} must be one of {list(meta['choices'])}, got {value!r}")
    if "subset" in meta:
        bad = [v for v in value if v not in meta["subset"]]
        if bad or len(set(value)) != len(value):
            raise ConfigError(f"{key} must list distinct values from {list(meta['subset'])}, got {list(value)}")
    if "min" in meta and value < meta["min"]:
        raise ConfigError(f"{key} must be >= {meta['min']}, got {value}")
    if meta.get("positive") and not value > 0:
        raise ConfigError(f"{key} must be positive, got {value}")
    if meta.get("open_unit") and not 0.0 < value < 1.0:
        raise ConfigError(f"{key} must lie in (0, 1), got {value}")
    if "item" in meta:
        if not value:
            raise ConfigError(f"{key} needs at least one value")
        if any(v <= 0 for v in value):
            raise ConfigError(f"{key} values must be positive")


def _render(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_render(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_value(key, text):
    """Convert the text of ``key = text`` to the field's type."""
    if key not in FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    f = FIELDS[key]
    default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
    text = text.strip()
    try:
        if isinstance(default, bool):
            return _parse_bool(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            item = f.metadata.get("item", str)
            return tuple(item(p.strip()) for p in text.split(",") if p.strip())
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from None


def parse_text(text, path=None):
    """Parse config text into ``{dotted key: value}``; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", line=lineno, path=path)
        key, value = (p.strip() for p in line.split("=", 1))
        try:
            values[key] = parse_value(key, value)
        except ConfigError as exc:
            raise ParseError(str(exc), line=lineno, path=path) from None
    return values


def parse_overrides(pairs):
    values = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        values[key.strip()] = parse_value(key.strip(), value)
    return values


_PRESET_BASE = {"features.use_dvae": True, "eval.k": 5, "eval.test_fraction": 0.2,
                "dvae.latent_dim": 5, "dvae.noise_variance": 0.1,
                "grid.svm_C": PAPER_C, "grid.svm_gamma": PAPER_GAMMA,
                "grid.svm_kernels": ("linear", "rbf"), "grid.rf_n_trees": PAPER_N_TREES,
                "grid.rf_max_depth": PAPER_MAX_DEPTH, "eval.bootstrap": 1000,
                "eval.permutations": 1000, "eval.min_per_class": 20,
                "harmonize.enabled": True, "features.covariates": ()}

PRESETS = {
    "paper-latent": dict(_PRESET_BASE),
    "paper-raw": {**_PRESET_BASE, "features.use_dvae": False},
    "paper-latent-age-sex": {**_PRESET_BASE, "features.covariates": ("age", "sex")},
    "paper-latent-age": {**_PRESET_BASE, "features.covariates": ("age",)},
    "paper-latent-sex": {**_PRESET_BASE, "features.covariates": ("sex",)},
}


def build_config(preset=None, config_path=None, overrides=None, env=None):
    """Assemble a PipelineConfig from preset, file and overrides."""
    values = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        values.update(PRESETS[preset])
    explicit = {}
    if config_path is not None:
        try:
            with open(config_path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc.strerror}") from None
        try:
            explicit.update(parse_text(text, path=str(config_path)))
        except ParseError as exc:
            # a malformed config is a configuration problem, not bad input data
            raise ConfigError(str(exc)) from None
    explicit.update(overrides or {})
    values.update(explicit)
    env = os.environ if env is None else env
    if "seed" not in explicit and env.get(SEED_ENV, "").strip():
        values["seed"] = parse_value("seed", env[SEED_ENV])
    return PipelineConfig(**{FIELDS[k].name: v for k, v in values.items()})
