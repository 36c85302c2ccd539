"""Experiment configuration files.

An experiment is a YAML mapping with the sections ``dataset``, ``split``,
``longtail`` (optional), ``augmentation``, ``model``, ``train`` and
``experiment``. Every key is checked against the dataclass that owns it;
unknown keys, wrong types and invalid values raise ConfigError with the
line of the offending entry.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, is_dataclass
import logging
from pathlib import Path
import types
from typing import Any, Union, get_args, get_origin, get_type_hints

import numpy as np
import yaml

from .augment import AugmentationOp, build_op, compose
from .cansample import (
    GridPrior,
    ParamPrior,
    ProductPrior,
    TruncatedGaussianPrior,
    UniformBoxPrior,
)
from .const import (
    ABLATION_LAMBDAS,
    ABLATION_SEEDS,
    BOUNDS_DRAWS,
    DECOMPOSITION_TRIALS,
    DEFAULT_ACTIVATION,
    DEFAULT_COPIES,
    DEFAULT_MAX_ATTEMPTS,
    DEFAULT_WIDTHS,
    VARIANCE_COPIES,
    VARIANCE_MIN_TRIALS,
    VARIANCE_SAMPLES,
    VARIANCE_TRIALS,
)
from .data import (
    Dataset,
    EmptyClassError,
    SplitSpec,
    gen_blobs,
    gen_halfplane,
    gen_rings,
    load_idx,
    longtail_subsample,
    split,
)
from .train import TrainConfig

_LOGGER = logging.getLogger(__name__)

DATASET_KINDS = ("rings", "blobs", "halfplane", "idx")
PRIOR_KINDS = ("uniform", "gaussian", "grid")


class ConfigError(ValueError):
    """Raised when an experiment configuration cannot be parsed or is invalid."""

    def __init__(self, line: int | None, message: str) -> None:
        """Prefix the message with its line number when known."""
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


@dataclass
class DatasetConfig:
    """Which dataset to generate or load."""

    kind: str = "rings"
    classes: int = 3
    dim: int = 2
    per_class: int = 100
    separation: float = 4.0
    std: float = 1.0
    width: float = 1.0
    margin: float = 0.1
    images: str | None = None
    labels: str | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        """Validate the dataset block."""
        if self.kind not in DATASET_KINDS:
            raise ValueError(f"kind must be one of {DATASET_KINDS}, got {self.kind!r}")
        if self.kind == "idx" and not (self.images and self.labels):
            raise ValueError("kind idx needs both images and labels paths")
        if self.per_class < 1:
            raise ValueError(f"per_class must be >= 1, got {self.per_class}")
        if self.kind != "idx" and self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.kind in ("rings", "blobs") and self.classes < 2:
            raise ValueError(f"classes must be >= 2, got {self.classes}")
        if self.kind == "blobs" and self.separation <= 0.0:
            raise ValueError(f"separation must be positive, got {self.separation}")
        if self.kind == "rings" and not 0.0 <= self.margin < self.width / 2:
            raise ValueError(f"margin must lie in [0, width/2), got {self.margin}")


@dataclass
class LongtailConfig:
    """Exponential class imbalance applied to the training split."""

    ratio: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        """Validate the ratio."""
        if self.ratio < 1.0:
            raise ValueError(f"ratio must be >= 1, got {self.ratio}")


@dataclass
class OpConfig:
    """One augmentation operator and its prior."""

    name: str = "rotation"
    lower: list[float] | None = None
    upper: list[float] | None = None
    bound: float | None = None
    channels: int | None = None
    width: int | None = None
    prior: str = "uniform"
    mean: list[float] | None = None
    std: list[float] | None = None
    points: list[list[float]] | None = None

    def __post_init__(self) -> None:
        """Validate the box and the prior choice."""
        if self.prior not in PRIOR_KINDS:
            raise ValueError(f"prior must be one of {PRIOR_KINDS}, got {self.prior!r}")
        if self.lower is not None and self.upper is not None:
            if len(self.lower) != len(self.upper):
                raise ValueError("lower and upper must have the same length")
            for i, (low, high) in enumerate(zip(self.lower, self.upper)):
                if low >= high:
                    raise ValueError(f"lower[{i}] = {low} must be below upper[{i}] = {high}")
        if self.prior == "gaussian" and self.std is None:
            raise ValueError("a gaussian prior needs std")
        if self.prior == "grid" and not self.points:
            raise ValueError("a grid prior needs points")


@dataclass
class AugmentationConfig:
    """Operators, composite order and sampler settings."""

    ops: list[OpConfig] = field(default_factory=lambda: [OpConfig()])
    order: list[int] | None = None
    max_attempts: int = DEFAULT_MAX_ATTEMPTS
    copies: int = DEFAULT_COPIES
    fallback: bool = True

    def __post_init__(self) -> None:
        """Validate the operator list."""
        if not self.ops:
            raise ValueError("ops must name at least one operator")
        if self.order is not None and sorted(self.order) != list(range(len(self.ops))):
            raise ValueError(f"order {self.order} is not a permutation of 0..{len(self.ops) - 1}")
        if self.max_attempts < 1:
            raise ValueError(f"max_attempts must be >= 1, got {self.max_attempts}")


@dataclass
class ModelConfig:
    """Architecture of the feature network."""

    widths: list[int] = field(default_factory=lambda: list(DEFAULT_WIDTHS))
    activation: str = DEFAULT_ACTIVATION
    seed: int = 0


@dataclass
class ExperimentSection:
    """Sizes of the estimator studies and the output directory."""

    output: str = "runs"
    samples: int = VARIANCE_SAMPLES
    copies: list[int] = field(default_factory=lambda: list(VARIANCE_COPIES))
    trials: int = VARIANCE_TRIALS
    bounds_draws: int = BOUNDS_DRAWS
    decomposition_trials: int = DECOMPOSITION_TRIALS
    lambdas: list[float] = field(default_factory=lambda: list(ABLATION_LAMBDAS))
    seeds: int = ABLATION_SEEDS

    def __post_init__(self) -> None:
        """Validate the study sizes."""
        if self.trials < VARIANCE_MIN_TRIALS:
            raise ValueError(f"trials must be >= {VARIANCE_MIN_TRIALS}, got {self.trials}")
        if self.samples < 1:
            raise ValueError(f"samples must be >= 1, got {self.samples}")
        if not self.copies or min(self.copies) < 1:
            raise ValueError(f"copies must be positive counts, got {self.copies}")
        for name in ("bounds_draws", "decomposition_trials", "seeds"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if any(not 0.0 <= lam <= 1.0 for lam in self.lambdas):
            raise ValueError(f"lambdas must lie in [0, 1], got {self.lambdas}")


@dataclass
class ExperimentConfig:
    """A complete experiment."""

    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    longtail: LongtailConfig | None = None
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)


class _LinedDict(dict):
    """Mapping that remembers the line of each key."""

    def __init__(self, line: int) -> None:
        super().__init__()
        self.line = line
        self.lines: dict[Any, int] = {}


class _LinedList(list):
    """Sequence that remembers the line of each item."""

    def __init__(self, line: int) -> None:
        super().__init__()
        self.line = line
        self.lines: list[int] = []


class _LineLoader(yaml.SafeLoader):
    """SafeLoader producing line-annotated mappings and sequences."""


def _construct_mapping(loader: _LineLoader, node: yaml.MappingNode) -> _LinedDict:
    loader.flatten_mapping(node)
    mapping = _LinedDict(node.start_mark.line + 1)
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        line = key_node.start_mark.line + 1
        if key in mapping:
            raise ConfigError(line, f"duplicate key {key!r}")
        mapping[key] = loader.construct_object(value_node, deep=True)
        mapping.lines[key] = line
    return mapping


def _construct_sequence(loader: _LineLoader, node: yaml.SequenceNode) -> _LinedList:
    sequence = _LinedList(node.start_mark.line + 1)
    for item in node.value:
        sequence.append(loader.construct_object(item, deep=True))
        sequence.lines.append(item.start_mark.line + 1)
    return sequence


_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)
_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _construct_sequence)


def _coerce(value: Any, hint: Any, path: str, line: int) -> Any:
    """Convert a parsed YAML value to the annotated field type."""
    origin = get_origin(hint)
    if origin in (Union, types.UnionType):
        args = [arg for arg in get_args(hint) if arg is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], path, line)
    if is_dataclass(hint):
        return _build(hint, value, path, line)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(line, f"{path} must be a list, got {type(value).__name__}")
        lines = getattr(value, "lines", [line] * len(value))
        (item_hint,) = get_args(hint)
        return [
            _coerce(item, item_hint, f"{path}[{i}]", item_line)
            for i, (item, item_line) in enumerate(zip(value, lines))
        ]
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(line, f"{path} must be true or false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(line, f"{path} must be an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(line, f"{path} must be a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(line, f"{path} must be a string, got {value!r}")
        return value
    return value


def _build(cls: type, data: Any, path: str, line: int) -> Any:
    """Instantiate a config dataclass from a parsed mapping."""
    if data is None:
        data = _LinedDict(line)
    if not isinstance(data, dict):
        raise ConfigError(line, f"{path or 'config'} must be a mapping")
    lines = getattr(data, "lines", {})
    hints = get_type_hints(cls)
    known = {item.name for item in fields(cls) if item.init}
    kwargs = {}
    for key, value in data.items():
        key_path = f"{path}.{key}" if path else str(key)
        key_line = lines.get(key, line)
        if key not in known:
            raise ConfigError(key_line, f"unknown key {key_path}")
        kwargs[key] = _coerce(value, hints[key], key_path, key_line)
    try:
        return cls(**kwargs)
    except ValueError as err:
        raise ConfigError(getattr(data, "line", line), f"{path or 'config'}: {err}") from err


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse an experiment from YAML text."""
    try:
        data = yaml.load(text, Loader=_LineLoader)  # noqa: S506
    except yaml.MarkedYAMLError as err:
        mark = err.problem_mark or err.context_mark
        raise ConfigError(mark.line + 1 if mark else None, f"{source}: {err.problem}") from err
    config = _build(ExperimentConfig, data, "", 1)
    _LOGGER.debug("Parsed experiment config from %s", source)
    return config


def load_config(path: str | Path | None) -> ExperimentConfig:
    """Load an experiment file, or the defaults when no path is given."""
    if path is None:
        return ExperimentConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(None, f"cannot read {path}: {err.strerror}") from err
    return parse_config(text, str(path))


def config_to_dict(obj: Any) -> Any:
    """Return plain dicts and lists for a config tree (init fields only)."""
    if is_dataclass(obj):
        return {
            item.name: config_to_dict(getattr(obj, item.name)) for item in fields(obj) if item.init
        }
    if isinstance(obj, (list, tuple)):
        return [config_to_dict(item) for item in obj]
    return obj


def dump_config(config: ExperimentConfig, path: str | Path) -> None:
    """Write the resolved config as YAML."""
    Path(path).write_text(
        yaml.safe_dump(config_to_dict(config), sort_keys=False),
        encoding="utf-8",
    )


def build_dataset(config: DatasetConfig) -> Dataset:
    """Generate or load the dataset described by the config."""
    try:
        return _generate(config)
    except (OSError, ValueError) as err:
        raise ConfigError(None, f"dataset: {err}") from err


def _generate(config: DatasetConfig) -> Dataset:
    if config.kind == "rings":
        return gen_rings(
            config.classes,
            config.per_class,
            config.seed,
            dim=config.dim,
            width=config.width,
            margin=config.margin,
        )
    if config.kind == "blobs":
        return gen_blobs(
            config.classes,
            config.dim,
            config.per_class,
            config.separation,
            config.seed,
            std=config.std,
        )
    if config.kind == "halfplane":
        return gen_halfplane(config.per_class, config.dim, config.seed)
    return load_idx(config.images, config.labels)


def build_splits(config: ExperimentConfig) -> tuple[Dataset, Dataset, Dataset]:
    """Return the train/val/test splits, long-tail subsampling the train split."""
    train_set, val_set, test_set = split(build_dataset(config.dataset), config.split)
    if config.longtail is not None:
        try:
            train_set = longtail_subsample(
                train_set, config.longtail.ratio, config.longtail.seed
            )
        except EmptyClassError as err:
            raise ConfigError(None, f"longtail: {err}") from err
    return train_set, val_set, test_set


def _build_prior(op: AugmentationOp, config: OpConfig) -> ParamPrior:
    """Return the prior of one operator."""
    if config.prior == "grid":
        return GridPrior(config.points)
    if config.prior == "gaussian":
        mean = config.mean if config.mean is not None else (op.space.lower + op.space.upper) / 2
        return TruncatedGaussianPrior(op.space, mean, config.std)
    if not op.differentiable:
        return GridPrior(np.vstack([op.space.lower, op.space.upper]))
    return UniformBoxPrior(op.space)


def _build_single(config: OpConfig, dim: int) -> AugmentationOp:
    """Return one operator with the options the config sets."""
    options: dict[str, Any] = {}
    if config.name == "shift":
        options["dims"] = dim
    if config.bound is not None:
        options["bound"] = config.bound
    if config.channels is not None:
        options["channels"] = config.channels
    if config.width is not None:
        options["width"] = config.width
    if config.lower is not None:
        options["lower"] = config.lower[0] if config.name == "rotation" else config.lower
    if config.upper is not None:
        options["upper"] = config.upper[0] if config.name == "rotation" else config.upper
    return build_op(config.name, **options)


def build_augmentation(config: AugmentationConfig, dim: int) -> tuple[AugmentationOp, ParamPrior]:
    """Return the (possibly composite) operator and its prior."""
    ops, priors = [], []
    for i, op_config in enumerate(config.ops):
        try:
            op = _build_single(op_config, dim)
            op.apply(op.identity, np.full(dim, 0.5))
            prior = _build_prior(op, op_config)
        except (TypeError, ValueError) as err:
            raise ConfigError(None, f"augmentation.ops[{i}]: {err}") from err
        if prior.dims != op.dims:
            raise ConfigError(
                None,
                f"augmentation.ops[{i}]: prior has {prior.dims} dimensions, op needs {op.dims}",
            )
        ops.append(op)
        priors.append(prior)
    if len(ops) == 1:
        return ops[0], priors[0]
    composite = compose(ops, config.order)
    return composite, ProductPrior([priors[j] for j in composite.order])
