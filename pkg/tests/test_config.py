"""Tests for YAML experiment configuration."""
from __future__ import annotations

import math

import pytest

from shiftrisk.augment import AdditiveShift, CompositeOp, DiscreteFlip, Rotation2D
from shiftrisk.cansample import GridPrior, ProductPrior, TruncatedGaussianPrior, UniformBoxPrior
from shiftrisk.config import (
    ConfigError,
    ExperimentConfig,
    build_augmentation,
    build_splits,
    config_to_dict,
    dump_config,
    load_config,
    parse_config,
)

FULL = """\
dataset:
  kind: blobs
  classes: 4
  dim: 3
  per_class: 20
  separation: 5
split:
  train: 0.6
  val: 0.2
  test: 0.2
  seed: 4
longtail:
  ratio: 2
augmentation:
  ops:
    - name: rotation
      lower: [-1.0]
      upper: [1.0]
    - name: shift
      bound: 0.2
      prior: gaussian
      std: [0.1, 0.1]
  order: [1, 0]
  copies: 2
model:
  widths: [8]
train:
  strategy: standard
  epochs: 3
  milestones: [1, 2]
experiment:
  trials: 200
  lambdas: [0.1, 0.9]
"""


class TestParse:
    """Parsing and validation."""

    def test_empty_is_default(self):
        """An empty file gives the defaults."""
        assert config_to_dict(parse_config("")) == config_to_dict(ExperimentConfig())

    def test_no_path_is_default(self):
        """Without a file the defaults are used."""
        assert load_config(None).dataset.kind == "rings"

    def test_full(self):
        """Every section is read and coerced."""
        config = parse_config(FULL)
        assert config.dataset.kind == "blobs"
        assert config.dataset.separation == 5.0
        assert isinstance(config.dataset.separation, float)
        assert config.split.fractions == (0.6, 0.2, 0.2)
        assert config.longtail.ratio == 2.0
        assert [op.name for op in config.augmentation.ops] == ["rotation", "shift"]
        assert config.augmentation.order == [1, 0]
        assert config.model.widths == [8]
        assert config.train.strategy == "standard"
        assert config.train.milestones == [1, 2]
        assert config.experiment.lambdas == [0.1, 0.9]

    def test_unknown_key(self):
        """Unknown keys are reported with their line and path."""
        with pytest.raises(ConfigError, match=r"line 3: unknown key dataset\.colour") as err:
            parse_config("dataset:\n  kind: rings\n  colour: red\n")
        assert err.value.line == 3

    def test_wrong_type(self):
        """A string where an integer belongs is rejected."""
        with pytest.raises(ConfigError, match=r"line 2: dataset\.classes must be an integer"):
            parse_config("dataset:\n  classes: three\n")

    def test_bool_is_not_int(self):
        """true is not an integer."""
        with pytest.raises(ConfigError, match="integer"):
            parse_config("train:\n  epochs: true\n")

    def test_invalid_box(self):
        """lower >= upper names the operator and the index."""
        text = "augmentation:\n  ops:\n    - name: shift\n      lower: [0.5]\n      upper: [0.1]\n"
        with pytest.raises(ConfigError, match=r"augmentation\.ops\[0\].*lower\[0\]"):
            parse_config(text)

    def test_invalid_lambda(self):
        """Training constraints surface as configuration errors."""
        with pytest.raises(ConfigError, match="lam"):
            parse_config("train:\n  lam: 1.5\n")

    def test_single_class(self):
        """A generated dataset needs at least two classes."""
        with pytest.raises(ConfigError, match=r"dataset: classes must be >= 2"):
            parse_config("dataset:\n  kind: rings\n  classes: 1\n")

    def test_too_few_trials(self):
        """The variance scan floor is checked while parsing."""
        with pytest.raises(ConfigError, match="trials must be >= 100"):
            parse_config("experiment:\n  trials: 10\n")

    def test_lambda_grid_range(self):
        """Ablation lambdas lie in [0, 1]."""
        with pytest.raises(ConfigError, match="lambdas"):
            parse_config("experiment:\n  lambdas: [0.5, 2.0]\n")

    def test_duplicate_key(self):
        """A key given twice is rejected."""
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config("train:\n  epochs: 2\n  epochs: 3\n")

    def test_syntax_error(self):
        """Malformed YAML is reported with a line."""
        with pytest.raises(ConfigError, match="line"):
            parse_config("train:\n  epochs: [1, 2\n")

    def test_section_must_be_mapping(self):
        """A scalar section is rejected."""
        with pytest.raises(ConfigError, match="mapping"):
            parse_config("train: 5\n")

    def test_missing_file(self, tmp_path):
        """An unreadable path is a configuration error."""
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "missing.yaml")

    def test_dump_round_trip(self, tmp_path):
        """A dumped config parses back to the same tree."""
        config = parse_config(FULL)
        path = tmp_path / "config.yaml"
        dump_config(config, path)
        assert config_to_dict(load_config(path)) == config_to_dict(config)


class TestBuild:
    """Objects built from a config."""

    def test_single_rotation(self):
        """The default config is a full-circle rotation with a uniform prior."""
        op, prior = build_augmentation(ExperimentConfig().augmentation, 2)
        assert isinstance(op, Rotation2D)
        assert isinstance(prior, UniformBoxPrior)
        assert op.space.upper[0] == pytest.approx(math.pi)

    def test_composite_order(self):
        """Stages follow the composite order and the prior matches it."""
        config = parse_config(FULL)
        op, prior = build_augmentation(config.augmentation, 2)
        assert isinstance(op, CompositeOp)
        assert isinstance(op.stages[0], AdditiveShift)
        assert isinstance(op.stages[1], Rotation2D)
        assert isinstance(prior, ProductPrior)
        assert isinstance(prior.priors[0], TruncatedGaussianPrior)
        assert prior.dims == op.dims == 3

    def test_flip_gets_point_masses(self):
        """A uniform prior on a flip means the two discrete values."""
        config = parse_config("augmentation:\n  ops:\n    - name: flip\n")
        op, prior = build_augmentation(config.augmentation, 4)
        assert isinstance(op, DiscreteFlip)
        assert isinstance(prior, GridPrior)
        assert prior.pdf([1.0]) == pytest.approx(0.5)

    def test_unknown_operator(self):
        """Unknown operator names fail at build time."""
        config = parse_config("augmentation:\n  ops:\n    - name: crop\n")
        with pytest.raises(ConfigError, match=r"ops\[0\]"):
            build_augmentation(config.augmentation, 2)

    def test_rotation_on_odd_dimension(self):
        """The default rotation cannot act on three-dimensional blobs."""
        config = parse_config("dataset:\n  kind: blobs\n  dim: 3\n")
        with pytest.raises(ConfigError, match=r"ops\[0\]: rotation needs an even dimension"):
            build_augmentation(config.augmentation, config.dataset.dim)

    def test_prior_dimension(self):
        """A grid prior of the wrong dimension is rejected."""
        text = (
            "augmentation:\n  ops:\n    - name: shift\n      prior: grid\n"
            "      points: [[0.1]]\n"
        )
        with pytest.raises(ConfigError, match="dimensions"):
            build_augmentation(parse_config(text).augmentation, 2)

    def test_longtail_on_train_split_only(self):
        """Validation and test keep their balanced class counts."""
        text = "dataset:\n  per_class: 100\nlongtail:\n  ratio: 4\n"
        train_set, val_set, test_set = build_splits(parse_config(text))
        counts = train_set.class_counts()
        assert counts.tolist() == [70, 70 // 2, 70 // 4]
        assert max(val_set.class_counts()) - min(val_set.class_counts()) <= 1
        assert max(test_set.class_counts()) - min(test_set.class_counts()) <= 1
