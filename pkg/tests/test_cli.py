"""End-to-end tests of the command-line subcommands."""
from __future__ import annotations

import csv
import json

import pytest

from shiftrisk.__main__ import main
from shiftrisk.cli import EXIT_CONFIG, EXIT_OK, EXIT_SAMPLING

RINGS = """\
dataset:
  kind: rings
  classes: 3
  per_class: 20
model:
  widths: [4]
train:
  epochs: 2
  batch_size: 16
  warmup_epochs: 0
experiment:
  samples: 20
  bounds_draws: 50
  decomposition_trials: 5
"""

HALFPLANE = """\
dataset:
  kind: halfplane
  per_class: 2000
"""


def write(tmp_path, text, name="experiment.yaml"):
    """Write a config file and return its path as a string."""
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def run(tmp_path, command, text, *extra):
    """Run one subcommand into tmp_path/out and return (code, out dir)."""
    out = tmp_path / "out"
    code = main([command, "--config", write(tmp_path, text), "--out", str(out), *extra])
    return code, out


def summary(path):
    return json.loads(path.read_text(encoding="utf-8"))


class TestSampleAug:
    """The sample-aug command."""

    def test_rings_always_accept(self, tmp_path):
        """Rotations never leave a radial band."""
        code, out = run(tmp_path, "sample-aug", RINGS)
        assert code == EXIT_OK
        result = summary(out / "summary.json")
        assert result["acceptance_rate"] == 1.0
        assert result["oracle_violations"] == 0
        assert (out / "config.yaml").exists()

    def test_halfplane_rate(self, tmp_path):
        """A uniform rotation keeps half of the proposals on their side."""
        code, out = run(tmp_path, "sample-aug", HALFPLANE, "--seed", "3")
        assert code == EXIT_OK
        assert 0.45 <= summary(out / "summary.json")["acceptance_rate"] <= 0.55
        with open(out / "samples.csv", encoding="utf-8") as handle:
            rows = list(csv.DictReader(handle))
        assert len(rows) == 4000
        assert all(row["accepted"] == "1" for row in rows)

    def test_samples_columns(self, tmp_path):
        """samples.csv lists indices, parameters, attempts and acceptance in that order."""
        code, out = run(tmp_path, "sample-aug", RINGS)
        assert code == EXIT_OK
        with open(out / "samples.csv", encoding="utf-8") as handle:
            header = next(csv.reader(handle))
        assert header == ["sample_index", "copy_index", "theta0", "attempts", "accepted", "label"]

    def test_exhausted(self, tmp_path):
        """A half-turn always flips the half-plane, so sampling gives up."""
        text = HALFPLANE + (
            "augmentation:\n"
            "  max_attempts: 5\n"
            "  fallback: false\n"
            "  ops:\n"
            "    - name: rotation\n"
            "      prior: grid\n"
            "      points: [[3.141592653589793]]\n"
        )
        code, _ = run(tmp_path, "sample-aug", text)
        assert code == EXIT_SAMPLING

    def test_fallback_keeps_identity(self, tmp_path):
        """With fallback on, the same setup keeps the original samples."""
        text = HALFPLANE + (
            "augmentation:\n"
            "  max_attempts: 5\n"
            "  ops:\n"
            "    - name: rotation\n"
            "      prior: grid\n"
            "      points: [[3.141592653589793]]\n"
        )
        code, out = run(tmp_path, "sample-aug", text)
        assert code == EXIT_OK
        result = summary(out / "summary.json")
        assert result["fallbacks"] == 4000
        assert result["acceptance_rate"] == 0.0


class TestConfigErrors:
    """Configuration problems exit with code 2."""

    def test_invalid_box(self, tmp_path):
        """lower >= upper is rejected before anything runs."""
        text = (
            "augmentation:\n  ops:\n    - name: rotation\n"
            "      lower: [1.0]\n      upper: [0.0]\n"
        )
        code, out = run(tmp_path, "sample-aug", text)
        assert code == EXIT_CONFIG
        assert not out.exists()

    def test_missing_file(self, tmp_path):
        """A missing config file is a configuration error."""
        code = main(["sample-aug", "--config", str(tmp_path / "nope.yaml")])
        assert code == EXIT_CONFIG

    def test_lambda_range(self, tmp_path):
        """--lambda outside [0, 1] is rejected."""
        code, _ = run(tmp_path, "train", RINGS, "--lambda", "1.5")
        assert code == EXIT_CONFIG

    def test_too_few_trials(self, tmp_path):
        """The variance scan needs at least 100 trials."""
        code, _ = run(tmp_path, "variance-scan", RINGS + "  trials: 10\n")
        assert code == EXIT_CONFIG

    def test_single_class(self, tmp_path):
        """A one-class dataset is rejected before anything is written."""
        code, out = run(tmp_path, "sample-aug", "dataset:\n  kind: rings\n  classes: 1\n")
        assert code == EXIT_CONFIG
        assert not out.exists()

    def test_rotation_on_odd_dimension(self, tmp_path):
        """The default rotation cannot act on three-dimensional blobs."""
        code, out = run(tmp_path, "sample-aug", "dataset:\n  kind: blobs\n  dim: 3\n")
        assert code == EXIT_CONFIG
        assert not out.exists()

    def test_ablation_lambda_range(self, tmp_path):
        """--lambdas outside [0, 1] is rejected."""
        code, _ = run(tmp_path, "ablate-lambda", RINGS, "--lambdas", "0.5", "2.0")
        assert code == EXIT_CONFIG

    def test_too_many_samples(self, tmp_path):
        """The scan cannot draw more samples than the dataset holds."""
        text = RINGS.replace("samples: 20", "samples: 500")
        code, _ = run(tmp_path, "variance-scan", text)
        assert code == EXIT_CONFIG


class TestChecks:
    """Invariant checks on the default rotation setup."""

    def test_decomposition(self, tmp_path):
        """Residuals stay at rounding level."""
        code, out = run(tmp_path, "check-decomposition", RINGS)
        assert code == EXIT_OK
        assert summary(out / "summary.json")["worst_residual"] <= 1e-10
        with open(out / "residuals.csv", encoding="utf-8") as handle:
            assert len(list(csv.DictReader(handle))) == 5

    def test_bounds(self, tmp_path):
        """The sandwich holds on every draw."""
        code, out = run(tmp_path, "bounds-check", RINGS, "--workers", "2")
        assert code == EXIT_OK
        result = summary(out / "summary.json")
        assert result["draws"] == 50
        assert result["violations"] == 0

    @pytest.mark.slow
    def test_variance_scan(self, tmp_path):
        """The fitted slope is close to -1."""
        code, out = run(tmp_path, "variance-scan", RINGS.replace("per_class: 20", "per_class: 40"))
        assert code == EXIT_OK
        assert -1.15 <= summary(out / "summary.json")["slope"] <= -0.85


class TestTrain:
    """Training runs and their artefacts."""

    def run_dir(self, out):
        (run_dir,) = [path for path in out.iterdir() if path.is_dir()]
        return run_dir

    def test_artefacts(self, tmp_path):
        """A run directory holds metrics, summary, checkpoint, curves and config."""
        code, out = run(tmp_path, "train", RINGS, "--seed", "5")
        assert code == EXIT_OK
        run_dir = self.run_dir(out)
        assert run_dir.name.endswith("-seed5")
        for name in ("metrics.csv", "summary.json", "checkpoint.bin", "curves.svg", "config.yaml"):
            assert (run_dir / name).exists()
        result = summary(run_dir / "summary.json")
        assert result["epochs"] == 2
        assert result["config"]["train"]["seed"] == 5

    def test_reproducible(self, tmp_path):
        """The same config and seed give byte-identical outputs."""
        first = {}
        for attempt in range(2):
            code, out = run(tmp_path, "train", RINGS, "--strategy", "ours", "--lambda", "0.3")
            assert code == EXIT_OK
            run_dir = self.run_dir(out)
            files = {path.name: path.read_bytes() for path in run_dir.iterdir()}
            if attempt == 0:
                first = files
        assert files == first

    def test_ablation(self, tmp_path):
        """One lambda and one seed give one table row."""
        code, out = run(tmp_path, "ablate-lambda", RINGS, "--lambdas", "0.5", "--seeds", "1")
        assert code == EXIT_OK
        with open(out / "ablation.csv", encoding="utf-8") as handle:
            rows = list(csv.DictReader(handle))
        assert len(rows) == 1
        assert float(rows[0]["lambda"]) == 0.5
        assert rows[0]["runs"] == "1"
        with open(out / "ablation_runs.csv", encoding="utf-8") as handle:
            assert [row["status"] for row in csv.DictReader(handle)] == ["ok"]

    def test_ablation_at_one_is_standard(self, tmp_path):
        """An ablation cell at lambda = 1 reproduces standard training with the same seed."""
        config = write(tmp_path, RINGS)
        ablation = tmp_path / "ablation"
        standard = tmp_path / "standard"
        code = main(
            [
                "ablate-lambda",
                "--config",
                config,
                "--out",
                str(ablation),
                "--lambdas",
                "1.0",
                "--seeds",
                "1",
                "--seed",
                "6",
            ]
        )
        assert code == EXIT_OK
        code = main(
            ["train", "--config", config, "--out", str(standard), "--strategy", "standard"]
            + ["--seed", "6"]
        )
        assert code == EXIT_OK
        with open(ablation / "ablation_runs.csv", encoding="utf-8") as handle:
            (row,) = list(csv.DictReader(handle))
        test = summary(self.run_dir(standard) / "summary.json")["test"]
        assert row["seed"] == "6"
        assert float(row["test_accuracy"]) == test["accuracy"]
        assert float(row["test_clean_risk"]) == test["clean_risk"]
        with open(ablation / "ablation.csv", encoding="utf-8") as handle:
            (table,) = list(csv.DictReader(handle))
        assert float(table["mean_clean_risk"]) == test["clean_risk"]


def outputs(out):
    """Map every file under out to its bytes."""
    return {
        str(path.relative_to(out)): path.read_bytes()
        for path in sorted(out.rglob("*"))
        if path.is_file()
    }


ABLATION = ("--lambdas", "0.5", "1.0", "--seeds", "1")


class TestReproducible:
    """The same config and seed give byte-identical outputs."""

    @pytest.mark.parametrize(
        "command, extra",
        [
            ("sample-aug", ()),
            ("check-decomposition", ()),
            ("bounds-check", ()),
            ("ablate-lambda", ABLATION),
        ],
    )
    def test_same_seed(self, tmp_path, command, extra):
        """Two runs into the same directory write the same bytes."""
        code, out = run(tmp_path, command, RINGS, "--seed", "9", *extra)
        assert code == EXIT_OK
        first = outputs(out)
        code, out = run(tmp_path, command, RINGS, "--seed", "9", *extra)
        assert code == EXIT_OK
        assert outputs(out) == first
        assert first

    @pytest.mark.parametrize(
        "command, extra",
        [
            ("check-decomposition", ()),
            ("bounds-check", ()),
            ("ablate-lambda", ABLATION),
        ],
    )
    def test_worker_count(self, tmp_path, command, extra):
        """Two threads write what one thread writes."""
        code, out = run(tmp_path, command, RINGS, "--workers", "1", *extra)
        assert code == EXIT_OK
        serial = outputs(out)
        code, out = run(tmp_path, command, RINGS, "--workers", "2", *extra)
        assert code == EXIT_OK
        assert outputs(out) == serial

    @pytest.mark.slow
    def test_variance_scan(self, tmp_path):
        """Repeated scans agree, whatever the worker count."""
        text = RINGS.replace("per_class: 20", "per_class: 40")
        code, out = run(tmp_path, "variance-scan", text, "--seed", "2")
        assert code == EXIT_OK
        first = outputs(out)
        for workers in ("1", "2"):
            code, out = run(tmp_path, "variance-scan", text, "--seed", "2", "--workers", workers)
            assert code == EXIT_OK
            assert outputs(out) == first
