"""Tests for run directories, the paired comparison, probes, plots and verify."""

import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from pdpm_lab import harness
from pdpm_lab.config import load_config, parse_config
from pdpm_lab.errors import ConfigError, IncompleteComparison, TrainingAborted
from pdpm_lab.harness import (AggregateReport, Cell, RunDirectory, RunEntry, aggregate_reports,
                              cell_config, cmd_compare, cmd_plot, cmd_probe, cmd_similarity_map,
                              cmd_train, cmd_verify, comparison_cells, format_table)
from pdpm_lab.metrics import generate_samples
from pdpm_lab.seeding import make_rng, standard_normal
from pdpm_lab.synthetic_data import sample_components


def metrics_of(run_dir):
    return json.loads(RunDirectory(run_dir).metrics.read_text())


class TestTrain:
    def test_artifacts(self, tiny_experiment, tmp_path):
        run = cmd_train(tiny_experiment, tmp_path / "run", quiet=True)
        assert run.config.exists() and run.losses.exists() and run.metrics.exists()
        assert [p.name for p in sorted(run.checkpoints.iterdir())] == ["step_00000003.json", "step_00000006.json"]
        report = metrics_of(run.root)
        assert report["n_modes"] == 8 and report["n_samples"] == 200
        assert 0 <= report["modes_captured"] <= 8
        assert report["frechet"] >= 0

    def test_rerun_is_byte_identical(self, tiny_experiment, tmp_path):
        a = cmd_train(tiny_experiment, tmp_path / "a", quiet=True)
        b = cmd_train(load_config(a.config), tmp_path / "b", quiet=True)
        assert a.losses.read_bytes() == b.losses.read_bytes()
        assert a.metrics.read_bytes() == b.metrics.read_bytes()
        assert a.config.read_bytes() == b.config.read_bytes()

    def test_retrain_without_resume_drops_old_checkpoints(self, tiny_experiment, tmp_path):
        cmd_train(tiny_experiment, tmp_path / "run", quiet=True)
        shorter = replace(tiny_experiment, train=replace(tiny_experiment.train, total_generator_steps=2))
        run = cmd_train(shorter, tmp_path / "run", quiet=True)
        assert run.final_checkpoint().step == 2
        assert run.load_config().train.total_generator_steps == 2
        assert [p.name for p in run.checkpoints.iterdir()] == ["step_00000002.json"]

    def test_resume_with_changed_config_rejected(self, tiny_experiment, tmp_path):
        cmd_train(tiny_experiment, tmp_path / "run", quiet=True)
        changed = replace(tiny_experiment, train=replace(tiny_experiment.train, lam=4.0))
        with pytest.raises(ConfigError):
            cmd_train(changed, tmp_path / "run", resume=True, quiet=True)

    def test_plot_flag(self, tiny_experiment, tmp_path):
        run = cmd_train(tiny_experiment, tmp_path / "run", quiet=True, plot=True)
        assert {p.name for p in run.plots.iterdir()} == {"scatter.svg", "losses.svg", "interpolation.svg"}

    def test_long_rerun_is_byte_identical(self, tiny_experiment, tmp_path):
        longer = replace(tiny_experiment, train=replace(tiny_experiment.train, total_generator_steps=200,
                                                          checkpoint_interval=50, log_interval=50))
        a = cmd_train(longer, tmp_path / "a", quiet=True)
        b = cmd_train(load_config(a.config), tmp_path / "b", quiet=True)
        assert a.losses.read_bytes() == b.losses.read_bytes()
        assert a.metrics.read_bytes() == b.metrics.read_bytes()

class TestComparisonCells:
    def test_layout(self, tiny_experiment):
        config = replace(tiny_experiment, lambdas=[0.0, 1.0, 5.0], scales=[1.0, 2.0], include_ms=True)
        labels = [c.label for c in comparison_cells(config)]
        assert labels == ["GAN", "GAN_MS", "GAN_PDPM_lam=1_s=1", "GAN_PDPM_lam=1_s=2",
                          "GAN_PDPM_lam=5_s=1", "GAN_PDPM_lam=5_s=2"]

    def test_cell_config(self, tiny_experiment):
        cfg = cell_config(tiny_experiment, Cell("x", 2.0, 3.0, 1.0), seed=11)
        assert (cfg.train.lam, cfg.train.s, cfg.train.lam_ms, cfg.train.seed) == (2.0, 3.0, 1.0, 11)
        assert cfg.seed_list() == [11]


class TestCompare:
    def test_paired_runs(self, tiny_experiment, tmp_path):
        report = cmd_compare(tiny_experiment, tmp_path, quiet=True)
        assert report.complete and report.seeds == [3, 4, 5]
        assert list(report.cells) == ["GAN", "GAN_PDPM_lam=1_s=1"]
        assert all(cell["runs"] == 3 for cell in report.cells.values())
        root = tmp_path / "compare"
        assert (root / "report.json").exists() and (root / "table.txt").exists()
        assert (root / "GAN" / "seed_4" / "metrics.json").exists()
        assert "GAN_PDPM_lam=1_s=1" in (root / "table.txt").read_text()

    def test_baseline_only_has_zero_deltas(self, tiny_experiment, tmp_path):
        report = cmd_compare(replace(tiny_experiment, lambdas=[0.0]), tmp_path, quiet=True)
        assert list(report.cells) == ["GAN"]
        for key in harness.METRIC_KEYS[:3]:
            assert report.deltas["GAN"][key]["mean"] == 0.0

    def test_baseline_matches_standalone_run(self, tiny_experiment, tmp_path):
        cmd_compare(tiny_experiment, tmp_path / "cmp", quiet=True)
        standalone = cell_config(tiny_experiment, Cell("GAN", 0.0, tiny_experiment.train.s), seed=4)
        run = cmd_train(standalone, tmp_path / "alone", quiet=True)
        compared = tmp_path / "cmp" / "compare" / "GAN" / "seed_4"
        assert run.metrics.read_bytes() == (compared / "metrics.json").read_bytes()
        assert run.losses.read_bytes() == (compared / "losses.csv").read_bytes()

    def test_needs_three_seeds(self, tiny_experiment, tmp_path):
        with pytest.raises(ConfigError):
            cmd_compare(replace(tiny_experiment, n_seeds=2), tmp_path, quiet=True)

    def test_parallel_matches_sequential(self, tiny_experiment, tmp_path):
        seq = cmd_compare(tiny_experiment, tmp_path / "seq", quiet=True)
        par = cmd_compare(tiny_experiment, tmp_path / "par", workers=2, quiet=True)
        assert [r.report for r in par.runs] == [r.report for r in seq.runs]

    def test_failed_runs_flag_incomplete(self, tiny_experiment, tmp_path, monkeypatch):
        real_train = harness.cmd_train

        def flaky(config, out_dir, **kwargs):
            if config.train.lam > 0 and config.train.seed == 5:
                raise TrainingAborted(2, "injected failure")
            return real_train(config, out_dir, **kwargs)

        monkeypatch.setattr(harness, "cmd_train", flaky)
        with pytest.raises(IncompleteComparison) as info:
            cmd_compare(tiny_experiment, tmp_path, quiet=True)
        report = info.value.report
        assert not report.complete and len(report.failures) == 1
        assert report.cells["GAN_PDPM_lam=1_s=1"]["runs"] == 2
        saved = json.loads((tmp_path / "compare" / "report.json").read_text())
        assert saved["complete"] is False
        assert "INCOMPLETE" in (tmp_path / "compare" / "table.txt").read_text()


class TestAggregation:
    def _report(self):
        runs = [
            RunEntry("GAN", 0.0, 1.0, 0.0, 0, "a", {"modes_captured": 4, "hq_fraction": 0.5, "frechet": 2.0,
                                                  "mean_latent_similarity_of_near_duplicates": 0.6}),
            RunEntry("GAN", 0.0, 1.0, 0.0, 1, "b", {"modes_captured": 6, "hq_fraction": 0.7, "frechet": 1.0,
                                                  "mean_latent_similarity_of_near_duplicates": None}),
            RunEntry("P", 1.0, 1.0, 0.0, 0, "c", {"modes_captured": 7, "hq_fraction": 0.6, "frechet": 1.5,
                                                "mean_latent_similarity_of_near_duplicates": 0.7}),
            RunEntry("P", 1.0, 1.0, 0.0, 1, "d", error="boom"),
        ]
        return AggregateReport(dataset="ring8", seeds=[0, 1], runs=runs)

    def test_statistics_and_deltas(self):
        report = aggregate_reports(self._report())
        assert report.cells["GAN"]["modes_captured"]["mean"] == 5.0
        assert report.cells["GAN"]["mean_latent_similarity_of_near_duplicates"]["n"] == 1
        assert report.deltas["P"]["modes_captured"] == {"mean": 3.0, "std": 0.0, "median": 3.0, "n": 1}
        assert report.failures == ["P seed 1: boom"] and not report.complete

    def test_idempotent(self):
        once = aggregate_reports(self._report())
        twice = aggregate_reports(AggregateReport.from_dict(json.loads(json.dumps(once.to_dict()))))
        assert twice.to_dict() == once.to_dict()

    def test_table_marks_missing_values(self):
        table = format_table(aggregate_reports(self._report()))
        assert "1/2" in table and "INCOMPLETE" in table


class TestRunTools:
    @pytest.fixture
    def trained(self, tiny_experiment, tmp_path):
        return cmd_train(tiny_experiment, tmp_path / "run", quiet=True)

    def test_probe_histogram_recomputes_mean(self, trained):
        doc = cmd_probe(trained.root, 12, mse_threshold=100.0, steps=2)
        assert doc["count"] == 12
        with open(trained.probe_histogram, newline="") as f:
            rows = list(csv.DictReader(f))
        total = sum(float(r["sum"]) for r in rows)
        count = sum(int(r["count"]) for r in rows)
        assert count == doc["count"]
        assert total / count == pytest.approx(doc["mean"], abs=1e-12)
        assert json.loads(trained.probe.read_text())["mean"] == doc["mean"]

    def test_probe_without_checkpoint(self, trained):
        for path in trained.checkpoints.iterdir():
            path.unlink()
        with pytest.raises(FileNotFoundError):
            cmd_probe(trained.root, 12)

    def test_probe_without_run(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            cmd_probe(tmp_path / "nothing", 12)

    def test_plot(self, trained):
        written = cmd_plot(trained.root, n_samples=20)
        assert [p.name for p in written] == ["scatter.svg", "losses.svg", "interpolation.svg"]
        assert all(p.read_text().lstrip().startswith("<?xml") for p in written)

    def test_interpolation_ends_use_the_evaluation_stream(self, trained, tiny_experiment, monkeypatch):
        seen = []
        real_interpolation = harness.latent_interpolation

        def spy(params, spec, z_a, z_b, *args, **kwargs):
            seen.append((z_a, z_b))
            return real_interpolation(params, spec, z_a, z_b, *args, **kwargs)

        monkeypatch.setattr(harness, "latent_interpolation", spy)
        cmd_plot(trained.root, n_samples=20)
        ckpt = trained.final_checkpoint()
        rng = make_rng(tiny_experiment.train.seed, "evaluation")
        generate_samples(ckpt.gen_params, ckpt.gen_spec, 20, rng)
        sample_components(tiny_experiment.dataset.mixture(), 20, rng)
        expected = standard_normal(rng, (2, ckpt.gen_spec.input_dim))
        (z_a, z_b), = seen
        np.testing.assert_array_equal(np.stack([z_a, z_b]), expected)

    def test_similarity_map(self, trained):
        matrix = cmd_similarity_map(trained.root, n_per_mode=4)
        assert matrix.shape == (8, 8)
        doc = json.loads(trained.similarity_map.read_text())
        assert 0 < doc["within_mode_mean"] < 1 and 0 < doc["between_mode_mean"] < 1
        assert (trained.plots / "similarity_map.svg").exists()


def test_verify_passes():
    results = cmd_verify(seed=0, n_draws=10, n_instances=20)
    assert [r.name for r in results] == ["gaussian_product", "raw_gram_oracle", "dp_loss_oracle", "dp_gradient"]
    assert all(r.passed for r in results)


# ============================================================
# LONG STATISTICAL RUNS
# ============================================================

def _default_compare(tmp_path, dataset, **overrides):
    data = {"dataset": {"name": dataset}, "n_seeds": 5, "lambdas": [0, 0.1, 1, 5, 10],
            "metrics": {"n_eval_samples": 2500, "probe_pairs": 100}}
    data.update(overrides)
    return cmd_compare(parse_config(data), tmp_path, workers=4, quiet=True)


def _best_pdpm_modes(report):
    return max(cell["modes_captured"]["mean"] for label, cell in report.cells.items() if label != "GAN")


@pytest.mark.slow
@pytest.mark.parametrize("dataset", ["ring8", "grid25"])
def test_penalty_captures_more_modes(dataset, tmp_path):
    report = _default_compare(tmp_path, dataset)
    baseline = report.cells["GAN"]["modes_captured"]["mean"]
    assert _best_pdpm_modes(report) > baseline
    if dataset == "grid25":
        assert _best_pdpm_modes(report) >= 18


@pytest.mark.slow
def test_wgan_gp_grid_sanity(tmp_path):
    report = _default_compare(tmp_path, "grid25", train={"objective": "wgan_gp"})
    good = [r for r in report.runs if r.label == "GAN"
            and r.report["hq_fraction"] >= 0.5 and r.report["modes_captured"] >= 15]
    assert len(good) >= 3
    assert _best_pdpm_modes(report) >= report.cells["GAN"]["modes_captured"]["mean"]


@pytest.mark.slow
def test_penalty_raises_near_duplicate_similarity(tmp_path):
    report = _default_compare(tmp_path, "grid25", lambdas=[0, 1])
    by_seed = {}
    for r in report.runs:
        by_seed.setdefault(r.seed, {})[r.label] = r.report["mean_latent_similarity_of_near_duplicates"]
    wins = sum(1 for v in by_seed.values()
               if None not in v.values() and v["GAN_PDPM_lam=1_s=1"] > v["GAN"])
    assert wins >= 4


@pytest.mark.slow
def test_near_duplicate_similarity_separates_ring_pair(tmp_path):
    wins = 0
    for seed in range(3):
        means = {}
        for lam in (0.0, 1.0):
            config = parse_config({"dataset": {"name": "ring8"}, "train": {"lam": lam, "seed": seed},
                                   "metrics": {"n_eval_samples": 2000, "run_probe": False}})
            run = cmd_train(config, tmp_path / f"lam{lam:g}_seed{seed}", quiet=True)
            means[lam] = cmd_probe(run.root, 200)["mean"]
        wins += means[1.0] > means[0.0]
    assert wins >= 2
