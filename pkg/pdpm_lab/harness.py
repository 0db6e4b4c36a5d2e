"""
Experiment Harness
==================
Orchestrates runs on disk. A run directory always looks like:

    <run>/
        config.json        fully resolved ExperimentConfig (seeds, defaults echoed)
        losses.csv         step,L_G,L_D,DP,ms,wallclock_ms
        checkpoints/       step_XXXXXXXX.json (hex-float JSON)
        metrics.json       final MetricsReport
        probe.json         near-duplicate statistic (after `probe`)
        probe_histogram.csv
        similarity_map.json
        plots/             scatter.svg, losses.svg, interpolation.svg, similarity_map.svg

A comparison writes one run directory per (cell, seed) under
<out>/compare/<label>/seed_<n>/ plus report.json and table.txt at <out>/compare/.
"""

import csv
import json
import logging
import multiprocessing
import queue as queue_module
import sys
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.special import expit
from tqdm import tqdm

from .autodiff import finite_diff_check
from .config import ExperimentConfig, MixtureConfig, dump_config, parse_config
from .errors import ConfigError, IncompleteComparison, LabError
from .metrics import (evaluate_generator, generate_samples, latent_interpolation,
                      mode_similarity_matrix, near_duplicate_similarity_stat, summarize)
from .models import Checkpoint, latest_checkpoint, load_checkpoint
from .seeding import make_rng, standard_normal
from .similarity import diversity_penalty, raw_gram, verify_gaussian_product
from .synthetic_data import dump_dataset, sample_components
from .training import read_loss_csv, train, write_loss_csv
from . import plotting

logger = logging.getLogger(__name__)

BASELINE_LABEL = "GAN"
MS_LABEL = "GAN_MS"
PDPM_LABEL = "GAN_PDPM"
MS_COEFFICIENT = 1.0
MIN_COMPARE_SEEDS = 3
PROGRESS_MESSAGES = 100     # per run, from compare workers


# ============================================================
# RUN DIRECTORY
# ============================================================

@dataclass
class RunDirectory:
    root: Path

    def __post_init__(self):
        self.root = Path(self.root)

    @property
    def config(self) -> Path:
        return self.root / "config.json"

    @property
    def losses(self) -> Path:
        return self.root / "losses.csv"

    @property
    def checkpoints(self) -> Path:
        return self.root / "checkpoints"

    @property
    def metrics(self) -> Path:
        return self.root / "metrics.json"

    @property
    def probe(self) -> Path:
        return self.root / "probe.json"

    @property
    def probe_histogram(self) -> Path:
        return self.root / "probe_histogram.csv"

    @property
    def similarity_map(self) -> Path:
        return self.root / "similarity_map.json"

    @property
    def plots(self) -> Path:
        return self.root / "plots"

    def load_config(self) -> ExperimentConfig:
        if not self.config.exists():
            raise FileNotFoundError(f"No config snapshot in run directory: {self.config}")
        return parse_config(json.loads(self.config.read_text()))

    def final_checkpoint(self) -> Checkpoint:
        found = latest_checkpoint(self.checkpoints)
        if found is None:
            raise FileNotFoundError(f"No checkpoint in {self.checkpoints}")
        return load_checkpoint(found)


def write_json(data: dict, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n")
    return path


# ============================================================
# TRAIN
# ============================================================

def cmd_train(config: ExperimentConfig, out_dir: Union[str, Path], *, resume: bool = False,
              quiet: bool = False, plot: bool = False, progress=None) -> RunDirectory:
    """
    Train one run and write every artifact of its run directory.

    Raises:
        ConfigError: invalid configuration
        TrainingAborted: non-finite value; checkpoints written so far stay on disk
    """
    config = config.validate()
    run = RunDirectory(out_dir)
    run.root.mkdir(parents=True, exist_ok=True)
    if resume and run.config.exists():
        saved = run.load_config()
        if saved.to_dict() != config.to_dict():
            raise ConfigError([("<root>", f"config differs from the snapshot in {run.config}")])
    dump_config(config, run.config)
    mixture = config.dataset.mixture()

    bar = None
    if progress is None:
        bar = tqdm(total=config.train.total_generator_steps, desc=run.root.name, unit="step",
                   file=sys.stderr, disable=True if quiet else None, leave=False)

        def progress(done: int, total: int) -> None:
            bar.n = done
            bar.refresh()
    try:
        result = train(config.train, mixture, checkpoint_dir=run.checkpoints, resume=resume,
                       progress=progress)
    finally:
        if bar is not None:
            bar.close()

    write_loss_csv(result.history, run.losses)
    report, _ = evaluate_generator(result.gen_params, result.gen_spec, mixture, config.metrics,
                                   make_rng(config.train.seed, "evaluation"),
                                   probe_rng=make_rng(config.train.seed, "probe"), s=config.train.s)
    write_json(report.to_dict(), run.metrics)
    logger.info("Run %s: modes %d/%d  hq %.3f  frechet %.4f", run.root, report.modes_captured,
                report.n_modes, report.hq_fraction, report.frechet)
    if plot:
        cmd_plot(run.root)
    return run


# ============================================================
# COMPARE
# ============================================================

@dataclass
class Cell:
    """One row of the comparison table."""
    label: str
    lam: float
    s: float
    lam_ms: float = 0.0

    @property
    def slug(self) -> str:
        return self.label.replace(" ", "_")


def comparison_cells(config: ExperimentConfig) -> list[Cell]:
    """Baseline, optional mode-seeking row, then one PDPM row per (lambda > 0, s)."""
    cells = [Cell(BASELINE_LABEL, 0.0, config.train.s)]
    if config.include_ms:
        cells.append(Cell(MS_LABEL, 0.0, config.train.s, MS_COEFFICIENT))
    for lam in config.lambdas:
        if lam == 0:
            continue
        for s in config.scales:
            cells.append(Cell(f"{PDPM_LABEL}_lam={lam:g}_s={s:g}", lam, s))
    return cells


def cell_config(config: ExperimentConfig, cell: Cell, seed: int) -> ExperimentConfig:
    train_cfg = replace(config.train, lam=cell.lam, s=cell.s, lam_ms=cell.lam_ms, seed=seed)
    return replace(config, train=train_cfg, seeds=[seed], n_seeds=1)


def _run_cell(config_data: dict, run_dir: str, label: str, seed: int, progress_queue=None) -> dict:
    """Worker entry point: one isolated run, configuration passed by value."""
    config = parse_config(config_data)
    total = config.train.total_generator_steps
    every = max(1, total // PROGRESS_MESSAGES)

    def progress(done: int, total: int) -> None:
        if progress_queue is not None and (done % every == 0 or done == total):
            progress_queue.put((label, seed, done, total))

    run = cmd_train(config, run_dir, quiet=True, progress=progress)
    return json.loads(run.metrics.read_text())


@dataclass
class RunEntry:
    label: str
    lam: float
    s: float
    lam_ms: float
    seed: int
    run_dir: str
    report: Optional[dict] = None
    error: Optional[str] = None


@dataclass
class AggregateReport:
    dataset: str
    seeds: list[int]
    runs: list[RunEntry]
    cells: dict = field(default_factory=dict)     # label -> summary statistics
    deltas: dict = field(default_factory=dict)    # label -> paired difference to the baseline
    complete: bool = True
    failures: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "AggregateReport":
        runs = [RunEntry(**r) for r in data["runs"]]
        return cls(dataset=data["dataset"], seeds=list(data["seeds"]), runs=runs,
                   cells=data.get("cells", {}), deltas=data.get("deltas", {}),
                   complete=data.get("complete", True), failures=list(data.get("failures", [])))


METRIC_KEYS = ("modes_captured", "hq_fraction", "frechet", "mean_latent_similarity_of_near_duplicates")


def aggregate_reports(report: AggregateReport) -> AggregateReport:
    """
    Recompute cell statistics and baseline deltas from the stored per-run
    reports alone. Applying it twice gives the same result.
    """
    labels = list(dict.fromkeys(r.label for r in report.runs))
    cells, deltas = {}, {}
    baseline = {r.seed: r.report for r in report.runs if r.label == BASELINE_LABEL and r.report}
    for label in labels:
        entries = [r for r in report.runs if r.label == label]
        done = [r for r in entries if r.report is not None]
        first = entries[0]
        cells[label] = {"lam": first.lam, "s": first.s, "lam_ms": first.lam_ms,
                        "runs": len(done), "expected": len(entries)}
        for key in METRIC_KEYS:
            cells[label][key] = summarize([r.report[key] for r in done])

        paired = {}
        for key in METRIC_KEYS:
            diffs = [r.report[key] - baseline[r.seed][key] for r in done
                     if r.seed in baseline and r.report[key] is not None
                     and baseline[r.seed][key] is not None]
            paired[key] = summarize(diffs)
        deltas[label] = paired

    failures = [f"{r.label} seed {r.seed}: {r.error}" for r in report.runs if r.report is None]
    return replace(report, cells=cells, deltas=deltas, failures=failures, complete=not failures)


def _fmt(stat: dict, digits: int = 2) -> str:
    if stat["mean"] is None:
        return "n/a"
    return f"{stat['mean']:.{digits}f} +/- {stat['std']:.{digits}f}"


def format_table(report: AggregateReport) -> str:
    """Text table: one row per cell with modes, high-quality fraction, Frechet and the probe statistic."""
    header = ["Method", "runs", "modes", "h-q", "frechet", "nd-sim", "d modes"]
    rows = [header]
    for label, cell in report.cells.items():
        rows.append([
            label,
            f"{cell['runs']}/{cell['expected']}",
            _fmt(cell["modes_captured"], 1),
            _fmt(cell["hq_fraction"], 3),
            _fmt(cell["frechet"], 4),
            _fmt(cell["mean_latent_similarity_of_near_duplicates"], 3),
            _fmt(report.deltas[label]["modes_captured"], 1),
        ])
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = [f"{report.dataset}  seeds={report.seeds}"]
    for i, row in enumerate(rows):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    if not report.complete:
        lines.append(f"INCOMPLETE: {len(report.failures)} run(s) failed")
    return "\n".join(lines) + "\n"


def cmd_compare(config: ExperimentConfig, out_dir: Union[str, Path], *, workers: Optional[int] = None,
                quiet: bool = False) -> AggregateReport:
    """
    Train every comparison cell for every seed under identical per-seed RNG
    streams and write report.json / table.txt.

    Raises:
        ConfigError: fewer than 3 seeds or invalid configuration
        IncompleteComparison: some runs failed (report is written first)
    """
    config = config.validate()
    seeds = config.seed_list()
    if len(seeds) < MIN_COMPARE_SEEDS:
        raise ConfigError([("seeds", f"compare needs at least {MIN_COMPARE_SEEDS} seeds, got {len(seeds)}")])
    workers = workers or config.workers
    root = Path(out_dir) / "compare"
    root.mkdir(parents=True, exist_ok=True)
    dump_config(config, root / "config.json")

    cells = comparison_cells(config)
    entries = [RunEntry(cell.label, cell.lam, cell.s, cell.lam_ms, seed,
                        str(root / cell.slug / f"seed_{seed}"))
               for cell in cells for seed in seeds]
    jobs = {(cell.label, seed): cell_config(config, cell, seed).to_dict() for cell in cells for seed in seeds}
    logger.info("Comparing %d cells x %d seeds on %s with %d worker(s)",
                len(cells), len(seeds), config.dataset.name, workers)

    steps = config.train.total_generator_steps
    bar = tqdm(total=steps * len(entries), desc="compare", unit="step", file=sys.stderr,
               disable=True if quiet else None)
    try:
        if workers == 1:
            _compare_sequential(entries, jobs, bar)
        else:
            _compare_parallel(entries, jobs, workers, bar)
    finally:
        bar.close()

    report = aggregate_reports(AggregateReport(dataset=config.dataset.name, seeds=seeds, runs=entries))
    write_json(report.to_dict(), root / "report.json")
    (root / "table.txt").write_text(format_table(report))
    if not report.complete:
        for failure in report.failures:
            logger.error("Run failed: %s", failure)
        raise IncompleteComparison(report.failures, report)
    return report


def _compare_sequential(entries: list[RunEntry], jobs: dict, bar) -> None:
    for entry in entries:
        position = bar.n

        def progress(done: int, total: int) -> None:
            bar.n = position + done
            bar.refresh()

        try:
            run = cmd_train(parse_config(jobs[(entry.label, entry.seed)]), entry.run_dir,
                            quiet=True, progress=progress)
            entry.report = json.loads(run.metrics.read_text())
        except LabError as exc:
            entry.error = str(exc)


def _compare_parallel(entries: list[RunEntry], jobs: dict, workers: int, bar) -> None:
    """Worker pool; progress arrives as (label, seed, done, total) messages on a manager queue."""
    done_by_run: dict[tuple[str, int], int] = {}
    with multiprocessing.Manager() as manager:
        progress_queue = manager.Queue()
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = {
                executor.submit(_run_cell, jobs[(e.label, e.seed)], e.run_dir, e.label, e.seed,
                                progress_queue): e
                for e in entries
            }
            pending = set(futures)
            while pending:
                finished, pending = wait(pending, timeout=0.5, return_when=FIRST_COMPLETED)
                _drain(progress_queue, done_by_run, bar)
                for future in finished:
                    entry = futures[future]
                    try:
                        entry.report = future.result()
                    except LabError as exc:
                        entry.error = str(exc)
                    except Exception as exc:  # worker crash, pickling failure
                        entry.error = f"{type(exc).__name__}: {exc}"
            _drain(progress_queue, done_by_run, bar)


def _drain(progress_queue, done_by_run: dict, bar) -> None:
    while True:
        try:
            label, seed, done, _total = progress_queue.get_nowait()
        except queue_module.Empty:
            return
        done_by_run[(label, seed)] = done
        bar.n = sum(done_by_run.values())
        bar.refresh()


# ============================================================
# PROBE / PLOT / SIMILARITY MAP
# ============================================================

def cmd_probe(run_dir: Union[str, Path], n_pairs: int = 200, *, mse_threshold: Optional[float] = None,
              steps: Optional[int] = None, seed: Optional[int] = None) -> dict:
    """
    Near-duplicate latent similarity of the final generator; writes probe.json
    and probe_histogram.csv (bin_lo, bin_hi, count, sum).

    Raises:
        FileNotFoundError: no config snapshot or checkpoint
        InsufficientDataError: fewer than 10 converged pairs
    """
    run = RunDirectory(run_dir)
    config = run.load_config()
    ckpt = run.final_checkpoint()
    settings = config.metrics
    threshold = settings.mse_threshold if mse_threshold is None else mse_threshold
    stat = near_duplicate_similarity_stat(
        ckpt.gen_params, ckpt.gen_spec, n_pairs, threshold,
        make_rng(config.train.seed if seed is None else seed, "probe"),
        steps=settings.probe_steps if steps is None else steps, lr=settings.probe_lr,
        s=config.train.s, bins=settings.histogram_bins, candidates=settings.probe_candidates)

    doc = stat.to_dict()
    doc.update({"step": ckpt.step, "mse_threshold": threshold, "s": config.train.s})
    write_json(doc, run.probe)

    sims = np.array(stat.similarities)
    edges = stat.histogram_edges
    with open(run.probe_histogram, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["bin_lo", "bin_hi", "count", "sum"])
        for i, count in enumerate(stat.histogram_counts):
            last = i == len(stat.histogram_counts) - 1
            in_bin = (sims >= edges[i]) & ((sims <= edges[i + 1]) if last else (sims < edges[i + 1]))
            writer.writerow([repr(edges[i]), repr(edges[i + 1]), count, repr(float(sims[in_bin].sum()))])
    logger.info("Probe: mean similarity %.4f over %d/%d converged pairs", stat.mean, stat.count, n_pairs)
    return doc


def cmd_plot(run_dir: Union[str, Path], n_samples: Optional[int] = None) -> list[Path]:
    """Render the run's SVG figures from its checkpoint and loss history."""
    run = RunDirectory(run_dir)
    config = run.load_config()
    history = read_loss_csv(run.losses)
    ckpt = run.final_checkpoint()
    mixture = config.dataset.mixture()
    n = config.plots.n_samples if n_samples is None else n_samples

    rng = make_rng(config.train.seed, "evaluation")
    generated = generate_samples(ckpt.gen_params, ckpt.gen_spec, n, rng)
    real, _ = sample_components(mixture, n, rng)
    written = []
    title = f"{config.dataset.name}  lambda={config.train.lam:g}  step {ckpt.step}"
    if config.plots.scatter:
        plotting.scatter_svg(mixture, generated, run.plots / "scatter.svg", real=real, title=title)
        written.append(run.plots / "scatter.svg")
    if config.plots.losses:
        written.append(plotting.loss_curves_svg(history, run.plots / "losses.svg", title=title))
    if config.plots.interpolation:
        ends = standard_normal(rng, (2, ckpt.gen_spec.input_dim))
        path_points = latent_interpolation(ckpt.gen_params, ckpt.gen_spec, ends[0], ends[1])
        plotting.scatter_svg(mixture, generated, run.plots / "interpolation.svg", real=real,
                             path_points=path_points, title=title)
        written.append(run.plots / "interpolation.svg")
    return written


def cmd_similarity_map(run_dir: Union[str, Path], n_per_mode: int = 64) -> np.ndarray:
    """Mode-by-mode feature similarity of the final discriminator; JSON + SVG heatmap."""
    run = RunDirectory(run_dir)
    config = run.load_config()
    ckpt = run.final_checkpoint()
    mixture = config.dataset.mixture()
    matrix = mode_similarity_matrix(ckpt.disc_params, ckpt.disc_spec, mixture, n_per_mode,
                                    make_rng(config.train.seed, "evaluation"), s=config.train.s)
    within = float(np.mean(np.diag(matrix)))
    between = float(matrix[~np.eye(len(matrix), dtype=bool)].mean()) if len(matrix) > 1 else within
    write_json({"matrix": matrix.tolist(), "within_mode_mean": within, "between_mode_mean": between,
                "n_per_mode": n_per_mode, "step": ckpt.step}, run.similarity_map)
    plotting.similarity_heatmap_svg(matrix, run.plots / "similarity_map.svg",
                                    title=f"feature similarity by mode (step {ckpt.step})")
    logger.info("Similarity map: within-mode %.4f  between-mode %.4f", within, between)
    return matrix


def cmd_dump_data(dataset: MixtureConfig, n: int, seed: int, path: Union[str, Path]) -> Path:
    return dump_dataset(dataset.mixture(), n, make_rng(seed, "dataset_dump"), Path(path))


# ============================================================
# VERIFY
# ============================================================

@dataclass
class CheckResult:
    name: str
    instances: int
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def _loop_gram(batch: np.ndarray) -> np.ndarray:
    m = len(batch)
    out = np.empty((m, m))
    for i in range(m):
        for j in range(m):
            out[i, j] = sum(a * b for a, b in zip(batch[i], batch[j])) / (
                np.sqrt(sum(a * a for a in batch[i])) * np.sqrt(sum(b * b for b in batch[j])))
    return out


def _loop_dp(latents: np.ndarray, features: np.ndarray, s: float) -> float:
    gz, gf = _loop_gram(latents), _loop_gram(features)
    m = len(latents)
    total = 0.0
    for i in range(m):
        for j in range(m):
            total += expit(s * gf[i, j]) / expit(s * gz[i, j])
    return total / (m * m)


def cmd_verify(seed: int = 0, n_draws: int = 50, n_instances: int = 100) -> list[CheckResult]:
    """Gaussian-product claim, Gram and DP loop oracles, and DP gradient checks on random instances."""
    rng = np.random.default_rng(seed)
    results = []

    worst = 0.0
    for _ in range(n_draws):
        mu_f, mu_g = rng.uniform(-3.0, 3.0, size=2)
        sigma_f, sigma_g = rng.uniform(0.2, 3.0, size=2)
        worst = max(worst, verify_gaussian_product(mu_f, sigma_f, mu_g, sigma_g).max_proportionality_error)
    results.append(CheckResult("gaussian_product", n_draws, worst, 1e-8))

    worst = 0.0
    for _ in range(n_instances):
        m, d = rng.integers(2, 17), rng.integers(1, 17)
        batch = rng.normal(size=(m, d))
        worst = max(worst, float(np.max(np.abs(raw_gram(batch).numpy() - _loop_gram(batch)))))
    results.append(CheckResult("raw_gram_oracle", n_instances, worst, 1e-12))

    worst = 0.0
    for _ in range(n_instances):
        m, d, k = rng.integers(2, 13), rng.integers(1, 9), rng.integers(1, 9)
        z, features = rng.normal(size=(m, d)), rng.normal(size=(m, k))
        s = rng.uniform(0.5, 3.0)
        worst = max(worst, abs(diversity_penalty(z, features, s).item() - _loop_dp(z, features, s)))
    results.append(CheckResult("dp_loss_oracle", n_instances, worst, 1e-12))

    worst = 0.0
    for _ in range(20):
        z = rng.normal(size=(6, 4))
        features = rng.normal(size=(6, 5))
        worst = max(worst, finite_diff_check(lambda f: diversity_penalty(z, f), features))
    results.append(CheckResult("dp_gradient", 20, worst, 1e-5))

    for r in results:
        logger.info("verify %-18s max error %.3e (tolerance %.0e) %s", r.name, r.max_error, r.tolerance,
                    "ok" if r.passed else "FAILED")
    return results
