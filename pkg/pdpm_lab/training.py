"""
Training
========
The alternating GAN schedule with the diversity penalty on the generator:

    for each generator step:
        repeat k times:
            z ~ p_z, x ~ p_r           (fresh batches of m)
            update D on L_D            (unchanged by the penalty)
        z ~ p_z
        update G on L_G = adversarial + lambda * DP(z) - lambda_ms * MS

DP uses the features of the just-updated discriminator on the same z batch
as the adversarial term. Only generator parameters receive its gradient.

Randomness comes from named streams (see seeding), so the batches drawn
depend on (seed, schedule) only, never on lambda.
"""

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from .autodiff import backward
from .errors import ConfigError, LabError, TrainingAborted
from .losses import OBJECTIVES, d_loss, g_loss, gradient_penalty, ms_regularizer
from .models import (Checkpoint, MlpParams, MlpSpec, discriminator_forward, discriminator_spec,
                     generator_forward, generator_spec, init_params, latest_checkpoint,
                     load_checkpoint, save_checkpoint)
from .optim import AdamState, adam_step
from .seeding import make_rng, restore_rng, rng_state
from .similarity import diversity_penalty
from .synthetic_data import MixtureSpec, PriorSpec, sample_latent, sample_real

logger = logging.getLogger(__name__)

DEFAULT_CRITIC_STEPS = {"vanilla": 1, "wgan_gp": 5}
LOSS_COLUMNS = ("step", "L_G", "L_D", "DP", "ms", "wallclock_ms")


# ============================================================
# CONFIGURATION
# ============================================================

@dataclass
class ModelConfig:
    """MLP sizes. Generator: latent -> depth x width ReLU -> 2. Discriminator: 2 -> depth x width LeakyReLU -> 1."""
    latent_dim: int = 32
    g_width: int = 128
    g_depth: int = 3
    d_width: int = 128
    d_depth: int = 3
    feature_layer_index: int = -1

    def generator(self) -> MlpSpec:
        return generator_spec(self.latent_dim, self.g_width, self.g_depth)

    def discriminator(self) -> MlpSpec:
        return discriminator_spec(self.d_width, self.d_depth, self.feature_layer_index)

    def problems(self, prefix: str = "train.model") -> list[tuple[str, str]]:
        found = []
        for name in ("latent_dim", "g_width", "g_depth", "d_width", "d_depth"):
            if getattr(self, name) < 1:
                found.append((f"{prefix}.{name}", "must be >= 1"))
        if self.d_depth >= 1 and not -self.d_depth <= self.feature_layer_index < self.d_depth:
            found.append((f"{prefix}.feature_layer_index", f"out of range for {self.d_depth} hidden layers"))
        return found


@dataclass
class TrainConfig:
    objective: str = "vanilla"
    lam: float = 1.0            # diversity penalty coefficient
    lam_ms: float = 0.0         # mode-seeking coefficient
    s: float = 1.0              # sigmoid scale of the similarity matrices
    m: int = 128                # batch size
    k: Optional[int] = None     # critic steps; None -> 1 (vanilla) / 5 (wgan_gp)
    total_generator_steps: int = 10_000
    lr: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8
    gp_coefficient: float = 10.0
    seed: int = 0
    checkpoint_interval: int = 1000
    log_interval: int = 500
    record_wallclock: bool = False
    model: ModelConfig = field(default_factory=ModelConfig)

    def resolved(self) -> "TrainConfig":
        """Copy with every implicit default made explicit."""
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        if values["k"] is None:
            values["k"] = DEFAULT_CRITIC_STEPS.get(self.objective, 1)
        values["model"] = ModelConfig(**asdict(self.model))
        return TrainConfig(**values)

    def problems(self, prefix: str = "train") -> list[tuple[str, str]]:
        found = []
        if self.objective not in OBJECTIVES:
            found.append((f"{prefix}.objective", f"must be one of {OBJECTIVES}"))
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            found.append((f"{prefix}.lam", "must be finite and >= 0"))
        if not (self.lam_ms >= 0 and math.isfinite(self.lam_ms)):
            found.append((f"{prefix}.lam_ms", "must be finite and >= 0"))
        if not math.isfinite(self.s):
            found.append((f"{prefix}.s", "must be finite"))
        if self.m < 2:
            found.append((f"{prefix}.m", "must be >= 2 (the penalty needs an off-diagonal pair)"))
        if self.k is not None and self.k < 1:
            found.append((f"{prefix}.k", "must be >= 1"))
        if self.total_generator_steps < 0:
            found.append((f"{prefix}.total_generator_steps", "must be >= 0"))
        if not self.lr > 0:
            found.append((f"{prefix}.lr", "must be > 0"))
        for name in ("beta1", "beta2"):
            if not 0 <= getattr(self, name) < 1:
                found.append((f"{prefix}.{name}", "must be in [0, 1)"))
        if not self.eps > 0:
            found.append((f"{prefix}.eps", "must be > 0"))
        if self.gp_coefficient < 0:
            found.append((f"{prefix}.gp_coefficient", "must be >= 0"))
        if self.checkpoint_interval < 1:
            found.append((f"{prefix}.checkpoint_interval", "must be >= 1"))
        if self.log_interval < 1:
            found.append((f"{prefix}.log_interval", "must be >= 1"))
        return found + self.model.problems(f"{prefix}.model")

    def validate(self) -> "TrainConfig":
        found = self.problems()
        if found:
            raise ConfigError(found)
        return self.resolved()

    def to_dict(self) -> dict:
        return asdict(self.resolved())

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)} - {"model"}
        values = {k: v for k, v in data.items() if k in known}
        model = ModelConfig(**data.get("model", {}))
        return cls(model=model, **values)


# ============================================================
# RUN STATE
# ============================================================

@dataclass
class StepRecord:
    step: int
    L_G: float
    L_D: float       # mean over the k critic updates of this step
    DP: float        # monitored even when lambda == 0
    ms: float
    wallclock_ms: float = 0.0

    def row(self) -> list[str]:
        return [str(self.step)] + [repr(float(getattr(self, c))) for c in LOSS_COLUMNS[1:]]


@dataclass
class TrainedRun:
    config: TrainConfig
    gen_spec: MlpSpec
    gen_params: MlpParams
    disc_spec: MlpSpec
    disc_params: MlpParams
    history: list[StepRecord]
    checkpoints: list[Path] = field(default_factory=list)
    adam_g: Optional[AdamState] = None
    adam_d: Optional[AdamState] = None


@dataclass
class _Streams:
    real: np.random.Generator
    latent: np.random.Generator
    gp: np.random.Generator

    @classmethod
    def fresh(cls, seed: int) -> "_Streams":
        return cls(real=make_rng(seed, "real_data"), latent=make_rng(seed, "latent"),
                   gp=make_rng(seed, "gradient_penalty"))

    def snapshot(self) -> dict:
        return {"real": rng_state(self.real), "latent": rng_state(self.latent), "gp": rng_state(self.gp)}

    @classmethod
    def restore(cls, states: dict) -> "_Streams":
        return cls(real=restore_rng(states["real"]), latent=restore_rng(states["latent"]),
                   gp=restore_rng(states["gp"]))


# ============================================================
# UPDATE STEPS
# ============================================================

def discriminator_update(config: TrainConfig, gen_spec: MlpSpec, gen_params: MlpParams,
                         disc_spec: MlpSpec, disc_params: MlpParams, adam_d: AdamState,
                         mixture: MixtureSpec, prior: PriorSpec,
                         streams: _Streams) -> tuple[MlpParams, AdamState, float]:
    """One critic update on fresh (z, x) batches. Identical for every lambda."""
    z = sample_latent(prior, config.m, streams.latent)
    x_real = sample_real(mixture, config.m, streams.real)
    x_fake = generator_forward(gen_params, gen_spec, z)  # constants: G is frozen here

    leaves = disc_params.bind()
    scores_real, _ = discriminator_forward(leaves, disc_spec, x_real)
    scores_fake, _ = discriminator_forward(leaves, disc_spec, x_fake)
    gp = None
    if config.objective == "wgan_gp":
        gp = gradient_penalty(leaves, disc_spec, x_real, x_fake, streams.gp)
    loss = d_loss(scores_fake, scores_real, config.objective, gp, config.gp_coefficient)

    grads = backward(loss, leaves)
    arrays, adam_d = adam_step(disc_params.arrays(), [g.data for g in grads], adam_d,
                               config.lr, config.beta1, config.beta2, config.eps)
    return MlpParams.from_arrays(arrays), adam_d, loss.item()


def generator_update(config: TrainConfig, gen_spec: MlpSpec, gen_params: MlpParams,
                     disc_spec: MlpSpec, disc_params: MlpParams, adam_g: AdamState,
                     prior: PriorSpec, streams: _Streams,
                     penalty_path: bool) -> tuple[MlpParams, AdamState, float, float, float]:
    """
    One generator update on a fresh z batch.

    With penalty_path False this is the plain baseline objective; DP and MS
    are still evaluated (for the loss history) but are not part of the loss.
    """
    z = sample_latent(prior, config.m, streams.latent)
    leaves = gen_params.bind()
    fakes = generator_forward(leaves, gen_spec, z)
    scores, features = discriminator_forward(disc_params, disc_spec, fakes)  # D frozen

    dp = diversity_penalty(z, features, config.s)
    ms = ms_regularizer(z, fakes)
    if penalty_path:
        loss = g_loss(scores, dp, ms, config.objective, config.lam, config.lam_ms)
    else:
        loss = g_loss(scores, objective=config.objective)

    grads = backward(loss, leaves)
    arrays, adam_g = adam_step(gen_params.arrays(), [g.data for g in grads], adam_g,
                               config.lr, config.beta1, config.beta2, config.eps)
    return MlpParams.from_arrays(arrays), adam_g, loss.item(), dp.item(), ms.item()


# ============================================================
# TRAINING LOOP
# ============================================================

ProgressFn = Callable[[int, int], None]


def checkpoint_path(directory: Path, step: int) -> Path:
    return Path(directory) / f"step_{step:08d}.json"


def clear_checkpoints(directory: Union[str, Path]) -> int:
    """Delete every step_XXXXXXXX.json in directory; returns how many were removed."""
    found = sorted(Path(directory).glob("step_*.json"))
    for path in found:
        path.unlink()
    return len(found)


def train(run_config: TrainConfig, mixture: MixtureSpec, *,
          checkpoint_dir: Optional[Union[str, Path]] = None,
          resume: bool = False,
          penalty_path: Optional[bool] = None,
          progress: Optional[ProgressFn] = None) -> TrainedRun:
    """
    Run the full schedule and return final parameters plus the loss history.

    Args:
        run_config: training configuration (validated here)
        mixture: real data distribution
        checkpoint_dir: where `step_XXXXXXXX.json` checkpoints go (None: no checkpoints)
        resume: continue from the latest checkpoint in checkpoint_dir; without
            it, checkpoints left there by an earlier run are deleted first
        penalty_path: force the penalized (True) or baseline (False) generator
            objective; None picks the penalized one iff lam or lam_ms is nonzero
        progress: called with (steps_done, total) after every generator step

    Raises:
        ConfigError: invalid configuration
        TrainingAborted: a non-finite value appeared
    """
    config = run_config.validate()
    gen_spec = config.model.generator()
    disc_spec = config.model.discriminator()
    prior = PriorSpec(d=config.model.latent_dim)
    if penalty_path is None:
        penalty_path = config.lam != 0 or config.lam_ms != 0
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None

    gen_params = init_params(gen_spec, make_rng(config.seed, "init_generator"))
    disc_params = init_params(disc_spec, make_rng(config.seed, "init_discriminator"))
    adam_g = AdamState.zeros_like(gen_params.arrays())
    adam_d = AdamState.zeros_like(disc_params.arrays())
    streams = _Streams.fresh(config.seed)
    history: list[StepRecord] = []
    checkpoints: list[Path] = []
    start = 0
    last_good: Optional[Path] = None

    if resume and ckpt_dir is not None:
        found = latest_checkpoint(ckpt_dir)
        if found is not None:
            ckpt = load_checkpoint(found)
            saved = TrainConfig.from_dict(ckpt.extra["config"]).to_dict()
            if saved != config.to_dict():
                raise ConfigError([("train", f"config differs from the one saved in {found}")])
            gen_params, disc_params = ckpt.gen_params, ckpt.disc_params
            adam_g = AdamState.from_dict(ckpt.extra["adam_g"])
            adam_d = AdamState.from_dict(ckpt.extra["adam_d"])
            streams = _Streams.restore(ckpt.extra["rng"])
            history = [StepRecord(**r) for r in ckpt.extra["history"]]
            start = ckpt.step
            last_good = found
            checkpoints.append(found)
            logger.info("Resuming from %s (generator step %d)", found, start)
    elif ckpt_dir is not None:
        stale = clear_checkpoints(ckpt_dir)
        if stale:
            logger.info("Removed %d checkpoint(s) of an earlier run from %s", stale, ckpt_dir)

    logger.info("Training %s on %s: lambda=%g lambda_ms=%g s=%g m=%d k=%d steps=%d seed=%d",
                config.objective, mixture.name, config.lam, config.lam_ms, config.s,
                config.m, config.k, config.total_generator_steps, config.seed)
    clock = time.perf_counter()

    for step in range(start, config.total_generator_steps):
        try:
            d_losses = []
            for _ in range(config.k):
                disc_params, adam_d, loss_d = discriminator_update(
                    config, gen_spec, gen_params, disc_spec, disc_params, adam_d, mixture, prior, streams)
                d_losses.append(loss_d)
            gen_params, adam_g, loss_g, dp, ms = generator_update(
                config, gen_spec, gen_params, disc_spec, disc_params, adam_g, prior, streams, penalty_path)
        except ConfigError:
            raise
        except LabError as exc:
            logger.error("%s at generator step %d: %s", type(exc).__name__, step, exc)
            raise TrainingAborted(step, str(exc), str(last_good) if last_good else None) from exc

        record = StepRecord(step=step, L_G=loss_g, L_D=float(np.mean(d_losses)), DP=dp, ms=ms)
        if not all(math.isfinite(v) for v in (record.L_G, record.L_D, record.DP, record.ms)):
            raise TrainingAborted(step, "non-finite loss", str(last_good) if last_good else None)
        if config.record_wallclock:
            record.wallclock_ms = round((time.perf_counter() - clock) * 1000.0, 3)
        history.append(record)

        done = step + 1
        if ckpt_dir is not None and (done % config.checkpoint_interval == 0
                                     or done == config.total_generator_steps):
            last_good = save_checkpoint(checkpoint_path(ckpt_dir, done), Checkpoint(
                step=done, seed=config.seed, gen_spec=gen_spec, gen_params=gen_params,
                disc_spec=disc_spec, disc_params=disc_params,
                extra={"config": config.to_dict(), "adam_g": adam_g.to_dict(), "adam_d": adam_d.to_dict(),
                       "rng": streams.snapshot(), "history": [asdict(r) for r in history]},
            ))
            checkpoints.append(last_good)
        if done % config.log_interval == 0:
            logger.info("step %d/%d  L_G=%.4f  L_D=%.4f  DP=%.4f",
                        done, config.total_generator_steps, record.L_G, record.L_D, record.DP)
        if progress is not None:
            progress(done, config.total_generator_steps)

    return TrainedRun(config=config, gen_spec=gen_spec, gen_params=gen_params,
                      disc_spec=disc_spec, disc_params=disc_params, history=history,
                      checkpoints=checkpoints, adam_g=adam_g, adam_d=adam_d)


# ============================================================
# LOSS HISTORY CSV
# ============================================================

def write_loss_csv(history: list[StepRecord], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(LOSS_COLUMNS)
        for record in history:
            writer.writerow(record.row())
    return path


def read_loss_csv(path: Union[str, Path]) -> list[StepRecord]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Loss history not found: {path}")
    with open(path, newline="") as f:
        return [StepRecord(step=int(row["step"]), L_G=float(row["L_G"]), L_D=float(row["L_D"]),
                           DP=float(row["DP"]), ms=float(row["ms"]),
                           wallclock_ms=float(row["wallclock_ms"]))
                for row in csv.DictReader(f)]
