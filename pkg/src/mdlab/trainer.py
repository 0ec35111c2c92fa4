"""Masked-denoising training: standard corruption plus the bucket-driven
trajectory variant, and the loop that mixes them.

Standard corruption masks each completion token independently with
probability t. Trajectory corruption instead samples a stage threshold k
uniformly from {0..K-1} and masks tokens in buckets above k with
p_future (default 0.95) and the rest with p_context (default 0.05),
simulating an intermediate decoding state where earlier-stage tokens are
already visible. The bucket rule fully determines the mask state: it
replaces, not compounds, the t-corruption for trajectory draws. A fraction
trajectory_ratio of example draws (an independent coin per draw) use the
trajectory variant; everything else is standard.

The loss is a cross-entropy over masked completion positions, either
averaged per position (``unweighted``) or summed and scaled by the
diffusion weight |alpha_dot(t)| / (1 - alpha(t)) — 1/t for the default
linear schedule — clipped at ``weight_clip`` (``elbo``). Prompt tokens are
never masked and never contribute loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import tensor as T
from .corpus import Example, MASK_ID, PAD_ID
from .errors import ConfigError, DataError, NumericalError
from .model import Checkpoint, forward_logits_batch
from .optim import cosine_lr, init_optim, optim_step
from .tensor import Tensor

_DRAW_SALT = 4
_ORDER_SALT = 6


@dataclass
class NoiseSchedule:
    """Corruption level schedule alpha(t) and its derivative."""

    alpha: Callable[[float], float]
    alpha_dot: Callable[[float], float]
    name: str = "linear"


def linear_schedule() -> NoiseSchedule:
    return NoiseSchedule(alpha=lambda t: 1.0 - t, alpha_dot=lambda t: -1.0)


def elbo_weight(t: float, schedule: NoiseSchedule, weight_clip: float) -> float:
    """|alpha_dot| / (1 - alpha), clipped; equals min(1/t, clip) when linear."""
    denom = 1.0 - schedule.alpha(t)
    if denom <= 0.0:
        return weight_clip
    return min(abs(schedule.alpha_dot(t)) / denom, weight_clip)


@dataclass
class TrainConfig:
    p_context: float = 0.05
    p_future: float = 0.95
    trajectory_ratio: float = 0.10
    k: int = 8
    ordering: str = "hard_to_easy"
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 0.01
    warmup_ratio: float = 0.03
    loss_weighting: str = "elbo"
    weight_clip: float = 20.0
    seed: int = 0
    schedule: NoiseSchedule = field(default_factory=linear_schedule)

    def validate(self):
        if not (0.0 <= self.p_context <= self.p_future <= 1.0):
            raise ConfigError(
                f"need 0 <= p_context <= p_future <= 1, got "
                f"p_context={self.p_context}, p_future={self.p_future}"
            )
        if not (0.0 <= self.trajectory_ratio <= 1.0):
            raise ConfigError(f"trajectory_ratio must be in [0,1], got {self.trajectory_ratio}")
        if self.k < 1:
            raise ConfigError(f"bucket count must be >= 1, got {self.k}")
        if self.loss_weighting not in ("elbo", "unweighted"):
            raise ConfigError(
                f"loss_weighting must be 'elbo' or 'unweighted', got {self.loss_weighting!r}"
            )
        if self.weight_clip <= 0:
            raise ConfigError(f"weight_clip must be positive, got {self.weight_clip}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")


def corrupt_standard(x0, t: float, rng) -> np.ndarray:
    """Mask each completion token independently with probability t."""
    if not (0.0 <= t <= 1.0):
        raise ConfigError(f"corruption level t must be in [0,1], got {t}")
    x0 = np.asarray(x0)
    z = x0.copy()
    z[rng.random(len(x0)) < t] = MASK_ID
    return z


def corrupt_trajectory(x0, bucket_ids, k: int, config: TrainConfig, rng) -> np.ndarray:
    """Mask by stage: buckets above k with p_future, the rest with p_context."""
    if bucket_ids is None:
        raise DataError("trajectory corruption needs bucket_ids; bucket the corpus first")
    x0 = np.asarray(x0)
    bucket_ids = np.asarray(bucket_ids)
    if bucket_ids.shape != x0.shape:
        raise DataError(
            f"bucket_ids shape {bucket_ids.shape} != completion shape {x0.shape}"
        )
    if not (0 <= k <= config.k - 1):
        raise ConfigError(f"bucket threshold k={k} outside {{0..{config.k - 1}}}")
    p = np.where(bucket_ids > k, config.p_future, config.p_context)
    z = x0.copy()
    z[rng.random(len(x0)) < p] = MASK_ID
    return z


def mdlm_loss(logits: Tensor, x0, mask_indicator, t: float,
              schedule: NoiseSchedule | None = None, weighting: str = "elbo",
              weight_clip: float = 20.0) -> Tensor:
    """Loss over masked completion positions for one example.

    unweighted: mean of -log p over masked positions. elbo: sum of -log p
    over masked positions times the clipped schedule weight at t. Zero when
    nothing is masked.
    """
    if schedule is None:
        schedule = linear_schedule()
    x0 = np.asarray(x0)
    mask = np.asarray(mask_indicator, dtype=bool)
    if mask.shape != x0.shape or logits.data.shape[:-1] != x0.shape:
        raise ConfigError(
            f"mdlm_loss: logits {logits.data.shape}, targets {x0.shape}, "
            f"mask {mask.shape} are inconsistent"
        )
    weights = np.zeros(x0.shape, dtype=np.float64)
    m = int(mask.sum())
    if m > 0:
        if weighting == "unweighted":
            weights[mask] = 1.0 / m
        elif weighting == "elbo":
            weights[mask] = elbo_weight(t, schedule, weight_clip)
        else:
            raise ConfigError(f"unknown loss weighting {weighting!r}")
    return T.masked_cross_entropy(logits, x0, weights)


def _draw_rng(seed: int, epoch: int, example_index: int):
    # counter-based: one independent stream per (seed, epoch, example)
    return np.random.default_rng((seed, _DRAW_SALT, epoch, example_index))


def train(dataset: list[Example], student: Checkpoint, config: TrainConfig,
          log_hook: Callable[[dict], None] | None = None) -> tuple[Checkpoint, list[dict]]:
    """Run the mixed-corruption training loop on a bidirectional student.

    Returns the trained checkpoint (updated in place) and one log record per
    example draw: step, example index, mode, t, k, per-example loss.
    """
    config.validate()
    if not dataset:
        raise DataError("cannot train on an empty dataset")
    if student.config.attention_mode != "bidirectional":
        raise ConfigError("the masked-denoising student must be bidirectional")
    if config.trajectory_ratio > 0.0:
        for i, ex in enumerate(dataset):
            if ex.bucket_ids is None:
                raise DataError(
                    f"example {i}: trajectory_ratio > 0 needs bucket_ids on every example"
                )
            if ex.bucket_ids.max() >= config.k:
                raise DataError(
                    f"example {i}: bucket id {ex.bucket_ids.max()} outside K={config.k}"
                )

    params = student.params
    state = init_optim(params, lr=config.lr, weight_decay=config.weight_decay)
    n = len(dataset)
    steps_per_epoch = (n + config.batch_size - 1) // config.batch_size
    total_steps = steps_per_epoch * config.epochs
    log: list[dict] = []
    step = 0
    for epoch in range(config.epochs):
        order = np.random.default_rng((config.seed, _ORDER_SALT, epoch)).permutation(n)
        for start in range(0, n, config.batch_size):
            batch_ids = order[start:start + config.batch_size]
            batch = [dataset[i] for i in batch_ids]
            width = max(len(ex.prompt_tokens) + len(ex.completion_tokens) for ex in batch)
            if width > student.config.max_seq_len:
                raise ConfigError(
                    f"example of length {width} exceeds max_seq_len "
                    f"{student.config.max_seq_len}"
                )
            B = len(batch)
            tokens = np.full((B, width), PAD_ID, dtype=np.int64)
            targets = np.full((B, width), 0, dtype=np.int64)
            weights = np.zeros((B, width), dtype=np.float64)
            draws = []
            for r, (ds_idx, ex) in enumerate(zip(batch_ids, batch)):
                rng = _draw_rng(config.seed, epoch, int(ds_idx))
                trajectory = rng.random() < config.trajectory_ratio
                t = float(rng.random())
                p, c = len(ex.prompt_tokens), len(ex.completion_tokens)
                if trajectory:
                    k = int(rng.integers(config.k))
                    z = corrupt_trajectory(ex.completion_tokens, ex.bucket_ids, k,
                                           config, rng)
                else:
                    k = None
                    z = corrupt_standard(ex.completion_tokens, t, rng)
                masked = z == MASK_ID
                tokens[r, :p] = ex.prompt_tokens
                tokens[r, p:p + c] = z
                targets[r, p:p + c] = ex.completion_tokens
                m = int(masked.sum())
                if m > 0:
                    if config.loss_weighting == "unweighted":
                        w = 1.0 / m
                    else:
                        w = elbo_weight(t, config.schedule, config.weight_clip)
                    weights[r, p:p + c][masked] = w / B
                draws.append({"example": int(ds_idx), "mode":
                              "trajectory" if trajectory else "standard",
                              "t": t, "k": k})
            logits = forward_logits_batch(student, tokens)
            loss = T.masked_cross_entropy(logits, targets, weights)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(
                    f"non-finite training loss at step {step} (epoch {epoch}, "
                    f"examples {sorted(int(i) for i in batch_ids)})"
                )
            for p_ in params.values():
                p_.zero_grad()
            loss.backward()
            skipped = optim_step(params, state,
                                 lr=cosine_lr(step, total_steps, config.lr,
                                              config.warmup_ratio))
            nll = T.per_position_nll(logits.data, targets)
            for r, rec in enumerate(draws):
                rec = dict(rec)
                rec["step"] = step
                rec["loss"] = float((nll[r] * weights[r]).sum() * B)
                if skipped:
                    rec["skipped_params"] = len(skipped)
                log.append(rec)
                if log_hook is not None:
                    log_hook(rec)
            step += 1
    student.step_count += step
    return student, log
