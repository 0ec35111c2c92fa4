"""Causal next-token teacher: training and per-token difficulty scoring.

The teacher is trained with standard cross-entropy over prompt+completion
(loss on completion tokens only) and then scores each completion token of a
corpus with exactly one teacher-forcing forward pass per example. Difficulty
is either the token's negative log-likelihood under the teacher or the
Shannon entropy of the teacher's predictive distribution at that position;
both are in nats and nonnegative, and larger means harder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .corpus import Example, MASK_ID, PAD_ID, VOCAB_SIZE
from .errors import ConfigError, DataError, NumericalError
from .model import Checkpoint, ModelConfig, forward_logits, forward_logits_batch, init_model
from .optim import cosine_lr, init_optim, optim_step

METRIC_KINDS = ("nll", "entropy")

_ORDER_SALT = 3


def validate_metric(metric: str):
    if metric not in METRIC_KINDS:
        raise ConfigError(f"difficulty metric must be one of {METRIC_KINDS}, got {metric!r}")


@dataclass
class TeacherTrainConfig:
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    max_seq_len: int = 128
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 0.01
    warmup_ratio: float = 0.03
    eval_size: int = 256

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            vocab_size=VOCAB_SIZE, d_model=self.d_model, n_layers=self.n_layers,
            n_heads=self.n_heads, max_seq_len=self.max_seq_len,
            attention_mode="causal", mask_id=MASK_ID, pad_id=PAD_ID,
        )


def _next_token_batch(examples: list[Example], max_len: int):
    """Pad to a common length; weights select positions predicting completion tokens."""
    lengths = [len(ex.prompt_tokens) + len(ex.completion_tokens) for ex in examples]
    width = max(lengths)
    if width > max_len:
        raise ConfigError(f"example of length {width} exceeds max_seq_len {max_len}")
    tokens = np.full((len(examples), width), PAD_ID, dtype=np.int64)
    weights = np.zeros((len(examples), width), dtype=np.float64)
    for r, ex in enumerate(examples):
        p, c = len(ex.prompt_tokens), len(ex.completion_tokens)
        tokens[r, :p] = ex.prompt_tokens
        tokens[r, p:p + c] = ex.completion_tokens
        weights[r, p - 1:p + c - 1] = 1.0   # logits at j predict token j+1
    targets = np.roll(tokens, -1, axis=1)
    targets[:, -1] = 0
    return tokens, targets, weights


def _mean_next_token_loss(model: Checkpoint, examples: list[Example]) -> float:
    with T.no_grad():
        tokens, targets, weights = _next_token_batch(examples, model.config.max_seq_len)
        logits = forward_logits_batch(model, tokens).data
        nll = T.per_position_nll(logits, targets)
        return float((nll * weights).sum() / weights.sum())


def train_teacher(dataset: list[Example], config: TeacherTrainConfig,
                  seed: int) -> tuple[Checkpoint, list[dict]]:
    """Train the causal teacher; returns the checkpoint and per-epoch log."""
    if not dataset:
        raise DataError("cannot train a teacher on an empty dataset")
    model = init_model(config.model_config(), seed)
    params = model.params
    state = init_optim(params, lr=config.lr, weight_decay=config.weight_decay)
    n = len(dataset)
    steps_per_epoch = (n + config.batch_size - 1) // config.batch_size
    total_steps = steps_per_epoch * config.epochs
    eval_slice = dataset[:min(config.eval_size, n)]
    log: list[dict] = []
    step = 0
    for epoch in range(config.epochs):
        order = np.random.default_rng((seed, _ORDER_SALT, epoch)).permutation(n)
        epoch_losses = []
        for start in range(0, n, config.batch_size):
            batch = [dataset[i] for i in order[start:start + config.batch_size]]
            tokens, targets, weights = _next_token_batch(batch, config.max_seq_len)
            logits = forward_logits_batch(model, tokens)
            loss = T.masked_cross_entropy(logits, targets, weights / weights.sum())
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(f"non-finite teacher loss at step {step}")
            for p in params.values():
                p.zero_grad()
            loss.backward()
            optim_step(params, state, lr=cosine_lr(step, total_steps, config.lr,
                                                   config.warmup_ratio))
            epoch_losses.append(value)
            step += 1
        log.append({
            "epoch": epoch,
            "train_loss": float(np.mean(epoch_losses)),
            "eval_loss": _mean_next_token_loss(model, eval_slice),
        })
    model.step_count = step
    return model, log


def next_token_accuracy(model: Checkpoint, examples: list[Example]) -> float:
    """Fraction of completion tokens whose greedy prediction is correct."""
    correct = 0
    total = 0
    with T.no_grad():
        for ex in examples:
            seq = np.concatenate([ex.prompt_tokens, ex.completion_tokens])
            logits = forward_logits(model, seq).data
            p = len(ex.prompt_tokens)
            pred = logits[p - 1:p - 1 + len(ex.completion_tokens)].argmax(axis=-1)
            correct += int((pred == ex.completion_tokens).sum())
            total += len(ex.completion_tokens)
    return correct / max(total, 1)


def score_sequence(teacher: Checkpoint, prompt_tokens, completion_tokens,
                   metric: str = "nll") -> np.ndarray:
    """Difficulty score per completion token from one teacher-forcing forward."""
    validate_metric(metric)
    if teacher.config.attention_mode != "causal":
        raise ConfigError("scoring requires a teacher in causal attention mode")
    prompt_tokens = np.asarray(prompt_tokens)
    completion_tokens = np.asarray(completion_tokens)
    p, c = len(prompt_tokens), len(completion_tokens)
    if p < 1 or c < 1:
        raise DataError("scoring needs a non-empty prompt and completion")
    if p + c > teacher.config.max_seq_len:
        raise ConfigError(
            f"sequence of length {p + c} exceeds max_seq_len {teacher.config.max_seq_len}"
        )
    with T.no_grad():
        seq = np.concatenate([prompt_tokens, completion_tokens])
        logits = forward_logits(teacher, seq).data
    rows = T.log_softmax_np(logits[p - 1:p - 1 + c].astype(np.float64))
    if metric == "nll":
        return -rows[np.arange(c), completion_tokens]
    return -(np.exp(rows) * rows).sum(axis=-1)


def score_tokens(teacher: Checkpoint, example: Example, metric: str = "nll") -> np.ndarray:
    return score_sequence(teacher, example.prompt_tokens, example.completion_tokens, metric)


def score_corpus(teacher: Checkpoint, dataset: list[Example],
                 metric: str = "nll") -> list[Example]:
    """Score every completion token; prompt tokens stay unscored."""
    validate_metric(metric)
    out = []
    for i, ex in enumerate(dataset):
        try:
            scores = score_tokens(teacher, ex, metric)
        except (ConfigError, DataError) as e:
            raise type(e)(f"example {i}: {e}")
        out.append(Example(
            task_kind=ex.task_kind,
            prompt_tokens=ex.prompt_tokens,
            completion_tokens=ex.completion_tokens,
            answer_span=ex.answer_span,
            scores=scores,
            bucket_ids=ex.bucket_ids,
        ))
    return out
