"""Iterative parallel decoding with confidence thresholding.

The response region starts fully masked. Each step runs one forward pass,
takes the greedy candidate at every still-masked position (mask and pad
symbols are excluded from candidacy), and commits every candidate whose
softmax probability reaches the threshold. If fewer than ``min_commit``
qualify, the highest-confidence positions are committed anyway (ties to the
lowest position) so decoding always progresses. Committed tokens are never
revised. Decoding stops when no masks remain, when a committed end marker
has no masked positions before it (the trailing region is then irrelevant
and left uncommitted), or at ``max_steps``, where the remaining masks are
force-committed greedily in one final recorded step.

Greedy choice plus probability-as-confidence makes decoding deterministic;
the config's seed is reserved for future sampling modes.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np

from . import tensor as T
from .corpus import EOS_ID, Example, check_answer, detokenize, tokenize
from .errors import ConfigError, DataError
from .model import Checkpoint, forward_logits_batch

_GROUP_CAP = 256  # rows per forward when batching traces


@dataclass
class DecodeConfig:
    max_new_tokens: int = 48
    confidence_threshold: float = 0.9
    max_steps: Optional[int] = None   # None: one step per new token
    min_commit: int = 1
    eos_id: Optional[int] = EOS_ID
    seed: int = 0

    def resolved_max_steps(self) -> int:
        return self.max_new_tokens if self.max_steps is None else self.max_steps

    def validate(self):
        if self.max_new_tokens < 1:
            raise ConfigError(f"max_new_tokens must be >= 1, got {self.max_new_tokens}")
        if self.min_commit < 1:
            raise ConfigError(f"min_commit must be >= 1, got {self.min_commit}")
        if self.resolved_max_steps() < 1:
            raise ConfigError(f"max_steps must be >= 1, got {self.max_steps}")


@dataclass
class StepRecord:
    step: int
    positions: np.ndarray     # region-relative, ascending
    tokens: np.ndarray
    confidences: np.ndarray


@dataclass
class DecodeTrace:
    prompt_tokens: np.ndarray
    steps: list[StepRecord]
    final_tokens: np.ndarray  # the response region, length max_new_tokens
    steps_used: int
    truncated: bool

    @property
    def generated_count(self) -> int:
        return sum(len(rec.positions) for rec in self.steps)


def tps(trace: DecodeTrace) -> float:
    """Tokens predicted per step: generated tokens / steps used."""
    if trace.steps_used < 1:
        raise ConfigError("trace has no steps")
    return trace.generated_count / trace.steps_used


def decode(model: Checkpoint, prompt_tokens, config: DecodeConfig) -> DecodeTrace:
    """Decode one prompt into a full trace."""
    prompt_tokens = np.asarray(prompt_tokens)
    if prompt_tokens.ndim != 1 or len(prompt_tokens) == 0:
        raise ConfigError("prompt must be a non-empty 1-d id sequence")
    return _decode_rows(model, prompt_tokens[None, :], config)[0]


def _decode_rows(model: Checkpoint, prompts: np.ndarray,
                 config: DecodeConfig) -> list[DecodeTrace]:
    config.validate()
    cfg = model.config
    if cfg.attention_mode != "bidirectional":
        raise ConfigError("decoding needs a bidirectional model")
    n, P = prompts.shape
    G = config.max_new_tokens
    if P + G > cfg.max_seq_len:
        raise ConfigError(
            f"prompt too long: {P} + {G} new tokens exceeds max_seq_len {cfg.max_seq_len}"
        )
    tau = config.confidence_threshold
    max_steps = config.resolved_max_steps()
    blocked = [cfg.mask_id, cfg.pad_id]

    seq = np.concatenate(
        [prompts, np.full((n, G), cfg.mask_id, dtype=np.int64)], axis=1)
    masked = np.ones((n, G), dtype=bool)
    steps_used = np.zeros(n, dtype=np.int64)
    truncated = np.zeros(n, dtype=bool)
    steps: list[list[StepRecord]] = [[] for _ in range(n)]
    active = list(range(n))

    while active:
        with T.no_grad():
            logits = forward_logits_batch(model, seq[active]).data[:, P:, :]
        logits[:, :, blocked] = -np.inf
        probs = T.softmax_np(logits)
        cand = logits.argmax(axis=-1)
        conf = np.take_along_axis(probs, cand[..., None], axis=-1)[..., 0]
        conf = conf.astype(np.float64)

        still = []
        for ai, r in enumerate(active):
            mrows = np.flatnonzero(masked[r])
            rowconf = conf[ai]
            rowstep = int(steps_used[r]) + 1
            qualify = mrows[rowconf[mrows] >= tau]
            need = min(config.min_commit, len(mrows))
            if len(qualify) >= need:
                commit = qualify
            else:
                order = np.lexsort((mrows, -rowconf[mrows]))
                commit = np.sort(mrows[order[:need]])
            if rowstep >= max_steps and len(commit) < len(mrows):
                commit = mrows
                truncated[r] = True
            toks = cand[ai][commit]
            seq[r, P + commit] = toks
            masked[r, commit] = False
            steps[r].append(StepRecord(
                step=rowstep, positions=commit.copy(), tokens=toks.copy(),
                confidences=rowconf[commit].copy()))
            steps_used[r] = rowstep

            done = not masked[r].any()
            if not done and config.eos_id is not None:
                region = seq[r, P:]
                eos_pos = np.flatnonzero(~masked[r] & (region == config.eos_id))
                if len(eos_pos) and not masked[r, :eos_pos[0]].any():
                    done = True   # only the trailing region remains
            if not done:
                still.append(r)
        active = still

    traces = []
    fill = config.eos_id if config.eos_id is not None else cfg.pad_id
    for r in range(n):
        final = seq[r, P:].copy()
        final[masked[r]] = fill
        traces.append(DecodeTrace(
            prompt_tokens=prompts[r].copy(), steps=steps[r], final_tokens=final,
            steps_used=int(steps_used[r]), truncated=bool(truncated[r])))
    return traces


def decode_batch(model: Checkpoint, examples: list[Example],
                 config: DecodeConfig) -> tuple[list[DecodeTrace], float, float]:
    """Decode every example; returns (traces, accuracy, mean TPS).

    Rows with equal prompt length are stepped together for throughput; the
    result is deterministic for a fixed input list and config.
    """
    if not examples:
        raise ConfigError("decode_batch needs at least one example")
    by_len: dict[int, list[int]] = {}
    for i, ex in enumerate(examples):
        by_len.setdefault(len(ex.prompt_tokens), []).append(i)
    traces: list[Optional[DecodeTrace]] = [None] * len(examples)
    for plen, idxs in sorted(by_len.items()):
        for start in range(0, len(idxs), _GROUP_CAP):
            chunk = idxs[start:start + _GROUP_CAP]
            prompts = np.stack([examples[i].prompt_tokens for i in chunk])
            for i, trace in zip(chunk, _decode_rows(model, prompts, config)):
                traces[i] = trace
    correct = sum(check_answer(ex, tr.final_tokens)
                  for ex, tr in zip(examples, traces))
    mean_tps = float(np.mean([tps(tr) for tr in traces]))
    return traces, correct / len(examples), mean_tps


# -- trace files --


def write_traces(path: str, traces: list[DecodeTrace], config: DecodeConfig) -> None:
    def dump(obj):
        return json.dumps(obj, sort_keys=True, separators=(",", ":"))

    with open(path, "w", encoding="utf-8") as f:
        f.write(dump({"type": "run", "config": asdict(config)}) + "\n")
        for i, tr in enumerate(traces):
            f.write(dump({
                "type": "trace", "index": i,
                "prompt": detokenize(tr.prompt_tokens),
                "final": detokenize(tr.final_tokens, strict=False),
                "steps_used": tr.steps_used,
                "truncated": tr.truncated,
            }) + "\n")
            for rec in tr.steps:
                f.write(dump({
                    "type": "step", "trace": i, "step": rec.step,
                    "positions": [int(x) for x in rec.positions],
                    "tokens": [int(x) for x in rec.tokens],
                    "confidences": [float(x) for x in rec.confidences],
                }) + "\n")


def read_traces(path: str) -> tuple[list[DecodeTrace], DecodeConfig]:
    traces: list[DecodeTrace] = []
    config = None
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read traces {path}: {e}")
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                kind = rec["type"]
                if kind == "run":
                    config = DecodeConfig(**rec["config"])
                elif kind == "trace":
                    traces.append(DecodeTrace(
                        prompt_tokens=tokenize(rec["prompt"]),
                        steps=[],
                        final_tokens=tokenize(rec["final"]),
                        steps_used=int(rec["steps_used"]),
                        truncated=bool(rec["truncated"]),
                    ))
                elif kind == "step":
                    traces[rec["trace"]].steps.append(StepRecord(
                        step=int(rec["step"]),
                        positions=np.asarray(rec["positions"], dtype=np.int64),
                        tokens=np.asarray(rec["tokens"], dtype=np.int64),
                        confidences=np.asarray(rec["confidences"], dtype=np.float64),
                    ))
                else:
                    raise DataError(f"unknown record type {kind!r}")
            except (json.JSONDecodeError, KeyError, IndexError, DataError, ValueError) as e:
                raise DataError(f"{path}: line {lineno}: {e}")
    if config is None:
        raise DataError(f"{path}: missing run header")
    return traces, config
