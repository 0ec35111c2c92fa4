"""Tiny transformer with a causal mode (next-token teacher) and a
bidirectional mode (masked-denoising student), sharing one parameter layout.

Learned absolute position embeddings, pre-norm blocks, GELU MLP, and the
output projection tied to the token embedding. A loaded model is immutable
during inference and can be shared; training mutates parameters in place.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, DataError
from .tensor import Tensor

ATTENTION_MODES = ("causal", "bidirectional")

_INIT_SALT = 2


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    max_seq_len: int = 128
    attention_mode: str = "causal"
    mask_id: int = -1
    pad_id: int = -1
    dtype: str = "float32"

    def validate(self):
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.d_model < 1:
            raise ConfigError(f"d_model must be >= 1, got {self.d_model}")
        if self.n_heads < 1:
            raise ConfigError(f"n_heads must be >= 1, got {self.n_heads}")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}"
            )
        if self.n_layers < 1:
            raise ConfigError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.max_seq_len < 1:
            raise ConfigError(f"max_seq_len must be >= 1, got {self.max_seq_len}")
        if self.attention_mode not in ATTENTION_MODES:
            raise ConfigError(
                f"attention_mode must be one of {ATTENTION_MODES}, got {self.attention_mode!r}"
            )
        if not (0 <= self.mask_id < self.vocab_size):
            raise ConfigError(
                f"mask_id={self.mask_id} is not a dedicated symbol inside the vocab"
            )
        if not (0 <= self.pad_id < self.vocab_size):
            raise ConfigError(
                f"pad_id={self.pad_id} is not a dedicated symbol inside the vocab"
            )
        if self.mask_id == self.pad_id:
            raise ConfigError("mask_id and pad_id must be distinct")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")


@dataclass
class Checkpoint:
    """Model config plus named parameter tensors and training metadata."""

    config: ModelConfig
    params: dict[str, Tensor]
    seed: int = 0
    step_count: int = 0

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}


def expected_param_names(config: ModelConfig) -> list[str]:
    names = ["tok_emb", "pos_emb"]
    for i in range(config.n_layers):
        prefix = f"layers.{i}."
        names += [prefix + s for s in (
            "ln1.g", "ln1.b", "attn.wq", "attn.wk", "attn.wv", "attn.wo",
            "ln2.g", "ln2.b", "mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2",
        )]
    names += ["lnf.g", "lnf.b"]
    return names


def init_model(config: ModelConfig, seed: int) -> Checkpoint:
    """Deterministic scaled-normal initialization; biases and norms neutral."""
    config.validate()
    rng = np.random.default_rng((seed, _INIT_SALT))
    dtype = np.float32 if config.dtype == "float32" else np.float64
    d = config.d_model
    std = 0.02
    resid_std = std / math.sqrt(2.0 * config.n_layers)

    def normal(shape, scale):
        return rng.normal(0.0, scale, size=shape).astype(dtype)

    def zeros(shape):
        return np.zeros(shape, dtype=dtype)

    def ones(shape):
        return np.ones(shape, dtype=dtype)

    arrays: dict[str, np.ndarray] = {
        "tok_emb": normal((config.vocab_size, d), std),
        "pos_emb": normal((config.max_seq_len, d), std),
        "lnf.g": ones((d,)),
        "lnf.b": zeros((d,)),
    }
    for i in range(config.n_layers):
        p = f"layers.{i}."
        arrays[p + "ln1.g"] = ones((d,))
        arrays[p + "ln1.b"] = zeros((d,))
        arrays[p + "attn.wq"] = normal((d, d), std)
        arrays[p + "attn.wk"] = normal((d, d), std)
        arrays[p + "attn.wv"] = normal((d, d), std)
        arrays[p + "attn.wo"] = normal((d, d), resid_std)
        arrays[p + "ln2.g"] = ones((d,))
        arrays[p + "ln2.b"] = zeros((d,))
        arrays[p + "mlp.w1"] = normal((d, 4 * d), std)
        arrays[p + "mlp.b1"] = zeros((4 * d,))
        arrays[p + "mlp.w2"] = normal((4 * d, d), resid_std)
        arrays[p + "mlp.b2"] = zeros((d,))

    params = {name: Tensor(arrays[name], requires_grad=True, name=name)
              for name in expected_param_names(config)}
    return Checkpoint(config=config, params=params, seed=seed, step_count=0)


_causal_masks: dict[tuple[int, str], np.ndarray] = {}


def _causal_mask(length: int, dtype: np.dtype) -> np.ndarray:
    key = (length, dtype.str)
    cached = _causal_masks.get(key)
    if cached is None:
        cached = np.triu(np.full((length, length), -np.inf, dtype=dtype), k=1)
        _causal_masks[key] = cached
    return cached


def forward_logits_batch(model: Checkpoint, tokens) -> Tensor:
    """Logits for a batch of same-length sequences: (B, L) ids -> (B, L, V)."""
    cfg = model.config
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise ConfigError(f"expected a (batch, length) id array, got shape {tokens.shape}")
    B, L = tokens.shape
    if L > cfg.max_seq_len:
        raise ConfigError(f"sequence length {L} exceeds max_seq_len {cfg.max_seq_len}")
    if L == 0:
        raise ConfigError("cannot run the model on an empty sequence")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
        raise ConfigError(
            f"token id out of range [0, {cfg.vocab_size}): "
            f"min={tokens.min()}, max={tokens.max()}"
        )
    p = model.params
    H = cfg.n_heads
    dh = cfg.d_model // H
    scale = 1.0 / math.sqrt(dh)
    causal = cfg.attention_mode == "causal"
    mask = Tensor(_causal_mask(L, p["tok_emb"].data.dtype)) if causal else None

    x = T.add(T.embedding(p["tok_emb"], tokens), T.embedding(p["pos_emb"], np.arange(L)))
    for i in range(cfg.n_layers):
        pre = f"layers.{i}."
        h = T.layer_norm(x, p[pre + "ln1.g"], p[pre + "ln1.b"])

        def heads(name):
            proj = T.matmul(h, p[pre + "attn.w" + name])
            return T.transpose(T.reshape(proj, (B, L, H, dh)), (0, 2, 1, 3))

        q, k, v = heads("q"), heads("k"), heads("v")
        scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), scale)
        if mask is not None:
            scores = T.add(scores, mask)
        ctx = T.matmul(T.softmax(scores), v)
        ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (B, L, cfg.d_model))
        x = T.add(x, T.matmul(ctx, p[pre + "attn.wo"]))

        h2 = T.layer_norm(x, p[pre + "ln2.g"], p[pre + "ln2.b"])
        inner = T.gelu(T.add(T.matmul(h2, p[pre + "mlp.w1"]), p[pre + "mlp.b1"]))
        x = T.add(x, T.add(T.matmul(inner, p[pre + "mlp.w2"]), p[pre + "mlp.b2"]))

    x = T.layer_norm(x, p["lnf.g"], p["lnf.b"])
    return T.matmul(x, T.transpose(p["tok_emb"], (1, 0)))


def forward_logits(model: Checkpoint, tokens) -> Tensor:
    """Logits for one sequence of ids: (L,) -> (L, V)."""
    tokens = np.asarray(tokens)
    if tokens.ndim != 1:
        raise ConfigError(f"expected a 1-d id sequence, got shape {tokens.shape}")
    out = forward_logits_batch(model, tokens[None, :])
    return T.reshape(out, (tokens.shape[0], model.config.vocab_size))


def save_model(path: str, model: Checkpoint) -> None:
    meta = {
        "kind": "model",
        "config": asdict(model.config),
        "seed": model.seed,
        "step_count": model.step_count,
    }
    save_checkpoint(path, model.param_arrays(), meta)


def load_model(path: str) -> Checkpoint:
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "model":
        raise DataError(f"{path}: checkpoint is not a model (kind={meta.get('kind')!r})")
    config = ModelConfig(**meta["config"])
    config.validate()
    expected = expected_param_names(config)
    missing = [n for n in expected if n not in arrays]
    extra = [n for n in arrays if n not in expected]
    if missing or extra:
        raise DataError(
            f"{path}: parameter names do not match the config "
            f"(missing: {missing[:3]}, extra: {extra[:3]})"
        )
    params = {name: Tensor(arrays[name], requires_grad=True, name=name)
              for name in expected}
    return Checkpoint(config=config, params=params,
                      seed=meta.get("seed", 0), step_count=meta.get("step_count", 0))
