"""Encoder-decoder transformer over the autodiff primitives.

Pre-norm residual blocks, sinusoidal positions, multi-head self/cross
attention.  The decoder is agnostic to whether its context is the raw
encoder output, its quantized counterpart, or a gated mix of the two.
Dropout masks are drawn from an externally supplied generator so the
whole forward pass is a pure function of (params, tokens, rng draws).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractViolation

NEG_BIAS = -1e9  # additive mask value; exp() underflows to exactly 0.0


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_layers_enc: int = 2
    n_layers_dec: int = 2
    d_ffn: int = 256
    dropout: float = 0.1
    attn_dropout: float = 0.0
    label_smoothing: float = 0.1
    activation: str = "gelu"

    def validate(self):
        if self.vocab_size < 1:
            raise ContractViolation("vocab_size must be positive")
        if self.d_model % self.n_heads != 0:
            raise ContractViolation(
                f"d_model={self.d_model} must be divisible by n_heads={self.n_heads}"
            )
        for name in ("dropout", "attn_dropout", "label_smoothing"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ContractViolation(f"{name}={v} outside [0, 1]")
        if self.activation not in ("gelu", "relu"):
            raise ContractViolation(f"unknown activation {self.activation!r}")
        return self


@dataclass
class EncodedBatch:
    """Encoder states plus the keep-mask (True at real, non-pad positions)."""

    states: Tensor  # [B, T, D]
    mask: np.ndarray  # bool [B, T]


def sinusoidal_positions(length: int, d_model: int) -> np.ndarray:
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(d_model, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2.0 * (i // 2)) / d_model)
    pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return pe


class TranslationModel:
    """Parameter container plus encode/decode forward passes."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config.validate()
        self.params = params
        self._pos_cache: np.ndarray = sinusoidal_positions(256, config.d_model)

    # -- construction -------------------------------------------------------

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator) -> "TranslationModel":
        config.validate()
        d, v, f = config.d_model, config.vocab_size, config.d_ffn
        params: dict[str, Tensor] = {}

        def w(name, fan_in, shape):
            params[name] = Tensor(rng.normal(0.0, 1.0 / math.sqrt(fan_in), shape), requires_grad=True, name=name)

        def ln(prefix):
            params[f"{prefix}.gain"] = Tensor(np.ones(d), requires_grad=True, name=f"{prefix}.gain")
            params[f"{prefix}.bias"] = Tensor(np.zeros(d), requires_grad=True, name=f"{prefix}.bias")

        def attn(prefix):
            for p in ("wq", "wk", "wv", "wo"):
                w(f"{prefix}.{p}", d, (d, d))
                params[f"{prefix}.{p}_b"] = Tensor(np.zeros(d), requires_grad=True, name=f"{prefix}.{p}_b")

        def ffn(prefix):
            w(f"{prefix}.w1", d, (d, f))
            params[f"{prefix}.b1"] = Tensor(np.zeros(f), requires_grad=True, name=f"{prefix}.b1")
            w(f"{prefix}.w2", f, (f, d))
            params[f"{prefix}.b2"] = Tensor(np.zeros(d), requires_grad=True, name=f"{prefix}.b2")

        w("embed.weight", d, (v, d))
        for i in range(config.n_layers_enc):
            ln(f"enc.{i}.ln1")
            attn(f"enc.{i}.attn")
            ln(f"enc.{i}.ln2")
            ffn(f"enc.{i}.ffn")
        ln("enc.final_ln")
        for i in range(config.n_layers_dec):
            ln(f"dec.{i}.ln1")
            attn(f"dec.{i}.self_attn")
            ln(f"dec.{i}.ln2")
            attn(f"dec.{i}.cross_attn")
            ln(f"dec.{i}.ln3")
            ffn(f"dec.{i}.ffn")
        ln("dec.final_ln")
        w("out.weight", d, (d, v))
        params["out.bias"] = Tensor(np.zeros(v), requires_grad=True, name="out.bias")
        return cls(config, params)

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    # -- helpers ------------------------------------------------------------

    def _positions(self, length: int) -> np.ndarray:
        if length > self._pos_cache.shape[0]:
            self._pos_cache = sinusoidal_positions(length, self.config.d_model)
        return self._pos_cache[:length]

    def _dropout(self, x: Tensor, rng, p: float) -> Tensor:
        if rng is None or p <= 0.0:
            return x
        keep = (rng.random(x.shape) >= p).astype(np.float64)
        keep /= 1.0 - p
        return ad.dropout_apply(x, keep)

    def _linear(self, x: Tensor, name: str) -> Tensor:
        return ad.add(ad.matmul(x, self.params[f"{name}"]), self.params[f"{name}_b"])

    def _ln(self, x: Tensor, prefix: str) -> Tensor:
        return ad.layer_norm(x, self.params[f"{prefix}.gain"], self.params[f"{prefix}.bias"])

    def _split_heads(self, x: Tensor, b: int, t: int) -> Tensor:
        h, dh = self.config.n_heads, self.config.d_model // self.config.n_heads
        return ad.transpose(ad.reshape(x, (b, t, h, dh)), (0, 2, 1, 3))

    def _attention(self, x_q: Tensor, x_kv: Tensor, bias: np.ndarray, prefix: str, rng) -> Tensor:
        b, tq = x_q.shape[0], x_q.shape[1]
        tk = x_kv.shape[1]
        dh = self.config.d_model // self.config.n_heads
        q = self._split_heads(self._linear(x_q, f"{prefix}.wq"), b, tq)
        k = self._split_heads(self._linear(x_kv, f"{prefix}.wk"), b, tk)
        v = self._split_heads(self._linear(x_kv, f"{prefix}.wv"), b, tk)
        scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        scores = ad.add(scores, Tensor(bias))
        attn = ad.softmax(scores)
        attn = self._dropout(attn, rng, self.config.attn_dropout)
        ctx = ad.reshape(ad.transpose(ad.matmul(attn, v), (0, 2, 1, 3)), (b, tq, self.config.d_model))
        return self._linear(ctx, f"{prefix}.wo")

    def _ffn(self, x: Tensor, prefix: str, rng) -> Tensor:
        act = ad.gelu if self.config.activation == "gelu" else ad.relu
        h = act(ad.add(ad.matmul(x, self.params[f"{prefix}.w1"]), self.params[f"{prefix}.b1"]))
        h = self._dropout(h, rng, self.config.dropout)
        return ad.add(ad.matmul(h, self.params[f"{prefix}.w2"]), self.params[f"{prefix}.b2"])

    def _embed(self, tokens: np.ndarray, rng) -> Tensor:
        if tokens.min() < 0 or tokens.max() >= self.config.vocab_size:
            raise ContractViolation(
                f"token id out of range [0, {self.config.vocab_size}): "
                f"min={tokens.min()} max={tokens.max()}"
            )
        emb = ad.embedding_lookup(self.params["embed.weight"], tokens)
        emb = ad.affine(emb, math.sqrt(self.config.d_model), 0.0)
        emb = ad.add(emb, Tensor(self._positions(tokens.shape[1])[None, :, :]))
        return self._dropout(emb, rng, self.config.dropout)

    # -- forward ------------------------------------------------------------

    def encode(self, tokens: np.ndarray, pad_id: int, rng=None) -> EncodedBatch:
        """Run the encoder; mask marks real positions (tokens != pad_id)."""
        tokens = np.asarray(tokens, dtype=np.int64)
        mask = tokens != pad_id
        bias = np.where(mask, 0.0, NEG_BIAS)[:, None, None, :]  # [B,1,1,T]
        x = self._embed(tokens, rng)
        for i in range(self.config.n_layers_enc):
            ln1 = self._ln(x, f"enc.{i}.ln1")
            a = self._attention(ln1, ln1, bias, f"enc.{i}.attn", rng)
            x = ad.add(x, self._dropout(a, rng, self.config.dropout))
            ff = self._ffn(self._ln(x, f"enc.{i}.ln2"), f"enc.{i}.ffn", rng)
            x = ad.add(x, self._dropout(ff, rng, self.config.dropout))
        return EncodedBatch(states=self._ln(x, "enc.final_ln"), mask=mask)

    def decode(self, context: Tensor, context_mask: np.ndarray, tgt_tokens: np.ndarray, rng=None) -> Tensor:
        """Decoder logits [B, T_tgt, V]; causal over targets, masked over context."""
        if context.shape[-1] != self.config.d_model:
            raise ContractViolation(
                f"context dim {context.shape[-1]} != d_model {self.config.d_model}"
            )
        tgt_tokens = np.asarray(tgt_tokens, dtype=np.int64)
        t = tgt_tokens.shape[1]
        causal = np.where(np.tril(np.ones((t, t), dtype=bool)), 0.0, NEG_BIAS)[None, None, :, :]
        cross = np.where(context_mask, 0.0, NEG_BIAS)[:, None, None, :]
        x = self._embed(tgt_tokens, rng)
        for i in range(self.config.n_layers_dec):
            ln1 = self._ln(x, f"dec.{i}.ln1")
            a = self._attention(ln1, ln1, causal, f"dec.{i}.self_attn", rng)
            x = ad.add(x, self._dropout(a, rng, self.config.dropout))
            c = self._attention(self._ln(x, f"dec.{i}.ln2"), context, cross, f"dec.{i}.cross_attn", rng)
            x = ad.add(x, self._dropout(c, rng, self.config.dropout))
            ff = self._ffn(self._ln(x, f"dec.{i}.ln3"), f"dec.{i}.ffn", rng)
            x = ad.add(x, self._dropout(ff, rng, self.config.dropout))
        x = self._ln(x, "dec.final_ln")
        return ad.add(ad.matmul(x, self.params["out.weight"]), self.params["out.bias"])
