"""Sliced codebook quantization of encoder states with soft gating.

Each encoder state is split into S contiguous slices; every slice is
independently assigned to the nearest row-slice of a shared K x D table
(smallest index wins ties).  The concatenated lookups form the quantized
context.  Training losses:

  * codebook loss   ||sg[enc] - q(enc)||_2 : pulls table entries toward
    the states assigned to them (gradient reaches only the codebook),
  * commitment loss ||enc - sg[q(enc)]||_2 : keeps states near their
    entries (gradient reaches only the encoder),

both as means over non-pad token-slices, computed on every step
regardless of the gate so the codebook always receives training signal.
The decoder context is gated: quantized (via straight-through) with
probability p_quantize, raw otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractViolation, NumericError
from .model import EncodedBatch

PAD_CODE = -1  # sentinel code for padded positions


@dataclass
class QuantizerConfig:
    codebook_size: int = 256
    n_slices: int = 4
    alpha_codebook: float = 1.0
    alpha_commitment: float = 1.001
    p_quantize: float = 0.5
    enabled: bool = True

    def validate(self):
        if self.codebook_size < 1:
            raise ContractViolation("codebook_size must be >= 1")
        if self.n_slices < 1:
            raise ContractViolation("n_slices must be >= 1")
        if not 0.0 <= self.p_quantize <= 1.0:
            raise ContractViolation(f"p_quantize={self.p_quantize} outside [0, 1]")
        if self.alpha_codebook < 0:
            raise ContractViolation(f"alpha_codebook={self.alpha_codebook} must be non-negative")
        if self.alpha_commitment < 0:
            raise ContractViolation(
                f"alpha_commitment={self.alpha_commitment} must be non-negative")
        return self


@dataclass
class QuantizerOutput:
    context: Tensor  # [B, T, D]
    codes: np.ndarray  # int64 [B, T, S]; PAD_CODE at padded positions
    loss_codebook: Tensor  # scalar
    loss_commitment: Tensor  # scalar
    used_quantized: bool


def init_codebook(
    size: int,
    d_model: int,
    scale: float,
    rng: np.random.Generator,
    center: np.ndarray | None = None,
) -> Tensor:
    """i.i.d. normal entries whose std matches the encoder-output RMS.

    When ``center`` is given the rows are drawn around it instead of around
    zero.  Untrained encoder states share a dominant mean direction, so rows
    centered at the origin leave a single entry winning the nearest-neighbor
    search for every token; centering the rows inside the state cloud keeps
    more than one entry reachable per slice from the first step.
    """
    rows = rng.normal(0.0, scale, (size, d_model))
    if center is not None:
        rows += np.asarray(center, dtype=np.float64)[None, :]
    return Tensor(rows, requires_grad=True, name="codebook")


def encoder_rms(states: np.ndarray, mask: np.ndarray) -> float:
    """Root-mean-square of state values over non-pad positions."""
    vals = states[mask]
    return float(np.sqrt(np.mean(vals * vals)))


def encoder_stats(states: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-dimension mean and centered RMS of states over non-pad positions."""
    vals = states[mask]
    if vals.size == 0:
        raise ContractViolation("cannot summarize encoder states: no non-pad positions")
    center = vals.mean(axis=0)
    spread = vals - center[None, :]
    return center, float(np.sqrt(np.mean(spread * spread)))


def nearest_slice(query: np.ndarray, slice_table: np.ndarray) -> int:
    """Index of the closest table row (Euclidean); smallest index on ties."""
    diff = slice_table - query[None, :]
    return int(np.argmin((diff * diff).sum(axis=1)))


def assign_codes(states: np.ndarray, mask: np.ndarray, codebook: np.ndarray, n_slices: int) -> np.ndarray:
    """Per-token, per-slice nearest-neighbor indices; vectorized over tokens.

    Squared distances share the argmin with true Euclidean ones.  Padded
    positions get PAD_CODE.
    """
    b, t, d = states.shape
    k = codebook.shape[0]
    if d % n_slices != 0:
        raise ContractViolation(f"d_model={d} not divisible by n_slices={n_slices}")
    w = d // n_slices
    x = states.reshape(b * t, n_slices, w)
    e = codebook.reshape(k, n_slices, w)
    codes = np.empty((b * t, n_slices), dtype=np.int64)
    for s in range(n_slices):
        xs = x[:, s, :]  # [N, w]
        es = e[:, s, :]  # [K, w]
        d2 = (xs * xs).sum(axis=1)[:, None] - 2.0 * xs @ es.T + (es * es).sum(axis=1)[None, :]
        codes[:, s] = np.argmin(d2, axis=1)
    codes = codes.reshape(b, t, n_slices)
    codes[~mask] = PAD_CODE
    return codes


def lookup_quantized(codebook: Tensor, codes: np.ndarray, n_slices: int) -> Tensor:
    """Differentiable concatenation of per-slice codebook lookups."""
    k, d = codebook.shape
    w = d // n_slices
    safe = np.where(codes < 0, 0, codes)  # pad rows looked up but masked out of losses
    parts = []
    for s in range(n_slices):
        table_s = ad.slice_axis(codebook, s * w, (s + 1) * w, axis=1)
        parts.append(ad.embedding_lookup(table_s, safe[:, :, s]))
    return ad.concat(parts, axis=-1)


def quantizer_losses(enc: Tensor, q_enc: Tensor, mask: np.ndarray, n_slices: int) -> tuple[Tensor, Tensor]:
    """Codebook / commitment pair; equal forward values, opposite routing."""
    if enc.shape != q_enc.shape:
        raise ContractViolation(f"loss shapes differ: {enc.shape} vs {q_enc.shape}")
    loss_cb = ad.masked_slice_norm_mean(ad.sub(ad.stop_gradient(enc), q_enc), mask, n_slices)
    loss_cm = ad.masked_slice_norm_mean(ad.sub(enc, ad.stop_gradient(q_enc)), mask, n_slices)
    return loss_cb, loss_cm


def quantize(
    encoded: EncodedBatch,
    codebook: Tensor,
    cfg: QuantizerConfig,
    gate_draw: float,
) -> QuantizerOutput:
    """Full soft quantization step on an encoded batch.

    Codes and both losses are always computed; only the decoder context
    depends on the gate outcome.
    """
    cfg.validate()
    states = encoded.states
    if states.shape[-1] != codebook.shape[1]:
        raise ContractViolation(
            f"state dim {states.shape[-1]} != codebook dim {codebook.shape[1]}"
        )
    if not np.all(np.isfinite(states.data)):
        bad = np.argwhere(~np.isfinite(states.data))[0]
        raise NumericError(f"non-finite encoder state at batch coordinates {tuple(bad)}")
    codes = assign_codes(states.data, encoded.mask, codebook.data, cfg.n_slices)
    q_enc = lookup_quantized(codebook, codes, cfg.n_slices)
    loss_cb, loss_cm = quantizer_losses(states, q_enc, encoded.mask, cfg.n_slices)
    used = bool(gate_draw < cfg.p_quantize)
    context = ad.straight_through(states, q_enc) if used else states
    return QuantizerOutput(context, codes, loss_cb, loss_cm, used)


def cluster_center_context(states: np.ndarray, mask: np.ndarray, codebook: np.ndarray, n_slices: int) -> np.ndarray:
    """Inference-time context from codebook entries instead of raw states."""
    codes = assign_codes(states, mask, codebook, n_slices)
    k, d = codebook.shape
    w = d // n_slices
    safe = np.where(codes < 0, 0, codes)
    out = np.empty_like(states)
    for s in range(n_slices):
        out[:, :, s * w : (s + 1) * w] = codebook[safe[:, :, s], s * w : (s + 1) * w]
    out[~mask] = states[~mask]
    return out
