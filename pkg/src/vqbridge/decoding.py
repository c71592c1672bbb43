"""Beam-search decoding over continuous or cluster-center encoder context.

Finished hypotheses leave the beam and reserve their slot, so the live
width shrinks as candidates emit the end token; with beam_size=1 the
search reduces exactly to greedy argmax decoding.  Scores are
length-normalized log-probabilities (sum divided by generated length,
end token included).  Decoding is deterministic: no sampling, and ties
break toward the lower flattened (parent, token) index.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .corpus import BOS, EOS, PAD
from .errors import ContractViolation
from .model import TranslationModel
from .quantizer import cluster_center_context

CONTEXT_MODES = ("continuous", "cluster_centers")


@dataclass
class DecodeConfig:
    beam_size: int = 5
    max_len: int = 64
    context_mode: str = "continuous"

    def validate(self):
        if self.beam_size < 1:
            raise ContractViolation(f"beam_size must be >= 1, got {self.beam_size}")
        if self.max_len < 1:
            raise ContractViolation(f"max_len must be >= 1, got {self.max_len}")
        if self.context_mode not in CONTEXT_MODES:
            raise ContractViolation(
                f"context_mode must be one of {CONTEXT_MODES}, got {self.context_mode!r}")
        return self


@dataclass
class Hypothesis:
    tokens: list[int]  # generated ids, end token stripped
    score: float  # logprob / generated length (end token counted)
    logprob: float  # unnormalized sum of token log-probabilities


def thread_count() -> int:
    """Worker count for sentence-parallel decoding, from VQBRIDGE_THREADS."""
    raw = os.environ.get("VQBRIDGE_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ContractViolation(f"VQBRIDGE_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise ContractViolation(f"VQBRIDGE_THREADS must be >= 1, got {n}")
    return n


def _log_softmax(row: np.ndarray) -> np.ndarray:
    shifted = row - row.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _encode_context(
    model: TranslationModel,
    src_tokens: np.ndarray,
    cfg: DecodeConfig,
    codebook: np.ndarray | None,
    n_slices: int | None,
) -> tuple[np.ndarray, np.ndarray]:
    src = np.asarray(src_tokens, dtype=np.int64)
    if src.ndim != 1:
        raise ContractViolation(f"source must be a 1-d token sequence, got shape {src.shape}")
    real = src != PAD
    if src.size == 0 or not real.any():
        raise ContractViolation("cannot translate an empty source sentence")
    src = src[real]  # drop padding; single-sentence batch needs none
    encoded = model.encode(src[None, :], PAD)
    context = encoded.states.data
    if cfg.context_mode == "cluster_centers":
        if codebook is None or n_slices is None:
            raise ContractViolation(
                "cluster_centers mode requires a codebook and slice count")
        context = cluster_center_context(context, encoded.mask, codebook, n_slices)
    return context, encoded.mask


def translate(
    model: TranslationModel,
    src_tokens: np.ndarray,
    cfg: DecodeConfig,
    codebook: np.ndarray | None = None,
    n_slices: int | None = None,
) -> list[Hypothesis]:
    """Beam-search one sentence; returns up to beam_size distinct hypotheses
    sorted by normalized score, best first."""
    cfg.validate()
    context, mask = _encode_context(model, src_tokens, cfg, codebook, n_slices)

    alive: list[tuple[list[int], float]] = [([], 0.0)]
    finished: list[Hypothesis] = []
    for _ in range(cfg.max_len):
        width = cfg.beam_size - len(finished)
        if width <= 0 or not alive:
            break
        b = len(alive)
        tgt_in = np.array([[BOS] + seq for seq, _ in alive], dtype=np.int64)
        ctx = Tensor(np.repeat(context, b, axis=0))
        ctx_mask = np.repeat(mask, b, axis=0)
        logits = model.decode(ctx, ctx_mask, tgt_in).data[:, -1, :]
        logp = _log_softmax(logits)
        scores = np.array([lp for _, lp in alive])[:, None] + logp
        flat = scores.ravel()
        top = np.argsort(-flat, kind="stable")[:width]
        next_alive: list[tuple[list[int], float]] = []
        vocab_size = logp.shape[1]
        for idx in top:
            parent, token = divmod(int(idx), vocab_size)
            seq = alive[parent][0] + [token]
            lp = float(flat[idx])
            if token == EOS:
                finished.append(Hypothesis(tokens=seq[:-1], score=lp / len(seq), logprob=lp))
            else:
                next_alive.append((seq, lp))
        alive = next_alive
    for seq, lp in alive:  # length limit reached without the end token
        if len(finished) >= cfg.beam_size:
            break
        finished.append(Hypothesis(tokens=seq, score=lp / len(seq), logprob=lp))
    finished.sort(key=lambda h: -h.score)
    return finished


def translate_corpus(
    model: TranslationModel,
    sentences: list[np.ndarray],
    cfg: DecodeConfig,
    codebook: np.ndarray | None = None,
    n_slices: int | None = None,
    n_threads: int | None = None,
) -> list[list[Hypothesis]]:
    """Decode many sentences, parallel across sentences, model read-shared.
    Output order matches input order regardless of worker count."""
    cfg.validate()
    workers = thread_count() if n_threads is None else n_threads
    if workers <= 1 or len(sentences) <= 1:
        return [translate(model, s, cfg, codebook, n_slices) for s in sentences]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(
            lambda s: translate(model, s, cfg, codebook, n_slices), sentences))


def greedy_reference(
    model: TranslationModel,
    src_tokens: np.ndarray,
    max_len: int,
    codebook: np.ndarray | None = None,
    n_slices: int | None = None,
    context_mode: str = "continuous",
) -> list[int]:
    """Plain argmax loop, used as the beam_size=1 oracle."""
    cfg = DecodeConfig(beam_size=1, max_len=max_len, context_mode=context_mode).validate()
    context, mask = _encode_context(model, src_tokens, cfg, codebook, n_slices)
    seq: list[int] = []
    for _ in range(max_len):
        tgt_in = np.array([[BOS] + seq], dtype=np.int64)
        logits = model.decode(Tensor(context), mask, tgt_in).data[0, -1, :]
        token = int(np.argmax(logits))
        if token == EOS:
            break
        seq.append(token)
    return seq
