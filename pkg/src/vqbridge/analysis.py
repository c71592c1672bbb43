"""Post-hoc analyses of a trained system.

Code extraction on test corpora, per-slice code-frequency distributions and
their KL divergences, export of aligned code corpora for code-translation
probes, PCA explained-variance curves over encoder states, codebook usage
statistics, off-target detection against the synthetic family, and token
accuracy with its analytic random-decoder baseline.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import EOS, PAD, SyntheticFamily, Vocab
from .errors import ContractViolation, DataError
from .model import TranslationModel
from .quantizer import assign_codes

KL_EPS = 1e-8  # added to every frequency before normalizing


@dataclass
class CodeSequence:
    """Discrete codes of one sentence: S codes per token, slice-major
    within each token (token 0's S codes first, then token 1's, ...)."""

    lang: str
    sentence_id: int
    codes: np.ndarray  # int64, length S * n_tokens

    def n_tokens(self, n_slices: int) -> int:
        return len(self.codes) // n_slices


# ---------------------------------------------------------------------------
# code extraction
# ---------------------------------------------------------------------------


def extract_codes(
    model: TranslationModel,
    codebook: np.ndarray,
    n_slices: int,
    sentences: list[np.ndarray],
    vocab: Vocab,
    lang: str,
    tag_lang: str,
    batch_size: int = 64,
) -> list[CodeSequence]:
    """Nearest-entry codes of the encoder states of each sentence.

    Deterministic and gate-independent: the encoder runs without dropout and
    codes come straight from the lookup, never through the soft gate.  The
    language tag and end marker are excluded, so a t-token sentence yields
    exactly S*t codes.
    """
    out: list[CodeSequence] = []
    tag = vocab.tag_id(tag_lang)
    for start in range(0, len(sentences), batch_size):
        chunk = sentences[start : start + batch_size]
        b = len(chunk)
        ts = max(len(s) for s in chunk) + 2
        src = np.full((b, ts), PAD, dtype=np.int64)
        for i, s in enumerate(chunk):
            src[i, 0] = tag
            src[i, 1 : 1 + len(s)] = s
            src[i, 1 + len(s)] = EOS
        encoded = model.encode(src, PAD)
        codes = assign_codes(encoded.states.data, encoded.mask, codebook, n_slices)
        for i, s in enumerate(chunk):
            per_token = codes[i, 1 : 1 + len(s), :]  # tag and eos excluded
            out.append(CodeSequence(lang, start + i, per_token.reshape(-1).copy()))
    return out


# ---------------------------------------------------------------------------
# code distributions and KL
# ---------------------------------------------------------------------------


def code_distribution(seqs: list[CodeSequence], codebook_size: int, n_slices: int) -> np.ndarray:
    """Per-slice smoothed code frequencies, shape [S, K], rows sum to 1."""
    counts = np.zeros((n_slices, codebook_size), dtype=np.float64)
    for seq in seqs:
        if len(seq.codes) % n_slices != 0:
            raise ContractViolation(
                f"code sequence length {len(seq.codes)} not divisible by S={n_slices}"
            )
        per_token = seq.codes.reshape(-1, n_slices)
        for s in range(n_slices):
            counts[s] += np.bincount(per_token[:, s], minlength=codebook_size)
    counts += KL_EPS
    return counts / counts.sum(axis=1, keepdims=True)


def code_kl(dist_p: np.ndarray, dist_q: np.ndarray) -> tuple[np.ndarray, float]:
    """KL(P || Q) per slice plus the mean over slices."""
    if dist_p.shape != dist_q.shape:
        raise ContractViolation(f"distribution shapes differ: {dist_p.shape} vs {dist_q.shape}")
    per_slice = (dist_p * np.log(dist_p / dist_q)).sum(axis=1)
    return per_slice, float(per_slice.mean())


def kl_matrix(dists: dict[str, np.ndarray]) -> tuple[list[str], np.ndarray]:
    """Full pairwise mean-over-slices KL matrix in language order."""
    langs = list(dists)
    n = len(langs)
    mat = np.zeros((n, n), dtype=np.float64)
    for i, a in enumerate(langs):
        for j, b in enumerate(langs):
            mat[i, j] = code_kl(dists[a], dists[b])[1]
    return langs, mat


# ---------------------------------------------------------------------------
# code-translation corpus export
# ---------------------------------------------------------------------------


def export_code_translation_corpus(
    codes_src: list[CodeSequence],
    codes_tgt: list[CodeSequence],
    src_name: str,
    tgt_name: str,
    out_dir: str | Path,
) -> int:
    """Write an aligned code corpus in the trainer's own data layout.

    Sentences present on both sides (matched by sentence_id) are serialized
    as space-separated decimal code tokens; the directory carries a minimal
    two-language manifest plus a vocabulary of the observed codes, so the
    exported corpus trains directly with this package's trainer.  Returns
    the number of unaligned sentences skipped.
    """
    if src_name == tgt_name:
        raise ContractViolation("code translation needs two distinct sides")
    by_id_src = {c.sentence_id: c for c in codes_src}
    by_id_tgt = {c.sentence_id: c for c in codes_tgt}
    shared = sorted(set(by_id_src) & set(by_id_tgt))
    skipped = len(set(by_id_src) ^ set(by_id_tgt))
    if not shared:
        raise DataError("no aligned sentences between the two code sets")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    src_lines = [" ".join(str(c) for c in by_id_src[i].codes) for i in shared]
    tgt_lines = [" ".join(str(c) for c in by_id_tgt[i].codes) for i in shared]
    (out / f"train.{src_name}-{tgt_name}.{src_name}").write_text(
        "\n".join(src_lines) + "\n", encoding="utf-8")
    (out / f"train.{src_name}-{tgt_name}.{tgt_name}").write_text(
        "\n".join(tgt_lines) + "\n", encoding="utf-8")

    observed = set()
    for line in src_lines + tgt_lines:
        observed.update(line.split())
    Vocab.build([src_name, tgt_name], observed).save(out / "vocab.txt")

    manifest = [
        "# exported code-translation corpus (two-language manifest)",
        "seed=0",
        f"bridge={src_name}",
        f"languages={src_name},{tgt_name}",
        "n_semantic_symbols=1",
        f"n_train={len(shared)}",
        "n_test=1",
        "min_len=1",
        "max_len=1",
        f"lang.{src_name}.relatedness=1.0",
        f"lang.{tgt_name}.relatedness=0.0",
    ]
    (out / "family.manifest").write_text("\n".join(manifest) + "\n", encoding="utf-8")
    return skipped


# ---------------------------------------------------------------------------
# PCA explained variance
# ---------------------------------------------------------------------------


def pca_explained_variance(states: np.ndarray, n_components: int | None = None) -> np.ndarray:
    """Cumulative fraction of variance explained by the top components.

    states: [N, D] rows; mean-centered internally.  Constant input yields a
    flat curve at 1 (everything explained by the first component).
    """
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[0] < 2:
        raise ContractViolation(f"PCA needs [N>=2, D] states, got {states.shape}")
    d = states.shape[1]
    if n_components is None:
        n_components = d
    if not 1 <= n_components <= d:
        raise ContractViolation(f"n_components={n_components} outside [1, {d}]")
    centered = states - states.mean(axis=0, keepdims=True)
    cov = centered.T @ centered / (states.shape[0] - 1)
    evals = np.linalg.eigvalsh(cov)[::-1]  # descending
    evals = np.clip(evals, 0.0, None)
    cum = np.cumsum(evals)
    total = cum[-1]
    if total <= 0.0:
        return np.ones(n_components)
    return cum[:n_components] / total


# ---------------------------------------------------------------------------
# usage statistics
# ---------------------------------------------------------------------------


@dataclass
class UsageStats:
    active: np.ndarray  # per-slice count of entries used at least once
    entropy: np.ndarray  # per-slice Shannon entropy (nats) of usage
    top_share: np.ndarray  # per-slice probability mass of the top entry
    collapsed: bool

    @property
    def mean_entropy(self) -> float:
        return float(self.entropy.mean())


def usage_stats(
    seqs: list[CodeSequence], codebook_size: int, n_slices: int,
    collapse_threshold: int | None = None,
) -> UsageStats:
    """Per-slice usage summary; the collapse flag fires when any slice keeps
    fewer active entries than the threshold (default 5% of the table)."""
    if collapse_threshold is None:
        collapse_threshold = max(2, round(0.05 * codebook_size))
    counts = np.zeros((n_slices, codebook_size), dtype=np.float64)
    for seq in seqs:
        per_token = seq.codes.reshape(-1, n_slices)
        for s in range(n_slices):
            counts[s] += np.bincount(per_token[:, s], minlength=codebook_size)
    totals = counts.sum(axis=1, keepdims=True)
    if np.any(totals == 0):
        raise ContractViolation("usage stats over an empty code set")
    probs = counts / totals
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = -np.where(probs > 0, probs * np.log(probs), 0.0).sum(axis=1)
    active = (counts > 0).sum(axis=1)
    return UsageStats(
        active=active,
        entropy=ent,
        top_share=probs.max(axis=1),
        collapsed=bool((active < collapse_threshold).any()),
    )


# ---------------------------------------------------------------------------
# off-target and accuracy
# ---------------------------------------------------------------------------


def off_target_rate(
    hypotheses: list[list[str]], target_lang: str, family: SyntheticFamily
) -> float:
    """Fraction of hypotheses whose tokens are majority-owned by another
    language's surface vocabulary (ties count as off-target)."""
    vocabs = {lang: family.surface_vocab(lang) for lang in family.language_names}
    if target_lang not in vocabs:
        raise ContractViolation(f"unknown target language {target_lang!r}")
    off = 0
    for hyp in hypotheses:
        words = [w for w in hyp if not (w.startswith("<") and w.endswith(">"))]
        scores = {lang: sum(1 for w in words if w in v) for lang, v in vocabs.items()}
        target_score = scores[target_lang]
        if not words or any(
            scores[lang] >= target_score for lang in scores if lang != target_lang
        ):
            off += 1
    return off / len(hypotheses) if hypotheses else 0.0


def token_accuracy(hyp: np.ndarray, ref: np.ndarray) -> float:
    """Position-wise match fraction against the reference length."""
    if len(ref) == 0:
        raise ContractViolation("empty reference")
    hyp = np.asarray(hyp)
    ref = np.asarray(ref)
    n = min(len(hyp), len(ref))
    return float((hyp[:n] == ref[:n]).sum() / len(ref))


def corpus_token_accuracy(hyps: list[np.ndarray], refs: list[np.ndarray]) -> float:
    if len(hyps) != len(refs) or not refs:
        raise ContractViolation("hypothesis/reference count mismatch")
    return float(np.mean([token_accuracy(h, r) for h, r in zip(hyps, refs)]))


def random_baseline_accuracy(
    refs: list[np.ndarray], vocab: Vocab, target_lang: str, family: SyntheticFamily
) -> float:
    """Expected token accuracy of a decoder drawing uniformly from the
    target language's surface vocabulary (computed analytically)."""
    candidates = {vocab.id(w) for w in family.surface_vocab(target_lang)}
    k = len(candidates)
    if k == 0:
        raise ContractViolation(f"target language {target_lang!r} has no vocabulary")
    expected = [sum(1 for t in ref if int(t) in candidates) / (len(ref) * k) for ref in refs]
    return float(np.mean(expected))
