"""Training objectives.

Label-smoothed translation loss, weighted composition with the quantizer
losses, and two baseline regularizers:

  * similarity: L2 distance between mean-pooled source and target encodings,
  * adversarial: a token-level language classifier trained against the
    encoder by alternating optimization.

The adversarial direction is realized by a mirrored loss plus parameter
freezing instead of a gradient-reversal layer: during the encoder phase the
classifier weights pass through stop-gradient and the encoder minimizes
-log(1 - p_true), whose descent direction matches the reversal-layer update
but whose gradient grows (1/(1-p)) rather than flattens as the classifier
gets confident; during the classifier phase the encoder states pass through
stop-gradient and the classifier minimizes plain cross-entropy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractViolation
from .model import EncodedBatch

PROB_EPS = 1e-7  # probabilities are clamped away from 0 before log


@dataclass
class LossWeights:
    alpha_codebook: float = 1.0
    alpha_commitment: float = 1.001
    similarity_weight: float = 0.1


@dataclass
class LossBreakdown:
    """Scalar values of each active term plus the composed total."""

    l_mt: float
    l_codebook: float | None = None
    l_commitment: float | None = None
    l_similarity: float | None = None
    l_classifier: float | None = None
    l_adv: float | None = None
    total: float = 0.0


def translation_loss(logits: Tensor, targets: np.ndarray, mask: np.ndarray, smoothing: float = 0.1) -> Tensor:
    """Mean over non-pad target tokens of label-smoothed cross-entropy."""
    return ad.smoothed_cross_entropy(logits, targets, mask, smoothing)


def compose_total(
    l_mt: Tensor,
    weights: LossWeights,
    l_codebook: Tensor | None = None,
    l_commitment: Tensor | None = None,
    l_similarity: Tensor | None = None,
    l_adv: Tensor | None = None,
) -> tuple[Tensor, LossBreakdown]:
    """Weighted sum of active terms; returns the tape node and a float log row."""
    total = l_mt
    if l_codebook is not None:
        total = ad.add(total, ad.scale(l_codebook, weights.alpha_codebook))
    if l_commitment is not None:
        total = ad.add(total, ad.scale(l_commitment, weights.alpha_commitment))
    if l_similarity is not None:
        total = ad.add(total, ad.scale(l_similarity, weights.similarity_weight))
    if l_adv is not None:
        total = ad.add(total, l_adv)

    def val(t):
        return None if t is None else float(t.data)

    return total, LossBreakdown(
        l_mt=float(l_mt.data),
        l_codebook=val(l_codebook),
        l_commitment=val(l_commitment),
        l_similarity=val(l_similarity),
        l_adv=val(l_adv),
        total=float(total.data),
    )


# ---------------------------------------------------------------------------
# similarity baseline
# ---------------------------------------------------------------------------


def similarity_loss(enc_src: EncodedBatch, enc_tgt: EncodedBatch) -> Tensor:
    """Batch-mean L2 distance between mean-pooled sentence encodings."""
    if (
        enc_src.states.shape[0] != enc_tgt.states.shape[0]
        or enc_src.states.shape[2] != enc_tgt.states.shape[2]
    ):
        raise ContractViolation(
            f"similarity batch shapes incompatible: {enc_src.states.shape} "
            f"vs {enc_tgt.states.shape}"
        )
    pooled_src = ad.mean_pool(enc_src.states, enc_src.mask)  # [B, D]
    pooled_tgt = ad.mean_pool(enc_tgt.states, enc_tgt.mask)
    diff = ad.sub(pooled_src, pooled_tgt)
    b, d = diff.shape
    diff3 = ad.reshape(diff, (b, 1, d))
    return ad.masked_slice_norm_mean(diff3, np.ones((b, 1), dtype=bool), 1)


# ---------------------------------------------------------------------------
# adversarial baseline
# ---------------------------------------------------------------------------


class LanguageClassifier:
    """Token-level linear language classifier over encoder states."""

    def __init__(self, w: Tensor, b: Tensor):
        self.w = w
        self.b = b

    @classmethod
    def init(cls, d_model: int, n_languages: int, rng: np.random.Generator) -> "LanguageClassifier":
        if n_languages < 2:
            raise ContractViolation("classifier needs at least 2 languages")
        w = Tensor(rng.normal(0.0, 1.0 / math.sqrt(d_model), (d_model, n_languages)),
                   requires_grad=True, name="clf.w")
        b = Tensor(np.zeros(n_languages), requires_grad=True, name="clf.b")
        return cls(w, b)

    @property
    def n_languages(self) -> int:
        return self.w.shape[1]

    def parameters(self) -> dict[str, Tensor]:
        return {"clf.w": self.w, "clf.b": self.b}


def _label_probs(
    clf: LanguageClassifier,
    encoded: EncodedBatch,
    labels: np.ndarray,
    freeze_encoder: bool,
    freeze_classifier: bool,
) -> Tensor:
    """Per-token probability assigned to each sentence's true language."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or labels.shape[0] != encoded.states.shape[0]:
        raise ContractViolation(f"labels must be one id per sentence, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= clf.n_languages:
        raise ContractViolation(
            f"unknown language label: ids must lie in [0, {clf.n_languages})"
        )
    states = ad.stop_gradient(encoded.states) if freeze_encoder else encoded.states
    w = ad.stop_gradient(clf.w) if freeze_classifier else clf.w
    b = ad.stop_gradient(clf.b) if freeze_classifier else clf.b
    logits = ad.add(ad.matmul(states, w), b)  # [B, T, L]
    probs = ad.softmax(logits)
    ids = np.broadcast_to(labels[:, None], encoded.mask.shape)
    return ad.gather_last(probs, ids)  # [B, T]


def classifier_loss(
    clf: LanguageClassifier,
    encoded: EncodedBatch,
    labels: np.ndarray,
    freeze_encoder: bool = False,
) -> Tensor:
    """Mean over non-pad tokens of -log p_true_language."""
    p_c = _label_probs(clf, encoded, labels, freeze_encoder, freeze_classifier=False)
    log_p = ad.log(ad.clip(p_c, PROB_EPS, 1.0))
    return ad.scale(ad.masked_mean_vec(log_p, encoded.mask), -1.0)


def adversarial_loss(
    clf: LanguageClassifier,
    encoded: EncodedBatch,
    labels: np.ndarray,
    freeze_classifier: bool = True,
) -> Tensor:
    """Mean over non-pad tokens of -log(1 - p_true_language).

    Added to the encoder-phase total, so minimizing it drives the true-class
    probability down (the encoder hides the language signal).  The derivative
    magnitude w.r.t. p_c is 1/(1 - p_c): the better the classifier, the
    stronger the push on the encoder — unlike plain gradient reversal of the
    classifier loss, whose 1/p_c gradient flattens exactly when the
    classifier performs well.
    """
    p_c = _label_probs(clf, encoded, labels, freeze_encoder=False, freeze_classifier=freeze_classifier)
    one_minus = ad.affine(p_c, -1.0, 1.0)
    log_term = ad.masked_mean_vec(ad.log(ad.clip(one_minus, PROB_EPS, 1.0)), encoded.mask)
    return ad.scale(log_term, -1.0)


def classifier_phase_loss(clf: LanguageClassifier, encoded: EncodedBatch, labels: np.ndarray) -> Tensor:
    """Alternating step, classifier turn: cross-entropy with frozen encoder."""
    return classifier_loss(clf, encoded, labels, freeze_encoder=True)


def encoder_phase_loss(
    l_mt: Tensor, clf: LanguageClassifier, encoded: EncodedBatch, labels: np.ndarray
) -> Tensor:
    """Alternating step, encoder turn: translation + mirrored classifier loss
    with the classifier weights frozen."""
    return ad.add(l_mt, adversarial_loss(clf, encoded, labels, freeze_classifier=True))
