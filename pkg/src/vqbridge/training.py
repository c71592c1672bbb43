"""Adam training with an inverse-square-root schedule and token budgets.

Determinism layout: one seed sequence spawns six independent child streams
(parameter init, data sampling, gate draws, codebook init, dropout,
classifier init) in a fixed order.  Disabling the quantizer or the
adversarial baseline never touches the remaining streams, so a run with
p_quantize=0 and zero auxiliary weights consumes randomness identically to
a run without the quantizer and ends with bit-identical model parameters.

Gradient accumulation: micro-batches are drawn until the target-token
budget is reached; each backward pass is scaled by its token count and the
accumulated gradient is divided by the total, giving an exact token-level
mean in a fixed order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_checkpoint, restore_rng, rng_state, save_checkpoint
from .corpus import PAD, SamplingPolicy, Vocab, load_training_pairs, sample_batch, sample_pair
from .errors import ContractViolation, NumericError, UsageError
from .model import ModelConfig, TranslationModel
from .objectives import (
    LanguageClassifier,
    LossWeights,
    adversarial_loss,
    classifier_phase_loss,
    compose_total,
    similarity_loss,
    translation_loss,
)
from .quantizer import QuantizerConfig, encoder_stats, init_codebook, quantize
from . import runconfig


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class OptimConfig:
    lr: float = 1e-4  # paper peak learning rate
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    warmup_steps: int = 200  # paper: 2500
    tokens_per_step: int = 2048  # paper: 16384
    total_steps: int = 1000

    def validate(self):
        if self.lr <= 0:
            raise ContractViolation(f"lr must be positive, got {self.lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ContractViolation(f"betas must lie in [0, 1): {self.beta1}, {self.beta2}")
        if self.warmup_steps < 1 or self.total_steps < 1 or self.tokens_per_step < 1:
            raise ContractViolation("step counts must be positive")
        return self


def lr_at(step: int, cfg: OptimConfig) -> float:
    """Linear warmup to the peak, then inverse-square-root decay."""
    if step < 1:
        raise ContractViolation(f"step must be >= 1, got {step}")
    return cfg.lr * min(step / cfg.warmup_steps, math.sqrt(cfg.warmup_steps / step))


class Adam:
    """Adam with bias correction over one named parameter group."""

    def __init__(self, params: dict[str, Tensor], cfg: OptimConfig):
        self.params = params
        self.cfg = cfg.validate()
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}

    def step(self, lr: float):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[name] = c.beta1 * self.m[name] + (1.0 - c.beta1) * g
            v = self.v[name] = c.beta2 * self.v[name] + (1.0 - c.beta2) * g * g
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}.t": np.asarray(float(self.t))}
        for n in self.params:
            out[f"{prefix}.m.{n}"] = self.m[n]
            out[f"{prefix}.v.{n}"] = self.v[n]
        return out

    def load_state(self, arrays: dict[str, np.ndarray], prefix: str):
        self.t = int(arrays[f"{prefix}.t"])
        for n in self.params:
            self.m[n] = arrays[f"{prefix}.m.{n}"].copy()
            self.v[n] = arrays[f"{prefix}.v.{n}"].copy()


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

_KNOWN_KEYS = {
    "seed", "d_model", "n_heads", "enc_layers", "dec_layers", "d_ffn",
    "dropout", "attn_dropout", "label_smoothing", "activation",
    "quantizer_enabled", "codebook_size", "n_slices", "alpha_codebook",
    "alpha_commitment", "p_quantize",
    "lr", "beta1", "beta2", "adam_eps", "warmup_steps", "tokens_per_step",
    "total_steps", "micro_tokens",
    "use_similarity", "similarity_weight", "use_adversarial",
    "temperature", "max_len", "checkpoint_every",
}


@dataclass
class TrainConfig:
    seed: int = 1
    d_model: int = 64
    n_heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    d_ffn: int = 256
    dropout: float = 0.1
    attn_dropout: float = 0.0
    label_smoothing: float = 0.1
    activation: str = "gelu"
    quantizer_enabled: bool = True
    codebook_size: int = 256
    n_slices: int = 4
    alpha_codebook: float = 1.0
    alpha_commitment: float = 1.001
    p_quantize: float = 0.5
    optim: OptimConfig = field(default_factory=OptimConfig)
    micro_tokens: int = 256
    use_similarity: bool = False
    similarity_weight: float = 0.1
    use_adversarial: bool = False
    temperature: float = 5.0
    max_len: int = 64
    checkpoint_every: int = 0  # 0: only the final checkpoint

    def validate(self):
        self.optim.validate()
        if self.quantizer_enabled and self.d_model % self.n_slices != 0:
            raise ContractViolation(
                f"d_model={self.d_model} must be divisible by n_slices={self.n_slices}"
            )
        if self.micro_tokens < 1:
            raise ContractViolation("micro_tokens must be positive")
        self.quantizer_config().validate()
        return self

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size, d_model=self.d_model, n_heads=self.n_heads,
            n_layers_enc=self.enc_layers, n_layers_dec=self.dec_layers,
            d_ffn=self.d_ffn, dropout=self.dropout, attn_dropout=self.attn_dropout,
            label_smoothing=self.label_smoothing, activation=self.activation,
        ).validate()

    def quantizer_config(self) -> QuantizerConfig:
        return QuantizerConfig(
            codebook_size=self.codebook_size, n_slices=self.n_slices,
            alpha_codebook=self.alpha_codebook, alpha_commitment=self.alpha_commitment,
            p_quantize=self.p_quantize, enabled=self.quantizer_enabled,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            alpha_codebook=self.alpha_codebook,
            alpha_commitment=self.alpha_commitment,
            similarity_weight=self.similarity_weight,
        )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed, "d_model": self.d_model, "n_heads": self.n_heads,
            "enc_layers": self.enc_layers, "dec_layers": self.dec_layers,
            "d_ffn": self.d_ffn, "dropout": self.dropout,
            "attn_dropout": self.attn_dropout,
            "label_smoothing": self.label_smoothing, "activation": self.activation,
            "quantizer_enabled": self.quantizer_enabled,
            "codebook_size": self.codebook_size, "n_slices": self.n_slices,
            "alpha_codebook": self.alpha_codebook,
            "alpha_commitment": self.alpha_commitment,
            "p_quantize": self.p_quantize,
            "lr": self.optim.lr, "beta1": self.optim.beta1, "beta2": self.optim.beta2,
            "adam_eps": self.optim.eps, "warmup_steps": self.optim.warmup_steps,
            "tokens_per_step": self.optim.tokens_per_step,
            "total_steps": self.optim.total_steps,
            "micro_tokens": self.micro_tokens,
            "use_similarity": self.use_similarity,
            "similarity_weight": self.similarity_weight,
            "use_adversarial": self.use_adversarial,
            "temperature": self.temperature, "max_len": self.max_len,
            "checkpoint_every": self.checkpoint_every,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        optim = OptimConfig(
            lr=float(d.get("lr", 1e-4)), beta1=float(d.get("beta1", 0.9)),
            beta2=float(d.get("beta2", 0.98)), eps=float(d.get("adam_eps", 1e-8)),
            warmup_steps=int(d.get("warmup_steps", 200)),
            tokens_per_step=int(d.get("tokens_per_step", 2048)),
            total_steps=int(d.get("total_steps", 1000)),
        )
        def b(key, default):
            v = d.get(key, default)
            return v if isinstance(v, bool) else str(v).lower() in ("true", "1", "yes", "on")
        cfg = cls(
            seed=int(d.get("seed", 1)), d_model=int(d.get("d_model", 64)),
            n_heads=int(d.get("n_heads", 4)), enc_layers=int(d.get("enc_layers", 2)),
            dec_layers=int(d.get("dec_layers", 2)), d_ffn=int(d.get("d_ffn", 256)),
            dropout=float(d.get("dropout", 0.1)),
            attn_dropout=float(d.get("attn_dropout", 0.0)),
            label_smoothing=float(d.get("label_smoothing", 0.1)),
            activation=str(d.get("activation", "gelu")),
            quantizer_enabled=b("quantizer_enabled", True),
            codebook_size=int(d.get("codebook_size", 256)),
            n_slices=int(d.get("n_slices", 4)),
            alpha_codebook=float(d.get("alpha_codebook", 1.0)),
            alpha_commitment=float(d.get("alpha_commitment", 1.001)),
            p_quantize=float(d.get("p_quantize", 0.5)),
            optim=optim,
            micro_tokens=int(d.get("micro_tokens", 256)),
            use_similarity=b("use_similarity", False),
            similarity_weight=float(d.get("similarity_weight", 0.1)),
            use_adversarial=b("use_adversarial", False),
            temperature=float(d.get("temperature", 5.0)),
            max_len=int(d.get("max_len", 64)),
            checkpoint_every=int(d.get("checkpoint_every", 0)),
        )
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        cfg = runconfig.parse_kv_file(path)
        runconfig.reject_unknown(cfg, _KNOWN_KEYS)
        try:
            out = cls.from_dict(cfg)
            out.validate()
        except (ValueError, ContractViolation) as e:
            raise UsageError(f"invalid training config {path}: {e}") from None
        return out


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    checkpoint: Path
    metrics: Path
    steps: int
    first_l_mt: float
    last_l_mt: float


_METRIC_COLUMNS = (
    "step", "phase", "lr", "tokens", "l_mt", "l_codebook", "l_commitment",
    "l_similarity", "l_classifier", "l_adv", "total", "quantized_frac",
    "usage_entropy",
)


def _fmt(x) -> str:
    return "-" if x is None else f"{x:.6f}"


def _entropy_per_slice(counts: np.ndarray) -> float:
    totals = counts.sum(axis=1, keepdims=True)
    probs = np.where(totals > 0, counts / np.maximum(totals, 1.0), 0.0)
    logs = np.log(np.where(probs > 0, probs, 1.0))
    return float(-(probs * logs).sum(axis=1).mean())


class Trainer:
    """Owns the model, parameter groups, RNG streams, and the metrics log."""

    def __init__(self, cfg: TrainConfig, data_dir: str | Path, out_dir: str | Path):
        self.cfg = cfg.validate()
        self.data_dir = Path(data_dir)
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)

        self.vocab = Vocab.load(self.data_dir / "vocab.txt")
        self.pairs = load_training_pairs(self.data_dir, self.vocab, cfg.max_len)
        self.policy = SamplingPolicy(temperature=cfg.temperature).validate()

        seeds = np.random.SeedSequence(cfg.seed).spawn(6)
        rng_params = np.random.default_rng(seeds[0])
        self.rng_data = np.random.default_rng(seeds[1])
        self.rng_gate = np.random.default_rng(seeds[2])
        rng_codebook = np.random.default_rng(seeds[3])
        self.rng_dropout = np.random.default_rng(seeds[4])
        rng_clf = np.random.default_rng(seeds[5])

        self.model = TranslationModel.init(cfg.model_config(len(self.vocab)), rng_params)
        self.qcfg = cfg.quantizer_config()
        self.codebook: Tensor | None = None
        if cfg.quantizer_enabled:
            warm_pair = sample_pair(self.policy, self.pairs, rng_codebook)
            warm = sample_batch(warm_pair, self.vocab, cfg.micro_tokens, rng_codebook)
            encoded = self.model.encode(warm.src, PAD)
            center, scale = encoder_stats(encoded.states.data, encoded.mask)
            self.codebook = init_codebook(
                cfg.codebook_size, cfg.d_model, scale, rng_codebook, center=center)

        self.classifier: LanguageClassifier | None = None
        if cfg.use_adversarial:
            self.classifier = LanguageClassifier.init(
                cfg.d_model, len(self.vocab.languages), rng_clf)

        group = dict(self.model.parameters())
        if self.codebook is not None:
            group["codebook"] = self.codebook
        self.opt_model = Adam(group, cfg.optim)
        self.opt_clf = (Adam(self.classifier.parameters(), cfg.optim)
                        if self.classifier else None)

        self.start_step = 1
        self.last_checkpoint: Path | None = None

    # -- checkpointing ------------------------------------------------------

    def _arrays(self) -> dict[str, np.ndarray]:
        out = {n: p.data for n, p in self.opt_model.params.items()}
        out.update(self.opt_model.state_arrays("adam"))
        if self.classifier:
            for n, p in self.classifier.parameters().items():
                out[n] = p.data
            out.update(self.opt_clf.state_arrays("adam_clf"))
        return out

    def save(self, step: int) -> Path:
        meta = {
            "kind": "train",
            "step": step,
            "config": self.cfg.to_dict(),
            "rng": {
                "data": rng_state(self.rng_data),
                "gate": rng_state(self.rng_gate),
                "dropout": rng_state(self.rng_dropout),
            },
        }
        path = self.out_dir / f"checkpoint_{step:06d}.ckpt"
        save_checkpoint(path, self._arrays(), meta, dtype="f64")
        self.last_checkpoint = path
        return path

    def resume(self, ckpt_path: str | Path):
        arrays, meta, dtype = load_checkpoint(ckpt_path)
        if meta.get("kind") != "train":
            raise UsageError(f"{ckpt_path} is not a training checkpoint")
        if dtype != "f64":
            raise UsageError("resume requires a 64-bit checkpoint")
        for n, p in self.opt_model.params.items():
            p.data = arrays[n].copy()
        self.opt_model.load_state(arrays, "adam")
        if self.classifier:
            for n, p in self.classifier.parameters().items():
                p.data = arrays[n].copy()
            self.opt_clf.load_state(arrays, "adam_clf")
        self.rng_data = restore_rng(meta["rng"]["data"])
        self.rng_gate = restore_rng(meta["rng"]["gate"])
        self.rng_dropout = restore_rng(meta["rng"]["dropout"])
        self.start_step = int(meta["step"]) + 1

    # -- single training step ------------------------------------------------

    def _phase(self, step: int) -> str:
        if self.classifier is not None and step % 2 == 0:
            return "classifier"
        return "encoder_decoder"

    def _drop_rng(self):
        return self.rng_dropout if self.cfg.dropout > 0 or self.cfg.attn_dropout > 0 else None

    def train_step(self, step: int) -> dict:
        try:
            return self._train_step(step)
        except NumericError as e:
            ref = self.last_checkpoint or "none"
            raise NumericError(
                f"{e} (step {step}; last good checkpoint: {ref})") from None

    def _train_step(self, step: int) -> dict:
        cfg = self.cfg
        phase = self._phase(step)
        opt = self.opt_clf if phase == "classifier" else self.opt_model
        self.opt_model.zero_grad()
        if self.opt_clf:
            self.opt_clf.zero_grad()

        tokens_done = 0
        sums: dict[str, float] = {}
        quantized = 0
        micro_count = 0
        code_counts = (np.zeros((cfg.n_slices, cfg.codebook_size))
                       if self.codebook is not None else None)

        while tokens_done < cfg.optim.tokens_per_step:
            pair = sample_pair(self.policy, self.pairs, self.rng_data)
            batch = sample_batch(pair, self.vocab, cfg.micro_tokens, self.rng_data)
            micro_count += 1
            with ad.Tape() as tape:
                encoded = self.model.encode(batch.src, PAD, self._drop_rng())
                if phase == "classifier":
                    labels = np.full(batch.src.shape[0],
                                     self.vocab.lang_index(batch.src_lang))
                    loss = classifier_phase_loss(self.classifier, encoded, labels)
                    n_tokens = int(encoded.mask.sum())
                    parts = {"l_classifier": float(loss.data), "total": float(loss.data)}
                else:
                    l_cb = l_cm = None
                    context = encoded.states
                    if self.codebook is not None:
                        gate = float(self.rng_gate.random())
                        qout = quantize(encoded, self.codebook, self.qcfg, gate)
                        context, l_cb, l_cm = qout.context, qout.loss_codebook, qout.loss_commitment
                        quantized += int(qout.used_quantized)
                        real = qout.codes[encoded.mask]
                        for s in range(cfg.n_slices):
                            code_counts[s] += np.bincount(
                                real[:, s], minlength=cfg.codebook_size)
                    logits = self.model.decode(context, encoded.mask,
                                               batch.tgt_in, self._drop_rng())
                    l_mt = translation_loss(logits, batch.tgt_out, batch.tgt_mask,
                                            cfg.label_smoothing)
                    l_sim = None
                    if cfg.use_similarity:
                        tgt_as_src = self._target_as_source(batch)
                        enc_tgt = self.model.encode(tgt_as_src, PAD, self._drop_rng())
                        l_sim = similarity_loss(encoded, enc_tgt)
                    l_adv = None
                    if self.classifier is not None:
                        labels = np.full(batch.src.shape[0],
                                         self.vocab.lang_index(batch.src_lang))
                        l_adv = adversarial_loss(self.classifier, encoded, labels)
                    loss, breakdown = compose_total(
                        l_mt, cfg.loss_weights(), l_cb, l_cm, l_sim, l_adv)
                    n_tokens = batch.n_target_tokens
                    parts = {k: v for k, v in vars(breakdown).items() if v is not None}
                if not np.isfinite(float(loss.data)):
                    raise NumericError("non-finite training loss")
                tape.backward(ad.scale(loss, float(n_tokens)))
            tokens_done += n_tokens
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + v * n_tokens

        for p in opt.params.values():
            if p.grad is not None:
                p.grad /= float(tokens_done)
        opt.step(lr_at(step, cfg.optim))

        row = {k: v / tokens_done for k, v in sums.items()}
        row.update(step=step, phase=phase, lr=lr_at(step, cfg.optim), tokens=tokens_done)
        row["quantized_frac"] = (quantized / micro_count
                                 if phase != "classifier" and self.codebook is not None
                                 else None)
        row["usage_entropy"] = (_entropy_per_slice(code_counts)
                                if code_counts is not None and code_counts.sum() > 0
                                else None)
        return row

    def _target_as_source(self, batch) -> np.ndarray:
        """Re-frame target sentences as encoder input tagged for the reverse
        direction, for the pooled-similarity baseline."""
        tag = self.vocab.tag_id(batch.src_lang)
        b, tt = batch.tgt_out.shape
        out = np.full((b, tt + 1), PAD, dtype=np.int64)
        out[:, 0] = tag
        out[:, 1:] = batch.tgt_out  # words + eos, already padded
        return out

    # -- full run -------------------------------------------------------------

    def run(self, resume_from: str | Path | None = None) -> TrainResult:
        cfg = self.cfg
        if resume_from is not None:
            self.resume(resume_from)
        metrics_path = self.out_dir / "metrics.tsv"
        mode = "a" if resume_from is not None and metrics_path.exists() else "w"
        first_mt = last_mt = math.nan
        with open(metrics_path, mode, encoding="utf-8") as log:
            if mode == "w":
                log.write("\t".join(_METRIC_COLUMNS) + "\n")
            for step in range(self.start_step, cfg.optim.total_steps + 1):
                row = self.train_step(step)
                if "l_mt" in row:
                    if math.isnan(first_mt):
                        first_mt = row["l_mt"]
                    last_mt = row["l_mt"]
                log.write("\t".join(
                    str(row["step"]) if c == "step" else
                    row["phase"] if c == "phase" else
                    str(row["tokens"]) if c == "tokens" else
                    _fmt(row.get(c)) for c in _METRIC_COLUMNS) + "\n")
                if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                    self.save(step)
        final = self.save(cfg.optim.total_steps)
        return TrainResult(checkpoint=final, metrics=metrics_path,
                           steps=cfg.optim.total_steps,
                           first_l_mt=first_mt, last_l_mt=last_mt)


def train(cfg: TrainConfig, data_dir: str | Path, out_dir: str | Path,
          resume_from: str | Path | None = None) -> TrainResult:
    return Trainer(cfg, data_dir, out_dir).run(resume_from)


# ---------------------------------------------------------------------------
# loading a trained system back
# ---------------------------------------------------------------------------


@dataclass
class TrainedSystem:
    model: TranslationModel
    codebook: np.ndarray | None
    config: TrainConfig
    step: int


def load_system(ckpt_path: str | Path, vocab: Vocab) -> TrainedSystem:
    arrays, meta, _dtype = load_checkpoint(ckpt_path)
    if meta.get("kind") != "train":
        raise UsageError(f"{ckpt_path} is not a training checkpoint")
    cfg = TrainConfig.from_dict(meta["config"])
    model_cfg = cfg.model_config(len(vocab))
    params = {}
    for name in arrays:
        if name.startswith(("adam", "clf.")) or name == "codebook":
            continue
        params[name] = Tensor(arrays[name].copy(), requires_grad=True, name=name)
    model = TranslationModel(model_cfg, params)
    codebook = arrays["codebook"].copy() if "codebook" in arrays else None
    return TrainedSystem(model=model, codebook=codebook, config=cfg,
                         step=int(meta.get("step", 0)))
