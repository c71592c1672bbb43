"""Synthetic multilingual data, vocabulary, sampling, and batching.

A language family is built from shared semantic sequences: Zipf-distributed
integer strings that every language realizes through its own surface-token
bijection plus a deterministic local word-order rule.  Relatedness is
controlled exactly by nested vocabulary prefixes — language `l` shares its
first `round(r_l * n_semantic_symbols)` surface forms with the bridge
language, so any two languages share exactly `min(r_a, r_b)` of their
vocabulary.  Sentences realized from one semantic sequence are mutual
translations by construction.

Training corpora pair the bridge with every other language; a multiway test
set realizes the same held-out semantic sequences in all languages, which
makes zero-shot directions directly evaluable and gives aligned material
for the code analyses.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractViolation, DataError, UsageError
from . import runconfig

PERMUTATIONS = ("identity", "swap2", "rot3")

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")


# ---------------------------------------------------------------------------
# vocabulary
# ---------------------------------------------------------------------------


class Vocab:
    """Closed token inventory: specials, one tag per language, surface forms."""

    def __init__(self, tokens: list[str]):
        if tuple(tokens[:4]) != SPECIALS:
            raise ContractViolation("vocabulary must start with the four special tokens")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ContractViolation("vocabulary contains duplicate tokens")
        self.languages = [t[len("<lang:"):-1] for t in self.tokens if t.startswith("<lang:")]

    @classmethod
    def build(cls, languages: list[str], surface_tokens: set[str]) -> "Vocab":
        tags = [f"<lang:{l}>" for l in languages]
        return cls(list(SPECIALS) + tags + sorted(surface_tokens))

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self.index.get(token, UNK)

    def tag_id(self, lang: str) -> int:
        tag = f"<lang:{lang}>"
        if tag not in self.index:
            raise ContractViolation(f"unknown language {lang!r}")
        return self.index[tag]

    def lang_index(self, lang: str) -> int:
        """Dense classifier label: position of the language among the tags."""
        if lang not in self.languages:
            raise ContractViolation(f"unknown language {lang!r}")
        return self.languages.index(lang)

    def encode(self, words: list[str]) -> np.ndarray:
        return np.array([self.id(w) for w in words], dtype=np.int64)

    def decode(self, ids) -> list[str]:
        return [self.tokens[int(i)] for i in ids]

    def detokenize(self, ids) -> str:
        return " ".join(self.decode(ids))

    def save(self, path: str | Path):
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if len(lines) < 4:
            raise DataError(f"vocabulary file {path} is truncated")
        return cls(lines)


# ---------------------------------------------------------------------------
# family specification
# ---------------------------------------------------------------------------


@dataclass
class LanguageSpec:
    name: str
    relatedness: float  # shared vocabulary fraction with the bridge
    permutation: str = "identity"

    def validate(self):
        if not 0.0 <= self.relatedness <= 1.0:
            raise ContractViolation(
                f"language {self.name!r}: relatedness {self.relatedness} outside [0, 1]"
            )
        if self.permutation not in PERMUTATIONS:
            raise ContractViolation(
                f"language {self.name!r}: unknown permutation {self.permutation!r}"
            )
        return self


@dataclass
class FamilySpec:
    bridge: str
    languages: list[LanguageSpec]
    n_semantic_symbols: int = 120
    n_train: int = 2000  # sentences per bridge pair
    n_test: int = 200  # multiway sentences
    min_len: int = 3
    max_len: int = 12
    zipf_s: float = 1.3

    def validate(self):
        names = [l.name for l in self.languages]
        if len(set(names)) != len(names):
            raise ContractViolation("duplicate language names")
        if self.bridge not in names:
            raise ContractViolation(f"bridge {self.bridge!r} is not one of the languages")
        if len(names) < 2:
            raise ContractViolation("a family needs at least two languages")
        if self.n_semantic_symbols < 1 or self.n_train < 1 or self.n_test < 1:
            raise ContractViolation("corpus sizes must be positive")
        if not 1 <= self.min_len <= self.max_len:
            raise ContractViolation(f"bad length range [{self.min_len}, {self.max_len}]")
        for l in self.languages:
            l.validate()
        bridge_spec = next(l for l in self.languages if l.name == self.bridge)
        if bridge_spec.relatedness != 1.0:
            raise ContractViolation("the bridge language must have relatedness 1.0")
        return self

    @classmethod
    def from_config(cls, cfg: dict[str, str]) -> "FamilySpec":
        lang_names = [s.strip() for s in runconfig.get_str(cfg, "languages", required=True).split(",") if s.strip()]
        languages = []
        for name in lang_names:
            languages.append(LanguageSpec(
                name=name,
                relatedness=runconfig.get_float(cfg, f"lang.{name}.relatedness", required=True),
                permutation=runconfig.get_str(cfg, f"lang.{name}.permutation", "identity"),
            ))
        spec = cls(
            bridge=runconfig.get_str(cfg, "bridge", required=True),
            languages=languages,
            n_semantic_symbols=runconfig.get_int(cfg, "n_semantic_symbols", 120),
            n_train=runconfig.get_int(cfg, "n_train", 2000),
            n_test=runconfig.get_int(cfg, "n_test", 200),
            min_len=runconfig.get_int(cfg, "min_len", 3),
            max_len=runconfig.get_int(cfg, "max_len", 12),
            zipf_s=runconfig.get_float(cfg, "zipf_s", 1.3),
        )
        known = {"languages", "bridge", "n_semantic_symbols", "n_train", "n_test",
                 "min_len", "max_len", "zipf_s"}
        for name in lang_names:
            known.add(f"lang.{name}.relatedness")
            known.add(f"lang.{name}.permutation")
        runconfig.reject_unknown(cfg, known)
        try:
            return spec.validate()
        except ContractViolation as e:
            raise UsageError(str(e)) from None


# ---------------------------------------------------------------------------
# the family itself
# ---------------------------------------------------------------------------


def apply_permutation(words: list, rule: str) -> list:
    """Deterministic local reorder: pairwise swap or 3-block right rotation."""
    out = list(words)
    if rule == "identity":
        return out
    if rule == "swap2":
        for i in range(0, len(out) - 1, 2):
            out[i], out[i + 1] = out[i + 1], out[i]
        return out
    if rule == "rot3":
        for i in range(0, len(out) - 2, 3):
            out[i], out[i + 1], out[i + 2] = out[i + 2], out[i], out[i + 1]
        return out
    raise ContractViolation(f"unknown permutation rule {rule!r}")


class SyntheticFamily:
    """Realizes semantic sequences as sentences in each member language."""

    def __init__(self, spec: FamilySpec):
        self.spec = spec.validate()
        self.shared_counts = {
            l.name: round(l.relatedness * spec.n_semantic_symbols) for l in spec.languages
        }
        self.permutations = {l.name: l.permutation for l in spec.languages}

    @property
    def language_names(self) -> list[str]:
        return [l.name for l in self.spec.languages]

    @property
    def bridge(self) -> str:
        return self.spec.bridge

    def surface_form(self, lang: str, symbol: int) -> str:
        """Nested-prefix map: low symbols share the bridge's surface form."""
        if symbol < self.shared_counts[lang]:
            return f"w{symbol}"
        return f"{lang}:w{symbol}"

    def surface_vocab(self, lang: str) -> set[str]:
        return {self.surface_form(lang, s) for s in range(self.spec.n_semantic_symbols)}

    def realize(self, semantic: np.ndarray, lang: str) -> list[str]:
        words = [self.surface_form(lang, int(s)) for s in semantic]
        return apply_permutation(words, self.permutations[lang])

    def relatedness(self, a: str, b: str) -> float:
        """Exact shared-vocabulary fraction between two member languages."""
        return min(self.shared_counts[a], self.shared_counts[b]) / self.spec.n_semantic_symbols

    def build_vocab(self) -> Vocab:
        surface: set[str] = set()
        for lang in self.language_names:
            surface |= self.surface_vocab(lang)
        return Vocab.build(self.language_names, surface)

    def sample_semantic(self, rng: np.random.Generator, n: int) -> list[np.ndarray]:
        k = self.spec.n_semantic_symbols
        ranks = np.arange(1, k + 1, dtype=np.float64)
        probs = ranks ** (-self.spec.zipf_s)
        probs /= probs.sum()
        lengths = rng.integers(self.spec.min_len, self.spec.max_len + 1, size=n)
        return [rng.choice(k, size=int(length), p=probs) for length in lengths]


# ---------------------------------------------------------------------------
# generation to disk
# ---------------------------------------------------------------------------


def _write_lines(path: Path, lines: list[str]):
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def write_manifest(path: Path, spec: FamilySpec, family: SyntheticFamily, seed: int):
    names = family.language_names
    lines = [
        "# synthetic language family manifest",
        f"seed={seed}",
        f"bridge={spec.bridge}",
        f"languages={','.join(names)}",
        f"n_semantic_symbols={spec.n_semantic_symbols}",
        f"n_train={spec.n_train}",
        f"n_test={spec.n_test}",
        f"min_len={spec.min_len}",
        f"max_len={spec.max_len}",
        f"zipf_s={spec.zipf_s}",
    ]
    for l in spec.languages:
        lines.append(f"lang.{l.name}.relatedness={l.relatedness}")
        lines.append(f"lang.{l.name}.permutation={l.permutation}")
        lines.append(f"lang.{l.name}.shared_count={family.shared_counts[l.name]}")
    for a in names:
        for b in names:
            lines.append(f"relatedness.{a}.{b}={family.relatedness(a, b)}")
    _write_lines(path, lines)


def load_manifest(path: str | Path) -> tuple[FamilySpec, SyntheticFamily, int]:
    cfg = runconfig.parse_kv_file(path)
    keep = {k: v for k, v in cfg.items()
            if not k.startswith("relatedness.") and not k.endswith(".shared_count")}
    seed = runconfig.get_int(keep, "seed", required=True)
    del keep["seed"]
    spec = FamilySpec.from_config(keep)
    return spec, SyntheticFamily(spec), seed


def generate_family(spec: FamilySpec, seed: int, out_dir: str | Path) -> SyntheticFamily:
    """Write manifest, vocabulary, bridge-pair training files, multiway test set.

    Regeneration with the same seed and spec is byte-identical: every random
    draw derives from one seed sequence with a fixed spawn order.
    """
    spec.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    family = SyntheticFamily(spec)
    root = np.random.SeedSequence(seed)
    names = family.language_names
    others = [n for n in names if n != spec.bridge]
    # one child stream per training pair (in declared order) plus the test set
    children = root.spawn(len(others) + 1)

    write_manifest(out / "family.manifest", spec, family, seed)
    family.build_vocab().save(out / "vocab.txt")

    for i, lang in enumerate(others):
        rng = np.random.default_rng(children[i])
        semantics = family.sample_semantic(rng, spec.n_train)
        _write_lines(out / f"train.{spec.bridge}-{lang}.{spec.bridge}",
                     [" ".join(family.realize(s, spec.bridge)) for s in semantics])
        _write_lines(out / f"train.{spec.bridge}-{lang}.{lang}",
                     [" ".join(family.realize(s, lang)) for s in semantics])

    test_rng = np.random.default_rng(children[-1])
    test_semantics = family.sample_semantic(test_rng, spec.n_test)
    for lang in names:
        _write_lines(out / f"test.multiway.{lang}",
                     [" ".join(family.realize(s, lang)) for s in test_semantics])
    return family


# ---------------------------------------------------------------------------
# parallel corpora
# ---------------------------------------------------------------------------


@dataclass
class LanguagePair:
    src_lang: str
    tgt_lang: str
    sentences: list[tuple[np.ndarray, np.ndarray]]  # surface-token id arrays
    n_dropped: int = 0

    @property
    def size(self) -> int:
        return len(self.sentences)

    def reversed(self) -> "LanguagePair":
        return LanguagePair(
            src_lang=self.tgt_lang,
            tgt_lang=self.src_lang,
            sentences=[(t, s) for s, t in self.sentences],
            n_dropped=self.n_dropped,
        )


def ingest_parallel(
    file_src: str | Path,
    file_tgt: str | Path,
    src_lang: str,
    tgt_lang: str,
    vocab: Vocab,
    max_len: int = 64,
) -> LanguagePair:
    """Whitespace-tokenize aligned files into vocab ids, dropping long/empty lines."""
    src_lines = Path(file_src).read_text(encoding="utf-8").splitlines()
    tgt_lines = Path(file_tgt).read_text(encoding="utf-8").splitlines()
    if len(src_lines) != len(tgt_lines):
        raise DataError(
            f"line count mismatch: {file_src} has {len(src_lines)} lines, "
            f"{file_tgt} has {len(tgt_lines)}"
        )
    sentences: list[tuple[np.ndarray, np.ndarray]] = []
    dropped = 0
    for s_line, t_line in zip(src_lines, tgt_lines):
        s_words, t_words = s_line.split(), t_line.split()
        if not s_words or not t_words or len(s_words) > max_len or len(t_words) > max_len:
            dropped += 1
            continue
        sentences.append((vocab.encode(s_words), vocab.encode(t_words)))
    return LanguagePair(src_lang, tgt_lang, sentences, n_dropped=dropped)


def load_training_pairs(data_dir: str | Path, vocab: Vocab, max_len: int = 64) -> list[LanguagePair]:
    """Both directions of every bridge-pair training file in the directory."""
    data_dir = Path(data_dir)
    spec, _family, _seed = load_manifest(data_dir / "family.manifest")
    pairs = []
    for lang in [n.name for n in spec.languages if n.name != spec.bridge]:
        fwd = ingest_parallel(
            data_dir / f"train.{spec.bridge}-{lang}.{spec.bridge}",
            data_dir / f"train.{spec.bridge}-{lang}.{lang}",
            spec.bridge, lang, vocab, max_len,
        )
        pairs.append(fwd)
        pairs.append(fwd.reversed())
    if not pairs:
        raise DataError(f"no training pairs found in {data_dir}")
    return pairs


# ---------------------------------------------------------------------------
# sampling and batching
# ---------------------------------------------------------------------------


@dataclass
class SamplingPolicy:
    temperature: float = 5.0

    def validate(self):
        if self.temperature <= 0:
            raise ContractViolation(f"temperature must be positive, got {self.temperature}")
        return self


def pair_probabilities(sizes: list[int], temperature: float) -> np.ndarray:
    """p_l proportional to (n_l / total)^(1/T)."""
    n = np.asarray(sizes, dtype=np.float64)
    if n.size == 0 or np.any(n <= 0):
        raise ContractViolation("pair sizes must be positive")
    p = (n / n.sum()) ** (1.0 / temperature)
    return p / p.sum()


def sample_pair_indices(
    policy: SamplingPolicy, sizes: list[int], rng: np.random.Generator, n: int
) -> np.ndarray:
    """n temperature-weighted pair indices in one vectorized draw."""
    policy.validate()
    if not sizes:
        raise ContractViolation("no pairs to sample from")
    probs = pair_probabilities(sizes, policy.temperature)
    return rng.choice(len(sizes), size=n, p=probs)


def sample_pair(policy: SamplingPolicy, pairs: list[LanguagePair], rng: np.random.Generator) -> LanguagePair:
    idx = sample_pair_indices(policy, [p.size for p in pairs], rng, 1)
    return pairs[int(idx[0])]


@dataclass
class Batch:
    """One micro-batch in a single translation direction."""

    src: np.ndarray  # [B, Ts]: target-language tag, words, eos, pad...
    tgt_in: np.ndarray  # [B, Tt]: bos, words, pad...
    tgt_out: np.ndarray  # [B, Tt]: words, eos, pad...
    src_lang: str
    tgt_lang: str

    @property
    def tgt_mask(self) -> np.ndarray:
        return self.tgt_out != PAD

    @property
    def n_target_tokens(self) -> int:
        return int(self.tgt_mask.sum())


def make_batch(
    sentences: list[tuple[np.ndarray, np.ndarray]],
    vocab: Vocab,
    src_lang: str,
    tgt_lang: str,
) -> Batch:
    """Pad a set of same-direction sentence pairs into one batch."""
    if not sentences:
        raise ContractViolation("cannot build an empty batch")
    tag = vocab.tag_id(tgt_lang)
    b = len(sentences)
    ts = max(len(s) for s, _ in sentences) + 2  # tag + words + eos
    tt = max(len(t) for _, t in sentences) + 1  # bos/words + eos
    src = np.full((b, ts), PAD, dtype=np.int64)
    tgt_in = np.full((b, tt), PAD, dtype=np.int64)
    tgt_out = np.full((b, tt), PAD, dtype=np.int64)
    for i, (s, t) in enumerate(sentences):
        src[i, 0] = tag
        src[i, 1 : 1 + len(s)] = s
        src[i, 1 + len(s)] = EOS
        tgt_in[i, 0] = BOS
        tgt_in[i, 1 : 1 + len(t)] = t
        tgt_out[i, : len(t)] = t
        tgt_out[i, len(t)] = EOS
    return Batch(src=src, tgt_in=tgt_in, tgt_out=tgt_out, src_lang=src_lang, tgt_lang=tgt_lang)


def sample_batch(
    pair: LanguagePair,
    vocab: Vocab,
    max_tokens: int,
    rng: np.random.Generator,
) -> Batch:
    """Draw sentences from one pair until the target-token budget is filled.

    A batch never mixes translation directions; the direction is the pair's.
    """
    if max_tokens < 1:
        raise ContractViolation("max_tokens must be positive")
    chosen: list[tuple[np.ndarray, np.ndarray]] = []
    budget = 0
    while budget < max_tokens:
        idx = int(rng.integers(0, pair.size))
        s, t = pair.sentences[idx]
        cost = len(t) + 1  # target words + eos
        if chosen and budget + cost > max_tokens:
            break
        chosen.append((s, t))
        budget += cost
    return make_batch(chosen, vocab, pair.src_lang, pair.tgt_lang)
