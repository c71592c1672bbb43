"""Data module tests: family construction, relatedness control, file
generation determinism, temperature sampling, ingestion, batching."""

import numpy as np
import pytest

from vqbridge.corpus import (
    BOS,
    EOS,
    PAD,
    FamilySpec,
    LanguagePair,
    LanguageSpec,
    SamplingPolicy,
    SyntheticFamily,
    Vocab,
    apply_permutation,
    generate_family,
    ingest_parallel,
    load_manifest,
    load_training_pairs,
    make_batch,
    pair_probabilities,
    sample_batch,
    sample_pair,
)
from vqbridge.errors import ContractViolation, DataError, UsageError


def small_spec(**over):
    base = dict(
        bridge="br",
        languages=[
            LanguageSpec("br", 1.0, "identity"),
            LanguageSpec("rel", 0.9, "swap2"),
            LanguageSpec("far", 0.0, "rot3"),
        ],
        n_semantic_symbols=40,
        n_train=30,
        n_test=10,
        min_len=3,
        max_len=8,
    )
    base.update(over)
    return FamilySpec(**base)


# -- spec validation -------------------------------------------------------------

def test_relatedness_out_of_range_rejected():
    with pytest.raises(ContractViolation):
        small_spec(languages=[LanguageSpec("br", 1.0), LanguageSpec("x", 1.5)]).validate()


def test_bridge_must_be_member():
    with pytest.raises(ContractViolation):
        small_spec(bridge="nope").validate()


def test_bridge_relatedness_must_be_one():
    with pytest.raises(ContractViolation):
        small_spec(languages=[LanguageSpec("br", 0.5), LanguageSpec("x", 0.5)]).validate()


def test_unknown_permutation_rejected():
    with pytest.raises(ContractViolation):
        LanguageSpec("x", 0.5, "shuffle").validate()


def test_from_config_names_offending_key():
    cfg = {"bridge": "br", "languages": "br,x", "lang.br.relatedness": "1.0",
           "lang.x.relatedness": "abc"}
    with pytest.raises(UsageError, match="lang.x.relatedness"):
        FamilySpec.from_config(cfg)


def test_from_config_rejects_unknown_key():
    cfg = {"bridge": "br", "languages": "br,x", "lang.br.relatedness": "1.0",
           "lang.x.relatedness": "0.5", "n_trian": "10"}
    with pytest.raises(UsageError, match="n_trian"):
        FamilySpec.from_config(cfg)


# -- permutation rules -------------------------------------------------------------

def test_permutations():
    assert apply_permutation([1, 2, 3, 4, 5], "identity") == [1, 2, 3, 4, 5]
    assert apply_permutation([1, 2, 3, 4, 5], "swap2") == [2, 1, 4, 3, 5]
    assert apply_permutation([1, 2, 3, 4, 5, 6, 7], "rot3") == [3, 1, 2, 6, 4, 5, 7]


# -- relatedness arithmetic ---------------------------------------------------------

def test_relatedness_is_min_of_levels():
    spec = small_spec(languages=[
        LanguageSpec("br", 1.0), LanguageSpec("a", 0.9),
        LanguageSpec("b", 0.5), LanguageSpec("c", 0.0)])
    fam = SyntheticFamily(spec)
    assert fam.relatedness("a", "b") == 0.5
    assert fam.relatedness("b", "a") == 0.5
    assert fam.relatedness("a", "c") == 0.0
    assert fam.relatedness("br", "a") == 0.9
    assert fam.relatedness("a", "a") == 0.9


def test_shared_vocab_fraction_exact():
    spec = small_spec()
    fam = SyntheticFamily(spec)
    va, vb = fam.surface_vocab("rel"), fam.surface_vocab("br")
    shared = va & vb
    assert len(shared) == round(0.9 * spec.n_semantic_symbols)
    far = fam.surface_vocab("far")
    assert not (far & vb)  # relatedness 0: no shared surface tokens


def test_full_relatedness_identity_perm_token_identical():
    spec = small_spec(languages=[
        LanguageSpec("br", 1.0, "identity"), LanguageSpec("twin", 1.0, "identity")])
    fam = SyntheticFamily(spec)
    sem = np.array([0, 5, 17, 3])
    assert fam.realize(sem, "br") == fam.realize(sem, "twin")


def test_mutual_translation_by_construction():
    fam = SyntheticFamily(small_spec())
    sem = np.array([4, 9, 0, 22, 1])
    a = fam.realize(sem, "rel")
    b = fam.realize(sem, "far")
    assert len(a) == len(b) == len(sem)
    # surface sets map back to the same semantic multiset
    def symbols(words):
        return sorted(int(w.split("w", 1)[1]) for w in words)
    assert symbols(a) == symbols(b) == sorted(int(s) for s in sem)


# -- generation to disk ---------------------------------------------------------------

def test_generate_family_files_and_determinism(tmp_path):
    spec = small_spec()
    d1, d2 = tmp_path / "one", tmp_path / "two"
    generate_family(spec, 77, d1)
    generate_family(spec, 77, d2)
    names1 = sorted(p.name for p in d1.iterdir())
    assert names1 == sorted(p.name for p in d2.iterdir())
    assert "family.manifest" in names1 and "vocab.txt" in names1
    assert "train.br-rel.br" in names1 and "train.br-rel.rel" in names1
    assert "test.multiway.far" in names1
    for name in names1:
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes(), name

    other = tmp_path / "three"
    generate_family(spec, 78, other)
    assert (d1 / "train.br-rel.br").read_bytes() != (other / "train.br-rel.br").read_bytes()


def test_generated_corpora_are_aligned_translations(tmp_path):
    spec = small_spec()
    fam = generate_family(spec, 5, tmp_path)
    src = (tmp_path / "train.br-rel.br").read_text().splitlines()
    tgt = (tmp_path / "train.br-rel.rel").read_text().splitlines()
    assert len(src) == len(tgt) == spec.n_train
    for s_line, t_line in zip(src, tgt):
        assert len(s_line.split()) == len(t_line.split())
    lens = {len(line.split()) for line in src}
    assert lens <= set(range(spec.min_len, spec.max_len + 1))


def test_manifest_round_trip(tmp_path):
    spec = small_spec()
    generate_family(spec, 9, tmp_path)
    loaded_spec, fam, seed = load_manifest(tmp_path / "family.manifest")
    assert seed == 9
    assert loaded_spec == spec
    assert fam.relatedness("rel", "far") == 0.0


# -- vocabulary --------------------------------------------------------------------

def test_vocab_round_trip(tmp_path):
    fam = SyntheticFamily(small_spec())
    vocab = fam.build_vocab()
    vocab.save(tmp_path / "v.txt")
    loaded = Vocab.load(tmp_path / "v.txt")
    assert loaded.tokens == vocab.tokens
    assert loaded.languages == ["br", "rel", "far"]
    assert loaded.tag_id("rel") == vocab.tag_id("rel")


def test_vocab_encode_decode_round_trip():
    vocab = SyntheticFamily(small_spec()).build_vocab()
    words = ["w0", "w5", "far:w3"]
    assert vocab.decode(vocab.encode(words)) == words
    assert vocab.detokenize(vocab.encode(words)) == "w0 w5 far:w3"
    assert vocab.id("never-seen") == 3  # unk


def test_vocab_unknown_language_rejected():
    vocab = SyntheticFamily(small_spec()).build_vocab()
    with pytest.raises(ContractViolation):
        vocab.tag_id("xx")


# -- temperature sampling -----------------------------------------------------------

def test_t1_proportional():
    np.testing.assert_allclose(pair_probabilities([100, 300], 1.0), [0.25, 0.75], atol=1e-12)


def test_t_large_near_uniform():
    p = pair_probabilities([100, 300], 1e9)
    np.testing.assert_allclose(p, [0.5, 0.5], atol=1e-6)


def test_t5_analytic_values():
    p = pair_probabilities([100, 300], 5.0)
    ratio = 3.0 ** 0.2
    want2 = ratio / (1 + ratio)
    np.testing.assert_allclose(p, [1 - want2, want2], atol=1e-12)
    assert abs(p[1] - 0.5547) < 1e-3


def test_monte_carlo_frequencies_within_3_sigma():
    # acceptance-level property run at full 1e6 draws in test_acceptance
    rng = np.random.default_rng(123)
    pairs = [LanguagePair("a", "b", [(np.array([1]), np.array([1]))] * 1),
             LanguagePair("b", "a", [(np.array([1]), np.array([1]))] * 1)]
    pairs[0].sentences = pairs[0].sentences * 100
    pairs[1].sentences = pairs[1].sentences * 300
    n = 100_000
    policy = SamplingPolicy(temperature=5.0)
    counts = {id(pairs[0]): 0, id(pairs[1]): 0}
    for _ in range(n):
        counts[id(sample_pair(policy, pairs, rng))] += 1
    p = pair_probabilities([100, 300], 5.0)
    for prob, pair in zip(p, pairs):
        sigma = np.sqrt(n * prob * (1 - prob))
        assert abs(counts[id(pair)] - n * prob) < 3 * sigma


def test_sampling_policy_validation():
    with pytest.raises(ContractViolation):
        SamplingPolicy(temperature=0.0).validate()
    with pytest.raises(ContractViolation):
        pair_probabilities([0, 10], 5.0)


# -- ingestion ----------------------------------------------------------------------

def test_ingest_three_lines(tmp_path):
    vocab = SyntheticFamily(small_spec()).build_vocab()
    (tmp_path / "a.txt").write_text("w0 w1\nw2\nw3 w4 w5\n")
    (tmp_path / "b.txt").write_text("w1 w0\nw2\nw5 w4 w3\n")
    pair = ingest_parallel(tmp_path / "a.txt", tmp_path / "b.txt", "br", "rel", vocab)
    assert pair.size == 3 and pair.n_dropped == 0
    assert vocab.decode(pair.sentences[0][0]) == ["w0", "w1"]


def test_ingest_line_count_mismatch(tmp_path):
    vocab = SyntheticFamily(small_spec()).build_vocab()
    (tmp_path / "a.txt").write_text("w0\nw1\n")
    (tmp_path / "b.txt").write_text("w0\n")
    with pytest.raises(DataError, match="2 lines"):
        ingest_parallel(tmp_path / "a.txt", tmp_path / "b.txt", "br", "rel", vocab)


def test_ingest_drops_and_counts_long_lines(tmp_path):
    vocab = SyntheticFamily(small_spec()).build_vocab()
    (tmp_path / "a.txt").write_text("w0 w1 w2 w3\nw1\n")
    (tmp_path / "b.txt").write_text("w0 w1 w2 w3\nw1\n")
    pair = ingest_parallel(tmp_path / "a.txt", tmp_path / "b.txt", "br", "rel", vocab, max_len=3)
    assert pair.size == 1 and pair.n_dropped == 1


def test_detokenize_round_trip_on_generated_corpus(tmp_path):
    spec = small_spec()
    generate_family(spec, 11, tmp_path)
    vocab = Vocab.load(tmp_path / "vocab.txt")
    for line in (tmp_path / "train.br-far.far").read_text().splitlines():
        assert vocab.detokenize(vocab.encode(line.split())) == line


def test_load_training_pairs_both_directions(tmp_path):
    spec = small_spec()
    generate_family(spec, 13, tmp_path)
    vocab = Vocab.load(tmp_path / "vocab.txt")
    pairs = load_training_pairs(tmp_path, vocab)
    directions = {(p.src_lang, p.tgt_lang) for p in pairs}
    assert directions == {("br", "rel"), ("rel", "br"), ("br", "far"), ("far", "br")}
    fwd = next(p for p in pairs if (p.src_lang, p.tgt_lang) == ("br", "rel"))
    rev = next(p for p in pairs if (p.src_lang, p.tgt_lang) == ("rel", "br"))
    np.testing.assert_array_equal(fwd.sentences[0][0], rev.sentences[0][1])


# -- batching ----------------------------------------------------------------------

def test_make_batch_layout():
    vocab = SyntheticFamily(small_spec()).build_vocab()
    s1 = vocab.encode(["w0", "w1"])
    t1 = vocab.encode(["w1", "w0"])
    s2 = vocab.encode(["w2"])
    t2 = vocab.encode(["w2"])
    b = make_batch([(s1, t1), (s2, t2)], vocab, "br", "rel")
    tag = vocab.tag_id("rel")
    assert b.src[0, 0] == tag and b.src[1, 0] == tag  # target-language tag first
    assert b.src[0, 3] == EOS
    assert b.src[1, 2] == EOS and b.src[1, 3] == PAD
    assert b.tgt_in[0, 0] == BOS
    np.testing.assert_array_equal(b.tgt_in[0, 1:], t1)
    np.testing.assert_array_equal(b.tgt_out[0, :2], t1)
    assert b.tgt_out[0, 2] == EOS
    assert b.tgt_out[1, 1] == EOS and b.tgt_out[1, 2] == PAD
    assert b.n_target_tokens == 3 + 2


def test_sample_batch_single_direction_and_budget():
    vocab = SyntheticFamily(small_spec()).build_vocab()
    rng = np.random.default_rng(3)
    sentences = [(vocab.encode(["w0", "w1"]), vocab.encode(["w1", "w0"]))] * 50
    pair = LanguagePair("br", "rel", sentences)
    b = sample_batch(pair, vocab, max_tokens=16, rng=rng)
    assert b.src_lang == "br" and b.tgt_lang == "rel"
    assert b.n_target_tokens <= 16
    assert b.src.shape[0] >= 2


def test_empty_batch_rejected():
    vocab = SyntheticFamily(small_spec()).build_vocab()
    with pytest.raises(ContractViolation):
        make_batch([], vocab, "br", "rel")
