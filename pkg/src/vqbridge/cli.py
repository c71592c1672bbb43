"""Command-line entry point: gen-data, train, translate, analyze.

Exit codes: 0 success, 1 usage error, 2 data/contract error, 3 numeric
failure.  Every artifact directory receives a run_manifest.txt naming the
command, config, seed, and a content hash of the inputs that produced it.
Output directories are never silently reused: existing non-empty targets
are refused unless --force is given.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analysis
from .corpus import EOS, FamilySpec, Vocab, load_manifest
from .decoding import DecodeConfig, thread_count, translate_corpus
from .errors import ContractViolation, DataError, NumericError, UsageError
from . import runconfig
from .training import TrainConfig, load_system, train

ANALYSES = ("codes", "kl", "pca", "usage", "offtarget", "codetrans-export")


# ---------------------------------------------------------------------------
# plumbing
# ---------------------------------------------------------------------------


@dataclass
class RunManifest:
    command: str
    config_path: str
    seed: str
    content_hash: str
    out_dir: str

    def write(self, out_dir: Path):
        lines = [
            f"command={self.command}",
            f"config={self.config_path}",
            f"seed={self.seed}",
            f"content_hash={self.content_hash}",
            f"out_dir={self.out_dir}",
        ]
        (out_dir / "run_manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def hash_inputs(paths: list[Path]) -> str:
    digest = hashlib.sha256()
    for path in paths:
        digest.update(path.name.encode("utf-8"))
        digest.update(b"\x00")
        digest.update(path.read_bytes())
    return digest.hexdigest()


def prepare_out(out: Path, force: bool) -> Path:
    if out.exists() and any(out.iterdir()) and not force:
        raise UsageError(
            f"output directory {out} exists and is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_tsv(path: Path, header: list[str], rows: list[list]):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(str(c) for c in row) + "\n")


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems through the exit-code contract."""

    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# shared loading helpers
# ---------------------------------------------------------------------------


def _load_data_dir(data_dir: Path):
    manifest = data_dir / "family.manifest"
    if not manifest.exists():
        raise DataError(f"{data_dir} has no family.manifest")
    spec, family, seed = load_manifest(manifest)
    vocab = Vocab.load(data_dir / "vocab.txt")
    return spec, family, seed, vocab


def _read_test_sentences(data_dir: Path, vocab: Vocab, lang: str) -> list[np.ndarray]:
    path = data_dir / f"test.multiway.{lang}"
    if not path.exists():
        raise DataError(f"missing test file {path}")
    out = []
    for line in path.read_text(encoding="utf-8").splitlines():
        words = line.split()
        if words:
            out.append(vocab.encode(words))
    return out


def _parse_pairs(raw: str | None, languages: list[str], bridge: str) -> list[tuple[str, str]]:
    if raw:
        pairs = []
        for item in raw.split(","):
            src, _, tgt = item.partition("-")
            if not src or not tgt:
                raise UsageError(f"pair {item!r} must look like src-tgt")
            for lang in (src, tgt):
                if lang not in languages:
                    raise UsageError(f"unknown language {lang!r} in --pairs")
            pairs.append((src, tgt))
        return pairs
    others = [l for l in languages if l != bridge]
    return [(a, b) for a in others for b in others if a != b]


def _system_for_analysis(args):
    data_dir = Path(args.data)
    spec, family, _seed, vocab = _load_data_dir(data_dir)
    system = load_system(args.ckpt, vocab)
    return data_dir, spec, family, vocab, system


def _extract_all(system, vocab, data_dir, languages, bridge):
    """Per-language code sequences on the multiway test set, bridge-tagged."""
    if system.codebook is None:
        raise UsageError("this checkpoint was trained without a quantizer; "
                         "code analyses need one")
    n_slices = system.config.n_slices
    out = {}
    for lang in languages:
        sentences = _read_test_sentences(data_dir, vocab, lang)
        out[lang] = analysis.extract_codes(
            system.model, system.codebook, n_slices, sentences, vocab,
            lang, tag_lang=bridge)
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    spec_path = Path(args.spec)
    if not spec_path.exists():
        raise UsageError(f"spec file {spec_path} does not exist")
    spec = FamilySpec.from_config(runconfig.parse_kv_file(spec_path))
    out = prepare_out(Path(args.out), args.force)
    from .corpus import generate_family

    generate_family(spec, args.seed, out)
    RunManifest("gen-data", str(spec_path), str(args.seed),
                hash_inputs([spec_path]), str(out)).write(out)
    print(f"wrote corpus for {len(spec.languages)} languages to {out}")
    return 0


def cmd_train(args) -> int:
    config_path = Path(args.config)
    if not config_path.exists():
        raise UsageError(f"config file {config_path} does not exist")
    cfg = TrainConfig.from_file(config_path)
    data_dir = Path(args.data)
    manifest = data_dir / "family.manifest"
    if not manifest.exists():
        raise DataError(f"{data_dir} has no family.manifest")
    out = prepare_out(Path(args.out), args.force)
    RunManifest("train", str(config_path), str(cfg.seed),
                hash_inputs([config_path, manifest]), str(out)).write(out)
    result = train(cfg, data_dir, out, resume_from=args.resume)
    print(f"trained {result.steps} steps; final checkpoint {result.checkpoint}")
    print(f"translation loss first={result.first_l_mt:.4f} last={result.last_l_mt:.4f}")
    return 0


def cmd_translate(args) -> int:
    input_path = Path(args.input)
    if not input_path.exists():
        raise UsageError(f"input file {input_path} does not exist")
    data_dir = Path(args.data)
    _spec, _family, _seed, vocab = _load_data_dir(data_dir)
    system = load_system(args.ckpt, vocab)
    cfg = DecodeConfig(beam_size=args.beam, max_len=args.max_len,
                       context_mode=args.context_mode).validate()
    if cfg.context_mode == "cluster_centers" and system.codebook is None:
        raise UsageError("cluster_centers mode needs a quantizer-trained checkpoint")

    tag = vocab.tag_id(args.tgt_lang)
    sources = []
    for line in input_path.read_text(encoding="utf-8").splitlines():
        words = line.split()
        if not words:
            raise DataError(f"{input_path}: empty source line")
        sources.append(np.concatenate([[tag], vocab.encode(words), [EOS]]))

    out = prepare_out(Path(args.out), args.force)
    results = translate_corpus(
        system.model, sources, cfg, codebook=system.codebook,
        n_slices=system.config.n_slices, n_threads=thread_count())

    with open(out / "hypotheses.txt", "w", encoding="utf-8") as fh:
        for hyps in results:
            fh.write(vocab.detokenize(hyps[0].tokens) + "\n")
    _write_tsv(out / "scores.tsv", ["sentence", "rank", "score", "tokens"],
               [[i, r, f"{h.score:.6f}", vocab.detokenize(h.tokens)]
                for i, hyps in enumerate(results) for r, h in enumerate(hyps)])
    RunManifest("translate", args.ckpt, "-",
                hash_inputs([Path(args.ckpt), input_path]), str(out)).write(out)
    print(f"translated {len(sources)} sentences to {out}")
    return 0


def _analyze_codes(out, codes_by_lang) -> None:
    rows = []
    for lang, seqs in codes_by_lang.items():
        with open(out / f"codes.{lang}.txt", "w", encoding="utf-8") as fh:
            for seq in seqs:
                fh.write(" ".join(str(c) for c in seq.codes) + "\n")
        rows.append([lang, len(seqs), sum(len(s.codes) for s in seqs)])
    _write_tsv(out / "codes_summary.tsv", ["lang", "sentences", "codes"], rows)


def _analyze_kl(out, codes_by_lang, system) -> None:
    dists = {
        lang: analysis.code_distribution(seqs, system.config.codebook_size,
                                         system.config.n_slices)
        for lang, seqs in codes_by_lang.items()
    }
    langs, matrix = analysis.kl_matrix(dists)
    rows = [[lang] + [f"{v:.8f}" for v in matrix[i]] for i, lang in enumerate(langs)]
    _write_tsv(out / "kl_matrix.tsv", ["lang"] + langs, rows)


def _analyze_pca(out, system, vocab, data_dir, languages, bridge) -> None:
    from .corpus import PAD

    pooled = []
    for lang in languages:
        for sent in _read_test_sentences(data_dir, vocab, lang):
            src = np.concatenate([[vocab.tag_id(bridge)], sent, [EOS]])
            encoded = system.model.encode(src[None, :], PAD)
            pooled.append(encoded.states.data[0])
    states = np.concatenate(pooled, axis=0)
    curve = analysis.pca_explained_variance(states)
    per = np.diff(np.concatenate([[0.0], curve]))
    with open(out / "variance_curve.csv", "w", encoding="utf-8") as fh:
        fh.write("component,explained,cumulative\n")
        for i, (p, c) in enumerate(zip(per, curve), start=1):
            fh.write(f"{i},{p:.8f},{c:.8f}\n")


def _analyze_usage(out, codes_by_lang, system) -> None:
    all_seqs = [s for seqs in codes_by_lang.values() for s in seqs]
    stats = analysis.usage_stats(all_seqs, system.config.codebook_size,
                                 system.config.n_slices)
    rows = [[s, stats.active[s], f"{stats.entropy[s]:.6f}",
             f"{stats.top_share[s]:.6f}", "-"]
            for s in range(system.config.n_slices)]
    rows.append(["mean", "-", f"{stats.mean_entropy:.6f}", "-", stats.collapsed])
    _write_tsv(out / "usage.tsv", ["slice", "active", "entropy", "top_share", "collapsed"], rows)


def _analyze_offtarget(out, args, system, vocab, family, data_dir, languages, bridge) -> None:
    pairs = _parse_pairs(args.pairs, languages, bridge)
    cfg = DecodeConfig(beam_size=args.beam, max_len=args.max_len).validate()
    rows = []
    for src_lang, tgt_lang in pairs:
        srcs = _read_test_sentences(data_dir, vocab, src_lang)
        refs = _read_test_sentences(data_dir, vocab, tgt_lang)
        if args.limit:
            srcs, refs = srcs[: args.limit], refs[: args.limit]
        tag = vocab.tag_id(tgt_lang)
        batch = [np.concatenate([[tag], s, [EOS]]) for s in srcs]
        results = translate_corpus(system.model, batch, cfg,
                                   codebook=system.codebook,
                                   n_slices=system.config.n_slices,
                                   n_threads=thread_count())
        hyp_ids = [np.asarray(r[0].tokens, dtype=np.int64) for r in results]
        hyp_words = [vocab.decode(h) for h in hyp_ids]
        rate = analysis.off_target_rate(hyp_words, tgt_lang, family)
        acc = analysis.corpus_token_accuracy(hyp_ids, refs)
        base = analysis.random_baseline_accuracy(refs, vocab, tgt_lang, family)
        rows.append([src_lang, tgt_lang, len(srcs), f"{rate:.6f}",
                     f"{acc:.6f}", f"{base:.6f}"])
    _write_tsv(out / "offtarget.tsv",
               ["src", "tgt", "sentences", "off_target_rate", "token_accuracy",
                "random_baseline"], rows)


def _analyze_codetrans(out, args, codes_by_lang, languages, bridge) -> None:
    pairs = _parse_pairs(args.pairs, languages, bridge)
    rows = []
    for src_lang, tgt_lang in pairs:
        pair_dir = out / f"codetrans_{src_lang}-{tgt_lang}"
        pair_dir.mkdir(parents=True, exist_ok=True)
        skipped = analysis.export_code_translation_corpus(
            codes_by_lang[src_lang], codes_by_lang[tgt_lang],
            src_lang, tgt_lang, pair_dir)
        rows.append([src_lang, tgt_lang, str(pair_dir), skipped])
    _write_tsv(out / "codetrans_summary.tsv", ["src", "tgt", "dir", "skipped"], rows)


def cmd_analyze(args) -> int:
    data_dir, spec, family, vocab, system = _system_for_analysis(args)
    languages = ([l.strip() for l in args.langs.split(",")] if args.langs
                 else list(family.language_names))
    for lang in languages:
        if lang not in family.language_names:
            raise UsageError(f"unknown language {lang!r} in --langs")
    out = prepare_out(Path(args.out), args.force)

    needs_codes = args.which in ("codes", "kl", "usage", "codetrans-export")
    codes_by_lang = (_extract_all(system, vocab, data_dir, languages, spec.bridge)
                     if needs_codes else None)

    if args.which == "codes":
        _analyze_codes(out, codes_by_lang)
    elif args.which == "kl":
        _analyze_kl(out, codes_by_lang, system)
    elif args.which == "pca":
        _analyze_pca(out, system, vocab, data_dir, languages, spec.bridge)
    elif args.which == "usage":
        _analyze_usage(out, codes_by_lang, system)
    elif args.which == "offtarget":
        _analyze_offtarget(out, args, system, vocab, family, data_dir,
                           languages, spec.bridge)
    elif args.which == "codetrans-export":
        _analyze_codetrans(out, args, codes_by_lang, languages, spec.bridge)
    else:  # pragma: no cover - argparse choices guard this
        raise UsageError(f"unknown analysis {args.which!r}")

    RunManifest(f"analyze:{args.which}", args.ckpt, "-",
                hash_inputs([Path(args.ckpt), data_dir / "family.manifest"]),
                str(out)).write(out)
    print(f"wrote {args.which} report to {out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vqbridge",
                     description="Multilingual translation with sliced "
                                 "codebook-quantized encoder states.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic language family")
    p.add_argument("--spec", required=True, help="family spec (key=value file)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a translation system")
    p.add_argument("--config", required=True, help="run config (key=value file)")
    p.add_argument("--data", required=True, help="corpus directory from gen-data")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("translate", help="beam-search decode a file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="corpus directory (for the vocabulary)")
    p.add_argument("--input", required=True, help="one tokenized sentence per line")
    p.add_argument("--tgt-lang", required=True)
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--max-len", type=int, default=64)
    p.add_argument("--context-mode", choices=["continuous", "cluster_centers"],
                   default="continuous")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_translate)

    p = sub.add_parser("analyze", help="reports over a trained system")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--which", choices=list(ANALYSES), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--langs", default=None, help="comma-separated subset")
    p.add_argument("--pairs", default=None,
                   help="comma-separated src-tgt pairs (offtarget, codetrans-export)")
    p.add_argument("--beam", type=int, default=1)
    p.add_argument("--max-len", type=int, default=64)
    p.add_argument("--limit", type=int, default=0,
                   help="cap sentences per pair (offtarget)")
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_analyze)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (DataError, ContractViolation) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
