"""Command-line entry point exposing the pipeline as subcommands.

Every stochastic subcommand requires --seed, so identical invocations give
identical outputs. Exit codes: 0 success, 1 runtime failure (diagnostic on
stderr), 2 usage errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import converter, decoupler, evalkit, kmeans, sampler, teacher
from .features import (FeatureMatrix, concat_frames, read_features, write_features)
from .losses import LossReport


def _read_many(paths) -> list[FeatureMatrix]:
    return [read_features(p) for p in paths]


def _write_manifest(path, rows, header: str | None = None) -> None:
    lines = []
    if header:
        lines.append(f"# {header}")
    lines.extend("\t".join(str(c) for c in row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n")


def _read_manifest(path):
    header = {}
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            for part in line[1:].split():
                key, _, value = part.partition("=")
                if value:
                    header[key] = value
            continue
        rows.append(line.split("\t"))
    return header, rows


def _cmd_gen_corpus(args) -> int:
    spec = evalkit.SyntheticCorpusSpec(
        num_speakers=args.speakers, frames_per_speaker=args.frames, dim=args.dim,
        content_archetypes=args.archetypes, speaker_offset_scale=args.offset_scale,
        noise_sigma=args.noise, seed=args.seed, hop_ms=args.hop_ms,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for sid, m in evalkit.generate_corpus(spec):
        path = out / f"{sid}.vtf"
        write_features(m, path)
        rows.append((sid, path))
    _write_manifest(out / "corpus.tsv", rows)
    print(f"wrote {len(rows)} speakers under {out}")
    return 0


def _cmd_fit_kmeans(args) -> int:
    frames = np.vstack([m.data for m in _read_many(args.input)]).astype(np.float64)
    cb = kmeans.fit(frames, args.k, kmeans.KMeansConfig(
        max_iters=args.max_iters, tol=args.tol, seed=args.seed))
    kmeans.save_codebook(cb, args.output)
    print(f"k={cb.k} distortion={cb.distortion:.6g} iters={len(cb.fit_distortion_trace) - 1}")
    return 0


def _cmd_fit_decoupler(args) -> int:
    corpus = _read_many(args.input)
    model = decoupler.fit_decoupler(corpus, decoupler.DecouplerConfig(
        k1=args.k1, k2=args.k2, seed=args.seed, max_iters=args.max_iters, tol=args.tol))
    decoupler.save_decoupler(model, args.out)
    report = decoupler.distortion_report(model, corpus)
    print(f"stage1_mse={report.stage1_mse:.6g} stage2_mse={report.stage2_mse:.6g}")
    return 0


def _cmd_encode(args) -> int:
    model = decoupler.load_decoupler(args.decoupler)
    result = decoupler.encode(model, read_features(args.input))
    write_features(result.enhanced, args.output)
    if args.ids_out:
        np.savetxt(f"{args.ids_out}.content.txt", result.content_ids, fmt="%d")
        np.savetxt(f"{args.ids_out}.residual.txt", result.residual_ids, fmt="%d")
    return 0


def _parse_pool_entries(entries):
    parsed = []
    for entry in entries:
        sid, sep, path = entry.partition("=")
        if not sep or not sid or not path:
            raise ValueError(f"pool entry {entry!r} is not of the form id=path")
        parsed.append((sid, path))
    return parsed


def _load_pool(manifest_path, k, similarity="cosine") -> teacher.MatchingPool:
    header, rows = _read_manifest(manifest_path)
    entries = [(sid, read_features(path)) for sid, path in rows]
    k = k if k is not None else int(header.get("k", 8))
    return teacher.build_pool(entries, k=k, similarity=similarity)


def _cmd_build_pool(args) -> int:
    entries = _parse_pool_entries(args.entries)
    pool = teacher.build_pool([(sid, read_features(p)) for sid, p in entries], k=args.k)
    _write_manifest(args.out, entries, header=f"k={args.k}")
    sizes = {sid: frames.shape[0] for sid, frames in pool.speakers.items()}
    print(f"pool ok: {len(sizes)} speakers, frames {sizes}")
    return 0


def _cmd_knn_convert(args) -> int:
    pool = _load_pool(args.pool, args.k, args.similarity)
    out = teacher.knn_convert(pool, args.speaker, read_features(args.input))
    write_features(out, args.output)
    return 0


def _cmd_fit_tokenizers(args) -> int:
    sizes = [int(s) for s in args.codebooks.split(",")]
    if len(sizes) != 3 or not (sizes[0] < sizes[1] < sizes[2]):
        raise ValueError(f"--codebooks needs three strictly increasing sizes, got {args.codebooks}")
    frames = np.vstack([m.data for m in _read_many(args.input)]).astype(np.float64)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, size, offset in zip(("small", "medium", "large"), sizes, range(3)):
        cb = kmeans.fit(frames, size, kmeans.KMeansConfig(seed=args.seed + offset))
        kmeans.save_codebook(cb, out / f"{name}.vtc")
        print(f"{name}: k={size} distortion={cb.distortion:.6g}")
    return 0


def _load_tokenizers(directory):
    directory = Path(directory)
    return tuple(kmeans.load_codebook(directory / f"{n}.vtc")
                 for n in ("small", "medium", "large"))


def _cmd_make_pairs(args) -> int:
    model = decoupler.load_decoupler(args.decoupler)
    tokenizers = _load_tokenizers(args.tokenizers)
    pool = _load_pool(args.pool, args.k) if args.pool else None
    sources = _read_many(args.sources)
    config = sampler.PairConfig(p_conversion=args.p_conversion,
                                prompt_seconds=args.prompt_seconds)
    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stream = sampler.iter_pairs(sources, model, pool, tokenizers, config, rng)
    rows = []
    for i in range(args.count):
        pair = next(stream)
        stem = f"{i:05d}"
        write_features(pair.content, out / f"{stem}.content.vtf")
        write_features(pair.prompt, out / f"{stem}.prompt.vtf")
        write_features(pair.target, out / f"{stem}.target.vtf")
        with open(out / f"{stem}.ids.tsv", "w") as fh:
            for ids in pair.target_ids:
                fh.write(" ".join(str(t) for t in ids) + "\n")
        rows.append((i, pair.mode, pair.speaker or "-", pair.prompt_start,
                     f"{stem}.content.vtf", f"{stem}.prompt.vtf",
                     f"{stem}.target.vtf", f"{stem}.ids.tsv"))
    vocabs = ",".join(str(cb.k) for cb in tokenizers)
    _write_manifest(out / "pairs.tsv", rows,
                    header=f"vocab_sizes={vocabs} dim={sources[0].dim}")
    print(f"wrote {args.count} pairs under {out}")
    return 0


def _load_pairs(directory):
    directory = Path(directory)
    header, rows = _read_manifest(directory / "pairs.tsv")
    vocabs = tuple(int(v) for v in header["vocab_sizes"].split(","))
    pairs = []
    for row in rows:
        _, mode, speaker, prompt_start, content_f, prompt_f, target_f, ids_f = row
        content = read_features(directory / content_f)
        prompt = read_features(directory / prompt_f)
        target = read_features(directory / target_f)
        id_lines = (directory / ids_f).read_text().splitlines()
        target_ids = tuple(np.array([int(t) for t in line.split()], dtype=np.int64)
                           for line in id_lines)
        pairs.append(sampler.TrainingPair(
            mode=mode, content=content, prompt=prompt, target=target,
            target_ids=target_ids, converter_input=concat_frames(prompt, content),
            speaker=None if speaker == "-" else speaker,
            prompt_start=int(prompt_start),
        ))
    return pairs, vocabs


def _cycle(items):
    while True:
        yield from items


def _cmd_train_toy(args) -> int:
    pairs, vocabs = _load_pairs(args.pairs)
    dim = pairs[0].content.dim
    # the position table must cover the longest prompt+content sequence
    needed_len = max(p.converter_input.frames for p in pairs)
    conv_cfg = converter.ConverterConfig(
        input_dim=dim, num_blocks=args.blocks, hidden_dim=args.hidden,
        ffn_dim=args.ffn, vocab_sizes=vocabs,
        max_len=max(args.max_len, needed_len), seed=args.seed,
    )
    opt_cfg = converter.OptimizerConfig(
        learning_rate=args.lr, steps=args.steps, batch_size=args.batch_size,
        seed=args.seed,
    )
    model, reports = converter.train(_cycle(pairs), conv_cfg, opt_cfg)
    converter.save_checkpoint(model, args.out)
    if args.loss_log:
        with open(args.loss_log, "w") as fh:
            fh.write(LossReport.TSV_HEADER + "\n")
            for report in reports:
                fh.write(report.tsv_line() + "\n")
    smoothed = converter.smoothed_curve([r.l_total for r in reports])
    print(f"steps={len(reports)} first_smoothed={smoothed[min(49, len(smoothed) - 1)]:.6g} "
          f"last_smoothed={smoothed[-1]:.6g}")
    return 0


def _cmd_eval(args) -> int:
    if args.report == "distortion":
        model = decoupler.load_decoupler(args.decoupler)
        rep = decoupler.distortion_report(model, _read_many(args.input))
        print("stage1_mse\tstage2_mse\tcontent_utilization\tresidual_utilization")
        print(f"{rep.stage1_mse!r}\t{rep.stage2_mse!r}\t"
              f"{rep.content_utilization!r}\t{rep.residual_utilization!r}")
    elif args.report == "codebook":
        cb = kmeans.load_codebook(args.codebook)
        stats = evalkit.codebook_stats(cb, _read_many(args.input))
        print("utilization\tperplexity")
        print(f"{stats.utilization!r}\t{stats.perplexity!r}")
    else:
        proxy = evalkit.speaker_similarity_proxy(read_features(args.a), read_features(args.b))
        print("similarity_proxy")
        print(repr(proxy))
    return 0


def _cmd_grad_check(args) -> int:
    if args.config != "tiny":
        raise ValueError(f"unknown grad-check config {args.config!r}")
    worst = converter.gradient_check(seed=args.seed)
    print(f"max relative gradient error: {worst:.3e}")
    return 0 if worst < 1e-4 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vcpipe")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic speaker corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--speakers", type=int, default=4)
    p.add_argument("--frames", type=int, default=500)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--archetypes", type=int, default=8)
    p.add_argument("--offset-scale", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--hop-ms", type=float, default=20.0)
    p.set_defaults(func=_cmd_gen_corpus)

    p = sub.add_parser("fit-kmeans", help="fit a single codebook")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=_cmd_fit_kmeans)

    p = sub.add_parser("fit-decoupler", help="fit the two-stage content decoupler")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--k1", type=int, default=64)
    p.add_argument("--k2", type=int, default=16)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=_cmd_fit_decoupler)

    p = sub.add_parser("encode", help="emit the enhanced content representation")
    p.add_argument("--decoupler", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--ids-out", default=None)
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("build-pool", help="validate and write a matching-pool manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--entries", nargs="+", required=True, metavar="ID=PATH")
    p.add_argument("--k", type=int, default=8)
    p.set_defaults(func=_cmd_build_pool)

    p = sub.add_parser("knn-convert", help="teacher conversion of one utterance")
    p.add_argument("--pool", required=True)
    p.add_argument("--speaker", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--similarity", choices=teacher.SIMILARITIES, default="cosine")
    p.set_defaults(func=_cmd_knn_convert)

    p = sub.add_parser("fit-tokenizers", help="fit the small/medium/large codebooks")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--codebooks", default="8,16,32")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fit_tokenizers)

    p = sub.add_parser("make-pairs", help="sample dual-mode training pairs")
    p.add_argument("--sources", nargs="+", required=True)
    p.add_argument("--decoupler", required=True)
    p.add_argument("--pool", default=None)
    p.add_argument("--tokenizers", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--p-conversion", type=float, default=0.5)
    p.add_argument("--prompt-seconds", type=float, default=3.0)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_make_pairs)

    p = sub.add_parser("train-toy", help="train the toy converter on sampled pairs")
    p.add_argument("--pairs", required=True)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--blocks", type=int, default=4)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--ffn", type=int, default=64)
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--max-len", type=int, default=512)
    p.add_argument("--loss-log", default=None)
    p.set_defaults(func=_cmd_train_toy)

    p = sub.add_parser("eval", help="distortion report, codebook stats, similarity proxy")
    p.add_argument("--report", choices=("distortion", "codebook", "proxy"), required=True)
    p.add_argument("--decoupler")
    p.add_argument("--codebook")
    p.add_argument("--input", nargs="*")
    p.add_argument("--a")
    p.add_argument("--b")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("grad-check", help="full-model finite-difference gradient check")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config", default="tiny")
    p.set_defaults(func=_cmd_grad_check)

    return parser


def dispatch(argv) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"vcpipe: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
