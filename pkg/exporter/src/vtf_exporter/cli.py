"""Command line for the feature exporter.

    vtf-exporter export --model MODEL --layer 6 --dim 1024 --hop-ms 20 \
        --out DIR file1.wav file2.wav ...

--layer is a 1-based transformer block index (the convolutional frontend is
not counted), so the default 6 reads the sixth block's output.
"""

from __future__ import annotations

import argparse
import sys

from .export import ExportSpec, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vtf-exporter")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="dump intermediate-layer features as VTF1")
    p.add_argument("files", nargs="+", help="input audio files (PCM WAV)")
    p.add_argument("--model", required=True,
                   help="checkpoint name or local directory (wav2vec2 family)")
    p.add_argument("--layer", type=int, default=6)
    p.add_argument("--dim", type=int, default=1024)
    p.add_argument("--hop-ms", type=float, default=20.0)
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--out", required=True)
    return parser


def dispatch(argv) -> int:
    args = build_parser().parse_args(argv)
    spec = ExportSpec(
        audio_paths=tuple(args.files),
        model=args.model,
        out_dir=args.out,
        layer=args.layer,
        expected_dim=args.dim,
        hop_ms=args.hop_ms,
        sample_rate=args.sample_rate,
    )
    try:
        for path in export(spec):
            print(path)
        return 0
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"vtf-exporter: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
