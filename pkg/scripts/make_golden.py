#!/usr/bin/env python3
"""Regenerate the golden container files under tests/data/.

The goldens pin the on-disk byte layout (little-endian headers, float32
payloads, parameter order). Run this only when the formats themselves
change, then update the pinned hashes in tests/test_golden.py.
"""

from pathlib import Path

import numpy as np

from vcpipe.converter import ConverterConfig, ToyConverter, save_checkpoint
from vcpipe.features import CodebookFile, FeatureMatrix, write_codebook_file, write_features

DATA = Path(__file__).resolve().parent.parent / "tests" / "data"


def main() -> None:
    DATA.mkdir(parents=True, exist_ok=True)

    frames = (np.arange(12, dtype=np.float32).reshape(4, 3) - 5.5) / 4.0
    write_features(FeatureMatrix(frames, hop_ms=20.0), DATA / "golden.vtf")

    centroids = np.array([[0.0, 0.5, -1.25], [10.0, -0.5, 3.75]], np.float32)
    write_codebook_file(CodebookFile(centroids, distortion=0.25, seed=7),
                        DATA / "golden.vtc")

    model = ToyConverter(ConverterConfig(
        input_dim=3, num_blocks=2, hidden_dim=4, ffn_dim=8,
        vocab_sizes=(2, 3, 4), max_len=8, seed=7))
    save_checkpoint(model, DATA / "golden.vtm")

    for name in ("golden.vtf", "golden.vtc", "golden.vtm"):
        print(name, (DATA / name).stat().st_size, "bytes")


if __name__ == "__main__":
    main()
