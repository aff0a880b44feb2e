import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vcpipe.features import (BadMagicError, CodebookFile, FeatureMatrix, FormatError,
                             NonFiniteError, TruncatedError, VersionError,
                             concat_frames, prompt_length_frames, read_codebook_file,
                             read_features, slice_frames, write_codebook_file,
                             write_features)


def mat(rows, hop=20.0):
    return FeatureMatrix(data=np.asarray(rows, dtype=np.float32), hop_ms=hop)


def test_smallest_legal_matrix_is_32_bytes(tmp_path):
    path = tmp_path / "one.vtf"
    write_features(mat([[0.0]]), path)
    assert path.stat().st_size == 4 + 4 + 8 + 8 + 4 + 4


def test_payload_size_150x1024(tmp_path):
    # payload = frames * dim * 4 bytes after the 28-byte header
    path = tmp_path / "big.vtf"
    write_features(FeatureMatrix(np.zeros((150, 1024), np.float32)), path)
    assert path.stat().st_size - 28 == 150 * 1024 * 4


def test_round_trip_identity(tmp_path):
    rng = np.random.default_rng(0)
    m = FeatureMatrix(rng.normal(size=(37, 5)).astype(np.float32), hop_ms=12.5)
    path = tmp_path / "m.vtf"
    write_features(m, path)
    assert read_features(path) == m


@settings(max_examples=60, deadline=None)
@given(
    data=arrays(np.float32, st.tuples(st.integers(1, 20), st.integers(1, 16)),
                elements=st.floats(allow_nan=False, allow_infinity=False, width=32)),
    hop_us=st.integers(1, 100000),
)
def test_round_trip_bit_exact_property(data, hop_us):
    m = FeatureMatrix(data=data, hop_ms=hop_us / 1000.0)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "prop.vtf"
        write_features(m, path)
        back = read_features(path)
    assert back.data.tobytes() == m.data.tobytes()
    assert back.hop_ms == m.hop_ms


def test_write_then_rewrite_is_byte_identical(tmp_path):
    rng = np.random.default_rng(1)
    m = FeatureMatrix(rng.normal(size=(9, 3)).astype(np.float32))
    a, b = tmp_path / "a.vtf", tmp_path / "b.vtf"
    write_features(m, a)
    write_features(read_features(a), b)
    assert a.read_bytes() == b.read_bytes()


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.vtf"
    write_features(mat([[1.0]]), path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(BadMagicError):
        read_features(path)


def test_version_mismatch(tmp_path):
    path = tmp_path / "v2.vtf"
    write_features(mat([[1.0]]), path)
    raw = bytearray(path.read_bytes())
    raw[4:8] = (2).to_bytes(4, "little")
    path.write_bytes(bytes(raw))
    with pytest.raises(VersionError):
        read_features(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "trunc.vtf"
    write_features(FeatureMatrix(np.zeros((10, 2), np.float32)), path)
    raw = path.read_bytes()
    path.write_bytes(raw[: 28 + 9 * 2 * 4])  # header says 10 frames, keep 9
    with pytest.raises(TruncatedError):
        read_features(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "extra.vtf"
    write_features(mat([[1.0]]), path)
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(FormatError):
        read_features(path)


def test_non_finite_payload_rejected(tmp_path):
    path = tmp_path / "nan.vtf"
    write_features(mat([[1.0]]), path)
    raw = bytearray(path.read_bytes())
    raw[28:32] = np.array([np.nan], np.float32).tobytes()
    path.write_bytes(bytes(raw))
    with pytest.raises(NonFiniteError):
        read_features(path)


def test_non_finite_rejected_before_write():
    with pytest.raises(NonFiniteError):
        FeatureMatrix(np.array([[np.inf]], np.float32))


def test_matrix_invariants():
    with pytest.raises(ValueError):
        FeatureMatrix(np.zeros((0, 3), np.float32))
    with pytest.raises(ValueError):
        FeatureMatrix(np.zeros((3, 0), np.float32))
    with pytest.raises(ValueError):
        FeatureMatrix(np.zeros((2, 2), np.float32), hop_ms=0.0)
    with pytest.raises(ValueError):
        FeatureMatrix(np.zeros(4, np.float32))


def test_data_is_read_only():
    m = mat([[1.0, 2.0]])
    with pytest.raises(ValueError):
        m.data[0, 0] = 5.0


def test_prompt_length_three_seconds_at_20ms():
    assert prompt_length_frames(3.0, 20.0) == 150


def test_slice_basic_and_identity():
    rng = np.random.default_rng(2)
    m = FeatureMatrix(rng.normal(size=(200, 4)).astype(np.float32))
    s = slice_frames(m, 25, 150)
    assert s.frames == 150 and s.dim == 4 and s.hop_ms == m.hop_ms
    assert np.array_equal(s.data, m.data[25:175])
    assert slice_frames(m, 0, m.frames) == m


def test_slice_never_aliases():
    m = mat([[1.0], [2.0], [3.0]])
    s = slice_frames(m, 0, 2)
    assert not np.shares_memory(s.data, m.data)


def test_slice_out_of_range():
    m = FeatureMatrix(np.zeros((200, 2), np.float32))
    with pytest.raises(ValueError):
        slice_frames(m, 100, 150)
    with pytest.raises(ValueError):
        slice_frames(m, 0, 0)


def test_concat_frames():
    a, b = mat([[1.0]]), mat([[2.0], [3.0]])
    c = concat_frames(a, b)
    assert c.frames == 3
    assert np.array_equal(c.data[:, 0], [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        concat_frames(a, mat([[1.0, 2.0]]))


def test_codebook_file_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    cf = CodebookFile(centroids=rng.normal(size=(7, 3)).astype(np.float32),
                      distortion=0.125, seed=99)
    path = tmp_path / "cb.vtc"
    write_codebook_file(cf, path)
    back = read_codebook_file(path)
    assert back.centroids.tobytes() == cf.centroids.tobytes()
    assert back.distortion == cf.distortion
    assert back.seed == cf.seed
    write_codebook_file(back, tmp_path / "cb2.vtc")
    assert (tmp_path / "cb2.vtc").read_bytes() == path.read_bytes()


def test_codebook_file_errors(tmp_path):
    path = tmp_path / "cb.vtc"
    write_codebook_file(CodebookFile(np.ones((2, 2), np.float32), 0.0, 0), path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"VTFX"
    (tmp_path / "bad.vtc").write_bytes(bytes(raw))
    with pytest.raises(BadMagicError):
        read_codebook_file(tmp_path / "bad.vtc")
    (tmp_path / "short.vtc").write_bytes(path.read_bytes()[:-4])
    with pytest.raises(TruncatedError):
        read_codebook_file(tmp_path / "short.vtc")
    with pytest.raises(ValueError):
        CodebookFile(np.ones((1, 1), np.float32), -1.0, 0)
