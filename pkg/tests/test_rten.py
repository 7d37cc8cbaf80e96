"""Round-trip and corruption tests for the RTEN tensor file format."""

import numpy as np
import pytest

from freqtrain.errors import FormatError
from freqtrain.rten import read_rten, read_spectra, write_rten, write_spectra


def test_real_round_trip_f32(tmp_path):
    rng = np.random.default_rng(1)
    data = rng.random((3, 8, 6)).astype(np.float32)
    p = tmp_path / "t.rten"
    write_rten(p, data)
    back = read_rten(p)
    assert back.dtype == np.float32
    np.testing.assert_array_equal(back, data)


def test_real_round_trip_f64(tmp_path):
    rng = np.random.default_rng(2)
    data = rng.random((1, 4, 4))
    p = tmp_path / "t.rten"
    write_rten(p, data)
    back = read_rten(p)
    assert back.dtype == np.float64
    np.testing.assert_array_equal(back, data)


def test_spectra_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    spec = rng.standard_normal((2, 4, 4)) + 1j * rng.standard_normal((2, 4, 4))
    p = tmp_path / "s.rten"
    write_spectra(p, spec)
    np.testing.assert_array_equal(read_spectra(p), spec)


def test_header_layout_is_pinned(tmp_path):
    p = tmp_path / "t.rten"
    write_rten(p, np.zeros((2, 4, 6), dtype=np.float32))
    blob = p.read_bytes()
    assert blob[:4] == b"RTEN"
    assert blob[4] == 1  # version
    assert blob[5] == 0  # f32
    assert int.from_bytes(blob[8:12], "little") == 2
    assert int.from_bytes(blob[12:16], "little") == 4
    assert int.from_bytes(blob[16:20], "little") == 6
    assert len(blob) == 20 + 2 * 4 * 6 * 4


def test_bad_magic_reports_offset_zero(tmp_path):
    p = tmp_path / "bad.rten"
    p.write_bytes(b"NOPE" + bytes(32))
    with pytest.raises(FormatError) as exc:
        read_rten(p)
    assert exc.value.offset == 0


def test_truncated_payload_reports_offset(tmp_path):
    p = tmp_path / "t.rten"
    write_rten(p, np.zeros((1, 4, 4), dtype=np.float32))
    blob = p.read_bytes()
    p.write_bytes(blob[:-8])
    with pytest.raises(FormatError) as exc:
        read_rten(p)
    assert exc.value.offset is not None
