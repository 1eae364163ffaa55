"""FLAC codec: round trips, hand-built frames, and failure modes."""

import numpy as np
import pytest

from orcaug import flacio
from orcaug.errors import DecodeError
from orcaug.flacio import _BitReader, _BitWriter, _crc8, _crc16


def test_bit_roundtrip():
    writer = _BitWriter()
    writer.write(0b101, 3)
    writer.write(0x3FFE, 14)
    writer.write(1, 1)
    data = writer.getvalue()
    reader = _BitReader(data)
    assert reader.read(3) == 0b101
    assert reader.read(14) == 0x3FFE
    assert reader.read(1) == 1


def test_signed_reads():
    writer = _BitWriter()
    writer.write(-5 & 0xFF, 8)
    writer.write(5, 8)
    reader = _BitReader(writer.getvalue())
    assert reader.read_signed(8) == -5
    assert reader.read_signed(8) == 5


def test_crc_known_vectors():
    # CRC-8 poly 0x07 and CRC-16 poly 0x8005 over "123456789"
    assert _crc8(b"123456789") == 0xF4
    assert _crc16(b"123456789") == 0xFEE8


@pytest.mark.parametrize("channels", [1, 2])
@pytest.mark.parametrize("bits", [16, 24])
def test_verbatim_roundtrip(tmp_path, channels, bits, rng):
    n = 9000  # spans multiple 4096-sample frames including a partial tail
    limit = 2 ** (bits - 1) - 1
    samples = rng.integers(-limit, limit, size=(n, channels), dtype=np.int64)
    path = tmp_path / "t.flac"
    flacio.write_flac(path, samples, 24000, bits)
    decoded, rate, bps = flacio.read_flac(path)
    assert rate == 24000
    assert bps == bits
    assert decoded.shape == (n, channels)
    assert np.array_equal(decoded, samples)


def test_fixed_subframe_decoding(tmp_path):
    """Hand-assemble a frame with a FIXED order-1 subframe and verify the
    predictor + Rice residual path reconstructs the ramp."""
    samples = np.arange(64, dtype=np.int64)  # order-1 residuals: warmup 0, then all 1
    header = _BitWriter()
    header.write(0x3FFE, 14)
    header.write(0, 1)
    header.write(0, 1)
    header.write(6, 4)          # 8-bit blocksize-1 follows
    header.write(0, 4)          # rate from streaminfo
    header.write(0, 4)          # 1 channel
    header.write(4, 3)          # 16-bit samples
    header.write(0, 1)
    header.write(0, 8)          # frame number 0 (utf8)
    header.write(len(samples) - 1, 8)
    header_bytes = header.getvalue()

    frame = _BitWriter()
    for byte in header_bytes:
        frame.write(byte, 8)
    frame.write(_crc8(header_bytes), 8)
    frame.write(0, 1)           # subframe padding bit
    frame.write(9, 6)           # FIXED order 1
    frame.write(0, 1)           # no wasted bits
    frame.write(0, 16)          # warmup sample = 0
    frame.write(0, 2)           # rice method 0 (4-bit params)
    frame.write(0, 4)           # partition order 0
    frame.write(0, 4)           # rice parameter 0
    for _ in range(len(samples) - 1):
        # residual = 1 -> zigzag 2 -> unary 00 then stop bit
        frame.write(0b001, 3)
    frame.align()
    frame_bytes = frame.getvalue()

    info = _BitWriter()
    info.write(4096, 16)
    info.write(4096, 16)
    info.write(0, 24)
    info.write(0, 24)
    info.write(24000, 20)
    info.write(0, 3)            # 1 channel
    info.write(15, 5)           # 16 bps
    info.write(len(samples), 36)
    body = info.getvalue() + b"\x00" * 16
    stream = (b"fLaC" + bytes([0x80]) + len(body).to_bytes(3, "big") + body
              + frame_bytes + _crc16(frame_bytes).to_bytes(2, "big"))
    path = tmp_path / "fixed.flac"
    path.write_bytes(stream)

    decoded, rate, bps = flacio.read_flac(path)
    assert np.array_equal(decoded[:, 0], samples)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.flac"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(DecodeError):
        flacio.read_flac(path)


def test_corrupted_crc_rejected(tmp_path, rng):
    samples = rng.integers(-1000, 1000, size=200, dtype=np.int64)
    path = tmp_path / "c.flac"
    flacio.write_flac(path, samples, 24000, 16)
    raw = bytearray(path.read_bytes())
    raw[-10] ^= 0xFF  # flip payload bits inside the last frame
    path.write_bytes(bytes(raw))
    with pytest.raises(DecodeError):
        flacio.read_flac(path)
