"""Self-contained FLAC codec.

No FLAC library is declared as a dependency, so this module implements the
subset of the format the pipeline needs: a decoder covering every subframe
type real encoders emit (CONSTANT, VERBATIM, FIXED 0-4, LPC 1-32, Rice-coded
residuals with escape partitions, all four stereo decorrelation modes), and a
verbatim-only encoder used to produce fixtures and lossless exports.

Only integer PCM at 8/12/16/20/24 bits is supported, which matches the
recordings this project ingests.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DecodeError

_FIXED_COEFFS = {
    0: [],
    1: [1],
    2: [2, -1],
    3: [3, -3, 1],
    4: [4, -6, 4, -1],
}

_BLOCKSIZE_CODES = {1: 192, 2: 576, 3: 1152, 4: 2304, 5: 4608}
_SAMPLE_RATE_CODES = {
    1: 88200, 2: 176400, 3: 192000, 4: 8000, 5: 16000, 6: 22050,
    7: 24000, 8: 32000, 9: 44100, 10: 48000, 11: 96000,
}
_SAMPLE_SIZE_CODES = {1: 8, 2: 12, 4: 16, 5: 20, 6: 24, 7: 32}


def _crc8(data: bytes) -> int:
    crc = 0
    for byte in data:
        crc ^= byte
        for _ in range(8):
            crc = ((crc << 1) ^ 0x07) & 0xFF if crc & 0x80 else (crc << 1) & 0xFF
    return crc


def _crc16(data: bytes) -> int:
    crc = 0
    for byte in data:
        crc ^= byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x8005) & 0xFFFF if crc & 0x8000 else (crc << 1) & 0xFFFF
    return crc


class _BitReader:
    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.byte_pos = pos
        self.bit_pos = 0

    def at_end(self) -> bool:
        return self.byte_pos >= len(self.data)

    def read(self, nbits: int) -> int:
        value = 0
        remaining = nbits
        while remaining > 0:
            if self.byte_pos >= len(self.data):
                raise DecodeError("unexpected end of FLAC stream")
            available = 8 - self.bit_pos
            take = min(available, remaining)
            byte = self.data[self.byte_pos]
            chunk = (byte >> (available - take)) & ((1 << take) - 1)
            value = (value << take) | chunk
            remaining -= take
            self.bit_pos += take
            if self.bit_pos == 8:
                self.bit_pos = 0
                self.byte_pos += 1
        return value

    def read_signed(self, nbits: int) -> int:
        value = self.read(nbits)
        if value >= 1 << (nbits - 1):
            value -= 1 << nbits
        return value

    def read_unary(self) -> int:
        count = 0
        while self.read(1) == 0:
            count += 1
        return count

    def align(self) -> None:
        if self.bit_pos:
            self.bit_pos = 0
            self.byte_pos += 1


class _BitWriter:
    def __init__(self):
        self.buf = bytearray()
        self.acc = 0
        self.nacc = 0

    def write(self, value: int, nbits: int) -> None:
        self.acc = (self.acc << nbits) | (value & ((1 << nbits) - 1))
        self.nacc += nbits
        while self.nacc >= 8:
            self.nacc -= 8
            self.buf.append((self.acc >> self.nacc) & 0xFF)
        self.acc &= (1 << self.nacc) - 1

    def align(self) -> None:
        if self.nacc:
            self.write(0, 8 - self.nacc)

    def getvalue(self) -> bytes:
        self.align()
        return bytes(self.buf)


def _read_utf8_number(reader: _BitReader) -> int:
    first = reader.read(8)
    if first < 0x80:
        return first
    nextra = 0
    mask = 0x40
    while first & mask:
        nextra += 1
        mask >>= 1
    if nextra == 0 or nextra > 6:
        raise DecodeError("invalid UTF-8 coded number in frame header")
    value = first & (mask - 1)
    for _ in range(nextra):
        byte = reader.read(8)
        if byte & 0xC0 != 0x80:
            raise DecodeError("invalid UTF-8 continuation in frame header")
        value = (value << 6) | (byte & 0x3F)
    return value


def _write_utf8_number(writer: _BitWriter, value: int) -> None:
    if value < 0x80:
        writer.write(value, 8)
        return
    payload = []
    nbytes = 2
    while value >= (1 << (nbytes * 5 + 1)) and nbytes < 7:
        nbytes += 1
    for _ in range(nbytes - 1):
        payload.append(0x80 | (value & 0x3F))
        value >>= 6
    lead = (0xFF00 >> nbytes) & 0xFF
    writer.write(lead | value, 8)
    for byte in reversed(payload):
        writer.write(byte, 8)


def _read_residual(reader: _BitReader, blocksize: int, order: int) -> list[int]:
    method = reader.read(2)
    if method > 1:
        raise DecodeError("reserved residual coding method")
    param_bits = 4 if method == 0 else 5
    escape = (1 << param_bits) - 1
    part_order = reader.read(4)
    nparts = 1 << part_order
    if blocksize % nparts != 0:
        raise DecodeError("block size not divisible by residual partition count")
    residual = []
    for part in range(nparts):
        count = blocksize // nparts - (order if part == 0 else 0)
        param = reader.read(param_bits)
        if param == escape:
            raw_bits = reader.read(5)
            if raw_bits == 0:
                residual.extend([0] * count)
            else:
                residual.extend(reader.read_signed(raw_bits) for _ in range(count))
        else:
            for _ in range(count):
                quotient = reader.read_unary()
                value = (quotient << param) | reader.read(param)
                residual.append((value >> 1) ^ -(value & 1))
    return residual


def _decode_subframe(reader: _BitReader, blocksize: int, bps: int) -> list[int]:
    if reader.read(1) != 0:
        raise DecodeError("invalid subframe padding bit")
    sftype = reader.read(6)
    wasted = 0
    if reader.read(1):
        wasted = reader.read_unary() + 1
        bps -= wasted
    if sftype == 0:
        value = reader.read_signed(bps)
        samples = [value] * blocksize
    elif sftype == 1:
        samples = [reader.read_signed(bps) for _ in range(blocksize)]
    elif 8 <= sftype <= 12:
        order = sftype - 8
        samples = [reader.read_signed(bps) for _ in range(order)]
        residual = _read_residual(reader, blocksize, order)
        coeffs = _FIXED_COEFFS[order]
        for res in residual:
            pred = sum(c * samples[-1 - i] for i, c in enumerate(coeffs))
            samples.append(pred + res)
    elif sftype >= 32:
        order = sftype - 31
        samples = [reader.read_signed(bps) for _ in range(order)]
        precision = reader.read(4) + 1
        if precision == 16:
            raise DecodeError("invalid LPC coefficient precision")
        shift = reader.read_signed(5)
        coeffs = [reader.read_signed(precision) for _ in range(order)]
        residual = _read_residual(reader, blocksize, order)
        for res in residual:
            acc = sum(c * samples[-1 - i] for i, c in enumerate(coeffs))
            samples.append((acc >> shift) + res)
    else:
        raise DecodeError(f"reserved subframe type {sftype}")
    if wasted:
        samples = [s << wasted for s in samples]
    return samples


def read_flac(path) -> tuple[np.ndarray, int, int]:
    """Decode a FLAC file.

    Returns (samples, sample_rate, bits_per_sample) where samples is an int32
    array of shape (n_frames, n_channels).
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != b"fLaC":
        raise DecodeError("not a FLAC stream (bad magic)")
    pos = 4
    streaminfo = None
    while True:
        if pos + 4 > len(data):
            raise DecodeError("truncated FLAC metadata")
        header = data[pos]
        last = bool(header & 0x80)
        btype = header & 0x7F
        length = int.from_bytes(data[pos + 1:pos + 4], "big")
        body = data[pos + 4:pos + 4 + length]
        if btype == 0:
            if length != 34:
                raise DecodeError("malformed STREAMINFO block")
            bits = int.from_bytes(body[10:18], "big")
            streaminfo = {
                "sample_rate": bits >> 44,
                "channels": ((bits >> 41) & 0x7) + 1,
                "bps": ((bits >> 36) & 0x1F) + 1,
                "total_samples": bits & ((1 << 36) - 1),
            }
        pos += 4 + length
        if last:
            break
    if streaminfo is None:
        raise DecodeError("missing STREAMINFO block")
    if streaminfo["sample_rate"] == 0:
        raise DecodeError("STREAMINFO declares zero sample rate")

    channels_out: list[list[int]] = [[] for _ in range(streaminfo["channels"])]
    reader = _BitReader(data, pos)
    while not reader.at_end():
        frame_start = reader.byte_pos
        sync = reader.read(14)
        if sync != 0x3FFE:
            raise DecodeError("lost frame sync")
        reader.read(1)  # reserved
        reader.read(1)  # blocking strategy
        bs_code = reader.read(4)
        sr_code = reader.read(4)
        chan_code = reader.read(4)
        ss_code = reader.read(3)
        reader.read(1)  # reserved
        _read_utf8_number(reader)
        if bs_code == 0:
            raise DecodeError("reserved block size code")
        elif bs_code in _BLOCKSIZE_CODES:
            blocksize = _BLOCKSIZE_CODES[bs_code]
        elif bs_code == 6:
            blocksize = reader.read(8) + 1
        elif bs_code == 7:
            blocksize = reader.read(16) + 1
        else:
            blocksize = 256 << (bs_code - 8)
        if sr_code == 12:
            reader.read(8)
        elif sr_code in (13, 14):
            reader.read(16)
        elif sr_code == 15:
            raise DecodeError("invalid sample rate code")
        header_bytes = data[frame_start:reader.byte_pos + (1 if reader.bit_pos else 0)]
        crc8 = reader.read(8)
        if _crc8(header_bytes) != crc8:
            raise DecodeError("frame header CRC mismatch")

        bps = _SAMPLE_SIZE_CODES.get(ss_code, streaminfo["bps"]) if ss_code else streaminfo["bps"]
        if chan_code < 8:
            nchan = chan_code + 1
            if nchan != streaminfo["channels"]:
                raise DecodeError("frame channel count disagrees with STREAMINFO")
            decoded = [_decode_subframe(reader, blocksize, bps) for _ in range(nchan)]
        elif chan_code in (8, 9, 10):
            first_bps = bps + (1 if chan_code == 9 else 0)
            second_bps = bps + (1 if chan_code in (8, 10) else 0)
            a = _decode_subframe(reader, blocksize, first_bps)
            b = _decode_subframe(reader, blocksize, second_bps)
            if chan_code == 8:  # left/side
                decoded = [a, [left - side for left, side in zip(a, b)]]
            elif chan_code == 9:  # right/side
                decoded = [[right + side for side, right in zip(a, b)], b]
            else:  # mid/side
                decoded = [[], []]
                for mid, side in zip(a, b):
                    mid = (mid << 1) | (side & 1)
                    decoded[0].append((mid + side) >> 1)
                    decoded[1].append((mid - side) >> 1)
        else:
            raise DecodeError("reserved channel assignment")
        reader.align()
        frame_bytes = data[frame_start:reader.byte_pos]
        crc16 = reader.read(16)
        if _crc16(frame_bytes) != crc16:
            raise DecodeError("frame CRC-16 mismatch")
        for chan, samples in zip(channels_out, decoded):
            chan.extend(samples)

    total = streaminfo["total_samples"]
    out = np.array(channels_out, dtype=np.int64).T
    if total and len(out) > total:
        out = out[:total]
    return out.astype(np.int32), streaminfo["sample_rate"], streaminfo["bps"]


def write_flac(path, samples: np.ndarray, sample_rate: int, bits_per_sample: int = 16,
               block_size: int = 4096) -> None:
    """Encode integer PCM as a FLAC stream using verbatim subframes.

    Verbatim frames trade compression for simplicity; output is bit-lossless.
    `samples` is (n, channels) or (n,) int.
    """
    samples = np.asarray(samples)
    if samples.ndim == 1:
        samples = samples[:, None]
    nsamples, nchan = samples.shape
    if not (1 <= nchan <= 8):
        raise ValueError("FLAC supports 1..8 channels")
    if bits_per_sample not in (8, 12, 16, 20, 24):
        raise ValueError("unsupported bits per sample")
    limit = 1 << (bits_per_sample - 1)
    if samples.min() < -limit or samples.max() >= limit:
        raise ValueError("sample values exceed declared bit depth")

    ss_code = {8: 1, 12: 2, 16: 4, 20: 5, 24: 6}[bits_per_sample]
    out = bytearray(b"fLaC")
    info = _BitWriter()
    info.write(block_size, 16)
    info.write(block_size, 16)
    info.write(0, 24)
    info.write(0, 24)
    info.write(sample_rate, 20)
    info.write(nchan - 1, 3)
    info.write(bits_per_sample - 1, 5)
    info.write(nsamples, 36)
    body = info.getvalue() + b"\x00" * 16  # MD5 unset
    out += bytes([0x80]) + len(body).to_bytes(3, "big") + body

    frame_index = 0
    for start in range(0, nsamples, block_size):
        block = samples[start:start + block_size]
        blocksize = len(block)
        header = _BitWriter()
        header.write(0x3FFE, 14)
        header.write(0, 1)
        header.write(0, 1)  # fixed blocking
        header.write(7, 4)  # 16-bit blocksize-1 at end of header
        header.write(0, 4)  # sample rate from STREAMINFO
        header.write(nchan - 1, 4)
        header.write(ss_code, 3)
        header.write(0, 1)
        _write_utf8_number(header, frame_index)
        header.write(blocksize - 1, 16)
        header_bytes = header.getvalue()
        frame = _BitWriter()
        for byte in header_bytes:
            frame.write(byte, 8)
        frame.write(_crc8(header_bytes), 8)
        for chan in range(nchan):
            frame.write(0, 1)
            frame.write(1, 6)  # verbatim
            frame.write(0, 1)
            for value in block[:, chan]:
                frame.write(int(value), bits_per_sample)
        frame.align()
        frame_bytes = frame.getvalue()
        out += frame_bytes + struct.pack(">H", _crc16(frame_bytes))
        frame_index += 1

    with open(path, "wb") as fh:
        fh.write(bytes(out))
