"""Binary file formats: NTF tensors and PGM/PPM images.

NTF v1 layout: magic ``NTF1``, u32 rank, rank x u32 extents, then
little-endian float32 payload in row-major order.
"""

import struct

import numpy as np

NTF_MAGIC = b"NTF1"


class FormatError(ValueError):
    """Raised when a binary file does not match its declared format."""


def write_ntf(fp, arr):
    """Write a float32 array to an open binary file object."""
    arr = np.asarray(arr, dtype=np.float32)
    fp.write(NTF_MAGIC)
    fp.write(struct.pack("<I", arr.ndim))
    for extent in arr.shape:
        fp.write(struct.pack("<I", extent))
    fp.write(arr.astype("<f4").tobytes())


def read_ntf(fp):
    """Read one NTF tensor from an open binary file object."""
    magic = fp.read(4)
    if magic != NTF_MAGIC:
        raise FormatError(f"bad NTF magic {magic!r}, expected {NTF_MAGIC!r}")
    (rank,) = struct.unpack("<I", _read_exact(fp, 4))
    shape = tuple(
        struct.unpack("<I", _read_exact(fp, 4))[0] for _ in range(rank)
    )
    count = int(np.prod(shape)) if shape else 1
    raw = _read_exact(fp, 4 * count)
    data = np.frombuffer(raw, dtype="<f4").astype(np.float32)
    return data.reshape(shape)


def save_ntf(path, arr):
    with open(path, "wb") as fp:
        write_ntf(fp, arr)


def load_ntf(path):
    with open(path, "rb") as fp:
        return read_ntf(fp)


def _read_exact(fp, n):
    raw = fp.read(n)
    if len(raw) != n:
        raise FormatError(f"truncated file: wanted {n} bytes, got {len(raw)}")
    return raw


def save_pgm(path, values):
    """Write a 2-D array as binary 8-bit PGM, min-max scaled for viewing."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"PGM wants a 2-D array, got shape {values.shape}")
    lo, hi = float(values.min()), float(values.max())
    if hi > lo:
        scaled = (values - lo) / (hi - lo)
    else:
        scaled = np.zeros_like(values)
    pixels = np.round(scaled * 255.0).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fp:
        fp.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fp.write(pixels.tobytes())


def save_ppm(path, rgb):
    """Write an HxWx3 array with values in [0, 1] as binary 8-bit PPM."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"PPM wants HxWx3, got shape {rgb.shape}")
    pixels = np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w, _ = pixels.shape
    with open(path, "wb") as fp:
        fp.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fp.write(pixels.tobytes())


def load_pnm(path):
    """Read a binary PGM (P5) or PPM (P6) written by this module.

    Returns a float32 array in [0, 1]: HxW for PGM, HxWx3 for PPM.
    """
    with open(path, "rb") as fp:
        raw = fp.read()
    fields, offset = [], 0
    while len(fields) < 4:
        while offset < len(raw) and raw[offset : offset + 1].isspace():
            offset += 1
        if raw[offset : offset + 1] == b"#":
            while offset < len(raw) and raw[offset] != 0x0A:
                offset += 1
            continue
        start = offset
        while offset < len(raw) and not raw[offset : offset + 1].isspace():
            offset += 1
        fields.append(raw[start:offset])
    offset += 1  # single whitespace byte after maxval
    magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported PNM magic {magic!r}")
    if maxval != 255:
        raise FormatError(f"only maxval 255 supported, got {maxval}")
    channels = 1 if magic == b"P5" else 3
    count = w * h * channels
    payload = raw[offset : offset + count]
    if len(payload) != count:
        raise FormatError(f"truncated PNM payload: {len(payload)} of {count} bytes")
    pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float32) / 255.0
    if channels == 1:
        return pixels.reshape(h, w)
    return pixels.reshape(h, w, 3)
