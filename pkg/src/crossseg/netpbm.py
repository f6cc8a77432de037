"""Binary NetPBM codecs: P6 color images and P5 grayscale masks.

Images travel as float arrays in [0, 1], channels first; files hold 8-bit
samples with maxval 255. Round-trips are bit-exact at that quantization.
"""

import numpy as np

from .errors import DatasetError

_MAXVAL = 255


def _quantize(values):
    return np.rint(np.clip(values, 0.0, 1.0) * _MAXVAL).astype(np.uint8)


def _read_tokens(data, count, path):
    """Read `count` whitespace-separated header tokens after the magic.

    Comments (# to end of line) are skipped. Returns the tokens and the
    offset of the raster, which starts one whitespace byte after the last
    token.
    """
    tokens = []
    pos = 2  # past the two magic bytes
    while len(tokens) < count:
        if pos >= len(data):
            raise DatasetError(f"{path}: truncated header")
        ch = data[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            eol = data.find(b"\n", pos)
            pos = len(data) if eol < 0 else eol + 1
        else:
            end = pos
            while end < len(data) and not data[end:end + 1].isspace():
                end += 1
            token = data[pos:end]
            if not token.isdigit():
                raise DatasetError(f"{path}: malformed header token {token!r}")
            tokens.append(int(token))
            pos = end
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise DatasetError(f"{path}: malformed header")
    return tokens, pos + 1


def _read_raster(path, magic):
    with open(path, "rb") as handle:
        data = handle.read()
    got = data[:2]
    if got != magic:
        if got in (b"P1", b"P2", b"P3"):
            raise DatasetError(f"{path}: ASCII NetPBM ({got.decode()}) is unsupported, expected {magic.decode()}")
        raise DatasetError(f"{path}: bad magic {got!r}, expected {magic.decode()}")
    (width, height, maxval), offset = _read_tokens(data, 3, path)
    if maxval != _MAXVAL:
        raise DatasetError(f"{path}: maxval must be {_MAXVAL}, got {maxval}")
    channels = 3 if magic == b"P6" else 1
    expected = width * height * channels
    raster = data[offset:offset + expected]
    if len(raster) < expected:
        raise DatasetError(f"{path}: truncated payload, expected {expected} bytes, got {len(raster)}")
    return np.frombuffer(raster, dtype=np.uint8), height, width


def write_ppm(path, image) -> None:
    """Write a (3, H, W) float image in [0, 1] as binary PPM."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise DatasetError(f"PPM image must be (3, H, W), got {image.shape}")
    pixels = _quantize(image).transpose(1, 2, 0)
    with open(path, "wb") as handle:
        handle.write(f"P6\n{image.shape[2]} {image.shape[1]}\n{_MAXVAL}\n".encode())
        handle.write(pixels.tobytes())


def read_ppm(path):
    """Read a binary PPM into a (3, H, W) float array in [0, 1]."""
    flat, height, width = _read_raster(path, b"P6")
    pixels = flat.reshape(height, width, 3).transpose(2, 0, 1)
    return pixels.astype(np.float64) / _MAXVAL


def write_pgm(path, gray) -> None:
    """Write a (H, W) uint8 array as binary PGM."""
    gray = np.asarray(gray, dtype=np.uint8)
    if gray.ndim != 2:
        raise DatasetError(f"PGM raster must be (H, W), got {gray.shape}")
    with open(path, "wb") as handle:
        handle.write(f"P5\n{gray.shape[1]} {gray.shape[0]}\n{_MAXVAL}\n".encode())
        handle.write(gray.tobytes())


def read_pgm(path):
    """Read a binary PGM into a (H, W) uint8 array."""
    flat, height, width = _read_raster(path, b"P5")
    return flat.reshape(height, width).copy()


def write_mask(path, mask) -> None:
    """Write a binary (H, W) mask with values {0, 1} as PGM values {0, 255}."""
    mask = np.asarray(mask)
    values = np.unique(mask)
    if not np.all(np.isin(values, (0, 1))):
        raise DatasetError(f"mask must be binary {{0, 1}}, found values {values[:8]}")
    write_pgm(path, mask.astype(np.uint8) * _MAXVAL)


def read_mask(path):
    """Read a {0, 255} PGM mask as a float (H, W) array with values {0, 1}."""
    gray = read_pgm(path)
    bad = np.setdiff1d(np.unique(gray), (0, _MAXVAL))
    if bad.size:
        raise DatasetError(f"{path}: mask holds non-binary values {bad[:8]}")
    return (gray == _MAXVAL).astype(np.float64)
