"""Binary image formats: PPM (P6) for frames, PFM (Pf) for depth, PGM (P5)
for grayscale previews. All failures name the byte offset they tripped on."""

from __future__ import annotations

import numpy as np


class FormatError(ValueError):
    pass


def _read_token(data: bytes, pos: int, path) -> tuple[bytes, int]:
    while pos < len(data) and data[pos:pos + 1].isspace():
        pos += 1
    if pos < len(data) and data[pos:pos + 1] == b"#":  # comment to end of line
        while pos < len(data) and data[pos:pos + 1] != b"\n":
            pos += 1
        return _read_token(data, pos, path)
    start = pos
    while pos < len(data) and not data[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise FormatError(f"{path}: truncated header at byte offset {start}")
    return data[start:pos], pos


def write_ppm(path, image: np.ndarray) -> None:
    """image: (3, H, W) float in [0, 1]; quantized to maxval 255."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise FormatError(f"write_ppm: expected (3, H, W), got {image.shape}")
    _, h, w = image.shape
    quant = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(quant.transpose(1, 2, 0).tobytes())


def read_ppm(path) -> np.ndarray:
    """Returns (3, H, W) float32 in [0, 1]."""
    data = open(path, "rb").read()
    magic, pos = _read_token(data, 0, path)
    if magic != b"P6":
        raise FormatError(f"{path}: bad magic {magic!r} at byte offset 0 (expected P6)")
    try:
        wtok, pos = _read_token(data, pos, path)
        htok, pos = _read_token(data, pos, path)
        mtok, pos = _read_token(data, pos, path)
        w, h, maxval = int(wtok), int(htok), int(mtok)
    except ValueError:
        raise FormatError(f"{path}: non-numeric header near byte offset {pos}")
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval} at byte offset {pos}")
    pos += 1  # single whitespace after maxval
    expected = w * h * 3
    body = data[pos:pos + expected]
    if len(body) != expected:
        raise FormatError(f"{path}: payload needs {expected} bytes at byte offset {pos}, "
                          f"found {len(body)}")
    arr = np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)
    return (arr.transpose(2, 0, 1).astype(np.float32) / 255.0)


def write_pfm(path, depth: np.ndarray) -> None:
    """Grayscale PFM, scale -1.0 (little-endian), rows bottom-up."""
    if depth.ndim != 2:
        raise FormatError(f"write_pfm: expected (H, W), got {depth.shape}")
    h, w = depth.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.flipud(depth).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    data = open(path, "rb").read()
    magic, pos = _read_token(data, 0, path)
    if magic != b"Pf":
        raise FormatError(f"{path}: bad magic {magic!r} at byte offset 0 (expected grayscale Pf)")
    try:
        wtok, pos = _read_token(data, pos, path)
        htok, pos = _read_token(data, pos, path)
        stok, pos = _read_token(data, pos, path)
        w, h, scale = int(wtok), int(htok), float(stok)
    except ValueError:
        raise FormatError(f"{path}: non-numeric header near byte offset {pos}")
    if scale >= 0:
        raise FormatError(f"{path}: big-endian PFM (scale {scale}) not supported")
    pos += 1
    expected = w * h * 4
    body = data[pos:pos + expected]
    if len(body) != expected:
        raise FormatError(f"{path}: payload needs {expected} bytes at byte offset {pos}, "
                          f"found {len(body)}")
    arr = np.frombuffer(body, dtype="<f4").reshape(h, w)
    return np.flipud(arr).astype(np.float32)


def write_pgm(path, gray: np.ndarray) -> None:
    """gray: (H, W) uint8."""
    if gray.ndim != 2 or gray.dtype != np.uint8:
        raise FormatError(f"write_pgm: expected uint8 (H, W), got {gray.dtype} {gray.shape}")
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(gray.tobytes())


def read_pgm(path) -> np.ndarray:
    data = open(path, "rb").read()
    magic, pos = _read_token(data, 0, path)
    if magic != b"P5":
        raise FormatError(f"{path}: bad magic {magic!r} at byte offset 0 (expected P5)")
    wtok, pos = _read_token(data, pos, path)
    htok, pos = _read_token(data, pos, path)
    mtok, pos = _read_token(data, pos, path)
    w, h = int(wtok), int(htok)
    pos += 1
    body = data[pos:pos + w * h]
    if len(body) != w * h:
        raise FormatError(f"{path}: payload needs {w * h} bytes at byte offset {pos}, "
                          f"found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()
