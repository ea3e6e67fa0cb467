"""Readers and writers for the image formats the CLI accepts.

Supported: PGM (both the ASCII ``P2`` and binary ``P5`` variants), plain
CSV intensity matrices, and IDX containers (with an index selecting one
image).  PNG and friends are deliberately out: no decoder dependencies
in the core.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError, OTImageError


class PgmFormatError(OTImageError, ValueError):
    """Malformed PGM file."""


def read_pgm(path) -> np.ndarray:
    """Read a P2 or P5 PGM file into a float matrix."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] not in (b"P2", b"P5"):
        raise PgmFormatError(f"{path}: not a P2/P5 PGM file")
    binary = data[:2] == b"P5"

    # header tokens (width, height, maxval) with '#' comments allowed
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3:
        if pos >= len(data):
            raise PgmFormatError(f"{path}: truncated header")
        ch = data[pos:pos + 1]
        if ch == b"#":
            nl = data.find(b"\n", pos)
            pos = len(data) if nl < 0 else nl + 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(data) and not data[end:end + 1].isspace():
                end += 1
            tokens.append(data[pos:end])
            pos = end
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise PgmFormatError(f"{path}: non-numeric header field") from exc
    if width <= 0 or height <= 0 or maxval <= 0:
        raise PgmFormatError(f"{path}: invalid dimensions or maxval")

    if binary:
        pos += 1  # single whitespace after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        count = width * height
        raw = data[pos:pos + count * dtype.itemsize]
        if len(raw) != count * dtype.itemsize:
            raise PgmFormatError(f"{path}: truncated pixel payload")
        pixels = np.frombuffer(raw, dtype=dtype).astype(float)
    else:
        fields = data[pos:].split()
        if len(fields) != width * height:
            raise PgmFormatError(
                f"{path}: expected {width * height} samples, found {len(fields)}"
            )
        try:
            pixels = np.array([int(f) for f in fields], dtype=float)
        except ValueError as exc:
            raise PgmFormatError(f"{path}: non-numeric sample") from exc
    if pixels.max() > maxval:
        raise PgmFormatError(f"{path}: sample exceeds declared maxval {maxval}")
    return pixels.reshape(height, width)


def write_pgm(path, pixels: np.ndarray, maxval: int = 255, binary: bool = True) -> None:
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise InvalidArgumentError("PGM writer expects a 2-D matrix")
    clipped = np.clip(np.round(pixels), 0, maxval).astype(np.uint16 if maxval > 255 else np.uint8)
    height, width = clipped.shape
    header = f"{'P5' if binary else 'P2'}\n{width} {height}\n{maxval}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            fh.write(clipped.astype(">u2" if maxval > 255 else "u1").tobytes())
        else:
            for row in clipped:
                fh.write((" ".join(str(int(v)) for v in row) + "\n").encode("ascii"))


def read_csv_matrix(path) -> np.ndarray:
    """Plain comma-separated intensity matrix."""
    try:
        matrix = np.loadtxt(path, delimiter=",", dtype=float, ndmin=2)
    except ValueError as exc:
        raise InvalidArgumentError(f"{path}: cannot parse CSV matrix: {exc}") from exc
    return matrix


def read_image(path, idx_index: int | None = None) -> np.ndarray:
    """Read one image from a PGM, CSV, or IDX file by extension."""
    name = str(path).lower()
    if name.endswith(".gz"):
        name = name[:-3]
    if name.endswith(".pgm"):
        return read_pgm(path)
    if name.endswith(".csv"):
        return read_csv_matrix(path)
    # anything else is treated as an IDX image container
    from .dataset import read_idx_images

    images = read_idx_images(path)
    if idx_index is None:
        raise InvalidArgumentError(
            f"{path} is an IDX container; pass an image index to select one"
        )
    if not 0 <= idx_index < images.shape[0]:
        raise InvalidArgumentError(
            f"index {idx_index} out of range for {images.shape[0]} images"
        )
    return images[idx_index].astype(float)
