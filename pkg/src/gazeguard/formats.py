"""File formats and atomic output helpers."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path: str | Path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2) + "\n")


def fmt(x: float) -> str:
    """9 significant digits, the precision used for every numeric CSV column."""
    return f"{float(x):.9g}"


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    atomic_write_text(path, csv_text(header, rows))


def read_csv(path: str | Path, header: Sequence[str]) -> list[dict[str, str]]:
    """Read a CSV whose header must equal ``header``; errors carry line numbers."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc.strerror})") from None
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise DataError(f"{path}: line 1: empty file")
    if rows[0] != list(header):
        raise DataError(f"{path}: line 1: expected header {','.join(header)}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
        out.append(dict(zip(header, row), _line=lineno))
    return out


def parse_float(row: dict, key: str, path) -> float:
    try:
        value = float(row[key])
    except ValueError:
        raise DataError(f"{path}: line {row['_line']}: {key}={row[key]!r} is not a number") from None
    if not np.isfinite(value):
        raise DataError(f"{path}: line {row['_line']}: {key} is not finite")
    return value


# -- PGM (binary P5, maxval 255) ------------------------------------------

def encode_pgm(pixels: np.ndarray) -> bytes:
    rows, cols = pixels.shape
    data = np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)
    return f"P5\n{cols} {rows}\n255\n".encode("ascii") + data.tobytes()


def decode_pgm(data: bytes, name: str = "<pgm>") -> np.ndarray:
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{name}: truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise DataError(f"{name}: not a binary PGM (P5)")
    try:
        cols, rows, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise DataError(f"{name}: malformed PGM header") from None
    if maxval != 255:
        raise DataError(f"{name}: only maxval 255 is supported")
    body = data[pos:pos + rows * cols]
    if len(body) != rows * cols:
        raise DataError(f"{name}: truncated PGM pixel data")
    return np.frombuffer(body, dtype=np.uint8).reshape(rows, cols).astype(np.float64) / 255.0


def write_pgm(path: str | Path, pixels: np.ndarray) -> None:
    atomic_write_bytes(path, encode_pgm(pixels))


def read_pgm(path: str | Path) -> np.ndarray:
    path = Path(path)
    try:
        return decode_pgm(path.read_bytes(), str(path))
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc.strerror})") from None
