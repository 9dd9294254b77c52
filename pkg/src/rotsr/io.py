"""Binary 16-bit PGM (P5) and dataset layout helpers."""
from __future__ import annotations

import csv
import re
from pathlib import Path

import numpy as np

MAXVAL = 65535

_HEADER = re.compile(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s")


class PGMError(OSError):
    pass


def write_pgm(path, img: np.ndarray) -> None:
    """Write a uint16 (or integer-valued) 2-D array as big-endian P5."""
    a = np.asarray(img)
    if a.ndim != 2:
        raise ValueError("PGM images are 2-D")
    if a.dtype != np.uint16:
        if np.any(a < 0) or np.any(a > MAXVAL) or np.any(a != np.round(a)):
            raise ValueError("values must be integers in [0, 65535]")
        a = a.astype(np.uint16)
    h, w = a.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{MAXVAL}\n".encode("ascii"))
        f.write(a.astype(">u2").tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = _HEADER.match(data)
    if not m:
        raise PGMError(f"{path}: malformed PGM header")
    w, h, maxval = (int(g) for g in m.groups())
    if not 0 < maxval <= MAXVAL:
        raise PGMError(f"{path}: unsupported maxval {maxval}")
    body = data[m.end():]
    dt = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    n = w * h * dt.itemsize
    if len(body) < n:
        raise PGMError(f"{path}: truncated pixel data")
    return np.frombuffer(body[:n], dtype=dt).reshape(h, w).astype(np.uint16)


def to_uint16(img: np.ndarray) -> np.ndarray:
    """Quantize a [0, 1] float image."""
    return np.rint(np.clip(img, 0.0, 1.0) * MAXVAL).astype(np.uint16)


def to_float(img: np.ndarray) -> np.ndarray:
    return np.asarray(img, dtype=np.float64) / MAXVAL


def write_shifts(path, shifts) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["row", "shift"])
        for i, s in enumerate(shifts):
            wr.writerow([i, repr(float(s))])


def read_shifts(path) -> np.ndarray:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return np.array([float(r["shift"]) for r in rows])


def list_ids(split_dir) -> list[str]:
    return sorted(p.name[: -len("_hr.pgm")] for p in Path(split_dir).glob("*_hr.pgm"))
