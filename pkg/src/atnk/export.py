"""Attention-matrix export as CSV and plain PGM (P2) images.

Rows are output steps and columns are source positions.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

PathLike = Union[str, Path]


def _matrix(alpha) -> np.ndarray:
    a = np.asarray(alpha, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] == 0:
        raise ValueError(f"attention matrix must be [steps, positions], got shape {a.shape}")
    return a


def attention_csv(alpha, positions: Optional[Sequence[int]] = None) -> str:
    a = _matrix(alpha)
    cols = list(range(a.shape[1])) if positions is None else list(positions)
    if len(cols) != a.shape[1]:
        raise ValueError(f"{len(cols)} column labels for {a.shape[1]} columns")
    lines = [",".join(str(c) for c in cols)]
    lines += [",".join(f"{v:.6f}" for v in row) for row in a]
    return "\n".join(lines) + "\n"


def attention_pgm(alpha) -> str:
    """Plain grayscale image; pixel = round(255 * alpha), so brighter means more weight."""
    a = _matrix(alpha)
    pix = np.clip(np.rint(a * 255.0), 0, 255).astype(int)
    rows = [" ".join(str(v) for v in row) for row in pix]
    return f"P2\n{a.shape[1]} {a.shape[0]}\n255\n" + "\n".join(rows) + "\n"


def read_attention_csv(path: PathLike) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def read_pgm(path: PathLike) -> np.ndarray:
    tokens = Path(path).read_text().split()
    if tokens[0] != "P2":
        raise ValueError(f"{path}: not a plain PGM file")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    pix = np.array([int(t) for t in tokens[4:]], dtype=int)
    if pix.size != w * h or maxval != 255:
        raise ValueError(f"{path}: malformed PGM body")
    return pix.reshape(h, w)


def export_attention(prefix: PathLike, index: int, alpha,
                     positions: Optional[Sequence[int]] = None):
    """Write ``<prefix>-<index>.csv`` and ``<prefix>-<index>.pgm``; returns both paths."""
    base = f"{prefix}-{index}"
    csv_path, pgm_path = Path(base + ".csv"), Path(base + ".pgm")
    csv_path.write_text(attention_csv(alpha, positions))
    pgm_path.write_text(attention_pgm(alpha))
    return csv_path, pgm_path
