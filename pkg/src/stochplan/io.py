"""Atomic file output: CSV, 8-bit portable graymap and JSON.

Files are written to a temporary sibling and moved into place with
``os.replace``. Nothing time-dependent is written, so reruns are byte-identical.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import tempfile
from typing import Iterable, Sequence

import numpy as np

from .grid import Grid, ValueField


def _atomic_write(path: str, data: bytes) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    v = float(v)
    if v == np.inf:
        return "inf"
    if v == -np.inf:
        return "-inf"
    if v != v:
        return "nan"
    return format(v, ".17g")


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for r in rows:
        buf.write(",".join(fmt(v) for v in r) + "\n")
    _atomic_write(path, buf.getvalue().encode())


def write_json(path: str, obj) -> None:
    _atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n").encode())


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def pgm_bytes(values: np.ndarray, vmin: float = 0.0, vmax: float = 1.0, comment: str = "") -> bytes:
    """Binary 8-bit PGM of a 2D array indexed ``[i_x, i_y]``.

    Image rows run from the largest ``y`` (top) to the smallest, columns from
    the smallest ``x``; ``vmin`` maps to 0 and ``vmax`` to 255.
    """
    a = np.asarray(values, float)
    if a.ndim != 2:
        raise ValueError("heatmaps need a 2D field")
    img = a.T[::-1]
    scaled = np.clip((img - vmin) / (vmax - vmin if vmax > vmin else 1.0), 0.0, 1.0)
    px = np.rint(scaled * 255.0).astype(np.uint8)
    head = "P5\n"
    if comment:
        head += "".join(f"# {line}\n" for line in comment.splitlines())
    head += f"{px.shape[1]} {px.shape[0]}\n255\n"
    return head.encode("ascii") + px.tobytes()


def write_pgm(path: str, values: np.ndarray, vmin: float = 0.0, vmax: float = 1.0, comment: str = "") -> None:
    _atomic_write(path, pgm_bytes(values, vmin, vmax, comment))


def read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end].decode())
        pos = end
    if tokens[0] != "P5":
        raise ValueError("not a binary PGM")
    w, h = int(tokens[1]), int(tokens[2])
    return np.frombuffer(data[pos + 1:pos + 1 + w * h], dtype=np.uint8).reshape(h, w)


def field_rows(field: ValueField):
    X = field.grid.flat_points()
    V = field.values.reshape(-1)
    for n in range(X.shape[0]):
        yield (*X[n], V[n])


def write_field_csv(path: str, field: ValueField, extra: dict | None = None) -> None:
    """Columns ``x1..xd,value`` (plus any ``extra`` per-node columns) in C order of the grid."""
    d = field.grid.dim
    header = [f"x{i + 1}" for i in range(d)] + ["value"]
    rows = field_rows(field)
    if extra:
        header += list(extra)
        cols = [np.asarray(v).reshape(-1) for v in extra.values()]
        rows = ((*r, *(c[n] for c in cols)) for n, r in enumerate(rows))
    write_csv(path, header, rows)


def read_field_csv(path: str, t: float = 0.0, phase: int = 1) -> ValueField:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    d = header.index("value")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    axes = [np.unique(data[:, i]) for i in range(d)]
    grid = Grid(tuple(a[0] for a in axes), tuple(a[-1] for a in axes), tuple(a.size for a in axes))
    if data.shape[0] != grid.size:
        raise ValueError(f"{path}: rows do not form a full grid")
    return ValueField(grid, t, data[:, d], phase)


def sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
