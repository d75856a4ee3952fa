"""Deterministic, atomically written JSON and CSV reports."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SPECTRUM_COLUMNS = ("n", "lambda_plus", "lambda_minus", "bound_rhs", "margin", "weyl_ratio")


def write_atomic(path, text: str) -> Path:
    """Write via a temporary file in the target directory and ``os.replace``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def dumps(obj) -> str:
    return json.dumps(_plain(obj), indent=1, sort_keys=True) + "\n"


def write_json(path, obj) -> Path:
    return write_atomic(path, dumps(obj))


def csv_text(columns: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                    for v in row])
    return buf.getvalue()


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
    return write_atomic(path, csv_text(columns, rows))


def spectrum_rows(bounds: dict, weyl_plus: Sequence[float] | None = None) -> list[tuple]:
    """One row per index; columns as in :data:`SPECTRUM_COLUMNS` (missing entries left blank)."""
    lp, lm = bounds["plus"]["lambda"], bounds["minus"]["lambda"]
    rp, mp = bounds["plus"]["rhs"], bounds["plus"]["margin"]
    rows = []
    for i in range(max(len(lp), len(lm))):
        rows.append((
            i + 1,
            lp[i] if i < len(lp) else None,
            lm[i] if i < len(lm) else None,
            rp[i] if i < len(rp) else None,
            mp[i] if i < len(mp) else None,
            weyl_plus[i] if weyl_plus is not None and i < len(weyl_plus) else None,
        ))
    return rows
