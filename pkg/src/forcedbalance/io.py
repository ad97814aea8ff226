"""Reading covariates and serializing matrices, allocations and pairings."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .core import DesignError, check_covariates


def read_covariates(path) -> np.ndarray:
    """Load an n x p covariate matrix from ``.json`` (nested list or ``{"data": ...}``) or CSV.

    CSV files have one row per subject; a non-numeric first row is taken as a
    header and skipped.
    """
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        data = json.loads(text)
        if isinstance(data, dict):
            data = data.get("data")
        X = np.asarray(data, dtype=float)
    else:
        rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
        if not rows:
            raise DesignError(f"{path} is empty")
        try:
            [float(c) for c in rows[0]]
        except ValueError:
            rows = rows[1:]
        try:
            X = np.array([[float(c) for c in r] for r in rows])
        except ValueError as exc:
            raise DesignError(f"{path}: {exc}") from None
    return check_covariates(X)


def matrix_to_csv(m) -> str:
    m = np.asarray(m)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(range(m.shape[1]))
    writer.writerows(m.tolist())
    return buf.getvalue()


def matrix_from_csv(text: str) -> np.ndarray:
    rows = list(csv.reader(io.StringIO(text)))
    return np.array([[float(c) for c in r] for r in rows[1:] if r])


def matrix_to_json(m) -> str:
    m = np.asarray(m, dtype=float)
    return json.dumps({"n": m.shape[0], "data": m.tolist()})


def matrix_from_json(text: str) -> np.ndarray:
    obj = json.loads(text)
    m = np.asarray(obj["data"], dtype=float)
    if m.shape[0] != obj["n"]:
        raise DesignError("matrix JSON row count does not match n")
    return m


def allocation_to_json(w) -> str:
    return json.dumps([int(v) for v in w])


def allocation_from_json(text: str) -> np.ndarray:
    return np.asarray(json.loads(text), dtype=np.int8)


def pairs_to_json(pairs) -> str:
    return json.dumps([[int(i), int(j)] for i, j in pairs])


def pairs_from_json(text: str) -> tuple[tuple[int, int], ...]:
    return tuple((int(i), int(j)) for i, j in json.loads(text))
