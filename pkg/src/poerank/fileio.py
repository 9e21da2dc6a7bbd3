"""Readers and writers for comparison files, selected pairs and score outputs."""

from __future__ import annotations

import csv
import json
from collections.abc import Iterable
from pathlib import Path

import numpy as np

from .core import ComparisonSet, Pair, ValidationError, validate_set


def _opt(value: str | None, conv):
    if value is None or value.strip() == "":
        return None
    return conv(value)


def read_records(path: str | Path) -> list[dict]:
    """Load raw comparison rows from JSON-lines or CSV (chosen by file suffix)."""
    path = Path(path)
    rows: list[dict] = []
    if path.suffix.lower() == ".csv":
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"i", "j"} <= set(reader.fieldnames):
                raise ValidationError(f"{path}: CSV header must contain i,j[,p][,y]")
            for lineno, row in enumerate(reader, start=2):
                try:
                    rows.append({
                        "i": int(row["i"]),
                        "j": int(row["j"]),
                        "p": _opt(row.get("p"), float),
                        "y": _opt(row.get("y"), lambda v: int(float(v))),
                    })
                except ValueError as exc:
                    raise ValidationError(f"{path}:{lineno}: {exc}") from exc
        return rows
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict) or "i" not in obj or "j" not in obj:
                raise ValidationError(f"{path}:{lineno}: expected an object with keys i, j")
            if obj.get("p") is None and obj.get("y") is None:
                raise ValidationError(f"{path}:{lineno}: at least one of p, y is required")
            rows.append(obj)
    return rows


def load_set(path: str | Path, n: int, directed: bool = True) -> ComparisonSet:
    return validate_set(read_records(path), n, directed=directed)


def write_set(path: str | Path, cset: ComparisonSet) -> None:
    with Path(path).open("w") as fh:
        for r in cset.records:
            obj: dict = {"i": r.i, "j": r.j}
            if r.p is not None:
                obj["p"] = r.p
            if r.y is not None:
                obj["y"] = r.y
            fh.write(json.dumps(obj) + "\n")


def write_pairs(path: str | Path, pairs: Iterable[Pair]) -> None:
    with Path(path).open("w") as fh:
        for step, (i, j) in enumerate(pairs):
            fh.write(json.dumps({"i": int(i), "j": int(j), "step": step}) + "\n")


def read_pairs(path: str | Path) -> list[Pair]:
    out = []
    with Path(path).open() as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                out.append((int(obj["i"]), int(obj["j"])))
    return out


def posterior_to_json(mean: np.ndarray, log_max_density: float, covariance: np.ndarray | None = None) -> str:
    obj: dict = {"mean": [float(v) for v in mean]}
    if covariance is not None:
        obj["covariance"] = [float(v) for v in np.asarray(covariance).ravel()]
    obj["log_max_density"] = float(log_max_density)
    return json.dumps(obj)


def posterior_from_json(text: str) -> tuple[np.ndarray, np.ndarray | None, float]:
    obj = json.loads(text)
    mean = np.asarray(obj["mean"], dtype=float)
    cov = obj.get("covariance")
    if cov is not None:
        cov = np.asarray(cov, dtype=float).reshape(len(mean), len(mean))
    return mean, cov, float(obj["log_max_density"])
