"""Training records (angle, stiffness) -> (p1, p2) and their CSV form."""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CSV_HEADER = "q_deg,s_nm_per_rad,p1_bar,p2_bar"
PRESSURE_RANGE = (0.0, 0.4)
CHANNELS = ("I", "II")


class DataError(ValueError):
    pass


class DatasetParseError(DataError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Dataset:
    """``inputs`` is (n, 2) with columns angle [deg] and stiffness [Nm/rad]."""

    inputs: np.ndarray
    p1: np.ndarray
    p2: np.ndarray

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=float)
        p1 = np.asarray(self.p1, dtype=float).ravel()
        p2 = np.asarray(self.p2, dtype=float).ravel()
        if inputs.ndim != 2 or inputs.shape[1] != 2:
            raise DataError(f"inputs must have shape (n, 2), got {inputs.shape}")
        if not (len(inputs) == len(p1) == len(p2)):
            raise DataError(
                f"length mismatch: {len(inputs)} inputs, {len(p1)} p1, {len(p2)} p2")
        if len(inputs) < 2:
            raise DataError("need at least 2 records")
        lo, hi = PRESSURE_RANGE
        tol = 1e-12
        for name, p in (("p1", p1), ("p2", p2)):
            if np.any(p < lo - tol) or np.any(p > hi + tol):
                raise DataError(f"{name} outside [{lo}, {hi}] bar")
        if not (np.all(np.isfinite(inputs)) and np.all(np.isfinite(p1))
                and np.all(np.isfinite(p2))):
            raise DataError("non-finite values in dataset")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "p1", p1)
        object.__setattr__(self, "p2", p2)

    def __len__(self):
        return len(self.p1)

    def outputs(self, channel: str) -> np.ndarray:
        if channel == "I":
            return self.p1
        if channel == "II":
            return self.p2
        raise ValueError(f"channel must be one of {CHANNELS}, got {channel!r}")

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.inputs[idx], self.p1[idx], self.p2[idx])


def _fmt(x: float) -> str:
    return repr(float(x))


def dataset_to_csv(d: Dataset) -> str:
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    for (q, s), a, b in zip(d.inputs, d.p1, d.p2):
        buf.write(f"{_fmt(q)},{_fmt(s)},{_fmt(a)},{_fmt(b)}\n")
    return buf.getvalue()


def write_dataset_csv(d: Dataset, path) -> None:
    Path(path).write_text(dataset_to_csv(d), encoding="ascii")


def parse_dataset_csv(text: str) -> Dataset:
    lines = text.splitlines()
    if not lines or lines[0].strip() != CSV_HEADER:
        raise DatasetParseError(1, f"expected header {CSV_HEADER!r}")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != 4:
            raise DatasetParseError(lineno, f"expected 4 fields, got {len(fields)}")
        try:
            rows.append([float(f) for f in fields])
        except ValueError as exc:
            raise DatasetParseError(lineno, str(exc)) from None
    if len(rows) < 2:
        raise DatasetParseError(len(lines), "need at least 2 records")
    arr = np.array(rows)
    return Dataset(arr[:, :2], arr[:, 2], arr[:, 3])


def read_dataset_csv(path) -> Dataset:
    return parse_dataset_csv(Path(path).read_text(encoding="ascii"))
