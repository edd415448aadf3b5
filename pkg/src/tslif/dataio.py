"""Time-series ingestion, chronological splitting, sliding windows and
train-statistics normalization for desk-scale forecasting runs."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DataFormatError
from .series import SeriesFrame


@dataclass(frozen=True)
class DatasetSpec:
    path: str
    context_length: int
    prediction_length: int
    delimiter: str = ","
    has_header: bool = True
    ratios: tuple[float, float, float] = (0.7, 0.2, 0.1)

    def __post_init__(self) -> None:
        if self.context_length < 1 or self.prediction_length < 1:
            raise ContractError(
                f"context/prediction lengths must be >= 1, got "
                f"{self.context_length}/{self.prediction_length}"
            )
        if len(self.ratios) != 3 or any(r <= 0 for r in self.ratios):
            raise ContractError(f"ratios must be three positive numbers, got {self.ratios}")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ContractError(f"ratios must sum to 1, got {self.ratios}")


@dataclass(frozen=True)
class NormalizationStats:
    """Per-channel z-score statistics, fit on the training split only.

    Constant channels keep std 1 (and are flagged) so normalization maps them
    to zero and denormalization restores the constant.
    """

    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray  # bool per channel

    @classmethod
    def fit(cls, values: np.ndarray) -> "NormalizationStats":
        mean = values.mean(axis=0)
        std = values.std(axis=0)
        constant = std == 0.0
        if np.any(constant):
            warnings.warn(
                f"{int(constant.sum())} constant channel(s); normalized to zeros",
                stacklevel=2,
            )
        std = np.where(constant, 1.0, std)
        return cls(mean, std, constant)

    def normalize(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def denormalize(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean

    def to_json(self) -> str:
        return json.dumps(
            {
                "mean": self.mean.tolist(),
                "std": self.std.tolist(),
                "constant": self.constant.astype(bool).tolist(),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "NormalizationStats":
        data = json.loads(text)
        return cls(
            np.asarray(data["mean"], dtype=np.float64),
            np.asarray(data["std"], dtype=np.float64),
            np.asarray(data["constant"], dtype=bool),
        )


@dataclass
class WindowSet:
    """Normalized sliding windows: inputs (m, T, C) and targets (m, L, C)."""

    inputs: np.ndarray
    targets: np.ndarray
    stats: NormalizationStats
    channels: tuple[str, ...] = field(default=())

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]


def load_csv(spec: DatasetSpec) -> SeriesFrame:
    """Read a rectangular numeric CSV into a frame; errors name the cell."""
    try:
        fh = open(spec.path, newline="")
    except OSError as exc:
        raise DataFormatError(f"cannot open {spec.path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh, delimiter=spec.delimiter)
        rows = [row for row in reader if row]
    if not rows:
        raise DataFormatError(f"{spec.path}: empty file")
    start = 0
    channels: tuple[str, ...] = ()
    if spec.has_header:
        channels = tuple(name.strip() for name in rows[0])
        start = 1
        if len(rows) == 1:
            raise DataFormatError(f"{spec.path}: header but no data rows")
    width = len(rows[start])
    data = np.empty((len(rows) - start, width), dtype=np.float64)
    for i, row in enumerate(rows[start:], start=start + 1):
        if len(row) != width:
            raise DataFormatError(
                f"{spec.path}: ragged row {i} has {len(row)} cells, expected {width}"
            )
        for j, cell in enumerate(row):
            try:
                data[i - start - 1, j] = float(cell)
            except ValueError:
                raise DataFormatError(
                    f"{spec.path}: non-numeric cell at row {i}, column {j + 1}: {cell!r}"
                ) from None
    if channels and len(channels) != width:
        raise DataFormatError(
            f"{spec.path}: header has {len(channels)} names but rows have {width} cells"
        )
    return SeriesFrame(data, channels)


def split_lengths(total: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    n_train = int(round(ratios[0] * total))
    n_val = int(round(ratios[1] * total))
    n_test = total - n_train - n_val
    return n_train, n_val, n_test


def make_windows(values: np.ndarray, context: int, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Stride-1 sliding (input, target) pairs fully inside ``values``."""
    total = values.shape[0]
    count = total - (context + horizon) + 1
    if count < 1:
        raise ContractError(
            f"segment of length {total} too short for context {context} + horizon {horizon}"
        )
    inputs = np.stack([values[i:i + context] for i in range(count)])
    targets = np.stack([values[i + context:i + context + horizon] for i in range(count)])
    return inputs, targets


def split_and_window(
    frame: SeriesFrame,
    spec: DatasetSpec,
) -> tuple[WindowSet, WindowSet, WindowSet]:
    """Chronological split, train-only statistics, per-split stride-1 windows."""
    n_train, n_val, n_test = split_lengths(frame.n_steps, spec.ratios)
    pieces = (
        frame.values[:n_train],
        frame.values[n_train:n_train + n_val],
        frame.values[n_train + n_val:],
    )
    stats = NormalizationStats.fit(pieces[0])
    sets = []
    for piece in pieces:
        inputs, targets = make_windows(
            stats.normalize(piece), spec.context_length, spec.prediction_length
        )
        sets.append(WindowSet(inputs, targets, stats, frame.channels))
    return tuple(sets)


__all__ = [
    "DatasetSpec", "NormalizationStats", "WindowSet",
    "load_csv", "split_lengths", "make_windows", "split_and_window",
]
