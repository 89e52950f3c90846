"""Datasets plus the CSV and model file formats."""
from __future__ import annotations

import csv
import io
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .nn import ModelParams

MODEL_FORMAT_VERSION = 1
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


class LabeledExample(NamedTuple):
    x: np.ndarray
    y: int


@dataclass
class Dataset:
    """Feature rows in [0, 1] with integer labels."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        if len(self.y) == 0:
            raise ValueError("dataset must be non-empty")
        if self.X.shape[0] != len(self.y):
            raise ValueError(f"{self.X.shape[0]} feature rows but {len(self.y)} labels")
        if not np.all(np.isfinite(self.X)) or self.X.min() < 0.0 or self.X.max() > 1.0:
            raise ValueError("features must be finite and lie in [0, 1]")
        if self.y.min() < 0:
            raise ValueError("labels must be non-negative")

    def __len__(self) -> int:
        return len(self.y)

    def __iter__(self) -> Iterator[LabeledExample]:
        for x, y in zip(self.X, self.y):
            yield LabeledExample(x, int(y))

    @property
    def width(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.y[idx])

    def concat(self, other: "Dataset") -> "Dataset":
        return Dataset(np.vstack([self.X, other.X]), np.concatenate([self.y, other.y]))

    def split(self, train_fraction: float = 0.8, seed: int = 0) -> tuple:
        """Shuffled train/validation split."""
        order = np.random.default_rng(seed).permutation(len(self))
        cut = int(round(train_fraction * len(self)))
        return self.subset(order[:cut]), self.subset(order[cut:])


def save_dataset_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(dataset.width)] + ["label"])
        for x, y in dataset:
            writer.writerow([repr(float(v)) for v in x] + [y])


def load_dataset_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path}: need a header row and at least one example")
    body = rows[1:]
    try:
        X = np.array([[float(v) for v in r[:-1]] for r in body])
        y = np.array([int(r[-1]) for r in body])
    except ValueError as exc:
        raise ValueError(f"{path}: malformed row ({exc})") from None
    return Dataset(X, y)


def save_model(model: ModelParams, path) -> None:
    arrays = {"format_version": np.array(MODEL_FORMAT_VERSION),
              "n_layers": np.array(len(model.weights))}
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"W{i}"] = w
        arrays[f"b{i}"] = b
    # np.savez stamps the wall clock into each zip entry; fix it so equal
    # models give equal bytes.
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=_ZIP_EPOCH), buf.getvalue())


def load_model(path) -> ModelParams:
    with np.load(Path(path), allow_pickle=False) as z:
        version = int(z["format_version"])
        if version != MODEL_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported model format version {version}")
        n = int(z["n_layers"])
        return ModelParams([z[f"W{i}"] for i in range(n)], [z[f"b{i}"] for i in range(n)])
