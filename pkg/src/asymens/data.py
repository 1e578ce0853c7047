"""Dataset loading, preprocessing, splitting, and synthetic generators.

The pipeline mirrors a standard tabular setup: 64/16/20 train/val/test split
(stratified by label for classification), z-score feature scaling fitted on
the training split only, one-hot encoding for categorical columns with a
MissingValue category, and dataset-specific column handling. Loaders read
local files only; nothing is downloaded.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd

from .rng import Purpose, RngStream, SeedKey, bulk_standard_normal, derive_seed_grid


class Task(Enum):
    REGRESSION = "regression"
    CLASSIFICATION = "classification"


class DataError(ValueError):
    """Missing files, malformed rows, or impossible preprocessing requests."""


@dataclass
class TabularDataset:
    features: np.ndarray  # (n, d) float64
    targets: np.ndarray   # float64 values or int64 class indices
    task: Task
    class_count: int = 0
    name: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.task is Task.CLASSIFICATION:
            self.targets = np.asarray(self.targets, dtype=np.int64)
        else:
            self.targets = np.asarray(self.targets, dtype=np.float64)
        if np.isnan(self.features).any():
            raise DataError(f"{self.name or 'dataset'}: NaN left in features")
        if self.task is Task.REGRESSION and np.isnan(self.targets).any():
            raise DataError(f"{self.name or 'dataset'}: NaN left in targets")

    @property
    def n(self) -> int:
        return self.features.shape[0]


@dataclass
class SplitIndices:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


@dataclass
class SplitData:
    """Scaled arrays ready for training."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    task: Task
    class_count: int = 0


TRAIN_FRACTION = 0.64
VAL_FRACTION = 0.16


def split_sizes(n: int) -> tuple[int, int, int]:
    train = int(round(TRAIN_FRACTION * n))
    val = int(round(VAL_FRACTION * n))
    return train, val, n - train - val


def _apportion(counts: np.ndarray, totals: tuple[int, int, int]) -> np.ndarray:
    """Round the (class x split) quota matrix to integers.

    Row sums match the class counts exactly (largest remainder per class),
    then single-unit moves repair the column sums while keeping every entry
    within one sample of its real quota.
    """
    n = counts.sum()
    quotas = counts[:, None] * (np.asarray(totals, dtype=np.float64) / n)[None, :]
    alloc = np.floor(quotas).astype(np.int64)
    for c in range(len(counts)):
        short = counts[c] - alloc[c].sum()
        order = np.argsort(-(quotas[c] - alloc[c]), kind="stable")
        for s in order[:short]:
            alloc[c, s] += 1

    for _ in range(4 * len(counts) + 12):
        diff = alloc.sum(axis=0) - np.asarray(totals)
        if not diff.any():
            break
        over = int(np.argmax(diff))
        under = int(np.argmin(diff))
        moved = False
        for c in range(len(counts)):
            if alloc[c, over] > np.floor(quotas[c, over]) and alloc[c, under] < np.ceil(
                quotas[c, under]
            ):
                alloc[c, over] -= 1
                alloc[c, under] += 1
                moved = True
                break
        if not moved:
            # route through the third split: over -> mid, then mid -> under
            mid = 3 - over - under
            for c in range(len(counts)):
                if alloc[c, over] > np.floor(quotas[c, over]) and alloc[c, mid] < np.ceil(
                    quotas[c, mid]
                ):
                    alloc[c, over] -= 1
                    alloc[c, mid] += 1
                    moved = True
                    break
            if not moved:
                for c in range(len(counts)):
                    if alloc[c, mid] > np.floor(quotas[c, mid]) and alloc[
                        c, under
                    ] < np.ceil(quotas[c, under]):
                        alloc[c, mid] -= 1
                        alloc[c, under] += 1
                        moved = True
                        break
        if not moved:
            raise AssertionError("stratified apportionment failed to converge")
    if np.abs(alloc - quotas).max() > 1.0 + 1e-9:
        raise AssertionError("stratified apportionment left a quota deviation > 1")
    return alloc


def split(dataset: TabularDataset, seed: int) -> SplitIndices:
    """Deterministic 64/16/20 split; stratified by label for classification."""
    n = dataset.n
    if n < 10:
        raise DataError(f"need at least 10 rows to split, got {n}")
    n_train, n_val, n_test = split_sizes(n)
    stream = RngStream.from_key(SeedKey(Purpose.SPLIT, repetition=seed))

    if dataset.task is Task.REGRESSION:
        perm = stream.permutation(n)
        return SplitIndices(
            train=perm[:n_train],
            val=perm[n_train : n_train + n_val],
            test=perm[n_train + n_val :],
        )

    labels = dataset.targets
    classes, counts = np.unique(labels, return_counts=True)
    if counts.min() < 3:
        raise DataError("stratified split needs at least 3 samples per class")
    alloc = _apportion(counts, (n_train, n_val, n_test))
    parts: list[list[np.ndarray]] = [[], [], []]
    for ci, cls in enumerate(classes):
        idx = np.flatnonzero(labels == cls)
        idx = idx[stream.permutation(idx.size)]
        a, b = alloc[ci, 0], alloc[ci, 0] + alloc[ci, 1]
        parts[0].append(idx[:a])
        parts[1].append(idx[a:b])
        parts[2].append(idx[b:])
    return SplitIndices(
        train=np.concatenate(parts[0]),
        val=np.concatenate(parts[1]),
        test=np.concatenate(parts[2]),
    )


@dataclass
class FeatureScaler:
    """Per-column mean and population standard deviation from the train split."""

    mean: np.ndarray
    std: np.ndarray

    def transform(self, x: np.ndarray) -> np.ndarray:
        denom = np.where(self.std == 0.0, 1.0, self.std)
        return (np.asarray(x, dtype=np.float64) - self.mean) / denom


def fit_scaler(x_train: np.ndarray) -> FeatureScaler:
    x = np.asarray(x_train, dtype=np.float64)
    mean = x.mean(axis=0)
    std = np.sqrt(np.mean(np.square(x - mean), axis=0))
    return FeatureScaler(mean=mean, std=std)


def fit_transform_scaler(x_train: np.ndarray) -> tuple[FeatureScaler, np.ndarray]:
    scaler = fit_scaler(x_train)
    return scaler, scaler.transform(x_train)


MISSING_SENTINEL = "MissingValue"


@dataclass
class OneHotEncoder:
    """Per-column category lists fitted on training rows.

    Transform emits one column per (feature, category); categories never seen
    during fit map to an all-zero block.
    """

    categories: list[list[str]]

    @property
    def width(self) -> int:
        return sum(len(c) for c in self.categories)

    def transform(self, columns: list[np.ndarray]) -> np.ndarray:
        if len(columns) != len(self.categories):
            raise DataError("column count differs from fit")
        n = len(columns[0])
        out = np.zeros((n, self.width), dtype=np.float64)
        offset = 0
        for values, cats in zip(columns, self.categories):
            index = {c: i for i, c in enumerate(cats)}
            cleaned = _clean_categorical(values)
            for r, v in enumerate(cleaned):
                j = index.get(v)
                if j is not None:
                    out[r, offset + j] = 1.0
            offset += len(cats)
        return out


def _clean_categorical(values) -> list[str]:
    out = []
    for v in values:
        if v is None or (isinstance(v, float) and np.isnan(v)):
            out.append(MISSING_SENTINEL)
            continue
        s = str(v).strip()
        out.append(MISSING_SENTINEL if s in ("", "?", "nan") else s)
    return out


def fit_one_hot(columns: list[np.ndarray]) -> OneHotEncoder:
    """Enumerate sorted categories per column, after missing-value imputation."""
    categories = [sorted(set(_clean_categorical(col))) for col in columns]
    return OneHotEncoder(categories=categories)


def one_hot_encode(columns: list[np.ndarray]) -> tuple[OneHotEncoder, np.ndarray]:
    enc = fit_one_hot(columns)
    return enc, enc.transform(columns)


def make_split_data(dataset: TabularDataset, idx: SplitIndices) -> SplitData:
    """Materialize the splits with scaling fitted on the training rows only."""
    scaler, x_train = fit_transform_scaler(dataset.features[idx.train])
    return SplitData(
        x_train=x_train,
        y_train=dataset.targets[idx.train],
        x_val=scaler.transform(dataset.features[idx.val]),
        y_val=dataset.targets[idx.val],
        x_test=scaler.transform(dataset.features[idx.test]),
        y_test=dataset.targets[idx.test],
        task=dataset.task,
        class_count=dataset.class_count,
    )


# --- file loaders -----------------------------------------------------------


def _find_file(path: Path, candidates: list[str]) -> Path:
    if path.is_file():
        return path
    for name in candidates:
        p = path / name
        if p.is_file():
            return p
    raise DataError(f"no data file found under {path} (looked for {candidates})")


def _read_csv(path: Path) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except Exception as exc:  # malformed rows, encoding problems
        raise DataError(f"failed to parse {path}: {exc}") from exc


def _numeric_and_categorical(df: pd.DataFrame):
    numeric = [c for c in df.columns if pd.api.types.is_numeric_dtype(df[c])]
    categorical = [c for c in df.columns if c not in numeric]
    return numeric, categorical


def _assemble_features(df: pd.DataFrame, fill_numeric_na: bool) -> np.ndarray:
    numeric, categorical = _numeric_and_categorical(df)
    blocks = []
    if numeric:
        num = df[numeric].to_numpy(dtype=np.float64)
        if fill_numeric_na:
            num = np.nan_to_num(num, nan=0.0)
        blocks.append(num)
    if categorical:
        cols = [df[c].to_numpy() for c in categorical]
        _, block = one_hot_encode(cols)
        blocks.append(block)
    return np.hstack(blocks)


def _load_california(path: Path) -> TabularDataset:
    df = _read_csv(_find_file(path, ["california.csv", "housing.csv"]))
    target_col = "MedHouseVal" if "MedHouseVal" in df.columns else df.columns[-1]
    y = df.pop(target_col).to_numpy(dtype=np.float64)
    return TabularDataset(_assemble_features(df, False), y, Task.REGRESSION, name="california")


def _load_churn(path: Path) -> TabularDataset:
    df = _read_csv(_find_file(path, ["churn.csv", "Churn_Modelling.csv"]))
    df = df.drop(columns=[c for c in ("RowNumber", "CustomerId", "Surname") if c in df.columns])
    y = df.pop("Exited").to_numpy(dtype=np.int64)
    return TabularDataset(_assemble_features(df, False), y, Task.CLASSIFICATION, 2, name="churn")


def _load_otto(path: Path) -> TabularDataset:
    df = _read_csv(_find_file(path, ["otto.csv", "train.csv"]))
    if "id" in df.columns:
        df = df.drop(columns=["id"])
    raw = df.pop("target").astype(str)
    classes = sorted(raw.unique())
    mapping = {c: i for i, c in enumerate(classes)}
    y = raw.map(mapping).to_numpy(dtype=np.int64)
    return TabularDataset(
        _assemble_features(df, False), y, Task.CLASSIFICATION, len(classes), name="otto"
    )


def _load_adult(path: Path) -> TabularDataset:
    df = _read_csv(_find_file(path, ["adult.csv"]))
    raw = df.pop("income").astype(str).str.strip().str.rstrip(".")
    y = np.where(raw.to_numpy() == ">50K", 1, 0).astype(np.int64)
    df = df.replace("?", np.nan)
    return TabularDataset(_assemble_features(df, True), y, Task.CLASSIFICATION, 2, name="adult")


def _read_idx(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = struct.unpack(">HBB", fh.read(4))
        if magic[0] != 0 or magic[1] != 0x08:
            raise DataError(f"{path}: not an unsigned-byte idx file")
        ndim = magic[2]
        dims = struct.unpack(f">{ndim}I", fh.read(4 * ndim))
        data = np.frombuffer(fh.read(), dtype=np.uint8)
        if data.size != int(np.prod(dims)):
            raise DataError(f"{path}: truncated idx payload")
        return data.reshape(dims)


def _load_mnist(path: Path) -> TabularDataset:
    csv = path / "mnist.csv" if path.is_dir() else path
    if csv.is_file() and csv.suffix == ".csv":
        df = _read_csv(csv)
        y = df.pop(df.columns[0]).to_numpy(dtype=np.int64)
        pixels = df.to_numpy(dtype=np.float64)
    else:
        images, labels = [], []
        for img_name, lbl_name in [
            ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        ]:
            img_path, lbl_path = path / img_name, path / lbl_name
            if img_path.is_file() and lbl_path.is_file():
                images.append(_read_idx(img_path))
                labels.append(_read_idx(lbl_path))
        if not images:
            raise DataError(f"no mnist idx or csv files under {path}")
        pixels = np.concatenate(images).reshape(-1, 28 * 28).astype(np.float64)
        y = np.concatenate(labels).astype(np.int64)
    # map to [0, 1]; centering happens in the shared scaling path
    return TabularDataset(pixels / 255.0, y, Task.CLASSIFICATION, 10, name="mnist")


_LOADERS = {
    "california": _load_california,
    "churn": _load_churn,
    "otto": _load_otto,
    "adult": _load_adult,
    "mnist": _load_mnist,
}


def load_dataset(name: str, path: str | Path) -> TabularDataset:
    """Load one of the known datasets from local files under path."""
    loader = _LOADERS.get(name)
    if loader is None:
        raise DataError(f"unknown dataset {name!r}; known: {sorted(_LOADERS)}")
    path = Path(path)
    if path.is_dir() and (path / name).is_dir():
        path = path / name
    if not path.exists():
        raise DataError(f"dataset path {path} does not exist")
    return loader(path)


# --- synthetic datasets ------------------------------------------------------


def synth_dataset(
    task: Task,
    n: int,
    d: int,
    seed: int,
    noise: float = 0.01,
    classes: int = 3,
    separation: float = 4.0,
) -> TabularDataset:
    """Deterministic synthetic data keyed by seed.

    Regression: y = w.x + 0.1 sin(3 u.x) + noise * eps, standard normal
    features. Classification: class c centered at separation * e_c with unit
    isotropic noise, labels assigned round-robin.
    """
    if n < 1 or d < 1:
        raise DataError("n and d must be positive")
    rows = np.arange(n)[:, None]
    cols = np.arange(d)[None, :]
    x = bulk_standard_normal(derive_seed_grid(Purpose.SYNTH, seed, 0, 1, rows, cols))

    if task is Task.REGRESSION:
        coeff_stream = RngStream.from_key(SeedKey(Purpose.SYNTH, repetition=seed, layer=2))
        w = coeff_stream.uniform_block(d, -2.0, 2.0)
        u_stream = RngStream.from_key(SeedKey(Purpose.SYNTH, repetition=seed, layer=3))
        u = np.array([u_stream.standard_normal() for _ in range(d)])
        u /= np.linalg.norm(u)
        eps = bulk_standard_normal(
            derive_seed_grid(Purpose.SYNTH, seed, 0, 4, np.arange(n), np.zeros(n, dtype=np.int64))
        )
        y = x @ w + 0.1 * np.sin(3.0 * (x @ u)) + noise * eps
        return TabularDataset(x, y, Task.REGRESSION, name=f"synthetic-regression-{seed}")

    if classes > d:
        raise DataError(f"need d >= classes to place {classes} blob centers in {d} dims")
    labels = np.arange(n, dtype=np.int64) % classes
    centers = np.zeros((classes, d))
    centers[np.arange(classes), np.arange(classes)] = separation
    features = x + centers[labels]
    return TabularDataset(
        features, labels, Task.CLASSIFICATION, classes, name=f"synthetic-classification-{seed}"
    )
