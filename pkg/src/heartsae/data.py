"""Ingestion and feature engineering for the heart-failure clinical table.

The raw file has 11 clinical columns plus the ``HeartDisease`` label.  The
engineered matrix has 24 columns in a fixed order (``COLUMN_NAMES``):

    age_young age_adult age_elder            binned age
    bp_low bp_medium bp_high                 binned resting blood pressure
    chol_low chol_medium chol_high           binned serum cholesterol
    cp_TA cp_ATA cp_NAP cp_ASY               chest pain type, one-hot
    ecg_Normal ecg_ST ecg_LVH                resting ECG, one-hot
    slope_Up slope_Flat slope_Down           ST slope, one-hot
    sex                                      F=0, M=1
    exercise_angina                          N=0, Y=1
    fasting_bs                               0/1 as recorded
    max_hr oldpeak                           min-max scaled (training rows only)
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

RAW_COLUMNS = (
    "Age", "Sex", "ChestPainType", "RestingBP", "Cholesterol", "FastingBS",
    "RestingECG", "MaxHR", "ExerciseAngina", "Oldpeak", "ST_Slope", "HeartDisease",
)

SEX_VOCAB = ("F", "M")
ANGINA_VOCAB = ("N", "Y")
CHEST_PAIN_VOCAB = ("TA", "ATA", "NAP", "ASY")
ECG_VOCAB = ("Normal", "ST", "LVH")
SLOPE_VOCAB = ("Up", "Flat", "Down")

MAX_HR_RANGE = (60, 202)

COLUMN_NAMES = (
    "age_young", "age_adult", "age_elder",
    "bp_low", "bp_medium", "bp_high",
    "chol_low", "chol_medium", "chol_high",
    *(f"cp_{c}" for c in CHEST_PAIN_VOCAB),
    *(f"ecg_{c}" for c in ECG_VOCAB),
    *(f"slope_{c}" for c in SLOPE_VOCAB),
    "sex", "exercise_angina", "fasting_bs", "max_hr", "oldpeak",
)
N_FEATURES = len(COLUMN_NAMES)

# (start, stop) column slices of every group whose row sum must be exactly 1
ONE_HOT_GROUPS = ((0, 3), (3, 6), (6, 9), (9, 13), (13, 16), (16, 19))
SCALED_COLUMNS = (COLUMN_NAMES.index("max_hr"), COLUMN_NAMES.index("oldpeak"))


class DataValidationError(ValueError):
    """Raised for malformed input files or records."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class RawRecord:
    age: int
    sex: str
    chest_pain_type: str
    resting_bp: int
    cholesterol: int
    fasting_bs: int
    resting_ecg: str
    max_hr: int
    exercise_angina: str
    oldpeak: float
    st_slope: str
    heart_disease: int

    def __post_init__(self):
        for name, value, vocab in (
            ("Sex", self.sex, SEX_VOCAB),
            ("ChestPainType", self.chest_pain_type, CHEST_PAIN_VOCAB),
            ("RestingECG", self.resting_ecg, ECG_VOCAB),
            ("ExerciseAngina", self.exercise_angina, ANGINA_VOCAB),
            ("ST_Slope", self.st_slope, SLOPE_VOCAB),
        ):
            if value not in vocab:
                raise DataValidationError(f"{name} value {value!r} not in {vocab}")
        if self.fasting_bs not in (0, 1):
            raise DataValidationError(f"FastingBS must be 0 or 1, got {self.fasting_bs!r}")
        if self.heart_disease not in (0, 1):
            raise DataValidationError(f"HeartDisease must be 0 or 1, got {self.heart_disease!r}")
        lo, hi = MAX_HR_RANGE
        if not lo <= self.max_hr <= hi:
            raise DataValidationError(f"MaxHR {self.max_hr} outside [{lo}, {hi}]")
        if not np.isfinite(self.oldpeak):
            raise DataValidationError("Oldpeak is not finite")

    def to_row(self) -> list[str]:
        return [
            str(self.age), self.sex, self.chest_pain_type, str(self.resting_bp),
            str(self.cholesterol), str(self.fasting_bs), self.resting_ecg,
            str(self.max_hr), self.exercise_angina, repr(float(self.oldpeak)),
            self.st_slope, str(self.heart_disease),
        ]


@dataclass(frozen=True)
class RawDataset:
    records: tuple[RawRecord, ...]
    source_path: str = ""

    def __len__(self):
        return len(self.records)

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.heart_disease for r in self.records], dtype=np.int64)


def _parse_int(token: str, column: str) -> int:
    value = float(token)
    if value != int(value):
        raise ValueError(f"{column} must be an integer, got {token!r}")
    return int(value)


def _parse_row(row: Sequence[str], index: int) -> RawRecord:
    if len(row) != len(RAW_COLUMNS):
        raise DataValidationError(f"expected {len(RAW_COLUMNS)} fields, got {len(row)}", index)
    row = [t.strip() for t in row]
    try:
        return RawRecord(
            age=_parse_int(row[0], "Age"),
            sex=row[1],
            chest_pain_type=row[2],
            resting_bp=_parse_int(row[3], "RestingBP"),
            cholesterol=_parse_int(row[4], "Cholesterol"),
            fasting_bs=_parse_int(row[5], "FastingBS"),
            resting_ecg=row[6],
            max_hr=_parse_int(row[7], "MaxHR"),
            exercise_angina=row[8],
            oldpeak=float(row[9]),
            st_slope=row[10],
            heart_disease=_parse_int(row[11], "HeartDisease"),
        )
    except DataValidationError as exc:
        raise DataValidationError(str(exc), index) from None
    except ValueError as exc:
        raise DataValidationError(str(exc), index) from None


def load_raw_dataset(path: str | Path) -> RawDataset:
    """Read and validate the raw CSV.

    Row indices in error messages count data rows from 0 (the header is not
    counted).
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataValidationError(f"{path} is empty")
        header = [h.strip().lstrip("﻿") for h in header]
        if tuple(header) != RAW_COLUMNS:
            raise DataValidationError(f"header mismatch: expected {','.join(RAW_COLUMNS)}, got {','.join(header)}")
        records = tuple(_parse_row(row, i) for i, row in enumerate(reader) if row)
    if not records:
        raise DataValidationError(f"{path} has a header but no data rows")
    return RawDataset(records, str(path))


def write_raw_dataset(dataset: RawDataset, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RAW_COLUMNS)
        for rec in dataset.records:
            writer.writerow(rec.to_row())


@dataclass(frozen=True)
class BinningSpec:
    """Two ascending cut points per binned feature; bins are (low, medium, high)."""

    age: tuple[float, float] = (40.0, 60.0)
    resting_bp: tuple[float, float] = (120.0, 140.0)
    cholesterol: tuple[float, float] = (200.0, 240.0)

    def __post_init__(self):
        for name in ("age", "resting_bp", "cholesterol"):
            t1, t2 = getattr(self, name)
            if not t1 < t2:
                raise ValueError(f"{name} thresholds must be strictly ascending, got {(t1, t2)}")


DEFAULT_BINNING = BinningSpec()


def bin_numeric(value: float, thresholds: tuple[float, float]) -> tuple[int, int, int]:
    t1, t2 = thresholds
    if value < t1:
        return (1, 0, 0)
    if value < t2:
        return (0, 1, 0)
    return (0, 0, 1)


def one_hot(category: str, vocabulary: Sequence[str]) -> tuple[int, ...]:
    if category not in vocabulary:
        raise DataValidationError(f"unknown category {category!r}; expected one of {tuple(vocabulary)}")
    return tuple(int(token == category) for token in vocabulary)


def label_encode(category: str, vocabulary: Sequence[str]) -> int:
    if len(vocabulary) != 2:
        raise ValueError("label_encode expects a two-token vocabulary")
    if category not in vocabulary:
        raise DataValidationError(f"unknown category {category!r}; expected one of {tuple(vocabulary)}")
    return vocabulary.index(category)


@dataclass
class MinMaxScaler:
    """Per-column min-max scaler over a fixed set of column indices.

    ``fitted_rows`` records how many rows the parameters came from; the
    cross-validation harness uses it to check for leakage.
    """

    columns: tuple[int, ...] = SCALED_COLUMNS
    min_: np.ndarray | None = None
    max_: np.ndarray | None = None
    fitted_rows: int = 0

    def fit(self, values: np.ndarray) -> "MinMaxScaler":
        sub = values[:, self.columns]
        self.min_ = sub.min(axis=0)
        self.max_ = sub.max(axis=0)
        self.fitted_rows = len(values)
        return self

    def transform(self, values: np.ndarray) -> np.ndarray:
        if self.min_ is None:
            raise RuntimeError("scaler is not fitted")
        out = np.array(values, dtype=np.float64, copy=True)
        span = self.max_ - self.min_
        span = np.where(span > 0, span, 1.0)
        out[:, self.columns] = (out[:, self.columns] - self.min_) / span
        return out

    def fit_transform(self, values: np.ndarray) -> np.ndarray:
        return self.fit(values).transform(values)

    def to_dict(self) -> dict:
        return {
            "columns": list(self.columns),
            "min": None if self.min_ is None else self.min_.tolist(),
            "max": None if self.max_ is None else self.max_.tolist(),
            "fitted_rows": self.fitted_rows,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MinMaxScaler":
        return cls(
            columns=tuple(d["columns"]),
            min_=None if d["min"] is None else np.asarray(d["min"], dtype=np.float64),
            max_=None if d["max"] is None else np.asarray(d["max"], dtype=np.float64),
            fitted_rows=d.get("fitted_rows", 0),
        )


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    labels: np.ndarray
    column_names: tuple[str, ...] = COLUMN_NAMES
    scaler: MinMaxScaler | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != len(self.column_names):
            raise DataValidationError(
                f"feature matrix must have {len(self.column_names)} columns, got shape {self.values.shape}")
        if len(self.labels) != len(self.values):
            raise DataValidationError("labels and values have different row counts")

    def __len__(self):
        return len(self.values)

    @property
    def n_rows(self) -> int:
        return len(self.values)

    def subset(self, rows) -> "FeatureMatrix":
        return FeatureMatrix(self.values[rows], self.labels[rows], self.column_names, self.scaler)

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([*self.column_names, "label"])
            for row, label in zip(self.values, self.labels):
                writer.writerow([repr(float(v)) for v in row] + [int(label)])


def encode_record(rec: RawRecord, spec: BinningSpec = DEFAULT_BINNING) -> list[float]:
    """Encode one record; max_hr and oldpeak are left unscaled."""
    return [
        *bin_numeric(rec.age, spec.age),
        *bin_numeric(rec.resting_bp, spec.resting_bp),
        *bin_numeric(rec.cholesterol, spec.cholesterol),
        *one_hot(rec.chest_pain_type, CHEST_PAIN_VOCAB),
        *one_hot(rec.resting_ecg, ECG_VOCAB),
        *one_hot(rec.st_slope, SLOPE_VOCAB),
        label_encode(rec.sex, SEX_VOCAB),
        label_encode(rec.exercise_angina, ANGINA_VOCAB),
        rec.fasting_bs,
        rec.max_hr,
        rec.oldpeak,
    ]


def encode(raw: RawDataset, spec: BinningSpec = DEFAULT_BINNING) -> FeatureMatrix:
    """Build the 24-column matrix without scaling the numeric columns.

    Cross-validation starts from this matrix and fits a scaler per fold.
    """
    zero_chol = sum(1 for r in raw.records if r.cholesterol == 0)
    if zero_chol:
        log.warning("%d records have Cholesterol == 0; binned as 'low'", zero_chol)
    values = np.array([encode_record(r, spec) for r in raw.records], dtype=np.float64)
    values = values.reshape(len(raw.records), N_FEATURES)
    return FeatureMatrix(values, raw.labels)


def preprocess(raw: RawDataset, spec: BinningSpec = DEFAULT_BINNING,
               scaler: MinMaxScaler | None = None) -> FeatureMatrix:
    """Encode ``raw`` and min-max scale max_hr/oldpeak.

    With no ``scaler`` the rows of ``raw`` are treated as the training split
    and a new scaler is fitted on them.  Pass a fitted scaler to transform
    held-out rows; their scaled values may fall outside [0, 1].
    """
    encoded = encode(raw, spec)
    if scaler is None:
        scaler = MinMaxScaler().fit(encoded.values)
    return FeatureMatrix(scaler.transform(encoded.values), encoded.labels, scaler=scaler)


def data_quality_report(raw: RawDataset) -> dict:
    labels = raw.labels
    return {
        "rows": len(raw),
        "negatives": int((labels == 0).sum()),
        "positives": int((labels == 1).sum()),
        "zero_cholesterol": sum(1 for r in raw.records if r.cholesterol == 0),
        "zero_resting_bp": sum(1 for r in raw.records if r.resting_bp == 0),
    }
