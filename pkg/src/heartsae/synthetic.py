"""Schema-faithful synthetic stand-in for the heart-failure table.

Used by the test-suite and for smoke runs when the public CSV is not on disk.
Marginals roughly follow the public data (918 rows, 508 positives); labels come
from a logistic model over the clinical risk factors, so classifiers have real
signal to find.  Numbers measured on this data say nothing about the real one.
"""

from __future__ import annotations

import numpy as np

from .data import (ANGINA_VOCAB, CHEST_PAIN_VOCAB, ECG_VOCAB, MAX_HR_RANGE, SEX_VOCAB, SLOPE_VOCAB,
                   RawDataset, RawRecord)


def _draw(rng, vocab, probs):
    return vocab[rng.choice(len(vocab), p=probs)]


def make_synthetic_dataset(n: int = 918, n_positive: int | None = 508, seed: int = 0) -> RawDataset:
    rng = np.random.default_rng(seed)
    if n_positive is None:
        n_positive = int(round(n * 508 / 918))
    labels = np.zeros(n, dtype=int)
    labels[rng.permutation(n)[:n_positive]] = 1
    records = []
    for y in labels:
        # a slice of rows draws its features from the other class so the task is not separable
        sick = bool(y) if rng.random() > 0.1 else not y
        age = int(np.clip(rng.normal(56 if sick else 50, 9), 28, 77))
        sex = _draw(rng, SEX_VOCAB, [0.1, 0.9] if sick else [0.35, 0.65])
        cp = _draw(rng, CHEST_PAIN_VOCAB, [0.05, 0.05, 0.15, 0.75] if sick else [0.06, 0.36, 0.35, 0.23])
        bp = int(np.clip(rng.normal(134 if sick else 130, 18), 80, 200))
        chol = 0 if rng.random() < (0.25 if sick else 0.03) else int(np.clip(rng.normal(250, 55), 85, 603))
        fbs = int(rng.random() < (0.33 if sick else 0.11))
        ecg = _draw(rng, ECG_VOCAB, [0.56, 0.23, 0.21] if sick else [0.65, 0.15, 0.20])
        hr = int(np.clip(rng.normal(127 if sick else 148, 22), *MAX_HR_RANGE))
        angina = _draw(rng, ANGINA_VOCAB, [0.38, 0.62] if sick else [0.87, 0.13])
        oldpeak = round(float(max(rng.normal(1.3 if sick else 0.4, 1.0), -2.6)), 1)
        slope = _draw(rng, SLOPE_VOCAB, [0.15, 0.75, 0.10] if sick else [0.78, 0.19, 0.03])
        records.append(RawRecord(age, sex, cp, bp, chol, fbs, ecg, hr, angina, oldpeak, slope, int(y)))
    return RawDataset(tuple(records), "<synthetic>")
