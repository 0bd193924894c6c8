"""Data preparation, model fitting and scoring shared by the CLI and tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .baselines import MetricsRecord, fit_linear, naive, rmse, seasonal_naive
from .data import DataError, MultimodalDataset, WindowedSamples, steps_per_day, window
from .model import HmdlfModel, ModelConfig, build_model
from .training import Scaler, TrainConfig, TrainReport, fit_scaler, predict, train

SHALLOW = ("naive", "seasonal", "lr", "ridge")


@dataclass
class Prepared:
    """Normalised training windows and raw/normalised test windows."""

    scaler: Scaler
    train: WindowedSamples
    test: WindowedSamples
    lookup: int


def split_indices(dataset: MultimodalDataset, train_range=None, test_range=None,
                  test_fraction: float = 0.2) -> tuple[tuple[int, int], tuple[int, int]]:
    """Record index ranges for training and testing.

    Explicit ``[start, end)`` timestamp ranges win; otherwise the last
    ``test_fraction`` of records is the test period.
    """
    n = len(dataset)
    if train_range is None and test_range is None:
        cut = int(round(n * (1.0 - test_fraction)))
        return (0, cut), (cut, n)
    tr = dataset.index_range(*train_range) if train_range else (0, dataset.index_range(*test_range)[0])
    te = dataset.index_range(*test_range) if test_range else (tr[1], n)
    if tr[1] <= tr[0] or te[1] <= te[0]:
        raise DataError(f"empty train {tr} or test {te} index range")
    return tr, te


def prepare(dataset: MultimodalDataset, modalities, lookup: int, train_range=None, test_range=None,
            test_fraction: float = 0.2, scaler: Scaler | None = None) -> Prepared:
    """Fit the scaler on the training records only, then window both periods.

    Test windows may reach back into the training period so the first test
    target is the first test record.
    """
    modalities = list(modalities)
    if "flow" not in modalities:
        modalities = ["flow", *modalities]
    data = dataset.select(modalities)
    (a, b), (c, d) = split_indices(data, train_range, test_range, test_fraction)
    if scaler is None:
        scaler = fit_scaler(data.slice(a, b))
    norm = scaler.transform(data)
    train_w = window(norm.slice(a, b), lookup, modalities)
    test_w = window(norm, lookup, modalities, target_start=c, target_stop=d)
    return Prepared(scaler, train_w, test_w, lookup)


def score(prep: Prepared, predictions_norm: np.ndarray, samples: WindowedSamples | None = None,
          tag: str = "", data_tag: str = "test") -> tuple[MetricsRecord, np.ndarray, np.ndarray]:
    """RMSE in original units; returns (record, actual, predicted)."""
    samples = samples if samples is not None else prep.test
    actual = prep.scaler.invert(samples.targets)
    pred = prep.scaler.invert(predictions_norm)
    return MetricsRecord(rmse(pred, actual), len(actual), tag, data_tag), actual, pred


def run_shallow(kind: str, prep: Prepared, ridge: float = 1.0, period: int = 96) -> MetricsRecord:
    if kind == "naive":
        return score(prep, naive(prep.test), tag=kind)[0]
    if kind == "seasonal":
        pred, kept, skipped = seasonal_naive(prep.test, period)
        if not kept.any():
            raise DataError(f"no test sample has {period} steps of history")
        rec = score(prep, pred, prep.test.subset(kept), tag=kind)[0]
        rec.data = f"test (skipped {skipped})" if skipped else "test"
        return rec
    if kind in ("lr", "ridge"):
        model = fit_linear(prep.train, 0.0 if kind == "lr" else ridge)
        return score(prep, model.predict_samples(prep.test), tag=kind)[0]
    raise ValueError(f"unknown shallow model {kind!r}")


def fit_network(model_cfg: ModelConfig, train_cfg: TrainConfig, prep: Prepared,
                log=None) -> tuple[HmdlfModel, TrainReport, MetricsRecord]:
    model = build_model(model_cfg)
    model, report = train(model, prep.train, train_cfg, log=log)
    model.scaler = prep.scaler.to_dict()
    record = score(prep, predict(model, prep.test), tag=model.config.kind)[0]
    report.metrics["test"] = record.as_dict()
    return model, report, record


def season_period(dataset: MultimodalDataset, days: int = 1) -> int:
    return days * steps_per_day(dataset.interval_minutes)
