"""Window features, SSO-labeled datasets, chronological splits and scaling."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from flexgrid.errors import DataError, FlexgridError
from flexgrid.grid_model import GridKind, GridSpec
from flexgrid.market_data import PriceSeries, slice_window, window_starts
from flexgrid.sso import SsoConfig, optimize

logger = logging.getLogger(__name__)

FEATURE_NAMES = (
    "high",
    "low",
    "mean_price",
    "mean_quantity",
    "price_change",
    "quantity_change",
    "price_std",
    "quantity_std",
)
TARGET_NAMES = ("gul", "gll", "nu", "nl")
CSV_HEADER = ("window_start", "f1", "f2", "f3", "f4", "f5", "f6", "f7", "f8", "gul", "gll", "nu", "nl", "p0", "fitness")


@dataclass(frozen=True)
class MarketFeatures:
    high: float
    low: float
    mean_price: float
    mean_quantity: float
    price_change: float  # first minus last
    quantity_change: float  # first minus last
    price_std: float
    quantity_std: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in FEATURE_NAMES], dtype=np.float64)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "MarketFeatures":
        return cls(*(float(v) for v in values))


def extract_features(window: PriceSeries) -> MarketFeatures:
    """Eight-value summary of a window; changes are initial minus final, std is population form."""
    if len(window) < 2:
        raise DataError("feature window needs at least two periods")
    p, q = window.prices, window.quantities
    return MarketFeatures(
        high=float(p.max()),
        low=float(p.min()),
        mean_price=float(p.mean()),
        mean_quantity=float(q.mean()),
        price_change=float(p[0] - p[-1]),
        quantity_change=float(q[0] - q[-1]),
        price_std=float(p.std()),
        quantity_std=float(q.std()),
    )


@dataclass(frozen=True)
class LabeledSample:
    window_start: int
    features: MarketFeatures
    label: tuple  # (gul, gll, nu, nl)
    anchor: float  # P_0 of the label window
    fitness: float
    label_start: Optional[int] = None

    def spec(self) -> GridSpec:
        ul, ll, nu, nl = self.label
        return GridSpec(GridKind.FLEXIBLE, ul, ll, int(nu), int(nl), self.anchor)


@dataclass
class Dataset:
    samples: list
    meta: dict = field(default_factory=dict)
    stats: Optional["Normalizer"] = None

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def X(self) -> np.ndarray:
        return np.array([s.features.as_array() for s in self.samples]).reshape(len(self.samples), len(FEATURE_NAMES))

    @property
    def Y(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.float64).reshape(len(self.samples), len(TARGET_NAMES))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for s in self.samples:
            ul, ll, nu, nl = s.label
            w.writerow(
                [s.window_start, *(repr(float(v)) for v in s.features.as_array()), repr(ul), repr(ll), int(nu), int(nl), repr(s.anchor), repr(s.fitness)]
            )
        return buf.getvalue()

    def sidecar(self) -> dict:
        out = dict(self.meta)
        out["stats"] = None if self.stats is None else self.stats.to_dict()
        return out

    @classmethod
    def from_csv(cls, text: str, sidecar: Optional[dict] = None) -> "Dataset":
        reader = csv.reader(io.StringIO(text))
        header = tuple(h.strip() for h in next(reader))
        if header != CSV_HEADER:
            raise DataError(f"unexpected dataset header {header}")
        meta = dict(sidecar or {})
        offset = int(meta.get("label_offset", 0))
        samples = []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                start = int(row[0])
                feats = MarketFeatures.from_array([float(v) for v in row[1:9]])
                label = (float(row[9]), float(row[10]), int(row[11]), int(row[12]))
                samples.append(LabeledSample(start, feats, label, float(row[13]), float(row[14]), start + offset))
            except (ValueError, IndexError):
                raise DataError(f"line {line}: malformed dataset row") from None
        stats = meta.pop("stats", None)
        return cls(samples, meta, None if stats is None else Normalizer.from_dict(stats))


def build_dataset(
    series: PriceSeries,
    window: int = 30,
    stride: int = 5,
    config: SsoConfig = SsoConfig(),
    capital: float = 10000.0,
    fee: float = 0.0,
    pairing: str = "same",
    progress=None,
) -> Dataset:
    """Label every window with its SSO-optimal flexible grid.

    ``pairing="same"`` pairs a window's features with the parameters optimal
    for that same window. ``pairing="next"`` pairs them with the parameters
    optimal for the window that starts right after it (no look-ahead), which
    drops trailing windows without a successor. Each window's SSO seed is
    ``config.seed + window_start`` so labels do not depend on which other
    windows are built. Windows whose search region is infeasible are skipped
    and listed in ``meta["skipped"]``.
    """
    if pairing not in ("same", "next"):
        raise ValueError("pairing must be 'same' or 'next'")
    if len(series) < window:
        raise DataError(f"series of length {len(series)} shorter than window {window}")
    offset = 0 if pairing == "same" else window
    starts = [s for s in window_starts(len(series), window, stride) if s + offset + window <= len(series)]
    samples, skipped = [], []
    for n_done, start in enumerate(starts):
        feats = extract_features(slice_window(series, start, window))
        label_window = slice_window(series, start + offset, window)
        try:
            result = optimize(label_window, capital, fee, replace(config, seed=config.seed + start + offset))
        except FlexgridError as exc:
            logger.warning("window %d skipped: %s", start, exc)
            skipped.append(start)
            continue
        b = result.best
        samples.append(LabeledSample(start, feats, (b.upper, b.lower, b.n_upper, b.n_lower), result.anchor, b.fitness, start + offset))
        if progress is not None:
            progress(n_done + 1, len(starts))
    meta = {
        "series_id": series.id,
        "series_length": len(series),
        "window": window,
        "stride": stride,
        "pairing": pairing,
        "label_offset": offset,
        "capital": capital,
        "fee": fee,
        "sso": config.to_dict(),
        "skipped": skipped,
        "target_mode": "raw",
    }
    return Dataset(samples, meta)


def expected_sample_count(n_points: int, window: int, stride: int) -> int:
    return (n_points - window) // stride + 1 if n_points >= window else 0


def split_dataset(dataset: Dataset, boundary: Union[int, float]) -> tuple[Dataset, Dataset]:
    """Chronological split: samples before ``boundary`` train, the rest validate.

    ``boundary`` is a sample index (int) or a fraction of the dataset (float
    in (0, 1)). Order is preserved; no shuffling happens here.
    """
    n = len(dataset)
    if isinstance(boundary, float):
        if not 0.0 < boundary < 1.0:
            raise DataError("fractional boundary must lie in (0, 1)")
        cut = math.floor(boundary * n + 1e-9)
    else:
        cut = int(boundary)
    if cut <= 0:
        raise DataError("boundary leaves the training partition empty")
    if cut >= n:
        raise DataError("boundary leaves the validation partition empty")
    train = Dataset(dataset.samples[:cut], dict(dataset.meta), dataset.stats)
    valid = Dataset(dataset.samples[cut:], dict(dataset.meta), dataset.stats)
    return train, valid


@dataclass(frozen=True)
class Normalizer:
    """Per-column z-score statistics (population std, zero spread clamped to 1)."""

    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: np.ndarray
    y_scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray, Y: np.ndarray, *, normalize_targets: bool = True) -> "Normalizer":
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        if len(X) == 0:
            raise DataError("cannot fit normalization on an empty training set")
        x_mean, x_scale = X.mean(axis=0), _scale(X, "feature")
        if normalize_targets:
            y_mean, y_scale = Y.mean(axis=0), _scale(Y, "target")
        else:
            y_mean, y_scale = np.zeros(Y.shape[1]), np.ones(Y.shape[1])
        return cls(x_mean, x_scale, y_mean, y_scale)

    @property
    def targets_raw(self) -> bool:
        return bool(np.all(self.y_mean == 0) and np.all(self.y_scale == 1))

    def transform_x(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.x_mean) / self.x_scale

    def transform_y(self, Y) -> np.ndarray:
        return (np.asarray(Y, dtype=np.float64) - self.y_mean) / self.y_scale

    def inverse_x(self, Xn) -> np.ndarray:
        return np.asarray(Xn, dtype=np.float64) * self.x_scale + self.x_mean

    def inverse_y(self, Yn) -> np.ndarray:
        return np.asarray(Yn, dtype=np.float64) * self.y_scale + self.y_mean

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("x_mean", "x_scale", "y_mean", "y_scale")}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(*(np.array(d[k], dtype=np.float64) for k in ("x_mean", "x_scale", "y_mean", "y_scale")))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _scale(M: np.ndarray, what: str) -> np.ndarray:
    scale = M.std(axis=0)
    flat = scale == 0
    if flat.any():
        logger.warning("zero-variance %s column(s) %s; scale clamped to 1", what, np.flatnonzero(flat).tolist())
        scale = np.where(flat, 1.0, scale)
    return scale


def normalize(train: Dataset, validation: Dataset, normalize_targets: bool = True):
    """Fit z-score stats on ``train`` and apply them to both partitions.

    Returns ``(train_X, train_Y, valid_X, valid_Y, stats)`` as arrays in
    normalized units.
    """
    stats = Normalizer.fit(train.X, train.Y, normalize_targets=normalize_targets)
    return (
        stats.transform_x(train.X),
        stats.transform_y(train.Y),
        stats.transform_x(validation.X),
        stats.transform_y(validation.Y),
        stats,
    )
