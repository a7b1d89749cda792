"""Price series ingestion, synthetic generation and windowing."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from datetime import date
from typing import Iterable, Sequence, Union

import numpy as np

from flexgrid._rng import MAX_SEED, make_rng
from flexgrid.errors import DataError

logger = logging.getLogger(__name__)

Timestamp = Union[date, int]

SYNTH_KINDS = ("random-walk", "mean-reverting", "trend", "sinusoid-plus-noise")


@dataclass(frozen=True)
class PricePoint:
    timestamp: Timestamp
    price: float
    quantity: float = 0.0

    def __post_init__(self):
        if not self.price > 0:
            raise DataError(f"price must be positive, got {self.price}")
        if not self.quantity >= 0:
            raise DataError(f"quantity must be non-negative, got {self.quantity}")


@dataclass(frozen=True, eq=False)
class PriceSeries:
    """Ordered close prices and traded quantities, one per period.

    Prices and quantities are stored as read-only float64 arrays; timestamps
    are a tuple of dates or integer period indices and must strictly increase.
    """

    timestamps: tuple
    prices: np.ndarray
    quantities: np.ndarray
    id: str = "series"

    def __post_init__(self):
        prices = np.array(self.prices, dtype=np.float64)
        quantities = np.array(self.quantities, dtype=np.float64)
        timestamps = tuple(self.timestamps)
        if not (len(timestamps) == len(prices) == len(quantities)):
            raise DataError("timestamps, prices and quantities differ in length")
        if len(prices) == 0:
            raise DataError("series is empty")
        bad = np.flatnonzero(~(prices > 0))
        if bad.size:
            raise DataError(f"non-positive price at index {bad[0]}")
        bad = np.flatnonzero(~(quantities >= 0))
        if bad.size:
            raise DataError(f"negative quantity at index {bad[0]}")
        for i in range(1, len(timestamps)):
            if not timestamps[i] > timestamps[i - 1]:
                raise DataError(f"timestamps not strictly increasing at index {i}")
        prices.flags.writeable = False
        quantities.flags.writeable = False
        object.__setattr__(self, "timestamps", timestamps)
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "quantities", quantities)

    @classmethod
    def from_points(cls, points: Iterable[PricePoint], id: str = "series") -> "PriceSeries":
        points = list(points)
        return cls(
            timestamps=tuple(p.timestamp for p in points),
            prices=np.array([p.price for p in points], dtype=np.float64),
            quantities=np.array([p.quantity for p in points], dtype=np.float64),
            id=id,
        )

    @property
    def points(self) -> list[PricePoint]:
        return [PricePoint(t, float(p), float(q)) for t, p, q in zip(self.timestamps, self.prices, self.quantities)]

    def __len__(self) -> int:
        return len(self.prices)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PriceSeries):
            return NotImplemented
        return (
            self.timestamps == other.timestamps
            and np.array_equal(self.prices, other.prices)
            and np.array_equal(self.quantities, other.quantities)
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["date", "close", "volume"])
        for t, p, q in zip(self.timestamps, self.prices, self.quantities):
            stamp = t.isoformat() if isinstance(t, date) else str(t)
            writer.writerow([stamp, repr(float(p)), repr(float(q))])
        return buf.getvalue()


def _parse_timestamp(raw: str, line: int) -> Timestamp:
    raw = raw.strip()
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return date.fromisoformat(raw[:10])
    except ValueError:
        raise DataError(f"line {line}: unparseable date {raw!r}") from None


def parse_csv_series(text: str, id: str = "series") -> PriceSeries:
    """Parse a ``date,close[,volume]`` CSV document into a series.

    Extra columns are ignored. A missing ``volume`` column yields zero
    quantities (and a warning), which makes the quantity features degenerate.

    Raises:
        DataError: on a missing header column, a malformed row, a
            non-positive close or dates that do not strictly increase. The
            message names the offending line (1-based, header is line 1).
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip().lower() for h in next(reader)]
    except StopIteration:
        raise DataError("empty CSV document") from None
    for required in ("date", "close"):
        if required not in header:
            raise DataError(f"CSV header lacks a {required!r} column")
    i_date = header.index("date")
    i_close = header.index("close")
    i_vol = header.index("volume") if "volume" in header else None
    if i_vol is None:
        logger.warning("CSV has no volume column; quantities default to 0")

    timestamps, prices, quantities = [], [], []
    for line, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) < len(header):
            raise DataError(f"line {line}: expected {len(header)} fields, got {len(row)}")
        stamp = _parse_timestamp(row[i_date], line)
        try:
            close = float(row[i_close])
            volume = float(row[i_vol]) if i_vol is not None and row[i_vol].strip() else 0.0
        except ValueError:
            raise DataError(f"line {line}: non-numeric close or volume") from None
        if not close > 0 or not math.isfinite(close):
            raise DataError(f"line {line}: close must be positive, got {row[i_close]!r}")
        if not volume >= 0:
            raise DataError(f"line {line}: volume must be non-negative, got {row[i_vol]!r}")
        if timestamps:
            if type(stamp) is not type(timestamps[-1]):
                raise DataError(f"line {line}: mixed integer and calendar dates")
            if not stamp > timestamps[-1]:
                raise DataError(f"line {line}: date {row[i_date].strip()!r} does not follow the previous row")
        timestamps.append(stamp)
        prices.append(close)
        quantities.append(volume)
    if not prices:
        raise DataError("CSV contains no data rows")
    return PriceSeries(tuple(timestamps), np.array(prices), np.array(quantities), id=id)


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of a synthetic price path.

    ``drift`` is the per-period drift for ``random-walk`` (log drift) and
    ``trend`` (simple compounding rate); for ``mean-reverting`` it is the
    reversion speed in (0, 1]. ``amplitude`` and ``period`` only apply to
    ``sinusoid-plus-noise``.
    """

    kind: str = "random-walk"
    length: int = 252
    start_price: float = 100.0
    volatility: float = 0.01
    drift: float = 0.0
    seed: int = 0
    amplitude: float = 0.1
    period: float = 60.0
    volume_mean: float = 1000.0
    volume_dispersion: float = 0.25

    def validate(self) -> None:
        if self.kind not in SYNTH_KINDS:
            raise DataError(f"unknown synthetic kind {self.kind!r}; expected one of {SYNTH_KINDS}")
        if int(self.length) != self.length or self.length < 2:
            raise DataError("length must be an integer >= 2")
        if not self.start_price > 0:
            raise DataError("start price must be positive")
        if not self.volatility >= 0:
            raise DataError("volatility must be non-negative")
        if not 0 <= self.seed <= MAX_SEED:
            raise DataError("seed must be a 64-bit unsigned integer")
        if self.kind == "trend" and not self.drift > -1:
            raise DataError("trend drift must exceed -100% per period")
        if self.kind == "mean-reverting" and not 0 < self.drift <= 1:
            raise DataError("mean-reverting drift (reversion speed) must lie in (0, 1]")
        if self.kind == "sinusoid-plus-noise":
            if not 0 <= self.amplitude < 1:
                raise DataError("amplitude must lie in [0, 1)")
            if not self.period > 0:
                raise DataError("period must be positive")
        if not self.volume_mean >= 0 or not self.volume_dispersion >= 0:
            raise DataError("volume parameters must be non-negative")


def generate_synthetic(spec: SynthSpec, id: str | None = None) -> PriceSeries:
    """Generate a reproducible synthetic series.

    All kinds are multiplicative in ``exp(volatility * z)`` with standard
    normal ``z``, so prices stay positive without clamping:

    * random-walk: ``p[t+1] = p[t] * exp(drift + vol * z)``
    * trend: ``p[t] = start * (1 + drift)**t * exp(vol * z[t])`` (noise around
      a compounding line, ``z[0] = 0``)
    * mean-reverting: log price follows a discrete Ornstein-Uhlenbeck step
      toward ``log(start)`` with speed ``drift``
    * sinusoid-plus-noise: ``start * (1 + amplitude * sin(2 pi t / period)) * exp(vol * z[t])``

    Volumes are lognormal around ``volume_mean``; timestamps are integer
    period indices. Randomness comes from PCG64 seeded with ``spec.seed``.
    """
    spec.validate()
    n = int(spec.length)
    rng = make_rng(spec.seed)
    z = rng.standard_normal(n)
    z[0] = 0.0
    vol = spec.volatility
    t = np.arange(n, dtype=np.float64)

    if spec.kind == "random-walk":
        log_steps = spec.drift + vol * z
        log_steps[0] = 0.0
        prices = spec.start_price * np.exp(np.cumsum(log_steps))
    elif spec.kind == "trend":
        prices = np.empty(n)
        level = spec.start_price
        for i in range(n):
            prices[i] = level * math.exp(vol * z[i])
            level *= 1.0 + spec.drift
    elif spec.kind == "mean-reverting":
        anchor = math.log(spec.start_price)
        logs = np.empty(n)
        logs[0] = anchor
        for i in range(1, n):
            logs[i] = logs[i - 1] + spec.drift * (anchor - logs[i - 1]) + vol * z[i]
        prices = np.exp(logs)
        prices[0] = spec.start_price
    else:
        prices = spec.start_price * (1.0 + spec.amplitude * np.sin(2.0 * np.pi * t / spec.period)) * np.exp(vol * z)

    quantities = spec.volume_mean * np.exp(spec.volume_dispersion * rng.standard_normal(n))
    label = id if id is not None else f"{spec.kind}-{spec.seed}"
    return PriceSeries(tuple(range(n)), prices, quantities, id=label)


def slice_window(series: PriceSeries, start: int, length: int) -> PriceSeries:
    """Contiguous sub-series ``[start, start + length)``."""
    if start < 0 or length < 1 or start + length > len(series):
        raise DataError(f"window [{start}, {start + length}) outside series of length {len(series)}")
    stop = start + length
    return PriceSeries(
        series.timestamps[start:stop],
        series.prices[start:stop],
        series.quantities[start:stop],
        id=f"{series.id}[{start}:{stop}]",
    )


def window_starts(n_points: int, window: int, stride: int) -> range:
    """Start indices of every full window of ``window`` points at ``stride`` spacing."""
    if window < 1 or stride < 1:
        raise DataError("window and stride must be positive")
    if n_points < window:
        return range(0)
    return range(0, n_points - window + 1, stride)


def as_series(prices: Sequence[float], quantities: Sequence[float] | None = None, id: str = "series") -> PriceSeries:
    """Wrap a bare price list as a series indexed by period."""
    qty = np.zeros(len(prices)) if quantities is None else np.asarray(quantities, dtype=np.float64)
    return PriceSeries(tuple(range(len(prices))), np.asarray(prices, dtype=np.float64), qty, id=id)
