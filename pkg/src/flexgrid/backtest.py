"""Grid trading state machine, settlement and buy-and-hold style baselines.

Fills are limit orders at line prices. Between consecutive closes every line
crossed fires in price order: on a rise each holding cell whose upper line is
reached sells ``G_v`` there and becomes empty (its buy now rests at the cell's
lower line); on a fall each empty cell whose lower line is reached buys ``G_v``
there and becomes holding. Sells credit ``G_v * g * (1 - h)``, buys debit
``G_v * g * (1 + h)``.

Because fills only ever happen at the boundary between the empty cells below
and the holding cells above, the cell states are tracked by a single
boundary index: cells ``1..b`` are empty, cells ``b+1..n`` are holding.
"""

from __future__ import annotations

import io
import json
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from typing import Optional

from flexgrid.errors import DataError
from flexgrid.grid_model import Allocation, GridSpec, LevelLadder, build_ladder, initial_allocation
from flexgrid.market_data import PriceSeries
from flexgrid.metrics import MetricsBlock, metrics_block, roi

ANCHOR_MATCH_TOL = 1e-12


@dataclass(frozen=True)
class TradeEvent:
    period: int
    side: str  # "buy" or "sell"
    line: float
    quantity: float
    fee: float
    cash_after: float


@dataclass(frozen=True)
class Settlement:
    period: int
    price: float
    quantity: float
    proceeds: float
    fee: float
    wealth: float


class GridSession:
    """Live state of one grid over a price path.

    Args:
        ladder: the price lines.
        allocation: sizing built from ``ladder``.
        record: keep the trade log and per-period cash/spot/equity samples.
            Cash arithmetic is identical either way.
    """

    def __init__(self, ladder: LevelLadder, allocation: Allocation, record: bool = True):
        self.ladder = ladder
        self.lines = ladder.lines
        self.unit = allocation.unit_volume
        self.fee = allocation.fee
        self.capital = allocation.capital
        self.cash = allocation.initial_cash
        self.boundary = ladder.anchor_index
        self.last_price = ladder.anchor
        self.period = 0
        self.settled = False
        self.record = record
        self.trades: list[TradeEvent] = []
        self.equity: list[float] = []
        self.cash_samples: list[float] = []
        self.spot_samples: list[float] = []
        self.prices: list[float] = []
        if record:
            self.trades.append(
                TradeEvent(0, "buy", ladder.anchor, self.unit * ladder.n_upper, allocation.initial_fee, self.cash)
            )
        self._sample(ladder.anchor)

    @property
    def n_cells(self) -> int:
        return len(self.lines) - 1

    @property
    def holding_count(self) -> int:
        return 0 if self.settled else self.n_cells - self.boundary

    @property
    def spot(self) -> float:
        return self.unit * self.holding_count

    @property
    def cell_states(self) -> tuple:
        """Per-cell flag, ``True`` for holding, ordered from the lowest cell."""
        return tuple(i > self.boundary for i in range(1, self.n_cells + 1))

    def wealth(self, price: float) -> float:
        return self.cash + self.spot * price

    def _sample(self, price: float) -> None:
        if self.record:
            self.equity.append(self.cash + self.spot * price)
            self.cash_samples.append(self.cash)
            self.spot_samples.append(self.spot)
            self.prices.append(price)

    def step(self, price: float) -> list[TradeEvent]:
        """Advance one period to close ``price``; returns the fills it triggered."""
        if not price > 0:
            raise DataError(f"price must be positive, got {price}")
        if self.settled:
            raise RuntimeError("session already settled")
        self.period += 1
        fired: list[TradeEvent] = []
        lines, unit, fee = self.lines, self.unit, self.fee
        b = self.boundary
        if price > self.last_price:
            top = bisect_right(lines, price) - 1
            for i in range(b + 1, top + 1):
                notional = unit * lines[i]
                cost = notional * fee
                self.cash += notional - cost
                if self.record:
                    fired.append(TradeEvent(self.period, "sell", lines[i], unit, cost, self.cash))
            if top > b:
                self.boundary = top
        elif price < self.last_price:
            j = bisect_left(lines, price)
            for i in range(b, j, -1):
                notional = unit * lines[i - 1]
                cost = notional * fee
                self.cash -= notional + cost
                if self.record:
                    fired.append(TradeEvent(self.period, "buy", lines[i - 1], unit, cost, self.cash))
            if j < b:
                self.boundary = j
        self.last_price = price
        if self.record:
            self.trades.extend(fired)
        self._sample(price)
        return fired

    def settle(self, price: Optional[float] = None) -> Settlement:
        """Sell the whole spot position at ``price`` (default: last close)."""
        price = self.last_price if price is None else price
        qty = self.spot
        proceeds = qty * price
        cost = proceeds * self.fee
        self.cash += proceeds - cost
        self.settled = True
        if self.record:
            if qty > 0:
                self.trades.append(TradeEvent(self.period, "sell", price, qty, cost, self.cash))
            self.equity[-1] = self.cash
            self.cash_samples[-1] = self.cash
            self.spot_samples[-1] = 0.0
        return Settlement(self.period, price, qty, proceeds, cost, self.cash)


def init_session(ladder: LevelLadder, allocation: Allocation, first_price: float, record: bool = True) -> GridSession:
    if abs(first_price - ladder.anchor) > ANCHOR_MATCH_TOL * ladder.anchor:
        raise DataError(f"first price {first_price} differs from ladder anchor {ladder.anchor}")
    expected_unit = initial_allocation(ladder, allocation.capital, allocation.fee).unit_volume
    if expected_unit != allocation.unit_volume:
        raise DataError("allocation was not built from this ladder")
    return GridSession(ladder, allocation, record=record)


@dataclass
class BacktestReport:
    strategy: str
    capital: float
    fee: float
    final_wealth: float
    roi: float
    equity: list
    trades: list = field(default_factory=list)
    metrics: Optional[MetricsBlock] = None
    ladder: Optional[LevelLadder] = None
    spec: Optional[GridSpec] = None
    settlement: Optional[Settlement] = None
    prices: list = field(default_factory=list)
    cash: list = field(default_factory=list)
    spot: list = field(default_factory=list)

    @property
    def trade_count(self) -> int:
        return len(self.trades)

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "capital": self.capital,
            "fee": self.fee,
            "final_wealth": self.final_wealth,
            "roi": self.roi,
            "trade_count": self.trade_count,
            "metrics": None if self.metrics is None else self.metrics.to_dict(),
            "spec": None if self.spec is None else self.spec.to_dict(),
            "ladder": None if self.ladder is None else self.ladder.to_dict(),
            "settlement": None if self.settlement is None else self.settlement.__dict__,
            "equity": list(self.equity),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def equity_csv(self) -> str:
        buf = io.StringIO()
        buf.write("period,price,cash,spot,wealth\n")
        for t, (p, c, s, w) in enumerate(zip(self.prices, self.cash, self.spot, self.equity)):
            buf.write(f"{t},{p!r},{c!r},{s!r},{w!r}\n")
        return buf.getvalue()

    def trades_csv(self) -> str:
        buf = io.StringIO()
        buf.write("period,side,line,qty,fee,cash_after\n")
        for e in self.trades:
            buf.write(f"{e.period},{e.side},{e.line!r},{e.quantity!r},{e.fee!r},{e.cash_after!r}\n")
        return buf.getvalue()


def _check_series(series: PriceSeries) -> None:
    if len(series) < 2:
        raise DataError("a backtest needs at least two periods")


def run_backtest(
    series: PriceSeries,
    spec: GridSpec,
    capital: float,
    fee: float = 0.0,
    record: bool = True,
    strategy: Optional[str] = None,
) -> BacktestReport:
    """Trade ``spec`` over ``series`` and settle at the last close.

    ``spec.anchor`` must equal the first close. With ``record=False`` only the
    final wealth and ROI are filled in (the fast path used as SSO fitness);
    the cash arithmetic is the same, so the wealth is bit-identical.
    """
    _check_series(series)
    prices = series.prices.tolist()
    ladder = build_ladder(spec)
    allocation = initial_allocation(ladder, capital, fee)
    session = init_session(ladder, allocation, prices[0], record=record)
    for p in prices[1:]:
        session.step(p)
    settlement = session.settle(prices[-1])
    wealth = settlement.wealth
    label = strategy or spec.kind.value
    if not record:
        return BacktestReport(label, capital, fee, wealth, roi(capital, wealth), [], spec=spec, settlement=settlement)
    return BacktestReport(
        strategy=label,
        capital=capital,
        fee=fee,
        final_wealth=wealth,
        roi=roi(capital, wealth),
        equity=session.equity,
        trades=session.trades,
        metrics=metrics_block(capital, session.equity, wealth),
        ladder=ladder,
        spec=spec,
        settlement=settlement,
        prices=session.prices,
        cash=session.cash_samples,
        spot=session.spot_samples,
    )


def final_wealth(series: PriceSeries, spec: GridSpec, capital: float, fee: float = 0.0) -> float:
    return run_backtest(series, spec, capital, fee, record=False).final_wealth


BASELINES = ("B&S", "S&B")


def run_baseline(series: PriceSeries, capital: float, kind: str, fee: float = 0.0) -> BacktestReport:
    """Buy-first-sell-last (``"B&S"``) or sell-first-buy-last (``"S&B"``).

    B&S spends all capital (fee included) at the first close and liquidates
    at the last. S&B shorts ``capital / P_0`` units at the first close, keeps
    the capital as collateral and covers at the last close.
    """
    _check_series(series)
    if kind not in BASELINES:
        raise ValueError(f"unknown baseline {kind!r}; expected one of {BASELINES}")
    prices = series.prices.tolist()
    p0, last = prices[0], prices[-1]
    trades = []
    if kind == "B&S":
        units = capital / (p0 * (1.0 + fee))
        cash = 0.0
        trades.append(TradeEvent(0, "buy", p0, units, units * p0 * fee, cash))
        spot = units
        equity = [cash + units * p for p in prices]
        proceeds = units * last
        cost = proceeds * fee
        wealth = proceeds - cost
        trades.append(TradeEvent(len(prices) - 1, "sell", last, units, cost, wealth))
    else:
        units = capital / p0
        cash = capital + units * p0 * (1.0 - fee)
        trades.append(TradeEvent(0, "sell", p0, units, units * p0 * fee, cash))
        spot = -units
        equity = [cash - units * p for p in prices]
        cover = units * last
        cost = cover * fee
        wealth = cash - cover - cost
        trades.append(TradeEvent(len(prices) - 1, "buy", last, units, cost, wealth))
    equity[-1] = wealth
    n = len(prices)
    return BacktestReport(
        strategy=kind,
        capital=capital,
        fee=fee,
        final_wealth=wealth,
        roi=roi(capital, wealth),
        equity=equity,
        trades=trades,
        metrics=metrics_block(capital, equity, wealth),
        settlement=Settlement(n - 1, last, abs(spot), abs(spot) * last, cost, wealth),
        prices=prices,
        cash=[cash] * (n - 1) + [wealth],
        spot=[spot] * (n - 1) + [0.0],
    )


def run_segmented(
    series: PriceSeries,
    segment: int,
    spec_for,
    capital: float,
    fee: float = 0.0,
    strategy: str = "segmented",
) -> BacktestReport:
    """Chain fresh grids over consecutive segments of ``segment`` periods.

    ``spec_for(start, anchor)`` returns the grid for the segment starting at
    index ``start``. Each segment spans closes ``start..start+segment`` (the
    last close of one segment is the first of the next), is settled at its
    end, and passes its wealth on as the next segment's capital.
    """
    _check_series(series)
    if segment < 1:
        raise ValueError("segment length must be positive")
    prices = series.prices
    n = len(prices)
    wealth = capital
    equity: list[float] = []
    trades: list[TradeEvent] = []
    cash: list[float] = []
    spot: list[float] = []
    seen: list[float] = []
    start = 0
    while start < n - 1:
        stop = min(start + segment, n - 1)
        seg = PriceSeries(series.timestamps[start : stop + 1], prices[start : stop + 1], series.quantities[start : stop + 1])
        rep = run_backtest(seg, spec_for(start, float(prices[start])), wealth, fee)
        # the previous segment's settled sample stands in for this segment's opening one
        offset = 1 if equity else 0
        equity.extend(rep.equity[offset:])
        cash.extend(rep.cash[offset:])
        spot.extend(rep.spot[offset:])
        seen.extend(rep.prices[offset:])
        trades.extend(TradeEvent(e.period + start, e.side, e.line, e.quantity, e.fee, e.cash_after) for e in rep.trades)
        wealth = rep.final_wealth
        start = stop
    return BacktestReport(
        strategy=strategy,
        capital=capital,
        fee=fee,
        final_wealth=wealth,
        roi=roi(capital, wealth),
        equity=equity,
        trades=trades,
        metrics=metrics_block(capital, equity, wealth),
        prices=seen,
        cash=cash,
        spot=spot,
    )
