"""Performance and regression metrics.

Volatility and Sharpe use per-period simple returns of the equity curve,
population standard deviation (divide by N), zero risk-free rate and no
annualization. A Sharpe ratio with zero return dispersion is reported as
``None`` rather than raised.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

# Return dispersion at or below this (relative to the mean return) counts as zero.
SIGMA_EPS = 1e-12


@dataclass(frozen=True)
class MetricsBlock:
    roi: float
    wealth: float
    mdd: float
    volatility: float
    sharpe: Optional[float]

    def to_dict(self) -> dict:
        return asdict(self)


def roi(initial: float, final: float) -> float:
    """Return on investment in percent."""
    if not initial > 0:
        raise ValueError(f"initial capital must be positive, got {initial}")
    return (final - initial) / initial * 100.0


def max_drawdown(equity: Sequence[float]) -> float:
    """Largest peak-to-trough decline in percent of the running peak."""
    curve = np.asarray(equity, dtype=np.float64)
    if curve.size == 0:
        raise ValueError("equity curve is empty")
    if not curve[0] > 0 or np.any(curve < 0):
        raise ValueError("drawdown needs a positive first sample and no negative values")
    peaks = np.maximum.accumulate(curve)
    return float(np.max((peaks - curve) / peaks) * 100.0)


def period_returns(equity: Sequence[float]) -> np.ndarray:
    curve = np.asarray(equity, dtype=np.float64)
    if curve.size < 2:
        raise ValueError("need at least two equity samples for returns")
    if np.any(curve[:-1] <= 0):
        raise ValueError("returns need positive equity before the last sample")
    return curve[1:] / curve[:-1] - 1.0


def volatility(equity: Sequence[float]) -> float:
    return float(np.std(period_returns(equity)))


def sharpe(equity: Sequence[float]) -> Optional[float]:
    r = period_returns(equity)
    mean = float(np.mean(r))
    sigma = float(np.std(r))
    if sigma <= SIGMA_EPS * max(1.0, abs(mean)):
        return None
    return mean / sigma


def mse(actual: Sequence[float], predicted: Sequence[float]) -> float:
    y = np.asarray(actual, dtype=np.float64)
    f = np.asarray(predicted, dtype=np.float64)
    if y.shape != f.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {f.shape}")
    if y.size == 0:
        raise ValueError("empty input")
    return float(np.mean((y - f) ** 2))


def r_squared(actual: Sequence[float], predicted: Sequence[float]) -> float:
    """Coefficient of determination ``1 - SS_res / SS_tot``."""
    y = np.asarray(actual, dtype=np.float64)
    f = np.asarray(predicted, dtype=np.float64)
    if y.shape != f.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {f.shape}")
    if y.size < 2:
        raise ValueError("need at least two observations")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("actual values are all identical (zero total sum of squares)")
    ss_res = float(np.sum((y - f) ** 2))
    return 1.0 - ss_res / ss_tot


def ruin_truncated(equity: Sequence[float]) -> np.ndarray:
    """Curve cut at the first non-positive sample, which is floored at zero.

    A wiped-out account (only possible for the short baseline) stops there:
    its drawdown is 100% and its last return is -100%.
    """
    curve = np.asarray(equity, dtype=np.float64)
    bad = np.flatnonzero(curve <= 0)
    if bad.size == 0:
        return curve
    cut = curve[: bad[0] + 1].copy()
    cut[-1] = 0.0
    return cut


def metrics_block(capital: float, equity: Sequence[float], wealth: Optional[float] = None) -> MetricsBlock:
    wealth = float(equity[-1]) if wealth is None else float(wealth)
    curve = ruin_truncated(equity)
    short = curve.size < 2
    return MetricsBlock(
        roi=roi(capital, wealth),
        wealth=wealth,
        mdd=max_drawdown(curve),
        volatility=0.0 if short else volatility(curve),
        sharpe=None if short else sharpe(curve),
    )


def format_table(rows: Sequence[tuple[str, MetricsBlock]], title: str = "") -> str:
    """Aligned text table, one row per strategy."""
    header = ("strategy", "ROI %", "wealth", "MDD %", "volatility", "sharpe")
    body = []
    for name, m in rows:
        body.append(
            (
                name,
                f"{m.roi:.3f}",
                f"{m.wealth:.2f}",
                f"{m.mdd:.3f}",
                f"{m.volatility:.5f}",
                "undefined" if m.sharpe is None else f"{m.sharpe:.3f}",
            )
        )
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
    lines = [title] if title else []
    lines.append("  ".join(h.ljust(w) if i == 0 else h.rjust(w) for i, (h, w) in enumerate(zip(header, widths))))
    lines.append("  ".join("-" * w for w in widths))
    for r in body:
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))))
    return "\n".join(lines) + "\n"


def table_csv(rows: Sequence[tuple[str, MetricsBlock]]) -> str:
    out = ["strategy,roi,wealth,mdd,volatility,sharpe"]
    for name, m in rows:
        s = "" if m.sharpe is None else repr(m.sharpe)
        out.append(f"{name},{m.roi!r},{m.wealth!r},{m.mdd!r},{m.volatility!r},{s}")
    return "\n".join(out) + "\n"

