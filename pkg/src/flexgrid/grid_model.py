"""Grid ladders and initial capital allocation.

A ladder with ``n = n_upper + n_lower`` cells stores ``n + 1`` price lines
``g_0 < ... < g_n`` with ``g_0`` the lower bound, ``g_n`` the upper bound and
the anchor price on line ``k = n_lower``. Cell ``i`` (1-based) is the interval
``[g_{i-1}, g_i]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from flexgrid.errors import InfeasibleError

ANCHOR_TOL = 1e-6
LINE_TOL = 1e-9


class GridKind(str, Enum):
    EQUAL_DISTANCE = "equal-distance"
    EQUAL_RATIO = "equal-ratio"
    FLEXIBLE = "flexible"


@dataclass(frozen=True)
class GridSpec:
    """Grid parameters anchored at ``anchor`` (the first traded price).

    ``upper_mode`` only affects flexible grids: ``"decreasing"`` (default)
    makes upper spacings shrink geometrically toward the upper bound;
    ``"geometric"`` places upper lines at ``anchor / G_su**m`` instead.
    """

    kind: GridKind
    upper: float
    lower: float
    n_upper: int
    n_lower: int
    anchor: float
    upper_mode: str = "decreasing"

    def __post_init__(self):
        object.__setattr__(self, "kind", GridKind(self.kind))
        if self.n_upper != int(self.n_upper) or self.n_lower != int(self.n_lower):
            raise InfeasibleError("grid counts must be integers")
        object.__setattr__(self, "n_upper", int(self.n_upper))
        object.__setattr__(self, "n_lower", int(self.n_lower))
        if self.n_upper < 1 or self.n_lower < 1:
            raise InfeasibleError("need at least one grid cell on each side of the anchor")
        if not self.anchor > 0:
            raise InfeasibleError("anchor price must be positive")
        if not self.lower < self.anchor < self.upper:
            raise InfeasibleError(
                f"degenerate bounds: need lower < anchor < upper, got {self.lower} / {self.anchor} / {self.upper}"
            )
        if self.upper_mode not in ("decreasing", "geometric"):
            raise InfeasibleError(f"unknown upper_mode {self.upper_mode!r}")

    @property
    def n(self) -> int:
        return self.n_upper + self.n_lower

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "upper": self.upper,
            "lower": self.lower,
            "n_upper": self.n_upper,
            "n_lower": self.n_lower,
            "anchor": self.anchor,
            "upper_mode": self.upper_mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(
            kind=GridKind(d["kind"]),
            upper=float(d["upper"]),
            lower=float(d["lower"]),
            n_upper=int(d["n_upper"]),
            n_lower=int(d["n_lower"]),
            anchor=float(d["anchor"]),
            upper_mode=d.get("upper_mode", "decreasing"),
        )


@dataclass(frozen=True)
class LevelLadder:
    kind: GridKind
    lines: tuple
    anchor_index: int
    spacing: Optional[float] = None  # equal-distance G_s
    ratio: Optional[float] = None  # equal-ratio G_s
    upper_ratio: Optional[float] = None  # flexible G_su
    lower_ratio: Optional[float] = None  # flexible G_sl

    @property
    def n(self) -> int:
        return len(self.lines) - 1

    @property
    def n_upper(self) -> int:
        return self.n - self.anchor_index

    @property
    def n_lower(self) -> int:
        return self.anchor_index

    @property
    def anchor(self) -> float:
        return self.lines[self.anchor_index]

    @property
    def lower_buy_lines(self) -> tuple:
        """Lines below the anchor, where the initially empty cells buy."""
        return self.lines[: self.anchor_index]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "lines": list(self.lines),
            "anchor_index": self.anchor_index,
            "spacing": self.spacing,
            "ratio": self.ratio,
            "upper_ratio": self.upper_ratio,
            "lower_ratio": self.lower_ratio,
        }


def _check_anchor_count(derived: float, declared: int, what: str) -> None:
    if abs(derived - declared) > ANCHOR_TOL:
        raise InfeasibleError(
            f"anchor does not land on a line: {what} derived as {derived:.9g}, declared {declared}"
        )


def build_ladder(spec: GridSpec) -> LevelLadder:
    """Price lines for ``spec``.

    * equal-distance: spacing ``(upper - lower) / n``; the anchor must sit on
      line ``n_lower`` (counts re-derived from the spacing must match within
      1e-6), otherwise ``InfeasibleError``.
    * equal-ratio: ratio ``(upper / lower) ** (1 / n)``, same anchor rule.
    * flexible: lower lines ``anchor / G_sl**j`` with
      ``G_sl = (anchor / lower) ** (1 / n_lower)``; upper gaps
      ``d_m = d_1 * G_su**(m - 1)`` with ``G_su = (anchor / upper) ** (1 / n_upper)``
      and ``d_1`` chosen so the gaps sum to ``upper - anchor``.
    """
    P0, ul, ll = spec.anchor, spec.upper, spec.lower
    nu, nl = spec.n_upper, spec.n_lower
    n = nu + nl

    if spec.kind is GridKind.EQUAL_DISTANCE:
        gs = (ul - ll) / n
        _check_anchor_count((ul - P0) / gs, nu, "n_upper")
        _check_anchor_count((P0 - ll) / gs, nl, "n_lower")
        lines = [ll + gs * i for i in range(n + 1)]
        lines[nl] = P0
        lines[n] = ul
        return LevelLadder(spec.kind, tuple(lines), nl, spacing=gs)

    if spec.kind is GridKind.EQUAL_RATIO:
        ratio = ((ul - ll) / ll + 1.0) ** (1.0 / n)
        _check_anchor_count(math.log(ul / P0) / math.log(ratio), nu, "n_upper")
        lines = [P0 / ratio**j for j in range(nl, 0, -1)] + [P0 * ratio**m for m in range(nu + 1)]
        lines[0] = ll
        lines[n] = ul
        return LevelLadder(spec.kind, tuple(lines), nl, ratio=ratio)

    g_su = 1.0 / ((ul - P0) / P0 + 1.0) ** (1.0 / nu)
    g_sl = ((P0 - ll) / ll + 1.0) ** (1.0 / nl)
    lower = [P0 / g_sl**j for j in range(nl, 0, -1)]
    lower[0] = ll
    if spec.upper_mode == "geometric":
        upper = [P0 / g_su**m for m in range(1, nu + 1)]
    else:
        first_gap = (ul - P0) * (1.0 - g_su) / (1.0 - g_su**nu)
        upper = []
        level = P0
        for m in range(nu):
            level += first_gap * g_su**m
            upper.append(level)
    upper[-1] = ul
    lines = tuple(lower + [P0] + upper)
    return LevelLadder(spec.kind, lines, nl, upper_ratio=g_su, lower_ratio=g_sl)


def anchored_spec(kind: GridKind, anchor: float, upper: float, lower: float, n: int) -> GridSpec:
    """Equal-distance or equal-ratio spec with ``n`` cells that puts the anchor on a line.

    The upper bound is kept; the split ``n_upper``/``n_lower`` is the rounded
    proportional share and the lower bound is moved so the anchor lands
    exactly on line ``n_lower``. Flexible specs are returned as given with an
    even split, since any flexible ladder is anchored by construction.
    """
    kind = GridKind(kind)
    if n < 2:
        raise InfeasibleError("need at least two cells")
    if not lower < anchor < upper:
        raise InfeasibleError("degenerate bounds")
    if kind is GridKind.FLEXIBLE:
        nu = n // 2
        return GridSpec(kind, upper, lower, nu, n - nu, anchor)
    if kind is GridKind.EQUAL_DISTANCE:
        share = (upper - anchor) / (upper - lower)
    else:
        share = math.log(upper / anchor) / math.log(upper / lower)
    nu = min(max(int(round(n * share)), 1), n - 1)
    nl = n - nu
    if kind is GridKind.EQUAL_DISTANCE:
        gs = (upper - anchor) / nu
        new_lower = anchor - nl * gs
        if not new_lower > 0:
            raise InfeasibleError("anchored equal-distance grid would reach non-positive prices")
    else:
        ratio = (upper / anchor) ** (1.0 / nu)
        new_lower = anchor / ratio**nl
    return GridSpec(kind, upper, new_lower, nu, nl, anchor)


@dataclass(frozen=True)
class Allocation:
    unit_volume: float  # G_v, spot units per grid fill
    initial_spot_value: float  # S_0
    initial_cash: float  # C_0
    capital: float  # F_0
    fee: float  # h
    initial_fee: float

    def to_dict(self) -> dict:
        return {
            "unit_volume": self.unit_volume,
            "initial_spot_value": self.initial_spot_value,
            "initial_cash": self.initial_cash,
            "capital": self.capital,
            "fee": self.fee,
            "initial_fee": self.initial_fee,
        }


def initial_allocation(ladder: LevelLadder, capital: float, fee: float = 0.0) -> Allocation:
    """Split ``capital`` into the initial spot purchase and the cash reserve.

    The unit volume is sized so the initial purchase of ``n_upper`` units at
    the anchor plus one fill at every lower line, all fees included, spend
    exactly ``capital``::

        G_v = F_0 / ((1 + h) * (n_upper * P_0 + sum(lower lines)))

    At ``h = 0`` on an equal-distance ladder the lower-line sum is the
    arithmetic series ``((P_0 - G_s) + G_ll) / 2 * n_lower``.
    """
    if not capital > 0:
        raise ValueError(f"capital must be positive, got {capital}")
    if not 0 <= fee < 1:
        raise ValueError(f"fee must lie in [0, 1), got {fee}")
    P0 = ladder.anchor
    nu = ladder.n_upper
    lower_sum = math.fsum(ladder.lower_buy_lines)
    gv = capital / ((1.0 + fee) * (nu * P0 + lower_sum))
    spot_value = gv * nu * P0
    initial_fee = spot_value * fee
    cash = capital - spot_value - initial_fee
    return Allocation(gv, spot_value, cash, capital, fee, initial_fee)


def first_spacing_violation(lines, fee: float) -> Optional[int]:
    """Index ``i`` of the first pair with ``g[i+1] - g[i] <= fee * g[i+1]``, else None."""
    for i in range(len(lines) - 1):
        if not lines[i + 1] - lines[i] > fee * lines[i + 1]:
            return i
    return None


def validate_spacing(ladder: LevelLadder, fee: float) -> tuple[bool, Optional[tuple[float, float]]]:
    """Check that every grid gap exceeds the trading cost of its upper line.

    Returns ``(True, None)`` on success, otherwise ``(False, (g_i, g_i+1))``
    for the first violating pair.
    """
    i = first_spacing_violation(ladder.lines, fee)
    if i is None:
        return True, None
    return False, (ladder.lines[i], ladder.lines[i + 1])
