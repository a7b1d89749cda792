"""Flexible grid trading toolkit.

Grid ladders (equal-distance, equal-ratio, flexible), a limit-order grid
backtester, Simplified Swarm Optimization of grid parameters, window feature
extraction and a small numpy feed-forward network that maps market features
to grid parameters.
"""

from flexgrid.errors import DataError, FlexgridError, InfeasibleError
from flexgrid.market_data import PricePoint, PriceSeries, SynthSpec, generate_synthetic, parse_csv_series, slice_window
from flexgrid.grid_model import Allocation, GridKind, GridSpec, LevelLadder, build_ladder, initial_allocation, validate_spacing
from flexgrid.backtest import BacktestReport, run_backtest, run_baseline

__all__ = [
    "Allocation",
    "BacktestReport",
    "DataError",
    "FlexgridError",
    "GridKind",
    "GridSpec",
    "InfeasibleError",
    "LevelLadder",
    "PricePoint",
    "PriceSeries",
    "SynthSpec",
    "build_ladder",
    "generate_synthetic",
    "initial_allocation",
    "parse_csv_series",
    "run_backtest",
    "run_baseline",
    "slice_window",
    "validate_spacing",
]

__version__ = "0.1.0"
