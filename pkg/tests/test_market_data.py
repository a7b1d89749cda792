import hashlib
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flexgrid.errors import DataError
from flexgrid.market_data import (
    SYNTH_KINDS,
    PricePoint,
    PriceSeries,
    SynthSpec,
    as_series,
    generate_synthetic,
    parse_csv_series,
    slice_window,
    window_starts,
)


class TestParseCsv:
    def test_basic(self):
        s = parse_csv_series("date,close,volume\n2020-01-01,100,10\n2020-01-02,101,12")
        assert len(s) == 2
        assert s.prices.tolist() == [100.0, 101.0]
        assert s.quantities.tolist() == [10.0, 12.0]

    def test_zero_close_names_row(self):
        with pytest.raises(DataError, match="line 3"):
            parse_csv_series("date,close,volume\n2020-01-01,100,10\n2020-01-02,0,12")

    def test_dates_out_of_order(self):
        with pytest.raises(DataError):
            parse_csv_series("date,close\n2020-01-02,100\n2020-01-01,101")

    def test_duplicate_dates_rejected(self):
        with pytest.raises(DataError):
            parse_csv_series("date,close\n3,100\n3,101")

    def test_missing_volume_defaults_to_zero(self, caplog):
        s = parse_csv_series("date,close\n1,100\n2,101")
        assert s.quantities.tolist() == [0.0, 0.0]
        assert any("volume" in r.message for r in caplog.records)

    def test_extra_columns_ignored(self):
        s = parse_csv_series("open,date,close,volume,high\n9,1,100,5,200\n9,2,102,6,200")
        assert s.prices.tolist() == [100.0, 102.0]

    def test_malformed_row(self):
        with pytest.raises(DataError, match="line 2"):
            parse_csv_series("date,close\n1,abc")

    def test_missing_close_column(self):
        with pytest.raises(DataError):
            parse_csv_series("date,price\n1,100")

    def test_integer_dates(self):
        s = parse_csv_series("date,close\n0,1.5\n7,2.5")
        assert s.timestamps == (0, 7)

    def test_round_trip(self):
        s = generate_synthetic(SynthSpec(length=20, seed=3))
        assert parse_csv_series(s.to_csv()) == s


class TestSynthetic:
    def test_zero_noise_random_walk_is_flat(self):
        s = generate_synthetic(SynthSpec("random-walk", 10, 100.0, 0.0, 0.0, seed=7))
        assert s.prices.tolist() == [100.0] * 10

    def test_deterministic(self):
        spec = SynthSpec("mean-reverting", 200, 50.0, 0.02, 0.1, seed=11)
        assert generate_synthetic(spec) == generate_synthetic(spec)
        assert generate_synthetic(spec).to_csv() == generate_synthetic(spec).to_csv()

    def test_trend_hand_values(self):
        s = generate_synthetic(SynthSpec("trend", 3, 100.0, 0.0, 0.01, seed=1))
        assert s.prices.tolist() == pytest.approx([100.0, 101.0, 102.01], rel=1e-12)

    def test_random_walk_matches_direct_formula(self):
        # independent re-derivation: PCG64 normals, first step zeroed, compounded
        z = np.random.Generator(np.random.PCG64(42)).standard_normal(50)
        z[0] = 0.0
        expected = 100.0 * np.exp(np.cumsum(0.01 * z))
        s = generate_synthetic(SynthSpec("random-walk", 50, 100.0, 0.01, 0.0, seed=42))
        np.testing.assert_allclose(s.prices, expected, rtol=1e-13)

    def test_output_pinned(self):
        s = generate_synthetic(SynthSpec("random-walk", 50, 100.0, 0.01, 0.0, seed=42))
        digest = hashlib.sha256(s.to_csv().encode()).hexdigest()
        assert digest == "4da3d163c5c1ae086464ae0980e3db43fb56ecf36bd63bd19d2b9b6439c06717"

    @pytest.mark.parametrize("kind", SYNTH_KINDS)
    def test_positive_prices(self, kind):
        s = generate_synthetic(SynthSpec(kind, 500, 100.0, 0.05, 0.05, seed=5))
        assert len(s) == 500
        assert np.all(s.prices > 0)
        assert np.all(s.quantities >= 0)

    def test_invalid_spec(self):
        with pytest.raises(DataError):
            generate_synthetic(SynthSpec("brownian", 10))
        with pytest.raises(DataError):
            generate_synthetic(SynthSpec(length=1))
        with pytest.raises(DataError):
            generate_synthetic(SynthSpec(start_price=-1))
        with pytest.raises(DataError):
            generate_synthetic(SynthSpec("mean-reverting", drift=0.0))

    def test_mean_reversion_stays_near_anchor(self):
        s = generate_synthetic(SynthSpec("mean-reverting", 3000, 100.0, 0.01, 0.05, seed=2))
        assert abs(math.log(np.median(s.prices) / 100.0)) < 0.05


class TestSlicing:
    series = as_series(np.linspace(100, 199, 100))

    def test_length(self):
        assert len(slice_window(self.series, 0, 30)) == 30

    def test_out_of_range(self):
        with pytest.raises(DataError):
            slice_window(self.series, 95, 30)
        with pytest.raises(DataError):
            slice_window(self.series, -1, 3)

    def test_single_point(self):
        w = slice_window(self.series, 5, 1)
        assert len(w) == 1 and w.prices[0] == self.series.prices[5]
        assert w.timestamps == (5,)

    @given(st.integers(0, 99), st.integers(1, 100), st.integers(0, 99), st.integers(1, 100))
    def test_nested_slices_compose(self, a, n, b, m):
        if a + n > 100 or b + m > n:
            return
        inner = slice_window(slice_window(self.series, a, n), b, m)
        assert inner == slice_window(self.series, a + b, m)

    def test_window_starts(self):
        assert list(window_starts(100, 30, 5)) == list(range(0, 71, 5))
        assert len(window_starts(30, 30, 5)) == 1
        assert len(window_starts(29, 30, 5)) == 0


class TestSeriesInvariants:
    def test_immutable_arrays(self):
        s = as_series([1.0, 2.0])
        with pytest.raises(ValueError):
            s.prices[0] = 5.0

    def test_point_validation(self):
        with pytest.raises(DataError):
            PricePoint(0, 0.0)
        with pytest.raises(DataError):
            PricePoint(0, 1.0, -1.0)

    def test_from_points_round_trip(self):
        s = as_series([3.0, 4.0, 5.0], [1.0, 2.0, 3.0])
        assert PriceSeries.from_points(s.points) == s

    @settings(max_examples=50)
    @given(st.lists(st.floats(0.01, 1e6), min_size=1, max_size=40))
    def test_csv_round_trip_property(self, prices):
        s = as_series(prices, [1.0] * len(prices))
        assert parse_csv_series(s.to_csv()) == s
