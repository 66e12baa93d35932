import datetime as dt
import math

import numpy as np
import pytest

from bullbear.errors import (
    EmptySeries,
    InvalidParams,
    OutOfRange,
    ParseError,
    ShapeMismatch,
)
from bullbear.market_data import (
    GbmParams,
    PriceSeries,
    Regime,
    align_and_clean,
    index_of_date,
    index_series,
    load_csv,
    load_regimes_csv,
    simple_returns,
    slice_between,
    synth_market,
    trading_dates,
    write_prices_csv,
    write_regimes_csv,
)
from helpers import make_prices


def test_trading_dates_are_consecutive_weekdays():
    # 2020-01-04 is a Saturday; the grid must start the following Monday
    dates = trading_dates(dt.date(2020, 1, 4), 10)
    assert dates[0] == dt.date(2020, 1, 6)
    assert len(dates) == 10
    assert all(d.weekday() < 5 for d in dates)
    assert all(b > a for a, b in zip(dates, dates[1:]))
    # Friday -> Monday across the first weekend
    assert dates[5] - dates[4] == dt.timedelta(days=3)


class TestPriceSeriesValidation:
    def test_accepts_well_formed(self):
        ps = make_prices([[1.0, 2.0], [1.1, 2.2]])
        assert ps.n_days == 2
        assert ps.n_assets == 2

    def test_rejects_single_row(self):
        with pytest.raises(EmptySeries):
            make_prices([[1.0, 2.0]])

    def test_rejects_nonpositive_price(self):
        with pytest.raises(InvalidParams):
            make_prices([[1.0, 2.0], [0.0, 2.2]])

    def test_rejects_nonincreasing_dates(self):
        dates = (dt.date(2020, 1, 6), dt.date(2020, 1, 6))
        with pytest.raises(InvalidParams):
            PriceSeries(("A",), dates, np.array([[1.0], [2.0]]))

    def test_rejects_shape_mismatch(self):
        dates = trading_dates(dt.date(2020, 1, 6), 2)
        with pytest.raises(ShapeMismatch):
            PriceSeries(("A", "B"), dates, np.array([[1.0], [2.0]]))


class TestLoadCsv:
    def test_round_trips_written_prices(self, tmp_path):
        ps = make_prices(
            [[100.0, 50.5], [101.3, 49.9], [99.7, 51.2]], tickers=("AAA", "BBB")
        )
        path = tmp_path / "prices.csv"
        write_prices_csv(ps, path)
        loaded = load_csv(path)
        assert loaded.asset_ids == ("AAA", "BBB")
        assert loaded.dates == ps.dates
        assert np.array_equal(loaded.prices, ps.prices)

    def test_bad_value_rows_are_dropped_and_parsing_continues(self, tmp_path):
        path = tmp_path / "prices.csv"
        path.write_text(
            "date,X,Y\n"
            "2020-01-06,100,200\n"
            "2020-01-07,abc,201\n"      # non-numeric cell
            "2020-01-08,-5,202\n"       # negative price
            "2020-01-09,0,203\n"        # zero price
            "2020-01-10,103,204\n"
        )
        ps = load_csv(path)
        assert len(ps.dates) == 2
        assert ps.dates == (dt.date(2020, 1, 6), dt.date(2020, 1, 10))
        assert np.array_equal(ps.prices, [[100.0, 200.0], [103.0, 204.0]])

    def test_rows_are_sorted_by_date(self, tmp_path):
        path = tmp_path / "prices.csv"
        path.write_text(
            "date,X\n2020-01-08,3\n2020-01-06,1\n2020-01-07,2\n"
        )
        ps = load_csv(path)
        assert [float(v) for v in ps.prices[:, 0]] == [1.0, 2.0, 3.0]

    def test_blank_lines_are_ignored(self, tmp_path):
        path = tmp_path / "prices.csv"
        path.write_text("date,X\n2020-01-06,1\n\n2020-01-07,2\n")
        assert load_csv(path).n_days == 2

    def test_wrong_field_count_reports_line(self, tmp_path):
        path = tmp_path / "prices.csv"
        path.write_text("date,X,Y\n2020-01-06,100,200\n2020-01-07,100\n")
        with pytest.raises(ParseError) as err:
            load_csv(path)
        assert err.value.line == 3

    def test_unreadable_date_is_structural(self, tmp_path):
        path = tmp_path / "prices.csv"
        path.write_text("date,X\nnot-a-date,100\n2020-01-07,101\n")
        with pytest.raises(ParseError) as err:
            load_csv(path)
        assert err.value.line == 2
        assert err.value.column == 0

    def test_duplicate_date_is_structural(self, tmp_path):
        path = tmp_path / "prices.csv"
        path.write_text("date,X\n2020-01-06,100\n2020-01-06,101\n")
        with pytest.raises(ParseError):
            load_csv(path)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "prices.csv"
        path.write_text("day,X\n2020-01-06,100\n2020-01-07,101\n")
        with pytest.raises(ParseError) as err:
            load_csv(path)
        assert err.value.line == 1

    def test_duplicate_ticker_rejected(self, tmp_path):
        path = tmp_path / "prices.csv"
        path.write_text("date,X,X\n2020-01-06,1,2\n2020-01-07,1,2\n")
        with pytest.raises(ParseError):
            load_csv(path)

    def test_too_few_usable_rows(self, tmp_path):
        path = tmp_path / "prices.csv"
        path.write_text("date,X\n2020-01-06,100\n2020-01-07,bogus\n")
        with pytest.raises(EmptySeries):
            load_csv(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "prices.csv"
        path.write_text("")
        with pytest.raises(EmptySeries):
            load_csv(path)


class TestAlignAndClean:
    def test_common_range_and_forward_fill(self):
        d = [dt.date(2020, 1, 6 + k) for k in range(4)]
        ps = align_and_clean(
            {
                "A": [(d[0], 10.0), (d[1], 11.0), (d[2], 12.0), (d[3], 13.0)],
                "B": [(d[1], 20.0), (d[3], 22.0)],  # starts late, gap at d[2]
            }
        )
        # range clipped to B's coverage; B's gap forward-filled from d[1]
        assert ps.dates == (d[1], d[2], d[3])
        assert np.array_equal(ps.prices[:, 0], [11.0, 12.0, 13.0])
        assert np.array_equal(ps.prices[:, 1], [20.0, 20.0, 22.0])

    def test_unordered_observations_are_sorted(self):
        d = [dt.date(2020, 1, 6 + k) for k in range(3)]
        ps = align_and_clean({"A": [(d[2], 3.0), (d[0], 1.0), (d[1], 2.0)]})
        assert np.array_equal(ps.prices[:, 0], [1.0, 2.0, 3.0])

    def test_no_assets(self):
        with pytest.raises(EmptySeries):
            align_and_clean({})

    def test_asset_without_observations(self):
        with pytest.raises(EmptySeries):
            align_and_clean({"A": []})

    def test_nonpositive_price(self):
        d = dt.date(2020, 1, 6)
        with pytest.raises(InvalidParams):
            align_and_clean({"A": [(d, -1.0), (d + dt.timedelta(days=1), 2.0)]})

    def test_overlap_too_short(self):
        # disjoint coverage: common range is empty
        with pytest.raises(EmptySeries):
            align_and_clean(
                {
                    "A": [(dt.date(2020, 1, 6), 1.0), (dt.date(2020, 1, 7), 2.0)],
                    "B": [(dt.date(2020, 2, 6), 1.0), (dt.date(2020, 2, 7), 2.0)],
                }
            )


def test_simple_returns_hand_values():
    ps = make_prices([[100.0, 50.0], [110.0, 45.0], [99.0, 54.0]])
    rs = simple_returns(ps)
    assert rs.returns.shape == (2, 2)
    assert rs.dates == ps.dates[1:]
    assert np.allclose(rs.returns[0], [0.10, -0.10], atol=1e-15)
    assert np.allclose(rs.returns[1], [-0.10, 0.20], atol=1e-15)


class TestSynthMarket:
    def test_same_seed_bitwise_identical(self):
        params = GbmParams(d=3, t=50, regime_switch_prob=0.1, seed=11)
        ps1, reg1 = synth_market(params)
        ps2, reg2 = synth_market(params)
        assert np.array_equal(ps1.prices, ps2.prices)
        assert reg1 == reg2

    def test_different_seeds_differ(self):
        ps1, _ = synth_market(GbmParams(d=2, t=30, seed=0))
        ps2, _ = synth_market(GbmParams(d=2, t=30, seed=1))
        assert not np.array_equal(ps1.prices, ps2.prices)

    def test_zero_volatility_follows_exact_drift(self):
        mu = 0.252
        ps, regimes = synth_market(GbmParams(d=1, t=40, mu=mu, sigma=0.0))
        assert all(r is Regime.BULL for r in regimes)
        expected = 100.0 * np.exp(np.arange(40) * (mu / 252))
        assert np.allclose(ps.prices[:, 0], expected, rtol=1e-12)

    def test_switch_prob_one_alternates_regimes(self):
        _, regimes = synth_market(GbmParams(d=1, t=6, regime_switch_prob=1.0))
        assert regimes == [
            Regime.BULL, Regime.BEAR, Regime.BULL,
            Regime.BEAR, Regime.BULL, Regime.BEAR,
        ]

    def test_per_regime_parameters_take_effect(self):
        # sigma 0 everywhere, opposite drifts per regime, forced alternation
        mu = np.array([[0.252], [-0.252]])
        ps, regimes = synth_market(
            GbmParams(d=1, t=10, mu=mu, sigma=0.0, regime_switch_prob=1.0)
        )
        logret = np.diff(np.log(ps.prices[:, 0]))
        for step, r in zip(logret, regimes[1:]):
            assert step == pytest.approx(0.001 if r is Regime.BULL else -0.001)

    def test_shapes_dates_and_tickers(self):
        ps, regimes = synth_market(
            GbmParams(d=2, t=25, start_date=dt.date(2015, 3, 2), tickers=("U", "V"))
        )
        assert ps.prices.shape == (25, 2)
        assert len(regimes) == 25
        assert ps.asset_ids == ("U", "V")
        assert ps.dates[0] == dt.date(2015, 3, 2)
        assert all(d.weekday() < 5 for d in ps.dates)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(d=0, t=10),
            dict(d=2, t=1),
            dict(d=1, t=10, regime_switch_prob=1.5),
            dict(d=1, t=10, p0=-1.0),
            dict(d=1, t=10, sigma=-0.1),
            dict(d=1, t=10, days_per_year=0),
            dict(d=2, t=10, mu=np.zeros(3)),
            dict(d=2, t=10, tickers=("ONLY",)),
        ],
    )
    def test_invalid_params(self, kwargs):
        with pytest.raises(InvalidParams):
            synth_market(GbmParams(**kwargs))

    def test_correlation_must_be_valid(self):
        bad_diag = np.array([[2.0, 0.0], [0.0, 1.0]])
        with pytest.raises(InvalidParams):
            synth_market(GbmParams(d=2, t=10, corr=bad_diag))
        asym = np.array([[1.0, 0.5], [0.1, 1.0]])
        with pytest.raises(InvalidParams):
            synth_market(GbmParams(d=2, t=10, corr=asym))
        not_psd = np.array([[1.0, 2.0], [2.0, 1.0]])  # eigenvalues 3 and -1
        with pytest.raises(InvalidParams):
            synth_market(GbmParams(d=2, t=10, corr=not_psd))

    def test_perfect_correlation_yields_identical_shocks(self):
        corr = np.ones((2, 2))
        ps, _ = synth_market(GbmParams(d=2, t=200, sigma=0.2, corr=corr, seed=3))
        ret = np.diff(np.log(ps.prices), axis=0)
        assert np.allclose(ret[:, 0], ret[:, 1], atol=1e-12)


class TestIndexSeries:
    def test_starts_at_100_and_tracks_price_sum(self):
        ps = make_prices([[10.0, 30.0], [12.0, 30.0], [11.0, 33.0]])
        idx = index_series(ps)
        assert idx[0] == 100.0
        assert idx[1] == pytest.approx(100.0 * 42.0 / 40.0, rel=1e-15)
        assert idx[2] == pytest.approx(100.0 * 44.0 / 40.0, rel=1e-15)

    def test_bit_invariant_under_asset_reordering(self):
        rng = np.random.default_rng(5)
        prices = rng.uniform(1.0, 200.0, size=(40, 7))
        ps = make_prices(prices)
        perm = rng.permutation(7)
        shuffled = make_prices(prices[:, perm])
        assert np.array_equal(index_series(ps), index_series(shuffled))


def test_index_of_date_exact_clamp_and_out_of_range():
    ps = make_prices([[1.0], [2.0], [3.0]])  # Mon..Wed
    assert index_of_date(ps, ps.dates[1]) == 1
    # Saturday between series days resolves to the next trading day
    assert index_of_date(ps, ps.dates[0] - dt.timedelta(days=2)) == 0
    with pytest.raises(OutOfRange):
        index_of_date(ps, ps.dates[-1] + dt.timedelta(days=1))
    assert index_of_date(ps, ps.dates[-1] + dt.timedelta(days=1), clamp=True) == 2


def test_slice_between_is_inclusive():
    ps = make_prices([[float(v)] for v in range(1, 7)])
    sub = slice_between(ps, ps.dates[1], ps.dates[4])
    assert sub.dates == ps.dates[1:5]
    assert np.array_equal(sub.prices, ps.prices[1:5])
    open_ended = slice_between(ps, None, ps.dates[2])
    assert open_ended.n_days == 3
    with pytest.raises(OutOfRange):
        slice_between(ps, ps.dates[-1], None)  # selects a single row


def test_regimes_csv_round_trip(tmp_path):
    dates = trading_dates(dt.date(2020, 1, 6), 4)
    regimes = [Regime.BULL, Regime.BEAR, Regime.BEAR, Regime.BULL]
    path = tmp_path / "regimes.csv"
    write_regimes_csv(dates, regimes, path)
    got_dates, got_regimes = load_regimes_csv(path)
    assert got_dates == dates
    assert got_regimes == regimes
    assert path.read_text().splitlines()[0] == "date,regime"


def test_regimes_csv_rejects_unknown_label(tmp_path):
    path = tmp_path / "regimes.csv"
    path.write_text("date,regime\n2020-01-06,sideways\n")
    with pytest.raises(ParseError):
        load_regimes_csv(path)
