import csv
import datetime as dt
import math

import numpy as np
import pytest

from bullbear.errors import EpisodeDone, InvalidParams, OutOfRange, ShapeMismatch
from bullbear.market_data import Regime
from bullbear.trading_env import (
    EnvState,
    TradeAction,
    TraceRow,
    TradingEnv,
    feature_length,
    portfolio_value,
    regime_signal,
    reset_env,
    state_features,
    step,
    write_episode_trace,
)
from helpers import drift_prices, make_prices


def mid_state(ps, h, b, t=0):
    return EnvState(t=t, p=ps.prices[t].copy(), h=np.asarray(h, dtype=np.float64), b=float(b))


class TestReset:
    def test_starts_all_cash(self):
        ps = make_prices([[10.0, 20.0], [11.0, 21.0], [12.0, 22.0]])
        state = reset_env(ps, 5_000.0)
        assert state.t == 0
        assert state.b == 5_000.0
        assert np.array_equal(state.h, np.zeros(2))
        assert portfolio_value(state) == 5_000.0
        assert np.array_equal(state.w, np.zeros(2))

    def test_start_t_must_leave_a_step(self):
        ps = make_prices([[10.0], [11.0], [12.0]])
        assert reset_env(ps, 1.0, start_t=1).t == 1
        with pytest.raises(OutOfRange):
            reset_env(ps, 1.0, start_t=2)
        with pytest.raises(OutOfRange):
            reset_env(ps, 1.0, start_t=-1)

    def test_cash_must_be_positive(self):
        ps = make_prices([[10.0], [11.0]])
        with pytest.raises(InvalidParams):
            reset_env(ps, 0.0)


def test_portfolio_value_hand_case_and_linearity():
    ps = make_prices([[10.0, 20.0], [10.0, 20.0]])
    state = mid_state(ps, h=[2.0, 1.0], b=5.0)
    assert portfolio_value(state) == 45.0
    doubled = EnvState(t=0, p=2.0 * state.p, h=state.h, b=2.0 * state.b)
    assert portfolio_value(doubled) == 2.0 * portfolio_value(state)


class TestStepAccounting:
    def test_hold_reward_is_exact_price_move_on_holdings(self):
        ps = make_prices([[10.0, 20.0], [12.0, 19.0]])
        state = mid_state(ps, h=[1.0, 1.0], b=70.0)
        result = step(state, np.zeros(2), ps)
        assert result.reward == 1.0
        assert portfolio_value(result.next_state) == 101.0
        assert result.next_state.b == 70.0
        assert np.array_equal(result.next_state.h, [1.0, 1.0])

    def test_frozen_prices_and_zero_cost_reward_exactly_zero(self):
        ps = make_prices([[50.0, 80.0]] * 3)
        env = TradingEnv(ps, 10_000.0)
        env.reset()
        rng = np.random.default_rng(4)
        while not env.done:
            result = env.step(rng.uniform(-1.0, 1.0, size=2))
            assert result.reward == 0.0

    def test_overdrawn_buys_scale_to_available_cash(self):
        # requesting 150% of value from an all-cash state: common factor 1/1.5
        ps = make_prices([[10.0, 20.0], [10.0, 20.0]])
        state = reset_env(ps, 900.0)
        result = step(state, np.array([0.75, 0.75]), ps)
        assert result.next_state.b == 0.0
        assert np.allclose(result.executed, [0.5, 0.5], atol=1e-12)
        assert portfolio_value(result.next_state) == pytest.approx(900.0, abs=1e-9)

    def test_affordable_buy_executes_in_full(self):
        ps = make_prices([[10.0, 20.0], [10.0, 20.0]])
        state = reset_env(ps, 1_000.0)
        result = step(state, np.array([0.3, 0.2]), ps)
        assert np.array_equal(result.executed, [0.3, 0.2])
        assert result.next_state.b == pytest.approx(500.0, abs=1e-9)
        assert np.allclose(result.next_state.h * ps.prices[0], [300.0, 200.0], rtol=1e-12)

    def test_sells_are_capped_and_full_exits_land_on_exact_zero(self):
        ps = make_prices([[10.0, 20.0], [10.0, 20.0]])
        state = mid_state(ps, h=[3.0, 0.0], b=0.0)  # value 30, all in asset 1
        result = step(state, np.array([-1.0, -1.0]), ps)
        assert result.next_state.h[0] == 0.0
        assert result.next_state.h[1] == 0.0
        assert result.next_state.b == 30.0
        # asset 1 held weight 1.0, so the fill is -1.0; asset 2 had nothing to sell
        assert result.executed[0] == pytest.approx(-1.0, abs=1e-12)
        assert abs(result.executed[1]) == 0.0

    def test_partial_sell_fills_the_request(self):
        ps = make_prices([[10.0], [10.0]])
        state = mid_state(ps, h=[10.0], b=0.0)  # value 100
        result = step(state, np.array([-0.5]), ps)
        assert result.executed[0] == -0.5
        assert result.next_state.h[0] == pytest.approx(5.0, abs=1e-12)
        assert result.next_state.b == pytest.approx(50.0, abs=1e-12)

    def test_sell_fee_reduces_proceeds_and_reward(self):
        ps = make_prices([[10.0], [10.0]])
        state = mid_state(ps, h=[10.0], b=0.0)
        result = step(state, np.array([-0.5]), ps, cost_rate=0.01)
        # notional 50 sold: fee 0.5, proceeds 49.5, frozen prices
        assert result.next_state.b == pytest.approx(49.5, abs=1e-12)
        assert result.reward == -0.5

    def test_buy_fee_is_charged_on_the_executed_notional(self):
        ps = make_prices([[10.0], [10.0]])
        state = reset_env(ps, 100.0)
        result = step(state, np.array([1.0]), ps, cost_rate=0.01)
        # full request costs 101 > 100: scale 100/101, fee 1% of executed notional
        assert result.next_state.b == 0.0
        expected_notional = 100.0 * 100.0 / 101.0
        assert result.next_state.h[0] * 10.0 == pytest.approx(expected_notional, rel=1e-12)
        assert result.reward == pytest.approx(-0.01 * expected_notional, rel=1e-12)

    def test_rejects_out_of_range_actions_and_bad_cost(self):
        ps = make_prices([[10.0], [10.0]])
        state = reset_env(ps, 100.0)
        with pytest.raises(InvalidParams):
            step(state, np.array([1.5]), ps)
        with pytest.raises(ShapeMismatch):
            step(state, np.array([0.5, 0.5]), ps)
        with pytest.raises(InvalidParams):
            step(state, np.array([0.5]), ps, cost_rate=-0.1)

    def test_step_after_final_day_raises(self):
        ps = make_prices([[10.0], [11.0]])
        state = reset_env(ps, 100.0)
        result = step(state, np.array([0.0]), ps)
        assert result.done
        with pytest.raises(EpisodeDone):
            step(result.next_state, np.array([0.0]), ps)


@pytest.mark.parametrize("cost_rate", [0.0, 0.002])
def test_random_episodes_keep_the_books_straight(cost_rate):
    rng = np.random.default_rng(42)
    for episode in range(30):
        t_days = int(rng.integers(4, 30))
        d = int(rng.integers(1, 5))
        prices = rng.uniform(5.0, 300.0, size=(t_days, d))
        ps = make_prices(prices)
        env = TradingEnv(ps, 10_000.0, cost_rate)
        state = env.reset()
        total_reward = 0.0
        while not env.done:
            a = rng.uniform(-1.0, 1.0, size=d)
            requested = a.copy()
            result = env.step(a)
            state = result.next_state
            total_reward += result.reward
            # hard constraints of the MDP
            assert state.b >= 0.0
            assert np.all(state.h >= 0.0)
            # fills never exceed the request, leg by leg
            assert np.all(np.abs(result.executed) <= np.abs(requested) + 1e-12)
            assert np.all(result.executed * requested >= -0.0)
        # the reward stream telescopes to the change in portfolio value
        assert total_reward == pytest.approx(
            portfolio_value(state) - 10_000.0, abs=1e-6
        )


class TestRegimeSignal:
    def test_rising_index_is_always_bull(self):
        idx = np.linspace(100.0, 150.0, 30)
        assert all(regime_signal(idx, t, 10) is Regime.BULL for t in range(30))

    def test_falling_index_is_bear_after_the_first_day(self):
        idx = np.linspace(150.0, 100.0, 30)
        assert regime_signal(idx, 0, 10) is Regime.BULL  # one-point window ties
        assert all(regime_signal(idx, t, 10) is Regime.BEAR for t in range(1, 30))

    def test_constant_index_ties_to_bull_everywhere(self):
        idx = np.full(25, 123.456)
        assert all(regime_signal(idx, t, 7) is Regime.BULL for t in range(25))

    def test_window_shrinks_at_the_start(self):
        # drop then strong recovery: with the full window t=2 sits above the mean
        idx = np.array([100.0, 80.0, 95.0])
        assert regime_signal(idx, 2, 3) is Regime.BULL
        # against yesterday only it is also above, but a falling pair is not
        assert regime_signal(idx, 1, 3) is Regime.BEAR

    def test_window_one_is_always_bull(self):
        rng = np.random.default_rng(0)
        idx = rng.uniform(50, 150, size=20)
        assert all(regime_signal(idx, t, 1) is Regime.BULL for t in range(20))

    def test_power_of_two_rescaling_never_flips_labels(self):
        rng = np.random.default_rng(8)
        idx = rng.uniform(50, 150, size=40)
        base = [regime_signal(idx, t, 9) for t in range(40)]
        for k in (-6, 3, 12):
            scaled = idx * 2.0 ** k
            assert [regime_signal(scaled, t, 9) for t in range(40)] == base

    def test_generic_positive_rescaling_preserves_labels(self):
        # generic scales commute up to rounding; away from exact ties the
        # labels cannot move
        rng = np.random.default_rng(9)
        idx = np.cumsum(rng.uniform(0.5, 2.0, size=30)) + 100.0
        base = [regime_signal(idx, t, 5) for t in range(30)]
        for c in (0.001, 3.7, 1e6):
            assert [regime_signal(idx * c, t, 5) for t in range(30)] == base

    def test_domain_errors(self):
        idx = np.array([1.0, 2.0])
        with pytest.raises(OutOfRange):
            regime_signal(idx, 2, 5)
        with pytest.raises(InvalidParams):
            regime_signal(idx, 0, 0)


class TestStateFeatures:
    def test_length_matches_contract(self):
        ps = make_prices(np.full((6, 3), 10.0))
        state = reset_env(ps, 100.0)
        for lookback in (0, 1, 4):
            feats = state_features(state, ps, lookback)
            assert feats.shape == (feature_length(3, lookback),)

    def test_fresh_reset_is_all_cash(self):
        ps = make_prices(np.full((4, 2), 10.0))
        feats = state_features(reset_env(ps, 100.0), ps, 2)
        assert np.array_equal(feats[-3:], [0.0, 0.0, 1.0])

    def test_constant_prices_zero_the_ratio_block(self):
        ps = make_prices(np.full((8, 2), 25.0))
        state = reset_env(ps, 100.0, start_t=5)
        feats = state_features(state, ps, 3)
        assert np.array_equal(feats[:6], np.zeros(6))

    def test_history_before_the_series_start_is_zero_padded(self):
        ps = drift_prices(6, [1.01])
        state = reset_env(ps, 100.0, start_t=1)
        feats = state_features(state, ps, 3)
        # only the most recent of the three slots has data: (0, 0, log 1.01)
        assert feats[0] == 0.0
        assert feats[1] == 0.0
        assert feats[2] == pytest.approx(math.log(1.01), abs=1e-12)

    def test_ratio_layout_is_per_asset_contiguous(self):
        ps = drift_prices(7, [1.02, 0.97])
        state = reset_env(ps, 100.0, start_t=4)
        feats = state_features(state, ps, 3)
        assert np.allclose(feats[0:3], math.log(1.02), atol=1e-12)
        assert np.allclose(feats[3:6], math.log(0.97), atol=1e-12)

    def test_weights_and_cash_partition_the_value(self):
        ps = make_prices([[10.0, 20.0], [10.0, 20.0]])
        state = mid_state(ps, h=[2.0, 1.0], b=10.0)  # value 50
        feats = state_features(state, ps, 0)
        assert np.allclose(feats, [0.4, 0.4, 0.2], atol=1e-15)
        assert math.fsum(feats) == pytest.approx(1.0, abs=1e-12)

    def test_negative_lookback_rejected(self):
        ps = make_prices([[10.0], [10.0]])
        with pytest.raises(InvalidParams):
            state_features(reset_env(ps, 100.0), ps, -1)


class TestTradingEnvWrapper:
    def test_step_before_reset_raises(self):
        env = TradingEnv(make_prices([[10.0], [11.0]]))
        with pytest.raises(EpisodeDone):
            env.step(np.array([0.0]))

    def test_done_tracks_the_final_day(self):
        env = TradingEnv(make_prices([[10.0], [11.0], [12.0]]))
        env.reset()
        assert not env.done
        env.step(np.array([0.0]))
        assert not env.done
        env.step(np.array([0.0]))
        assert env.done

    def test_reset_reuses_the_instance(self):
        env = TradingEnv(make_prices([[10.0], [11.0], [12.0]]), 500.0)
        env.reset()
        env.step(np.array([1.0]))
        state = env.reset()
        assert state.b == 500.0
        assert np.array_equal(state.h, [0.0])


def test_write_episode_trace(tmp_path):
    rows = [
        TraceRow(
            t=0,
            date=dt.date(2020, 1, 6),
            value=100.0,
            balance=40.0,
            reward=1.5,
            weights=np.array([0.35, 0.25]),
            executed=np.array([0.1, -0.2]),
        )
    ]
    path = tmp_path / "trace.csv"
    write_episode_trace(rows, ("X", "Y"), path)
    with open(path, newline="") as fh:
        parsed = list(csv.reader(fh))
    assert parsed[0] == ["t", "date", "V", "b", "reward", "w_X", "w_Y", "exec_X", "exec_Y"]
    assert parsed[1][1] == "2020-01-06"
    assert float(parsed[1][5]) == 0.35
