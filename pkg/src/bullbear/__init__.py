"""Regime-aware DDPG portfolio allocation with Markowitz baselines.

The public surface re-exports the working set: market data handling and the
synthetic generator, constrained mean-variance optimization, the trading
environment, the networks, the adaptive agent, and the backtest harness.
"""

from .errors import (
    BullbearError,
    ConfigError,
    DataError,
    Degenerate,
    DegenerateCurve,
    EmptyBatch,
    EmptySeries,
    EpisodeDone,
    Infeasible,
    InsufficientData,
    InsufficientSamples,
    InvalidParams,
    InvalidShape,
    OutOfRange,
    ParseError,
    ShapeMismatch,
    ZeroVolatility,
)
from .market_data import (
    DAYS_PER_YEAR,
    GbmParams,
    PriceSeries,
    Regime,
    ReturnSeries,
    align_and_clean,
    index_series,
    load_csv,
    simple_returns,
    slice_between,
    synth_market,
    write_prices_csv,
)
from .portfolio_opt import (
    AllocationConstraints,
    FrontierPoint,
    Moments,
    PortfolioStats,
    efficient_frontier,
    estimate_moments,
    max_sharpe,
    min_variance,
    portfolio_stats,
    project_capped_simplex,
    write_frontier_csv,
)
from .neural import (
    AdamState,
    Mlp,
    apply_update,
    backward,
    forward,
    init_mlp,
    load_mlp,
    save_mlp,
)
from .trading_env import (
    EnvState,
    StepResult,
    TradeAction,
    TradingEnv,
    feature_length,
    regime_signal,
    reset_env,
    state_features,
    step,
)
from .agent import (
    AdaptiveConfig,
    AgentNets,
    Batch,
    NoiseProcess,
    ReplayBuffer,
    Transition,
    actor_step,
    adaptive_critic_step,
    discounted_return,
    load_agent,
    prediction_error,
    save_agent,
    select_action,
    soft_update,
    softmax_policy,
    td_target,
    train,
)
from .backtest import (
    BacktestReport,
    BuyAndHoldIndexStrategy,
    EquityCurve,
    MeanVarianceStrategy,
    MinVarianceStrategy,
    RlAgentStrategy,
    annualized_return,
    annualized_std,
    compare,
    run_backtest,
    sharpe_ratio,
)

__version__ = "0.1.0"
