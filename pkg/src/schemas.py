from datetime import datetime
from enum import Enum
from typing import Any, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Extra, Field, root_validator, validator

FEATURE_NAMES = ['time', 'stock', 'option_price', 'delta', 'holding']


class CallPut(str, Enum):
    call = 'call'


class Parametrization(str, Enum):
    rate = 'rate'
    direct = 'direct'


class StrategyName(str, Enum):
    delta = 'delta'
    ddpg = 'ddpg'
    deep_mvh = 'deep_mvh'


class SweepAxis(str, Enum):
    alpha = 'alpha'
    lambda_ra = 'lambda'
    sigma = 'sigma'
    maturity = 'maturity'
    gamma = 'gamma'
    lr = 'lr'
    architecture = 'architecture'


ENV_AXES = {SweepAxis.alpha, SweepAxis.lambda_ra, SweepAxis.sigma, SweepAxis.maturity}


class MarketParams(BaseModel):
    mu: float = 0.05
    sigma: float = Field(default=0.2, ge=0)
    rate: float = 0.0
    s0: float = Field(default=100.0, gt=0)

    class Config:
        allow_mutation = False


class TradingGrid(BaseModel):
    n_steps: int = Field(default=30, ge=1)
    dt: float = Field(default=1 / 365, gt=0)

    class Config:
        allow_mutation = False

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    @property
    def horizon(self) -> float:
        return self.n_steps * self.dt

    @classmethod
    def daily(cls, days: int, day_count: int = 365) -> 'TradingGrid':
        return cls(n_steps=days, dt=1 / day_count)


class OptionSpec(BaseModel):
    strike: float = Field(default=100.0, gt=0)
    maturity: float = Field(default=30 / 365, gt=0)
    call_put: CallPut = CallPut.call

    class Config:
        allow_mutation = False


class EnvConfig(BaseModel):
    market: MarketParams = MarketParams()
    option: OptionSpec = OptionSpec()
    grid: TradingGrid = TradingGrid()
    alpha: float = Field(default=0.01, ge=0)
    beta: float = Field(default=0.01, ge=0)
    lambda_ra: float = Field(default=0.1, ge=0)
    option_holding: float = -1.0
    contract_multiplier: float = Field(default=100.0, ge=1)
    gamma_discount: float = Field(default=0.99, gt=0, le=1)
    settle_unwind: bool = True
    include_delta: bool = True
    holding_bounds_frac: Tuple[float, float] = (-0.2, 1.2)

    class Config:
        allow_mutation = False

    @root_validator(skip_on_failure=True)
    def maturity_matches_grid(cls, values):
        option, grid = values['option'], values['grid']
        if abs(option.maturity - grid.horizon) > 1e-12:
            raise ValueError(f'option maturity {option.maturity} != grid horizon {grid.horizon}')
        low, high = values['holding_bounds_frac']
        if low >= high:
            raise ValueError(f'holding_bounds_frac {low} >= {high}')
        return values

    @property
    def hedge_sign(self) -> float:
        return 1.0 if self.option_holding <= 0 else -1.0

    @property
    def holding_bounds(self) -> Tuple[float, float]:
        size = self.contract_multiplier * max(abs(self.option_holding), 1.0)
        low, high = self.holding_bounds_frac
        bounds = sorted((self.hedge_sign * low * size, self.hedge_sign * high * size))
        return bounds[0], bounds[1]

    @property
    def feature_names(self) -> List[str]:
        if self.include_delta:
            return list(FEATURE_NAMES)
        return [name for name in FEATURE_NAMES if name != 'delta']

    @property
    def feature_columns(self) -> List[int]:
        return [FEATURE_NAMES.index(name) for name in self.feature_names]

    @classmethod
    def table_one(cls, days: int = 30, day_count: int = 365, **overrides) -> 'EnvConfig':
        grid = TradingGrid.daily(days, day_count)
        option = OptionSpec(strike=overrides.pop('strike', 100.0), maturity=grid.horizon)
        market = overrides.pop('market', MarketParams())
        return cls(market=market, option=option, grid=grid, **overrides)


class HedgeState(BaseModel):
    step_index: int = Field(ge=0)
    time: float = Field(ge=0)
    stock: float = Field(gt=0)
    option_price: float = Field(ge=0)
    delta: float = Field(ge=0, le=1)
    holding: float

    class Config:
        allow_mutation = False

    def features(self) -> np.ndarray:
        return np.array([self.time, self.stock, self.option_price, self.delta, self.holding])


class StepOutcome(BaseModel):
    next: HedgeState
    new_holding: float
    pnl: float
    tc: float = Field(ge=0)
    unwind_tc: float = Field(default=0.0, ge=0)
    cost: float
    reward: float
    done: bool

    class Config:
        allow_mutation = False


class DdpgConfig(BaseModel):
    actor_hidden: List[int] = [12, 12, 12]
    critic_hidden: List[int] = [24, 24, 24]
    actor_lr: float = Field(default=1e-5, gt=0)
    critic_lr: float = Field(default=1e-4, gt=0)
    target_smoothing: float = Field(default=1e-3, gt=0, lt=1)
    episodes: int = Field(default=5000, ge=1)
    minibatch: int = Field(default=64, ge=1)
    buffer_capacity: int = Field(default=100_000, ge=1)
    warmup: int = Field(default=1000, ge=0)
    ou_theta: float = Field(default=0.15, ge=0)
    ou_sigma: float = Field(default=0.2, ge=0)
    ou_dt: float = Field(default=1.0, gt=0)
    gamma: Optional[float] = Field(default=None, gt=0, le=1)
    reward_scale: float = Field(default=0.01, gt=0)

    @root_validator(skip_on_failure=True)
    def capacity_holds_minibatch(cls, values):
        if values['buffer_capacity'] < values['minibatch']:
            raise ValueError('buffer_capacity must be >= minibatch')
        return values


class MvhTrainConfig(BaseModel):
    hidden: List[int] = [10, 15, 10]
    parametrization: Parametrization = Parametrization.rate
    epochs: int = Field(default=100, ge=1)
    samples_per_epoch: int = Field(default=50_000, ge=1)
    minibatch: int = Field(default=32, ge=1)
    lr: float = Field(default=1e-3, gt=0)
    lr_decay: bool = True
    lr_decay_every: int = Field(default=25, ge=1)
    lr_decay_factor: float = Field(default=0.5, gt=0, le=1)
    dropout: float = Field(default=0.25, ge=0, lt=1)
    batch_norm: bool = True
    gamma_discount: Optional[float] = Field(default=None, gt=0, le=1)
    dt_scale: float = Field(default=1.0, gt=0)
    output_scale: Optional[float] = Field(default=None, gt=0)
    replay_shocks: bool = False
    divergence_limit: float = Field(default=1e6, gt=0)

    @root_validator(skip_on_failure=True)
    def samples_hold_minibatch(cls, values):
        if values['samples_per_epoch'] < values['minibatch']:
            raise ValueError('samples_per_epoch must be >= minibatch')
        return values


class ShapConfig(BaseModel):
    background: np.ndarray
    features: List[str] = list(FEATURE_NAMES)
    exact_cap: int = 12

    class Config:
        arbitrary_types_allowed = True

    @validator('background')
    def background_nonempty(cls, value):
        value = np.atleast_2d(np.asarray(value, dtype=float))
        if value.shape[0] == 0:
            raise ValueError('background is empty')
        return value

    @root_validator(skip_on_failure=True)
    def features_match_background(cls, values):
        if values['background'].shape[1] != len(values['features']):
            raise ValueError('background width does not match features')
        if len(values['features']) > values['exact_cap']:
            raise ValueError('too many features for exact enumeration')
        return values


class ShapResult(BaseModel):
    phi: np.ndarray
    base_value: float
    outputs: np.ndarray
    features: List[str]

    class Config:
        arbitrary_types_allowed = True


class EvalReport(BaseModel):
    label: str
    n_episodes: int = Field(ge=1)
    mean: float
    std: float
    skew: float
    quantiles: dict
    bin_edges: List[float]
    counts: List[int]
    mean_tc: float

    @root_validator(skip_on_failure=True)
    def counts_cover_episodes(cls, values):
        if sum(values['counts']) != values['n_episodes']:
            raise ValueError('histogram counts do not sum to n_episodes')
        if len(values['bin_edges']) != len(values['counts']) + 1:
            raise ValueError('bin_edges must have len(counts) + 1 entries')
        return values


class SweepSpec(BaseModel):
    axis: SweepAxis
    values: List[Any] = Field(min_items=1)
    strategies: List[StrategyName] = Field(min_items=1)
    seeds: List[int] = Field(default=[0], min_items=1)
    episodes: int = Field(default=1000, ge=1)
    common_random_numbers: bool = True
    frozen_agent: bool = False
    base: 'ExperimentConfig'


class RunManifest(BaseModel):
    command: str
    config: dict
    seeds: List[int]
    version: str
    outputs: List[str] = []
    started_at: datetime
    wall_clock_seconds: float = 0.0


class ExperimentConfig(BaseModel):
    mu: float = 0.05
    sigma: float = Field(default=0.2, ge=0)
    rate: float = 0.0
    s0: float = Field(default=100.0, gt=0)
    strike: float = Field(default=100.0, gt=0)
    maturity_days: int = Field(default=30, ge=1)
    day_count: int = Field(default=365, ge=1)
    alpha: float = Field(default=0.01, ge=0)
    beta: float = Field(default=0.01, ge=0)
    lambda_ra: float = Field(default=0.1, ge=0)
    option_holding: float = -1.0
    contract_multiplier: float = Field(default=100.0, ge=1)
    gamma: float = Field(default=0.99, gt=0, le=1)
    settle_unwind: bool = True
    include_delta: bool = True

    ddpg_actor_hidden: List[int] = [12, 12, 12]
    ddpg_critic_hidden: List[int] = [24, 24, 24]
    ddpg_actor_lr: float = 1e-5
    ddpg_critic_lr: float = 1e-4
    ddpg_target_smoothing: float = 1e-3
    ddpg_episodes: int = 5000
    ddpg_minibatch: int = 64
    ddpg_buffer_capacity: int = 100_000
    ddpg_warmup: int = 1000
    ddpg_ou_theta: float = 0.15
    ddpg_ou_sigma: float = 0.2
    ddpg_reward_scale: float = 0.01

    mvh_hidden: List[int] = [10, 15, 10]
    mvh_parametrization: Parametrization = Parametrization.rate
    mvh_epochs: int = 100
    mvh_samples_per_epoch: int = 50_000
    mvh_minibatch: int = 32
    mvh_lr: float = 1e-3
    mvh_lr_decay: bool = True
    mvh_lr_decay_every: int = 25
    mvh_dropout: float = 0.25
    mvh_batch_norm: bool = True
    mvh_dt_scale: float = 1.0
    mvh_replay_shocks: bool = False

    shap_background: int = Field(default=500, ge=1)
    shap_instances: int = Field(default=100, ge=1)

    eval_episodes: int = Field(default=1000, ge=1)
    seed: int = 2023
    checkpoint: Optional[str] = None
    strategy: Optional[StrategyName] = None

    sweep_axis: SweepAxis = SweepAxis.alpha
    sweep_values: List[Any] = [0.0, 0.005, 0.01, 0.02]
    sweep_strategies: List[StrategyName] = [StrategyName.delta]
    sweep_seeds: List[int] = [0]
    common_random_numbers: bool = True
    frozen_agent: bool = False
    stability_seeds: int = 3

    class Config:
        extra = Extra.forbid

    def env_config(self) -> EnvConfig:
        grid = TradingGrid.daily(self.maturity_days, self.day_count)
        return EnvConfig(
            market=MarketParams(mu=self.mu, sigma=self.sigma, rate=self.rate, s0=self.s0),
            option=OptionSpec(strike=self.strike, maturity=grid.horizon),
            grid=grid,
            alpha=self.alpha,
            beta=self.beta,
            lambda_ra=self.lambda_ra,
            option_holding=self.option_holding,
            contract_multiplier=self.contract_multiplier,
            gamma_discount=self.gamma,
            settle_unwind=self.settle_unwind,
            include_delta=self.include_delta,
        )

    def ddpg_config(self) -> DdpgConfig:
        return DdpgConfig(**{key[len('ddpg_'):]: value for key, value in self.dict().items()
                             if key.startswith('ddpg_')})

    def mvh_config(self) -> MvhTrainConfig:
        return MvhTrainConfig(**{key[len('mvh_'):]: value for key, value in self.dict().items()
                                 if key.startswith('mvh_')})

    def sweep_spec(self) -> SweepSpec:
        return SweepSpec(axis=self.sweep_axis, values=self.sweep_values, strategies=self.sweep_strategies,
                         seeds=self.sweep_seeds, episodes=self.eval_episodes,
                         common_random_numbers=self.common_random_numbers, frozen_agent=self.frozen_agent,
                         base=self)

    def with_overrides(self, **overrides) -> 'ExperimentConfig':
        data = self.dict()
        data.update({key: value for key, value in overrides.items() if value is not None})
        return ExperimentConfig(**data)


SweepSpec.update_forward_refs()
