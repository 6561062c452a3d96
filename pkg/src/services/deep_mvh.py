"""
Deep-MVH: one small feed-forward policy per trading step, stacked into a single
trajectory graph and trained jointly on the mean discounted stepwise
mean-variance cost.

Only the holding chain carries gradient between steps. Stock, option marks and
deltas are exogenous: the hedger cannot move the market.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from tqdm import tqdm

from src.exceptions import InvalidInputError, TrainingDivergedError, UsageError
from src.schemas import EnvConfig, HedgeState, MvhTrainConfig, Parametrization
from src.services.hedging_env import Ledger, MarketTensor, ledger, market_tensor, normalize_features, \
    transaction_cost_grad
from src.services.market_sim import Stream, normal_shocks, paths_from_shocks, stream_rng
from src.services.messages_templates import COST_NON_FINITE, LOSS_DIVERGED, LOSS_NON_FINITE, SHOCKS_WIDTH, \
    STEP_OUT_OF_RANGE, TAPE_REUSED
from src.services.neural import AdamState, DenseNet, GradientTape, Mode, adam_step, backward, calibrate_batch_norm, \
    forward

logger = logging.getLogger(__name__)


class PolicyStack:
    label = 'deep_mvh'

    def __init__(self, env: EnvConfig, nets: List[DenseNet], parametrization: Parametrization = Parametrization.rate,
                 dt_scale: float = 1.0, output_scale: Optional[float] = None):
        if len(nets) != env.grid.n_steps:
            raise InvalidInputError(STEP_OUT_OF_RANGE.format(step=len(nets), n_steps=env.grid.n_steps))
        self.env = env
        self.nets = nets
        self.parametrization = Parametrization(parametrization)
        self.dt_scale = dt_scale
        self.output_scale = output_scale if output_scale is not None else env.contract_multiplier
        self.low, self.high = env.holding_bounds

    @classmethod
    def build(cls, env: EnvConfig, config: MvhTrainConfig, rng: np.random.Generator) -> 'PolicyStack':
        n_features = len(env.feature_names)
        nets = [DenseNet.build(n_features, config.hidden, 1, rng, batch_norm=config.batch_norm, dropout=config.dropout)
                for _ in range(env.grid.n_steps)]
        stack = cls(env, nets, config.parametrization, config.dt_scale, config.output_scale)
        if stack.parametrization == Parametrization.rate:
            # a fresh rate-mode stack trades nothing
            for net in nets:
                net.layers[-1].weights[...] = 0.0
        return stack

    @property
    def n_steps(self) -> int:
        return len(self.nets)

    @property
    def rate_gain(self) -> float:
        return self.output_scale * self.dt_scale

    @property
    def holding_column(self) -> Optional[int]:
        names = self.env.feature_names
        return names.index('holding') if 'holding' in names else None

    def copy(self) -> 'PolicyStack':
        return PolicyStack(self.env, [net.copy() for net in self.nets], self.parametrization, self.dt_scale,
                           self.output_scale)

    def check_step(self, step: int) -> None:
        if not 0 <= step < self.n_steps:
            raise UsageError(STEP_OUT_OF_RANGE.format(step=step, n_steps=self.n_steps))

    def to_holding(self, out: np.ndarray, prev: np.ndarray) -> np.ndarray:
        if self.parametrization == Parametrization.rate:
            return np.clip(prev + self.rate_gain * out, self.low, self.high)
        mid, half = 0.5 * (self.low + self.high), 0.5 * (self.high - self.low)
        return mid + half * np.tanh(out)

    def control(self, step: int, normalized: np.ndarray) -> np.ndarray:
        """
        The control function is the step policy's own output in shares: the trade in rate mode,
        the target holding in direct mode. This is what attribution explains.

        :param step: int: Trading step
        :param normalized: np.ndarray: (n, p) normalized features
        :return: (n,) controls in shares
        """
        self.check_step(step)
        out = self.nets[step](normalized)[:, 0]
        if self.parametrization == Parametrization.rate:
            return self.rate_gain * out
        return self.to_holding(out, np.zeros_like(out))

    def holdings(self, step: int, raw: np.ndarray) -> np.ndarray:
        self.check_step(step)
        raw = np.atleast_2d(raw)
        out = self.nets[step](normalize_features(self.env, raw))[:, 0]
        return self.to_holding(out, raw[:, 4])

    def __call__(self, state: HedgeState) -> float:
        return act(self, state.step_index, state, state.holding)


def act(stack: PolicyStack, step: int, state: HedgeState, prev_holding: float) -> float:
    """
    The act function turns one state into the holding chosen at ``step``.
        Rate mode adds the scaled network output to prev_holding; direct mode maps the squashed output
        onto the holding bounds.

    :param stack: PolicyStack: Trained or fresh stack
    :param step: int: Trading step, below n_steps
    :param state: HedgeState: Observed market state
    :param prev_holding: float: Holding carried into the step
    :return: The new holding in shares
    """
    stack.check_step(step)
    raw = state.features()[None, :]
    raw[0, 4] = prev_holding
    return float(stack.holdings(step, raw)[0])


@dataclass
class TrajectoryTape:
    stack: PolicyStack
    market: MarketTensor
    holdings: np.ndarray
    ledger: Ledger
    tapes: List[GradientTape]
    outputs: List[np.ndarray]
    clip_sides: List[np.ndarray]
    weights: np.ndarray
    consumed: bool = field(default=False)


def simulate_stack(stack: PolicyStack, market: MarketTensor, mode: Mode = Mode.eval,
                   rng: Optional[np.random.Generator] = None, gamma: Optional[float] = None) -> tuple[float, TrajectoryTape]:
    env = stack.env
    gamma = env.gamma_discount if gamma is None else gamma
    n = market.n_paths
    holdings = np.zeros((n, stack.n_steps))
    prev = np.zeros(n)
    tapes, outputs, sides = [], [], []
    for step, net in enumerate(stack.nets):
        x = normalize_features(env, market.raw_features(step, prev))
        out, tape = forward(net, x, mode, rng)
        out = out[:, 0]
        if stack.parametrization == Parametrization.rate:
            target = prev + stack.rate_gain * out
            sides.append(np.sign(target - np.clip(target, stack.low, stack.high)))
        else:
            sides.append(np.zeros(n))
        prev = stack.to_holding(out, prev)
        holdings[:, step] = prev
        tapes.append(tape)
        outputs.append(out)

    booked = ledger(env, market, holdings)
    weights = gamma ** np.arange(stack.n_steps)
    per_path = booked.cost @ weights
    bad = ~np.isfinite(per_path)
    if bad.any():
        first = int(np.flatnonzero(bad)[0])
        diagnostics = {'count': int(bad.sum()), 'path': first, 'stock': market.stock[first].tolist(),
                       'holdings': holdings[first].tolist()}
        raise TrainingDivergedError(COST_NON_FINITE.format(count=int(bad.sum()), path=first), diagnostics)
    tape = TrajectoryTape(stack=stack, market=market, holdings=holdings, ledger=booked, tapes=tapes,
                          outputs=outputs, clip_sides=sides, weights=weights)
    return float(per_path.mean()), tape


def rollout_loss(stack: PolicyStack, shocks: np.ndarray, env: Optional[EnvConfig] = None, mode: Mode = Mode.eval,
                 rng: Optional[np.random.Generator] = None, gamma: Optional[float] = None) -> tuple[float, TrajectoryTape]:
    """
    The rollout_loss function simulates the stack on a batch of normal shocks and returns the mean
    cumulative discounted stepwise cost, terminal settlement included.

    :param stack: PolicyStack: Step policies
    :param shocks: np.ndarray: (batch, n_steps) standard normal draws
    :param env: EnvConfig | None: Environment, defaults to the stack's own
    :param mode: Mode: eval, or train for batch-norm statistics and dropout
    :param rng: np.random.Generator | None: Dropout stream for train mode
    :param gamma: float | None: Cost discount, defaults to env.gamma_discount
    :return: The batch-mean loss and the TrajectoryTape for backward_through_trajectory
    """
    env = env or stack.env
    shocks = np.atleast_2d(shocks)
    if shocks.shape[1] != env.grid.n_steps:
        raise InvalidInputError(SHOCKS_WIDTH.format(got=shocks.shape[1], expected=env.grid.n_steps))
    market = market_tensor(env, paths_from_shocks(shocks, env.grid, env.market))
    return simulate_stack(stack, market, mode, rng, gamma)


def backward_through_trajectory(tape: TrajectoryTape) -> List[List[np.ndarray]]:
    """
    The backward_through_trajectory function back-propagates the batch-mean loss through time.
        The total derivative with respect to each holding collects its own step P&L, the next trade's
        cost, the next network's holding input and, in rate mode, the next holding directly.
        A rate-mode trade cut by the holding bounds passes no gradient down the holding chain, but its
        own network still receives the gradient when that gradient points back inside the bounds.

    :param tape: TrajectoryTape: Fresh tape from rollout_loss
    :return: One gradient list per step network, aligned with net.params()
    """
    if tape.consumed:
        raise UsageError(TAPE_REUSED)
    tape.consumed = True
    stack, market, env = tape.stack, tape.market, tape.stack.env
    holdings, pnl = tape.holdings, tape.ledger.pnl
    n_paths, n_steps = holdings.shape
    disc = market.discount
    prev = np.concatenate([np.zeros((n_paths, 1)), holdings[:, :-1]], axis=1)
    tc_grad = transaction_cost_grad(market.stock[:, :-1], holdings - prev, env.alpha, env.beta)
    stock_move = market.stock[:, 1:] * disc[1:] - market.stock[:, :-1] * disc[:-1]
    # dL/dpnl for every path and step
    g = tape.weights[None, :] * (-1.0 + env.lambda_ra * pnl) / n_paths
    hold_col = stack.holding_column
    rate = stack.parametrization == Parametrization.rate
    half = 0.5 * (stack.high - stack.low)

    grads: List[List[np.ndarray]] = [[] for _ in range(n_steps)]
    carry = np.zeros(n_paths)
    for t in reversed(range(n_steps)):
        total = g[:, t] * (stock_move[:, t] - disc[t] * tc_grad[:, t]) + carry
        if t == n_steps - 1 and env.settle_unwind:
            unwind_grad = transaction_cost_grad(market.stock[:, -1], -holdings[:, -1], env.alpha, env.beta)
            total += g[:, t] * disc[-1] * unwind_grad
        inside = tape.clip_sides[t] == 0
        if rate:
            # a clipped trade still learns when the loss pulls it back inside the bounds
            passing = inside | (tape.clip_sides[t] * total > 0)
            d_out = total * passing * stack.rate_gain
        else:
            d_out = total * half * (1.0 - np.tanh(tape.outputs[t]) ** 2)
        grads[t], dx = backward(stack.nets[t], tape.tapes[t], d_out[:, None])
        carry = g[:, t] * disc[t] * tc_grad[:, t]
        if hold_col is not None:
            carry = carry + inside * dx[:, hold_col] / env.contract_multiplier
        if rate:
            carry = carry + total * inside
    return grads


def calibrate_stack(stack: PolicyStack, market: MarketTensor) -> PolicyStack:
    """Re-estimates every step's batch-norm statistics along the stack's own eval-mode trajectory."""
    prev = np.zeros(market.n_paths)
    for step, net in enumerate(stack.nets):
        x = normalize_features(stack.env, market.raw_features(step, prev))
        calibrate_batch_norm(net, x)
        prev = stack.to_holding(net(x)[:, 0], prev)
    return stack


def signed_log(x: float) -> float:
    return math.copysign(math.log1p(abs(x)), x)


def learning_rate(config: MvhTrainConfig, epoch: int) -> float:
    if not config.lr_decay:
        return config.lr
    return config.lr * config.lr_decay_factor ** (epoch // config.lr_decay_every)


def train_mvh(config: MvhTrainConfig, env: EnvConfig, seed: int, progress: bool = False,
              checkpoint: Optional[Callable[[PolicyStack, int], None]] = None) -> tuple[PolicyStack, np.ndarray]:
    """
    The train_mvh function fits all step policies jointly with minibatched ADAM on fresh paths each epoch.

    :param config: MvhTrainConfig: Architecture, schedule and regularization
    :param env: EnvConfig: Training environment
    :param seed: int: Root seed for initialization, paths, dropout and shuffling
    :param progress: bool: Show a progress bar
    :param checkpoint: Callable | None: Called with (stack, epoch) after every epoch
    :return: The trained stack and the per-epoch signed log of the mean training loss
    """
    stack = PolicyStack.build(env, config, stream_rng(seed, Stream.init))
    dropout_rng = stream_rng(seed, Stream.dropout)
    shuffle_rng = stream_rng(seed, Stream.replay)
    gamma = config.gamma_discount if config.gamma_discount is not None else env.gamma_discount
    optimizers = [AdamState.for_params(net.params(), config.lr) for net in stack.nets]
    n_batches = config.samples_per_epoch // config.minibatch
    curve = np.zeros(config.epochs)
    last_good = stack.copy()

    for epoch in tqdm(range(config.epochs), disable=not progress, desc='deep-mvh'):
        lr = learning_rate(config, epoch)
        for optimizer in optimizers:
            optimizer.lr = lr
        start = 0 if config.replay_shocks else epoch * config.samples_per_epoch
        shocks = normal_shocks(config.samples_per_epoch, env.grid.n_steps, seed, Stream.train, start)
        market = market_tensor(env, paths_from_shocks(shocks, env.grid, env.market))
        order = shuffle_rng.permutation(config.samples_per_epoch)
        losses = np.zeros(n_batches)
        for b in range(n_batches):
            index = order[b * config.minibatch:(b + 1) * config.minibatch]
            loss, tape = simulate_stack(stack, market.subset(index), Mode.train, dropout_rng, gamma)
            if not math.isfinite(loss) or abs(loss) > config.divergence_limit:
                message = (LOSS_NON_FINITE.format(where=f'epoch {epoch}') if not math.isfinite(loss)
                           else LOSS_DIVERGED.format(loss=loss, limit=config.divergence_limit, epoch=epoch))
                diagnostics = {'epoch': epoch, 'minibatch': b, 'loss': loss, 'lr': lr,
                               'curve': curve[:epoch].tolist()}
                logger.error("deep-MVH diverged: %s", diagnostics)
                raise TrainingDivergedError(message, diagnostics, last_good=last_good)
            for net, optimizer, grads in zip(stack.nets, optimizers, backward_through_trajectory(tape)):
                adam_step(optimizer, net.params(), grads)
            losses[b] = loss
        if config.batch_norm:
            calibrate_stack(stack, market)
        curve[epoch] = signed_log(float(losses.mean()))
        last_good = stack.copy()
        if checkpoint is not None:
            checkpoint(stack, epoch + 1)
        logger.info("deep-MVH epoch %d/%d: mean loss %.6f (lr %.2e)", epoch + 1, config.epochs, losses.mean(), lr)
    return stack, curve
