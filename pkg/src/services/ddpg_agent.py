"""
DDPG hedger: a stationary actor over normalized states (time is a feature),
a critic over (state, action), lagging target copies of both, a uniform
replay buffer and Ornstein-Uhlenbeck exploration.

Actions live in normalized units ``u`` in [-1, 1]; ``u`` maps linearly onto
the holding bounds, so ``u = 0`` is the middle of the range.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from tqdm import tqdm

from src.exceptions import InvalidInputError, TrainingDivergedError
from src.schemas import DdpgConfig, EnvConfig, HedgeState
from src.services.hedging_env import HedgingEnv, normalize_features
from src.services.market_sim import Stream, normal_shocks, stream_rng
from src.services.messages_templates import EMPTY_BATCH, LOSS_NON_FINITE
from src.services.neural import AdamState, DenseNet, Mode, adam_step, backward, forward, soft_update

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Transitions:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    def __len__(self) -> int:
        return self.states.shape[0]


class ReplayBuffer:
    def __init__(self, capacity: int, state_dim: int):
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.dones = np.zeros(capacity, dtype=bool)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def append(self, state: np.ndarray, action: float, reward: float, next_state: np.ndarray, done: bool) -> None:
        i = self.cursor
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.dones[i] = done
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, self.size, size=n)

    def sample(self, n: int, rng: np.random.Generator) -> Transitions:
        idx = self.sample_indices(n, rng)
        return Transitions(states=self.states[idx], actions=self.actions[idx], rewards=self.rewards[idx],
                           next_states=self.next_states[idx], dones=self.dones[idx])


@dataclass
class OuNoise:
    theta: float = 0.15
    sigma_n: float = 0.2
    dt_n: float = 1.0
    value: float = 0.0

    def reset(self) -> None:
        self.value = 0.0

    def sample(self, rng: np.random.Generator) -> float:
        # exact transition of the mean-zero OU process over dt_n
        decay = math.exp(-self.theta * self.dt_n)
        if self.theta > 0:
            scale = self.sigma_n * math.sqrt((1.0 - decay ** 2) / (2.0 * self.theta))
        else:
            scale = self.sigma_n * math.sqrt(self.dt_n)
        self.value = decay * self.value + scale * rng.standard_normal()
        return self.value


def squash(z):
    return np.tanh(z)


def select_action(actor: DenseNet, state: np.ndarray, noise: OuNoise, explore: bool,
                  bounds: tuple[float, float], rng: Optional[np.random.Generator] = None) -> float:
    """
    The select_action function maps one normalized state to a holding inside the bounds.
        With explore on, one OU increment is added to the squashed actor output before mapping.

    :param actor: DenseNet: Policy network
    :param state: np.ndarray: Normalized feature vector
    :param noise: OuNoise: Exploration process
    :param explore: bool: Add exploration noise
    :param bounds: tuple[float, float]: Holding bounds in shares
    :param rng: np.random.Generator | None: Exploration stream, required when explore is on
    :return: The holding in shares
    """
    return to_holding(select_normalized(actor, state, noise, explore, rng), bounds)


def select_normalized(actor: DenseNet, state: np.ndarray, noise: OuNoise, explore: bool,
                      rng: Optional[np.random.Generator] = None) -> float:
    u = float(squash(actor(np.atleast_2d(state)))[0, 0])
    if explore:
        u = float(np.clip(u + noise.sample(rng), -1.0, 1.0))
    return u


def to_holding(u, bounds: tuple[float, float]):
    low, high = bounds
    return np.clip(0.5 * (low + high) + 0.5 * (high - low) * np.asarray(u), low, high)


def critic_update(critic: DenseNet, critic_target: DenseNet, actor_target: DenseNet, batch: Transitions,
                  gamma: float, optimizer: AdamState) -> float:
    """
    The critic_update function takes one ADAM step on the mean squared Bellman error.
        Terminal transitions regress on the reward alone.

    :param critic: DenseNet: Q(s, u) being trained
    :param critic_target: DenseNet: Lagging critic used in the target
    :param actor_target: DenseNet: Lagging actor proposing u' at s'
    :param batch: Transitions: Sampled minibatch
    :param gamma: float: Reward discount
    :param optimizer: AdamState: Critic optimizer (carries the learning rate)
    :return: The pre-step loss
    """
    if len(batch) == 0:
        raise InvalidInputError(EMPTY_BATCH)
    next_actions = squash(actor_target(batch.next_states))
    next_q = critic_target(np.column_stack([batch.next_states, next_actions]))[:, 0]
    targets = batch.rewards + gamma * np.where(batch.dones, 0.0, next_q)
    q, tape = forward(critic, np.column_stack([batch.states, batch.actions]), Mode.train)
    error = q[:, 0] - targets
    loss = float(np.mean(error ** 2))
    grads, _ = backward(critic, tape, (2.0 / len(batch)) * error[:, None])
    adam_step(optimizer, critic.params(), grads)
    return loss


def actor_update(actor: DenseNet, critic: DenseNet, batch: Transitions, optimizer: AdamState) -> float:
    """
    The actor_update function ascends mean Q(s, squash(actor(s))) in the actor parameters only.

    :param actor: DenseNet: Policy being trained
    :param critic: DenseNet: Critic, read only
    :param batch: Transitions: Sampled minibatch (states are used)
    :param optimizer: AdamState: Actor optimizer
    :return: The pre-step objective mean Q
    """
    if len(batch) == 0:
        raise InvalidInputError(EMPTY_BATCH)
    z, actor_tape = forward(actor, batch.states, Mode.train)
    u = squash(z)
    q, critic_tape = forward(critic, np.column_stack([batch.states, u]), Mode.eval)
    _, dx = backward(critic, critic_tape, np.full_like(q, -1.0 / len(batch)))
    dz = dx[:, -1:] * (1.0 - u ** 2)
    grads, _ = backward(actor, actor_tape, dz)
    adam_step(optimizer, actor.params(), grads)
    return float(np.mean(q))


class DdpgAgent:
    label = 'ddpg'

    def __init__(self, config: DdpgConfig, env: EnvConfig, rng: np.random.Generator):
        self.config = config
        self.env = env
        n_features = len(env.feature_names)
        self.actor = DenseNet.build(n_features, config.actor_hidden, 1, rng)
        self.critic = DenseNet.build(n_features + 1, config.critic_hidden, 1, rng)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        self.actor_opt = AdamState.for_params(self.actor.params(), config.actor_lr)
        self.critic_opt = AdamState.for_params(self.critic.params(), config.critic_lr)

    @property
    def gamma(self) -> float:
        return self.config.gamma if self.config.gamma is not None else self.env.gamma_discount

    def normalized(self, raw: np.ndarray) -> np.ndarray:
        return normalize_features(self.env, raw)

    def holdings(self, step: int, raw: np.ndarray) -> np.ndarray:
        u = squash(self.actor(self.normalized(raw)))[:, 0]
        return to_holding(u, self.env.holding_bounds)

    def __call__(self, state: HedgeState) -> float:
        return float(self.holdings(state.step_index, state.features()[None, :])[0])

    def policy_output(self, normalized: np.ndarray) -> np.ndarray:
        """Holding in shares as a function of normalized features, used by the explainer."""
        return to_holding(squash(self.actor(normalized))[:, 0], self.env.holding_bounds)


def train(config: DdpgConfig, env: EnvConfig, seed: int, progress: bool = False,
          checkpoint: Optional[Callable[[DdpgAgent, int], None]] = None,
          checkpoint_every: int = 0) -> tuple[DdpgAgent, np.ndarray]:
    """
    The train function runs DDPG episode by episode with one minibatch update per transition once the
    buffer holds enough transitions.

    :param config: DdpgConfig: Networks, learning rates, buffer, exploration
    :param env: EnvConfig: Training environment
    :param seed: int: Root seed for initialization, paths, exploration and replay sampling
    :param progress: bool: Show a progress bar
    :param checkpoint: Callable | None: Called with (agent, episode) to persist intermediate agents
    :param checkpoint_every: int: Episodes between checkpoint calls, 0 disables them
    :return: The trained agent and the per-episode cumulative reward
    """
    agent = DdpgAgent(config, env, stream_rng(seed, Stream.init))
    explore_rng = stream_rng(seed, Stream.exploration)
    replay_rng = stream_rng(seed, Stream.replay)
    shocks = normal_shocks(config.episodes, env.grid.n_steps, seed, Stream.train)
    simulator = HedgingEnv(env)
    buffer = ReplayBuffer(config.buffer_capacity, len(env.feature_names))
    noise = OuNoise(theta=config.ou_theta, sigma_n=config.ou_sigma, dt_n=config.ou_dt)
    start_updates = max(config.warmup, config.minibatch)
    rho = 1.0 - config.target_smoothing
    curve = np.zeros(config.episodes)

    for episode in tqdm(range(config.episodes), disable=not progress, desc='ddpg'):
        noise.reset()
        state = simulator.initial_state()
        x = agent.normalized(state.features())[0]
        total = 0.0
        for shock in shocks[episode]:
            u = select_normalized(agent.actor, x, noise, True, explore_rng)
            outcome = simulator.step(state, float(to_holding(u, env.holding_bounds)), float(shock))
            x_next = agent.normalized(outcome.next.features())[0]
            buffer.append(x, u, outcome.reward * config.reward_scale, x_next, outcome.done)
            total += outcome.reward
            if len(buffer) >= start_updates:
                batch = buffer.sample(config.minibatch, replay_rng)
                critic_loss = critic_update(agent.critic, agent.critic_target, agent.actor_target, batch,
                                            agent.gamma, agent.critic_opt)
                objective = actor_update(agent.actor, agent.critic, batch, agent.actor_opt)
                if not (math.isfinite(critic_loss) and math.isfinite(objective)):
                    diagnostics = {'episode': episode, 'step': state.step_index, 'critic_loss': critic_loss,
                                   'actor_objective': objective, 'state': state.dict(),
                                   'curve_tail': curve[max(0, episode - 10):episode].tolist()}
                    logger.error("DDPG diverged: %s", diagnostics)
                    raise TrainingDivergedError(LOSS_NON_FINITE.format(where=f'episode {episode}'), diagnostics)
                soft_update(agent.actor_target, agent.actor, rho)
                soft_update(agent.critic_target, agent.critic, rho)
            state, x = outcome.next, x_next
        curve[episode] = total
        if checkpoint is not None and checkpoint_every and (episode + 1) % checkpoint_every == 0:
            checkpoint(agent, episode + 1)
        if (episode + 1) % max(1, config.episodes // 10) == 0:
            logger.info("ddpg episode %d/%d: cumulative reward %.4f", episode + 1, config.episodes, total)
    return agent, curve
