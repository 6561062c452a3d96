"""
Exact Shapley attributions for hedging policies.

The value of a coalition is the marginal expectation: instance values on the
coalition, background rows everywhere else, averaged over the background. With
five features all 32 coalitions are enumerated, so efficiency holds to
rounding.
"""
import logging
from itertools import combinations
from math import factorial
from typing import Callable, Iterable, Optional

import numpy as np

from src.exceptions import InvalidInputError
from src.schemas import EnvConfig, ShapConfig, ShapResult
from src.services.hedging_env import BatchPolicy, normalize_features, rollout_batch
from src.services.market_sim import Stream, simulate_paths, stream_rng
from src.services.messages_templates import COALITION_UNKNOWN, EMPTY_BACKGROUND, NO_INSTANCES, TOO_MANY_FEATURES

logger = logging.getLogger(__name__)

PolicyFunction = Callable[[np.ndarray], np.ndarray]


def _masked_rows(x: np.ndarray, mask: np.ndarray, background: np.ndarray) -> np.ndarray:
    rows = background.copy()
    rows[:, mask] = x[mask]
    return rows


def coalition_value(f: PolicyFunction, x: np.ndarray, coalition: Iterable[int], background: np.ndarray) -> float:
    """
    The coalition_value function averages f over the background with the coalition's features fixed at x.

    :param f: PolicyFunction: Maps (n, p) rows to (n,) outputs
    :param x: np.ndarray: Instance being explained
    :param coalition: Iterable[int]: Feature indices taken from x
    :param background: np.ndarray: (m, p) reference rows
    :return: The coalition value in output units
    """
    x = np.asarray(x, dtype=float)
    background = np.atleast_2d(background)
    if background.shape[0] == 0:
        raise InvalidInputError(EMPTY_BACKGROUND)
    coalition = list(coalition)
    if any(not 0 <= k < x.shape[0] for k in coalition):
        raise InvalidInputError(COALITION_UNKNOWN.format(coalition=coalition))
    mask = np.zeros(x.shape[0], dtype=bool)
    mask[coalition] = True
    return float(np.mean(f(_masked_rows(x, mask, background))))


def shapley_weight(size: int, p: int) -> float:
    return factorial(size) * factorial(p - size - 1) / factorial(p)


def _all_coalition_values(f: PolicyFunction, x: np.ndarray, background: np.ndarray) -> np.ndarray:
    p = x.shape[0]
    codes = np.arange(2 ** p)
    masks = ((codes[:, None] >> np.arange(p)[None, :]) & 1).astype(bool)
    rows = np.concatenate([_masked_rows(x, mask, background) for mask in masks], axis=0)
    return np.asarray(f(rows), dtype=float).reshape(2 ** p, background.shape[0]).mean(axis=1)


def exact_shapley(f: PolicyFunction, x: np.ndarray, config: ShapConfig) -> np.ndarray:
    """
    The exact_shapley function enumerates every coalition once and combines the marginal contributions
    with the classic weights |S|! (p - |S| - 1)! / p!.

    :param f: PolicyFunction: Maps (n, p) rows to (n,) outputs
    :param x: np.ndarray: Instance being explained
    :param config: ShapConfig: Background and feature names
    :return: The (p,) attribution vector
    """
    x = np.asarray(x, dtype=float)
    p = x.shape[0]
    if p > config.exact_cap:
        raise InvalidInputError(TOO_MANY_FEATURES.format(cap=config.exact_cap, count=p))
    values = _all_coalition_values(f, x, config.background)
    phi = np.zeros(p)
    for i in range(p):
        others = [k for k in range(p) if k != i]
        for size in range(p):
            weight = shapley_weight(size, p)
            for subset in combinations(others, size):
                code = sum(1 << k for k in subset)
                phi[i] += weight * (values[code | (1 << i)] - values[code])
    return phi


def explain_instances(f: PolicyFunction, instances: np.ndarray, config: ShapConfig) -> ShapResult:
    instances = np.atleast_2d(np.asarray(instances, dtype=float))
    if instances.shape[0] == 0:
        raise InvalidInputError(NO_INSTANCES)
    phi = np.vstack([exact_shapley(f, x, config) for x in instances])
    return ShapResult(phi=phi, base_value=float(np.mean(f(config.background))),
                      outputs=np.asarray(f(instances), dtype=float), features=config.features)


def shap_variable_importance(result: ShapResult) -> np.ndarray:
    """Mean absolute attribution per feature."""
    phi = np.atleast_2d(result.phi)
    if phi.shape[0] == 0:
        raise InvalidInputError(NO_INSTANCES)
    return np.abs(phi).mean(axis=0)


def visited_features(env: EnvConfig, policy: BatchPolicy, n_paths: int, seed: int,
                     stream: int = Stream.background) -> np.ndarray:
    """
    The visited_features function rolls the policy out and collects the normalized inputs it saw.

    :param env: EnvConfig: Environment
    :param policy: BatchPolicy: Policy driving the holding feature
    :param n_paths: int: Number of rollouts
    :param seed: int: Path seed
    :param stream: int: Substream of the paths
    :return: (n_steps, n_paths, p) normalized features, one slab per trading step
    """
    record = rollout_batch(env, policy, simulate_paths(n_paths, env.grid, env.market, seed, stream))
    market, holdings = record.market, record.holdings
    prev = np.concatenate([np.zeros((n_paths, 1)), holdings[:, :-1]], axis=1)
    return np.stack([normalize_features(env, market.raw_features(step, prev[:, step]))
                     for step in range(market.n_steps)])


def per_step_heatmap(stack, n_background: int = 500, n_instances: int = 100, seed: int = 0) -> np.ndarray:
    """
    The per_step_heatmap function explains every step policy of a stack on states that step actually visits.
        Background and instances come from disjoint rollouts of the stack itself.
        What is explained is stack.control: the trade in rate mode, the target holding in direct mode.

    :param stack: PolicyStack: Step policies to explain
    :param n_background: int: Background rows per step
    :param n_instances: int: Explained instances per step
    :param seed: int: Path seed
    :return: (n_steps, p) SHAP variable importances
    """
    env = stack.env
    samples = visited_features(env, stack, n_background + n_instances, seed)
    rows = []
    for step in range(stack.n_steps):
        config = ShapConfig(background=samples[step, :n_background], features=env.feature_names)
        result = explain_instances(lambda x, step=step: stack.control(step, x), samples[step, n_background:], config)
        rows.append(shap_variable_importance(result))
        logger.debug("explained step %d", step)
    return np.vstack(rows)


def global_importance(agent, n_background: int = 500, n_instances: int = 100, seed: int = 0,
                      rng: Optional[np.random.Generator] = None) -> ShapResult:
    """
    The global_importance function explains a stationary policy on states pooled over all steps.

    :param agent: DdpgAgent: Exposes env, holdings() and policy_output()
    :param n_background: int: Pooled background rows
    :param n_instances: int: Pooled instances
    :param seed: int: Path seed
    :param rng: np.random.Generator | None: Row sampler, defaults to the background stream of seed
    :return: The ShapResult over the sampled instances
    """
    env = agent.env
    rng = rng or stream_rng(seed, Stream.background)
    n_paths = max(1, -(-(n_background + n_instances) // env.grid.n_steps))
    pool = visited_features(env, agent, n_paths, seed).reshape(-1, len(env.feature_names))
    picked = rng.permutation(pool.shape[0])
    background = pool[picked[:n_background]]
    instances = pool[picked[n_background:n_background + n_instances]]
    config = ShapConfig(background=background, features=env.feature_names)
    return explain_instances(agent.policy_output, instances, config)
