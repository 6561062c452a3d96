"""
Black-Scholes book-keeping marks for the hedged call.

All functions broadcast over numpy arrays of spot and time to maturity. The
drift never enters: the mark is the risk-neutral price.
"""
import numpy as np
from scipy.special import ndtr

from src.exceptions import InvalidInputError
from src.schemas import OptionSpec
from src.services.messages_templates import NEGATIVE_TAU, NON_POSITIVE_INPUT


def norm_cdf(x):
    return ndtr(x)


def _validate(s, tau) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(s, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise InvalidInputError(NEGATIVE_TAU.format(value=tau))
    if np.any(s <= 0):
        raise InvalidInputError(NON_POSITIVE_INPUT.format(name='s', value=s))
    return s, tau


def _d1_d2(s, strike, tau, sigma, rate):
    vol_sqrt = sigma * np.sqrt(tau)
    with np.errstate(divide='ignore', invalid='ignore'):
        d1 = (np.log(s / strike) + (rate + 0.5 * sigma ** 2) * tau) / vol_sqrt
    return d1, d1 - vol_sqrt


def _scalar_or_array(value, *inputs):
    if all(np.ndim(item) == 0 for item in inputs):
        return float(value)
    return value


def bs_call_price(s, spec: OptionSpec, tau, sigma: float, rate: float):
    """
    The bs_call_price function marks a European call with the Black-Scholes formula.
        At tau = 0 the mark is the payoff; with zero volatility it is the discounted forward intrinsic value.

    :param s: Spot price(s), strictly positive
    :param spec: OptionSpec: Strike (and maturity, unused here)
    :param tau: Years to maturity, non-negative
    :param sigma: float: Annualized volatility
    :param rate: float: Annualized risk-free rate
    :return: S N(d1) - K exp(-r tau) N(d2)
    """
    s_arr, tau_arr = _validate(s, tau)
    strike = spec.strike
    discounted_strike = strike * np.exp(-rate * tau_arr)
    intrinsic = np.maximum(s_arr - discounted_strike, 0.0)
    live = (tau_arr > 0) & (sigma > 0)
    d1, d2 = _d1_d2(s_arr, strike, np.where(live, tau_arr, 1.0), sigma if sigma > 0 else 1.0, rate)
    formula = s_arr * norm_cdf(d1) - discounted_strike * norm_cdf(d2)
    price = np.where(live, np.clip(formula, intrinsic, s_arr), intrinsic)
    return _scalar_or_array(price, s, tau)


def bs_call_delta(s, spec: OptionSpec, tau, sigma: float, rate: float):
    """
    The bs_call_delta function returns N(d1), the hedge ratio of the call.
        At expiry (or with zero volatility) it is the indicator of finishing in the money, 0.5 on the boundary.

    :param s: Spot price(s), strictly positive
    :param spec: OptionSpec: Strike
    :param tau: Years to maturity, non-negative
    :param sigma: float: Annualized volatility
    :param rate: float: Annualized risk-free rate
    :return: A fraction in [0, 1]
    """
    s_arr, tau_arr = _validate(s, tau)
    discounted_strike = spec.strike * np.exp(-rate * tau_arr)
    boundary = np.where(s_arr > discounted_strike, 1.0, np.where(s_arr < discounted_strike, 0.0, 0.5))
    live = (tau_arr > 0) & (sigma > 0)
    d1, _ = _d1_d2(s_arr, spec.strike, np.where(live, tau_arr, 1.0), sigma if sigma > 0 else 1.0, rate)
    delta = np.where(live, norm_cdf(d1), boundary)
    return _scalar_or_array(delta, s, tau)
