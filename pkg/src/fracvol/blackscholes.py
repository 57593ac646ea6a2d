"""Black-Scholes analytics in log coordinates.

All functions work on the log-spot ``x`` and log-strike ``k`` (strike is
``exp(k)``, spot is ``exp(x)``), with zero interest rate. Inputs broadcast
like numpy arrays; scalar inputs give scalar outputs. Every function is a
pure function of its arguments and is safe to call concurrently.
"""
from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy.special import ndtr

__all__ = [
    "NoSolutionError",
    "ConvergenceError",
    "bs_price",
    "d1",
    "d2",
    "vega",
    "g_operator",
    "h_operator",
    "implied_vol",
    "zero_vanna_strike",
]

DEFAULT_IV_BRACKET = (1e-6, 5.0)
DEFAULT_IV_TOL = 1e-10
DEFAULT_IV_MAX_ITER = 200


class NoSolutionError(ValueError):
    """Target price admits no implied volatility (outside arbitrage bounds)."""


class ConvergenceError(RuntimeError):
    """Iterative solver ran out of iterations.

    Attributes
    ----------
    best : float
        Best iterate found before giving up.
    residual : float
        Residual at the best iterate.
    """

    def __init__(self, message: str, best: float, residual: float):
        super().__init__(message)
        self.best = best
        self.residual = residual


def _norm_pdf(z):
    return np.exp(-0.5 * np.square(z)) / math.sqrt(2.0 * math.pi)


def _check_finite(**vals) -> None:
    for name, v in vals.items():
        if not np.all(np.isfinite(v)):
            raise ValueError(f"{name} must be finite")


def _as_scalar_or_array(out, scalar: bool):
    return float(out) if scalar else out


def bs_price(x, k, sigma, tau):
    """European call price: ``exp(x) N(d1) - exp(k) N(d2)``.

    Handles the degenerate edge ``sigma * sqrt(tau) == 0`` by returning the
    intrinsic value ``max(exp(x) - exp(k), 0)``, which is the continuous
    limit. Always lies in ``[(e^x - e^k)+, e^x)``.
    """
    scalar = all(np.isscalar(v) for v in (x, k, sigma, tau))
    x, k, sigma, tau = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (x, k, sigma, tau))
    )
    _check_finite(x=x, k=k, sigma=sigma, tau=tau)
    if np.any(sigma < 0.0) or np.any(tau < 0.0):
        raise ValueError("sigma and tau must be nonnegative")

    srt = sigma * np.sqrt(tau)
    live = srt > 0.0
    srt_safe = np.where(live, srt, 1.0)
    d_1 = (x - k) / srt_safe + 0.5 * srt_safe
    d_2 = d_1 - srt_safe
    ex, ek = np.exp(x), np.exp(k)
    price = np.where(live, ex * ndtr(d_1) - ek * ndtr(d_2), np.maximum(ex - ek, 0.0))
    return _as_scalar_or_array(price, scalar)


def _moneyness_terms(x, k, sigma, tau):
    scalar = all(np.isscalar(v) for v in (x, k, sigma, tau))
    x, k, sigma, tau = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (x, k, sigma, tau))
    )
    _check_finite(x=x, k=k, sigma=sigma, tau=tau)
    srt = sigma * np.sqrt(tau)
    if np.any(srt <= 0.0):
        raise ValueError("sigma * sqrt(tau) must be positive")
    return x, k, srt, scalar


def d1(x, k, sigma, tau):
    """``(x - k) / (sigma sqrt(tau)) + sigma sqrt(tau) / 2``. Needs sigma, tau > 0."""
    x, k, srt, scalar = _moneyness_terms(x, k, sigma, tau)
    return _as_scalar_or_array((x - k) / srt + 0.5 * srt, scalar)


def d2(x, k, sigma, tau):
    """``d1 - sigma sqrt(tau)``. Vanishes exactly at ``k = x - sigma^2 tau / 2``."""
    x, k, srt, scalar = _moneyness_terms(x, k, sigma, tau)
    return _as_scalar_or_array((x - k) / srt - 0.5 * srt, scalar)


def vega(x, k, sigma, tau):
    """Price sensitivity to volatility: ``exp(x) N'(d1) sqrt(tau)``. Strictly positive."""
    x, k, srt, scalar = _moneyness_terms(x, k, sigma, tau)
    tau = np.broadcast_to(np.asarray(tau, dtype=float), x.shape)
    d_1 = (x - k) / srt + 0.5 * srt
    return _as_scalar_or_array(np.exp(x) * _norm_pdf(d_1) * np.sqrt(tau), scalar)


def g_operator(x, k, sigma, tau):
    """Second-minus-first log-spot derivative of the call price.

    Equals ``exp(x) N'(d1) / (sigma sqrt(tau))``; also ``vega / (sigma tau)``.
    Exposed as a diagnostic.
    """
    x, k, srt, scalar = _moneyness_terms(x, k, sigma, tau)
    d_1 = (x - k) / srt + 0.5 * srt
    return _as_scalar_or_array(np.exp(x) * _norm_pdf(d_1) / srt, scalar)


def h_operator(x, k, sigma, tau):
    """Third-minus-second log-spot derivative of the call price.

    Equals ``g_operator * (1 - d1 / (sigma sqrt(tau)))`` and vanishes exactly
    where ``k = x - sigma^2 tau / 2``. Exposed as a diagnostic.
    """
    x, k, srt, scalar = _moneyness_terms(x, k, sigma, tau)
    d_1 = (x - k) / srt + 0.5 * srt
    g = np.exp(x) * _norm_pdf(d_1) / srt
    return _as_scalar_or_array(g * (1.0 - d_1 / srt), scalar)


def implied_vol(
    target_price: float,
    x: float,
    k: float,
    tau: float,
    bracket: tuple[float, float] = DEFAULT_IV_BRACKET,
    tol: float = DEFAULT_IV_TOL,
    max_iter: int = DEFAULT_IV_MAX_ITER,
) -> float:
    """Invert the call price for volatility by bisection.

    Parameters
    ----------
    target_price : float
        Call price to invert. Must lie strictly inside the arbitrage bounds
        ``((e^x - e^k)+, e^x)``.
    bracket : (float, float)
        Volatility bracket; the root must produce a sign change over it.
    tol : float
        Absolute tolerance on the returned volatility.
    max_iter : int
        Bisection budget; exceeding it raises ConvergenceError carrying the
        best iterate.

    Deterministic: same inputs always give the same output.
    """
    _check_finite(target_price=target_price, x=x, k=k, tau=tau)
    lo, hi = bracket
    if not lo < hi:
        raise ValueError("bracket_lo must be below bracket_hi")
    lower = max(math.exp(x) - math.exp(k), 0.0)
    upper = math.exp(x)
    if not lower < target_price < upper:
        raise NoSolutionError(
            f"target price {target_price} outside arbitrage bounds ({lower}, {upper})"
        )
    f_lo = bs_price(x, k, lo, tau) - target_price
    f_hi = bs_price(x, k, hi, tau) - target_price
    if f_lo > 0.0 or f_hi < 0.0:
        raise NoSolutionError(
            f"no volatility in bracket [{lo}, {hi}] matches price {target_price}"
        )
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if 0.5 * (hi - lo) < tol:
            return mid
        if bs_price(x, k, mid, tau) - target_price <= 0.0:
            lo = mid
        else:
            hi = mid
    mid = 0.5 * (lo + hi)
    raise ConvergenceError(
        f"bisection did not reach tol={tol} in {max_iter} iterations",
        best=mid,
        residual=bs_price(x, k, mid, tau) - target_price,
    )


def zero_vanna_strike(
    iv_curve: Callable[[float], float],
    x: float,
    tau: float,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> float:
    """Log-strike where the smile's d2 vanishes: ``d2(k, I(k)) = 0``.

    Solves the fixed point ``k = x - I(k)^2 tau / 2`` by direct iteration
    seeded at ``k0 = x - I(x)^2 tau / 2``; the map contracts whenever the
    smile slope times ``I tau`` is below one, which holds for any reasonable
    curve. If the iteration stalls, falls back to bisection on the residual
    ``d2(k, I(k))`` over ``[x - 2 I(x)^2 tau, x]`` before giving up.

    ``tol`` bounds the absolute d2 residual at the returned strike. For a
    constant curve the first iterate is already exact.
    """
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    k = x - 0.5 * iv_curve(x) ** 2 * tau
    resid = math.nan
    for _ in range(max_iter):
        sig = iv_curve(k)
        if sig <= 0.0:
            raise ValueError(f"iv_curve returned non-positive vol {sig} at k={k}")
        resid = d2(x, k, sig, tau)
        if abs(resid) < tol:
            return k
        k = x - 0.5 * sig * sig * tau
    return _zero_vanna_bisect(iv_curve, x, tau, tol, last_residual=resid)


def _zero_vanna_bisect(iv_curve, x, tau, tol, last_residual, n_iter=200):
    # Residual is positive at the far-left edge and negative at k = x for any
    # curve close to its ATM level, so the bracket below usually straddles.
    def resid(k):
        return d2(x, k, iv_curve(k), tau)

    lo = x - 2.0 * iv_curve(x) ** 2 * tau
    hi = x
    r_lo, r_hi = resid(lo), resid(hi)
    if r_lo * r_hi > 0.0:
        raise ConvergenceError(
            "zero-vanna strike: fixed point stalled and residual does not "
            "change sign over the fallback bracket",
            best=hi,
            residual=last_residual,
        )
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        r_mid = resid(mid)
        if abs(r_mid) < tol:
            return mid
        if r_lo * r_mid <= 0.0:
            hi = mid
        else:
            lo, r_lo = mid, r_mid
    mid = 0.5 * (lo + hi)
    raise ConvergenceError(
        "zero-vanna strike: bisection fallback did not converge",
        best=mid,
        residual=resid(mid),
    )
