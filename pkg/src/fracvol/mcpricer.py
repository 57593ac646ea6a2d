"""Monte Carlo estimators for calls and volatility/variance swap strikes.

Two call estimators share one set of path functionals. The conditional
(mixing) estimator integrates the independent Brownian factor out exactly:
given the vol path, the log-price is Gaussian, so each path contributes a
shifted-spot, reduced-vol Black-Scholes value and no B draws are needed.
The direct estimator simulates the log-price by left-point Euler and
averages the payoff, optionally with a terminal-spot control variate
(e^{X_T} is an exact martingale of the discrete scheme, so the control has
known mean zero).

Everything is deterministic given (seed, n_paths, block_size, grid, params):
per-path arrays are assembled positionally by block index and reduced once,
so results do not depend on generation order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .blackscholes import bs_price
from .fbm import (
    B_STREAM,
    DEFAULT_BLOCK_SIZE,
    GaussianPathBatch,
    TimeGrid,
    block_rng,
    cholesky_oracle,
    iter_path_blocks,
    kernel_weights,
)
from .volmodel import ModelParams, PathFunctionals, path_functionals, vol_paths

__all__ = [
    "McConfig",
    "PriceEstimate",
    "simulate_functionals",
    "call_price_conditional",
    "call_price_direct",
    "vol_swap_strike",
    "variance_swap_strike",
    "strike_pricer",
    "VALID_SCHEMES",
    "VALID_ESTIMATORS",
    "VALID_CONTROLS",
]

VALID_SCHEMES = ("convolution", "midpoint_convolution", "cholesky_oracle")
VALID_ESTIMATORS = ("conditional_mixing", "direct_euler")
VALID_CONTROLS = ("none", "bs_terminal")


@dataclass(frozen=True)
class McConfig:
    """Experiment knobs: path budget, seeding, scheme and estimator choice.

    block_size partitions paths into deterministic work units and is part
    of the reproducibility key (it selects which RNG stream draws which
    rows, not just a performance hint).
    """

    n_paths: int
    seed: int
    scheme: str = "convolution"
    estimator: str = "conditional_mixing"
    control_variate: str = "bs_terminal"
    block_size: int = DEFAULT_BLOCK_SIZE

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be at least 1")
        if self.block_size < 1:
            raise ValueError("block_size must be at least 1")
        if self.scheme not in VALID_SCHEMES:
            raise ValueError(f"scheme must be one of {VALID_SCHEMES}")
        if self.estimator not in VALID_ESTIMATORS:
            raise ValueError(f"estimator must be one of {VALID_ESTIMATORS}")
        if self.control_variate not in VALID_CONTROLS:
            raise ValueError(f"control_variate must be one of {VALID_CONTROLS}")


@dataclass(frozen=True)
class PriceEstimate:
    """Point estimate with its Monte Carlo standard error."""

    value: float
    std_error: float
    n_paths: int

    def __post_init__(self):
        if self.std_error < 0.0:
            raise ValueError("std_error must be nonnegative")


def _mean_se(values: np.ndarray) -> PriceEstimate:
    n = values.shape[0]
    se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return PriceEstimate(value=float(values.mean()), std_error=se, n_paths=n)


def simulate_functionals(
    grid: TimeGrid,
    params: ModelParams,
    config: McConfig,
    want_terminal: bool = False,
) -> PathFunctionals:
    """Stream path blocks through the vol model and keep only per-path
    functionals (memory O(n_paths), independent of n_steps).

    With want_terminal the direct Euler log-price is also accumulated,
    stored as the terminal log return (X_T with x0 = 0); pricing shifts it
    by the actual log-spot. B increments come from their own RNG stream,
    block-aligned with the W draws.
    """
    y = np.empty(config.n_paths)
    ito = np.empty(config.n_paths)
    ret = np.empty(config.n_paths) if want_terminal else None
    rho = params.rho
    orth = math.sqrt(max(1.0 - rho * rho, 0.0))
    sqrt_dt = math.sqrt(grid.dt)

    if config.scheme == "cholesky_oracle":
        blocks = [(0, cholesky_oracle(grid, params.hurst, config.n_paths, config.seed))]
    else:
        evaluation = (
            "midpoint" if config.scheme == "midpoint_convolution" else "variance_exact"
        )
        weights = kernel_weights(grid, params.hurst, evaluation)
        blocks = iter_path_blocks(
            grid, weights, config.n_paths, config.seed, config.block_size
        )

    for idx, blk in blocks:
        row = idx * config.block_size
        vols = vol_paths(blk, params, grid)
        funcs = path_functionals(vols, blk, grid)
        y[row : row + blk.n_paths] = funcs.integrated_variance
        ito[row : row + blk.n_paths] = funcs.int_sigma_dw
        if want_terminal:
            rng = block_rng(config.seed, B_STREAM, idx)
            db = rng.standard_normal(blk.dw.shape) * sqrt_dt
            ito_b = np.einsum("ij,ij->i", vols, db)
            ret[row : row + blk.n_paths] = (
                -0.5 * funcs.integrated_variance
                + rho * funcs.int_sigma_dw
                + orth * ito_b
            )
    return PathFunctionals(integrated_variance=y, int_sigma_dw=ito, terminal_log_spot=ret)


def _conditional_values(
    funcs: PathFunctionals, params: ModelParams, x0: float, k: float, maturity: float
) -> np.ndarray:
    """Per-path conditional Black-Scholes values.

    Given the vol path, X_T ~ Normal(x0 - Y/2 + rho * int sigma dW + rho^2
    adjustment, (1 - rho^2) Y); folding the mean into a shifted spot gives
    bs_price(x_hat, k, sqrt((1-rho^2) Y / T), T). At |rho| = 1 the
    conditional law is a point mass and bs_price's degenerate branch
    returns the intrinsic value.
    """
    rho = params.rho
    y = funcs.integrated_variance
    x_hat = x0 + rho * funcs.int_sigma_dw - 0.5 * rho * rho * y
    cond_vol = np.sqrt(max(1.0 - rho * rho, 0.0) * y / maturity)
    return bs_price(x_hat, k, cond_vol, maturity)


def call_price_conditional(
    funcs: PathFunctionals,
    params: ModelParams,
    x0: float,
    k: float,
    maturity: float,
) -> PriceEstimate:
    """Conditional (mixing) call estimator. Exact in the independent factor."""
    if maturity <= 0.0:
        raise ValueError("maturity must be positive")
    return _mean_se(_conditional_values(funcs, params, x0, k, maturity))


def _direct_values(
    terminal_log_return: np.ndarray, x0: float, k: float, control_variate: str
) -> np.ndarray:
    spot = np.exp(x0 + terminal_log_return)
    payoff = np.maximum(spot - math.exp(k), 0.0)
    if control_variate == "none":
        return payoff
    control = spot - math.exp(x0)  # exactly mean-zero: e^X is a martingale
    var = control.var(ddof=1) if control.shape[0] > 1 else 0.0
    if var == 0.0:
        return payoff
    beta = np.cov(payoff, control, ddof=1)[0, 1] / var
    return payoff - beta * control


def call_price_direct(
    batch: GaussianPathBatch,
    vols: np.ndarray,
    params: ModelParams,
    x0: float,
    k: float,
    maturity: float,
    config: McConfig,
) -> PriceEstimate:
    """Direct Euler call estimator on a materialized batch.

    Draws the independent factor block-by-block (aligned with the batch's
    row blocks) so the result is bit-identical to the streaming driver for
    the same config.
    """
    if maturity <= 0.0:
        raise ValueError("maturity must be positive")
    if vols.shape != batch.dw.shape:
        raise ValueError("vols and batch disagree on shape")
    grid = TimeGrid(maturity, batch.n_steps)
    funcs = path_functionals(vols, batch, grid)
    rho = params.rho
    orth = math.sqrt(max(1.0 - rho * rho, 0.0))
    sqrt_dt = math.sqrt(grid.dt)
    ret = np.empty(batch.n_paths)
    for row in range(0, batch.n_paths, config.block_size):
        stop = min(row + config.block_size, batch.n_paths)
        rng = block_rng(config.seed, B_STREAM, row // config.block_size)
        db = rng.standard_normal((stop - row, batch.n_steps)) * sqrt_dt
        ito_b = np.einsum("ij,ij->i", vols[row:stop], db)
        ret[row:stop] = (
            -0.5 * funcs.integrated_variance[row:stop]
            + rho * funcs.int_sigma_dw[row:stop]
            + orth * ito_b
        )
    return _mean_se(_direct_values(ret, x0, k, config.control_variate))


def vol_swap_strike(funcs: PathFunctionals, maturity: float) -> PriceEstimate:
    """Fair volatility-swap strike E[sqrt(Y/T)] with standard error."""
    if maturity <= 0.0:
        raise ValueError("maturity must be positive")
    return _mean_se(np.sqrt(funcs.integrated_variance / maturity))


def variance_swap_strike(funcs: PathFunctionals, maturity: float) -> PriceEstimate:
    """Fair variance-swap strike E[Y/T] with standard error."""
    if maturity <= 0.0:
        raise ValueError("maturity must be positive")
    return _mean_se(funcs.integrated_variance / maturity)


def strike_pricer(
    funcs: PathFunctionals,
    params: ModelParams,
    x0: float,
    maturity: float,
    estimator: str = "conditional_mixing",
    control_variate: str = "none",
) -> Callable[[float], PriceEstimate]:
    """Bind one simulated batch into a price-of-log-strike function.

    All strikes reuse the same paths (common random numbers), which makes
    differences of implied vols across strikes far less noisy than
    independent runs would be.
    """
    if estimator not in VALID_ESTIMATORS:
        raise ValueError(f"estimator must be one of {VALID_ESTIMATORS}")
    if control_variate not in VALID_CONTROLS:
        raise ValueError(f"control_variate must be one of {VALID_CONTROLS}")
    if estimator == "direct_euler":
        if funcs.terminal_log_spot is None:
            raise ValueError(
                "direct_euler pricing needs functionals simulated with "
                "want_terminal=True"
            )
        ret = funcs.terminal_log_spot

        def price_direct(k: float) -> PriceEstimate:
            return _mean_se(_direct_values(ret, x0, k, control_variate))

        return price_direct

    def price_conditional(k: float) -> PriceEstimate:
        return _mean_se(_conditional_values(funcs, params, x0, k, maturity))

    return price_conditional
