"""Implied-vol curve analysis around the zero-vanna strike.

Builds per-(H, T) reports comparing three volatility summaries of the same
simulated model: the Monte Carlo volatility-swap strike, the implied vol at
the zero-vanna strike, and the at-the-money implied vol.  Also fits the
power-law decay rate of the strike-vs-swap gaps across maturities.

Standard errors are propagated conservatively: the SE of an implied vol is
se_price / vega, and SEs of differences are combined in quadrature even when
the terms share random numbers (which can only overstate the combined SE).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .blackscholes import (
    ConvergenceError,
    NoSolutionError,
    d2,
    implied_vol,
    vega,
    zero_vanna_strike,
)
from .fbm import TimeGrid
from .mcpricer import (
    McConfig,
    PriceEstimate,
    simulate_functionals,
    strike_pricer,
    vol_swap_strike,
)
from .volmodel import ModelParams, PathFunctionals

# A fitted log-gap point must clear the MC noise floor by this factor.
NOISE_FLOOR_MULTIPLE = 3.0
# Gaps at or below the IV-solver tolerance carry no rate information.
SOLVER_FLOOR = 1e-9
# Default ATM bump as a fraction of sigma0 * sqrt(T) (a twentieth of an
# at-the-money standard deviation keeps the bump inside the smile's
# quadratic regime; the Richardson fallback widens it when noise wins).
SKEW_BUMP_FRACTION = 0.05

Pricer = Callable[[float], PriceEstimate]


@dataclass(frozen=True)
class IvPoint:
    """One strike on an implied-vol curve.

    ``error`` is None for a clean inversion; otherwise it carries the
    failure message and ``vol``/``std_error`` are NaN so a single bad
    strike never aborts the rest of the curve.
    """

    log_strike: float
    vol: float
    std_error: float
    error: str | None = None


@dataclass(frozen=True)
class SwapReport:
    """Volatility summaries for one (hurst, maturity, rho) cell.

    ``err_zero_vanna`` and ``err_atmi`` are signed gaps against the
    volatility-swap strike; their SEs combine the two legs in quadrature.
    ``comparator`` is reserved for an externally supplied approximation to
    place alongside the Monte Carlo columns; nothing in this package
    computes it.
    """

    hurst: float
    maturity: float
    rho: float
    vol_swap: float
    vol_swap_se: float
    iv_zero_vanna: float
    iv_zero_vanna_se: float
    atmi: float
    atmi_se: float
    atm_skew: float
    atm_skew_se: float
    err_zero_vanna: float
    err_zero_vanna_se: float
    err_atmi: float
    err_atmi_se: float
    k_hat: float
    zero_vanna_residual: float
    n_paths: int
    seed: int
    comparator: float | None = None

    def __post_init__(self) -> None:
        for name in ("vol_swap", "iv_zero_vanna", "atmi"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0.0):
                raise ValueError(f"{name} must be finite and positive, got {value}")
        for name in ("err_zero_vanna", "err_atmi", "atm_skew"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


@dataclass(frozen=True)
class RateFit:
    """Least-squares fit of log|gap| against log maturity.

    ``inconclusive`` is set when fewer than three maturities clear the
    noise floor; the fit fields are NaN in that case rather than an
    exception, so callers can still report the cell.
    """

    slope: float
    intercept: float
    r_squared: float
    maturities: tuple[float, ...]
    inconclusive: bool = False

    def __post_init__(self) -> None:
        if self.inconclusive:
            return
        if len(self.maturities) < 3:
            raise ValueError("a conclusive fit needs at least 3 maturities")
        if not (0.0 <= self.r_squared <= 1.0 + 1e-12):
            raise ValueError(f"r_squared out of range: {self.r_squared}")


def iv_curve(
    pricer: Pricer,
    x0: float,
    maturity: float,
    strikes: Sequence[float],
) -> list[IvPoint]:
    """Invert a call pricer to implied vols at each log-strike.

    The SE of each vol is the price SE divided by the Black-Scholes vega
    at the fitted vol.  Inversion failures (price outside arbitrage
    bounds, bisection not converging) are captured per strike.
    """
    if maturity <= 0.0:
        raise ValueError(f"maturity must be positive, got {maturity}")
    points: list[IvPoint] = []
    for k in strikes:
        estimate = pricer(float(k))
        try:
            vol = implied_vol(estimate.value, x0, float(k), maturity)
        except (NoSolutionError, ConvergenceError) as exc:
            points.append(IvPoint(float(k), math.nan, math.nan, str(exc)))
            continue
        sensitivity = vega(x0, float(k), vol, maturity)
        se = estimate.std_error / sensitivity if sensitivity > 0.0 else math.inf
        points.append(IvPoint(float(k), float(vol), float(se)))
    return points


def _iv_at(pricer: Pricer, x0: float, k: float, maturity: float) -> tuple[float, float]:
    """Implied vol and its SE at a single log-strike."""
    (point,) = iv_curve(pricer, x0, maturity, [k])
    if point.error is not None:
        raise NoSolutionError(f"implied vol failed at k={k}: {point.error}")
    return point.vol, point.std_error


def atm_skew(
    pricer: Pricer,
    x0: float,
    maturity: float,
    bump: float | None = None,
    sigma0: float | None = None,
) -> tuple[float, float]:
    """Central-difference ATM skew dI/dk and a conservative SE.

    The default bump is SKEW_BUMP_FRACTION * sigma0 * sqrt(T) (sigma0 is
    estimated from the ATM vol when not given).  If the estimate drowns
    in noise (|skew| < 3 SE), the bump is widened to 2h and 4h and the
    two wide-bump estimates are Richardson-combined to cancel the
    leading quadratic bias while keeping the larger denominator.
    """
    if bump is None:
        if sigma0 is None:
            sigma0, _ = _iv_at(pricer, x0, x0, maturity)
        bump = SKEW_BUMP_FRACTION * sigma0 * math.sqrt(maturity)
    if bump <= 0.0:
        raise ValueError(f"bump must be positive, got {bump}")

    def central(h: float) -> tuple[float, float]:
        up_vol, up_se = _iv_at(pricer, x0, x0 + h, maturity)
        dn_vol, dn_se = _iv_at(pricer, x0, x0 - h, maturity)
        slope = (up_vol - dn_vol) / (2.0 * h)
        se = math.hypot(up_se, dn_se) / (2.0 * h)
        return slope, se

    skew, se = central(bump)
    if abs(skew) >= NOISE_FLOOR_MULTIPLE * se or se == 0.0:
        return skew, se
    # Noise-dominated: widen the stencil.  Richardson over h and 2h
    # removes the O(h^2) bias the wider bump would otherwise add.
    wide, wide_se = central(2.0 * bump)
    wider, wider_se = central(4.0 * bump)
    combined = (4.0 * wide - wider) / 3.0
    combined_se = math.hypot(4.0 * wide_se, wider_se) / 3.0
    if combined_se < se:
        return combined, combined_se
    return skew, se


def zero_vanna_report(
    pricer: Pricer,
    funcs: PathFunctionals,
    params: ModelParams,
    x0: float,
    maturity: float,
    config: McConfig,
    comparator: float | None = None,
) -> SwapReport:
    """Assemble the full per-cell report for one simulated maturity.

    ``pricer`` and ``funcs`` must come from the same simulation so the
    swap strike and the implied vols share paths.  The zero-vanna strike
    is located on the curve implied by ``pricer`` and its residual
    |d2(k_hat, I(k_hat))| is recorded (and must be below 1e-8).
    """
    swap = vol_swap_strike(funcs, maturity)

    def curve(k: float) -> float:
        vol, _ = _iv_at(pricer, x0, k, maturity)
        return vol

    k_hat = zero_vanna_strike(curve, x0, maturity)
    iv_zv, iv_zv_se = _iv_at(pricer, x0, k_hat, maturity)
    residual = abs(d2(x0, k_hat, iv_zv, maturity))
    atm_vol, atm_se = _iv_at(pricer, x0, x0, maturity)
    skew, skew_se = atm_skew(pricer, x0, maturity, sigma0=params.sigma0)

    return SwapReport(
        hurst=params.hurst,
        maturity=maturity,
        rho=params.rho,
        vol_swap=swap.value,
        vol_swap_se=swap.std_error,
        iv_zero_vanna=iv_zv,
        iv_zero_vanna_se=iv_zv_se,
        atmi=atm_vol,
        atmi_se=atm_se,
        atm_skew=skew,
        atm_skew_se=skew_se,
        err_zero_vanna=iv_zv - swap.value,
        err_zero_vanna_se=math.hypot(iv_zv_se, swap.std_error),
        err_atmi=atm_vol - swap.value,
        err_atmi_se=math.hypot(atm_se, swap.std_error),
        k_hat=k_hat,
        zero_vanna_residual=residual,
        n_paths=config.n_paths,
        seed=config.seed,
        comparator=comparator,
    )


def simulate_report(
    params: ModelParams,
    x0: float,
    maturity: float,
    n_steps: int,
    config: McConfig,
) -> SwapReport:
    """Simulate one cell end to end and report it.

    Convenience wrapper: runs the path simulation once, then prices and
    inverts on the shared functionals.
    """
    grid = TimeGrid(maturity, n_steps)
    want_terminal = config.estimator == "direct_euler"
    funcs = simulate_functionals(grid, params, config, want_terminal=want_terminal)
    pricer = strike_pricer(
        funcs,
        params,
        x0,
        maturity,
        estimator=config.estimator,
        control_variate=config.control_variate,
    )
    return zero_vanna_report(pricer, funcs, params, x0, maturity, config)


def _fit_rate(
    maturities: np.ndarray, gaps: np.ndarray, gap_ses: np.ndarray
) -> RateFit:
    """Fit log|gap| ~ slope * log T + intercept above the noise floor."""
    usable = np.abs(gaps) > np.maximum(
        NOISE_FLOOR_MULTIPLE * gap_ses, SOLVER_FLOOR
    )
    if int(usable.sum()) < 3:
        return RateFit(
            slope=math.nan,
            intercept=math.nan,
            r_squared=math.nan,
            maturities=tuple(float(t) for t in maturities[usable]),
            inconclusive=True,
        )
    log_t = np.log(maturities[usable])
    log_gap = np.log(np.abs(gaps[usable]))
    slope, intercept = np.polyfit(log_t, log_gap, 1)
    fitted = slope * log_t + intercept
    ss_res = float(np.sum((log_gap - fitted) ** 2))
    ss_tot = float(np.sum((log_gap - log_gap.mean()) ** 2))
    r_squared = 1.0 if ss_tot == 0.0 else max(0.0, 1.0 - ss_res / ss_tot)
    return RateFit(
        slope=float(slope),
        intercept=float(intercept),
        r_squared=float(min(r_squared, 1.0)),
        maturities=tuple(float(t) for t in maturities[usable]),
    )


def convergence_study(
    params: ModelParams,
    x0: float,
    maturities: Sequence[float],
    config: McConfig,
    n_steps: int = 250,
    reports: Sequence[SwapReport] | None = None,
) -> dict[str, RateFit]:
    """Fit the maturity decay rate of both strike-vs-swap gaps.

    Runs one simulation per maturity (same seed: common random numbers
    across maturities keep the gap series smooth) unless precomputed
    ``reports`` for exactly these maturities are supplied.  A maturity
    enters a fit only if its |gap| clears max(3 SE, solver tolerance);
    fewer than three surviving points flags the fit inconclusive.
    """
    mats = np.asarray(sorted(float(t) for t in maturities), dtype=np.float64)
    if mats.size < 3:
        raise ValueError("need at least 3 maturities to fit a rate")
    if np.any(mats <= 0.0) or np.unique(mats).size != mats.size:
        raise ValueError("maturities must be positive and distinct")
    if mats[-1] / mats[0] < 2.0:
        raise ValueError("maturities must span at least a factor of 2")

    if reports is None:
        reports = [
            simulate_report(params, x0, float(t), n_steps, config) for t in mats
        ]
    else:
        reports = sorted(reports, key=lambda r: r.maturity)
        got = np.asarray([r.maturity for r in reports], dtype=np.float64)
        if got.size != mats.size or not np.allclose(got, mats, rtol=0.0, atol=1e-12):
            raise ValueError("supplied reports do not match the maturities")

    fits: dict[str, RateFit] = {}
    for field in ("err_zero_vanna", "err_atmi"):
        gaps = np.asarray([getattr(r, field) for r in reports])
        ses = np.asarray([getattr(r, field + "_se") for r in reports])
        fits[field] = _fit_rate(mats, gaps, ses)
    return fits


def report_as_row(report: SwapReport) -> dict[str, float | int]:
    """Flatten a report to the flat column schema used for CSV output."""
    return {
        "H": report.hurst,
        "T": report.maturity,
        "rho": report.rho,
        "vol_swap": report.vol_swap,
        "vol_swap_se": report.vol_swap_se,
        "iv_zero_vanna": report.iv_zero_vanna,
        "atmi": report.atmi,
        "atm_skew": report.atm_skew,
        "err_zero_vanna": report.err_zero_vanna,
        "err_atmi": report.err_atmi,
        "n_paths": report.n_paths,
        "seed": report.seed,
    }


__all__ = [
    "IvPoint",
    "SwapReport",
    "RateFit",
    "iv_curve",
    "atm_skew",
    "zero_vanna_report",
    "simulate_report",
    "convergence_study",
    "report_as_row",
    "NOISE_FLOOR_MULTIPLE",
    "SOLVER_FLOOR",
    "SKEW_BUMP_FRACTION",
]
