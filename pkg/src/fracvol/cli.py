"""Command-line experiment runner.

Sweeps a (hurst, maturity, rho) grid, writes one CSV row per cell plus a
JSON manifest, and prints a human-readable summary in percent units.  The
CSV carries raw full-precision decimals and is byte-identical across
reruns and worker counts: cell seeds derive from grid position, results
are emitted in sorted (rho, H, T) order, and the manifest (which carries
a timestamp) lives in a separate file.

Config file format, overridable by flags::

    # comment
    sigma0 = 0.2
    rho = [0.0, -0.8]
    n_paths = 200000

Exit codes: 0 all cells priced, 1 at least one cell failed (partial CSV
retained, failed cells marked FAILED), 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from . import __version__
from .fbm import TimeGrid
from .mcpricer import (
    VALID_ESTIMATORS,
    VALID_SCHEMES,
    McConfig,
    simulate_functionals,
    strike_pricer,
)
from .swapanalysis import (
    SwapReport,
    convergence_study,
    report_as_row,
    zero_vanna_report,
)
from .volmodel import ModelParams

VALID_MODES = ("tables", "convergence", "single")

CSV_COLUMNS = (
    "H",
    "T",
    "rho",
    "vol_swap",
    "vol_swap_se",
    "iv_zero_vanna",
    "atmi",
    "atm_skew",
    "err_zero_vanna",
    "err_atmi",
    "n_paths",
    "seed",
)

FAILED_TOKEN = "FAILED"

# Spot is normalized: all cells price at log-spot x0 = 0.
X0 = 0.0


class ConfigError(ValueError):
    """Raised for unknown keys, type mismatches, or malformed config."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Full experiment description; every field has a sensible default."""

    sigma0: float = 0.2
    nu: float = 0.4
    rho: tuple[float, ...] = (-0.8, 0.0)
    hurst: tuple[float, ...] = (0.1, 0.3, 0.5, 0.7, 0.9)
    maturities: tuple[float, ...] = (0.25, 0.5, 1.0, 2.0, 3.0)
    n_steps: int = 250
    n_paths: int = 200_000
    seed: int = 1000
    estimator: str = "conditional_mixing"
    scheme: str = "convolution"
    out: str = "results.csv"
    mode: str = "tables"
    workers: int = 1

    def __post_init__(self) -> None:
        if self.sigma0 <= 0.0:
            raise ConfigError(f"key 'sigma0': must be positive, got {self.sigma0}")
        if self.nu < 0.0:
            raise ConfigError(f"key 'nu': must be nonnegative, got {self.nu}")
        for name in ("rho", "hurst", "maturities"):
            values = getattr(self, name)
            if len(values) == 0:
                raise ConfigError(f"key '{name}': list must not be empty")
            if len(set(values)) != len(values):
                raise ConfigError(f"key '{name}': values must be distinct")
        for r in self.rho:
            if not -1.0 <= r <= 1.0:
                raise ConfigError(f"key 'rho': {r} outside [-1, 1]")
        for h in self.hurst:
            if not 0.0 < h <= 1.0:
                raise ConfigError(f"key 'hurst': {h} outside (0, 1]")
        for t in self.maturities:
            if t <= 0.0:
                raise ConfigError(f"key 'maturities': {t} must be positive")
        for name, bound in (("n_steps", 1), ("n_paths", 2), ("workers", 1)):
            if getattr(self, name) < bound:
                raise ConfigError(f"key '{name}': must be at least {bound}")
        if self.seed < 0:
            raise ConfigError(f"key 'seed': must be nonnegative, got {self.seed}")
        if self.estimator not in VALID_ESTIMATORS:
            raise ConfigError(
                f"key 'estimator': must be one of {VALID_ESTIMATORS}, "
                f"got '{self.estimator}'"
            )
        if self.scheme not in VALID_SCHEMES:
            raise ConfigError(
                f"key 'scheme': must be one of {VALID_SCHEMES}, got '{self.scheme}'"
            )
        if self.mode not in VALID_MODES:
            raise ConfigError(
                f"key 'mode': must be one of {VALID_MODES}, got '{self.mode}'"
            )
        if self.mode == "single":
            for name in ("rho", "hurst", "maturities"):
                if len(getattr(self, name)) != 1:
                    raise ConfigError(
                        f"key '{name}': single mode needs exactly one value"
                    )
        if self.mode == "convergence":
            if len(self.maturities) < 3:
                raise ConfigError(
                    "key 'maturities': convergence mode needs at least 3 values"
                )
            if max(self.maturities) / min(self.maturities) < 2.0:
                raise ConfigError(
                    "key 'maturities': convergence mode needs a span of at "
                    "least a factor of 2"
                )


_FLOAT_KEYS = ("sigma0", "nu")
_FLOAT_LIST_KEYS = ("rho", "hurst", "maturities")
_INT_KEYS = ("n_steps", "n_paths", "seed", "workers")
_STR_KEYS = ("estimator", "scheme", "out", "mode")
KNOWN_KEYS = _FLOAT_KEYS + _FLOAT_LIST_KEYS + _INT_KEYS + _STR_KEYS


def _parse_float(key: str, token: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ConfigError(f"key '{key}': expected a number, got '{token}'") from None
    if not math.isfinite(value):
        raise ConfigError(f"key '{key}': value must be finite, got '{token}'")
    return value


def _parse_int(key: str, token: str) -> int:
    # scientific notation is accepted for integer keys when integral
    # (n_paths = 2e5), anything fractional is a type mismatch
    value = _parse_float(key, token)
    if value != int(value):
        raise ConfigError(f"key '{key}': expected an integer, got '{token}'")
    return int(value)


def parse_config(text: str) -> dict[str, object]:
    """Parse ``key = value`` / ``key = [list]`` config text.

    Returns only the keys present; merging with defaults happens in
    build_config.  Unknown keys, duplicate keys, type mismatches, and
    empty lists raise ConfigError naming the offending key.
    """
    parsed: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got '{raw}'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
        if key in parsed:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'")
        if not value:
            raise ConfigError(f"key '{key}': missing value")
        is_list = value.startswith("[") and value.endswith("]")
        if key in _FLOAT_LIST_KEYS:
            if not is_list:
                raise ConfigError(f"key '{key}': expected a [list], got '{value}'")
            tokens = [t.strip() for t in value[1:-1].split(",") if t.strip()]
            if not tokens:
                raise ConfigError(f"key '{key}': list must not be empty")
            parsed[key] = tuple(_parse_float(key, t) for t in tokens)
        elif is_list:
            raise ConfigError(f"key '{key}': expected a scalar, got a list")
        elif key in _FLOAT_KEYS:
            parsed[key] = _parse_float(key, value)
        elif key in _INT_KEYS:
            parsed[key] = _parse_int(key, value)
        else:
            parsed[key] = value
    return parsed


def build_config(
    file_values: dict[str, object] | None = None,
    overrides: dict[str, object] | None = None,
) -> ExperimentConfig:
    """Merge defaults < config file < command-line overrides."""
    merged: dict[str, object] = {}
    merged.update(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    for key in ("rho", "hurst", "maturities"):
        if key in merged:
            merged[key] = tuple(sorted(merged[key]))  # type: ignore[arg-type]
    return ExperimentConfig(**merged)


def _cell_seed(config: ExperimentConfig, h_index: int, t_index: int) -> int:
    # Seeds depend on grid position, not worker scheduling, and are
    # shared across rho so both tables reuse one simulation per (H, T).
    return config.seed * 10_000 + h_index * 100 + t_index


def _cell_rows(
    config: ExperimentConfig, h_index: int, t_index: int
) -> list[tuple[float, SwapReport | None, str | None]]:
    """Price every rho for one (H, T) cell; never raises."""
    hurst = config.hurst[h_index]
    maturity = config.maturities[t_index]
    mc = McConfig(
        n_paths=config.n_paths,
        seed=_cell_seed(config, h_index, t_index),
        scheme=config.scheme,
        estimator=config.estimator,
    )
    grid = TimeGrid(maturity, config.n_steps)
    results: list[tuple[float, SwapReport | None, str | None]] = []
    shared_funcs = None
    for rho in config.rho:
        params = ModelParams(
            sigma0=config.sigma0, nu=config.nu, rho=rho, hurst=hurst
        )
        try:
            if config.estimator == "conditional_mixing":
                # path functionals are rho-free: one simulation per (H, T)
                if shared_funcs is None:
                    shared_funcs = simulate_functionals(grid, params, mc)
                funcs = shared_funcs
            else:
                funcs = simulate_functionals(grid, params, mc, want_terminal=True)
            pricer = strike_pricer(
                funcs,
                params,
                X0,
                maturity,
                estimator=config.estimator,
                control_variate=mc.control_variate,
            )
            report = zero_vanna_report(pricer, funcs, params, X0, maturity, mc)
            results.append((rho, report, None))
        except Exception as exc:
            results.append((rho, None, f"{type(exc).__name__}: {exc}"))
    return results


def _run_cell(args: tuple[ExperimentConfig, int, int]):
    config, h_index, t_index = args
    return h_index, t_index, _cell_rows(config, h_index, t_index)


def _format_csv_value(value: object) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, rows: list[dict[str, object] | None], cells) -> None:
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(CSV_COLUMNS)
        for row, cell in zip(rows, cells):
            if row is None:
                rho, hurst, maturity = cell
                writer.writerow(
                    [
                        _format_csv_value(hurst),
                        _format_csv_value(maturity),
                        _format_csv_value(rho),
                    ]
                    + [FAILED_TOKEN] * (len(CSV_COLUMNS) - 3)
                )
            else:
                writer.writerow(_format_csv_value(row[c]) for c in CSV_COLUMNS)


def _write_manifest(
    csv_path: Path, config: ExperimentConfig, extra: dict[str, object]
) -> Path:
    manifest_path = csv_path.with_suffix(".manifest.json")
    payload: dict[str, object] = {
        "version": __version__,
        "created_at": datetime.now(timezone.utc).isoformat(),
        "config": dataclasses.asdict(config),
    }
    payload.update(extra)
    manifest_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return manifest_path


def _human_summary(reports: dict, cells, failures, stream) -> None:
    for cell in cells:
        rho, hurst, maturity = cell
        rep = reports.get(cell)
        if rep is None:
            print(
                f"H={hurst:g} T={maturity:g} rho={rho:g}: FAILED "
                f"({failures[cell]})",
                file=stream,
            )
            continue
        print(
            f"H={hurst:g} T={maturity:g} rho={rho:g}: "
            f"vol_swap={100 * rep.vol_swap:.2f}% "
            f"iv_zero_vanna={100 * rep.iv_zero_vanna:.2f}% "
            f"atmi={100 * rep.atmi:.2f}% "
            f"skew={rep.atm_skew:+.3f}",
            file=stream,
        )


def run(config: ExperimentConfig, stream=None) -> int:
    """Execute the experiment; returns the process exit code."""
    stream = sys.stdout if stream is None else stream
    tasks = [
        (config, h_index, t_index)
        for h_index in range(len(config.hurst))
        for t_index in range(len(config.maturities))
    ]
    cell_results: dict[tuple[int, int], list] = {}
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            for h_index, t_index, rows in pool.map(_run_cell, tasks):
                cell_results[(h_index, t_index)] = rows
    else:
        for task in tasks:
            h_index, t_index, rows = _run_cell(task)
            cell_results[(h_index, t_index)] = rows

    reports: dict[tuple[float, float, float], SwapReport] = {}
    failures: dict[tuple[float, float, float], str] = {}
    for (h_index, t_index), rows in cell_results.items():
        hurst = config.hurst[h_index]
        maturity = config.maturities[t_index]
        for rho, report, error in rows:
            cell = (rho, hurst, maturity)
            if report is None:
                failures[cell] = error
            else:
                reports[cell] = report

    # emission order is sorted (rho, H, T) regardless of completion order
    cells = sorted(
        (rho, hurst, maturity)
        for rho in config.rho
        for hurst in config.hurst
        for maturity in config.maturities
    )
    csv_rows = [
        report_as_row(reports[cell]) if cell in reports else None for cell in cells
    ]

    csv_path = Path(config.out)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(csv_path, csv_rows, cells)

    extra: dict[str, object] = {}
    if failures:
        extra["failed_cells"] = {
            f"rho={rho:g},H={hurst:g},T={maturity:g}": msg
            for (rho, hurst, maturity), msg in sorted(failures.items())
        }
    if config.mode == "convergence":
        extra["rate_fits"] = _convergence_section(config, reports, stream)
        rates_path = csv_path.with_suffix(".rates.csv")
        _write_rates_csv(rates_path, extra["rate_fits"])
        print(f"wrote rate fits to {rates_path}", file=stream)

    manifest_path = _write_manifest(csv_path, config, extra)
    _human_summary(reports, cells, failures, stream)
    print(
        f"wrote {len(cells)} rows to {csv_path} (manifest: {manifest_path})",
        file=stream,
    )
    if failures:
        print(f"{len(failures)} cell(s) FAILED", file=stream)
        return 1
    return 0


RATES_COLUMNS = (
    "rho",
    "H",
    "series",
    "slope",
    "intercept",
    "r_squared",
    "maturities_used",
    "inconclusive",
)


def _write_rates_csv(path: Path, section: dict[str, object]) -> None:
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(RATES_COLUMNS)
        for label in sorted(section):
            entry = section[label]
            if not isinstance(entry, dict):
                continue
            pairs = dict(part.split("=") for part in label.split(","))
            for series in ("err_zero_vanna", "err_atmi"):
                fit = entry[series]
                writer.writerow(
                    [
                        pairs["rho"],
                        pairs["H"],
                        series,
                        _format_csv_value(fit["slope"]),
                        _format_csv_value(fit["intercept"]),
                        _format_csv_value(fit["r_squared"]),
                        ";".join(repr(t) for t in fit["maturities"]),
                        str(fit["inconclusive"]),
                    ]
                )


def _convergence_section(config, reports, stream) -> dict[str, object]:
    """Fit gap-decay rates per (rho, H) from the already-priced grid."""
    section: dict[str, object] = {}
    for rho in config.rho:
        for hurst in config.hurst:
            series = [
                reports[(rho, hurst, t)]
                for t in config.maturities
                if (rho, hurst, t) in reports
            ]
            label = f"rho={rho:g},H={hurst:g}"
            if len(series) < 3:
                section[label] = "insufficient cells"
                continue
            params = ModelParams(
                sigma0=config.sigma0, nu=config.nu, rho=rho, hurst=hurst
            )
            mats = [rep.maturity for rep in series]
            fits = convergence_study(
                params,
                X0,
                mats,
                McConfig(n_paths=config.n_paths, seed=config.seed),
                n_steps=config.n_steps,
                reports=series,
            )
            entry = {}
            for name, fit in fits.items():
                entry[name] = {
                    "slope": fit.slope,
                    "intercept": fit.intercept,
                    "r_squared": fit.r_squared,
                    "maturities": list(fit.maturities),
                    "inconclusive": fit.inconclusive,
                }
                verdict = (
                    "inconclusive"
                    if fit.inconclusive
                    else f"slope={fit.slope:.3f} r2={fit.r_squared:.3f}"
                )
                print(f"rate {label} {name}: {verdict}", file=stream)
            section[label] = entry
    return section


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fracvol",
        description=(
            "Sweep a rough-volatility experiment grid and report "
            "volatility-swap strikes against zero-vanna and ATM implied vols."
        ),
    )
    parser.add_argument("--config", type=Path, help="config file (key = value)")
    parser.add_argument(
        "--hurst", type=float, nargs="+", help="Hurst exponents in (0, 1]"
    )
    parser.add_argument(
        "--maturities", type=float, nargs="+", help="maturities in years"
    )
    parser.add_argument(
        "--rho", type=float, nargs="+", help="spot-vol correlations in [-1, 1]"
    )
    parser.add_argument("--paths", type=int, dest="n_paths", help="paths per cell")
    parser.add_argument(
        "--steps", type=int, dest="n_steps", help="time steps per maturity"
    )
    parser.add_argument("--seed", type=int, help="base RNG seed")
    parser.add_argument("--estimator", choices=VALID_ESTIMATORS)
    parser.add_argument("--scheme", choices=VALID_SCHEMES)
    parser.add_argument("--out", help="output CSV path")
    parser.add_argument("--mode", choices=VALID_MODES)
    parser.add_argument("--workers", type=int, help="parallel worker processes")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    overrides = {
        "hurst": tuple(args.hurst) if args.hurst else None,
        "maturities": tuple(args.maturities) if args.maturities else None,
        "rho": tuple(args.rho) if args.rho else None,
        "n_paths": args.n_paths,
        "n_steps": args.n_steps,
        "seed": args.seed,
        "estimator": args.estimator,
        "scheme": args.scheme,
        "out": args.out,
        "mode": args.mode,
        "workers": args.workers,
    }
    try:
        file_values = (
            parse_config(args.config.read_text()) if args.config else None
        )
        config = build_config(file_values, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"config error: cannot read {args.config}: {exc}", file=sys.stderr)
        return 2
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
