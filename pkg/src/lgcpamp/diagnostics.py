"""Chain summaries: moments, quantiles, inefficiency factors, KDE export."""

from __future__ import annotations

import numpy as np
from scipy.stats import gaussian_kde

from .chain import Chain
from .errors import ConfigError, TooShort

__all__ = [
    "inefficiency_factor",
    "summarize",
    "efficiency_table",
    "efficiency_report",
    "density_export",
]


def inefficiency_factor(x: np.ndarray, max_lag: int | None = None) -> float:
    """1 + 2 * sum of autocorrelations up to the first non-positive lag.

    The sum is also truncated at min(1000, len/10) lags and the result is
    floored at 1. Chains shorter than 100 raise TooShort.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    n = len(x)
    if n < 100:
        raise TooShort(f"need at least 100 draws, got {n}")
    if max_lag is None:
        max_lag = min(1000, n // 10)
    d = x - x.mean()
    var = d @ d
    if var == 0.0:
        return 1.0
    total = 0.0
    for lag in range(1, max_lag + 1):
        rho = (d[:-lag] @ d[lag:]) / var
        if rho <= 0.0:
            break
        total += rho
    return max(1.0, 1.0 + 2.0 * total)


def _quantile(x: np.ndarray, q: float) -> float:
    return float(np.quantile(x, q))  # linear interpolation (default)


def _derived_column(chain: Chain, expr: str) -> np.ndarray:
    """Evaluate an arithmetic expression over chain columns, e.g.
    "sigma2*phi". Only column names and basic arithmetic are allowed."""
    env = {name: chain.column(name) for name in chain.columns}
    try:
        out = eval(expr, {"__builtins__": {}}, env)  # noqa: S307
    except Exception as exc:
        raise ConfigError(f"cannot evaluate {expr!r}: {exc}") from None
    return np.broadcast_to(np.asarray(out, dtype=float), (len(chain),))


def summarize(chain: Chain, extra: tuple[str, ...] = ()) -> dict[str, dict]:
    """Per-column posterior mean, stdev, 2.5%/97.5% quantiles and IF.

    extra lists derived quantities as expressions over column names
    (e.g. "sigma2*phi"); they get the same summary treatment.
    """
    out = {}
    for name in list(chain.columns) + list(extra):
        x = (
            chain.column(name)
            if name in chain.columns
            else _derived_column(chain, name)
        )
        out[name] = {
            "mean": float(x.mean()),
            "stdev": float(x.std(ddof=1)),
            "q2.5": _quantile(x, 0.025),
            "q97.5": _quantile(x, 0.975),
            "if": inefficiency_factor(x),
        }
    return out


def efficiency_table(wall_time_s: float, n_retained: int, ifs) -> dict:
    """Cost summary: Time, IF range, Time/I, and (Time/I) x IF range.

    Pure arithmetic on its inputs; (Time/I) x IF is the approximate wall
    time per effectively independent draw.
    """
    ifs = np.asarray(ifs, dtype=float).reshape(-1)
    time_per_draw = wall_time_s / n_retained
    return {
        "wall_time_s": float(wall_time_s),
        "if_min": float(ifs.min()),
        "if_max": float(ifs.max()),
        "time_per_draw_s": time_per_draw,
        "time_per_effective_min_s": time_per_draw * float(ifs.min()),
        "time_per_effective_max_s": time_per_draw * float(ifs.max()),
    }


def efficiency_report(chain: Chain, extra: tuple[str, ...] = ()) -> dict:
    """efficiency_table for a fitted chain, IFs computed per column."""
    stats = summarize(chain, extra)
    ifs = {k: v["if"] for k, v in stats.items()}
    wall = float(chain.meta.get("wall_time_s", np.nan))
    out = efficiency_table(wall, len(chain), list(ifs.values()))
    out["per_column_if"] = ifs
    return out


def density_export(
    x: np.ndarray, n_grid: int = 256
) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian KDE (Silverman bandwidth) evaluated on an even grid.

    The grid spans the sample range padded by one bandwidth on each side;
    the trapezoid integral of the returned density is 1 to within 1e-3.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if len(x) < 100:
        raise TooShort(f"need at least 100 draws, got {len(x)}")
    if np.ptp(x) == 0.0:
        raise ConfigError("need at least two distinct values for a KDE")
    kde = gaussian_kde(x, bw_method="silverman")
    bw = float(np.sqrt(kde.covariance[0, 0]))
    grid = np.linspace(x.min() - bw, x.max() + bw, n_grid)
    dens = kde(grid)
    return grid, dens
