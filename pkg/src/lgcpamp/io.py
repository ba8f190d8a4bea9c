"""File formats and run configuration.

CSV conventions: point patterns are `x,y,label` (label optional, default
1); covariate rasters are `x,y,value` on a regular grid with the grid
geometry inferred from the coordinates; latent-field summaries are
`x,y,component,...`. Pooled latent draws use a small binary container:
magic ``LGCPZ1``, then K, L, n_draws as little-endian int64, then the
draws as row-major float64.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .covariance import ExponentialKernel, LmcSpec
from .domain import CovariateRaster, Domain, PointPattern
from .errors import ConfigError, DimensionMismatch, IoError
from .model import ParamSpace, PriorSpec, factor1_pattern

__all__ = [
    "read_pattern_csv",
    "write_pattern_csv",
    "read_raster_csv",
    "write_field_csv",
    "write_latent_draws",
    "read_latent_draws",
    "RunConfig",
    "load_config",
    "build_covariate",
]

_MAGIC = b"LGCPZ1"


# -- point patterns ------------------------------------------------------


def read_pattern_csv(path, L: int | None = None) -> PointPattern:
    """Load `x,y[,label]` rows; L defaults to the largest label seen."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise IoError(str(exc)) from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IoError(f"{path}: empty pattern file")
        header = [h.strip().lower() for h in header]
        if header[:2] != ["x", "y"] or (
            len(header) > 2 and header[2] != "label"
        ):
            raise IoError(f"{path}: expected header x,y[,label]")
        has_label = len(header) > 2
        pts, labels = [], []
        for row in reader:
            if not row:
                continue
            try:
                pts.append((float(row[0]), float(row[1])))
                labels.append(int(row[2]) if has_label else 1)
            except (ValueError, IndexError):
                raise IoError(f"{path}: malformed row {row!r}") from None
    pts = np.array(pts, dtype=float).reshape(-1, 2)
    labels = np.array(labels, dtype=int)
    if L is None:
        L = int(labels.max(initial=1))
    return PointPattern(pts, labels, L=L)


def write_pattern_csv(path, pattern: PointPattern) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "label"])
        for (x, y), lab in zip(pattern.points, pattern.labels):
            writer.writerow([repr(float(x)), repr(float(y)), int(lab)])


# -- covariate rasters ---------------------------------------------------


def read_raster_csv(path) -> CovariateRaster:
    """Load `x,y,value` rows on a regular grid, inferring the geometry."""
    try:
        data = np.genfromtxt(path, delimiter=",", names=True)
    except OSError as exc:
        raise IoError(str(exc)) from None
    names = data.dtype.names
    if names is None or tuple(n.lower() for n in names) != ("x", "y", "value"):
        raise IoError(f"{path}: expected header x,y,value")
    x, y, v = data["x"], data["y"], data[names[2]]
    if np.isnan(v).any() or np.isnan(x).any() or np.isnan(y).any():
        raise IoError(f"{path}: non-numeric raster entries")
    xs, ys = np.unique(x), np.unique(y)
    if len(xs) * len(ys) != len(v):
        raise IoError(f"{path}: raster rows do not fill a regular grid")
    dx = xs[1] - xs[0] if len(xs) > 1 else 1.0
    dy = ys[1] - ys[0] if len(ys) > 1 else 1.0
    if len(xs) > 1 and not np.allclose(np.diff(xs), dx, rtol=1e-6):
        raise IoError(f"{path}: x coordinates are not evenly spaced")
    if len(ys) > 1 and not np.allclose(np.diff(ys), dy, rtol=1e-6):
        raise IoError(f"{path}: y coordinates are not evenly spaced")
    values = np.full((len(ys), len(xs)), np.nan)
    ix = np.searchsorted(xs, x)
    iy = np.searchsorted(ys, y)
    values[iy, ix] = v
    if np.isnan(values).any():
        raise IoError(f"{path}: duplicate or missing grid cells")
    return CovariateRaster(xs[0], ys[0], dx, dy, values)


def write_field_csv(path, pts: np.ndarray, values: np.ndarray) -> None:
    """Write per-cell field values: `x,y,component,z`, values (L, K)."""
    values = np.atleast_2d(values)
    if values.shape[1] != len(pts):
        raise DimensionMismatch("field width != number of locations")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "component", "z"])
        for comp in range(values.shape[0]):
            for (x, y), z in zip(pts, values[comp]):
                writer.writerow([repr(x), repr(y), comp + 1, repr(z)])


# -- pooled latent draws (binary) ---------------------------------------


def write_latent_draws(path, draws: np.ndarray) -> None:
    """Store pooled draws of shape (n_draws, L, K)."""
    draws = np.asarray(draws, dtype=float)
    if draws.ndim != 3:
        raise DimensionMismatch("draws must be (n_draws, L, K)")
    n, L, K = draws.shape
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(np.array([K, L, n], dtype="<i8").tobytes())
        fh.write(draws.astype("<f8").tobytes())


def read_latent_draws(path) -> np.ndarray:
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise IoError(str(exc)) from None
    with fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise IoError(f"{path}: bad magic, not a latent-draw file")
        dims = np.frombuffer(fh.read(24), dtype="<i8")
        if len(dims) != 3 or (dims <= 0).any():
            raise IoError(f"{path}: truncated or invalid header")
        K, L, n = (int(d) for d in dims)
        body = np.frombuffer(fh.read(), dtype="<f8")
    if body.size != n * L * K:
        raise IoError(f"{path}: payload size does not match header")
    return body.reshape(n, L, K).copy()


# -- configuration -------------------------------------------------------


def build_covariate(spec: dict, base_dir=None):
    """Covariate from its config entry.

    kinds: {"kind": "absdev", "axis": "x"|"y", "center": c} for
    |s_axis - c|; {"kind": "raster", "path": file} for a CSV raster.
    """
    kind = spec.get("kind")
    if kind == "absdev":
        axis = spec.get("axis")
        if axis not in ("x", "y"):
            raise ConfigError(f"absdev axis must be 'x' or 'y', got {axis!r}")
        try:
            center = float(spec["center"])
        except (KeyError, TypeError, ValueError):
            raise ConfigError("absdev covariate needs a numeric center") from None
        if axis == "x":
            return lambda x, y: np.abs(x - center)
        return lambda x, y: np.abs(y - center)
    if kind == "raster":
        path = spec.get("path")
        if not path:
            raise ConfigError("raster covariate needs a path")
        if base_dir is not None:
            import os

            path = os.path.join(base_dir, path)
        return read_raster_csv(path)
    raise ConfigError(f"unknown covariate kind {kind!r}")


@dataclass
class RunConfig:
    """Everything a fit or simulation run needs, parsed from JSON."""

    domain: Domain
    coarse_dims: tuple[int, int]
    fine_dims: tuple[int, int]
    i0: int
    I: int
    n_imp: int
    seed: int | None
    prior: PriorSpec
    L: int
    covariates: list
    space: ParamSpace
    truth: dict = field(default_factory=dict)
    sim_grid: tuple[int, int] = (64, 64)
    raw: dict = field(default_factory=dict)

    def true_model(self):
        """(beta (L, 1+p), kernel) from the `truth` section, for simulate."""
        t = self.truth
        if not t:
            raise ConfigError("config has no 'truth' section")
        beta = np.atleast_2d(np.asarray(t["beta"], dtype=float))
        if beta.shape[0] == 1 and self.L > 1:
            beta = np.repeat(beta, self.L, axis=0)
        if beta.shape != (self.L, 1 + len(self.covariates)):
            raise ConfigError("truth.beta shape != (L, 1 + n_covariates)")
        if "lmc" in t:
            kernel = LmcSpec(
                np.asarray(t["lmc"]["gamma"], dtype=float),
                np.asarray(t["lmc"]["phis"], dtype=float),
            )
        else:
            kernel = ExponentialKernel(
                float(t["kernel"]["sigma2"]), float(t["kernel"]["phi"])
            )
        return beta, kernel


def _dims(cfg: dict, key: str, default=None) -> tuple[int, int]:
    val = cfg.get(key, default)
    if (
        not isinstance(val, (list, tuple))
        or len(val) != 2
        or not all(isinstance(v, int) and v > 0 for v in val)
    ):
        raise ConfigError(f"{key} must be a pair of positive integers")
    return int(val[0]), int(val[1])


def load_config(path, seed_override: int | None = None, base_dir=None) -> RunConfig:
    """Parse and validate a run-config JSON document."""
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise IoError(str(exc)) from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top-level JSON value must be an object")

    dom_cfg = cfg.get("domain", {})
    bounds = dom_cfg.get("bounds", [0.0, 1.0, 0.0, 1.0])
    if not (isinstance(bounds, (list, tuple)) and len(bounds) == 4):
        raise ConfigError("domain.bounds must be [x0, x1, y0, y1]")
    domain = Domain(tuple(float(b) for b in bounds))

    prior_cfg = cfg.get("prior", {})
    allowed = {"beta_var", "phi_lo", "phi_hi"}
    if not set(prior_cfg) <= allowed:
        raise ConfigError(f"unknown prior fields {set(prior_cfg) - allowed}")
    prior = PriorSpec(**{k: float(v) for k, v in prior_cfg.items()})

    model_cfg = cfg.get("model", {})
    L = int(model_cfg.get("L", 1))
    if L < 1:
        raise ConfigError("model.L must be >= 1")
    cov_specs = model_cfg.get("covariates", [])
    covariates = [build_covariate(c, base_dir) for c in cov_specs]

    lmc_cfg = model_cfg.get("lmc")
    if L > 1 and lmc_cfg is None:
        raise ConfigError("model.lmc is required when L > 1")
    if lmc_cfg is not None:
        H = int(lmc_cfg.get("H", L))
        pat_name = lmc_cfg.get("pattern", "lower")
        if pat_name == "factor1":
            pattern = factor1_pattern(L, H)
        elif pat_name == "lower":
            pattern = None
        else:
            raise ConfigError(f"unknown lmc.pattern {pat_name!r}")
        space = ParamSpace(
            n_cov=len(covariates),
            L=L,
            lmc_H=H,
            gamma_pattern=pattern,
            prior=prior,
        )
    else:
        space = ParamSpace(
            n_cov=len(covariates),
            L=1,
            fix_sigma2=model_cfg.get("fix_sigma2"),
            fix_phi=model_cfg.get("fix_phi"),
            prior=prior,
        )

    def _int(key, default):
        v = cfg.get(key, default)
        if not isinstance(v, int) or v < 0:
            raise ConfigError(f"{key} must be a non-negative integer")
        return v

    seed = cfg.get("seed")
    if seed is not None and not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    if seed_override is not None:
        seed = seed_override

    return RunConfig(
        domain=domain,
        coarse_dims=_dims(cfg, "coarse_dims", [10, 10]),
        fine_dims=_dims(cfg, "fine_dims", [2, 2]),
        i0=_int("i0", 1000),
        I=max(_int("I", 5000), 1),
        n_imp=max(_int("n_imp", 1000), 1),
        seed=seed,
        prior=prior,
        L=L,
        covariates=covariates,
        space=space,
        truth=cfg.get("truth", {}),
        sim_grid=_dims(cfg, "sim_grid", [64, 64]),
        raw=cfg,
    )
