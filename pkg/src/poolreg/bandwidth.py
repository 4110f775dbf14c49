"""Leave-one-out cross-validation bandwidth selection.

Three criteria, one per pooled estimator:

  * pool-level residual sum of squares for the average-weighted estimator:
    each pool j is left out in turn, the curve is evaluated at that pool's
    member covariates, and the squared gap between Z_j and the average
    prediction is accumulated with multiplicity c_j (the written criterion
    sums over members even though the summand does not depend on them, and
    we keep that literal factor);
  * the same criterion with the product-weighted estimator;
  * a pseudo individual-level criterion for the marginal-integration
    estimator: each single pseudo point is left out and predicted; pseudo
    siblings from the same pool stay in the training set. The pool mean
    adjustment mu_hat is always the full-data value.

Optional trimming restricts which prediction points enter a criterion to
those inside the central 95 percent of the covariate sample (2.5th to
97.5th empirical quantiles, linear interpolation). Trimming never removes
anything from the training side of a fold.

A candidate bandwidth fails when any needed leave-one-out fit is singular;
failed candidates are dropped from the argmin. Ties pick the smallest
bandwidth. If every candidate fails, NoValidBandwidth is raised.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Design, IndividualDataset, PooledDataset
from .errors import NoValidBandwidth, TooFewRecords, UserInputError
from .estimators import (
    Estimator,
    FitConfig,
    PseudoData,
    build_pseudo_data,
    _batch_fit_pools,
    _batch_fit_units,
    _batch_fit_units_drop_group,
)

__all__ = [
    "CvTrace",
    "FoldFailure",
    "cv_rss_pool",
    "cv_prss_pseudo",
    "default_h_grid",
    "select_bandwidth",
    "trim_bounds_for",
]


@dataclass(frozen=True)
class FoldFailure:
    """One leave-one-out fit that could not be computed (recorded, not raised)."""

    h: float
    pool_index: int
    x: float
    reason: str


@dataclass(frozen=True)
class CvTrace:
    """Criterion values over a bandwidth grid and the winning bandwidth."""

    estimator: Estimator
    criterion_kind: str
    h_grid: np.ndarray
    criterion: np.ndarray
    chosen_h: float
    trim_bounds: tuple[float, float] | None
    failures: tuple[FoldFailure, ...]

    def __post_init__(self):
        for name in ("h_grid", "criterion"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)


def trim_bounds_for(x_values: np.ndarray) -> tuple[float, float]:
    """Central 95 percent of the covariate sample."""
    lo, hi = np.quantile(np.asarray(x_values, dtype=float), [0.025, 0.975])
    return float(lo), float(hi)


def default_h_grid(x_values, n: int = 30) -> np.ndarray:
    """Geometric grid from 1.5x the mean nearest-neighbor spacing to half the range.

    The lower end keeps at least a couple of points in most kernel windows;
    the upper end approaches a global polynomial fit.
    """
    x = np.sort(np.asarray(x_values, dtype=float))
    if x.size < 2:
        raise TooFewRecords("need at least 2 covariate values to build a bandwidth grid")
    span = x[-1] - x[0]
    if span <= 0.0:
        raise UserInputError("all covariate values are identical; no usable bandwidth grid")
    gaps = np.diff(x)
    nearest = np.minimum(np.r_[gaps, np.inf], np.r_[np.inf, gaps])
    lower = 1.5 * float(nearest.mean())
    upper = 0.5 * span
    if not lower > 0.0:
        lower = upper / n
    if upper <= lower:
        upper = 2.0 * lower
    return np.geomspace(lower, upper, n)


def _as_unit_pools(data: IndividualDataset) -> PooledDataset:
    return PooledDataset(
        z=data.y, sizes=np.ones(data.n_units, dtype=np.int64),
        x_flat=data.x, design=Design.EXTERNAL,
    )


def _pool_criterion_detail(
    pooled: PooledDataset,
    weight: str,
    cfg: FitConfig,
    bounds: tuple[float, float] | None,
) -> tuple[float, list[FoldFailure]]:
    grid = pooled.x_flat
    values, failed = _batch_fit_pools(
        pooled, cfg, grid, weight, drop_pool=pooled.member_pool_index
    )
    return _aggregate_pool_residuals(pooled, cfg, grid, values, failed, bounds)


def _marginal_pool_criterion_detail(
    pooled: PooledDataset,
    pseudo: PseudoData,
    cfg: FitConfig,
    bounds: tuple[float, float] | None,
) -> tuple[float, list[FoldFailure]]:
    grid = pooled.x_flat
    values, failed = _batch_fit_units_drop_group(
        pooled.x_flat, pseudo.r_flat, cfg, grid,
        pooled.offsets[:-1], pooled.member_pool_index,
    )
    return _aggregate_pool_residuals(pooled, cfg, grid, values, failed, bounds)


def _aggregate_pool_residuals(
    pooled: PooledDataset,
    cfg: FitConfig,
    grid: np.ndarray,
    values: np.ndarray,
    failed: np.ndarray,
    bounds: tuple[float, float] | None,
) -> tuple[float, list[FoldFailure]]:
    needed = _in_bounds(grid, bounds)
    bad = failed & needed
    if bad.any():
        failures = [
            FoldFailure(cfg.h, int(pooled.member_pool_index[i]), float(grid[i]),
                        "leave-pool-out fit singular at a member covariate")
            for i in np.flatnonzero(bad)
        ]
        return np.nan, failures
    starts = pooled.offsets[:-1]
    counts = np.add.reduceat(needed.astype(float), starts)
    sums = np.add.reduceat(np.where(needed, values, 0.0), starts)
    include = counts > 0
    inner = sums[include] / counts[include]
    resid = pooled.z[include] - inner
    # literal criterion: the summand is member-free, so each pool counts c_j times
    value = float(pooled.sizes[include] @ (resid * resid))
    return value, []


def _pseudo_criterion_detail(
    pooled: PooledDataset,
    pseudo: PseudoData,
    cfg: FitConfig,
    bounds: tuple[float, float] | None,
) -> tuple[float, list[FoldFailure]]:
    r_flat = pseudo.r_flat
    values, failed = _batch_fit_units(
        pooled.x_flat, r_flat, cfg, pooled.x_flat, drop_self=True
    )
    needed = _in_bounds(pooled.x_flat, bounds)
    bad = failed & needed
    if bad.any():
        failures = [
            FoldFailure(cfg.h, int(pooled.member_pool_index[i]), float(pooled.x_flat[i]),
                        "leave-one-pseudo-point-out fit singular")
            for i in np.flatnonzero(bad)
        ]
        return np.nan, failures
    resid = np.where(needed, r_flat - values, 0.0)
    return float(resid @ resid), []


def _in_bounds(x: np.ndarray, bounds: tuple[float, float] | None) -> np.ndarray:
    if bounds is None:
        return np.ones(x.size, dtype=bool)
    a, b = bounds
    return (x >= a) & (x <= b)


def cv_rss_pool(
    data: PooledDataset,
    tag: Estimator,
    base_cfg: FitConfig,
    h: float,
    trim_bounds: tuple[float, float] | None = None,
) -> float:
    """Pool-level leave-one-out criterion at a single bandwidth.

    Returns NaN when some needed leave-pool-out fit fails; see
    select_bandwidth for the fold failure records.
    """
    if tag not in (Estimator.AVERAGE, Estimator.PRODUCT):
        raise UserInputError("cv_rss_pool applies to the average or product estimator")
    if data.n_pools < 2:
        raise TooFewRecords("leave-one-pool-out needs at least 2 pools")
    cfg = replace(base_cfg, h=h)
    weight = "average" if tag is Estimator.AVERAGE else "product"
    value, _ = _pool_criterion_detail(data, weight, cfg, trim_bounds)
    return value


def cv_prss_pseudo(
    data: PooledDataset,
    base_cfg: FitConfig,
    h: float,
    trim_bounds: tuple[float, float] | None = None,
    pseudo: PseudoData | None = None,
) -> float:
    """Pseudo individual-level leave-one-out criterion at a single bandwidth."""
    if data.n_units < 2:
        raise TooFewRecords("leave-one-out needs at least 2 records")
    if pseudo is None:
        pseudo = build_pseudo_data(data)
    cfg = replace(base_cfg, h=h)
    value, _ = _pseudo_criterion_detail(data, pseudo, cfg, trim_bounds)
    return value


def select_bandwidth(
    data: IndividualDataset | PooledDataset,
    tag: Estimator,
    base_cfg: FitConfig,
    grid=None,
    trim: bool = True,
    criterion: str = "pseudo",
) -> CvTrace:
    """Pick the bandwidth minimizing the estimator's cross-validation criterion.

    The h of base_cfg is ignored; every other field (order, kernel,
    condition threshold) is used as given. With trim=True prediction points
    outside the central 95 percent of the covariate sample are skipped.
    For the marginal estimator, criterion picks between the recommended
    "pseudo" (leave one pseudo point out) and the pool-level "pool"
    alternative (leave the whole pool out, residual against Z_j).
    Individual data are handled as size-1 pools, which makes the pool
    criterion the classical leave-one-out residual sum of squares.
    """
    if isinstance(data, IndividualDataset):
        if tag is not Estimator.INDIVIDUAL:
            raise UserInputError(f"the {tag.value} estimator needs pooled data")
        pooled = _as_unit_pools(data)
        tag_effective = Estimator.AVERAGE
    else:
        if tag is Estimator.INDIVIDUAL:
            raise UserInputError("the individual estimator needs unpooled (x, y) data")
        pooled = data
        tag_effective = tag
    if criterion not in ("pseudo", "pool"):
        raise UserInputError(f"unknown cv criterion {criterion!r}; use 'pseudo' or 'pool'")
    if pooled.n_pools < 2:
        raise TooFewRecords("leave-one-out needs at least 2 pools")

    h_grid = default_h_grid(pooled.x_flat) if grid is None else np.sort(
        np.asarray(grid, dtype=float)
    )
    if h_grid.size == 0:
        raise UserInputError("the bandwidth grid is empty")
    if not np.all(h_grid > 0.0):
        raise UserInputError("bandwidth candidates must all be positive")

    bounds = trim_bounds_for(pooled.x_flat) if trim else None
    pseudo = build_pseudo_data(pooled) if tag_effective is Estimator.MARGINAL else None

    values = np.empty(h_grid.size)
    failures: list[FoldFailure] = []
    for i, h in enumerate(h_grid):
        cfg = replace(base_cfg, h=float(h))
        if tag_effective in (Estimator.AVERAGE, Estimator.PRODUCT):
            weight = "average" if tag_effective is Estimator.AVERAGE else "product"
            value, fails = _pool_criterion_detail(pooled, weight, cfg, bounds)
        elif criterion == "pseudo":
            value, fails = _pseudo_criterion_detail(pooled, pseudo, cfg, bounds)
        else:
            value, fails = _marginal_pool_criterion_detail(pooled, pseudo, cfg, bounds)
        values[i] = value
        failures.extend(fails)

    finite = np.isfinite(values)
    if not finite.any():
        raise NoValidBandwidth(
            f"all {h_grid.size} candidate bandwidths failed cross-validation"
        )
    best = np.flatnonzero(finite & (values == values[finite].min()))[0]
    kind = "pool" if tag_effective is not Estimator.MARGINAL else criterion
    return CvTrace(
        estimator=tag,
        criterion_kind=kind,
        h_grid=h_grid,
        criterion=values,
        chosen_h=float(h_grid[best]),
        trim_bounds=bounds,
        failures=tuple(failures),
    )
