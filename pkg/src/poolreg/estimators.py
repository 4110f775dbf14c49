"""Local polynomial estimators for individual and pooled response data.

All four estimators minimize a kernel-weighted least squares objective in the
coefficients beta_0..beta_p of a degree-p polynomial centred at the evaluation
point x; the fitted value is beta_0 and ell! * beta_ell estimates the ell-th
derivative of the mean function.

  * individual: one row per unit, row ell-entry (X_i - x)^ell, unit weight
    K_h(X_i - x), response Y_i.
  * average: one row per pool, entry ell the pool average of (X_jk - x)^ell,
    pool weight the pool average of K_h(X_jk - x), response Z_j.
  * product: same rows as average, pool weight the product of the member
    K_h(X_jk - x) values.
  * marginal: the individual fit applied to pseudo responses
    R_j = c_j Z_j - (c_j - 1) mu_hat expanded to every member covariate,
    where mu_hat is the overall per-unit mean response of the full dataset.

Every solve happens in the bandwidth-scaled basis ((X - x)/h)^ell and the
coefficients are rescaled afterwards, which keeps the normal matrix well
conditioned for small h. Singularity is detected from a reciprocal condition
estimate and reported, never papered over with regularization.

Scalar entry points (fit_*) return full coefficient vectors for one point.
The _batch_* helpers evaluate only the fitted value over many points at once
and exist because cross-validation and Monte Carlo loops would otherwise
dominate run time; they support exact leave-one-unit-out and leave-pool-out
downdates of the normal equations.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack

from .errors import NonPositiveBandwidth, SingularLocalSystem, UserInputError
from .data import IndividualDataset, PooledDataset
from .kernels import KernelKind, kernel_eval

__all__ = [
    "Estimator",
    "FitConfig",
    "LocalFit",
    "PseudoData",
    "CurveEstimate",
    "fit_individual",
    "fit_average_weighted",
    "fit_product_weighted",
    "fit_marginal_integration",
    "build_pseudo_data",
    "estimate_curve",
]


class Estimator(enum.Enum):
    """Which estimator a curve or record refers to."""

    INDIVIDUAL = "individual"
    AVERAGE = "average"
    PRODUCT = "product"
    MARGINAL = "marginal"

    @classmethod
    def parse(cls, name: str) -> "Estimator":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise UserInputError(
                f"unknown estimator {name!r}; expected one of "
                + ", ".join(e.value for e in cls)
            ) from None


@dataclass(frozen=True)
class FitConfig:
    """Settings shared by every local fit: order, bandwidth, kernel, tolerance."""

    p: int
    h: float
    kernel: KernelKind = KernelKind.EPANECHNIKOV
    rcond_min: float = 1e-12

    def __post_init__(self):
        if self.p < 0:
            raise UserInputError(f"polynomial order must be >= 0, got {self.p}")
        if not (self.h > 0.0):
            raise NonPositiveBandwidth(f"bandwidth must be positive, got {self.h}")
        if not (0.0 < self.rcond_min < 1.0):
            raise UserInputError("rcond_min must lie strictly between 0 and 1")


@dataclass(frozen=True)
class LocalFit:
    """Solution of one local weighted least squares problem."""

    x: float
    beta: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        beta.flags.writeable = False
        object.__setattr__(self, "beta", beta)

    @property
    def m_hat(self) -> float:
        return float(self.beta[0])

    def derivative(self, ell: int) -> float:
        """Estimate of the ell-th derivative of the mean function at x."""
        return math.factorial(ell) * float(self.beta[ell])


@dataclass(frozen=True)
class PseudoData:
    """Pseudo responses for the marginal-integration estimator.

    Each pool contributes one value R_j = c_j Z_j - (c_j - 1) mu_hat,
    attached to every one of its member covariates. mu_hat is computed once
    from the complete dataset and reused everywhere afterwards, in
    particular inside cross-validation folds.
    """

    mu_hat: float
    r: np.ndarray
    source: PooledDataset

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        r.flags.writeable = False
        object.__setattr__(self, "r", r)

    @property
    def r_flat(self) -> np.ndarray:
        """Pseudo response per individual, aligned with source.x_flat."""
        return np.repeat(self.r, self.source.sizes)


@dataclass(frozen=True)
class CurveEstimate:
    """Fitted values over a grid, failures flagged per point."""

    grid: np.ndarray
    values: np.ndarray
    failed: np.ndarray
    estimator: Estimator
    config: FitConfig = field(repr=False)

    def __post_init__(self):
        for name in ("grid", "values", "failed"):
            arr = np.asarray(getattr(self, name))
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if not (self.grid.size == self.values.size == self.failed.size):
            raise ValueError("grid, values and failed must have equal length")

    @property
    def n_failed(self) -> int:
        return int(self.failed.sum())


def build_pseudo_data(data: PooledDataset) -> PseudoData:
    mu_hat = float(data.sizes @ data.z) / data.n_units
    r = data.sizes * data.z - (data.sizes - 1) * mu_hat
    return PseudoData(mu_hat=mu_hat, r=r, source=data)


# ---------------------------------------------------------------------------
# scalar path: one evaluation point, full coefficient vector, LAPACK condition
# estimate from the factorization actually used for the solve


def _solve_normal_equations(A: np.ndarray, b: np.ndarray, cfg: FitConfig, x: float) -> np.ndarray:
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise SingularLocalSystem(
            f"local system at x={x:g} overflowed (bandwidth too small?)"
        )
    lu, piv, info = lapack.dgetrf(A)
    if info == 0:
        anorm = np.abs(A).sum(axis=0).max()
        rcond, cinfo = lapack.dgecon(lu, anorm, norm="1")
        if cinfo != 0:
            raise SingularLocalSystem(f"condition estimate failed at x={x:g}")
    if info != 0 or rcond < cfg.rcond_min:
        raise SingularLocalSystem(
            f"local system at x={x:g} is singular to tolerance {cfg.rcond_min:g}"
        )
    beta_scaled, info = lapack.dgetrs(lu, piv, b)
    if info != 0:
        raise SingularLocalSystem(f"triangular solve failed at x={x:g}")
    return beta_scaled / cfg.h ** np.arange(cfg.p + 1)


def _fit_rows(rows: np.ndarray, w: np.ndarray, resp: np.ndarray, cfg: FitConfig, x: float) -> LocalFit:
    if not np.any(w > 0.0):
        raise SingularLocalSystem(
            f"every weight is zero at x={x:g}; no data falls in the kernel window"
        )
    wr = rows * w[:, None]
    A = wr.T @ rows
    b = wr.T @ resp
    return LocalFit(x=x, beta=_solve_normal_equations(A, b, cfg, x))


def _unit_rows(x_arr: np.ndarray, cfg: FitConfig, x: float) -> tuple[np.ndarray, np.ndarray]:
    t = (x_arr - x) / cfg.h
    w = kernel_eval(cfg.kernel, t) / cfg.h
    rows = np.vander(t, cfg.p + 1, increasing=True)
    return rows, w


def _pool_rows(
    data: PooledDataset, cfg: FitConfig, x: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-pool design rows plus both weight flavours at one point."""
    t = (data.x_flat - x) / cfg.h
    k = kernel_eval(cfg.kernel, t) / cfg.h
    starts = data.offsets[:-1]
    rows = np.empty((data.n_pools, cfg.p + 1))
    powers = np.ones_like(t)
    for ell in range(cfg.p + 1):
        rows[:, ell] = np.add.reduceat(powers, starts) / data.sizes
        if ell < cfg.p:
            powers = powers * t
    w_avg = np.add.reduceat(k, starts) / data.sizes
    w_prod = np.multiply.reduceat(k, starts)
    return rows, w_avg, w_prod


def fit_individual(data: IndividualDataset, cfg: FitConfig, x: float) -> LocalFit:
    """Classical local polynomial fit on raw (x, y) records."""
    rows, w = _unit_rows(data.x, cfg, x)
    return _fit_rows(rows, w, data.y, cfg, x)


def fit_average_weighted(data: PooledDataset, cfg: FitConfig, x: float) -> LocalFit:
    """Pool-level fit with average design rows and averaged kernel weights."""
    rows, w_avg, _ = _pool_rows(data, cfg, x)
    return _fit_rows(rows, w_avg, data.z, cfg, x)


def fit_product_weighted(data: PooledDataset, cfg: FitConfig, x: float) -> LocalFit:
    """Pool-level fit weighting each pool by the product of member kernels.

    With a compact kernel a single member outside [x - h, x + h] zeroes the
    whole pool's weight, so expect SingularLocalSystem for small bandwidths
    and large pools.
    """
    rows, _, w_prod = _pool_rows(data, cfg, x)
    return _fit_rows(rows, w_prod, data.z, cfg, x)


def fit_marginal_integration(
    data: PooledDataset, cfg: FitConfig, x: float, pseudo: PseudoData | None = None
) -> LocalFit:
    """Individual-style fit on pseudo responses expanded to member covariates."""
    if pseudo is None:
        pseudo = build_pseudo_data(data)
    rows, w = _unit_rows(data.x_flat, cfg, x)
    return _fit_rows(rows, w, pseudo.r_flat, cfg, x)


# ---------------------------------------------------------------------------
# batch path: fitted values over many evaluation points at once


def _batch_solve(A: np.ndarray, b: np.ndarray, rcond_min: float) -> tuple[np.ndarray, np.ndarray]:
    """Solve a stack of small symmetric systems, flagging ill conditioned ones.

    Returns (beta0, failed). Failed systems get a NaN fitted value. The
    reciprocal condition number comes from singular values, which differs
    from the scalar path's 1-norm estimate by at most a modest factor; both
    paths use the same threshold.
    """
    bad = ~(np.isfinite(A).all(axis=(1, 2)) & np.isfinite(b).all(axis=1))
    A = np.where(bad[:, None, None], np.eye(A.shape[1]), A)
    b = np.where(bad[:, None], 0.0, b)
    s = np.linalg.svd(A, compute_uv=False)
    with np.errstate(divide="ignore", invalid="ignore"):
        rcond = s[:, -1] / s[:, 0]
    bad |= ~np.isfinite(rcond) | (rcond < rcond_min)
    A = np.where(bad[:, None, None], np.eye(A.shape[1]), A)
    beta = np.linalg.solve(A, b[..., None])[..., 0]
    values = np.where(bad, np.nan, beta[:, 0])
    return values, bad


def _batch_fit_units(
    x_arr: np.ndarray,
    resp: np.ndarray,
    cfg: FitConfig,
    grid: np.ndarray,
    drop_self: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Individual-style fitted values at each grid point.

    With drop_self=True the grid must be x_arr itself; each point's own
    record is removed from its fit by subtracting its contribution from the
    normal equations. At the point's own covariate the scaled basis is
    (1, 0, ..., 0), so only A[0, 0] and b[0] change.
    """
    q = cfg.p + 1
    t = (x_arr[None, :] - grid[:, None]) / cfg.h
    w = kernel_eval(cfg.kernel, t) / cfg.h
    # moment sums S_q = sum_i w_i t_i^q for q = 0 .. 2p, then b_ell alongside
    n_s = 2 * cfg.p + 1
    moments = np.empty((len(grid), n_s))
    resp_moments = np.empty((len(grid), q))
    powers = w.copy()
    for k in range(n_s):
        moments[:, k] = powers.sum(axis=1)
        if k < q:
            resp_moments[:, k] = (powers * resp[None, :]).sum(axis=1)
        if k + 1 < n_s:
            powers *= t
    idx = np.arange(q)
    A = moments[:, idx[:, None] + idx[None, :]]
    b = resp_moments.copy()
    if drop_self:
        w0 = kernel_eval(cfg.kernel, 0.0) / cfg.h
        A = A.copy()
        A[:, 0, 0] -= w0
        b[:, 0] -= w0 * resp
    return _batch_solve(A, b, cfg.rcond_min)


def _batch_fit_units_drop_group(
    x_arr: np.ndarray,
    resp: np.ndarray,
    cfg: FitConfig,
    grid: np.ndarray,
    starts: np.ndarray,
    drop_group: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Individual-style fits that exclude one whole group per grid point.

    starts delimits contiguous groups of x_arr (as in PooledDataset.offsets
    minus its last entry); drop_group[m] names the group removed from the
    fit at grid[m]. Used by the pool-level cross-validation variant of the
    marginal estimator, where a prediction at a member covariate must not
    see any pseudo point derived from that member's own pool.
    """
    q = cfg.p + 1
    n_s = 2 * cfg.p + 1
    t = (x_arr[None, :] - grid[:, None]) / cfg.h
    w = kernel_eval(cfg.kernel, t) / cfg.h
    m_idx = np.arange(len(grid))
    group_m = np.empty((len(grid), n_s))
    group_b = np.empty((len(grid), q))
    moments = np.empty((len(grid), n_s))
    resp_moments = np.empty((len(grid), q))
    powers = w.copy()
    for k in range(n_s):
        blocks = np.add.reduceat(powers, starts, axis=1)
        moments[:, k] = blocks.sum(axis=1)
        group_m[:, k] = blocks[m_idx, drop_group]
        if k < q:
            yblocks = np.add.reduceat(powers * resp[None, :], starts, axis=1)
            resp_moments[:, k] = yblocks.sum(axis=1)
            group_b[:, k] = yblocks[m_idx, drop_group]
        if k + 1 < n_s:
            powers *= t
    idx = np.arange(q)
    A = moments[:, idx[:, None] + idx[None, :]] - group_m[:, idx[:, None] + idx[None, :]]
    b = resp_moments - group_b
    return _batch_solve(A, b, cfg.rcond_min)


def _batch_fit_pools(
    data: PooledDataset,
    cfg: FitConfig,
    grid: np.ndarray,
    weight: str,
    drop_pool: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Pool-level fitted values at each grid point.

    weight is "average" or "product". drop_pool, when given, holds one pool
    index per grid point whose contribution is removed from that point's
    normal equations (exact rank-one downdate), which is how leave-pool-out
    cross-validation evaluates at member covariates.
    """
    q = cfg.p + 1
    starts = data.offsets[:-1]
    t = (data.x_flat[None, :] - grid[:, None]) / cfg.h
    k = kernel_eval(cfg.kernel, t) / cfg.h
    d = np.empty((len(grid), data.n_pools, q))
    powers = np.ones_like(t)
    for ell in range(q):
        d[:, :, ell] = np.add.reduceat(powers, starts, axis=1) / data.sizes
        if ell + 1 < q:
            powers *= t
    if weight == "average":
        w = np.add.reduceat(k, starts, axis=1) / data.sizes
    elif weight == "product":
        w = np.multiply.reduceat(k, starts, axis=1)
    else:
        raise ValueError(f"unknown weight scheme {weight!r}")
    A = np.einsum("mjl,mjq,mj->mlq", d, d, w, optimize=True)
    b = np.einsum("mjl,mj->ml", d, w * data.z[None, :])
    if drop_pool is not None:
        m_idx = np.arange(len(grid))
        dj = d[m_idx, drop_pool, :]
        wj = w[m_idx, drop_pool]
        A = A - wj[:, None, None] * dj[:, :, None] * dj[:, None, :]
        b = b - (wj * data.z[drop_pool])[:, None] * dj
    return _batch_solve(A, b, cfg.rcond_min)


def _curve_values(
    estimator: Estimator,
    data: IndividualDataset | PooledDataset,
    cfg: FitConfig,
    grid: np.ndarray,
    pseudo: PseudoData | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    if estimator is Estimator.INDIVIDUAL:
        if not isinstance(data, IndividualDataset):
            raise UserInputError("the individual estimator needs unpooled (x, y) data")
        return _batch_fit_units(data.x, data.y, cfg, grid)
    if not isinstance(data, PooledDataset):
        raise UserInputError(f"the {estimator.value} estimator needs pooled data")
    if estimator is Estimator.AVERAGE:
        return _batch_fit_pools(data, cfg, grid, "average")
    if estimator is Estimator.PRODUCT:
        return _batch_fit_pools(data, cfg, grid, "product")
    if pseudo is None:
        pseudo = build_pseudo_data(data)
    return _batch_fit_units(data.x_flat, pseudo.r_flat, cfg, grid)


def estimate_curve(
    estimator: Estimator,
    data: IndividualDataset | PooledDataset,
    cfg: FitConfig,
    grid,
    pseudo: PseudoData | None = None,
) -> CurveEstimate:
    """Fitted values over a grid; points that cannot be fit are flagged.

    A failure at one point (singular or overflowed local system) never
    aborts the rest of the curve. Failed entries hold NaN and are marked in
    the failed mask.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise UserInputError("the evaluation grid must be a nonempty 1-d sequence")
    values, failed = _curve_values(estimator, data, cfg, grid, pseudo=pseudo)
    return CurveEstimate(
        grid=grid, values=values, failed=failed, estimator=estimator, config=cfg
    )
