"""Asymptotic bias and variance summaries for the pooled-data estimators.

This module evaluates, numerically, the dominating terms of each
estimator's error expansion, given a data-generating context (mean
function, covariate density, noise variance). The results serve as
analytic oracles for Monte Carlo tests and as the backing of the CLI
theory report.

Conventions shared with the estimator module: beta_ell denotes
m^(ell)(x)/ell!, f is the covariate density, and kernel moments mu_ell
(plain) and nu_ell (squared kernel) come from the kernels module. Pooled
powers of a kernel (for the product-weighted estimator on homogeneous
data) replace every moment by its K^c counterpart.

What is reported per estimator:

  * average weighted, random pooling: the full dominating-bias expansion,
    including the bandwidth-free persistent term that makes the estimator
    inconsistent whenever some pool has more than one member; variance is
    known only up to order, so it is reported as an order tag.
  * product weighted, random pooling (equal pool sizes): leading bias and
    its first correction; variance is an order tag in which the bandwidth
    enters with power equal to the pool size.
  * marginal integration, random pooling: bias identical to the
    individual-data estimator by construction (the same code path is
    used); variance carries the pooling inflation term driven by the
    average noise variance.
  * average and product weighted, homogeneous pooling: bias and variance
    of individual-data form, with plain or pooled-power kernel moments
    respectively; only compact kernels are accepted because the pooled
    power of a non-compact kernel is not a usable kernel here.

The variance sandwich is evaluated in its symmetric form
(inverse, middle, inverse); one displayed equation omits the second
inverse, which is inconsistent with the classical special case it cites
and with the derivation, so the symmetric form is used and the
discrepancy is noted in the summary rather than silently absorbed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import integrate

from .data import Design
from .errors import (
    DivergentMoment,
    SingularMomentMatrix,
    UnsupportedKernel,
    UserInputError,
)
from .estimators import Estimator
from .kernels import KernelKind, compute_moments

__all__ = [
    "TheoryContext",
    "MomentMatrices",
    "PoolConstants",
    "AsymptoticSummary",
    "moment_matrices",
    "pool_constants",
    "covariate_moments",
    "remainder_moments",
    "average_random_summary",
    "average_random_bias_closed_p0",
    "product_random_bias",
    "marginal_random_summary",
    "individual_summary",
    "homogeneous_summary",
    "pseudo_response_mean_shift",
]


# 4th-order central difference stencils, orders 1 to 4, with a relative
# step per order: subtractive cancellation grows like eps / step^order, so
# the step must widen as the order rises or the quotient drowns in roundoff
_FD_STENCILS = {
    1: ((-2, -1, 1, 2), (1.0, -8.0, 8.0, -1.0), 12.0, 1e-4),
    2: ((-2, -1, 0, 1, 2), (-1.0, 16.0, -30.0, 16.0, -1.0), 12.0, 1e-4),
    3: ((-3, -2, -1, 1, 2, 3), (1.0, -8.0, 13.0, -13.0, 8.0, -1.0), 8.0, 5e-3),
    4: ((-3, -2, -1, 0, 1, 2, 3), (-1.0, 12.0, -39.0, 56.0, -39.0, 12.0, -1.0), 6.0, 1e-2),
}


def _finite_difference(fun: Callable[[float], float], x: float, order: int) -> float:
    if order == 0:
        return float(fun(x))
    if order not in _FD_STENCILS:
        raise UserInputError(
            "finite differences cover derivative orders 1 to 4; supply a "
            "closed-form derivative callable for higher orders"
        )
    offsets, coeffs, denom, rel_step = _FD_STENCILS[order]
    step = rel_step * max(1.0, abs(x))
    acc = 0.0
    for k, c in zip(offsets, coeffs):
        acc += c * float(fun(x + k * step))
    return acc / (denom * step**order)


@dataclass(frozen=True, eq=False)
class TheoryContext:
    """Everything the asymptotic formulas need about the data-generating law.

    mean and density are scalar callables. Derivative callables take
    (x, order) and are optional; central finite differences (4th-order
    stencils, step 1e-4 times max(1, |x|)) fill in when they are absent.
    sigma2 may be a constant or a callable; sigma2_bar (its mean over the
    covariate law) is integrated when not supplied. breakpoints lists
    interior points where the density is not smooth, passed to the
    quadrature rule.
    """

    mean: Callable[[float], float]
    density: Callable[[float], float]
    sigma2: Callable[[float], float] | float
    support: tuple[float, float]
    mean_derivative: Callable[[float, int], float] | None = None
    density_derivative: Callable[[float, int], float] | None = None
    sigma2_bar: float | None = None
    breakpoints: tuple[float, ...] = ()
    quad_tol: float = 1e-9
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        a, b = self.support
        if not a < b:
            raise UserInputError("support must be an interval (a, b) with a < b")
        mass = self.expect(lambda s: 1.0)
        if abs(mass - 1.0) > 1e-8:
            raise UserInputError(
                f"the density must integrate to 1 over the support; got {mass!r}"
            )

    # -- derivatives ----------------------------------------------------

    def m(self, x: float) -> float:
        return float(self.mean(x))

    def m_deriv(self, x: float, order: int) -> float:
        if order == 0:
            return self.m(x)
        if self.mean_derivative is not None:
            return float(self.mean_derivative(x, order))
        return _finite_difference(self.mean, x, order)

    def beta(self, x: float, ell: int) -> float:
        """Taylor coefficient m^(ell)(x) / ell!."""
        return self.m_deriv(x, ell) / math.factorial(ell)

    def f(self, x: float) -> float:
        return float(self.density(x))

    def f_deriv(self, x: float, order: int) -> float:
        if order == 0:
            return self.f(x)
        if self.density_derivative is not None:
            return float(self.density_derivative(x, order))
        return _finite_difference(self.density, x, order)

    def sigma2_at(self, x: float) -> float:
        if callable(self.sigma2):
            return float(self.sigma2(x))
        return float(self.sigma2)

    # -- expectations over the covariate law -----------------------------

    def expect(self, fun: Callable[[float], float]) -> float:
        """E fun(X) by adaptive quadrature against the density.

        Raises DivergentMoment when the value is not finite, the error
        estimate misses the mark, or the quadrature routine reports
        probable divergence (heavy tails can otherwise extrapolate to a
        finite-looking number with a deceptively small error estimate).
        """
        a, b = self.support
        integrand = lambda s: float(fun(s)) * float(self.density(s))
        finite = np.isfinite(a) and np.isfinite(b)
        points = [t for t in self.breakpoints if a < t < b] if finite else None
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            value, err = integrate.quad(
                integrand, a, b, epsabs=self.quad_tol, epsrel=0.0,
                limit=400, points=points or None,
            )
        diverged = any("divergent" in str(w.message) for w in caught)
        if diverged or not np.isfinite(value) or err > 1e-6 * max(1.0, abs(value)):
            raise DivergentMoment(
                f"expectation did not converge (value={value!r}, error={err:g}); "
                "the moment may not exist on this support"
            )
        return value

    @property
    def mean_expectation(self) -> float:
        """mu = E m(X), the marginal mean response."""
        if "mu" not in self._cache:
            self._cache["mu"] = self.expect(self.m)
        return self._cache["mu"]

    @property
    def sigma2_mean(self) -> float:
        """Average noise variance over the covariate law."""
        if self.sigma2_bar is not None:
            return float(self.sigma2_bar)
        if not callable(self.sigma2):
            return float(self.sigma2)
        if "s2bar" not in self._cache:
            self._cache["s2bar"] = self.expect(self.sigma2)
        return self._cache["s2bar"]

    def with_quad_tol(self, tol: float) -> "TheoryContext":
        return replace(self, quad_tol=tol)


def covariate_moments(ctx: TheoryContext, x: float, ell_max: int) -> np.ndarray:
    """delta_ell(x) = E (X - x)^ell for ell = 0 .. ell_max.

    The zeroth moment is 1 by definition and is not re-estimated.
    """
    out = np.empty(ell_max + 1)
    out[0] = 1.0
    for ell in range(1, ell_max + 1):
        key = ("delta", x, ell)
        if key not in ctx._cache:
            ctx._cache[key] = ctx.expect(lambda s, e=ell: (s - x) ** e)
        out[ell] = ctx._cache[key]
    return out


def remainder_moments(ctx: TheoryContext, x: float, p: int, ell_max: int) -> np.ndarray:
    """R_{ell,p}(x) = E (X - x)^ell {m(X) - sum_{l<=p} beta_l (X - x)^l}."""
    betas = [ctx.beta(x, ell) for ell in range(p + 1)]

    def r_p(s: float) -> float:
        taylor = 0.0
        for ell, b in enumerate(betas):
            taylor += b * (s - x) ** ell
        return ctx.m(s) - taylor

    out = np.empty(ell_max + 1)
    for ell in range(ell_max + 1):
        key = ("remainder", x, p, ell)
        if key not in ctx._cache:
            ctx._cache[key] = ctx.expect(lambda s, e=ell: (s - x) ** e * r_p(s))
        out[ell] = ctx._cache[key]
    return out


@dataclass(frozen=True)
class PoolConstants:
    """Size-driven constants entering the random-pooling expansions.

    t0[k] averages c_j^-k over pools; t[(k1, k2)] averages
    max(prod_{k=1..k2}(c_j - k), 0) / c_j^k1. With unit pools every t0 is
    1 and every t[(k1, k2)] is 0.
    """

    t0: tuple[float, float, float]
    t: dict[tuple[int, int], float]

    def __getitem__(self, key):
        if isinstance(key, int):
            return self.t0[key]
        return self.t[key]


def pool_constants(pool_sizes) -> PoolConstants:
    c = np.asarray(pool_sizes, dtype=float)
    if c.size == 0 or np.any(c < 1):
        raise UserInputError("pool sizes must be a nonempty sequence of integers >= 1")
    t0 = tuple(float(np.mean(c**-k)) for k in range(3))
    t = {}
    for k1 in (1, 2, 3):
        for k2 in (1, 2, 3):
            prod = np.ones_like(c)
            for k in range(1, k2 + 1):
                prod = prod * (c - k)
            t[(k1, k2)] = float(np.mean(np.maximum(prod, 0.0) / c**k1))
    return PoolConstants(t0=t0, t=t)


@dataclass(frozen=True)
class MomentMatrices:
    """Kernel moment vectors and matrices for polynomial order p.

    mu holds moments of K^power, nu those of K^(2 power); power > 1 is the
    pooled-power variant used by the product-weighted estimator on
    homogeneous data.
    """

    kind: KernelKind
    p: int
    power: int
    mu: tuple[float, ...]
    nu: tuple[float, ...]

    def moment(self, ell: int) -> float:
        return self.mu[ell]

    def mu_star(self, ell: int) -> np.ndarray:
        return np.array(self.mu[ell:ell + self.p + 1])

    def mu_tilde(self, ell: int) -> np.ndarray:
        idx = np.arange(self.p + 1)
        return np.array(self.mu)[idx[:, None] + idx[None, :] + ell]

    def nu_tilde0(self) -> np.ndarray:
        idx = np.arange(self.p + 1)
        return np.array(self.nu)[idx[:, None] + idx[None, :]]


def moment_matrices(kind: KernelKind, p: int, power: int = 1) -> MomentMatrices:
    max_order = 2 * p + 2
    return MomentMatrices(
        kind=kind, p=p, power=power,
        mu=compute_moments(kind, max_order, power=power),
        nu=compute_moments(kind, max_order, power=2 * power),
    )


def _solve(matrix: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    s = np.linalg.svd(matrix, compute_uv=False)
    if s[0] <= 0.0 or s[-1] / s[0] < 1e-13:
        raise SingularMomentMatrix(f"{what} is singular or too ill conditioned to invert")
    return np.linalg.solve(matrix, rhs)


def _basis(p: int, index: int) -> np.ndarray:
    e = np.zeros(p + 1)
    e[index] = 1.0
    return e


@dataclass(frozen=True)
class AsymptoticSummary:
    """Dominating bias and variance description for one estimator at one point."""

    estimator: Estimator
    design: Design
    x: float
    p: int
    h: float
    persistent_bias: float
    leading_bias: float
    variance: float | None
    variance_order: str
    notes: tuple[str, ...] = ()


def average_random_summary(
    ctx: TheoryContext,
    x: float,
    p: int,
    h: float,
    pool_sizes,
    kernel: KernelKind = KernelKind.EPANECHNIKOV,
) -> AsymptoticSummary:
    """Dominating bias expansion of the average-weighted estimator, random pools.

    The h-free persistent term survives any bandwidth sequence unless all
    pools have a single member. The variance constant is not available at
    this level of the expansion, so only its order is reported.
    """
    mm = moment_matrices(kernel, p)
    tc = pool_constants(pool_sizes)
    delta = covariate_moments(ctx, x, 2 * p)
    idx = np.arange(p + 1)
    delta_star = delta[idx]
    delta_tilde = delta[idx[:, None] + idx[None, :]]
    r_star = remainder_moments(ctx, x, p, p)
    r0 = r_star[0]
    f = ctx.f(x)
    f1 = ctx.f_deriv(x, 1)
    f2 = ctx.f_deriv(x, 2)
    mu2 = mm.moment(2)
    e1 = _basis(p, 0)

    m0 = (
        tc[2] * mm.mu_tilde(0)
        + tc[(2, 1)] * (delta_tilde + np.outer(delta_star, mm.mu_star(0))
                        + np.outer(mm.mu_star(0), delta_star))
        + tc[(2, 2)] * np.outer(delta_star, delta_star)
    )
    m1 = tc[2] * mm.mu_tilde(1) + tc[(2, 1)] * (
        np.outer(delta_star, mm.mu_star(1)) + np.outer(mm.mu_star(1), delta_star)
    )
    m2 = (
        tc[2] * mm.mu_tilde(2)
        + tc[(2, 1)] * (mu2 * delta_tilde + np.outer(delta_star, mm.mu_star(2))
                        + np.outer(mm.mu_star(2), delta_star))
        + tc[(2, 2)] * mu2 * np.outer(delta_star, delta_star)
    )
    l0 = tc[(2, 1)] * (r0 * e1 + r_star) + tc[(2, 2)] * r0 * delta_star
    # the beta_2 indicator must cover p <= 1, not just p = 0: that is the
    # choice that reproduces the classical local linear bias when every
    # pool has a single member
    l1 = tc[1] * (
        ctx.beta(x, 1) * f1 * (1.0 if p == 0 else 0.0)
        + ctx.beta(x, 2) * f * (1.0 if p <= 1 else 0.0)
    ) * e1
    l2_parts = 0.5 * f2 * e1
    if p >= 1:
        l2_parts = l2_parts + f1 * _basis(p, 1)
    if p >= 2:
        l2_parts = l2_parts + f * _basis(p, 2)
    l2 = tc[(2, 1)] * r0 * l2_parts
    l3 = tc[(2, 1)] * r_star + tc[(2, 2)] * r0 * delta_star

    m0_inv_l0 = _solve(m0, l0, "the pooled design moment matrix")
    persistent = float(m0_inv_l0[0])
    # the h^2 matrix factor multiplies M0^-1 L0; the squared second
    # derivative of the density appears as printed in the source expansion
    order_h = -h * (f1 / f) * (m1 @ m0_inv_l0)
    matrix_part = (f2**2 / f) * (m1 @ _solve(m0, m1 @ m0_inv_l0, "the pooled design moment matrix")) \
        + 0.5 * f2 * (m2 @ m0_inv_l0)
    order_h2 = (h**2 / f) * (mu2 * (l1 + l2 + 0.5 * f2 * l3) + matrix_part)
    bias = float(_solve(m0, l0 + order_h + order_h2, "the pooled design moment matrix")[0])
    return AsymptoticSummary(
        estimator=Estimator.AVERAGE, design=Design.RANDOM, x=x, p=p, h=h,
        persistent_bias=persistent, leading_bias=bias,
        variance=None, variance_order="1/(J h)",
        notes=("bandwidth-free bias term persists unless all pools have size 1",),
    )


def average_random_bias_closed_p0(
    ctx: TheoryContext,
    x: float,
    h: float,
    pool_sizes,
    kernel: KernelKind = KernelKind.EPANECHNIKOV,
) -> float:
    """Local constant special case of the average-weighted dominating bias.

    Independent closed form used to cross-check the general expansion:
    a size-mix multiple of E{m(X) - m(x)} plus a size-mix multiple of the
    classical local constant bias. The two routes coincide wherever the
    density has zero second derivative at x; elsewhere they differ in an
    h^2 curvature cross-term that this short form drops.
    """
    tc = pool_constants(pool_sizes)
    mu2 = moment_matrices(kernel, 0).moment(2)
    f = ctx.f(x)
    nw = h**2 * mu2 * (ctx.beta(x, 1) * ctx.f_deriv(x, 1) / f + ctx.beta(x, 2))
    return tc[(1, 1)] * (ctx.mean_expectation - ctx.m(x)) + tc[1] * nw


def product_random_bias(
    ctx: TheoryContext,
    x: float,
    p: int,
    h: float,
    c: int,
    kernel: KernelKind = KernelKind.EPANECHNIKOV,
) -> AsymptoticSummary:
    """Leading bias of the product-weighted estimator under random pooling.

    Stated for pools of one common size c. The variance constant is out of
    scope; its order degrades geometrically in c through h^c.
    """
    if c < 1:
        raise UserInputError(f"pool size must be at least 1, got {c}")
    mm = moment_matrices(kernel, p)
    f = ctx.f(x)
    f1 = ctx.f_deriv(x, 1)
    bp1 = ctx.beta(x, p + 1)
    bp2 = ctx.beta(x, p + 2)
    mu0s = mm.mu_star(0)
    a = mm.mu_tilde(0) + (c - 1) * np.outer(mu0s, mu0s)
    b1 = mm.mu_star(p + 1) + (c - 1) * mm.moment(p + 1) * mu0s
    b2 = mm.mu_star(p + 2) + (c - 1) * mm.moment(p + 2) * mu0s
    mid = mm.mu_tilde(1) + (c - 1) * (
        np.outer(mu0s, mm.mu_star(1)) + np.outer(mm.mu_star(1), mu0s)
    )
    a_inv_b1 = _solve(a, b1, "the product-weight moment matrix")
    lead = bp1 * a_inv_b1
    corr = (bp2 * f + bp1 * f1) * _solve(a, b2, "the product-weight moment matrix") \
        - bp1 * f1 * _solve(a, mid @ a_inv_b1, "the product-weight moment matrix")
    bias = h ** (p + 1) * float(lead[0] + (h / f) * corr[0])
    return AsymptoticSummary(
        estimator=Estimator.PRODUCT, design=Design.RANDOM, x=x, p=p, h=h,
        persistent_bias=0.0, leading_bias=bias,
        variance=None, variance_order="1/(J h^c)",
        notes=(f"variance order degrades with pool size through h^{c}",),
    )


def _individual_style_bias(ctx: TheoryContext, x: float, p: int, h: float, mm: MomentMatrices) -> float:
    """Leading bias of a local polynomial fit on unit-level responses.

    Shared verbatim by the individual-data estimator, the marginal
    integration estimator under random pooling, and both homogeneous
    summaries (the latter with pooled-power moments), because the theory
    gives them literally the same expansion.
    """
    f = ctx.f(x)
    f1 = ctx.f_deriv(x, 1)
    bp1 = ctx.beta(x, p + 1)
    bp2 = ctx.beta(x, p + 2)
    mt0 = mm.mu_tilde(0)
    lead = bp1 * _solve(mt0, mm.mu_star(p + 1), "the kernel moment matrix")
    corr = (bp2 * f + bp1 * f1) * _solve(mt0, mm.mu_star(p + 2), "the kernel moment matrix") \
        - bp1 * f1 * _solve(
            mt0, mm.mu_tilde(1) @ _solve(mt0, mm.mu_star(p + 1), "the kernel moment matrix"),
            "the kernel moment matrix",
        )
    return h ** (p + 1) * float(lead[0] + (h / f) * corr[0])


def _variance_sandwich(mm: MomentMatrices) -> float:
    """First diagonal element of (moment matrix)^-1 (squared-kernel matrix) (moment matrix)^-1."""
    mt0 = mm.mu_tilde(0)
    e1 = _basis(mm.p, 0)
    left = _solve(mt0, e1, "the kernel moment matrix")
    return float(left @ mm.nu_tilde0() @ left)


def individual_summary(
    ctx: TheoryContext,
    x: float,
    p: int,
    h: float,
    n_units: int,
    kernel: KernelKind = KernelKind.EPANECHNIKOV,
) -> AsymptoticSummary:
    """Classical local polynomial bias and variance on individual data."""
    mm = moment_matrices(kernel, p)
    bias = _individual_style_bias(ctx, x, p, h, mm)
    variance = ctx.sigma2_at(x) / (n_units * h * ctx.f(x)) * _variance_sandwich(mm)
    return AsymptoticSummary(
        estimator=Estimator.INDIVIDUAL, design=Design.RANDOM, x=x, p=p, h=h,
        persistent_bias=0.0, leading_bias=bias,
        variance=variance, variance_order="1/(N h)",
    )


def marginal_random_summary(
    ctx: TheoryContext,
    x: float,
    p: int,
    h: float,
    n_units: int,
    pool_sizes,
    kernel: KernelKind = KernelKind.EPANECHNIKOV,
) -> AsymptoticSummary:
    """Bias and variance of the marginal-integration estimator, random pools.

    Bias is computed by the same code as the individual estimator (the
    expansions coincide for every pool size). The variance picks up an
    inflation proportional to the average noise variance and the average
    excess pool membership; with equal pools of size c and a constant
    noise variance the inflation ratio over individual data is exactly c.
    """
    sizes = np.asarray(pool_sizes, dtype=float)
    if sizes.size == 0 or np.any(sizes < 1):
        raise UserInputError("pool sizes must be a nonempty sequence of integers >= 1")
    mm = moment_matrices(kernel, p)
    bias = _individual_style_bias(ctx, x, p, h, mm)
    inflation = ctx.sigma2_mean * float(np.sum(sizes * (sizes - 1.0))) / sizes.sum()
    variance = (ctx.sigma2_at(x) + inflation) / (n_units * h * ctx.f(x)) * _variance_sandwich(mm)
    return AsymptoticSummary(
        estimator=Estimator.MARGINAL, design=Design.RANDOM, x=x, p=p, h=h,
        persistent_bias=0.0, leading_bias=bias,
        variance=variance, variance_order="1/(N h)",
    )


def homogeneous_summary(
    ctx: TheoryContext,
    tag: Estimator,
    x: float,
    p: int,
    h: float,
    n_units: int,
    c: int,
    kernel: KernelKind = KernelKind.EPANECHNIKOV,
) -> AsymptoticSummary:
    """Bias and variance under homogeneous (sorted) pooling.

    The average-weighted estimator behaves like the individual one; the
    product-weighted estimator behaves like an individual fit whose kernel
    is the c-th power of the original, entering through its own moments.
    The kernel must vanish outside a bounded window; a non-compact kernel
    raised to a pool power is rejected.
    """
    if tag not in (Estimator.AVERAGE, Estimator.PRODUCT):
        raise UserInputError(
            "homogeneous summaries cover the average and product estimators"
        )
    if not kernel.compact:
        raise UnsupportedKernel(
            f"the {kernel.value} kernel has unbounded support and is not "
            "covered by the homogeneous-pooling theory"
        )
    if c < 1:
        raise UserInputError(f"pool size must be at least 1, got {c}")
    power = 1 if tag is Estimator.AVERAGE else c
    mm = moment_matrices(kernel, p, power=power)
    bias = _individual_style_bias(ctx, x, p, h, mm)
    variance = ctx.sigma2_at(x) / (n_units * h * ctx.f(x)) * _variance_sandwich(mm)
    return AsymptoticSummary(
        estimator=tag, design=Design.HOMOGENEOUS, x=x, p=p, h=h,
        persistent_bias=0.0, leading_bias=bias,
        variance=variance, variance_order="1/(N h)",
        notes=("variance uses the symmetric inverse-sandwich form",),
    )


def pseudo_response_mean_shift(ctx: TheoryContext, x: float, c: int, n_units: int) -> float:
    """Finite-sample conditional mean shift of a pseudo response.

    Estimating the marginal mean from the same data leaves each pseudo
    response with conditional mean m(x) + {mu - m(x)} (c - 1) / N.
    """
    return (ctx.mean_expectation - ctx.m(x)) * (c - 1) / n_units
