"""Base probability models: densities, partial moments, arbitrage checks.

Every prior exposes ``partial_moment(a, b, n)`` (integral of x^n over
[a, b]), a shifted variant used to integrate piecewise polynomials in
local coordinates, and ``piece_integral`` consumed by the B-spline Gram
and moment assembly.  Gaussian and lognormal moments are closed form;
the SSVI surface model integrates by adaptive quadrature in log-moneyness.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import Callable

import numpy as np
from scipy.special import ndtr

from volspline.bspline import gauss_legendre_rule

__all__ = [
    "PriorError",
    "BachelierPrior",
    "LogNormalPrior",
    "SSVIParams",
    "SSVISlice",
    "partial_moment",
    "ssvi_total_variance",
    "ssvi_density",
    "validate_ssvi",
    "adaptive_quad",
    "prior_from_json",
]

_SQRT2PI = np.sqrt(2.0 * np.pi)


class PriorError(ValueError):
    """Invalid prior parameters or integration request."""


def _phi(z):
    return np.exp(-0.5 * z * z) / _SQRT2PI


def _gauss_power_moments(alpha: float, beta: float, nmax: int) -> np.ndarray:
    """Integrals of z^n against the standard normal over [alpha, beta]."""
    out = np.empty(nmax + 1)
    pa = _phi(alpha) if np.isfinite(alpha) else 0.0
    pb = _phi(beta) if np.isfinite(beta) else 0.0
    ca = ndtr(alpha) if np.isfinite(alpha) else (0.0 if alpha < 0 else 1.0)
    cb = ndtr(beta) if np.isfinite(beta) else (0.0 if beta < 0 else 1.0)
    out[0] = cb - ca
    if nmax >= 1:
        out[1] = pa - pb
    for n in range(2, nmax + 1):
        ta = alpha ** (n - 1) * pa if np.isfinite(alpha) else 0.0
        tb = beta ** (n - 1) * pb if np.isfinite(beta) else 0.0
        out[n] = (n - 1) * out[n - 2] + ta - tb
    return out


@dataclass(frozen=True)
class BachelierPrior:
    """Normal law in price (or any linear) units."""

    mean: float
    variance: float

    def __post_init__(self) -> None:
        if self.variance <= 0.0:
            raise PriorError("variance must be positive")

    @property
    def sigma(self) -> float:
        return float(np.sqrt(self.variance))

    def density(self, x):
        x = np.asarray(x, dtype=float)
        return _phi((x - self.mean) / self.sigma) / self.sigma

    def cdf(self, x):
        return ndtr((np.asarray(x, dtype=float) - self.mean) / self.sigma)

    def partial_moment(self, a: float, b: float, n: int) -> float:
        return self.shifted_partial_moment(a, b, n, 0.0)

    def shifted_partial_moment(self, a: float, b: float, n: int, center: float) -> float:
        """Integral of (x - center)^n over [a, b]."""
        if a > b:
            raise PriorError("integration bounds out of order")
        if n < 0:
            raise PriorError("moment degree must be nonnegative")
        s = self.sigma
        alpha = (a - self.mean) / s if np.isfinite(a) else -np.inf
        beta = (b - self.mean) / s if np.isfinite(b) else np.inf
        mom = _gauss_power_moments(alpha, beta, n)
        shift = self.mean - center
        total = 0.0
        for j in range(n + 1):
            total += comb(n, j) * shift ** (n - j) * s**j * mom[j]
        return float(total)

    def piece_integral(self, a: float, b: float, coeffs, ref: float) -> float:
        total = 0.0
        for d, c in enumerate(np.asarray(coeffs, dtype=float)):
            if c != 0.0:
                total += c * self.shifted_partial_moment(a, b, d, ref)
        return total

    def tilted(self, coef: float) -> tuple[float, "BachelierPrior"]:
        """Factor and law such that e^{coef x} dQ = factor dQ'."""
        factor = float(np.exp(coef * self.mean + 0.5 * coef**2 * self.variance))
        return factor, BachelierPrior(self.mean + coef * self.variance, self.variance)

    def mean_value(self) -> float:
        return self.mean


@dataclass(frozen=True)
class LogNormalPrior:
    """Driftless lognormal with the stated forward: E[S] = forward exactly."""

    forward: float
    total_variance: float

    def __post_init__(self) -> None:
        if self.forward <= 0.0:
            raise PriorError("forward must be positive")
        if self.total_variance < 0.0:
            raise PriorError("total variance must be nonnegative")

    def log_law(self) -> BachelierPrior:
        """Law of log(S / forward)."""
        w = self.total_variance
        return BachelierPrior(-0.5 * w, w if w > 0 else 1e-300)

    def density(self, x):
        x = np.asarray(x, dtype=float)
        w = self.total_variance
        if w == 0.0:
            raise PriorError("degenerate lognormal has no density")
        z = (np.log(x / self.forward) + 0.5 * w) / np.sqrt(w)
        return _phi(z) / (x * np.sqrt(w))

    def partial_moment(self, a: float, b: float, n: int) -> float:
        if a > b:
            raise PriorError("integration bounds out of order")
        if n < 0:
            raise PriorError("moment degree must be nonnegative")
        a = max(a, 0.0)
        b = max(b, 0.0)
        w = self.total_variance
        F = self.forward
        if w == 0.0:
            return F**n if a <= F <= b else 0.0
        sq = np.sqrt(w)

        def z(x):
            if x <= 0.0:
                return -np.inf
            if not np.isfinite(x):
                return np.inf
            return (np.log(x / F) + 0.5 * w) / sq

        za, zb = z(a), z(b)
        lo = ndtr(za - n * sq) if np.isfinite(za) else (0.0 if za < 0 else 1.0)
        hi = ndtr(zb - n * sq) if np.isfinite(zb) else (0.0 if zb < 0 else 1.0)
        return float(F**n * np.exp(0.5 * n * (n - 1) * w) * (hi - lo))

    def shifted_partial_moment(self, a: float, b: float, n: int, center: float) -> float:
        total = 0.0
        for j in range(n + 1):
            total += comb(n, j) * (-center) ** (n - j) * self.partial_moment(a, b, j)
        return float(total)

    def piece_integral(self, a: float, b: float, coeffs, ref: float) -> float:
        total = 0.0
        for d, c in enumerate(np.asarray(coeffs, dtype=float)):
            if c != 0.0:
                total += c * self.shifted_partial_moment(a, b, d, ref)
        return total

    def mean_value(self) -> float:
        return self.forward


# ---------------------------------------------------------------------------
# SSVI total-variance surface
# ---------------------------------------------------------------------------

def _interp_curve(curve, t: float) -> float:
    if callable(curve):
        return float(curve(t))
    if np.isscalar(curve):
        return float(curve)
    pts = np.asarray(curve, dtype=float)
    return float(np.interp(t, pts[:, 0], pts[:, 1]))


@dataclass(frozen=True)
class SSVIParams:
    """Five-parameter global total-variance surface.

    Time dependence is linear, ``theta(t) = K t`` and ``delta(t) = C t``,
    and the skew function is the power law ``phi(theta) = eta theta^-gamma``.
    ``forward_curve`` maps maturity to forward; a scalar means a flat curve.
    """

    C: float
    K: float
    rho: float
    eta: float
    gamma: float
    forward_curve: object = 1.0

    def __post_init__(self) -> None:
        if self.C < 0.0 or self.K <= 0.0 or self.eta <= 0.0:
            raise PriorError("C must be >= 0 and K, eta > 0")
        if not -1.0 < self.rho < 1.0:
            raise PriorError("rho must lie in (-1, 1)")
        if not 0.0 < self.gamma < 1.0:
            raise PriorError("gamma must lie in (0, 1)")

    def theta(self, t: float) -> float:
        return self.K * t

    def delta(self, t: float) -> float:
        return self.C * t

    def phi(self, theta: float) -> float:
        return self.eta * theta ** (-self.gamma)

    def forward(self, t: float) -> float:
        return _interp_curve(self.forward_curve, t)


def ssvi_total_variance(p: SSVIParams, t: float, k):
    """Total implied variance at maturity t and log-moneyness k."""
    if t <= 0.0:
        raise PriorError("maturity must be positive")
    k = np.asarray(k, dtype=float)
    th = p.theta(t)
    z = p.phi(th)
    root = np.sqrt((z * k + p.rho) ** 2 + (1.0 - p.rho**2))
    out = p.delta(t) + 0.5 * th * (1.0 + z * p.rho * k + root)
    return float(out) if out.ndim == 0 else out


def _ssvi_w_derivs(p: SSVIParams, t: float, k):
    k = np.asarray(k, dtype=float)
    th = p.theta(t)
    z = p.phi(th)
    root = np.sqrt((z * k + p.rho) ** 2 + (1.0 - p.rho**2))
    w = p.delta(t) + 0.5 * th * (1.0 + z * p.rho * k + root)
    w1 = 0.5 * th * (z * p.rho + z * (z * k + p.rho) / root)
    w2 = 0.5 * th * z**2 * (1.0 - p.rho**2) / root**3
    return w, w1, w2


def _ssvi_g(p: SSVIParams, t: float, k):
    w, w1, w2 = _ssvi_w_derivs(p, t, k)
    return (1.0 - k * w1 / (2.0 * w)) ** 2 - 0.25 * w1**2 * (1.0 / w + 0.25) + 0.5 * w2, w


def ssvi_logm_density(p: SSVIParams, t: float, k):
    """Risk-neutral density of log-moneyness log(S_t / F_t)."""
    g, w = _ssvi_g(p, t, k)
    sq = np.sqrt(w)
    dm = -np.asarray(k, dtype=float) / sq - 0.5 * sq
    return g / (_SQRT2PI * sq) * np.exp(-0.5 * dm**2)


def ssvi_density(p: SSVIParams, t: float, x):
    """Risk-neutral density of the spot at maturity t."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0.0):
        raise PriorError("spot density is defined for positive arguments")
    F = p.forward(t)
    k = np.log(x / F)
    g, _ = _ssvi_g(p, t, k)
    if np.any(g < -1e-12):
        raise PriorError("negative density factor: parameters admit butterfly arbitrage")
    out = ssvi_logm_density(p, t, k) / x
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ValidationReport:
    passed: bool
    checks: tuple[tuple[str, bool, float], ...]  # (name, ok, worst margin)

    def __str__(self) -> str:
        lines = [f"{'PASS' if ok else 'FAIL'} {name}: worst margin {m:.3e}" for name, ok, m in self.checks]
        return "\n".join(lines)


def validate_ssvi(p: SSVIParams, t_range: tuple[float, float], n_grid: int = 200) -> ValidationReport:
    """Static-arbitrage report over a maturity range.

    Butterfly conditions are evaluated on a theta grid covering twice the
    range implied by the maturities; calendar conditions follow from the
    linear time parameterization and the power-law skew.
    """
    t0, t1 = t_range
    if not (0.0 < t0 <= t1):
        raise PriorError("maturity range must be positive and ordered")
    thetas = np.linspace(p.theta(t0) * 0.5, p.theta(t1) * 2.0, n_grid)
    thetas = thetas[thetas > 0.0]
    phi = p.eta * thetas ** (-p.gamma)
    b1 = 4.0 - thetas * phi * (1.0 + abs(p.rho))
    b2 = 4.0 - thetas * phi**2 * (1.0 + abs(p.rho))
    dtheta_thetaphi = (1.0 - p.gamma) * p.eta * thetas ** (-p.gamma)
    cal_hi = (1.0 + np.sqrt(1.0 - p.rho**2)) * phi / p.rho**2 - dtheta_thetaphi
    checks = [
        ("butterfly: theta*phi*(1+|rho|) < 4", bool(np.all(b1 > 0.0)), float(b1.min())),
        ("butterfly: theta*phi^2*(1+|rho|) <= 4", bool(np.all(b2 >= 0.0)), float(b2.min())),
        ("calendar: theta nondecreasing", p.K >= 0.0, float(p.K)),
        ("calendar: delta nonnegative and nondecreasing", p.C >= 0.0, float(p.C)),
        ("calendar: d(theta*phi)/dtheta >= 0", bool(np.all(dtheta_thetaphi >= 0.0)), float(dtheta_thetaphi.min())),
        ("calendar: d(theta*phi)/dtheta upper bound", bool(np.all(cal_hi >= 0.0)), float(cal_hi.min())),
    ]
    return ValidationReport(passed=all(ok for _, ok, _ in checks), checks=tuple(checks))


@dataclass(frozen=True)
class SSVISlice:
    """Fixed-maturity marginal of the SSVI surface, integrated numerically."""

    params: SSVIParams
    maturity: float
    tol: float = 1e-12

    def __post_init__(self) -> None:
        if self.maturity <= 0.0:
            raise PriorError("maturity must be positive")

    @property
    def forward(self) -> float:
        return self.params.forward(self.maturity)

    def density(self, x):
        return ssvi_density(self.params, self.maturity, x)

    def logm_density(self, k):
        return ssvi_logm_density(self.params, self.maturity, k)

    def _k_range(self) -> tuple[float, float]:
        w0 = ssvi_total_variance(self.params, self.maturity, 0.0)
        half = 10.0 * np.sqrt(w0)
        return -half, half

    def partial_moment(self, a: float, b: float, n: int) -> float:
        """Integral of x^n dQ over [a, b], by quadrature in log-moneyness."""
        if a > b:
            raise PriorError("integration bounds out of order")
        F = self.forward
        lo, hi = self._k_range()
        ka = np.log(max(a, 0.0) / F) if a > 0.0 else -np.inf
        kb = np.log(b / F) if (np.isfinite(b) and b > 0.0) else np.inf
        lo2, hi2 = max(lo, ka), min(hi, kb)
        if hi2 <= lo2:
            return 0.0
        fn = lambda k: F**n * np.exp(n * k) * self.logm_density(k)
        scale = max(F**n, 1.0)
        val = adaptive_quad(fn, lo2, hi2, self.tol * scale)
        # extend the tails until the increments fall below tolerance
        step = 0.5 * (hi - lo)
        left, right = lo2, hi2
        while left > ka and left > lo - 40.0:
            inc = adaptive_quad(fn, max(left - step, ka, lo - 40.0), left, self.tol * scale)
            val += inc
            left = max(left - step, ka, lo - 40.0)
            if abs(inc) < self.tol * scale:
                break
        while right < kb and right < hi + 40.0:
            inc = adaptive_quad(fn, right, min(right + step, kb, hi + 40.0), self.tol * scale)
            val += inc
            right = min(right + step, kb, hi + 40.0)
            if abs(inc) < self.tol * scale:
                break
        return float(val)

    def shifted_partial_moment(self, a: float, b: float, n: int, center: float) -> float:
        total = 0.0
        for j in range(n + 1):
            total += comb(n, j) * (-center) ** (n - j) * self.partial_moment(a, b, j)
        return float(total)

    def piece_integral(self, a: float, b: float, coeffs, ref: float) -> float:
        total = 0.0
        for d, c in enumerate(np.asarray(coeffs, dtype=float)):
            if c != 0.0:
                total += c * self.shifted_partial_moment(a, b, d, ref)
        return total

    def mean_value(self) -> float:
        return self.forward


def partial_moment(prior, a: float, b: float, n: int) -> float:
    """Integral of x^n dQ over [a, b] for any of the prior models."""
    return prior.partial_moment(a, b, n)


# ---------------------------------------------------------------------------
# adaptive quadrature (embedded Gauss rules, vectorized integrand)
# ---------------------------------------------------------------------------

def adaptive_quad(f: Callable, a: float, b: float, tol: float, max_depth: int = 40) -> float:
    """Adaptive integration with an embedded 7/15-point Gauss pair.

    The integrand must accept numpy arrays.  Intervals are split until the
    difference between the two rules is below the locally allotted share
    of ``tol``.
    """
    if not (np.isfinite(a) and np.isfinite(b)):
        raise PriorError("adaptive quadrature needs finite bounds")
    if b <= a:
        return 0.0
    x7, w7 = gauss_legendre_rule(7)
    x15, w15 = gauss_legendre_rule(15)

    total = 0.0
    stack = [(a, b, 0)]
    while stack:
        lo, hi, depth = stack.pop()
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        f15 = f(mid + half * x15)
        i15 = half * float(w15 @ np.asarray(f15, dtype=float))
        i7 = half * float(w7 @ np.asarray(f(mid + half * x7), dtype=float))
        err = abs(i15 - i7)
        local_tol = tol * max((hi - lo) / (b - a), 1e-12)
        if err <= local_tol or depth >= max_depth:
            total += i15
        else:
            stack.append((lo, mid, depth + 1))
            stack.append((mid, hi, depth + 1))
    return total


# ---------------------------------------------------------------------------
# JSON configuration
# ---------------------------------------------------------------------------

def prior_from_json(obj: dict):
    """Build a prior from its JSON description (field names as documented)."""
    kind = obj.get("type")
    if kind == "bachelier":
        return BachelierPrior(mean=float(obj["mean"]), variance=float(obj["variance"]))
    if kind == "lognormal":
        return LogNormalPrior(
            forward=float(obj["forward"]), total_variance=float(obj["total_variance"])
        )
    if kind == "ssvi":
        fc = obj.get("forward_curve", 1.0)
        if isinstance(fc, list):
            fc = np.asarray(fc, dtype=float)
        return SSVIParams(
            C=float(obj["C"]),
            K=float(obj["K"]),
            rho=float(obj["rho"]),
            eta=float(obj["eta"]),
            gamma=float(obj["gamma"]),
            forward_curve=fc,
        )
    raise PriorError(f"unknown prior type {kind!r}")
