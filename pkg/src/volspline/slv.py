"""Particle calibration of the leverage function in a stochastic local
volatility model with exponential-OU stochastic volatility.

The spot follows ``dS = a_t l(t, S) dW`` with ``a_t = a0 exp(U_t)`` and
``dU = -theta U dt + nu dW_sigma``, correlated with the spot noise.  The
target smile is flat lognormal, so the local volatility is ``sigma_bs x``
(normal units) and the marginal of the spot at each date is known in
closed form.  Each time step regresses the squared volatility on log-spot
with a penalized, optionally constrained B-spline and divides it into the
local volatility.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from volspline import regression as rg
from volspline.black import implied_vol
from volspline.bspline import PiecewisePoly, Spline, make_basis, moment_rows, weighted_gram
from volspline.priors import BachelierPrior

__all__ = [
    "ScottParams",
    "ConstraintFlags",
    "ParticleEnsemble",
    "LeverageSlice",
    "LeverageSurface",
    "dupire_flat",
    "ou_step_exact",
    "forward_variance",
    "fourth_moment",
    "calibrate_leverage",
    "reprice_and_implied",
]


@dataclass(frozen=True)
class ScottParams:
    s0: float
    a0: float
    theta: float
    nu: float
    rho: float
    sigma_bs: float

    def __post_init__(self) -> None:
        if min(self.s0, self.a0, self.theta, self.sigma_bs) <= 0.0 or self.nu < 0.0:
            raise ValueError("s0, a0, theta, sigma_bs must be positive and nu nonnegative")
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [-1, 1]")


@dataclass(frozen=True)
class ConstraintFlags:
    """Which marginal-compatibility constraints enter each regression."""

    forward_variance_eq: bool = True  # integral equality pinning E[a_t^2]
    nonnegative: bool = True
    quadratic_cap: bool = False  # second-moment cone row from E[a_t^4]


@dataclass
class ParticleEnsemble:
    s: np.ndarray
    u: np.ndarray
    t: float

    def __post_init__(self) -> None:
        self.s = np.asarray(self.s, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        if self.s.shape != self.u.shape:
            raise ValueError("spot and volatility states must have equal shape")
        if not (np.all(np.isfinite(self.s)) and np.all(np.isfinite(self.u))):
            raise ValueError("ensemble contains non-finite states")

    @property
    def size(self) -> int:
        return self.s.size


def dupire_flat(sigma_bs: float):
    """Local volatility (normal units) reproducing a flat lognormal smile."""
    if sigma_bs <= 0.0:
        raise ValueError("sigma_bs must be positive")

    def local_vol(x):
        return sigma_bs * np.asarray(x, dtype=float)

    return local_vol


def forward_variance(p: ScottParams, t: float) -> float:
    """E[a_t^2] for the exponential-OU volatility started at its mean."""
    if t < 0.0:
        raise ValueError("t must be nonnegative")
    if p.nu == 0.0 or t == 0.0:
        return p.a0**2
    return float(p.a0**2 * np.exp(p.nu**2 / p.theta * (1.0 - np.exp(-2.0 * p.theta * t))))


def fourth_moment(p: ScottParams, t: float) -> float:
    """E[a_t^4]; a_t^2 is lognormal so this is exp(8 Var U_t) times a0^4."""
    var_u = p.nu**2 * (1.0 - np.exp(-2.0 * p.theta * t)) / (2.0 * p.theta) if t > 0 else 0.0
    return float(p.a0**4 * np.exp(8.0 * var_u))


def _ou_cov(p: ScottParams, dt: float) -> tuple[float, float]:
    """Covariance entries of (int e^{theta(u-t')} dW_sigma, dW)."""
    v11 = (1.0 - np.exp(-2.0 * p.theta * dt)) / (2.0 * p.theta)
    v12 = p.rho * (1.0 - np.exp(-p.theta * dt)) / p.theta
    return float(v11), float(v12)


def ou_step_exact(u: np.ndarray, dt: float, p: ScottParams, normals: np.ndarray):
    """Advance the OU state exactly and return the correlated spot increment.

    ``normals`` holds two independent standard normal rows.  The pair
    (stochastic integral, Brownian increment) is Gaussian with covariance
    [[(1-e^{-2 theta dt})/(2 theta), rho (1-e^{-theta dt})/theta],
     [ ..., dt]], so the update has the exact transition law for any dt.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    v11, v12 = _ou_cov(p, dt)
    z0, z1 = normals
    integ = np.sqrt(v11) * z0
    resid = dt - v12**2 / v11
    dw = v12 / np.sqrt(v11) * z0 + np.sqrt(max(resid, 0.0)) * z1
    u_new = u * np.exp(-p.theta * dt) + p.nu * integ
    return u_new, dw


@dataclass(frozen=True)
class LeverageSlice:
    """Calibrated conditional variance at one date, in log-spot coordinates."""

    t: float
    cond_var: PiecewisePoly
    floor: float
    sigma_bs: float

    def conditional_variance(self, spots):
        vals = self.cond_var(np.log(np.asarray(spots, dtype=float)))
        return np.maximum(vals, self.floor)

    def leverage(self, spots):
        spots = np.asarray(spots, dtype=float)
        return self.sigma_bs * spots / np.sqrt(self.conditional_variance(spots))


@dataclass(frozen=True)
class LeverageSurface:
    times: np.ndarray
    slices: tuple[LeverageSlice, ...]
    params: ScottParams

    def __post_init__(self) -> None:
        if len(self.slices) != np.asarray(self.times).size:
            raise ValueError("one slice per time-grid point is required")

    def slice_at(self, k: int) -> LeverageSlice:
        return self.slices[k]

    def leverage(self, k: int, spots):
        return self.slices[k].leverage(spots)


def _constant_slice(t: float, value: float, sigma_bs: float) -> LeverageSlice:
    pp = PiecewisePoly(np.zeros(0), np.zeros(1), np.array([[value]]))
    return LeverageSlice(t=t, cond_var=pp, floor=1e-10 * value, sigma_bs=sigma_bs)


def _step_rng(seed: int, stream: str, step: int) -> np.random.Generator:
    # crc32 gives a process-independent stream id (str hash is randomized)
    from zlib import crc32

    ss = np.random.SeedSequence(entropy=seed, spawn_key=(crc32(stream.encode()), step))
    return np.random.Generator(np.random.Philox(ss))


def _spot_marginal_log(p: ScottParams, t: float) -> BachelierPrior:
    """Law of log S_t under the flat target smile (exact lognormal marginal)."""
    w = p.sigma_bs**2 * t
    return BachelierPrior(np.log(p.s0) - 0.5 * w, w)


def calibrate_leverage(
    p: ScottParams,
    time_grid,
    n_particles: int,
    seed: int = 0,
    n_knots: int = 20,
    order: int = 2,
    truncation: int = 1,
    penalty_order: int = 2,
    tikhonov_constant: float = 1.0,
    flags: ConstraintFlags = ConstraintFlags(),
    knot_halfwidth_stds: float = 2.5,
    substeps: int = 1,
) -> LeverageSurface:
    """Run the forward particle calibration over the time grid.

    Knots are re-derived from the ensemble at each date: evenly spaced in
    log-spot across ``knot_halfwidth_stds`` sample standard deviations on
    both sides of the forward.  Basis values computed at the particles for
    the regression are reused for the leverage evaluation in the next
    simulation step.
    """
    times = np.asarray(time_grid, dtype=float)
    if times.ndim != 1 or times.size < 2 or times[0] != 0.0 or np.any(np.diff(times) <= 0):
        raise ValueError("time grid must start at 0 and increase")
    if n_particles < 100:
        raise ValueError("particle count too small")

    s = np.full(n_particles, p.s0)
    u = np.zeros(n_particles)
    slices: list[LeverageSlice] = [_constant_slice(0.0, p.a0**2, p.sigma_bs)]
    # conditional variance at the current particles, reused for stepping
    cond_at_particles = np.full(n_particles, p.a0**2)

    for k in range(times.size - 1):
        t0, t1 = times[k], times[k + 1]
        rng = _step_rng(seed, "calibrate", k)
        for j in range(substeps):
            dt = (t1 - t0) / substeps
            z = rng.standard_normal((2, n_particles))
            a = p.a0 * np.exp(u)
            lev = p.sigma_bs * s / np.sqrt(np.maximum(cond_at_particles, slices[-1].floor))
            u, dw = ou_step_exact(u, dt, p, z)
            s = s + a * lev * dw
            s = np.maximum(s, 1e-8 * p.s0)
            if substeps > 1 and j < substeps - 1:
                # leverage is frozen over the regression interval; only the
                # conditional variance at the moved particles is refreshed
                cond_at_particles = slices[-1].conditional_variance(s)

        a_sq = p.a0**2 * np.exp(2.0 * u)
        x = np.log(s)
        std = float(np.std(x))
        center = np.log(p.s0)
        knots = np.linspace(center - knot_halfwidth_stds * std, center + knot_halfwidth_stds * std, n_knots)
        basis = make_basis(knots, order, truncation)
        sample = rg.Sample(x, a_sq)
        cfg = rg.RegressionConfig(basis, penalty_order=penalty_order, tikhonov_constant=tikhonov_constant)
        lam = rg.tikhonov_factor(sample, cfg)

        cs = rg.ConstraintSet(basis.dimension)
        marginal = _spot_marginal_log(p, t1)
        cb = basis.compiled()
        if flags.forward_variance_eq:
            cs.add_eq(moment_rows(cb, marginal), forward_variance(p, t1), "forward-variance")
        if flags.nonnegative:
            eye = np.eye(basis.dimension)
            for jrow in range(basis.dimension):
                cs.add_ineq(eye[jrow], 0.0, "nonnegative")
        if flags.quadratic_cap:
            M = weighted_gram(cb, marginal)
            L = np.linalg.cholesky(M + 1e-14 * max(np.trace(M), 1.0) * np.eye(M.shape[0]))
            cs.add_soc(L.T, np.zeros(basis.dimension), np.zeros(basis.dimension),
                       np.sqrt(fourth_moment(p, t1)), "second-moment-cap")

        if cs.n_rows:
            try:
                fit = rg.fit_constrained(sample, cfg, lam, cs)
            except rg.opt.InfeasibleError as exc:
                raise rg.opt.InfeasibleError(f"step {k + 1} (t={t1:g}): {exc}") from exc
        else:
            fit = rg.fit_penalized(sample, cfg, lam)

        floor = 1e-10 * forward_variance(p, t1)
        slices.append(LeverageSlice(t=float(t1), cond_var=fit.compiled(), floor=floor, sigma_bs=p.sigma_bs))
        B = cb.evaluate(x)
        cond_at_particles = np.maximum(B @ fit.weights, floor)

    return LeverageSurface(times=times, slices=tuple(slices), params=p)


def simulate_terminal(
    surface: LeverageSurface,
    n_paths: int,
    seed: int,
    antithetic: bool = True,
    substeps: int = 1,
) -> np.ndarray:
    """Terminal spots under the calibrated dynamics, fresh random stream."""
    p = surface.params
    times = surface.times
    half = (n_paths + 1) // 2 if antithetic else n_paths
    s = np.full(2 * half if antithetic else n_paths, p.s0)
    u = np.zeros_like(s)
    for k in range(times.size - 1):
        t0, t1 = times[k], times[k + 1]
        rng = _step_rng(seed, "reprice", k)
        for _ in range(substeps):
            dt = (t1 - t0) / substeps
            z_half = rng.standard_normal((2, half))
            z = np.concatenate([z_half, -z_half], axis=1) if antithetic else z_half
            a = p.a0 * np.exp(u)
            lev = surface.slices[k].leverage(s)
            u, dw = ou_step_exact(u, dt, p, z)
            s = s + a * lev * dw
            s = np.maximum(s, 1e-8 * p.s0)
    return s[:n_paths]


def reprice_and_implied(
    surface: LeverageSurface,
    p: ScottParams,
    strikes,
    maturity: float,
    n_paths: int,
    seed: int = 1,
) -> dict:
    """Monte Carlo call prices under the calibrated surface and their smile.

    Uses a random stream independent of the calibration stream.  Prices
    falling outside the no-arbitrage band are reported per strike and the
    implied volatility is set to 0 or NaN there rather than failing.
    """
    strikes = np.asarray(strikes, dtype=float)
    if abs(maturity - surface.times[-1]) > 1e-12:
        raise ValueError("repricing maturity must equal the calibration horizon")
    sT = simulate_terminal(surface, n_paths, seed)
    payoffs = np.maximum(sT[None, :] - strikes[:, None], 0.0)
    prices = payoffs.mean(axis=1)
    stderr = payoffs.std(axis=1) / np.sqrt(sT.size)
    vols = implied_vol(prices, p.s0, strikes, maturity)
    intrinsic = np.maximum(p.s0 - strikes, 0.0)
    flags = np.where(prices <= intrinsic, "below-intrinsic", np.where(prices >= p.s0, "above-forward", "ok"))
    return {
        "strikes": strikes,
        "prices": prices,
        "stderr": stderr,
        "implied_vols": vols,
        "price_flags": flags,
        "mean_terminal": float(sT.mean()),
        "se_terminal": float(sT.std() / np.sqrt(sT.size)),
    }
