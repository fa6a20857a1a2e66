"""Tikhonov-penalized spline regression with shape and moment constraints.

The estimator minimizes mean squared error plus ``lambda`` times the
integrated squared p-th derivative.  The penalty factor scales like
``K sigma_X^(2p-1) / N`` so the fit is invariant under affine maps of the
abscissa (with the knots mapped along) and relaxes as the sample grows.
Linear shape constraints and marginal-compatibility constraints turn the
normal equations into a cone program handled by :mod:`volspline.opt`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from volspline import opt
from volspline.bspline import (
    BasisSpec,
    Spline,
    SplineError,
    derivative_decomposition,
    gram_matrix,
    moment_rows,
    weighted_gram,
)

__all__ = [
    "Sample",
    "RegressionConfig",
    "ConstraintSet",
    "LebesgueMeasure",
    "tikhonov_factor",
    "fit_penalized",
    "fit_constrained",
    "shape_constraints",
    "compatibility_constraints",
]


@dataclass(frozen=True)
class Sample:
    """Bivariate observations with cached size and abscissa scale."""

    x: np.ndarray
    y: np.ndarray

    def __init__(self, x, y):
        x = np.asarray(x, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float).reshape(-1)
        if x.size != y.size or x.size < 1:
            raise ValueError("sample needs matching nonempty x and y")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.size

    @property
    def sigma_x(self) -> float:
        return float(np.std(self.x))


@dataclass(frozen=True)
class RegressionConfig:
    basis: BasisSpec
    penalty_order: int = 2
    tikhonov_constant: float = 1.0

    def __post_init__(self) -> None:
        if self.penalty_order < 1:
            raise ValueError("penalty order must be at least 1")
        if self.tikhonov_constant <= 0.0:
            raise ValueError("Tikhonov constant must be positive")
        if self.basis.truncation >= self.penalty_order:
            raise SplineError(
                "penalty diverges: basis truncation must be below the penalty order"
            )


def tikhonov_factor(sample: Sample, cfg: RegressionConfig) -> float:
    """Penalty weight ``K sigma_X^(2p-1) / N``."""
    p = cfg.penalty_order
    return cfg.tikhonov_constant * sample.sigma_x ** (2 * p - 1) / sample.n


@dataclass
class ConstraintSet:
    """Linear equalities/inequalities plus second-order cone blocks.

    Inequality rows mean ``row . w >= rhs``.  ``families`` labels each row
    or block for infeasibility diagnostics.
    """

    dim: int
    eq_rows: np.ndarray = field(default=None)
    eq_rhs: np.ndarray = field(default=None)
    ineq_rows: np.ndarray = field(default=None)
    ineq_rhs: np.ndarray = field(default=None)
    socs: list = field(default_factory=list)  # (A, b, c, d)
    eq_families: list = field(default_factory=list)
    ineq_families: list = field(default_factory=list)
    soc_families: list = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.eq_rows is None:
            self.eq_rows = np.zeros((0, self.dim))
            self.eq_rhs = np.zeros(0)
        if self.ineq_rows is None:
            self.ineq_rows = np.zeros((0, self.dim))
            self.ineq_rhs = np.zeros(0)

    def add_eq(self, row, rhs: float, family: str) -> None:
        self.eq_rows = np.vstack([self.eq_rows, np.asarray(row, dtype=float)])
        self.eq_rhs = np.append(self.eq_rhs, float(rhs))
        self.eq_families.append(family)

    def add_ineq(self, row, rhs: float, family: str) -> None:
        self.ineq_rows = np.vstack([self.ineq_rows, np.asarray(row, dtype=float)])
        self.ineq_rhs = np.append(self.ineq_rhs, float(rhs))
        self.ineq_families.append(family)

    def add_soc(self, A, b, c, d, family: str) -> None:
        self.socs.append(
            (
                np.atleast_2d(np.asarray(A, dtype=float)),
                np.asarray(b, dtype=float).reshape(-1),
                np.asarray(c, dtype=float).reshape(-1),
                float(d),
            )
        )
        self.soc_families.append(family)

    def merge(self, other: "ConstraintSet") -> "ConstraintSet":
        if other.dim != self.dim:
            raise ValueError("constraint sets have different dimensions")
        out = ConstraintSet(self.dim)
        out.eq_rows = np.vstack([self.eq_rows, other.eq_rows])
        out.eq_rhs = np.concatenate([self.eq_rhs, other.eq_rhs])
        out.ineq_rows = np.vstack([self.ineq_rows, other.ineq_rows])
        out.ineq_rhs = np.concatenate([self.ineq_rhs, other.ineq_rhs])
        out.socs = list(self.socs) + list(other.socs)
        out.eq_families = self.eq_families + other.eq_families
        out.ineq_families = self.ineq_families + other.ineq_families
        out.soc_families = self.soc_families + other.soc_families
        return out

    @property
    def n_rows(self) -> int:
        return self.eq_rows.shape[0] + self.ineq_rows.shape[0] + len(self.socs)

    def as_blocks(self):
        return self.eq_rows, self.eq_rhs, self.ineq_rows, self.ineq_rhs, self.socs

    def violations(self, w: np.ndarray) -> dict[str, float]:
        """Worst violation per family at a candidate point."""
        out: dict[str, float] = {}
        for row, rhs, fam in zip(self.eq_rows, self.eq_rhs, self.eq_families):
            out[fam] = max(out.get(fam, 0.0), abs(float(row @ w - rhs)))
        for row, rhs, fam in zip(self.ineq_rows, self.ineq_rhs, self.ineq_families):
            out[fam] = max(out.get(fam, 0.0), max(0.0, float(rhs - row @ w)))
        for (A, b, c, d), fam in zip(self.socs, self.soc_families):
            gap = float(np.linalg.norm(A @ w + b) - (c @ w + d))
            out[fam] = max(out.get(fam, 0.0), max(0.0, gap))
        return out


class LebesgueMeasure:
    """Plain dx on an interval (or the whole line)."""

    def __init__(self, lower: float = -np.inf, upper: float = np.inf):
        self.lower = lower
        self.upper = upper

    def piece_integral(self, a: float, b: float, coeffs, ref: float) -> float:
        lo, hi = max(a, self.lower), min(b, self.upper)
        if hi <= lo:
            return 0.0
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise ValueError("Lebesgue piece integral requires finite clipped bounds")
        ua, ub = lo - ref, hi - ref
        total = 0.0
        for d, c in enumerate(np.asarray(coeffs, dtype=float)):
            if c != 0.0:
                total += c * (ub ** (d + 1) - ua ** (d + 1)) / (d + 1)
        return total


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

def design_system(sample: Sample, basis: BasisSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Normal-equation blocks: B, V = B^T B / N and c = B^T y / N."""
    B = basis.compiled().evaluate(sample.x)
    V = B.T @ B / sample.n
    c = B.T @ sample.y / sample.n
    return B, V, c


def penalty_matrix(cfg: RegressionConfig) -> np.ndarray:
    return gram_matrix(cfg.basis, cfg.penalty_order)


def fit_penalized(sample: Sample, cfg: RegressionConfig, lam: float | None = None) -> Spline:
    """Solve the penalized normal equations.

    A rank-deficient system falls back to the smoothness-weighted
    pseudoinverse: best data fit first, minimal penalty among the fits.
    """
    if lam is None:
        lam = tikhonov_factor(sample, cfg)
    B, V, c = design_system(sample, cfg.basis)
    R = penalty_matrix(cfg)
    lhs = V + lam * R
    ok = False
    try:
        # the system is symmetric PSD; a successful Cholesky marks it
        # numerically positive definite
        from scipy.linalg import cho_factor, cho_solve

        fac = cho_factor(lhs)
        w = cho_solve(fac, c)
        w += cho_solve(fac, c - lhs @ w)
        ok = np.all(np.isfinite(w))
    except np.linalg.LinAlgError:
        ok = False
    if not ok:
        eps = 1e-12 * max(np.trace(R) / max(R.shape[0], 1), 1.0)
        Q = R + eps * np.eye(R.shape[0])
        w = opt.pseudoinverse_lsq(B / np.sqrt(sample.n), sample.y / np.sqrt(sample.n), Q)
    return Spline(cfg.basis, w)


def fit_constrained(
    sample: Sample,
    cfg: RegressionConfig,
    lam: float | None = None,
    constraints: ConstraintSet | None = None,
    tol: float = 1e-8,
) -> Spline:
    """Penalized least squares under a constraint set, via the cone solver."""
    if lam is None:
        lam = tikhonov_factor(sample, cfg)
    _, V, c = design_system(sample, cfg.basis)
    R = penalty_matrix(cfg)
    quad = opt.QuadForm(2.0 * (V + lam * R), -2.0 * c)
    sol = opt.solve_qp(quad, constraints, tol=tol)
    if sol.status == "infeasible":
        detail = ""
        if constraints is not None:
            viols = constraints.violations(sol.x)
            if viols:
                fam = max(viols, key=viols.get)
                detail = f"; most violated family: {fam} ({viols[fam]:.3e})"
        raise opt.InfeasibleError("constrained regression is infeasible" + detail)
    if sol.status != "optimal" and max(sol.kkt_residuals) > 1e-6:
        raise opt.OptError(
            f"constrained regression did not converge (residuals {sol.kkt_residuals})"
        )
    return Spline(cfg.basis, sol.x)


# ---------------------------------------------------------------------------
# constraint builders
# ---------------------------------------------------------------------------

def _derivative_sign_rows(basis: BasisSpec, p: int, sign: float, cs: ConstraintSet, family: str) -> None:
    dm = derivative_decomposition(basis, p)
    for row in dm.matrix:
        cs.add_ineq(sign * row, 0.0, family)


def _limit_row(basis: BasisSpec, p: int, side: str) -> np.ndarray:
    """Row whose dot with the weights is the limit of the p-th derivative."""
    t_eff = basis.truncation - p
    dim = basis.dimension
    if t_eff > 0:
        raise SplineError(
            "limit does not exist: truncation leaves growing wings at that derivative order"
        )
    if p == 0:
        mat = np.eye(dim)
        low = basis
    else:
        dm = derivative_decomposition(basis, p)
        if dm.basis is None:
            raise SplineError("limits of the atomic derivative are not defined")
        mat, low = dm.matrix, dm.basis
    if t_eff < 0:
        return np.zeros(dim)  # wings vanish at that order
    pick = 0 if side == "-inf" else mat.shape[0] - 1
    return mat[pick] if p > 0 else np.eye(dim)[pick]


def shape_constraints(basis: BasisSpec, specs) -> ConstraintSet:
    """Constraint rows for the listed shape requirements.

    Accepted entries: the strings ``nonnegative``, ``nondecreasing``,
    ``nonincreasing``, ``convex``, ``concave``, or dicts
    ``{"kind": "value_eq|value_ge|value_le", "x": x0, "value": v, "deriv": p}``,
    ``{"kind": "limit_eq|limit_ge|limit_le", "side": "-inf"|"+inf", ...}`` and
    ``{"kind": "integral_eq|integral_ge|integral_le", "measure": m, "value": v}``.
    Sign constraints use the sufficient condition of nonnegative loadings
    on the (nonnegative) basis of the corresponding derivative order.
    """
    if isinstance(specs, (str, dict)):
        specs = [specs]
    cs = ConstraintSet(basis.dimension)
    n = basis.order
    for spec in specs:
        kind = spec if isinstance(spec, str) else spec["kind"]
        if kind == "nonnegative":
            for j in range(basis.dimension):
                cs.add_ineq(np.eye(basis.dimension)[j], 0.0, "nonnegative")
        elif kind in ("nondecreasing", "nonincreasing"):
            if n + 1 < 1:
                raise SplineError("monotonicity needs order >= 0")
            _derivative_sign_rows(basis, 1, 1.0 if kind == "nondecreasing" else -1.0, cs, kind)
        elif kind in ("convex", "concave"):
            if 2 > n + 1:
                raise SplineError("convexity constraints need order >= 1")
            _derivative_sign_rows(basis, 2, 1.0 if kind == "convex" else -1.0, cs, kind)
        elif kind.startswith("value_"):
            p = int(spec.get("deriv", 0))
            if p > n + 1:
                raise SplineError("derivative order beyond the atomic level")
            x0 = float(spec["x"])
            if p == 0:
                from volspline.bspline import design_matrix

                row = design_matrix(basis, [x0])[0]
            else:
                dm = derivative_decomposition(basis, p)
                if dm.basis is None:
                    raise SplineError("pointwise values of the atomic derivative are not defined")
                from volspline.bspline import design_matrix

                row = design_matrix(dm.basis, [x0]) @ dm.matrix
                row = row[0]
            _add_relation(cs, row, float(spec["value"]), kind, f"value[{x0}]")
        elif kind.startswith("limit_"):
            p = int(spec.get("deriv", 0))
            if p > n:
                raise SplineError("wing limits beyond the spline order are not defined")
            row = _limit_row(basis, p, spec["side"])
            _add_relation(cs, row, float(spec["value"]), kind, f"limit[{spec['side']}]")
        elif kind.startswith("integral_"):
            measure = spec["measure"]
            row = moment_rows(basis.compiled(), measure)
            _add_relation(cs, row, float(spec["value"]), kind, "integral")
        else:
            raise SplineError(f"unknown shape constraint {kind!r}")
    return cs


def _add_relation(cs: ConstraintSet, row, value: float, kind: str, family: str) -> None:
    if kind.endswith("_eq"):
        cs.add_eq(row, value, family)
    elif kind.endswith("_ge"):
        cs.add_ineq(row, value, family)
    elif kind.endswith("_le"):
        cs.add_ineq(-np.asarray(row, dtype=float), -value, family)
    else:
        raise SplineError(f"unknown relation in {kind!r}")


def compatibility_constraints(
    basis: BasisSpec,
    marginal_x,
    y_moments: tuple[float, float, tuple[float, float] | None],
) -> ConstraintSet:
    """Marginal-law constraints for a conditional-expectation estimate.

    ``y_moments = (ey, ey2, hull)``: the mean pins an integral equality
    against the abscissa marginal; the hull bounds the coefficients (a
    sufficient box condition); the second moment caps the weighted
    quadratic form of the fit, a second-order cone row.
    """
    ey, ey2, hull = y_moments
    cs = ConstraintSet(basis.dimension)
    cb = basis.compiled()
    mrow = moment_rows(cb, marginal_x)
    cs.add_eq(mrow, ey, "mean-compatibility")
    if hull is not None:
        lo, hi = hull
        if lo > hi:
            raise ValueError("hull lower bound exceeds upper bound")
        eye = np.eye(basis.dimension)
        if np.isfinite(lo):
            for j in range(basis.dimension):
                cs.add_ineq(eye[j], lo, "hull")
        if np.isfinite(hi):
            for j in range(basis.dimension):
                cs.add_ineq(-eye[j], -hi, "hull")
    if ey2 is not None:
        if ey2 < 0.0:
            raise ValueError("second moment must be nonnegative")
        M = weighted_gram(cb, marginal_x)
        jitter = 1e-14 * max(np.trace(M), 1.0)
        L = np.linalg.cholesky(M + jitter * np.eye(M.shape[0]))
        cs.add_soc(L.T, np.zeros(basis.dimension), np.zeros(basis.dimension), np.sqrt(ey2), "convex-order")
    return cs
