"""Embedded second-order cone solver and quadratic-programming front ends.

The solver is a dense primal-dual interior-point method with Nesterov-Todd
scaling and a Mehrotra predictor-corrector step, sized for the problems
this package produces (a few hundred variables, a few thousand constraint
rows).  Quadratic objectives are recast as cone programs by the epigraph
trick, and an equality-constrained hierarchy is available through a
quadratic-form-weighted pseudoinverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "OptError",
    "InfeasibleError",
    "ConeBlock",
    "SOCProgram",
    "QuadForm",
    "Solution",
    "solve_socp",
    "qp_to_socp",
    "solve_qp",
    "pseudoinverse_lsq",
]


class OptError(ValueError):
    """Malformed program or numerical failure inside the solver."""


class InfeasibleError(OptError):
    """Raised by front ends when the solver certifies infeasibility."""


@dataclass(frozen=True)
class ConeBlock:
    """One constraint ``||A x + b|| <= c^T x + d``.

    With an empty ``A`` (zero rows) the block degenerates to the linear
    inequality ``0 <= c^T x + d``.
    """

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: float

    def __init__(self, A, b, c, d):
        A = np.atleast_2d(np.asarray(A, dtype=float)) if np.size(A) else np.zeros((0, np.size(c)))
        b = np.asarray(b, dtype=float).reshape(-1)
        c = np.asarray(c, dtype=float).reshape(-1)
        if A.shape[0] != b.size:
            raise OptError("cone block A and b row counts differ")
        if A.shape[0] and A.shape[1] != c.size:
            raise OptError("cone block A column count differs from c")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "d", float(d))


@dataclass(frozen=True)
class SOCProgram:
    """minimize f^T x over the given cone blocks and equalities."""

    f: np.ndarray
    cones: tuple[ConeBlock, ...]
    A_eq: np.ndarray
    b_eq: np.ndarray

    def __init__(self, f, cones=(), A_eq=None, b_eq=None):
        f = np.asarray(f, dtype=float).reshape(-1)
        n = f.size
        cones = tuple(cones)
        for blk in cones:
            if blk.c.size != n:
                raise OptError("cone block dimension does not match objective length")
        if A_eq is None:
            A_eq = np.zeros((0, n))
            b_eq = np.zeros(0)
        A_eq = np.atleast_2d(np.asarray(A_eq, dtype=float)) if np.size(A_eq) else np.zeros((0, n))
        b_eq = np.asarray(b_eq, dtype=float).reshape(-1) if b_eq is not None else np.zeros(0)
        if A_eq.shape[0] != b_eq.size or (A_eq.shape[0] and A_eq.shape[1] != n):
            raise OptError("equality block shapes are inconsistent")
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "cones", cones)
        object.__setattr__(self, "A_eq", A_eq)
        object.__setattr__(self, "b_eq", b_eq)

    @property
    def n(self) -> int:
        return self.f.size


@dataclass(frozen=True)
class QuadForm:
    """Objective ``x -> 0.5 x^T P x + q^T x`` with P symmetric PSD."""

    P: np.ndarray
    q: np.ndarray

    def __init__(self, P, q=None):
        P = np.atleast_2d(np.asarray(P, dtype=float))
        if P.shape[0] != P.shape[1]:
            raise OptError("P must be square")
        sym_err = np.abs(P - P.T).max() if P.size else 0.0
        scale = max(1.0, np.abs(P).max() if P.size else 0.0)
        if sym_err > 1e-12 * scale:
            raise OptError("P must be symmetric")
        P = 0.5 * (P + P.T)
        if q is None:
            q = np.zeros(P.shape[0])
        q = np.asarray(q, dtype=float).reshape(-1)
        if q.size != P.shape[0]:
            raise OptError("q length does not match P")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "q", q)

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.P @ x + self.q @ x)


@dataclass(frozen=True)
class Solution:
    x: np.ndarray
    status: str  # optimal | infeasible | max_iter
    kkt_residuals: tuple[float, float, float]  # primal, dual, gap
    iterations: int
    objective: float
    slacks: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


# ---------------------------------------------------------------------------
# cone algebra on the concatenated slack vector
# ---------------------------------------------------------------------------

class _Cones:
    """Orthant of size ml followed by SOC blocks of the given sizes."""

    def __init__(self, ml: int, socs: list[int]):
        self.ml = ml
        self.socs = socs
        self.m = ml + sum(socs)
        self.degree = ml + len(socs)
        starts = [ml]
        for q in socs[:-1]:
            starts.append(starts[-1] + q)
        self.starts = starts

    def blocks(self, v: np.ndarray):
        for st, q in zip(self.starts, self.socs):
            yield v[st : st + q]

    def e(self) -> np.ndarray:
        out = np.zeros(self.m)
        out[: self.ml] = 1.0
        for st in self.starts:
            out[st] = 1.0
        return out

    def inside(self, v: np.ndarray, margin: float = 0.0) -> bool:
        if np.any(v[: self.ml] <= margin):
            return False
        for blk in self.blocks(v):
            if blk[0] - np.linalg.norm(blk[1:]) <= margin:
                return False
        return True

    def min_margin(self, v: np.ndarray) -> float:
        vals = []
        if self.ml:
            vals.append(v[: self.ml].min())
        for blk in self.blocks(v):
            vals.append(blk[0] - np.linalg.norm(blk[1:]))
        return min(vals) if vals else np.inf

    def shift_into(self, v: np.ndarray) -> np.ndarray:
        a = -self.min_margin(v)
        if a < 0.0:
            a = 0.0
        return v + (1.0 + a) * self.e()

    def prod(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Jordan product u o v."""
        out = np.empty(self.m)
        out[: self.ml] = u[: self.ml] * v[: self.ml]
        for st, q in zip(self.starts, self.socs):
            ub, vb = u[st : st + q], v[st : st + q]
            out[st] = ub @ vb
            out[st + 1 : st + q] = ub[0] * vb[1:] + vb[0] * ub[1:]
        return out

    def solve_arrow(self, lam: np.ndarray, d: np.ndarray) -> np.ndarray:
        """Solve lam o u = d for u."""
        out = np.empty(self.m)
        out[: self.ml] = d[: self.ml] / lam[: self.ml]
        for st, q in zip(self.starts, self.socs):
            lb, db = lam[st : st + q], d[st : st + q]
            delta = lb[0] ** 2 - lb[1:] @ lb[1:]
            v0 = (lb[0] * db[0] - lb[1:] @ db[1:]) / delta
            out[st] = v0
            out[st + 1 : st + q] = (db[1:] - v0 * lb[1:]) / lb[0]
        return out

    def step_to_boundary(self, v: np.ndarray, dv: np.ndarray) -> float:
        alpha = np.inf
        if self.ml:
            neg = dv[: self.ml] < 0.0
            if neg.any():
                alpha = min(alpha, float(np.min(-v[: self.ml][neg] / dv[: self.ml][neg])))
        for st, q in zip(self.starts, self.socs):
            vb, db = v[st : st + q], dv[st : st + q]
            a = db[0] ** 2 - db[1:] @ db[1:]
            b = 2.0 * (vb[0] * db[0] - vb[1:] @ db[1:])
            c = vb[0] ** 2 - vb[1:] @ vb[1:]
            roots = []
            if abs(a) > 1e-300:
                disc = b * b - 4.0 * a * c
                if disc >= 0.0:
                    sq = np.sqrt(disc)
                    # numerically stable pairing avoids cancellation
                    qq = -0.5 * (b + np.copysign(sq, b)) if b != 0.0 else 0.5 * sq
                    roots.append(qq / a)
                    if qq != 0.0:
                        roots.append(c / qq)
            elif abs(b) > 1e-300:
                roots.append(-c / b)
            if db[0] < 0.0:
                roots.append(-vb[0] / db[0])
            pos = [r for r in roots if r > 0.0]
            if pos:
                # first positive crossing of the cone boundary
                alpha = min(alpha, min(pos))
        return alpha


class _Scaling:
    """Nesterov-Todd scaling W with lambda = W z = W^{-1} s."""

    def __init__(self, cones: _Cones, s: np.ndarray, z: np.ndarray):
        self.cones = cones
        ml = cones.ml
        self.w_lin = np.sqrt(s[:ml] / z[:ml]) if ml else np.zeros(0)
        self.soc = []
        for st, q in zip(cones.starts, cones.socs):
            sb, zb = s[st : st + q], z[st : st + q]
            # floor protects against iterates rounding onto the boundary
            rs = np.sqrt(max(sb[0] ** 2 - sb[1:] @ sb[1:], 1e-28 * max(sb[0] ** 2, 1e-300)))
            rz = np.sqrt(max(zb[0] ** 2 - zb[1:] @ zb[1:], 1e-28 * max(zb[0] ** 2, 1e-300)))
            sbar, zbar = sb / rs, zb / rz
            gamma = np.sqrt(0.5 * (1.0 + sbar @ zbar))
            wbar = np.empty(q)
            wbar[0] = (sbar[0] + zbar[0]) / (2.0 * gamma)
            wbar[1:] = (sbar[1:] - zbar[1:]) / (2.0 * gamma)
            eta = np.sqrt(rs / rz)
            self.soc.append((eta, wbar))
        self.lam = self.apply(z)

    @staticmethod
    def _wbar_apply(wbar: np.ndarray, v: np.ndarray) -> np.ndarray:
        t = wbar[1:] @ v[1:]
        out = np.empty_like(v)
        out[0] = wbar[0] * v[0] + t
        out[1:] = v[1:] + (v[0] + t / (1.0 + wbar[0])) * wbar[1:]
        return out

    def apply(self, v: np.ndarray) -> np.ndarray:
        """W v."""
        c = self.cones
        out = np.empty(c.m)
        out[: c.ml] = self.w_lin * v[: c.ml]
        for (eta, wbar), st, q in zip(self.soc, c.starts, c.socs):
            out[st : st + q] = eta * self._wbar_apply(wbar, v[st : st + q])
        return out

    def apply_inv(self, v: np.ndarray) -> np.ndarray:
        """W^{-1} v."""
        c = self.cones
        out = np.empty(c.m)
        out[: c.ml] = v[: c.ml] / self.w_lin
        for (eta, wbar), st, q in zip(self.soc, c.starts, c.socs):
            flipped = wbar.copy()
            flipped[1:] = -flipped[1:]
            out[st : st + q] = self._wbar_apply(flipped, v[st : st + q]) / eta
        return out

    def apply_inv_mat(self, M: np.ndarray) -> np.ndarray:
        """W^{-1} M for a dense matrix with cone-ordered rows."""
        c = self.cones
        out = np.empty_like(M)
        out[: c.ml] = M[: c.ml] / self.w_lin[:, None] if c.ml else M[: c.ml]
        for (eta, wbar), st, q in zip(self.soc, c.starts, c.socs):
            blk = M[st : st + q]
            v1 = wbar[1:]
            t = v1 @ blk[1:]
            top = wbar[0] * blk[0] - t
            rest = blk[1:] - np.outer(v1, blk[0] - t / (1.0 + wbar[0]))
            out[st] = top / eta
            out[st + 1 : st + q] = rest / eta
        return out


def _standard_form(prog: SOCProgram):
    """Split the blocks into orthant rows and SOC blocks: G x + s = h."""
    n = prog.n
    lin_G, lin_h = [], []
    soc_G, soc_h, soc_dims = [], [], []
    for blk in prog.cones:
        if blk.A.shape[0] == 0:
            lin_G.append(-blk.c)
            lin_h.append(blk.d)
        else:
            q = blk.A.shape[0] + 1
            Gb = np.vstack([-blk.c, -blk.A])
            hb = np.concatenate([[blk.d], blk.b])
            soc_G.append(Gb)
            soc_h.append(hb)
            soc_dims.append(q)
    parts_G = []
    parts_h = []
    ml = len(lin_G)
    if ml:
        parts_G.append(np.vstack(lin_G))
        parts_h.append(np.array(lin_h))
    for Gb, hb in zip(soc_G, soc_h):
        parts_G.append(Gb)
        parts_h.append(hb)
    if parts_G:
        G = np.vstack(parts_G)
        h = np.concatenate(parts_h)
    else:
        G = np.zeros((0, n))
        h = np.zeros(0)
    return G, h, _Cones(ml, soc_dims)


def _equilibrate(G, h, A, b, f, cones: _Cones, sweeps: int = 6):
    """Ruiz-style scaling; second-order cone rows share one scalar per block."""
    m, n = G.shape
    p = A.shape[0]
    d = np.ones(n)
    e = np.ones(m)
    a = np.ones(p)

    def row_groups():
        groups = [(i, i + 1) for i in range(cones.ml)]
        groups += [(st, st + q) for st, q in zip(cones.starts, cones.socs)]
        return groups

    for _ in range(sweeps):
        Gs = (e[:, None] * G) * d[None, :]
        As = (a[:, None] * A) * d[None, :] if p else A
        stack = np.vstack([Gs, As]) if p else Gs
        col = np.sqrt(np.maximum(np.abs(stack).max(axis=0), 1e-12))
        d /= col
        Gs = (e[:, None] * G) * d[None, :]
        for lo, hi in row_groups():
            r = np.abs(Gs[lo:hi]).max()
            if r > 0.0:
                e[lo:hi] /= np.sqrt(r)
        if p:
            As = (a[:, None] * A) * d[None, :]
            ra = np.sqrt(np.maximum(np.abs(As).max(axis=1), 1e-12))
            a /= ra
    Gs = (e[:, None] * G) * d[None, :]
    hs = e * h
    As = (a[:, None] * A) * d[None, :] if p else A
    bs = a * b if p else b
    fs = d * f
    obj_scale = max(np.abs(fs).max(), 1e-12)
    fs = fs / obj_scale
    return Gs, hs, As, bs, fs, d, e, a, obj_scale


def solve_socp(prog: SOCProgram, tol: float = 1e-8, max_iter: int = 100) -> Solution:
    """Interior-point solve of the cone program.

    Returns a Solution whose status is ``optimal`` (KKT residuals at or
    below ``tol``, measured on the internally equilibrated problem),
    ``infeasible`` (a certificate was found or the iterates diverged) or
    ``max_iter``.
    """
    f_orig = prog.f
    n = prog.n
    G, h, cones = _standard_form(prog)
    A, b = prog.A_eq, prog.b_eq
    p = A.shape[0]
    m = cones.m
    if m:
        G, h, A, b, f, d_scale, e_scale, a_scale, obj_scale = _equilibrate(
            G, h, A, b, f_orig, cones
        )
    else:
        f = f_orig
        d_scale = np.ones(n)

    if m == 0:
        # purely equality-constrained linear objective: bounded only if f
        # lies in the row space of A
        if p == 0:
            status = "optimal" if not f.any() else "infeasible"
            return Solution(np.zeros(n), status, (0.0, 0.0, 0.0), 0, 0.0)
        x, *_ = np.linalg.lstsq(A, b, rcond=None)
        res = np.linalg.norm(A @ x - b)
        ok = res <= tol * max(1.0, np.linalg.norm(b))
        return Solution(x, "optimal" if ok else "infeasible", (res, 0.0, 0.0), 0, float(f @ x))

    def finish(x_s, s_s, status, res, iters):
        x_o = d_scale * x_s
        s_o = s_s / e_scale
        return Solution(x_o, status, res, iters, float(f_orig @ x_o), slacks=s_o)

    # starting point: least-squares primal, shifted into the cone interior
    KA = np.vstack([A, G]) if p else G
    Kb = np.concatenate([b, h]) if p else h
    x, *_ = np.linalg.lstsq(KA, Kb, rcond=None)
    s = cones.shift_into(h - G @ x)
    if p:
        Kd = np.hstack([A.T, G.T])
        yz, *_ = np.linalg.lstsq(Kd, -f, rcond=None)
        y, z = yz[:p], yz[p:]
    else:
        z, *_ = np.linalg.lstsq(G.T, -f, rcond=None)
        y = np.zeros(0)
    z = cones.shift_into(z)

    bnorm = max(1.0, np.linalg.norm(b)) if p else 1.0
    hnorm = max(1.0, np.linalg.norm(h))
    fnorm = max(1.0, np.linalg.norm(f))

    def residuals(x, y, z, s):
        rx = A.T @ y + G.T @ z + f if p else G.T @ z + f
        ry = A @ x - b if p else np.zeros(0)
        rz = G @ x + s - h
        gap = float(s @ z)
        pres = max(np.linalg.norm(rz) / hnorm, (np.linalg.norm(ry) / bnorm) if p else 0.0)
        dres = np.linalg.norm(rx) / fnorm
        relgap = gap / max(1.0, abs(float(f @ x)))
        return rx, ry, rz, gap, pres, dres, relgap

    status = "max_iter"
    iters = 0
    best = None
    infeas_hits = 0
    from scipy.linalg import lu_factor, lu_solve

    for it in range(1, max_iter + 1):
        iters = it
        rx, ry, rz, gap, pres, dres, relgap = residuals(x, y, z, s)
        mu = gap / cones.degree
        merit = max(pres, dres, relgap)
        if np.isfinite(merit) and (best is None or merit < best[0]):
            best = (merit, x.copy(), y.copy(), z.copy(), s.copy(), (pres, dres, relgap))
        if pres <= tol and dres <= tol and relgap <= tol:
            status = "optimal"
            break
        if best is not None and np.isfinite(merit) and merit > 1e4 * best[0] and best[0] < 1e-6:
            break  # numerically stalled well past the best iterate

        # primal infeasibility certificate: A^T y + G^T z ~ 0, h^T z + b^T y < 0,
        # judged on the normalized ray and only without a near-feasible iterate
        near_feasible = best is not None and best[0] <= 1e3 * tol
        ray_scale = float(np.linalg.norm(z)) + (float(np.linalg.norm(y)) if p else 0.0)
        cert = float(h @ z) + (float(b @ y) if p else 0.0)
        if cert < 0.0 and ray_scale > 0.0 and not near_feasible:
            lhs = np.linalg.norm(A.T @ y + G.T @ z) if p else np.linalg.norm(G.T @ z)
            if lhs <= 1e-7 * (-cert) and -cert > 1e-6 * ray_scale * max(1.0, hnorm + bnorm):
                infeas_hits += 1
                if infeas_hits >= 5:
                    status = "infeasible"
                    break
        dobj = -float(h @ z) - (float(b @ y) if p else 0.0)
        if (abs(dobj) > 1.0 / tol and not near_feasible) or not np.isfinite(mu):
            status = "infeasible"
            break
        if not np.isfinite(merit):
            break

        W = _Scaling(cones, s, z)
        lam = W.lam
        Gs = W.apply_inv_mat(G)
        H = Gs.T @ Gs
        KKT = np.zeros((n + p, n + p))
        KKT[:n, :n] = H
        if p:
            KKT[:n, n:] = A.T
            KKT[n:, :n] = A
        reg = 1e-13 * max(1.0, np.trace(H) / max(n, 1))
        KKT[:n, :n] += reg * np.eye(n)
        try:
            fac = lu_factor(KKT)
        except (np.linalg.LinAlgError, ValueError):
            break

        def kkt_solve(r1, r2):
            rhs = np.concatenate([r1, r2]) if p else r1
            sol = lu_solve(fac, rhs)
            sol += lu_solve(fac, rhs - KKT @ sol)  # one refinement step
            return (sol[:n], sol[n:]) if p else (sol, np.zeros(0))

        def newton_raw(bx, by, bz, blam):
            u = cones.solve_arrow(lam, blam)
            rhs3 = bz - W.apply(u)
            r1 = bx + Gs.T @ W.apply_inv(rhs3)
            dx, dy = kkt_solve(r1, by)
            dz = W.apply_inv(W.apply_inv(G @ dx - rhs3))
            ds = bz - G @ dx  # enforce the cone-row equation exactly
            return dx, dy, dz, ds

        def newton(ds_rhs):
            bx, by, bz, blam = -rx, (-ry if p else np.zeros(0)), -rz, ds_rhs
            dx, dy, dz, ds = newton_raw(bx, by, bz, blam)
            for _ in range(2):  # full-system refinement keeps residuals near
                # machine precision as the scaling degenerates
                e1 = bx - ((A.T @ dy if p else 0.0) + G.T @ dz)
                e2 = by - A @ dx if p else np.zeros(0)
                e3 = bz - (G @ dx + ds)
                e4 = blam - cones.prod(lam, W.apply(dz) + W.apply_inv(ds))
                cx, cy, cz, cs = newton_raw(e1, e2, e3, e4)
                dx, dy, dz, ds = dx + cx, dy + cy, dz + cz, ds + cs
            dz_sc = W.apply(dz)
            ds_sc = W.apply_inv(ds)
            return dx, dy, dz, ds, dz_sc, ds_sc

        # predictor; step lengths are measured in scaled space where the
        # boundary quadratic is well conditioned
        lam2 = cones.prod(lam, lam)
        dxa, dya, dza, dsa, dza_sc, dsa_sc = newton(-lam2)
        ap = cones.step_to_boundary(lam, dsa_sc)
        ad = cones.step_to_boundary(lam, dza_sc)
        alpha_aff = min(1.0, ap, ad)
        mu_aff = float((s + alpha_aff * dsa) @ (z + alpha_aff * dza)) / cones.degree
        sigma = max(0.0, min(1.0, (mu_aff / mu))) ** 3

        # corrector
        corr = cones.prod(dsa_sc, dza_sc)
        ds_rhs = -lam2 - corr + sigma * mu * cones.e()
        dx, dy, dz, ds, dz_sc, ds_sc = newton(ds_rhs)
        ap = cones.step_to_boundary(lam, ds_sc)
        ad = cones.step_to_boundary(lam, dz_sc)
        alpha = min(1.0, 0.99 * min(ap, ad))
        if not np.isfinite(alpha) or alpha <= 1e-14:
            break

        x = x + alpha * dx
        s = s + alpha * ds
        z = z + alpha * dz
        if p:
            y = y + alpha * dy

    if status == "infeasible":
        return finish(x, s, "infeasible", (np.inf, np.inf, np.inf), iters)
    if status == "optimal":
        res = residuals(x, y, z, s)[4:]
        return finish(x, s, "optimal", res, iters)
    if best is not None:
        _, xb, yb, zb, sb, res = best
        status = "optimal" if max(res) <= tol else "max_iter"
        return finish(xb, sb, status, res, iters)
    return finish(x, s, "max_iter", (np.inf,) * 3, iters)


# ---------------------------------------------------------------------------
# QP recast and weighted pseudoinverse
# ---------------------------------------------------------------------------

def _chol_psd(P: np.ndarray) -> np.ndarray:
    """Cholesky factor of P with trace-scaled regularization; rejects non-PSD."""
    dim = P.shape[0]
    eps = 1e-12 * max(np.trace(P), 0.0) / max(dim, 1)
    bump = max(eps, 0.0)
    for _ in range(3):
        try:
            return np.linalg.cholesky(P + bump * np.eye(dim))
        except np.linalg.LinAlgError:
            bump = max(bump * 1e3, 1e-300)
    # eigenvalue check for a clear error
    w = np.linalg.eigvalsh(0.5 * (P + P.T))
    if w.min() < -1e-8 * max(1.0, abs(w.max())):
        raise OptError("quadratic form is not positive semidefinite")
    raise OptError("Cholesky failed on a semidefinite form; increase regularization")


def qp_to_socp(quad: QuadForm, constraints=None) -> tuple[SOCProgram, int]:
    """Epigraph recast: appends a scalar bound on the weighted residual norm.

    Returns the cone program over (x, t) plus the index of t.  At the
    optimum t equals ``||M x + M^{-T} q||`` for the Cholesky factor M.
    """
    n = quad.P.shape[0]
    L = _chol_psd(quad.P)
    M = L.T
    # ||M x + M^{-T} q||^2 = x^T P x + 2 q^T x + const
    b0 = np.linalg.solve(L, quad.q)
    blocks = [ConeBlock(np.hstack([M, np.zeros((n, 1))]), b0, np.r_[np.zeros(n), 1.0], 0.0)]
    A_eq = np.zeros((0, n + 1))
    b_eq = np.zeros(0)
    if constraints is not None:
        eq_rows, eq_rhs, ineq_rows, ineq_rhs, socs = constraints.as_blocks()
        if eq_rows.shape[0]:
            A_eq = np.hstack([eq_rows, np.zeros((eq_rows.shape[0], 1))])
            b_eq = eq_rhs
        for r, rhs in zip(ineq_rows, ineq_rhs):
            blocks.append(ConeBlock(np.zeros((0, n + 1)), np.zeros(0), np.r_[r, 0.0], -rhs))
        for Ab, bb, cb, db in socs:
            Aa = np.hstack([Ab, np.zeros((Ab.shape[0], 1))])
            blocks.append(ConeBlock(Aa, bb, np.r_[cb, 0.0], db))
    fobj = np.r_[np.zeros(n), 1.0]
    return SOCProgram(fobj, tuple(blocks), A_eq, b_eq), n


def solve_qp(quad: QuadForm, constraints=None, tol: float = 1e-8, max_iter: int = 100) -> Solution:
    """Recast + solve; the returned solution is in the original variables."""
    prog, n = qp_to_socp(quad, constraints)
    sol = solve_socp(prog, tol=tol, max_iter=max_iter)
    x = sol.x[:n]
    return Solution(x, sol.status, sol.kkt_residuals, sol.iterations, quad.value(x), slacks=sol.slacks)


def pseudoinverse_lsq(A, b, Q) -> np.ndarray:
    """Least-squares solution minimizing ``x^T Q x`` among all minimizers.

    With Q = G^T G the solution is ``G^{-1} (A G^{-1})^+ b``: the data is
    fit as well as possible and the Q-seminorm breaks ties.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if Q.shape[0] != Q.shape[1] or Q.shape[0] != A.shape[1]:
        raise OptError("Q must be square and match the column count of A")
    if np.abs(Q - Q.T).max() > 1e-10 * max(1.0, np.abs(Q).max()):
        raise OptError("Q must be symmetric")
    try:
        L = np.linalg.cholesky(Q)
    except np.linalg.LinAlgError as exc:
        raise OptError("Q must be positive definite") from exc
    # A G^{-1} with G = L^T
    AGinv = np.linalg.solve(L, A.T).T
    core = np.linalg.pinv(AGinv, rcond=1e-12) @ b
    return np.linalg.solve(L.T, core)
