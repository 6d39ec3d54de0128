"""Numerical solvers for the workbench.

solve_qp handles strictly convex quadratic programs with equality rows and
two-sided inequality rows: an over-relaxed operator-splitting iteration with a
cached factorization, warm starts, and a direct active-set polish step that
pushes accepted solutions to machine-precision KKT residuals.  The online
controller re-solves the same problem shape every 50 ms, so everything that
depends only on (H, A) is factored once and reused.

solve_lmi searches for a feasible point of a small stack of affine-in-P
matrix-definiteness conditions by subgradient ascent on the worst normalized
eigenvalue; acceptance is only ever the post-hoc Cholesky verification.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla


class QpProblemError(ValueError):
    """The problem data violate the solver's preconditions."""


class LmiInfeasibleError(RuntimeError):
    """No feasible P found within the iteration budget."""

    def __init__(self, message: str, best_margin: float):
        super().__init__(message)
        self.best_margin = best_margin


@dataclass(frozen=True)
class QpProblem:
    """min 0.5 x'Hx + q'x  s.t.  A_eq x = b_eq,  lo <= A_in x <= hi."""

    hessian: np.ndarray
    linear: np.ndarray
    eq_matrix: np.ndarray = None
    eq_rhs: np.ndarray = None
    ineq_matrix: np.ndarray = None
    ineq_lo: np.ndarray = None
    ineq_hi: np.ndarray = None

    def __post_init__(self):
        H = np.asarray(self.hessian, dtype=float)
        q = np.asarray(self.linear, dtype=float).reshape(-1)
        n = q.shape[0]
        if H.shape != (n, n):
            raise QpProblemError(f"hessian shape {H.shape} does not match q ({n})")
        scale = max(1.0, np.abs(H).max(initial=0.0))
        if np.abs(H - H.T).max(initial=0.0) > 1e-12 * scale:
            raise QpProblemError("hessian is not symmetric")
        eq_m = np.zeros((0, n)) if self.eq_matrix is None else np.atleast_2d(
            np.asarray(self.eq_matrix, dtype=float)
        )
        eq_b = np.zeros(0) if self.eq_rhs is None else np.asarray(
            self.eq_rhs, dtype=float
        ).reshape(-1)
        in_m = np.zeros((0, n)) if self.ineq_matrix is None else np.atleast_2d(
            np.asarray(self.ineq_matrix, dtype=float)
        )
        lo = np.full(in_m.shape[0], -np.inf) if self.ineq_lo is None else np.asarray(
            self.ineq_lo, dtype=float
        ).reshape(-1)
        hi = np.full(in_m.shape[0], np.inf) if self.ineq_hi is None else np.asarray(
            self.ineq_hi, dtype=float
        ).reshape(-1)
        if eq_m.shape[1] != n or in_m.shape[1] != n:
            raise QpProblemError("constraint matrices do not match variable count")
        if eq_m.shape[0] != eq_b.shape[0]:
            raise QpProblemError("eq_rhs does not match eq_matrix row count")
        if in_m.shape[0] != lo.shape[0] or lo.shape[0] != hi.shape[0]:
            raise QpProblemError("inequality bounds do not match ineq_matrix row count")
        if np.any(lo > hi):
            raise QpProblemError("inequality lower bound exceeds upper bound")
        for name, val in (
            ("hessian", H), ("linear", q), ("eq_matrix", eq_m), ("eq_rhs", eq_b),
            ("ineq_matrix", in_m), ("ineq_lo", lo), ("ineq_hi", hi),
        ):
            object.__setattr__(self, name, val)

    @property
    def nvar(self) -> int:
        return self.linear.shape[0]


@dataclass(frozen=True)
class QpSolution:
    primal: np.ndarray
    objective: float
    status: str  # optimal | infeasible | max_iter
    kkt_residuals: dict
    iterations: int = 0
    dual: np.ndarray = None
    polished: bool = False


def _kkt_residuals(H, q, A, lo, hi, n_eq, x, y) -> dict:
    ax = A @ x if A.shape[0] else np.zeros(0)
    stat = float(np.abs(H @ x + q + (A.T @ y if A.shape[0] else 0.0)).max(initial=0.0))
    prim_eq = float(np.abs(ax[:n_eq] - lo[:n_eq]).max(initial=0.0))
    viol_lo = np.maximum(lo[n_eq:] - ax[n_eq:], 0.0)
    viol_hi = np.maximum(ax[n_eq:] - hi[n_eq:], 0.0)
    prim_in = float(max(viol_lo.max(initial=0.0), viol_hi.max(initial=0.0)))
    y_in = y[n_eq:]
    slack_hi = np.maximum(hi[n_eq:] - ax[n_eq:], 0.0)
    slack_lo = np.maximum(ax[n_eq:] - lo[n_eq:], 0.0)
    up = np.maximum(y_in, 0.0) * np.where(np.isinf(slack_hi), 1.0, slack_hi)
    dn = np.maximum(-y_in, 0.0) * np.where(np.isinf(slack_lo), 1.0, slack_lo)
    comp = float(max(up.max(initial=0.0), dn.max(initial=0.0)))
    return {
        "stationarity": stat,
        "primal_eq": prim_eq,
        "primal_ineq": prim_in,
        "complementarity": comp,
    }


class CachedQpSolver:
    """Reusable solver for a fixed (H, A_eq, A_in) structure.

    Construction factors H + sigma I + A' diag(rho) A and, when H admits a
    Cholesky factorization, the polish workspace H^-1 A'.  Repeated calls with
    new (q, rhs, bounds) reuse both, and the previous solution primes the next
    warm start and active-set guess.
    """

    def __init__(self, hessian, eq_matrix=None, ineq_matrix=None, rho: float = 1.0,
                 sigma: float = 1e-6, alpha: float = 1.6, check_psd: bool = True):
        H = np.asarray(hessian, dtype=float)
        self.n = H.shape[0]
        self.H = 0.5 * (H + H.T)
        if check_psd:
            w = np.linalg.eigvalsh(self.H)
            if w[0] < -1e-10 * max(1.0, abs(w[-1])):
                raise QpProblemError(f"hessian is not positive semidefinite (min eig {w[0]:.3e})")
        eq = np.zeros((0, self.n)) if eq_matrix is None else np.atleast_2d(eq_matrix).astype(float)
        ineq = np.zeros((0, self.n)) if ineq_matrix is None else np.atleast_2d(ineq_matrix).astype(float)
        self.n_eq = eq.shape[0]
        self.A = np.vstack([eq, ineq])
        self.m = self.A.shape[0]
        self.sigma = sigma
        self.alpha = alpha
        self.rho = np.full(self.m, rho)
        self.rho[: self.n_eq] *= 1e3
        self._factor()
        # polish workspace (needs strictly PD H)
        try:
            self._chol_h = sla.cho_factor(self.H)
            self._hinv_at = sla.cho_solve(self._chol_h, self.A.T) if self.m else np.zeros((self.n, 0))
            self._a_hinv_at = self.A @ self._hinv_at if self.m else np.zeros((0, 0))
        except np.linalg.LinAlgError:
            self._chol_h = None
        self._last = None  # (x, y, active_lo, active_hi)

    def _factor(self):
        M = self.H + self.sigma * np.eye(self.n)
        if self.m:
            M = M + (self.A.T * self.rho) @ self.A
        self._chol_m = sla.cho_factor(M)

    # -- direct equality-constrained solve on a trial active set ---------------

    def _polish(self, q, lo, hi, active_lo, active_hi, tol):
        if self._chol_h is None:
            return None
        act = np.flatnonzero(active_lo | active_hi)
        b_act = np.where(active_hi[act], hi[act], lo[act])
        x_free = sla.cho_solve(self._chol_h, -q)
        if act.size:
            S = self._a_hinv_at[np.ix_(act, act)]
            rhs = self.A[act] @ x_free - b_act
            try:
                nu = sla.solve(S, rhs, assume_a="pos")
            except np.linalg.LinAlgError:
                nu = np.linalg.lstsq(S, rhs, rcond=None)[0]
            x = x_free - self._hinv_at[:, act] @ nu
            # one refinement pass recovers digits lost to ill conditioning
            A_act = self.A[act]
            r1 = -(self.H @ x + q + A_act.T @ nu)
            r2 = b_act - A_act @ x
            dx_free = sla.cho_solve(self._chol_h, r1)
            try:
                dnu = sla.solve(S, A_act @ dx_free - r2, assume_a="pos")
            except np.linalg.LinAlgError:
                dnu = np.linalg.lstsq(S, A_act @ dx_free - r2, rcond=None)[0]
            x = x + dx_free - self._hinv_at[:, act] @ dnu
            nu = nu + dnu
            y = np.zeros(self.m)
            y[act] = nu
        else:
            x, y = x_free, np.zeros(self.m)
        res = _kkt_residuals(self.H, q, self.A, lo, hi, self.n_eq, x, y)
        if max(res.values()) <= tol:
            return x, y, res
        return None

    def solve(self, q, lo, hi, tol: float = 1e-6, max_iter: int = 20000,
              warm: tuple | None = None) -> QpSolution:
        """lo/hi cover all rows: equality rows first with lo == hi."""
        q = np.asarray(q, dtype=float).reshape(-1)
        lo = np.asarray(lo, dtype=float).reshape(-1)
        hi = np.asarray(hi, dtype=float).reshape(-1)
        if self.m == 0:
            x = sla.cho_solve(self._chol_h, -q) if self._chol_h is not None else (
                np.linalg.lstsq(self.H, -q, rcond=None)[0]
            )
            res = _kkt_residuals(self.H, q, self.A, lo, hi, 0, x, np.zeros(0))
            obj = 0.5 * x @ self.H @ x + q @ x
            return QpSolution(x, float(obj), "optimal", res, 0, np.zeros(0), True)

        if warm is not None:
            x, y = warm[0].copy(), warm[1].copy()
        elif self._last is not None:
            x, y = self._last[0].copy(), self._last[1].copy()
        else:
            x, y = np.zeros(self.n), np.zeros(self.m)

        # cheap path: previous active set (or equalities only) solved directly
        if self._chol_h is not None:
            if self._last is not None:
                hint_lo, hint_hi = self._last[2], self._last[3]
            else:
                hint_lo = np.zeros(self.m, dtype=bool)
                hint_lo[: self.n_eq] = True
                hint_hi = np.zeros(self.m, dtype=bool)
            hit = self._polish(q, lo, hi, hint_lo, hint_hi, tol)
            if hit is not None:
                x, y, res = hit
                self._remember(x, y, lo, hi)
                obj = 0.5 * x @ self.H @ x + q @ x
                return QpSolution(x, float(obj), "optimal", res, 0, y, True)

        z = np.clip(self.A @ x, lo, hi)
        rho, alpha, sigma = self.rho, self.alpha, self.sigma
        y_chk = y.copy()
        status, iters = "max_iter", max_iter
        admm_eps = max(tol, 1e-8)
        for k in range(1, max_iter + 1):
            rhs = sigma * x - q + self.A.T @ (rho * z - y)
            x_t = sla.cho_solve(self._chol_m, rhs)
            z_t = self.A @ x_t
            x = alpha * x_t + (1.0 - alpha) * x
            z_hat = alpha * z_t + (1.0 - alpha) * z
            z = np.clip(z_hat + y / rho, lo, hi)
            y = y + rho * (z_hat - z)
            if k % 25 == 0 or k == max_iter:
                ax = self.A @ x
                r_prim = np.abs(ax - z).max(initial=0.0)
                r_dual = np.abs(self.H @ x + q + self.A.T @ y).max(initial=0.0)
                s_prim = max(np.abs(ax).max(initial=0.0), np.abs(z).max(initial=0.0), 1.0)
                s_dual = max(np.abs(self.H @ x).max(initial=0.0),
                             np.abs(self.A.T @ y).max(initial=0.0),
                             np.abs(q).max(initial=0.0), 1.0)
                if r_prim <= admm_eps * s_prim and r_dual <= admm_eps * s_dual:
                    status, iters = "converged", k
                    break
                dy = y - y_chk
                if self._primal_infeasible(dy, lo, hi):
                    return QpSolution(x, np.nan, "infeasible",
                                      _kkt_residuals(self.H, q, self.A, lo, hi, self.n_eq, x, y),
                                      k, y, False)
                y_chk = y.copy()
                # try an early polish once the iterates are roughly feasible
                if self._chol_h is not None and r_prim <= 3e-2 * s_prim and k % 50 == 0:
                    act_lo, act_hi = self._active_from_dual(y, z, lo, hi)
                    hit = self._polish(q, lo, hi, act_lo, act_hi, tol)
                    if hit is not None:
                        x, y, res = hit
                        self._remember(x, y, lo, hi)
                        obj = 0.5 * x @ self.H @ x + q @ x
                        return QpSolution(x, float(obj), "optimal", res, k, y, True)

        act_lo, act_hi = self._active_from_dual(y, z, lo, hi)
        if self._chol_h is not None:
            hit = self._polish(q, lo, hi, act_lo, act_hi, tol)
            if hit is None:
                # dual signs can misidentify weakly active rows; retry from slacks
                ax = self.A @ x
                slack_tol = 1e-6 * (1.0 + np.abs(ax))
                act_lo2 = act_lo.copy()
                act_hi2 = act_hi.copy()
                idx = np.arange(self.n_eq, self.m)
                act_lo2[idx] = ax[idx] <= lo[idx] + slack_tol[idx]
                act_hi2[idx] = ax[idx] >= hi[idx] - slack_tol[idx]
                hit = self._polish(q, lo, hi, act_lo2, act_hi2, tol)
            if hit is not None:
                x, y, res = hit
                self._remember(x, y, lo, hi)
                obj = 0.5 * x @ self.H @ x + q @ x
                return QpSolution(x, float(obj), "optimal", res, iters, y, True)
        res = _kkt_residuals(self.H, q, self.A, lo, hi, self.n_eq, x, y)
        self._remember(x, y, lo, hi)
        obj = 0.5 * x @ self.H @ x + q @ x
        final = "optimal" if (status == "converged" and max(res.values()) <= tol) else "max_iter"
        return QpSolution(x, float(obj), final, res, iters, y, False)

    def _active_from_dual(self, y, z, lo, hi):
        act_lo = np.zeros(self.m, dtype=bool)
        act_hi = np.zeros(self.m, dtype=bool)
        act_lo[: self.n_eq] = True
        idx = np.arange(self.n_eq, self.m)
        act_lo[idx] = y[idx] < -1e-12
        act_hi[idx] = y[idx] > 1e-12
        return act_lo, act_hi

    def _remember(self, x, y, lo, hi):
        act_lo, act_hi = self._active_from_dual(y, None, lo, hi)
        self._last = (x.copy(), y.copy(), act_lo, act_hi)

    def _primal_infeasible(self, dy, lo, hi) -> bool:
        norm = np.abs(dy).max(initial=0.0)
        if norm < 1e-12:
            return False
        d = dy / norm
        if np.abs(self.A.T @ d).max(initial=0.0) > 1e-8:
            return False
        pos, neg = np.maximum(d, 0.0), np.minimum(d, 0.0)
        support = 0.0
        for bound, part in ((hi, pos), (lo, neg)):
            mask = np.abs(part) > 1e-12
            if np.any(np.isinf(bound[mask])):
                return False
            support += bound[mask] @ part[mask]
        return support < -1e-8


def solve_qp(problem: QpProblem, tol: float = 1e-6, max_iter: int = 20000,
             warm: tuple | None = None) -> QpSolution:
    """One-shot interface over CachedQpSolver; see the class for semantics."""
    solver = CachedQpSolver(problem.hessian, problem.eq_matrix, problem.ineq_matrix)
    lo = np.concatenate([problem.eq_rhs, problem.ineq_lo])
    hi = np.concatenate([problem.eq_rhs, problem.ineq_hi])
    return solver.solve(problem.linear, lo, hi, tol=tol, max_iter=max_iter, warm=warm)


# ---------------------------------------------------------------------------
# LMI feasibility
# ---------------------------------------------------------------------------


def _sym_basis(dim: int):
    basis = []
    for a in range(dim):
        for b in range(a, dim):
            E = np.zeros((dim, dim))
            if a == b:
                E[a, a] = 1.0
            else:
                E[a, b] = E[b, a] = 1.0
            basis.append(E)
    return basis


def _vec_to_sym(p: np.ndarray, dim: int) -> np.ndarray:
    P = np.zeros((dim, dim))
    k = 0
    for a in range(dim):
        for b in range(a, dim):
            P[a, b] = P[b, a] = p[k]
            k += 1
    return P


class _AffineBlock:
    """Explicit linear-operator form of an affine map P -> symmetric matrix."""

    def __init__(self, fn, dim_p: int):
        self.const = np.asarray(fn(np.zeros((dim_p, dim_p))), dtype=float)
        self.maps = []
        for E in _sym_basis(dim_p):
            self.maps.append(np.asarray(fn(E), dtype=float) - self.const)
        self.maps = np.stack(self.maps)  # (K, s, s)
        self.scale = 1.0 + float(np.linalg.norm(self.const, 2))

    def value(self, p: np.ndarray) -> np.ndarray:
        return self.const + np.tensordot(p, self.maps, axes=1)

    def min_eig_and_grad(self, p: np.ndarray):
        w, v = np.linalg.eigh(self.value(p))
        vec = v[:, 0]
        grad = np.einsum("kij,i,j->k", self.maps, vec, vec)
        return w[0], grad


def verify_lmi(blocks, P: np.ndarray, margin: float = 1e-9) -> bool:
    """True iff every block minus margin*I admits a Cholesky factorization."""
    for fn in blocks:
        val = np.asarray(fn(P), dtype=float)
        try:
            np.linalg.cholesky(val - margin * np.eye(val.shape[0]))
        except np.linalg.LinAlgError:
            return False
    return True


def solve_lmi(blocks, dim_p: int, margin: float = 1e-9, max_iter: int = 8000,
              inits=None, target: float | None = None) -> np.ndarray:
    """Find symmetric P with block_j(P) - margin*I positive definite for all j.

    blocks are callables affine in P.  Subgradient ascent maximizes the worst
    normalized minimum eigenvalue, annealing the step size over a few rounds
    per start so both coarse scale-finding and the final squeeze work.  With
    target=None the full budget is spent pushing the margin up (an interior
    point gives better-conditioned downstream algebra); otherwise the search
    stops once the unnormalized margin reaches the target.  The returned P is
    re-verified by Cholesky, which is the actual acceptance contract.
    """
    ops = [_AffineBlock(fn, dim_p) for fn in blocks]
    K = dim_p * (dim_p + 1) // 2

    def phi_and_grad(p):
        worst, worst_abs, grad = np.inf, np.inf, np.zeros(K)
        for op in ops:
            lam, g = op.min_eig_and_grad(p)
            val = lam / op.scale
            worst_abs = min(worst_abs, lam)
            if val < worst:
                worst, grad = val, g / op.scale
        return worst, worst_abs, grad

    def to_vec(P):
        return np.array([P[a, b] for a in range(dim_p) for b in range(a, dim_p)])

    starts = [np.eye(dim_p), 0.1 * np.eye(dim_p), 10.0 * np.eye(dim_p)]
    if inits is not None:
        starts = [np.asarray(P0, dtype=float) for P0 in inits] + starts

    rounds = (1.0, 0.2, 0.04, 0.008)
    per_round = max(max_iter // (len(rounds)), 200)
    best_p, best_phi, best_abs = None, -np.inf, -np.inf
    for P0 in starts:
        p = to_vec(0.5 * (P0 + P0.T))
        start_best_p, start_best_phi = p.copy(), -np.inf
        for scale in rounds:
            p = start_best_p.copy()
            step0 = max(float(np.abs(p).max(initial=0.0)), 1e-8) * scale
            since_improved = 0
            for k in range(1, per_round + 1):
                phi, phi_abs, grad = phi_and_grad(p)
                if phi > start_best_phi:
                    start_best_phi, start_best_p = phi, p.copy()
                    since_improved = 0
                else:
                    since_improved += 1
                if phi > best_phi:
                    best_phi, best_p, best_abs = phi, p.copy(), phi_abs
                if target is not None and phi_abs >= target:
                    break
                if since_improved > 400:
                    break
                gn = np.linalg.norm(grad)
                if gn < 1e-14:
                    break
                p = p + (step0 / np.sqrt(k)) * grad / gn
            else:
                continue
            if target is not None and start_best_phi * ops[0].scale >= 0 and phi_abs >= target:
                break
        if target is not None and best_p is not None:
            P = _vec_to_sym(best_p, dim_p)
            if verify_lmi(blocks, P, margin) and best_abs >= target:
                return P

    if best_p is not None:
        P = _vec_to_sym(best_p, dim_p)
        if verify_lmi(blocks, P, margin):
            return P
    raise LmiInfeasibleError(
        f"no feasible P within budget (best margin {best_abs:.3e}, requested {margin:.1e})",
        best_margin=float(best_abs),
    )
