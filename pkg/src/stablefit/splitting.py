"""First-order splitting solver for the three convex problems over an LmiMap.

All three entry points (project, minimize_quadratic, find_feasible) run the
same consensus scheme on min F(Q,L) s.t. M(Q,L) >= eps*I, written with an
auxiliary symmetric S:

    (i)   (Q,L)-step: a linear solve through the map's normal equations,
    (ii)  S <- PSD projection of M(Q,L) + U onto the eps-shifted cone,
    (iii) scaled dual update U,

with over-relaxation and penalty self-tuning by residual balancing. The
normal-equations operator depends only on the map (plus the penalty), so its
vectorized form is built once per map and cached.

Convergence is never declared on residuals alone: the candidate must also
pass an explicit eigenvalue margin check, so a returned point is always
verifiably inside the (slightly relaxed) cone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleError, NonConvergenceError, ValidationError
from .lmi import LmiMap, PolicyParams
from .matops import symmetrize

_STALL_WINDOW = 500
_STALL_REL_CHANGE = 1e-10
_BALANCE_PERIOD = 10
_BALANCE_RATIO = 2.0
_POLISH_PERIOD = 50


@dataclass
class SolverConfig:
    """Tolerances and iteration budget for the splitting solver."""

    eps: float = 1e-6          # strict-feasibility shift: M(Q,L) >= eps*I
    tol_primal: float = 1e-8
    tol_dual: float = 1e-8
    max_iter: int = 20000
    over_relaxation: float = 1.6
    penalty: float = 1.0       # initial sigma, self-tuned during the run

    def __post_init__(self):
        if min(self.eps, self.tol_primal, self.tol_dual, self.penalty) <= 0:
            raise ValidationError("solver tolerances must be positive")
        if self.max_iter <= 0:
            raise ValidationError("max_iter must be positive")
        if not (1.0 <= self.over_relaxation < 2.0):
            raise ValidationError("over_relaxation must lie in [1, 2)")
        if self.tol_primal >= self.eps or self.tol_dual >= self.eps:
            raise ValidationError("tolerances must be below eps")


@dataclass(eq=False)
class QuadraticObjective:
    """Convex objective <lin_q,Q> + <lin_l,L> + (r/2)||K0 Q - L + c0||_F^2
    plus an optional proximal term (w/2)||(Q,L) - (Qhat,Lhat)||_F^2."""

    lin_q: np.ndarray | None = None
    lin_l: np.ndarray | None = None
    K0: np.ndarray | None = None
    c0: np.ndarray | None = None
    r: float = 0.0
    prox_center: tuple | None = None   # (Qhat, Lhat)
    prox_weight: float = 0.0

    def is_pure_prox(self):
        no_lin = (self.lin_q is None or not np.any(self.lin_q)) and \
                 (self.lin_l is None or not np.any(self.lin_l))
        return no_lin and self.r == 0.0 and self.prox_weight > 0.0 \
            and self.prox_center is not None


@dataclass(eq=False)
class SolverState:
    """Warm-start carrier between consecutive solves on the same map."""

    x: np.ndarray | None = None
    u: np.ndarray | None = None
    sigma: float | None = None


@dataclass(eq=False)
class SolveInfo:
    iterations: int = 0
    primal_residual: float = np.inf
    dual_residual: float = np.inf
    margin: float = -np.inf
    sigma: float = 1.0
    converged: bool = False
    polished: bool = False


class _MapOperator:
    """Vectorized form of an LmiMap: svec bases on both sides, the map
    matrix G, its Gram, and the constant block. Cached on the map."""

    def __init__(self, lmi_map: LmiMap):
        self.map = lmi_map
        n, u, m = lmi_map.nx, lmi_map.nu, lmi_map.m
        self.n, self.u, self.m = n, u, m
        self.tied = lmi_map.tied

        self.orows, self.ocols = np.triu_indices(m)
        self.owts = np.where(self.orows == self.ocols, 1.0, np.sqrt(2.0))
        self.qrows, self.qcols = np.triu_indices(n)
        self.qwts = np.where(self.qrows == self.qcols, 1.0, np.sqrt(2.0))
        self.qn = len(self.qrows)
        self.p = self.qn if self.tied else self.qn + u * n

        self.m0 = lmi_map.constant()
        self.m0vec = self.svec_out(self.m0)
        G = np.empty((len(self.orows), self.p))
        Gmats = np.empty((self.p, m, m))
        for k, (Qk, Lk) in enumerate(self._basis()):
            Mk = lmi_map.linear(Qk, Lk)
            G[:, k] = self.svec_out(Mk)
            Gmats[k] = Mk
        self.G = G
        self.Gmats = Gmats
        self.GtG = G.T @ G

    def _basis(self):
        """Orthonormal basis of the decision space as (Q, L) pairs."""
        n, u = self.n, self.u
        K = self.map.tied_gain
        for i, j, w in zip(self.qrows, self.qcols, self.qwts):
            Q = np.zeros((n, n))
            Q[i, j] = Q[j, i] = 1.0 / w
            yield Q, (K @ Q if self.tied else np.zeros((u, n)))
        if not self.tied:
            Z = np.zeros((n, n))
            for a in range(u):
                for b in range(n):
                    L = np.zeros((u, n))
                    L[a, b] = 1.0
                    yield Z, L

    def basis_pairs(self):
        return list(self._basis())

    def svec_out(self, S):
        return S[self.orows, self.ocols] * self.owts

    def smat_out(self, v):
        S = np.zeros((self.m, self.m))
        vals = v / self.owts
        S[self.orows, self.ocols] = vals
        S[self.ocols, self.orows] = vals
        return S

    def pack(self, Q, L=None):
        xq = Q[self.qrows, self.qcols] * self.qwts
        if self.tied:
            return xq
        return np.concatenate([xq, np.asarray(L, dtype=float).ravel()])

    def unpack(self, x):
        n = self.n
        Q = np.zeros((n, n))
        vals = x[:self.qn] / self.qwts
        Q[self.qrows, self.qcols] = vals
        Q[self.qcols, self.qrows] = vals
        if self.tied:
            L = self.map.tied_gain @ Q
        else:
            L = x[self.qn:].reshape(self.u, n)
        return Q, L

    def pack_linear_functional(self, gQ, gL):
        """Coordinates of the functional <gQ,Q> + <gL,L> (gQ symmetric)."""
        if self.tied:
            return self.pack(symmetrize(gQ) + symmetrize(
                self.map.tied_gain.T @ gL))
        return self.pack(symmetrize(gQ), gL)


def _operator(lmi_map: LmiMap) -> _MapOperator:
    op = lmi_map._cache.get("op")
    if op is None:
        op = _MapOperator(lmi_map)
        lmi_map._cache["op"] = op
    return op


def _margin_of(op, x):
    M = op.smat_out(op.G @ x + op.m0vec)
    return float(np.linalg.eigvalsh(M)[0])


def _polish(op: _MapOperator, base, rhs0, x, face_matrix, cfg: SolverConfig):
    """Active-face Newton polish, as in OSQP but for the PSD cone.

    The face (eigenvectors clamped at eps) is read off face_matrix — the
    S-step input M(x)+U, whose dual shift separates active from inactive
    eigenvalues far more sharply than M(x) itself. For each candidate face
    size the equality-constrained QP on that face is solved and refined by
    re-extracting the face from the polished point (Newton on the face
    manifold), then the full KKT conditions are verified. A verified point
    is a genuine optimality certificate (stationarity + primal/dual
    feasibility + complementarity of a convex problem), so a wrong face
    guess can only fail verification, never mislead. Returns the polished
    x or None.
    """
    wf, Vf = np.linalg.eigh(face_matrix)
    m = op.m
    p = op.p
    k0 = int(np.sum(wf < cfg.eps))
    candidates = [k for k in (k0, k0 - 1, k0 + 1, k0 + 2)
                  if 0 < k <= m]
    rnorm = max(1.0, float(np.linalg.norm(rhs0)))

    def attempt(V0, k):
        frows, fcols = np.triu_indices(k)
        fwts = np.where(frows == fcols, 1.0, np.sqrt(2.0))
        # C[j, i] = <F_j, V0' A_i V0> for the orthonormal face basis F_j
        T = np.einsum("am,iab,bn->imn", V0, op.Gmats, V0)
        C = (T[:, frows, fcols] * fwts).T
        face0 = V0.T @ op.m0 @ V0
        b = cfg.eps * (frows == fcols).astype(float) - face0[frows, fcols] * fwts
        kk = len(b)
        KKT = np.zeros((p + kk, p + kk))
        KKT[:p, :p] = base
        KKT[:p, p:] = -C.T
        KKT[p:, :p] = C
        sol, *_ = np.linalg.lstsq(KKT, np.concatenate([rhs0, b]), rcond=None)
        xp, nu = sol[:p], sol[p:]
        if float(np.linalg.norm(C @ xp - b)) > 1e-9 * max(1.0, float(np.linalg.norm(b))):
            return None, None
        if float(np.linalg.norm(base @ xp - rhs0 - C.T @ nu)) > 1e-8 * rnorm:
            return None, None
        Z = np.zeros((k, k))
        zv = nu / fwts
        Z[frows, fcols] = zv
        Z[fcols, frows] = zv
        return xp, Z

    for k in candidates:
        V0 = Vf[:, :k]
        for _ in range(4):
            xp, Z = attempt(V0, k)
            if xp is None:
                break
            Mp = op.smat_out(op.G @ xp + op.m0vec)
            wp, Vp = np.linalg.eigh(Mp)
            scale = max(1.0, float(np.abs(wp).max()))
            zeig = np.linalg.eigvalsh(Z)
            dual_ok = zeig[0] >= -1e-8 * max(1.0, float(np.abs(zeig).max()))
            if dual_ok and wp[0] >= cfg.eps - min(1e-9 * scale, cfg.tol_primal):
                return xp
            if wp[0] < cfg.eps - 0.1 * scale:
                break  # face badly wrong; refinement will not recover
            V0 = Vp[:, :k]
    return None


def _solve_cone(op: _MapOperator, obj: QuadraticObjective, cfg: SolverConfig,
                x0: np.ndarray, state: SolverState | None = None,
                feasibility_mode: bool = False):
    """Shared splitting loop. Returns (x, SolveInfo); raises
    NonConvergenceError / InfeasibleError."""
    p = op.p
    lin = np.zeros(p)
    if obj.lin_q is not None or obj.lin_l is not None:
        gQ = obj.lin_q if obj.lin_q is not None else np.zeros((op.n, op.n))
        gL = obj.lin_l if obj.lin_l is not None else np.zeros((op.u, op.n))
        lin = op.pack_linear_functional(gQ, gL)

    w = float(obj.prox_weight)
    base = w * np.eye(p)
    rhs0 = -lin
    if w > 0:
        rhs0 = rhs0 + w * op.pack(symmetrize(obj.prox_center[0]),
                                  None if op.tied else obj.prox_center[1])
    if obj.r > 0:
        Bm = np.empty((op.u * op.n, p))
        for k, (Qk, Lk) in enumerate(op.basis_pairs()):
            Bm[:, k] = (obj.K0 @ Qk - Lk).ravel()
        base = base + obj.r * (Bm.T @ Bm)
        if obj.c0 is not None and np.any(obj.c0):
            rhs0 = rhs0 - obj.r * (Bm.T @ obj.c0.ravel())

    sigma = cfg.penalty
    x = x0.copy()
    u = np.zeros(len(op.m0vec))
    if state is not None:
        if state.x is not None and len(state.x) == p:
            x = state.x.copy()
        if state.u is not None and len(state.u) == len(u):
            u = state.u.copy()
        if state.sigma is not None:
            sigma = state.sigma

    def factor(sig):
        H = base + sig * op.GtG
        try:
            return np.linalg.inv(H)
        except np.linalg.LinAlgError:
            return np.linalg.pinv(H)

    def finish(it, marg, polished=False):
        info = SolveInfo(iterations=it, primal_residual=rp, dual_residual=rd,
                         margin=marg, sigma=sigma, converged=True,
                         polished=polished)
        return info

    Hinv = factor(sigma)
    Gt = op.G.T
    alpha = cfg.over_relaxation
    v = op.G @ x + op.m0vec
    s = op.svec_out(_psd_clip(op.smat_out(v), cfg.eps))
    margin_floor = cfg.eps - 10.0 * cfg.tol_primal
    can_polish = not feasibility_mode and np.any(base)

    rp = rd = np.inf
    rp_window = []
    info = None
    for it in range(1, cfg.max_iter + 1):
        rhs = rhs0 + sigma * (Gt @ (s - u - op.m0vec))
        x = Hinv @ rhs
        v = op.G @ x + op.m0vec
        v_rel = alpha * v + (1.0 - alpha) * s
        s_prev = s
        s = op.svec_out(_psd_clip(op.smat_out(v_rel + u), cfg.eps))
        u = u + v_rel - s

        rp = float(np.linalg.norm(v - s))
        rd = sigma * float(np.linalg.norm(Gt @ (s - s_prev)))
        scale_p = max(1.0, float(np.linalg.norm(v)), float(np.linalg.norm(s)))
        scale_d = max(1.0, sigma * float(np.linalg.norm(Gt @ u)))

        if rp <= cfg.tol_primal * scale_p and rd <= cfg.tol_dual * scale_d:
            marg = _margin_of(op, x)
            target = cfg.eps / 2 if feasibility_mode else margin_floor
            if marg >= target:
                info = finish(it, marg)
                break
        if feasibility_mode and it % 10 == 0:
            marg = _margin_of(op, x)
            if marg >= 0.75 * cfg.eps:
                info = finish(it, marg)
                break
        if can_polish and it % _POLISH_PERIOD == 0 and rp <= 1e-3 * scale_p:
            xp = _polish(op, base, rhs0, x, op.smat_out(v_rel + u), cfg)
            if xp is not None:
                x = xp
                rp = 0.0
                rd = 0.0
                info = finish(it, _margin_of(op, x), polished=True)
                break

        rp_window.append(rp)
        if len(rp_window) > _STALL_WINDOW:
            rp_window.pop(0)
            lo, hi = min(rp_window), max(rp_window)
            stalled = (hi - lo) <= _STALL_REL_CHANGE * max(rp, 1e-30)
            if stalled and rp > 50.0 * cfg.tol_primal * scale_p:
                raise InfeasibleError(
                    f"cone distance stalled at {rp:.3e} after {it} iterations; "
                    "constraint set appears empty", cone_distance=rp,
                    iterations=it)

        if it % _BALANCE_PERIOD == 0:
            ratio = (rp / scale_p) / max(rd / scale_d, 1e-300)
            if ratio > _BALANCE_RATIO or ratio < 1.0 / _BALANCE_RATIO:
                fac = min(max(np.sqrt(ratio), 0.1), 10.0)
                new_sigma = min(max(sigma * fac, 1e-8), 1e8)
                if new_sigma != sigma:
                    u = u * (sigma / new_sigma)
                    sigma = new_sigma
                    Hinv = factor(sigma)

    if info is None:
        # iteration cap: last-chance polish, then accept only if residuals
        # are within 10x of tol and the margin contract still holds
        if can_polish:
            xp = _polish(op, base, rhs0, x, op.smat_out(v_rel + u), cfg)
            if xp is not None:
                x = xp
                rp = rd = 0.0
                info = finish(cfg.max_iter, _margin_of(op, x), polished=True)
        if info is None:
            marg = _margin_of(op, x)
            scale_p = max(1.0, float(np.linalg.norm(v)), float(np.linalg.norm(s)))
            scale_d = max(1.0, sigma * float(np.linalg.norm(Gt @ u)))
            ok = (rp <= 10.0 * cfg.tol_primal * scale_p
                  and rd <= 10.0 * cfg.tol_dual * scale_d
                  and marg >= (cfg.eps / 2 if feasibility_mode else margin_floor))
            if not ok:
                if feasibility_mode:
                    raise InfeasibleError(
                        f"no strictly feasible point found in {cfg.max_iter} "
                        f"iterations (cone distance {rp:.3e})",
                        cone_distance=rp, iterations=cfg.max_iter)
                raise NonConvergenceError(
                    f"splitting solver hit max_iter={cfg.max_iter} with "
                    f"primal residual {rp:.3e}, dual residual {rd:.3e}",
                    primal_residual=rp, dual_residual=rd,
                    iterations=cfg.max_iter)
            info = finish(cfg.max_iter, marg)

    if state is not None:
        state.x, state.u, state.sigma = x.copy(), u.copy(), sigma
    return x, info


def _psd_clip(S, floor):
    w, V = np.linalg.eigh(S)
    if w[0] >= floor:
        return S
    return (V * np.maximum(w, floor)) @ V.T


def minimize_quadratic(lmi_map: LmiMap, obj: QuadraticObjective,
                       warm: PolicyParams | None = None,
                       cfg: SolverConfig | None = None,
                       state: SolverState | None = None) -> PolicyParams:
    """Minimize a convex quadratic over {M(Q,L) >= eps*I}.

    warm seeds the primal iterate; state (optional, mutated in place)
    carries primal/dual/penalty between consecutive solves on the same map.
    """
    cfg = cfg or SolverConfig()
    op = _operator(lmi_map)

    if obj.is_pure_prox():
        qhat, lhat = obj.prox_center
        xc = op.pack(symmetrize(qhat), None if op.tied else lhat)
        if _margin_of(op, xc) >= cfg.eps:
            Q, L = op.unpack(xc)
            return PolicyParams(Q=Q, L=L)

    if warm is not None:
        x0 = op.pack(warm.Q, None if op.tied else warm.L)
    elif obj.prox_center is not None:
        x0 = op.pack(symmetrize(obj.prox_center[0]),
                     None if op.tied else obj.prox_center[1])
    else:
        x0 = np.zeros(op.p)
    x, _ = _solve_cone(op, obj, cfg, x0, state=state)
    Q, L = op.unpack(x)
    return PolicyParams(Q=Q, L=L)


def project(lmi_map: LmiMap, qhat, lhat, cfg: SolverConfig | None = None,
            state: SolverState | None = None) -> PolicyParams:
    """Frobenius projection of (Qhat, Lhat) onto {M(Q,L) >= eps*I}.

    Already-feasible inputs (margin >= eps) are returned unchanged. The
    objective ||(Q,L)-(Qhat,Lhat)||_F^2 is the prox-weight-2 special case of
    minimize_quadratic, so the two share one code path (and their iterate
    trajectories coincide exactly when r = 0).
    """
    obj = QuadraticObjective(prox_center=(symmetrize(qhat), np.asarray(lhat, dtype=float)),
                             prox_weight=2.0)
    return minimize_quadratic(lmi_map, obj, cfg=cfg, state=state)


def find_feasible(lmi_map: LmiMap, cfg: SolverConfig | None = None,
                  init: PolicyParams | None = None,
                  max_iter: int | None = None) -> PolicyParams:
    """Phase-I: any (Q, L) with margin >= eps/2, from Q = I, L = 0.

    Runs the splitting scheme with a zero objective, i.e. it minimizes the
    distance between the affine image of (Q, L) and the shifted cone; a
    stalled positive distance raises InfeasibleError (the harness uses this
    as its stabilizability test).
    """
    cfg = cfg or SolverConfig()
    if max_iter is not None:
        cfg = SolverConfig(eps=cfg.eps, tol_primal=cfg.tol_primal,
                           tol_dual=cfg.tol_dual, max_iter=max_iter,
                           over_relaxation=cfg.over_relaxation,
                           penalty=cfg.penalty)
    op = _operator(lmi_map)
    if init is not None:
        x0 = op.pack(init.Q, None if op.tied else init.L)
    else:
        x0 = op.pack(np.eye(lmi_map.nx),
                     None if op.tied else np.zeros((lmi_map.nu, lmi_map.nx)))
    if _margin_of(op, x0) >= cfg.eps:
        Q, L = op.unpack(x0)
        return PolicyParams(Q=Q, L=L)
    x, _ = _solve_cone(op, QuadraticObjective(), cfg, x0, feasibility_mode=True)
    Q, L = op.unpack(x)
    return PolicyParams(Q=Q, L=L)
