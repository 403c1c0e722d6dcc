"""Stability and H-infinity LMI constraint maps over the decision pair (Q, L).

Both constraint families are affine maps M(Q, L) = M0 + A(Q, L) into the
symmetric matrices, exposed with their adjoints so the splitting solver can
treat them generically:

  stability:  [[Q, AQ+BL], [*, Q]]  >= eps*I
  hinf:       [[Q, AQ+BL, B1, 0], [*, Q, 0, QC1'+L'D12'],
               [*, *, I, 0], [*, *, *, gamma^2 I]]  >= eps*I

A map may be *tied* to a fixed gain K, which substitutes L = K@Q and reduces
the decision variable to Q alone; this turns the synthesis LMI into the
closed-loop analysis LMI without a separate code path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import CertificateError, InternalInconsistencyError, ValidationError
from .matops import check_finite, spectral_radius, sym_eig, symmetrize


@dataclass(eq=False)
class LinearSystem:
    """Discrete-time plant x_{t+1} = A x_t + B u_t + w_t."""

    A: np.ndarray
    B: np.ndarray
    W: np.ndarray | None = None  # process-noise covariance, PSD

    def __post_init__(self):
        self.A = check_finite(self.A, "A")
        self.B = check_finite(self.B, "B")
        n = self.A.shape[0]
        if self.A.ndim != 2 or self.A.shape != (n, n):
            raise ValidationError("A must be square")
        if self.B.ndim != 2 or self.B.shape[0] != n:
            raise ValidationError("B row count must match A")
        if self.W is None:
            self.W = np.zeros((n, n))
        self.W = symmetrize(check_finite(self.W, "W"))
        if self.W.shape != (n, n):
            raise ValidationError("W must be n_x by n_x")
        if np.linalg.eigvalsh(self.W)[0] < -1e-10 * max(1.0, np.linalg.norm(self.W)):
            raise ValidationError("W must be positive semidefinite")

    @property
    def nx(self):
        return self.A.shape[0]

    @property
    def nu(self):
        return self.B.shape[1]


@dataclass(eq=False)
class PerformanceChannel:
    """Uncertainty interconnection data (B1, C1, D12) for the H-inf channel."""

    B1: np.ndarray
    C1: np.ndarray
    D12: np.ndarray

    def __post_init__(self):
        self.B1 = check_finite(self.B1, "B1")
        self.C1 = check_finite(self.C1, "C1")
        self.D12 = check_finite(self.D12, "D12")
        if self.B1.ndim != 2 or self.C1.ndim != 2 or self.D12.ndim != 2:
            raise ValidationError("channel matrices must be 2-D")
        if self.C1.shape[0] != self.D12.shape[0]:
            raise ValidationError("C1 and D12 must agree on n_z")

    @property
    def nd(self):
        return self.B1.shape[1]

    @property
    def nz(self):
        return self.C1.shape[0]

    def check_dims(self, sys: LinearSystem):
        if self.B1.shape[0] != sys.nx:
            raise ValidationError("B1 row count must match n_x")
        if self.C1.shape[1] != sys.nx:
            raise ValidationError("C1 column count must match n_x")
        if self.D12.shape[1] != sys.nu:
            raise ValidationError("D12 column count must match n_u")


@dataclass(eq=False)
class PolicyParams:
    """Decision pair (Q, L) with Q symmetric; K = L Q^{-1} when Q > 0."""

    Q: np.ndarray
    L: np.ndarray

    def __post_init__(self):
        self.Q = symmetrize(check_finite(self.Q, "Q"))
        self.L = check_finite(self.L, "L")
        if self.L.shape[1] != self.Q.shape[0]:
            raise ValidationError("L column count must match Q dimension")


@dataclass(eq=False)
class LmiMap:
    """Affine map (Q, L) -> symmetric block matrix, with adjoint.

    kind is "stability" or "hinf" (the latter carries gamma and the
    channel). tied_gain, when set, fixes L = tied_gain @ Q.
    """

    kind: str
    sys: LinearSystem
    ch: PerformanceChannel | None = None
    gamma: float | None = None
    tied_gain: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def nx(self):
        return self.sys.nx

    @property
    def nu(self):
        return self.sys.nu

    @property
    def m(self):
        """Block dimension of the output matrix."""
        if self.kind == "stability":
            return 2 * self.nx
        return 2 * self.nx + self.ch.nd + self.ch.nz

    @property
    def tied(self):
        return self.tied_gain is not None

    def tie(self, K):
        """Analysis variant with L structurally equal to K @ Q."""
        K = check_finite(K, "K")
        if K.shape != (self.nu, self.nx):
            raise ValidationError("tied gain has wrong shape")
        return LmiMap(kind=self.kind, sys=self.sys, ch=self.ch,
                      gamma=self.gamma, tied_gain=K)

    def constant(self):
        """M0, the (Q, L)-independent part."""
        n = self.nx
        if self.kind == "stability":
            return np.zeros((2 * n, 2 * n))
        nd, nz = self.ch.nd, self.ch.nz
        m = 2 * n + nd + nz
        M0 = np.zeros((m, m))
        M0[0:n, 2 * n:2 * n + nd] = self.ch.B1
        M0[2 * n:2 * n + nd, 0:n] = self.ch.B1.T
        M0[2 * n:2 * n + nd, 2 * n:2 * n + nd] = np.eye(nd)
        M0[2 * n + nd:, 2 * n + nd:] = self.gamma ** 2 * np.eye(nz)
        return M0

    def linear(self, Q, L):
        """A(Q, L), the linear part."""
        n = self.nx
        A, B = self.sys.A, self.sys.B
        Z = A @ Q + B @ L
        if self.kind == "stability":
            M = np.zeros((2 * n, 2 * n))
            M[0:n, 0:n] = Q
            M[n:2 * n, n:2 * n] = Q
            M[0:n, n:2 * n] = Z
            M[n:2 * n, 0:n] = Z.T
            return M
        nd, nz = self.ch.nd, self.ch.nz
        m = 2 * n + nd + nz
        Y = Q @ self.ch.C1.T + L.T @ self.ch.D12.T
        M = np.zeros((m, m))
        M[0:n, 0:n] = Q
        M[n:2 * n, n:2 * n] = Q
        M[0:n, n:2 * n] = Z
        M[n:2 * n, 0:n] = Z.T
        M[n:2 * n, 2 * n + nd:] = Y
        M[2 * n + nd:, n:2 * n] = Y.T
        return M

    def evaluate(self, Q, L=None):
        """M(Q, L) = M0 + A(Q, L); tied maps derive L from Q."""
        Q = symmetrize(Q)
        if L is None:
            if not self.tied:
                raise ValidationError("L required for an untied map")
            L = self.tied_gain @ Q
        if Q.shape != (self.nx, self.nx) or L.shape != (self.nu, self.nx):
            raise ValidationError("(Q, L) dimensions do not match the map")
        return self.constant() + self.linear(Q, L)

    def adjoint(self, S):
        """(gQ, gL) with <A(Q,L), S> = <Q, gQ> + <L, gL> for symmetric S.

        gQ lives in the symmetric matrices (gradients along symmetric
        directions); consistency is pinned by a randomized inner-product
        test.
        """
        n = self.nx
        S = np.asarray(S, dtype=float)
        A, B = self.sys.A, self.sys.B
        S00 = S[0:n, 0:n]
        S01 = S[0:n, n:2 * n]
        S11 = S[n:2 * n, n:2 * n]
        gQ = symmetrize(S00) + symmetrize(S11) + 2.0 * symmetrize(A.T @ S01)
        gL = 2.0 * B.T @ S01
        if self.kind == "hinf":
            nd = self.ch.nd
            S13 = S[n:2 * n, 2 * n + nd:]
            gQ = gQ + 2.0 * symmetrize(S13 @ self.ch.C1)
            gL = gL + 2.0 * self.ch.D12.T @ S13.T
        return gQ, gL

    def adjoint_q(self, S):
        """Adjoint of the tied map Q -> A(Q, K@Q)."""
        gQ, gL = self.adjoint(S)
        return gQ + symmetrize(self.tied_gain.T @ gL)


def stability_lmi(sys: LinearSystem) -> LmiMap:
    """Stabilizability constraint [[Q, AQ+BL], [*, Q]] > 0.

    Q > 0 is implied by the diagonal blocks, so one cone covers both
    conditions.
    """
    return LmiMap(kind="stability", sys=sys)


def hinf_lmi(sys: LinearSystem, ch: PerformanceChannel, gamma: float) -> LmiMap:
    """Bounded-real constraint certifying ||F(K)||_inf < gamma at K = LQ^{-1}."""
    if gamma <= 0:
        raise ValidationError("gamma must be positive")
    ch.check_dims(sys)
    return LmiMap(kind="hinf", sys=sys, ch=ch, gamma=float(gamma))


def margin(lmi_map: LmiMap, p: PolicyParams) -> float:
    """Smallest eigenvalue of M(Q, L); > 0 means strictly feasible."""
    w, _ = sym_eig(lmi_map.evaluate(p.Q, p.L), "LMI block matrix")
    return float(w[0])


def extract_gain(p: PolicyParams) -> np.ndarray:
    """K = L Q^{-1} by factorization solve with one refinement step."""
    w = np.linalg.eigvalsh(p.Q)
    if w[0] <= 0:
        raise CertificateError(
            "Q is not positive definite (min eigenvalue "
            f"{w[0]:.3e}); re-project the parameters before extracting a gain")
    K = np.linalg.solve(p.Q, p.L.T).T
    K = K + np.linalg.solve(p.Q, (p.L - K @ p.Q).T).T
    return K


@dataclass(eq=False)
class CertificateReport:
    """Independent re-verification of a fitted (Q, L) certificate."""

    K: np.ndarray
    P: np.ndarray
    lmi_margin: float
    closed_loop_radius: float
    lyapunov_gap: float  # min eigenvalue of P - (A+BK)'P(A+BK)
    stable: bool
    hinf_norm: float | None = None
    gamma: float | None = None
    robust: bool | None = None

    def to_dict(self):
        return {
            "K": self.K.tolist(),
            "P": self.P.tolist(),
            "lmi_margin": self.lmi_margin,
            "closed_loop_radius": self.closed_loop_radius,
            "lyapunov_gap": self.lyapunov_gap,
            "stable": self.stable,
            "hinf_norm": self.hinf_norm,
            "gamma": self.gamma,
            "robust": self.robust,
        }


def certify(sys: LinearSystem, p: PolicyParams, ch: PerformanceChannel = None,
            gamma: float = None, norm_tol: float = 1e-3) -> CertificateReport:
    """Re-verify a feasible (Q, L) from scratch with the matops kernels.

    Recomputes K, P = Q^{-1}, the Lyapunov decrease condition, the spectral
    radius, and (when a channel is given) the closed-loop H-inf norm.
    Nothing here trusts the optimizer that produced the point: a positive
    margin contradicted by any independent check raises
    InternalInconsistencyError.
    """
    if ch is not None and gamma is not None:
        lmi_map = hinf_lmi(sys, ch, gamma)
    else:
        lmi_map = stability_lmi(sys)
    feas = margin(lmi_map, p)
    if feas <= 0:
        raise CertificateError(
            f"certify requires a strictly feasible point (margin {feas:.3e})")

    K = extract_gain(p)
    P = symmetrize(np.linalg.inv(p.Q))
    Acl = sys.A + sys.B @ K
    rho = spectral_radius(Acl)
    gap = float(np.linalg.eigvalsh(symmetrize(P - Acl.T @ P @ Acl))[0])
    stable = rho < 1.0 and gap > 0
    if not stable:
        raise InternalInconsistencyError(
            f"LMI margin {feas:.3e} is positive but independent checks fail "
            f"(rho={rho:.6f}, lyapunov gap={gap:.3e}); solver tolerances are "
            "misconfigured")

    hnorm = None
    robust = None
    if ch is not None:
        from .control import hinf_norm_lmi  # deferred: control imports lmi

        hnorm = hinf_norm_lmi(sys, ch, K, tol=norm_tol)
        if gamma is not None:
            # 1% slack covers the bisection tolerance of the recomputed norm
            robust = hnorm <= gamma * (1.0 + 1e-2)
            if not robust:
                raise InternalInconsistencyError(
                    f"margin {feas:.3e} certifies the gamma={gamma:.6f} LMI "
                    f"but the recomputed norm is {hnorm:.6f}")
    return CertificateReport(K=K, P=P, lmi_margin=feas, closed_loop_radius=rho,
                             lyapunov_gap=gap, stable=stable, hinf_norm=hnorm,
                             gamma=gamma, robust=robust)


def system_to_json(sys: LinearSystem, ch: PerformanceChannel = None) -> str:
    """Interchange JSON for a system (and optional channel)."""
    doc = {"A": sys.A.tolist(), "B": sys.B.tolist(), "W": sys.W.tolist()}
    if ch is not None:
        doc["channel"] = {"B1": ch.B1.tolist(), "C1": ch.C1.tolist(),
                          "D12": ch.D12.tolist()}
    return json.dumps(doc, indent=2, sort_keys=True)


def system_from_json(text: str):
    """Parse the interchange JSON; returns (LinearSystem, channel-or-None)."""
    try:
        doc = json.loads(text)
        sys = LinearSystem(A=np.array(doc["A"], dtype=float),
                           B=np.array(doc["B"], dtype=float),
                           W=np.array(doc["W"], dtype=float) if "W" in doc else None)
        ch = None
        if doc.get("channel") is not None:
            c = doc["channel"]
            ch = PerformanceChannel(B1=np.array(c["B1"], dtype=float),
                                    C1=np.array(c["C1"], dtype=float),
                                    D12=np.array(c["D12"], dtype=float))
            ch.check_dims(sys)
        return sys, ch
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"malformed system JSON: {exc}") from exc
