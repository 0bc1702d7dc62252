"""Risk-sensitive control and disturbance attenuation as sibling
formulations of the same two-player recursion: objectives and policy
gradients via their Riccati recursions, the parameter mapping onto the
game, and cross-formulation consistency checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import grde
from .errors import (
    AssumptionViolated,
    AttenuationFeasibility,
    ConfigError,
    RiskFeasibility,
)
from .linalg import psd_sqrt, solve_sym, sym
from .system import (
    FEAS_TOL,
    GainSchedule,
    NoiseModel,
    TimeVaryingSystem,
    _matrix_tuple,
    _sym_tuple,
)


@dataclass(frozen=True)
class LeqgSystem:
    """Finite-horizon exponential-quadratic (risk-sensitive) problem.

    Per-step A_t, B_t with state weights Q_0..Q_N, control weights
    R_0..R_{N-1}, Gaussian process noise covariance W, initial-state
    covariance X0, and risk parameter beta > 0. Whether beta is below the
    feasibility breakdown is checked at solve time, not here.
    """

    A: tuple[np.ndarray, ...]
    B: tuple[np.ndarray, ...]
    Q: tuple[np.ndarray, ...]
    R: tuple[np.ndarray, ...]
    W: np.ndarray
    X0: np.ndarray
    beta: float

    def __post_init__(self) -> None:
        B0 = np.asarray(self.B[0], dtype=float)
        m, d = np.asarray(self.A[0], dtype=float).shape[0], B0.shape[1]
        N = len(self.B)
        object.__setattr__(self, "A", _matrix_tuple(self.A, N, (m, m), "A"))
        object.__setattr__(self, "B", _matrix_tuple(self.B, N, (m, d), "B"))
        object.__setattr__(
            self, "Q", _sym_tuple(self.Q, N + 1, m, "Q", min_eigenvalue=-FEAS_TOL)
        )
        object.__setattr__(
            self, "R", _sym_tuple(self.R, N, d, "R", min_eigenvalue=FEAS_TOL)
        )
        (W,) = _sym_tuple([self.W], 1, m, "W", min_eigenvalue=FEAS_TOL)
        (X0,) = _sym_tuple([self.X0], 1, m, "X0", min_eigenvalue=FEAS_TOL)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "X0", X0)
        if not (np.isfinite(self.beta) and self.beta > 0):
            raise ConfigError("beta must be a positive real")

    @property
    def horizon(self) -> int:
        return len(self.B)

    @property
    def m(self) -> int:
        return self.A[0].shape[0]

    @property
    def d(self) -> int:
        return self.B[0].shape[1]

    def to_dict(self) -> dict:
        return {
            "formulation": "leqg",
            "A": [a.tolist() for a in self.A],
            "B": [b.tolist() for b in self.B],
            "Q": [q.tolist() for q in self.Q],
            "R": [r.tolist() for r in self.R],
            "W": self.W.tolist(),
            "X0": self.X0.tolist(),
            "beta": self.beta,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LeqgSystem":
        if data.get("formulation") != "leqg":
            raise ConfigError('expected formulation "leqg"')
        try:
            return cls(
                A=tuple(np.asarray(a, dtype=float) for a in data["A"]),
                B=tuple(np.asarray(b, dtype=float) for b in data["B"]),
                Q=tuple(np.asarray(q, dtype=float) for q in data["Q"]),
                R=tuple(np.asarray(r, dtype=float) for r in data["R"]),
                W=np.asarray(data["W"], dtype=float),
                X0=np.asarray(data["X0"], dtype=float),
                beta=float(data["beta"]),
            )
        except KeyError as exc:
            raise ConfigError(f"missing field {exc}") from exc


@dataclass(frozen=True)
class DaSystem:
    """Finite-horizon disturbance attenuation below a given level gamma.

    Regulated output z_t = C_t x_t + E_t u_t with the usual normalization
    E_t' [C_t E_t] = [0 R_t], R_t > 0, enforced to 1e-10; terminal weight
    Q_N. Whether gamma exceeds the optimal attenuation level is reported
    through solve-time feasibility, never computed directly.
    """

    A: tuple[np.ndarray, ...]
    B: tuple[np.ndarray, ...]
    D: tuple[np.ndarray, ...]
    C: tuple[np.ndarray, ...]
    E: tuple[np.ndarray, ...]
    Q_N: np.ndarray
    gamma: float

    def __post_init__(self) -> None:
        m = np.asarray(self.A[0], dtype=float).shape[0]
        d = np.asarray(self.B[0], dtype=float).shape[1]
        n = np.asarray(self.D[0], dtype=float).shape[1]
        p = np.asarray(self.C[0], dtype=float).shape[0]
        N = len(self.B)
        object.__setattr__(self, "A", _matrix_tuple(self.A, N, (m, m), "A"))
        object.__setattr__(self, "B", _matrix_tuple(self.B, N, (m, d), "B"))
        object.__setattr__(self, "D", _matrix_tuple(self.D, N, (m, n), "D"))
        object.__setattr__(self, "C", _matrix_tuple(self.C, N, (p, m), "C"))
        object.__setattr__(self, "E", _matrix_tuple(self.E, N, (p, d), "E"))
        (QN,) = _sym_tuple([self.Q_N], 1, m, "Q_N", min_eigenvalue=-FEAS_TOL)
        object.__setattr__(self, "Q_N", QN)
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ConfigError("gamma must be a positive real")
        for t in range(N):
            cross = self.E[t].T @ self.C[t]
            if np.abs(cross).max() > 1e-10:
                raise ConfigError(f"E[{t}]'C[{t}] must vanish (got {np.abs(cross).max():.2e})")
            lam = float(np.linalg.eigvalsh(sym(self.E[t].T @ self.E[t]))[0])
            if lam <= FEAS_TOL:
                raise ConfigError(f"E[{t}]'E[{t}] must be positive definite")

    @classmethod
    def from_weights(
        cls,
        A,
        B,
        D,
        Q,
        R,
        Q_N: np.ndarray,
        gamma: float,
    ) -> "DaSystem":
        """Build the output matrices from state/control weights.

        C_t stacks Q_t^{1/2} over zeros and E_t stacks zeros over R_t^{1/2},
        so C_t'C_t = Q_t, E_t'E_t = R_t, and E_t'C_t = 0 by construction.
        """
        N = len(B)
        m = np.asarray(A[0], dtype=float).shape[0]
        d = np.asarray(B[0], dtype=float).shape[1]
        C = []
        E = []
        for t in range(N):
            C.append(np.vstack([psd_sqrt(np.asarray(Q[t], dtype=float)), np.zeros((d, m))]))
            E.append(np.vstack([np.zeros((m, d)), psd_sqrt(np.asarray(R[t], dtype=float))]))
        return cls(A=tuple(A), B=tuple(B), D=tuple(D), C=tuple(C), E=tuple(E),
                   Q_N=np.asarray(Q_N, dtype=float), gamma=float(gamma))

    @property
    def horizon(self) -> int:
        return len(self.B)

    @property
    def m(self) -> int:
        return self.A[0].shape[0]

    @property
    def d(self) -> int:
        return self.B[0].shape[1]

    @property
    def n(self) -> int:
        return self.D[0].shape[1]

    def Q_at(self, t: int) -> np.ndarray:
        return sym(self.C[t].T @ self.C[t]) if t < self.horizon else self.Q_N

    def R_at(self, t: int) -> np.ndarray:
        return sym(self.E[t].T @ self.E[t])

    def to_dict(self) -> dict:
        return {
            "formulation": "da",
            "A": [a.tolist() for a in self.A],
            "B": [b.tolist() for b in self.B],
            "D": [dd.tolist() for dd in self.D],
            "C": [c.tolist() for c in self.C],
            "E": [e.tolist() for e in self.E],
            "Q_N": self.Q_N.tolist(),
            "gamma": self.gamma,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DaSystem":
        if data.get("formulation") != "da":
            raise ConfigError('expected formulation "da"')
        try:
            return cls(
                A=tuple(np.asarray(a, dtype=float) for a in data["A"]),
                B=tuple(np.asarray(b, dtype=float) for b in data["B"]),
                D=tuple(np.asarray(dd, dtype=float) for dd in data["D"]),
                C=tuple(np.asarray(c, dtype=float) for c in data["C"]),
                E=tuple(np.asarray(e, dtype=float) for e in data["E"]),
                Q_N=np.asarray(data["Q_N"], dtype=float),
                gamma=float(data["gamma"]),
            )
        except KeyError as exc:
            raise ConfigError(f"missing field {exc}") from exc


def formulation_from_dict(data: dict) -> "LeqgSystem | DaSystem":
    """Dispatch on the `formulation` discriminator field."""
    kind = data.get("formulation")
    if kind == "leqg":
        return LeqgSystem.from_dict(data)
    if kind == "da":
        return DaSystem.from_dict(data)
    raise ConfigError(f"unknown formulation {kind!r}")


@dataclass(frozen=True)
class RdeSolution:
    """Backward Riccati pass for one formulation.

    margins[0] is the initial-state positivity margin; margins[t] for
    t >= 1 is the per-step noise/disturbance positivity margin at P_t.
    """

    P_blocks: tuple[np.ndarray, ...]
    Ptilde_blocks: tuple[np.ndarray, ...]
    gains: GainSchedule
    margins: tuple[float, ...]
    feasible: bool = True


def _leqg_pass(sys: LeqgSystem, Ks: GainSchedule | None) -> RdeSolution:
    """Backward pass of the risk-adjusted recursion.

    With Ks fixed this evaluates the policy; with Ks None it computes the
    optimal gains alongside. Raises RiskFeasibility at the first step whose
    positivity margin falls to tol or below (backward order, then the
    initial-state condition).
    """
    N, m = sys.horizon, sys.m
    beta = sys.beta
    Ws = psd_sqrt(sys.W)
    Winv = solve_sym(sys.W, np.eye(m))
    margins = [0.0] * (N + 1)
    P: list[np.ndarray | None] = [None] * (N + 1)
    Ptilde: list[np.ndarray | None] = [None] * (N + 1)
    gains: list[np.ndarray] = [None] * N  # type: ignore[list-item]
    P[N] = sys.Q[N]
    for t in range(N - 1, -1, -1):
        P1 = P[t + 1]
        margins[t + 1] = float(np.linalg.eigvalsh(sym(Winv - beta * P1))[0])
        if margins[t + 1] <= FEAS_TOL:
            raise RiskFeasibility(t + 1, margins[t + 1])
        mid = sym(np.eye(m) - beta * Ws @ P1 @ Ws)
        Pt1 = sym(P1 + beta * (P1 @ Ws) @ solve_sym(mid, Ws @ P1))
        Ptilde[t + 1] = Pt1
        if Ks is None:
            G = sym(sys.R[t] + sys.B[t].T @ Pt1 @ sys.B[t])
            Kt = solve_sym(G, sys.B[t].T @ Pt1 @ sys.A[t])
        else:
            Kt = Ks.blocks[t]
        gains[t] = Kt
        Acl = sys.A[t] - sys.B[t] @ Kt
        P[t] = sym(sys.Q[t] + Kt.T @ sys.R[t] @ Kt + Acl.T @ Pt1 @ Acl)
    X0inv = solve_sym(sys.X0, np.eye(m))
    margins[0] = float(np.linalg.eigvalsh(sym(X0inv - beta * P[0]))[0])
    if margins[0] <= FEAS_TOL:
        raise RiskFeasibility(0, margins[0])
    Ptilde[0] = P[0]
    return RdeSolution(
        P_blocks=tuple(P),
        Ptilde_blocks=tuple(Ptilde),
        gains=Ks if Ks is not None else GainSchedule("K", tuple(gains)),
        margins=tuple(margins),
    )


def leqg_rde(sys: LeqgSystem) -> RdeSolution:
    """Optimal risk-sensitive gains via the risk-adjusted recursion."""
    return _leqg_pass(sys, None)


def _leqg_value_from(sys: LeqgSystem, sol: RdeSolution) -> float:
    beta = sys.beta
    Ws = psd_sqrt(sys.W)
    X0s = psd_sqrt(sys.X0)
    P0 = sol.P_blocks[0]
    sign, logdet = np.linalg.slogdet(
        sym(np.eye(sys.m) - beta * X0s @ P0 @ X0s)
    )
    total = logdet
    for t in range(1, sys.horizon + 1):
        sign_t, ld = np.linalg.slogdet(
            sym(np.eye(sys.m) - beta * Ws @ sol.P_blocks[t] @ Ws)
        )
        sign *= sign_t
        total += ld
    if sign <= 0:
        raise RiskFeasibility(0, 0.0)
    return float(-total / beta)


def leqg_value(sys: LeqgSystem, Ks: GainSchedule) -> float:
    """Risk-sensitive cost of the policy u_t = -Ks_t x_t."""
    return _leqg_value_from(sys, _leqg_pass(sys, Ks))


def _sensitivity_gradient(
    A, B, R, Ks: GainSchedule, Ptilde, M, G
) -> GainSchedule:
    """Shared gradient skeleton: 2[(R+B'P~B)K - B'P~A] Sigma_t with
    Sigma_0 = M_0 and Sigma_{t+1} = G_t Sigma_t G_t' + M_{t+1}."""
    N = len(Ks.blocks)
    grads = []
    Sigma = M[0]
    for t in range(N):
        Pt1 = Ptilde[t + 1]
        bracket = (R[t] + B[t].T @ Pt1 @ B[t]) @ Ks.blocks[t] - B[t].T @ Pt1 @ A[t]
        grads.append(2.0 * bracket @ sym(Sigma))
        if t + 1 < N:
            Sigma = G[t] @ Sigma @ G[t].T + M[t + 1]
    return GainSchedule("K", tuple(grads))


def leqg_gradient(sys: LeqgSystem, Ks: GainSchedule) -> GainSchedule:
    """Exact policy gradient of leqg_value at Ks."""
    sol = _leqg_pass(sys, Ks)
    N, m = sys.horizon, sys.m
    beta = sys.beta
    Ws = psd_sqrt(sys.W)
    X0s = psd_sqrt(sys.X0)
    P = sol.P_blocks
    M = [
        sym(X0s @ solve_sym(sym(np.eye(m) - beta * X0s @ P[0] @ X0s), X0s))
    ]
    for tau in range(1, N):
        M.append(
            sym(Ws @ solve_sym(sym(np.eye(m) - beta * Ws @ P[tau] @ Ws), Ws))
        )
    G = []
    for i in range(N - 1):
        Acl = sys.A[i] - sys.B[i] @ Ks.blocks[i]
        G.append(np.linalg.solve(np.eye(m) - beta * sys.W @ P[i + 1], Acl))
    return _sensitivity_gradient(sys.A, sys.B, sys.R, Ks, sol.Ptilde_blocks, M, G)


def _da_pass(sys: DaSystem, Ks: GainSchedule | None) -> RdeSolution:
    """Backward pass of the attenuation recursion (gamma-form)."""
    N, m = sys.horizon, sys.m
    g2 = sys.gamma**2
    margins = [0.0] * (N + 1)
    P: list[np.ndarray | None] = [None] * (N + 1)
    Ptilde: list[np.ndarray | None] = [None] * (N + 1)
    gains: list[np.ndarray] = [None] * N  # type: ignore[list-item]
    P[N] = sys.Q_N
    for t in range(N - 1, -1, -1):
        P1 = P[t + 1]
        Dt = sys.D[t]
        cond = sym(g2 * np.eye(sys.n) - Dt.T @ P1 @ Dt)
        margins[t + 1] = float(np.linalg.eigvalsh(cond)[0])
        if margins[t + 1] <= FEAS_TOL:
            raise AttenuationFeasibility(t + 1, margins[t + 1])
        S = solve_sym(cond, Dt.T @ P1)
        Pt1 = sym(P1 + P1 @ Dt @ S)
        Ptilde[t + 1] = Pt1
        Rt = sys.R_at(t)
        if Ks is None:
            G = sym(Rt + sys.B[t].T @ Pt1 @ sys.B[t])
            Kt = solve_sym(G, sys.B[t].T @ Pt1 @ sys.A[t])
        else:
            Kt = Ks.blocks[t]
        gains[t] = Kt
        Acl = sys.A[t] - sys.B[t] @ Kt
        P[t] = sym(sys.Q_at(t) + Kt.T @ Rt @ Kt + Acl.T @ Pt1 @ Acl)
    margins[0] = float(np.linalg.eigvalsh(sym(g2 * np.eye(m) - P[0]))[0])
    if margins[0] <= FEAS_TOL:
        raise AttenuationFeasibility(0, margins[0])
    Ptilde[0] = P[0]
    return RdeSolution(
        P_blocks=tuple(P),
        Ptilde_blocks=tuple(Ptilde),
        gains=Ks if Ks is not None else GainSchedule("K", tuple(gains)),
        margins=tuple(margins),
    )


def da_rde(sys: DaSystem) -> RdeSolution:
    """Optimal attenuating gains via the gamma-form recursion."""
    return _da_pass(sys, None)


def da_values(sys: DaSystem, Ks: GainSchedule) -> tuple[float, float]:
    """Log-det and trace upper bounds attained by the policy Ks."""
    sol = _da_pass(sys, Ks)
    g2 = sys.gamma**2
    P = sol.P_blocks
    sign, total = np.linalg.slogdet(sym(np.eye(sys.m) - P[0] / g2))
    trace = float(np.trace(P[0]))
    for t in range(1, sys.horizon + 1):
        Dt = sys.D[t - 1]
        inner = sym(np.eye(sys.n) - (Dt.T @ P[t] @ Dt) / g2)
        sign_t, ld = np.linalg.slogdet(inner)
        sign *= sign_t
        total += ld
        trace += float(np.trace(Dt.T @ P[t] @ Dt))
    if sign <= 0:
        raise AttenuationFeasibility(0, 0.0)
    return float(-g2 * total), trace


def da_gradients(sys: DaSystem, Ks: GainSchedule) -> tuple[GainSchedule, GainSchedule]:
    """Exact policy gradients of the log-det and trace bounds at Ks."""
    sol = _da_pass(sys, Ks)
    N, m = sys.horizon, sys.m
    g2 = sys.gamma**2
    P = sol.P_blocks
    M_logdet = [solve_sym(sym(np.eye(m) - P[0] / g2), np.eye(m))]
    M_trace = [np.eye(m)]
    for tau in range(1, N):
        Dt = sys.D[tau - 1]
        inner = sym(np.eye(sys.n) - (Dt.T @ P[tau] @ Dt) / g2)
        M_logdet.append(sym(Dt @ solve_sym(inner, Dt.T)))
        M_trace.append(Dt @ Dt.T)
    G = []
    for i in range(N - 1):
        Di = sys.D[i]
        Acl = sys.A[i] - sys.B[i] @ Ks.blocks[i]
        G.append(np.linalg.solve(np.eye(m) - (Di @ Di.T @ P[i + 1]) / g2, Acl))
    R = [sys.R_at(t) for t in range(N)]
    grad_logdet = _sensitivity_gradient(
        sys.A, sys.B, R, Ks, sol.Ptilde_blocks, M_logdet, G
    )
    grad_trace = _sensitivity_gradient(
        sys.A, sys.B, R, Ks, sol.Ptilde_blocks, M_trace, G
    )
    return grad_logdet, grad_trace


def to_game(spec: "LeqgSystem | DaSystem") -> TimeVaryingSystem:
    """Map either formulation onto the two-player game.

    Risk-sensitive: Rw_t = I/beta, D_t = W^{1/2}; attenuation: Rw_t =
    gamma^2 I, D_t as given. Both keep Ru_t = R_t and the state weights.
    The game noise is unit covariance per step; the saddle gains do not
    depend on it.
    """
    if isinstance(spec, LeqgSystem):
        m = spec.m
        Ws = psd_sqrt(spec.W)
        Rw = np.eye(m) / spec.beta
        return TimeVaryingSystem(
            A=spec.A,
            B=spec.B,
            D=tuple(Ws for _ in range(spec.horizon)),
            Q=spec.Q,
            Ru=spec.R,
            Rw=tuple(Rw for _ in range(spec.horizon)),
            noise=NoiseModel(np.eye(m)),
        )
    if isinstance(spec, DaSystem):
        m = spec.m
        g2 = spec.gamma**2
        Rw = g2 * np.eye(spec.n)
        Q = tuple(spec.Q_at(t) for t in range(spec.horizon + 1))
        Ru = tuple(spec.R_at(t) for t in range(spec.horizon))
        return TimeVaryingSystem(
            A=spec.A,
            B=spec.B,
            D=spec.D,
            Q=Q,
            Ru=Ru,
            Rw=tuple(Rw for _ in range(spec.horizon)),
            noise=NoiseModel(np.eye(m)),
        )
    raise ConfigError(f"unsupported formulation {type(spec).__name__}")


@dataclass(frozen=True)
class EquivalenceReport:
    """Outcome of checking one formulation against the mapped game."""

    formulation: str
    stationarity: float
    gain_discrepancies: tuple[float, ...]
    margins: tuple[float, ...]
    tol: float
    ok: bool


def verify_equivalence(spec: "LeqgSystem | DaSystem", tol: float = 1e-7) -> EquivalenceReport:
    """Solve the mapped game and test the saddle gain against the native
    recursion: per-step gain discrepancies plus stationarity of the
    formulation's own gradient(s) at the game solution."""
    game_sys = to_game(spec)
    nash = grde(game_sys)
    if not nash.assumption_ok:
        worst = min(nash.margins)
        raise AssumptionViolated(
            f"mapped game violates the disturbance margin condition (min margin {worst:.3e})"
        )
    Kstar = nash.Kstar
    if isinstance(spec, LeqgSystem):
        formulation = "leqg"
        native = leqg_rde(spec)
        stationarity = leqg_gradient(spec, Kstar).norm()
    else:
        formulation = "da"
        native = da_rde(spec)
        g_logdet, g_trace = da_gradients(spec, Kstar)
        stationarity = max(g_logdet.norm(), g_trace.norm())
    disc = tuple(
        float(np.linalg.norm(Kstar.blocks[t] - native.gains.blocks[t]))
        for t in range(spec.horizon)
    )
    return EquivalenceReport(
        formulation=formulation,
        stationarity=float(stationarity),
        gain_discrepancies=disc,
        margins=native.margins,
        tol=float(tol),
        ok=bool(stationarity <= tol),
    )
