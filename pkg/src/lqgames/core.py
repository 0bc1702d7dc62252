"""Value and correlation recursions, exact gradients, the inner (fixed-K)
Riccati solve, and the Nash recursion for the finite-horizon game."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, InfeasibleGain, SingularLambda
from .linalg import block_diag, min_eig, solve_sym, sym
from .system import (
    FEAS_TOL,
    CompactGame,
    GainSchedule,
    TimeVaryingSystem,
    unit_schedule,
)

# Off-pattern entries of the lifted gradients are structural zeros.
_PATTERN_TOL = 1e-12
# Agreement required between the two objective formulas (relative).
_CROSS_TOL = 1e-9


def check_gains(sys: TimeVaryingSystem, K: GainSchedule, L: GainSchedule) -> None:
    """Validate that the gain schedules match the system dimensions."""
    if K.player != "K" or L.player != "L":
        raise ConfigError("expected a (K, L) pair in that order")
    ok_K = K.horizon == sys.horizon and (K.rows, K.cols) == (sys.d, sys.m)
    ok_L = L.horizon == sys.horizon and (L.rows, L.cols) == (sys.n, sys.m)
    if not (ok_K and ok_L):
        raise ConfigError("gain schedule shape does not match the system")


def closed_loop(
    sys: TimeVaryingSystem, K: GainSchedule, L: GainSchedule
) -> list[np.ndarray]:
    """Closed-loop transition matrices A_t - B_t K_t - D_t L_t."""
    return [
        sys.A[t] - sys.B[t] @ K.blocks[t] - sys.D[t] @ L.blocks[t]
        for t in range(sys.horizon)
    ]


def value_blocks(
    sys: TimeVaryingSystem, K: GainSchedule, L: GainSchedule
) -> list[np.ndarray]:
    """Backward value recursion under fixed gains; P_t for t = 0..N."""
    N = sys.horizon
    Acl = closed_loop(sys, K, L)
    P = [np.zeros(0)] * (N + 1)
    P[N] = sys.Q[N]
    for t in range(N - 1, -1, -1):
        stage = (
            sys.Q[t]
            + K.blocks[t].T @ sys.Ru[t] @ K.blocks[t]
            - L.blocks[t].T @ sys.Rw[t] @ L.blocks[t]
        )
        P[t] = sym(Acl[t].T @ P[t + 1] @ Acl[t] + stage)
    return P


def correlation_blocks(
    sys: TimeVaryingSystem, K: GainSchedule, L: GainSchedule
) -> list[np.ndarray]:
    """Forward state-correlation recursion under fixed gains; Sigma_t for t = 0..N."""
    S0 = sys.noise.sigma0_step
    Acl = closed_loop(sys, K, L)
    out = [S0]
    for t in range(sys.horizon):
        out.append(sym(Acl[t] @ out[t] @ Acl[t].T + S0))
    return out


def value_matrix(game: CompactGame, K: GainSchedule, L: GainSchedule) -> np.ndarray:
    """Block-diagonal lifted value matrix of the pair (K, L)."""
    check_gains(game.sys, K, L)
    return block_diag(value_blocks(game.sys, K, L))


def correlation_matrix(game: CompactGame, K: GainSchedule, L: GainSchedule) -> np.ndarray:
    """Block-diagonal lifted state correlation of the pair (K, L)."""
    check_gains(game.sys, K, L)
    return block_diag(correlation_blocks(game.sys, K, L))


@dataclass(frozen=True)
class ValuePair:
    """Lifted value and correlation matrices of one gain pair."""

    P: np.ndarray
    Sigma: np.ndarray


def value_pair(game: CompactGame, K: GainSchedule, L: GainSchedule) -> ValuePair:
    return ValuePair(P=value_matrix(game, K, L), Sigma=correlation_matrix(game, K, L))


def _objective_from_blocks(sys: TimeVaryingSystem, P: list[np.ndarray]) -> float:
    S0 = sys.noise.sigma0_step
    return float(sum(np.trace(p @ S0) for p in P))


def objective(game: CompactGame, K: GainSchedule, L: GainSchedule) -> float:
    """Game objective of the pair (K, L).

    Computed as trace(P Sigma0) and cross-checked against the stage-cost
    form trace((Q + K'Ru K - L'Rw L) Sigma); the two must agree to 1e-9
    relative (skipped when the value has already blown up to non-finite).
    """
    sys = game.sys
    check_gains(sys, K, L)
    P = value_blocks(sys, K, L)
    val = _objective_from_blocks(sys, P)
    if not np.isfinite(val):
        return val
    Sig = correlation_blocks(sys, K, L)
    alt = float(np.trace(sys.Q[sys.horizon] @ Sig[sys.horizon]))
    for t in range(sys.horizon):
        stage = (
            sys.Q[t]
            + K.blocks[t].T @ sys.Ru[t] @ K.blocks[t]
            - L.blocks[t].T @ sys.Rw[t] @ L.blocks[t]
        )
        alt += float(np.trace(stage @ Sig[t]))
    denom = max(1.0, abs(val))
    assert abs(val - alt) <= _CROSS_TOL * denom, (
        f"objective formulas disagree: {val!r} vs {alt!r}"
    )
    return val


def _ef_blocks(
    sys: TimeVaryingSystem,
    K: GainSchedule,
    L: GainSchedule,
    P: list[np.ndarray],
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Stationarity residuals F_t (minimizer) and E_t (maximizer)."""
    F, E = [], []
    for t in range(sys.horizon):
        P1 = P[t + 1]
        Bt, Dt = sys.B[t], sys.D[t]
        F.append(
            (sys.Ru[t] + Bt.T @ P1 @ Bt) @ K.blocks[t]
            - Bt.T @ P1 @ (sys.A[t] - Dt @ L.blocks[t])
        )
        E.append(
            (-sys.Rw[t] + Dt.T @ P1 @ Dt) @ L.blocks[t]
            - Dt.T @ P1 @ (sys.A[t] - Bt @ K.blocks[t])
        )
    return F, E


def _off_pattern_max(mat: np.ndarray, rows: int, cols: int, horizon: int) -> float:
    """Largest |entry| outside the block-diagonal gain pattern."""
    probe = mat.copy()
    for t in range(horizon):
        probe[t * rows : (t + 1) * rows, t * cols : (t + 1) * cols] = 0.0
    return float(np.abs(probe).max()) if probe.size else 0.0


class Gradients(NamedTuple):
    gradK: GainSchedule
    gradL: GainSchedule
    F: GainSchedule
    E: GainSchedule


def gradients(game: CompactGame, K: GainSchedule, L: GainSchedule) -> Gradients:
    """Exact policy gradients 2 F Sigma (w.r.t. K) and 2 E Sigma (w.r.t. L).

    The lifted products are computed densely and asserted to vanish off the
    block pattern before projecting back to per-step blocks.
    """
    sys = game.sys
    check_gains(sys, K, L)
    P = value_blocks(sys, K, L)
    Sig = correlation_blocks(sys, K, L)
    F, E = _ef_blocks(sys, K, L, P)

    Pc = block_diag(P)
    Sc = block_diag(Sig)
    Kc, Lc = K.compact(), L.compact()
    Fc = (game.blockRu + game.blockB.T @ Pc @ game.blockB) @ Kc - game.blockB.T @ Pc @ (
        game.blockA - game.blockD @ Lc
    )
    Ec = (-game.blockRw + game.blockD.T @ Pc @ game.blockD) @ Lc - game.blockD.T @ Pc @ (
        game.blockA - game.blockB @ Kc
    )
    gKc = 2.0 * Fc @ Sc
    gLc = 2.0 * Ec @ Sc
    N, m, d, n = sys.horizon, sys.m, sys.d, sys.n
    assert _off_pattern_max(gKc, d, m, N) <= _PATTERN_TOL
    assert _off_pattern_max(gLc, n, m, N) <= _PATTERN_TOL

    mk = lambda player, blocks: GainSchedule(player, tuple(blocks))
    return Gradients(
        gradK=mk("K", (2.0 * F[t] @ Sig[t] for t in range(N))),
        gradL=mk("L", (2.0 * E[t] @ Sig[t] for t in range(N))),
        F=mk("K", F),
        E=mk("L", E),
    )


@dataclass(frozen=True)
class InnerSolution:
    """Inner maximization solved exactly for a fixed minimizer gain."""

    P_blocks: tuple[np.ndarray, ...]
    Ptilde_blocks: tuple[np.ndarray, ...]
    H_blocks: tuple[np.ndarray, ...]
    G_blocks: tuple[np.ndarray, ...]
    Lstar: GainSchedule
    lambda_min_H: float
    value: float
    feasible: bool = True

    @property
    def P(self) -> np.ndarray:
        return block_diag(list(self.P_blocks))

    @property
    def Ptilde(self) -> np.ndarray:
        return block_diag(list(self.Ptilde_blocks))

    @property
    def H(self) -> np.ndarray:
        return block_diag(list(self.H_blocks))

    @property
    def G(self) -> np.ndarray:
        return block_diag(list(self.G_blocks))


def inner_riccati(game: CompactGame, K: GainSchedule) -> InnerSolution:
    """Exact best response of the maximizer and the induced value of K.

    Runs the backward recursion with the disturbance channel maximized out.
    Raises InfeasibleGain when some margin Rw - D'PD loses definiteness or
    the value matrix goes indefinite, i.e. K is outside the feasible set.
    """
    sys = game.sys
    if K.player != "K" or K.horizon != sys.horizon or (K.rows, K.cols) != (sys.d, sys.m):
        raise ConfigError("gain schedule shape does not match the system")
    N = sys.horizon
    P = [np.zeros(0)] * (N + 1)
    Ptilde = [np.zeros(0)] * (N + 1)
    H: list[np.ndarray] = [np.zeros(0)] * N
    G: list[np.ndarray] = [np.zeros(0)] * N
    Lblocks: list[np.ndarray] = [np.zeros(0)] * N
    P[N] = sys.Q[N]
    lam_min = np.inf
    for t in range(N - 1, -1, -1):
        P1 = P[t + 1]
        Dt, Bt = sys.D[t], sys.B[t]
        Ht = sym(sys.Rw[t] - Dt.T @ P1 @ Dt)
        lam = min_eig(Ht)
        lam_min = min(lam_min, lam)
        if lam <= FEAS_TOL:
            raise InfeasibleGain(t, lam)
        H[t] = Ht
        # S = H^{-1} D' P, so Ptilde = P + P D S and L* = -S Acl.
        S = solve_sym(Ht, Dt.T @ P1)
        Pt1 = sym(P1 + P1 @ Dt @ S)
        Ptilde[t + 1] = Pt1
        G[t] = sym(sys.Ru[t] + Bt.T @ Pt1 @ Bt)
        Acl = sys.A[t] - Bt @ K.blocks[t]
        Lblocks[t] = -S @ Acl
        P[t] = sym(
            sys.Q[t] + K.blocks[t].T @ sys.Ru[t] @ K.blocks[t] + Acl.T @ Pt1 @ Acl
        )
        pmin = min_eig(P[t])
        if pmin < -FEAS_TOL:
            raise InfeasibleGain(t, pmin, what="value matrix")
    Ptilde[0] = P[0]
    return InnerSolution(
        P_blocks=tuple(P),
        Ptilde_blocks=tuple(Ptilde),
        H_blocks=tuple(H),
        G_blocks=tuple(G),
        Lstar=GainSchedule("L", tuple(Lblocks)),
        lambda_min_H=float(lam_min),
        value=_objective_from_blocks(sys, P),
    )


@dataclass(frozen=True)
class NashSolution:
    """Saddle point of the game from the coupled backward recursion."""

    Pstar_blocks: tuple[np.ndarray, ...]
    Kstar: GainSchedule
    Lstar: GainSchedule
    Lambda_blocks: tuple[np.ndarray, ...]
    margins: tuple[float, ...]
    assumption_ok: bool
    value: float

    @property
    def Pstar(self) -> np.ndarray:
        return block_diag(list(self.Pstar_blocks))


def grde(sys: TimeVaryingSystem) -> NashSolution:
    """Solve the coupled (Nash) backward recursion.

    The per-step operator Lambda_t = I + (B Ru^{-1} B' - D Rw^{-1} D') P_{t+1}
    is nonsymmetric, so it is inverted by LU; a nearly singular operator
    raises SingularLambda. The positivity of the margins Rw - D'P D is
    reported via assumption_ok rather than raised, since the saddle may
    still be well defined while standard sufficiency fails.
    """
    N, m = sys.horizon, sys.m
    P = [np.zeros(0)] * (N + 1)
    P[N] = sys.Q[N]
    Lam: list[np.ndarray] = [np.zeros(0)] * N
    Kb: list[np.ndarray] = [np.zeros(0)] * N
    Lb: list[np.ndarray] = [np.zeros(0)] * N
    margins: list[float] = [0.0] * N
    for t in range(N - 1, -1, -1):
        P1 = P[t + 1]
        Bt, Dt = sys.B[t], sys.D[t]
        gap = Bt @ solve_sym(sys.Ru[t], Bt.T) - Dt @ solve_sym(sys.Rw[t], Dt.T)
        Lam[t] = np.eye(m) + gap @ P1
        smin = float(np.linalg.svd(Lam[t], compute_uv=False)[-1])
        if smin < FEAS_TOL:
            raise SingularLambda(t, smin)
        X = np.linalg.solve(Lam[t], sys.A[t])
        PLA = P1 @ X
        Kb[t] = solve_sym(sys.Ru[t], Bt.T @ PLA)
        Lb[t] = -solve_sym(sys.Rw[t], Dt.T @ PLA)
        P[t] = sym(sys.Q[t] + sys.A[t].T @ PLA)
        margins[t] = min_eig(sys.Rw[t] - Dt.T @ P1 @ Dt)
    return NashSolution(
        Pstar_blocks=tuple(P),
        Kstar=GainSchedule("K", tuple(Kb)),
        Lstar=GainSchedule("L", tuple(Lb)),
        Lambda_blocks=tuple(Lam),
        margins=tuple(margins),
        assumption_ok=bool(all(mg > FEAS_TOL for mg in margins)),
        value=_objective_from_blocks(sys, P),
    )


def pl_constant(game: CompactGame, K: GainSchedule) -> float:
    """Gradient-dominance constant of the inner problem at a feasible K:

        mu = 4 * lambda_min(H) * phi^2 / ||Sigma||

    with H and Sigma evaluated at (K, best response) and phi the smallest
    eigenvalue of the step noise covariance.
    """
    sol = inner_riccati(game, K)
    Sig = correlation_blocks(game.sys, K, sol.Lstar)
    sig_norm = max(float(np.linalg.eigvalsh(s)[-1]) for s in Sig)
    phi = game.sys.noise.phi
    return 4.0 * sol.lambda_min_H * phi**2 / sig_norm


def smoothness_probe(
    game: CompactGame,
    K: GainSchedule,
    L: GainSchedule,
    radius: float,
    samples: int,
    rng: np.random.Generator,
) -> float:
    """Empirical local Lipschitz constant of the maximizer gradient.

    Draws random directions on the gain sphere with magnitudes up to radius
    and returns the largest finite-difference ratio ||grad(L+dL) - grad(L)||
    / ||dL||. Used as a crude curvature bound for plain gradient stepsizes.
    """
    if radius <= 0.0 or samples < 1:
        raise ConfigError("probe needs a positive radius and at least one sample")
    sys = game.sys
    base = gradients(game, K, L).gradL
    worst = 0.0
    for _ in range(samples):
        direction = unit_schedule("L", sys.horizon, sys.n, sys.m, rng)
        scale = radius * (1.0 - rng.uniform())
        perturbed = gradients(game, K, L.add_scaled(direction, scale)).gradL
        worst = max(worst, perturbed.diff_norm(base) / scale)
    return worst
