"""Derivative-free machinery: bounded noise draws, trajectory rollouts,
one-point sphere-smoothed minibatch gradient estimators, and the two
zeroth-order optimization drivers (inner maximization oracle and outer
natural-gradient descent with a maximization oracle)."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import (
    InnerSolution,
    _objective_from_blocks,
    check_gains,
    gradients,
    inner_riccati,
    value_blocks,
)
from .errors import ConfigError, InfeasibleGain
from .exact import RunTrace, TraceRow, _grad_norm, _outer_step
from .linalg import block_diag, sym
from .system import (
    FEAS_TOL,
    CompactGame,
    GainSchedule,
    NoiseModel,
    TimeVaryingSystem,
    k_subspace_dim,
    l_subspace_dim,
    unit_schedule,
)

# Samples processed per vectorized block; fixed so that partial-sum order
# (and therefore bitwise output) never depends on available memory.
_CHUNK = 65536

# Stream-path tags keeping the per-purpose RNG subtrees disjoint.
_TAG_INNER, _TAG_OUTER, _TAG_ORACLE = 1, 2, 3

_MIN_RADIUS = 1e-12


@dataclass(frozen=True)
class SeededStream:
    """Counter-based RNG node: (seed, path) fully determines the stream.

    Children derived via .child() get disjoint Philox streams, so batch
    order and parallelism cannot change any draw.
    """

    seed: int
    path: tuple[int, ...] = ()

    def child(self, *steps: int) -> "SeededStream":
        return SeededStream(self.seed, self.path + steps)

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(seq))


def _as_stream(rng: "SeededStream | int") -> SeededStream:
    if isinstance(rng, SeededStream):
        return rng
    if isinstance(rng, (int, np.integer)):
        return SeededStream(int(rng))
    raise ConfigError("rng must be a SeededStream or an integer seed")


@dataclass(frozen=True)
class ZoConfig:
    """Hyperparameters for the zeroth-order estimators and drivers."""

    M1: int = 1000
    M2: int = 1000
    r1: float = 0.1
    r2: float = 0.1
    eta: float = 0.01
    alpha: float = 1e-4
    inner_iters: int = 50
    outer_iters: int = 20
    eps1: float = 1e-3
    seed: int = 0
    # Validation mode uses exact references (best response, gap, cosine);
    # production mode is fully derivative-free.
    validation: bool = True
    # Oracle used inside estimate_outer for perturbed gains:
    # "exact" (validation) or a zo_inner rule ("npg"/"pg").
    inner_mode: str = "exact"

    def __post_init__(self) -> None:
        if self.M1 < 1 or self.M2 < 1:
            raise ConfigError("batch sizes must be at least 1")
        if self.r1 <= 0 or self.r2 <= 0:
            raise ConfigError("smoothing radii must be positive")
        if self.eta <= 0 or self.alpha <= 0:
            raise ConfigError("stepsizes must be positive")
        if self.inner_iters < 1 or self.outer_iters < 1:
            raise ConfigError("iteration counts must be at least 1")
        if self.eps1 <= 0:
            raise ConfigError("eps1 must be positive")
        if self.inner_mode not in ("exact", "npg", "pg"):
            raise ConfigError('inner_mode must be "exact", "npg", or "pg"')

    def d1(self, sys: TimeVaryingSystem) -> int:
        return l_subspace_dim(sys)

    def d2(self, sys: TimeVaryingSystem) -> int:
        return k_subspace_dim(sys)

    def to_dict(self) -> dict:
        return {
            "M1": self.M1, "M2": self.M2, "r1": self.r1, "r2": self.r2,
            "eta": self.eta, "alpha": self.alpha,
            "inner_iters": self.inner_iters, "outer_iters": self.outer_iters,
            "eps1": self.eps1, "seed": self.seed,
            "validation": self.validation, "inner_mode": self.inner_mode,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ZoConfig":
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"bad zo config: {exc}") from exc


@dataclass(frozen=True)
class Rollout:
    """One simulated trajectory with its stage costs."""

    states: tuple[np.ndarray, ...]
    costs: tuple[float, ...]
    total: float


def sample_unit_perturbation(
    player: str, dims: tuple[int, int, int], rng: np.random.Generator
) -> GainSchedule:
    """Uniform unit-Frobenius draw from one player's gain subspace.

    dims = (horizon, rows, cols); Gaussian fill then global normalization.
    """
    horizon, rows, cols = dims
    return unit_schedule(player, horizon, rows, cols, rng)


def draw_noise(
    noise: NoiseModel, horizon: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw (x0, xi_0..xi_{horizon-1}), each bounded with covariance
    sigma0_step (exactly, for the sphere default)."""
    m = noise.m
    raw = rng.standard_normal((horizon + 1, m))
    if noise.kind == "sphere":
        norms = np.linalg.norm(raw, axis=1)
        while np.any(norms == 0.0):
            bad = norms == 0.0
            raw[bad] = rng.standard_normal((int(bad.sum()), m))
            norms = np.linalg.norm(raw, axis=1)
        draws = np.sqrt(m) * (raw / norms[:, None]) @ noise.sqrt
    else:
        draws = raw @ noise.sqrt
        norms = np.linalg.norm(draws, axis=1)
        while np.any(norms > noise.bound):
            bad = norms > noise.bound
            draws[bad] = rng.standard_normal((int(bad.sum()), m)) @ noise.sqrt
            norms = np.linalg.norm(draws, axis=1)
    return draws[0], draws[1:]


def rollout(
    sys: TimeVaryingSystem,
    K: GainSchedule,
    L: GainSchedule,
    noise_draw: tuple[np.ndarray, np.ndarray],
) -> Rollout:
    """Simulate the closed loop under one noise draw."""
    check_gains(sys, K, L)
    x0, xis = noise_draw
    x = np.asarray(x0, dtype=float)
    states = [x]
    costs: list[float] = []
    for t in range(sys.horizon):
        u = K.blocks[t] @ x
        w = L.blocks[t] @ x
        costs.append(
            float(x @ sys.Q[t] @ x + u @ sys.Ru[t] @ u - w @ sys.Rw[t] @ w)
        )
        x = sys.A[t] @ x - sys.B[t] @ u - sys.D[t] @ w + xis[t]
        states.append(x)
    costs.append(float(x @ sys.Q[sys.horizon] @ x))
    return Rollout(states=tuple(states), costs=tuple(costs), total=float(sum(costs)))


def _batch_noise(
    noise: NoiseModel, horizon: int, count: int, g: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """draw_noise for a whole batch: (x0, xis) stacked over samples."""
    m = noise.m
    raw = g.standard_normal((count, horizon + 1, m))
    if noise.kind == "sphere":
        norms = np.linalg.norm(raw, axis=2)
        while np.any(norms == 0.0):
            bad = norms == 0.0
            raw[bad] = g.standard_normal((int(bad.sum()), m))
            norms = np.linalg.norm(raw, axis=2)
        draws = np.sqrt(m) * (raw / norms[..., None]) @ noise.sqrt
    else:
        draws = raw @ noise.sqrt
        norms = np.linalg.norm(draws, axis=2)
        while np.any(norms > noise.bound):
            bad = norms > noise.bound
            draws[bad] = g.standard_normal((int(bad.sum()), m)) @ noise.sqrt
            norms = np.linalg.norm(draws, axis=2)
    return draws[:, 0, :], draws[:, 1:, :]


def _batch_draws(
    sys: TimeVaryingSystem,
    stream: SeededStream,
    start: int,
    count: int,
    dim: int,
    rows: int,
    cols: int,
):
    """Chunk draws for the estimators, one child stream per chunk.

    The draw order within a chunk is fixed (all perturbations, then
    perturbed-rollout noise, then unperturbed-rollout noise), so with the
    fixed chunk size the output depends only on (seed, chunk start).
    """
    N = sys.horizon
    g = stream.child(start).generator()
    flat = g.standard_normal((count, dim))
    nrm = np.linalg.norm(flat, axis=1)
    while np.any(nrm == 0.0):
        bad = nrm == 0.0
        flat[bad] = g.standard_normal((int(bad.sum()), dim))
        nrm = np.linalg.norm(flat, axis=1)
    U = (flat / nrm[:, None]).reshape(count, N, rows, cols)
    xp0, xps = _batch_noise(sys.noise, N, count, g)
    xu0, xus = _batch_noise(sys.noise, N, count, g)
    return U, xp0, xps, xu0, xus


def _batch_draws_inner(
    sys: TimeVaryingSystem, stream: SeededStream, start: int, count: int
):
    return _batch_draws(
        sys, stream, start, count, l_subspace_dim(sys), sys.n, sys.m
    )


def _batch_costs_l_perturbed(
    sys: TimeVaryingSystem,
    K: GainSchedule,
    L: GainSchedule,
    r: float,
    U: np.ndarray,
    x0: np.ndarray,
    xis: np.ndarray,
) -> np.ndarray:
    """Total rollout costs under (K, L + r U_i), one perturbation per sample."""
    x = x0
    total = np.zeros(x0.shape[0])
    for t in range(sys.horizon):
        u = x @ K.blocks[t].T
        w = x @ L.blocks[t].T + r * np.einsum("cij,cj->ci", U[:, t], x)
        total += (
            np.einsum("ci,ij,cj->c", x, sys.Q[t], x)
            + np.einsum("ci,ij,cj->c", u, sys.Ru[t], u)
            - np.einsum("ci,ij,cj->c", w, sys.Rw[t], w)
        )
        x = x @ (sys.A[t] - sys.B[t] @ K.blocks[t]).T - w @ sys.D[t].T + xis[:, t]
    total += np.einsum("ci,ij,cj->c", x, sys.Q[sys.horizon], x)
    return total


def _batch_sigma_sums(
    sys: TimeVaryingSystem,
    K: GainSchedule,
    L: GainSchedule,
    x0: np.ndarray,
    xis: np.ndarray,
    sums: list[np.ndarray],
) -> None:
    """Accumulate per-step state second moments of unperturbed rollouts."""
    x = x0
    for t in range(sys.horizon):
        sums[t] += x.T @ x
        Acl = sys.A[t] - sys.B[t] @ K.blocks[t] - sys.D[t] @ L.blocks[t]
        x = x @ Acl.T + xis[:, t]
    sums[sys.horizon] += x.T @ x


def estimate_inner(
    game: CompactGame,
    K: GainSchedule,
    L: GainSchedule,
    cfg: ZoConfig,
    rng: "SeededStream | int",
) -> tuple[GainSchedule, np.ndarray]:
    """One-point minibatch estimate of the maximizer gradient plus the
    unperturbed state-correlation estimate.

    gradL_hat averages (d1/r1) * cost(K, L + r1 U_i) * U_i over M1 sphere
    perturbations; Sigma_hat averages blockdiag(x_t x_t') over M1
    independent unperturbed rollouts.
    """
    sys = game.sys
    check_gains(sys, K, L)
    if cfg.r1 < _MIN_RADIUS:
        raise ConfigError(f"smoothing radius r1 below {_MIN_RADIUS}")
    stream = _as_stream(rng)
    N, m, n = sys.horizon, sys.m, sys.n
    d1 = l_subspace_dim(sys)
    grad_sums = [np.zeros((n, m)) for _ in range(N)]
    sig_sums = [np.zeros((m, m)) for _ in range(N + 1)]
    done = 0
    while done < cfg.M1:
        count = min(_CHUNK, cfg.M1 - done)
        U, xp0, xps, xu0, xus = _batch_draws_inner(sys, stream, done, count)
        costs = _batch_costs_l_perturbed(sys, K, L, cfg.r1, U, xp0, xps)
        for t in range(N):
            grad_sums[t] += np.einsum("c,cij->ij", costs, U[:, t])
        _batch_sigma_sums(sys, K, L, xu0, xus, sig_sums)
        done += count
    scale = d1 / (cfg.r1 * cfg.M1)
    grad = GainSchedule("L", tuple(scale * g for g in grad_sums))
    sigma = block_diag([s / cfg.M1 for s in sig_sums])
    return grad, sigma


def _diag_blocks(mat: np.ndarray, size: int, count: int) -> list[np.ndarray]:
    return [mat[i * size : (i + 1) * size, i * size : (i + 1) * size] for i in range(count)]


def _floored_inverses(
    sigma: np.ndarray, m: int, count: int, phi: float
) -> tuple[list[np.ndarray], bool]:
    """Blockwise inverses with eigenvalues floored at phi/2."""
    floor = phi / 2.0
    out = []
    floored = False
    for blk in _diag_blocks(sigma, m, count):
        vals, vecs = np.linalg.eigh(sym(blk))
        if vals[0] < floor:
            floored = True
            vals = np.maximum(vals, floor)
        out.append(vecs @ ((1.0 / vals)[:, None] * vecs.T))
    return out, floored


def _cosine(a: GainSchedule, b: GainSchedule) -> float:
    x = np.concatenate([blk.ravel() for blk in a.blocks])
    y = np.concatenate([blk.ravel() for blk in b.blocks])
    denom = float(np.linalg.norm(x) * np.linalg.norm(y))
    return float(x @ y / denom) if denom > 0.0 else 0.0


def zo_inner(
    game: CompactGame,
    K: GainSchedule,
    L0: GainSchedule,
    rule: str,
    cfg: ZoConfig,
    rng: "SeededStream | int",
) -> tuple[GainSchedule, RunTrace]:
    """Zeroth-order inner maximization oracle (one-point estimator).

    rule "pg": L += eta * gradL_hat; rule "npg": L += eta * gradL_hat *
    Sigma_hat^{-1} blockwise, with Sigma_hat eigenvalues floored at phi/2
    (a floor event is recorded as a warning). In validation mode the loop
    stops once the true gap against the exact best response reaches eps1.
    """
    if rule not in ("pg", "npg"):
        raise ConfigError('zo_inner rule must be "pg" or "npg"')
    sys = game.sys
    check_gains(sys, K, L0)
    stream = _as_stream(rng)
    reference: InnerSolution | None = (
        inner_riccati(game, K) if cfg.validation else None
    )
    L = L0
    trace = RunTrace()
    t0 = time.perf_counter()
    phi = sys.noise.phi
    for it in range(cfg.inner_iters):
        ghat, sigma_hat = estimate_inner(game, K, L, cfg, stream.child(_TAG_INNER, it))
        P = value_blocks(sys, K, L)
        val = _objective_from_blocks(sys, P)
        lam = min(
            float(np.linalg.eigvalsh(sym(sys.Rw[t] - sys.D[t].T @ P[t + 1] @ sys.D[t]))[0])
            for t in range(sys.horizon)
        )
        cos = (
            _cosine(ghat, gradients(game, K, L).gradL) if cfg.validation else None
        )
        trace.append(
            TraceRow(it, val, ghat.norm(), lam, True, time.perf_counter() - t0,
                     batch_size=cfg.M1, radius=cfg.r1, estimator_cosine=cos)
        )
        if cfg.validation and reference is not None:
            if reference.value - val <= cfg.eps1:
                trace.finish("converged", it)
                return L, trace
        if rule == "pg":
            L = L.add_scaled(ghat, cfg.eta)
        else:
            invs, floored = _floored_inverses(sigma_hat, sys.m, sys.horizon + 1, phi)
            if floored:
                trace.warnings.append(f"iter {it}: sigma_hat eigenvalue floored")
            L = GainSchedule(
                "L",
                tuple(
                    L.blocks[t] + cfg.eta * ghat.blocks[t] @ invs[t]
                    for t in range(sys.horizon)
                ),
            )
    trace.finish("max_iterations", cfg.inner_iters - 1)
    return L, trace


def _batch_riccati_l(
    sys: TimeVaryingSystem, Kb: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Batched inner Riccati best responses for a stack of K schedules.

    Kb has shape (count, N, d, m). Returns (Lb, feasible); rows flagged
    infeasible carry unusable gains and must be excluded by the caller.
    """
    count = Kb.shape[0]
    N, m, n = sys.horizon, sys.m, sys.n
    eye_m = np.eye(m)
    eye_n = np.eye(n)
    P = np.broadcast_to(sys.Q[N], (count, m, m)).copy()
    Lb = np.zeros((count, N, n, m))
    feasible = np.ones(count, dtype=bool)
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(N - 1, -1, -1):
            Dt, Bt, At = sys.D[t], sys.B[t], sys.A[t]
            H = sys.Rw[t] - np.einsum("ij,cjk,kl->cil", Dt.T, P, Dt)
            H = 0.5 * (H + np.transpose(H, (0, 2, 1)))
            lam = np.linalg.eigvalsh(H)[:, 0]
            feasible &= np.isfinite(lam) & (lam > FEAS_TOL)
            H = np.where(feasible[:, None, None], H, eye_n)
            DtP = np.einsum("ij,cjk->cik", Dt.T, P)
            S = np.linalg.solve(H, DtP)
            Ptilde = P + np.einsum("cij,jk,ckl->cil", P, Dt, S)
            Acl = At - np.einsum("ij,cjm->cim", Bt, Kb[:, t])
            Lb[:, t] = -np.einsum("cij,cjk->cik", S, Acl)
            KRK = np.einsum("cji,jk,ckl->cil", Kb[:, t], sys.Ru[t], Kb[:, t])
            P = sys.Q[t] + KRK + np.einsum(
                "cji,cjk,ckl->cil", Acl, Ptilde, Acl
            )
            P = 0.5 * (P + np.transpose(P, (0, 2, 1)))
            pmin = np.linalg.eigvalsh(P)[:, 0]
            feasible &= np.isfinite(pmin) & (pmin >= -FEAS_TOL)
            P = np.where(feasible[:, None, None], P, eye_m)
    return Lb, feasible


def _batch_costs_kl(
    sys: TimeVaryingSystem,
    Kb: np.ndarray,
    Lb: np.ndarray,
    x0: np.ndarray,
    xis: np.ndarray,
) -> np.ndarray:
    """Total rollout costs under per-sample gain pairs."""
    x = x0
    total = np.zeros(x0.shape[0])
    for t in range(sys.horizon):
        u = np.einsum("cdm,cm->cd", Kb[:, t], x)
        w = np.einsum("cnm,cm->cn", Lb[:, t], x)
        total += (
            np.einsum("ci,ij,cj->c", x, sys.Q[t], x)
            + np.einsum("ci,ij,cj->c", u, sys.Ru[t], u)
            - np.einsum("ci,ij,cj->c", w, sys.Rw[t], w)
        )
        x = x @ sys.A[t].T - u @ sys.B[t].T - w @ sys.D[t].T + xis[:, t]
    total += np.einsum("ci,ij,cj->c", x, sys.Q[sys.horizon], x)
    return total


def estimate_outer(
    game: CompactGame,
    K: GainSchedule,
    cfg: ZoConfig,
    inner_rule: str,
    rng: "SeededStream | int",
    report: dict | None = None,
) -> tuple[GainSchedule, np.ndarray]:
    """One-point minibatch estimate of the outer natural-gradient direction.

    Each of M2 sphere perturbations K + r2 V_j is answered by the inner
    oracle (exact best response when inner_rule is "exact", zo_inner with
    that rule otherwise), rolled out once, averaged as (d2/r2) * cost * V_j.
    Sigma_hat comes from unperturbed (K, L(K)) rollouts. Perturbations that
    exit the feasible set are excluded from the average; their count is
    written to report["skipped"] rather than raised.
    """
    sys = game.sys
    if K.player != "K" or K.horizon != sys.horizon or (K.rows, K.cols) != (sys.d, sys.m):
        raise ConfigError("gain schedule shape does not match the system")
    if cfg.r2 < _MIN_RADIUS:
        raise ConfigError(f"smoothing radius r2 below {_MIN_RADIUS}")
    stream = _as_stream(rng)
    N, m, d = sys.horizon, sys.m, sys.d
    d2 = k_subspace_dim(sys)

    if inner_rule == "exact":
        Lbar = inner_riccati(game, K).Lstar
    else:
        Lbar, _ = zo_inner(
            game, K,
            GainSchedule.zeros("L", N, sys.n, m),
            inner_rule, cfg, stream.child(_TAG_ORACLE, 0),
        )
    Lbar_b = np.stack(Lbar.blocks)
    Kbase = np.stack(K.blocks)

    grad_sums = [np.zeros((d, m)) for _ in range(N)]
    sig_sums = [np.zeros((m, m)) for _ in range(N + 1)]
    used = 0
    skipped = 0
    done = 0
    while done < cfg.M2:
        count = min(_CHUNK, cfg.M2 - done)
        V, xp0, xps, xu0, xus = _batch_draws(sys, stream, done, count, d2, d, m)
        Kb = Kbase[None, :, :, :] + cfg.r2 * V
        if inner_rule == "exact":
            Lb, feasible = _batch_riccati_l(sys, Kb)
        else:
            Lb = np.empty((count, N, sys.n, m))
            feasible = np.ones(count, dtype=bool)
            for i in range(count):
                Kj = GainSchedule("K", tuple(Kb[i]))
                try:
                    Lj, _ = zo_inner(
                        game, Kj,
                        GainSchedule.zeros("L", N, sys.n, m),
                        inner_rule, cfg,
                        stream.child(_TAG_ORACLE, 1 + done + i),
                    )
                except InfeasibleGain:
                    feasible[i] = False
                    continue
                Lb[i] = np.stack(Lj.blocks)
        costs = _batch_costs_kl(sys, Kb, Lb, xp0, xps)
        weights = np.where(feasible, costs, 0.0)
        for t in range(N):
            grad_sums[t] += np.einsum("c,cij->ij", weights, V[:, t])
        _batch_sigma_sums(
            sys, K, Lbar, xu0, xus, sig_sums
        )
        used += int(feasible.sum())
        skipped += count - int(feasible.sum())
        done += count
    if report is not None:
        report["skipped"] = skipped
        report["used"] = used
    if used == 0:
        raise InfeasibleGain(0, float("nan"), what="every perturbed gain")
    scale = d2 / (cfg.r2 * used)
    grad = GainSchedule("K", tuple(scale * g for g in grad_sums))
    sigma = block_diag([s / cfg.M2 for s in sig_sums])
    return grad, sigma


def zo_outer(
    game: CompactGame,
    K0: GainSchedule,
    cfg: ZoConfig,
    rng: "SeededStream | int",
) -> tuple[GainSchedule, RunTrace]:
    """Zeroth-order natural-gradient descent on K with a maximization oracle.

    Runs cfg.outer_iters updates K -= alpha * gradK_hat * Sigma_hat^{-1}.
    Feasibility of every iterate is monitored exactly; leaving the feasible
    set raises InfeasibleGain with the iteration attached.
    """
    sys = game.sys
    stream = _as_stream(rng)
    K = K0
    trace = RunTrace()
    t0 = time.perf_counter()
    phi = sys.noise.phi
    prev_lam: float | None = None
    prev_P: tuple[np.ndarray, ...] | None = None
    for it in range(cfg.outer_iters):
        try:
            sol = inner_riccati(game, K)
        except InfeasibleGain as exc:
            exc.iteration = it
            trace.finish("infeasible", it)
            raise
        report: dict = {}
        ghat, sigma_hat = estimate_outer(
            game, K, cfg, cfg.inner_mode, stream.child(_TAG_OUTER, it), report,
        )
        if report.get("skipped"):
            trace.warnings.append(
                f"iter {it}: {report['skipped']} infeasible perturbations skipped"
            )
        cos = (
            _cosine(ghat, gradients(game, K, sol.Lstar).gradK)
            if cfg.validation else None
        )
        ir_ok = True
        if prev_lam is not None and prev_P is not None:
            p_up = max(
                float(np.linalg.eigvalsh(sym(cur - prev))[-1])
                for prev, cur in zip(prev_P, sol.P_blocks)
            )
            ir_ok = sol.lambda_min_H >= prev_lam - 1e-10 and p_up <= 1e-8
        trace.append(
            TraceRow(it, sol.value, ghat.norm(), sol.lambda_min_H, ir_ok,
                     time.perf_counter() - t0,
                     batch_size=cfg.M2, radius=cfg.r2, estimator_cosine=cos)
        )
        prev_lam, prev_P = sol.lambda_min_H, sol.P_blocks
        invs, floored = _floored_inverses(sigma_hat, sys.m, sys.horizon + 1, phi)
        if floored:
            trace.warnings.append(f"iter {it}: sigma_hat eigenvalue floored")
        K = GainSchedule(
            "K",
            tuple(
                K.blocks[t] - cfg.alpha * ghat.blocks[t] @ invs[t]
                for t in range(sys.horizon)
            ),
        )
    trace.finish("max_iterations", cfg.outer_iters - 1)
    return K, trace


def zo_double_loop(
    game: CompactGame,
    K0: GainSchedule,
    L0: GainSchedule,
    rule: str,
    cfg: ZoConfig,
    rng: "SeededStream | int",
) -> tuple[GainSchedule, RunTrace]:
    """Inner zeroth-order oracle combined with exact natural outer steps.

    Each outer iteration runs zo_inner from the warm-started L, then takes
    one exact natural-gradient descent step on K with stepsize cfg.alpha.
    """
    sys = game.sys
    stream = _as_stream(rng)
    check_gains(sys, K0, L0)
    K, L = K0, L0
    trace = RunTrace()
    t0 = time.perf_counter()
    prev_lam: float | None = None
    for it in range(cfg.outer_iters):
        try:
            sol = inner_riccati(game, K)
        except InfeasibleGain as exc:
            exc.iteration = it
            trace.finish("infeasible", it)
            raise
        L, inner_trace = zo_inner(game, K, L, rule, cfg, stream.child(_TAG_INNER, it))
        trace.warnings.extend(f"outer {it}: {w}" for w in inner_trace.warnings)
        new_K, F = _outer_step("npg", sys, K, cfg.alpha, sol)
        ir_ok = prev_lam is None or sol.lambda_min_H >= prev_lam - 1e-10
        trace.append(
            TraceRow(it, sol.value, _grad_norm(F), sol.lambda_min_H, ir_ok,
                     time.perf_counter() - t0,
                     batch_size=cfg.M1, radius=cfg.r1, estimator_cosine=None)
        )
        prev_lam = sol.lambda_min_H
        K = new_K
    trace.finish("max_iterations", cfg.outer_iters - 1)
    return K, trace
