"""Exact-gradient update rules for both players, the double-loop driver with
implicit-regularization monitoring, stepsize bounds, and the divergent
alternating schemes."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    InnerSolution,
    _ef_blocks,
    _objective_from_blocks,
    check_gains,
    correlation_blocks,
    inner_riccati,
    smoothness_probe,
    value_blocks,
)
from .errors import ConfigError
from .linalg import max_abs_eig, min_eig, solve_sym, sym
from .system import CompactGame, GainSchedule, TimeVaryingSystem

PG, NPG, GN = "pg", "npg", "gn"
RULES = (PG, NPG, GN)

AGDA_NATURAL = "AGDA-natural"
TAU_GDA_NATURAL = "tau-GDA-natural"
DESCENT_MULTI_STEP_ASCENT = "descent-multi-step-ascent"
GDA_SCHEMES = (AGDA_NATURAL, TAU_GDA_NATURAL, DESCENT_MULTI_STEP_ASCENT)

# Slack allowed before a monotonicity claim counts as violated.
_MONO_SLACK = 1e-10
_IR_SLACK = 1e-8
# Stall detector: objective change below this for 50 consecutive inner steps.
_STALL_EPS = 1e-14
_STALL_STEPS = 50


def _rule(name: str) -> str:
    low = str(name).lower()
    if low not in RULES:
        raise ConfigError(f"unknown update rule {name!r}; expected one of {RULES}")
    return low


@dataclass(frozen=True)
class LoopConfig:
    """Hyperparameters for the exact double loop."""

    eta: float
    alpha: float
    inner_tol: float = 1e-3
    outer_tol: float = 1e-8
    max_inner: int = 10_000
    max_outer: int = 10_000
    monitor_ir: bool = True
    # Use the exact best response instead of running inner iterations.
    exact_inner: bool = False
    # Validation mode stops the inner loop on the true gap (needs the exact
    # reference); production mode stops on the gradient norm instead.
    use_exact_gap: bool = True
    divergence_cap: float = 1e12

    def __post_init__(self) -> None:
        if self.eta <= 0 or self.alpha <= 0:
            raise ConfigError("stepsizes must be positive")
        if self.inner_tol <= 0 or self.outer_tol <= 0:
            raise ConfigError("tolerances must be positive")
        if self.max_inner < 1 or self.max_outer < 1:
            raise ConfigError("iteration caps must be at least 1")


@dataclass
class TraceRow:
    iteration: int
    objective: float
    grad_norm: float
    lambda_min_H: float
    ir_ok: bool
    wall_time: float
    batch_size: int | None = None
    radius: float | None = None
    estimator_cosine: float | None = None


_BASE_COLUMNS = ("iter", "objective", "grad_norm", "lambda_min_H", "ir_ok")
_ZO_COLUMNS = _BASE_COLUMNS + ("batch_size", "radius", "estimator_cosine")


@dataclass
class RunTrace:
    """Per-iteration records of one optimization run."""

    rows: list[TraceRow] = field(default_factory=list)
    status: str = "running"
    status_iteration: int | None = None
    warnings: list[str] = field(default_factory=list)

    def append(self, row: TraceRow) -> None:
        if self.rows and row.iteration <= self.rows[-1].iteration:
            raise ValueError("iteration indices must increase strictly")
        self.rows.append(row)

    def finish(self, status: str, iteration: int | None = None) -> None:
        self.status = status
        self.status_iteration = iteration

    @property
    def final(self) -> TraceRow | None:
        return self.rows[-1] if self.rows else None

    def objectives(self) -> list[float]:
        return [r.objective for r in self.rows]

    def to_csv(self, path: str | Path) -> None:
        """Write the trace with the fixed column order.

        The zeroth-order columns are appended only when some row carries
        them. Wall time is deliberately not serialized so that reruns with
        the same seed produce bitwise-identical files.
        """
        zo = any(r.batch_size is not None for r in self.rows)
        cols = _ZO_COLUMNS if zo else _BASE_COLUMNS
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for r in self.rows:
                rec = [r.iteration, repr(r.objective), repr(r.grad_norm),
                       repr(r.lambda_min_H), int(r.ir_ok)]
                if zo:
                    rec += [
                        "" if r.batch_size is None else r.batch_size,
                        "" if r.radius is None else repr(r.radius),
                        "" if r.estimator_cosine is None else repr(r.estimator_cosine),
                    ]
                writer.writerow(rec)

    def summary(self) -> dict:
        last = self.final
        return {
            "status": self.status,
            "status_iteration": self.status_iteration,
            "iterations": 0 if last is None else last.iteration + 1,
            "final_objective": None if last is None else last.objective,
            "final_grad_norm": None if last is None else last.grad_norm,
            "final_lambda_min_H": None if last is None else last.lambda_min_H,
            "converged": self.status == "converged",
            "diverged": self.status == "diverged",
            "ir_ok": all(r.ir_ok for r in self.rows),
            "warnings": list(self.warnings),
        }


def _grad_norm(blocks: list[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(b * b)) for b in blocks)))


def _l_step(
    rule: str,
    sys: TimeVaryingSystem,
    L: GainSchedule,
    eta: float,
    E: list[np.ndarray],
    Sig: list[np.ndarray],
    H: list[np.ndarray],
) -> GainSchedule:
    """One maximizer update from precomputed blocks."""
    if rule == PG:
        new = [L.blocks[t] + eta * 2.0 * E[t] @ Sig[t] for t in range(sys.horizon)]
    elif rule == NPG:
        # grad . Sigma^{-1} collapses to 2E on the block pattern.
        new = [L.blocks[t] + eta * 2.0 * E[t] for t in range(sys.horizon)]
    else:
        new = [
            L.blocks[t] + eta * 2.0 * solve_sym(H[t], E[t]) for t in range(sys.horizon)
        ]
    return GainSchedule("L", tuple(new))


def _inner_blocks(sys: TimeVaryingSystem, K: GainSchedule, L: GainSchedule):
    """Value, correlation, residual, and margin blocks at one (K, L) pair."""
    P = value_blocks(sys, K, L)
    Sig = correlation_blocks(sys, K, L)
    F, E = _ef_blocks(sys, K, L, P)
    H = [
        sym(sys.Rw[t] - sys.D[t].T @ P[t + 1] @ sys.D[t]) for t in range(sys.horizon)
    ]
    return P, Sig, F, E, H


def inner_update(
    rule: str, game: CompactGame, K: GainSchedule, L: GainSchedule, eta: float
) -> GainSchedule:
    """One exact maximizer step (ascent) under the chosen rule."""
    if eta <= 0:
        raise ConfigError("eta must be positive")
    rule = _rule(rule)
    sys = game.sys
    check_gains(sys, K, L)
    _, Sig, _, E, H = _inner_blocks(sys, K, L)
    return _l_step(rule, sys, L, eta, E, Sig, H)


def solve_inner(
    rule: str,
    game: CompactGame,
    K: GainSchedule,
    L0: GainSchedule,
    cfg: LoopConfig,
    reference: InnerSolution | None = None,
) -> tuple[GainSchedule, RunTrace]:
    """Iterate the maximizer until the optimality gap (validation mode) or the
    gradient norm (production mode) reaches cfg.inner_tol."""
    rule = _rule(rule)
    sys = game.sys
    check_gains(sys, K, L0)
    if cfg.use_exact_gap and reference is None:
        reference = inner_riccati(game, K)
    L = L0
    trace = RunTrace()
    t0 = time.perf_counter()
    prev_val: float | None = None
    stalled = 0
    for it in range(cfg.max_inner):
        P, Sig, _, E, H = _inner_blocks(sys, K, L)
        val = _objective_from_blocks(sys, P)
        grad_norm = _grad_norm([2.0 * E[t] @ Sig[t] for t in range(sys.horizon)])
        lam = min(min_eig(h) for h in H)
        trace.append(
            TraceRow(it, val, grad_norm, lam, True, time.perf_counter() - t0)
        )
        if cfg.use_exact_gap:
            assert reference is not None
            if reference.value - val <= cfg.inner_tol:
                trace.finish("converged", it)
                return L, trace
        elif grad_norm <= cfg.inner_tol:
            trace.finish("converged", it)
            return L, trace
        if prev_val is not None:
            if val < prev_val - _MONO_SLACK:
                trace.finish("stepsize_too_large", it)
                return L, trace
            stalled = stalled + 1 if abs(val - prev_val) < _STALL_EPS else 0
            if stalled >= _STALL_STEPS:
                trace.finish("stalled", it)
                return L, trace
        prev_val = val
        L = _l_step(rule, sys, L, cfg.eta, E, Sig, H)
    trace.finish("max_iterations", cfg.max_inner - 1)
    return L, trace


def _outer_step(
    rule: str,
    sys: TimeVaryingSystem,
    K: GainSchedule,
    alpha: float,
    sol: InnerSolution,
) -> tuple[GainSchedule, list[np.ndarray]]:
    """One minimizer update against the exact best response.

    Returns the new gains and the natural-gradient blocks F used.
    """
    F = [
        sol.G_blocks[t] @ K.blocks[t] - sys.B[t].T @ sol.Ptilde_blocks[t + 1] @ sys.A[t]
        for t in range(sys.horizon)
    ]
    if rule == PG:
        Sig = correlation_blocks(sys, K, sol.Lstar)
        new = [K.blocks[t] - alpha * 2.0 * F[t] @ Sig[t] for t in range(sys.horizon)]
    elif rule == NPG:
        new = [K.blocks[t] - alpha * 2.0 * F[t] for t in range(sys.horizon)]
    else:
        new = [
            K.blocks[t] - alpha * 2.0 * solve_sym(sol.G_blocks[t], F[t])
            for t in range(sys.horizon)
        ]
    return GainSchedule("K", tuple(new)), F


def outer_update(
    rule: str, game: CompactGame, K: GainSchedule, alpha: float
) -> GainSchedule:
    """One exact minimizer step against the best response L(K)."""
    if alpha <= 0:
        raise ConfigError("alpha must be positive")
    rule = _rule(rule)
    sol = inner_riccati(game, K)
    new, _ = _outer_step(rule, game.sys, K, alpha, sol)
    return new


def stepsize_bounds(
    game: CompactGame,
    K: GainSchedule,
    L0: GainSchedule,
    probe_radius: float = 0.05,
    probe_samples: int = 16,
    rng: np.random.Generator | None = None,
) -> dict:
    """Admissible stepsizes at (K, L0) for each rule.

    inner.npg = 1/(2||H_{K,L0}||), inner.gn = 1/2, inner.pg = 1/probe,
    outer.npg = 1/(2||G_{K,L(K)}||), outer.gn = 1/2.
    """
    sys = game.sys
    check_gains(sys, K, L0)
    if rng is None:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(0)))
    P = value_blocks(sys, K, L0)
    h_norm = max(
        max_abs_eig(sys.Rw[t] - sys.D[t].T @ P[t + 1] @ sys.D[t])
        for t in range(sys.horizon)
    )
    sol = inner_riccati(game, K)
    g_norm = max(max_abs_eig(g) for g in sol.G_blocks)
    psi = smoothness_probe(game, K, L0, probe_radius, probe_samples, rng)
    return {
        "inner": {"npg": 1.0 / (2.0 * h_norm), "gn": 0.5, "pg": 1.0 / psi},
        "outer": {"npg": 1.0 / (2.0 * g_norm), "gn": 0.5},
    }


def double_loop(
    game: CompactGame,
    K0: GainSchedule,
    rules: tuple[str, str],
    cfg: LoopConfig,
    L0: GainSchedule | None = None,
) -> tuple[GainSchedule, RunTrace]:
    """Alternate inner maximization and one outer minimizer step.

    Stops when the running average of the squared natural-gradient norm
    falls to cfg.outer_tol, or at max_outer. With monitor_ir and an NPG/GN
    outer rule, each iteration checks that lambda_min(H) does not decrease
    and that the value matrix does not increase in the p.s.d. order; a
    violation stops the run with status ir_violation.
    """
    inner_rule, outer_rule = _rule(rules[0]), _rule(rules[1])
    sys = game.sys
    K = K0
    Lbar = L0 if L0 is not None else GainSchedule.zeros("L", sys.horizon, sys.n, sys.m)
    trace = RunTrace()
    t0 = time.perf_counter()
    sum_sq = 0.0
    prev_lam: float | None = None
    prev_P: tuple[np.ndarray, ...] | None = None
    for it in range(cfg.max_outer):
        sol = inner_riccati(game, K)
        if cfg.exact_inner:
            Lbar = sol.Lstar
        else:
            Lbar, _ = solve_inner(inner_rule, game, K, Lbar, cfg, reference=sol)
        _, F = _outer_step(outer_rule, sys, K, alpha=cfg.alpha, sol=sol)
        fnorm = _grad_norm(F)
        ir_ok = True
        if prev_lam is not None and prev_P is not None:
            lam_drop = sol.lambda_min_H < prev_lam - _MONO_SLACK
            # P must not increase: lambda_max(P_new - P_prev) <= slack.
            p_up = max(
                float(np.linalg.eigvalsh(sym(cur - prev))[-1])
                for prev, cur in zip(prev_P, sol.P_blocks)
            )
            ir_ok = not (lam_drop or p_up > _IR_SLACK)
        trace.append(
            TraceRow(it, sol.value, fnorm, sol.lambda_min_H, ir_ok,
                     time.perf_counter() - t0)
        )
        monitored = cfg.monitor_ir and outer_rule in (NPG, GN)
        if monitored and not ir_ok:
            trace.finish("ir_violation", it)
            return K, trace
        if abs(sol.value) > cfg.divergence_cap or not np.isfinite(sol.value):
            trace.finish("diverged", it)
            return K, trace
        sum_sq += fnorm**2
        if sum_sq / (it + 1) <= cfg.outer_tol:
            trace.finish("converged", it)
            return K, trace
        prev_lam, prev_P = sol.lambda_min_H, sol.P_blocks
        K, _ = _outer_step(outer_rule, sys, K, cfg.alpha, sol)
    trace.finish("max_iterations", cfg.max_outer - 1)
    return K, trace


def gda_variant(
    scheme: str,
    game: CompactGame,
    K0: GainSchedule,
    L0: GainSchedule,
    eta: float,
    alpha: float,
    ascent_steps: int,
    iters: int,
    divergence_cap: float = 1e12,
    trace_stride: int = 1,
) -> RunTrace:
    """Natural gradient-descent-ascent variants without feasibility control.

    Runs the requested alternation for `iters` iterations recording the raw
    objective; blow-ups are expected and reported through the diverged
    status once |G| passes the cap or turns non-finite. Never raises on
    divergence.

    The slow-divergence demos need millions of iterations, so the recursion
    runs on stacked per-step arrays and the trace keeps every
    trace_stride-th row (the divergence row is always kept).
    """
    if scheme not in GDA_SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}; expected one of {GDA_SCHEMES}")
    if scheme == DESCENT_MULTI_STEP_ASCENT and ascent_steps < 1:
        raise ConfigError("descent-multi-step-ascent needs ascent_steps >= 1")
    if trace_stride < 1:
        raise ConfigError("trace_stride must be >= 1")
    sys = game.sys
    check_gains(sys, K0, L0)
    trace = RunTrace()
    t0 = time.perf_counter()

    A = np.stack(sys.A)
    B = np.stack(sys.B)
    D = np.stack(sys.D)
    Q = np.stack(sys.Q[:-1])
    QN = sys.Q[-1]
    Ru = np.stack(sys.Ru)
    Rw = np.stack(sys.Rw)
    BT = B.transpose(0, 2, 1)
    DT = D.transpose(0, 2, 1)
    sig = sys.noise.sigma0_step
    N = sys.horizon
    K = np.stack(K0.blocks).astype(float)
    L = np.stack(L0.blocks).astype(float)

    def one_pass(Kb: np.ndarray, Lb: np.ndarray):
        """Objective, stacked natural gradients, and P_{t+1} per step."""
        Acl = A - B @ Kb - D @ Lb
        RuK = Ru @ Kb
        RwL = Rw @ Lb
        KtRuK = Kb.transpose(0, 2, 1) @ RuK
        LtRwL = Lb.transpose(0, 2, 1) @ RwL
        S = np.empty_like(A)
        Pnext = np.empty((N,) + QN.shape)
        P = QN
        obj = float(np.trace(P @ sig))
        for t in range(N - 1, -1, -1):
            Pnext[t] = P
            S[t] = P @ Acl[t]
            P = Acl[t].T @ S[t] + Q[t] + KtRuK[t] - LtRwL[t]
            obj += float(np.trace(P @ sig))
        F = RuK - BT @ S
        E = -RwL - DT @ S
        return obj, F, E, Pnext

    def lam_min_h(Pnext: np.ndarray, finite: bool) -> float:
        if not finite:
            return float("nan")
        H = Rw - DT @ Pnext @ D
        return float(np.linalg.eigvalsh(0.5 * (H + H.transpose(0, 2, 1))).min())

    def make_row(it: int, obj: float, F, E, Pnext, finite: bool) -> TraceRow:
        gnorm = float(np.sqrt(np.sum(F * F) + np.sum(E * E)))
        return TraceRow(it, obj, gnorm, lam_min_h(Pnext, finite), True,
                        time.perf_counter() - t0)

    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(iters):
            obj, F, E, Pnext = one_pass(K, L)
            finite = bool(np.isfinite(obj))
            recorded = it % trace_stride == 0
            if recorded:
                trace.append(make_row(it, obj, F, E, Pnext, finite))
            if not finite or abs(obj) > divergence_cap:
                if not recorded:
                    trace.append(make_row(it, obj, F, E, Pnext, finite))
                trace.finish("diverged", it)
                return trace
            if scheme == AGDA_NATURAL:
                K = K - alpha * 2.0 * F
                _, _, E2, _ = one_pass(K, L)
                L = L + eta * 2.0 * E2
            elif scheme == TAU_GDA_NATURAL:
                K = K - alpha * 2.0 * F
                L = L + eta * 2.0 * E
            else:
                L = L + eta * 2.0 * E
                for _ in range(ascent_steps - 1):
                    _, _, E2, _ = one_pass(K, L)
                    L = L + eta * 2.0 * E2
                _, F2, _, _ = one_pass(K, L)
                K = K - alpha * 2.0 * F2
    trace.finish("max_iterations", iters - 1)
    return trace
