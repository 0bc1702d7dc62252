"""Exact-gradient loops: single updates, inner solves, the double loop,
stepsize records, descent-ascent variants, and trace plumbing."""

import csv

import numpy as np
import pytest

from conftest import (
    gain_from_preset,
    random_feasible_system,
    rng_of,
    system_from_preset,
)
from lqgames import (
    GainSchedule,
    LoopConfig,
    NoiseModel,
    RunTrace,
    TimeVaryingSystem,
    TraceRow,
    compactify,
    double_loop,
    gda_variant,
    grde,
    inner_riccati,
    inner_update,
    objective,
    outer_update,
    solve_inner,
    stepsize_bounds,
)
from lqgames.errors import ConfigError, InfeasibleGain


@pytest.fixture(scope="module")
def bench_start(bench_game):
    K0 = gain_from_preset("sec51_case1", "K0")
    sys = bench_game.sys
    L0 = GainSchedule.zeros("L", sys.horizon, sys.n, sys.m)
    return K0, L0


@pytest.fixture(scope="module")
def bench_bounds(bench_game, bench_start):
    K0, L0 = bench_start
    return stepsize_bounds(bench_game, K0, L0, rng=rng_of(0))


# ---------------------------------------------------------------------------
# single maximizer updates


@pytest.mark.parametrize("rule", ["pg", "npg", "gn"])
def test_inner_update_fixed_at_best_response(bench_game, bench_start, rule):
    K0, _ = bench_start
    Lstar = inner_riccati(bench_game, K0).Lstar
    eta = 0.5 if rule == "gn" else 0.01
    moved = inner_update(rule, bench_game, K0, Lstar, eta)
    assert moved.diff_norm(Lstar) <= 1e-8


def test_inner_update_gn_one_step_exact_single_stage():
    # With one stage the terminal weight fixes H, so a Newton-style step at
    # half stepsize lands on the best response exactly.
    noise = NoiseModel(np.array([[1.0]]))
    sys = TimeVaryingSystem(
        A=[np.array([[1.3]])],
        B=[np.array([[0.0]])],
        D=[np.array([[0.6]])],
        Q=[np.array([[2.0]]), np.array([[3.0]])],
        Ru=[np.array([[1.0]])],
        Rw=[np.array([[4.0]])],
        noise=noise,
    )
    game = compactify(sys)
    K = GainSchedule.zeros("K", 1, 1, 1)
    L0 = GainSchedule("L", (np.array([[0.2]]),))
    L1 = inner_update("gn", game, K, L0, eta=0.5)
    Lstar = inner_riccati(game, K).Lstar
    assert L1.diff_norm(Lstar) <= 1e-12


def test_inner_update_npg_ascends(bench_game, bench_start):
    K0, L = bench_start
    ref = inner_riccati(bench_game, K0)
    vals = [objective(bench_game, K0, L)]
    for _ in range(50):
        L = inner_update("npg", bench_game, K0, L, eta=0.0635)
        vals.append(objective(bench_game, K0, L))
    assert all(b >= a - 1e-10 for a, b in zip(vals, vals[1:]))
    assert vals[-1] <= ref.value + 1e-9
    assert vals[-1] > vals[0]


# ---------------------------------------------------------------------------
# solve_inner


def test_solve_inner_starts_converged(bench_game, bench_start):
    K0, _ = bench_start
    ref = inner_riccati(bench_game, K0)
    cfg = LoopConfig(eta=0.0635, alpha=1e-6, inner_tol=1e-3)
    L, trace = solve_inner("npg", bench_game, K0, ref.Lstar, cfg)
    assert trace.status == "converged"
    assert trace.status_iteration == 0
    assert len(trace.rows) == 1


def test_solve_inner_npg_gap_decay(bench_game, bench_start):
    """Validation-mode stop on the true optimality gap."""
    K0, L0 = bench_start
    ref = inner_riccati(bench_game, K0)
    cfg = LoopConfig(eta=0.0635, alpha=1e-6, inner_tol=1e-3, max_inner=10_000)
    L, trace = solve_inner("npg", bench_game, K0, L0, cfg)
    assert trace.status == "converged"
    assert trace.status_iteration <= 200
    gaps = np.array([ref.value - r.objective for r in trace.rows])
    assert gaps[-1] <= 1e-3
    assert np.all(np.diff(gaps) <= 1e-10)
    # geometric decay: the log-gap trend is negative
    slope = np.polyfit(np.arange(len(gaps)), np.log(np.maximum(gaps, 1e-300)), 1)[0]
    assert slope < 0


def test_solve_inner_production_mode_pg(small_game):
    # The probe reports local curvature, which grows toward the best
    # response, so production runs back off from the raw 1/psi value.
    sys = small_game.sys
    K0 = GainSchedule.zeros("K", sys.horizon, sys.d, sys.m)
    L0 = GainSchedule.zeros("L", sys.horizon, sys.n, sys.m)
    bounds = stepsize_bounds(small_game, K0, L0, rng=rng_of(11))
    cfg = LoopConfig(
        eta=0.25 * bounds["inner"]["pg"],
        alpha=1e-6,
        inner_tol=1e-6,
        use_exact_gap=False,
        max_inner=10_000,
    )
    L, trace = solve_inner("pg", small_game, K0, L0, cfg)
    assert trace.status == "converged"
    assert trace.final.grad_norm <= 1e-6
    assert L.diff_norm(inner_riccati(small_game, K0).Lstar) <= 1e-5


def test_solve_inner_flags_oversized_step(bench_game, bench_start):
    K0, L0 = bench_start
    cfg = LoopConfig(eta=1.0, alpha=1e-6, inner_tol=1e-3, max_inner=200)
    _, trace = solve_inner("npg", bench_game, K0, L0, cfg)
    assert trace.status == "stepsize_too_large"


def test_solve_inner_flags_stall(bench_game, bench_start):
    # A step too small to move the iterate in floating point.
    K0, L0 = bench_start
    cfg = LoopConfig(eta=1e-30, alpha=1e-6, inner_tol=1e-3, max_inner=500)
    _, trace = solve_inner("npg", bench_game, K0, L0, cfg)
    assert trace.status == "stalled"


# ---------------------------------------------------------------------------
# single minimizer updates


@pytest.mark.parametrize("rule", ["pg", "npg", "gn"])
def test_outer_update_fixed_at_nash(bench_game, bench_nash, rule):
    alpha = 0.5 if rule == "gn" else 1e-4
    moved = outer_update(rule, bench_game, bench_nash.Kstar, alpha)
    assert moved.diff_norm(bench_nash.Kstar) <= 1e-8


def test_outer_update_npg_within_bound_is_monotone(bench_game, bench_start, bench_bounds):
    K0, _ = bench_start
    s0 = inner_riccati(bench_game, K0)
    K1 = outer_update("npg", bench_game, K0, bench_bounds["outer"]["npg"])
    s1 = inner_riccati(bench_game, K1)
    assert s1.feasible
    assert s1.value < s0.value
    pmax = max(
        float(np.linalg.eigvalsh(after - before)[-1])
        for before, after in zip(s0.P_blocks, s1.P_blocks)
    )
    assert pmax <= 1e-8


def test_outer_update_gn_half_step_improves(bench_game, bench_start, bench_nash):
    K0, _ = bench_start
    s0 = inner_riccati(bench_game, K0)
    K1 = outer_update("gn", bench_game, K0, 0.5)
    s1 = inner_riccati(bench_game, K1)
    assert s1.value < s0.value
    assert K1.diff_norm(bench_nash.Kstar) < K0.diff_norm(bench_nash.Kstar)


# ---------------------------------------------------------------------------
# stepsize bounds


def test_stepsize_bounds_closed_form_without_disturbance_feedthrough():
    # D = 0 leaves H = Rw, so the inner natural-gradient bound is 1/(2c).
    c = 3.0
    m, dd, n, N = 2, 1, 1, 3
    noise = NoiseModel(np.eye(m))
    sys = TimeVaryingSystem(
        A=[0.3 * np.eye(m)] * N,
        B=[np.ones((m, dd))] * N,
        D=[np.zeros((m, n))] * N,
        Q=[np.eye(m)] * (N + 1),
        Ru=[np.eye(dd)] * N,
        Rw=[c * np.eye(n)] * N,
        noise=noise,
    )
    game = compactify(sys)
    K0 = GainSchedule.zeros("K", N, dd, m)
    L0 = GainSchedule.zeros("L", N, n, m)
    b = stepsize_bounds(game, K0, L0, rng=rng_of(0))
    assert b["inner"]["npg"] == pytest.approx(1.0 / (2.0 * c), rel=1e-12)
    assert b["inner"]["gn"] == 0.5
    assert b["outer"]["gn"] == 0.5
    assert b["inner"]["pg"] > 0
    assert b["outer"]["npg"] > 0


def test_stepsize_bounds_cover_benchmark_stepsizes(bench_bounds):
    # The stepsizes used by the benchmark runs sit inside the record.
    assert bench_bounds["outer"]["npg"] >= 3e-6
    assert bench_bounds["inner"]["npg"] >= 0.0635


def test_stepsize_bounds_positive_on_random_systems():
    for seed in range(5):
        sys = random_feasible_system(seed)
        game = compactify(sys)
        K0 = GainSchedule.zeros("K", sys.horizon, sys.d, sys.m)
        L0 = GainSchedule.zeros("L", sys.horizon, sys.n, sys.m)
        b = stepsize_bounds(game, K0, L0, rng=rng_of(seed))
        for group in b.values():
            for v in group.values():
                assert np.isfinite(v) and v > 0


# ---------------------------------------------------------------------------
# double loop


def test_double_loop_converged_at_start(bench_game, bench_nash):
    cfg = LoopConfig(eta=0.1, alpha=1e-4, exact_inner=True)
    K, trace = double_loop(bench_game, bench_nash.Kstar, ("npg", "npg"), cfg)
    assert trace.status == "converged"
    assert trace.status_iteration == 0


def test_double_loop_benchmark_run(bench_game, bench_start):
    """Full iterative-inner run at the benchmark stepsizes."""
    K0, L0 = bench_start
    cfg = LoopConfig(
        eta=0.0635,
        alpha=3e-6,
        inner_tol=1e-3,
        outer_tol=2.5e3,
        max_inner=10_000,
        max_outer=15_000,
    )
    K, trace = double_loop(bench_game, K0, ("npg", "npg"), cfg, L0=L0)
    assert trace.status == "converged"
    assert all(r.ir_ok for r in trace.rows)
    lams = [r.lambda_min_H for r in trace.rows]
    assert all(b >= a - 1e-10 for a, b in zip(lams, lams[1:]))
    assert trace.final.grad_norm < trace.rows[0].grad_norm
    # the stop rule fires exactly when the running mean square drops through
    sq = np.array([r.grad_norm**2 for r in trace.rows])
    avg = np.cumsum(sq) / (np.arange(len(sq)) + 1.0)
    k = trace.status_iteration
    assert avg[k] <= cfg.outer_tol
    assert np.all(avg[:k] > cfg.outer_tol)


def test_double_loop_matches_riccati_solution(bench_game, bench_start, bench_nash):
    K0, _ = bench_start
    cfg = LoopConfig(
        eta=0.5, alpha=0.5, exact_inner=True, max_outer=200, outer_tol=1e-30
    )
    K, _ = double_loop(bench_game, K0, ("gn", "gn"), cfg)
    assert K.diff_norm(bench_nash.Kstar) <= 1e-6


def test_double_loop_reports_ir_violation(bench_game, bench_start, bench_bounds):
    K0, L0 = bench_start
    cfg = LoopConfig(
        eta=0.1,
        alpha=5.0 * bench_bounds["outer"]["npg"],
        exact_inner=True,
        max_outer=50,
        outer_tol=1e-30,
    )
    _, trace = double_loop(bench_game, K0, ("npg", "npg"), cfg, L0=L0)
    assert trace.status == "ir_violation"
    assert not trace.rows[-1].ir_ok


def test_double_loop_raises_when_iterate_leaves_feasible_set(
    bench_game, bench_start, bench_bounds
):
    K0, L0 = bench_start
    cfg = LoopConfig(
        eta=0.1,
        alpha=50.0 * bench_bounds["outer"]["npg"],
        exact_inner=True,
        monitor_ir=False,
        max_outer=50,
        outer_tol=1e-30,
    )
    with pytest.raises(InfeasibleGain) as exc:
        double_loop(bench_game, K0, ("npg", "npg"), cfg, L0=L0)
    assert exc.value.step == 1


def test_double_loop_ir_on_random_system():
    sys = random_feasible_system(3)
    game = compactify(sys)
    K0 = GainSchedule.zeros("K", sys.horizon, sys.d, sys.m)
    L0 = GainSchedule.zeros("L", sys.horizon, sys.n, sys.m)
    alpha = stepsize_bounds(game, K0, L0, rng=rng_of(3))["outer"]["npg"]
    cfg = LoopConfig(
        eta=0.1, alpha=alpha, exact_inner=True, max_outer=300, outer_tol=1e-30
    )
    _, trace = double_loop(game, K0, ("npg", "npg"), cfg, L0=L0)
    assert all(r.ir_ok for r in trace.rows)
    lams = [r.lambda_min_H for r in trace.rows]
    assert all(b >= a - 1e-10 for a, b in zip(lams, lams[1:]))


# ---------------------------------------------------------------------------
# descent-ascent variants


def test_gda_variant_rejects_bad_arguments(scalar_sys):
    game = compactify(scalar_sys)
    K0 = GainSchedule.zeros("K", scalar_sys.horizon, scalar_sys.d, scalar_sys.m)
    L0 = GainSchedule.zeros("L", scalar_sys.horizon, scalar_sys.n, scalar_sys.m)
    with pytest.raises(ConfigError):
        gda_variant("newton", game, K0, L0, 0.1, 0.1, 1, 10)
    with pytest.raises(ConfigError):
        gda_variant(
            "descent-multi-step-ascent", game, K0, L0, 0.1, 0.1, 0, 10
        )
    with pytest.raises(ConfigError):
        gda_variant("AGDA-natural", game, K0, L0, 0.1, 0.1, 1, 10, trace_stride=0)


def test_gda_variant_divergence_on_scalar_game(scalar_sys):
    # Alternating natural steps at this stepsize blow up within a few
    # iterations; the run must flag it instead of raising.
    game = compactify(scalar_sys)
    K0 = GainSchedule.zeros("K", scalar_sys.horizon, scalar_sys.d, scalar_sys.m)
    L0 = GainSchedule.zeros("L", scalar_sys.horizon, scalar_sys.n, scalar_sys.m)
    trace = gda_variant(
        "AGDA-natural", game, K0, L0, eta=0.5, alpha=0.5,
        ascent_steps=1, iters=5000, divergence_cap=1e6,
    )
    assert trace.status == "diverged"
    assert trace.rows[-1].iteration == trace.status_iteration
    final = trace.rows[-1].objective
    assert not np.isfinite(final) or abs(final) > 1e6


def test_gda_variant_two_timescale_divergence(bench_game):
    from lqgames import get_preset

    p = get_preset("sec54_divergence")
    run = p["schemes"]["tau-ngda"]
    K0 = GainSchedule.from_dict(p["gains"]["K0"])
    L0 = GainSchedule.from_dict(p["gains"]["L0"])
    trace = gda_variant(
        run["scheme"], bench_game, K0, L0,
        eta=run["eta"], alpha=run["alpha"], ascent_steps=run["ascent_steps"],
        iters=run["iters"], divergence_cap=run["divergence_cap"],
        trace_stride=run["trace_stride"],
    )
    assert trace.status == "diverged"
    # the divergence row survives striding
    assert trace.rows[-1].iteration == trace.status_iteration
    growth = abs(trace.rows[-1].objective) / abs(trace.rows[0].objective)
    assert growth >= 10.0


def test_gda_variant_trace_stride(scalar_sys):
    game = compactify(scalar_sys)
    K0 = GainSchedule.zeros("K", scalar_sys.horizon, scalar_sys.d, scalar_sys.m)
    L0 = GainSchedule.zeros("L", scalar_sys.horizon, scalar_sys.n, scalar_sys.m)
    trace = gda_variant(
        "tau-GDA-natural", game, K0, L0, eta=1e-6, alpha=1e-6,
        ascent_steps=1, iters=100, divergence_cap=1e12, trace_stride=7,
    )
    assert trace.status == "max_iterations"
    assert trace.status_iteration == 99
    assert [r.iteration for r in trace.rows] == list(range(0, 100, 7))


# ---------------------------------------------------------------------------
# trace and config plumbing


def _toy_trace(with_zo: bool) -> RunTrace:
    trace = RunTrace()
    for it in range(3):
        trace.append(
            TraceRow(
                it,
                100.0 / (it + 1),
                0.5**it,
                1e-3 * (it + 1),
                True,
                0.1 * it,
                batch_size=1000 if with_zo else None,
                radius=0.05 if with_zo else None,
                estimator_cosine=0.95 if with_zo else None,
            )
        )
    trace.finish("converged", 2)
    return trace


def test_trace_csv_round_trip(tmp_path):
    trace = _toy_trace(with_zo=False)
    path = tmp_path / "trace.csv"
    trace.to_csv(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iter", "objective", "grad_norm", "lambda_min_H", "ir_ok"]
    assert len(rows) == 4
    for rec, row in zip(rows[1:], trace.rows):
        assert int(rec[0]) == row.iteration
        assert float(rec[1]) == row.objective
        assert float(rec[2]) == row.grad_norm
        assert float(rec[3]) == row.lambda_min_H
        assert rec[4] == "1"


def test_trace_csv_estimator_columns(tmp_path):
    trace = _toy_trace(with_zo=True)
    path = tmp_path / "trace.csv"
    trace.to_csv(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][-3:] == ["batch_size", "radius", "estimator_cosine"]
    assert rows[1][5] == "1000"
    assert float(rows[1][6]) == 0.05
    assert float(rows[1][7]) == 0.95


def test_trace_requires_increasing_iterations():
    trace = _toy_trace(with_zo=False)
    with pytest.raises(ValueError):
        trace.append(TraceRow(1, 0.0, 0.0, 0.0, True, 0.0))


def test_trace_summary_fields():
    trace = _toy_trace(with_zo=False)
    s = trace.summary()
    assert s["status"] == "converged"
    assert s["iterations"] == 3
    assert s["converged"] and not s["diverged"]
    assert s["ir_ok"]


@pytest.mark.parametrize(
    "kwargs",
    [
        {"eta": 0.0, "alpha": 1e-4},
        {"eta": 0.1, "alpha": -1.0},
        {"eta": 0.1, "alpha": 1e-4, "inner_tol": 0.0},
        {"eta": 0.1, "alpha": 1e-4, "outer_tol": -1e-9},
        {"eta": 0.1, "alpha": 1e-4, "max_inner": 0},
        {"eta": 0.1, "alpha": 1e-4, "max_outer": 0},
    ],
)
def test_loop_config_rejects_bad_values(kwargs):
    with pytest.raises(ConfigError):
        LoopConfig(**kwargs)
