"""Value/correlation recursions, exact gradients, inner and coupled
Riccati solves, checked against independent dense solves, finite
differences, and brute force."""

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from lqgames import (
    GainSchedule,
    InfeasibleGain,
    NoiseModel,
    TimeVaryingSystem,
    compactify,
    correlation_matrix,
    gradients,
    grde,
    inner_riccati,
    objective,
    pl_constant,
    smoothness_probe,
    value_matrix,
)
from lqgames.linalg import block_diag, min_eig

from conftest import (
    central_difference,
    gain_from_preset,
    rng_of,
    random_feasible_system,
)


def zero_dynamics_system(m=2, horizon=3):
    return TimeVaryingSystem.time_invariant(
        A=np.zeros((m, m)), B=np.eye(m), D=np.eye(m),
        Q=np.diag(np.arange(1.0, m + 1.0)), Ru=np.eye(m),
        Rw=50.0 * np.eye(m), horizon=horizon, noise=np.eye(m),
    )


def scalar_n1_system(a=1.5, b=0.7, d=0.4, q0=2.0, q1=3.0, ru=1.0, rw=6.0):
    return TimeVaryingSystem(
        A=(np.array([[a]]),), B=(np.array([[b]]),), D=(np.array([[d]]),),
        Q=(np.array([[q0]]), np.array([[q1]])),
        Ru=(np.array([[ru]]),), Rw=(np.array([[rw]]),),
        noise=NoiseModel(np.array([[1.0]])),
    )


def lifted_closed_loop(game, K, L):
    return game.blockA - game.blockB @ K.compact() - game.blockD @ L.compact()


# ---------------------------------------------------------------- values


def test_value_zero_dynamics_collapses_to_q():
    sys = zero_dynamics_system()
    game = compactify(sys)
    K = GainSchedule.zeros("K", sys.horizon, sys.d, sys.m)
    L = GainSchedule.zeros("L", sys.horizon, sys.n, sys.m)
    P = value_matrix(game, K, L)
    assert np.allclose(P, block_diag(list(sys.Q)), atol=1e-14)


def test_value_scalar_closed_form():
    sys = scalar_n1_system()
    game = compactify(sys)
    k, l = 0.3, -0.2
    K = GainSchedule("K", (np.array([[k]]),))
    L = GainSchedule("L", (np.array([[l]]),))
    acl = 1.5 - 0.7 * k - 0.4 * l
    p0 = acl * 3.0 * acl + 2.0 + k * 1.0 * k - l * 6.0 * l
    P = value_matrix(game, K, L)
    assert P[0, 0] == pytest.approx(p0, rel=1e-12)
    assert P[1, 1] == pytest.approx(3.0)


def test_value_matches_dense_fixed_point(bench_game):
    # independent oracle: solve the lifted discrete Lyapunov equation
    K = gain_from_preset("sec51_case1", "K0")
    L = GainSchedule.zeros("L", 5, 3, 3)
    Acl = lifted_closed_loop(bench_game, K, L)
    Kc, Lc = K.compact(), L.compact()
    W = (
        bench_game.blockQ
        + Kc.T @ bench_game.blockRu @ Kc
        - Lc.T @ bench_game.blockRw @ Lc
    )
    dense = scipy.linalg.solve_discrete_lyapunov(Acl.T, W)
    P = value_matrix(bench_game, K, L)
    assert np.abs(P - dense).max() <= 1e-10
    residual = Acl.T @ P @ Acl + W - P
    assert np.abs(residual).max() <= 1e-10


# ----------------------------------------------------------- correlation


def test_correlation_zero_closed_loop_is_sigma0():
    sys = zero_dynamics_system()
    game = compactify(sys)
    K = GainSchedule.zeros("K", sys.horizon, sys.d, sys.m)
    L = GainSchedule.zeros("L", sys.horizon, sys.n, sys.m)
    Sig = correlation_matrix(game, K, L)
    assert np.allclose(Sig, game.sigma0, atol=1e-14)


def test_correlation_scalar_block():
    sys = scalar_n1_system()
    game = compactify(sys)
    K = GainSchedule("K", (np.array([[0.3]]),))
    L = GainSchedule("L", (np.array([[-0.2]]),))
    acl = 1.5 - 0.7 * 0.3 - 0.4 * (-0.2)
    Sig = correlation_matrix(game, K, L)
    assert Sig[1, 1] == pytest.approx(acl * 1.0 * acl + 1.0, rel=1e-12)


def test_correlation_dense_and_floor(bench_sys, bench_game):
    K = gain_from_preset("sec51_case1", "K0")
    L = GainSchedule.zeros("L", 5, 3, 3)
    Acl = lifted_closed_loop(bench_game, K, L)
    dense = scipy.linalg.solve_discrete_lyapunov(Acl, bench_game.sigma0)
    Sig = correlation_matrix(bench_game, K, L)
    assert np.abs(Sig - dense).max() <= 1e-8
    # sigma0 = I on this preset, so the whole correlation sits above 1
    assert min_eig(Sig) >= 1.0 - 1e-10


@given(st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_correlation_dominates_sigma0(seed):
    sys = random_feasible_system(seed)
    game = compactify(sys)
    g = rng_of(seed + 1)
    K = GainSchedule("K", tuple(g.standard_normal((sys.d, sys.m)) for _ in range(sys.horizon)))
    L = GainSchedule("L", tuple(g.standard_normal((sys.n, sys.m)) for _ in range(sys.horizon)))
    Sig = correlation_matrix(game, K, L)
    assert min_eig(Sig - game.sigma0) >= -1e-10


# ------------------------------------------------------------- objective


def test_objective_trivial_value():
    sys = TimeVaryingSystem(
        A=(np.zeros((1, 1)),), B=(np.eye(1),), D=(np.eye(1),),
        Q=(np.eye(1), np.eye(1)), Ru=(np.eye(1),), Rw=(5.0 * np.eye(1),),
        noise=NoiseModel(np.eye(1)),
    )
    game = compactify(sys)
    K = GainSchedule.zeros("K", 1, 1, 1)
    L = GainSchedule.zeros("L", 1, 1, 1)
    assert objective(game, K, L) == pytest.approx(2.0)


def midpoint(a: GainSchedule, b: GainSchedule) -> GainSchedule:
    return GainSchedule(
        a.player, tuple(0.5 * (x + y) for x, y in zip(a.blocks, b.blocks))
    )


def test_objective_midpoint_gaps():
    from lqgames import get_preset

    preset = get_preset("lemma_nonconvex")
    game = compactify(TimeVaryingSystem.from_dict(preset["system"]))
    scenes = preset["scenes"]

    K = GainSchedule.from_dict(scenes[0]["fixed"])
    L1 = GainSchedule.from_dict(scenes[0]["points"][0])
    L2 = GainSchedule.from_dict(scenes[0]["points"][1])
    gap = 0.5 * (
        objective(game, K, L1) + objective(game, K, L2)
    ) - objective(game, K, midpoint(L1, L2))
    assert gap == pytest.approx(6.7437, abs=5e-3)

    L0 = GainSchedule.from_dict(scenes[1]["fixed"])
    K1 = GainSchedule.from_dict(scenes[1]["points"][0])
    K2 = GainSchedule.from_dict(scenes[1]["points"][1])
    kgap = 0.5 * (
        objective(game, K1, L0) + objective(game, K2, L0)
    ) - objective(game, midpoint(K1, K2), L0)
    assert kgap == pytest.approx(-1.2277e5, rel=1e-3)


# ------------------------------------------------------------- gradients


def test_gradients_vanish_at_saddle(bench_sys, bench_game, bench_nash):
    grads = gradients(bench_game, bench_nash.Kstar, bench_nash.Lstar)
    assert grads.F.norm() <= 1e-8
    assert grads.E.norm() <= 1e-8


def test_gradients_match_finite_differences(small_sys, small_game):
    g = rng_of(5)
    K = GainSchedule(
        "K", tuple(0.1 * g.standard_normal((small_sys.d, small_sys.m))
                   for _ in range(small_sys.horizon))
    )
    L = GainSchedule(
        "L", tuple(0.1 * g.standard_normal((small_sys.n, small_sys.m))
                   for _ in range(small_sys.horizon))
    )
    grads = gradients(small_game, K, L)
    fd_K = central_difference(lambda Kx: objective(small_game, Kx, L), K)
    fd_L = central_difference(lambda Lx: objective(small_game, K, Lx), L)
    assert grads.gradK.diff_norm(fd_K) <= 1e-5 * max(1.0, fd_K.norm())
    assert grads.gradL.diff_norm(fd_L) <= 1e-5 * max(1.0, fd_L.norm())


def test_gradl_zero_gain_formula(bench_sys, bench_game):
    K = GainSchedule.zeros("K", 5, 3, 3)
    L = GainSchedule.zeros("L", 5, 3, 3)
    grads = gradients(bench_game, K, L)
    from lqgames import correlation_blocks, value_blocks

    P = value_blocks(bench_sys, K, L)
    Sig = correlation_blocks(bench_sys, K, L)
    for t in range(5):
        expect = -2.0 * bench_sys.D[t].T @ P[t + 1] @ bench_sys.A[t] @ Sig[t]
        assert np.allclose(grads.gradL.blocks[t], expect, atol=1e-10)


# ---------------------------------------------------------- inner solve


@pytest.mark.parametrize(
    "preset,key,margin",
    [
        ("sec51_case1", "K0", 0.5041),
        ("sec51_case2", "K0", 0.0199),
        ("sec52_zo_inner", "K0", 1.8673),
    ],
)
def test_inner_margins(preset, key, margin):
    from lqgames import get_preset

    cfg = get_preset(preset)
    sys = TimeVaryingSystem.from_dict(cfg["system"])
    sol = inner_riccati(compactify(sys), GainSchedule.from_dict(cfg["gains"][key]))
    assert sol.lambda_min_H == pytest.approx(margin, abs=5e-4)


def test_inner_best_response_is_stationary(bench_game):
    K = gain_from_preset("sec51_case1", "K0")
    sol = inner_riccati(bench_game, K)
    grads = gradients(bench_game, K, sol.Lstar)
    assert grads.E.norm() <= 1e-8
    assert objective(bench_game, K, sol.Lstar) == pytest.approx(sol.value, rel=1e-9)


def test_inner_riccati_rejects_infeasible(bench_game):
    K = gain_from_preset("sec51_case1", "K0")
    bad = GainSchedule("K", tuple(100.0 * b for b in K.blocks))
    with pytest.raises(InfeasibleGain) as err:
        inner_riccati(bench_game, bad)
    assert 0 <= err.value.step < 5
    assert np.isfinite(err.value.eigenvalue)


def test_best_response_dominates(bench_sys, bench_game):
    K = gain_from_preset("sec51_case1", "K0")
    sol = inner_riccati(bench_game, K)
    Pstar = value_matrix(bench_game, K, sol.Lstar)
    g = rng_of(17)
    for _ in range(50):
        L = GainSchedule(
            "L", tuple(0.5 * g.standard_normal((3, 3)) for _ in range(5))
        )
        P = value_matrix(bench_game, K, L)
        assert min_eig(Pstar - P) >= -1e-8


def test_nash_gains_agree_with_inner_best_response(bench_game, bench_nash):
    sol = inner_riccati(bench_game, bench_nash.Kstar)
    assert sol.Lstar.diff_norm(bench_nash.Lstar) <= 1e-8


# ------------------------------------------------------------ nash solve


def test_grde_without_disturbance_is_lqr():
    m, d, N = 2, 2, 4
    g = rng_of(23)
    A = 0.8 * g.standard_normal((m, m))
    B = g.standard_normal((m, d))
    Q = np.eye(m)
    Ru = np.eye(d)
    sys = TimeVaryingSystem.time_invariant(
        A=A, B=B, D=np.zeros((m, 1)), Q=Q, Ru=Ru, Rw=np.eye(1),
        horizon=N, noise=np.eye(m),
    )
    nash = grde(sys)
    assert nash.Lstar.norm() == 0.0
    # textbook Riccati recursion, written out independently
    P = Q
    gains = []
    for _ in range(N):
        G = Ru + B.T @ P @ B
        Kt = np.linalg.solve(G, B.T @ P @ A)
        gains.append(Kt)
        P = Q + A.T @ P @ A - A.T @ P @ B @ Kt
    gains = gains[::-1]
    for t in range(N):
        assert np.allclose(nash.Kstar.blocks[t], gains[t], atol=1e-10)


def test_grde_scalar_saddle_brute_force(scalar_sys):
    nash = grde(scalar_sys)
    game = compactify(scalar_sys)
    sol = inner_riccati(game, nash.Kstar)
    assert sol.value <= 11.0 + 1e-9
    assert sol.value == pytest.approx(nash.value, rel=1e-9)
    # coarse-to-fine grid over the two scalar minimizer gains
    k0, k1 = nash.Kstar.blocks[0][0, 0], nash.Kstar.blocks[1][0, 0]
    best = np.inf
    for a in np.linspace(k0 - 0.5, k0 + 0.5, 41):
        for b in np.linspace(k1 - 0.5, k1 + 0.5, 41):
            K = GainSchedule("K", (np.array([[a]]), np.array([[b]])))
            try:
                val = inner_riccati(game, K).value
            except InfeasibleGain:
                continue
            best = min(best, val)
    assert best >= nash.value - 1e-9
    assert best <= nash.value + 1e-2


def test_grde_margins_and_assumption(bench_sys, bench_nash):
    assert bench_nash.assumption_ok
    for t in range(bench_sys.horizon):
        expect = min_eig(
            bench_sys.Rw[t]
            - bench_sys.D[t].T @ bench_nash.Pstar_blocks[t + 1] @ bench_sys.D[t]
        )
        assert bench_nash.margins[t] == pytest.approx(expect, abs=1e-12)


# ------------------------------------------------- landscape constants


def test_pl_constant_without_disturbance():
    m = 2
    sys = TimeVaryingSystem.time_invariant(
        A=0.5 * np.eye(m), B=np.eye(m), D=np.zeros((m, 1)),
        Q=np.eye(m), Ru=np.eye(m), Rw=3.0 * np.eye(1), horizon=3,
        noise=NoiseModel(2.0 * np.eye(m)),
    )
    game = compactify(sys)
    K = GainSchedule.zeros("K", 3, m, m)
    from lqgames import correlation_blocks

    Sig = correlation_blocks(sys, K, GainSchedule.zeros("L", 3, 1, m))
    sig_norm = max(float(np.linalg.eigvalsh(s)[-1]) for s in Sig)
    expect = 4.0 * 3.0 * 2.0**2 / sig_norm
    assert pl_constant(game, K) == pytest.approx(expect, rel=1e-12)


def test_pl_constant_positive_on_benchmark(bench_game):
    assert pl_constant(bench_game, gain_from_preset("sec51_case1", "K0")) > 0.0


def test_pl_inequality_sampled(small_sys, small_game):
    K = GainSchedule.zeros("K", small_sys.horizon, small_sys.d, small_sys.m)
    mu = pl_constant(small_game, K)
    sol = inner_riccati(small_game, K)
    top = sol.value
    g = rng_of(29)
    checked = 0
    while checked < 100:
        step = GainSchedule(
            "L",
            tuple(0.3 * g.standard_normal((small_sys.n, small_sys.m))
                  for _ in range(small_sys.horizon)),
        )
        L = sol.Lstar.add_scaled(step, 1.0)
        val = objective(small_game, K, L)
        grad = gradients(small_game, K, L).gradL
        assert grad.norm() ** 2 >= mu * (top - val) - 1e-9
        checked += 1


# ------------------------------------------------------ smoothness probe


def quadratic_toy(rw=3.0, s0=2.0):
    zero = np.zeros((1, 1))
    return TimeVaryingSystem(
        A=(zero,), B=(zero,), D=(zero,),
        Q=(np.eye(1), np.eye(1)), Ru=(np.eye(1),),
        Rw=(rw * np.eye(1),), noise=NoiseModel(s0 * np.eye(1)),
    )


def test_probe_recovers_quadratic_curvature():
    game = compactify(quadratic_toy())
    K = GainSchedule.zeros("K", 1, 1, 1)
    L = GainSchedule.zeros("L", 1, 1, 1)
    probe = smoothness_probe(game, K, L, radius=0.5, samples=32, rng=rng_of(1))
    assert probe == pytest.approx(2.0 * 3.0 * 2.0, rel=0.1)


def test_probe_finite_at_vanishing_radius(bench_game):
    K = gain_from_preset("sec51_case1", "K0")
    L = GainSchedule.zeros("L", 5, 3, 3)
    small = smoothness_probe(bench_game, K, L, radius=1e-8, samples=8, rng=rng_of(2))
    assert np.isfinite(small) and small > 0.0


def test_probe_stable_across_sample_sets():
    game = compactify(quadratic_toy())
    K = GainSchedule.zeros("K", 1, 1, 1)
    L = GainSchedule.zeros("L", 1, 1, 1)
    a = smoothness_probe(game, K, L, radius=0.5, samples=64, rng=rng_of(3))
    b = smoothness_probe(game, K, L, radius=0.5, samples=64, rng=rng_of(4))
    assert abs(a - b) <= 0.05 * max(a, b)


# ----------------------------------------------------- block consistency


def test_compact_objective_formula(bench_sys, bench_game):
    # trace form through the lifted matrices against the per-step value
    K = gain_from_preset("sec51_case1", "K0")
    L = GainSchedule.zeros("L", 5, 3, 3)
    P = value_matrix(bench_game, K, L)
    val = objective(bench_game, K, L)
    assert val == pytest.approx(float(np.trace(P @ bench_game.sigma0)), rel=1e-12)
    Kc, Lc = K.compact(), L.compact()
    Sig = correlation_matrix(bench_game, K, L)
    stage = (
        bench_game.blockQ
        + Kc.T @ bench_game.blockRu @ Kc
        - Lc.T @ bench_game.blockRw @ Lc
    )
    assert val == pytest.approx(float(np.trace(stage @ Sig)), rel=1e-9)
