"""Shared fixtures: canonical benchmark systems and seeded random games."""

import numpy as np
import pytest

from lqgames import (
    GainSchedule,
    NoiseModel,
    TimeVaryingSystem,
    compactify,
    get_preset,
    grde,
)


def rng_of(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def system_from_preset(name: str) -> TimeVaryingSystem:
    return TimeVaryingSystem.from_dict(get_preset(name)["system"])


def gain_from_preset(name: str, key: str) -> GainSchedule:
    return GainSchedule.from_dict(get_preset(name)["gains"][key])


def random_feasible_system(
    seed: int, m: int = 2, d: int = 2, n: int = 2, horizon: int = 3
) -> TimeVaryingSystem:
    """Seeded random system whose saddle point has positive disturbance
    margins (the adversary weight is doubled until the recursion certifies
    all margins and the zero minimizer gain stays feasible)."""
    g = rng_of(seed)
    A = 0.6 * g.standard_normal((m, m))
    B = g.standard_normal((m, d))
    D = g.standard_normal((m, n))
    Cq = g.standard_normal((m, m))
    Q = Cq.T @ Cq + 0.1 * np.eye(m)
    Cr = 0.5 * g.standard_normal((d, d))
    Ru = Cr.T @ Cr + np.eye(d)
    rw = 1.0
    for _ in range(60):
        sys = TimeVaryingSystem.time_invariant(
            A=A, B=B, D=D, Q=Q, Ru=Ru, Rw=rw * np.eye(n),
            horizon=horizon, noise=NoiseModel(np.eye(m)),
        )
        try:
            nash = grde(sys)
        except Exception:
            rw *= 2.0
            continue
        if nash.assumption_ok and min(nash.margins) > 1e-3:
            zero_ok = True
            try:
                from lqgames import inner_riccati

                inner_riccati(
                    compactify(sys), GainSchedule.zeros("K", horizon, d, m)
                )
            except Exception:
                zero_ok = False
            if zero_ok:
                return sys
        rw *= 2.0
    raise RuntimeError(f"could not make seed {seed} feasible")


def schedule_entries(sched: GainSchedule) -> np.ndarray:
    return np.concatenate([b.ravel() for b in sched.blocks])


def perturb_entry(sched: GainSchedule, t: int, i: int, j: int, h: float) -> GainSchedule:
    blocks = [b.copy() for b in sched.blocks]
    blocks[t][i, j] += h
    return GainSchedule(sched.player, tuple(blocks))


def central_difference(fun, sched: GainSchedule, h: float = 1e-6) -> GainSchedule:
    """Entrywise central finite differences of a scalar function of a
    gain schedule."""
    grads = []
    for t in range(sched.horizon):
        block = np.zeros_like(sched.blocks[t])
        for i in range(sched.rows):
            for j in range(sched.cols):
                up = fun(perturb_entry(sched, t, i, j, +h))
                dn = fun(perturb_entry(sched, t, i, j, -h))
                block[i, j] = (up - dn) / (2.0 * h)
        grads.append(block)
    return GainSchedule(sched.player, tuple(grads))


@pytest.fixture(scope="session")
def bench_sys():
    return system_from_preset("sec51_case1")


@pytest.fixture(scope="session")
def bench_game(bench_sys):
    return compactify(bench_sys)


@pytest.fixture(scope="session")
def bench_nash(bench_sys):
    return grde(bench_sys)


@pytest.fixture(scope="session")
def scalar_sys():
    return system_from_preset("scalar_noncoercive")


@pytest.fixture(scope="session")
def small_sys():
    """m=2, d=1, n=1, N=3 system used for finite-difference oracles."""
    return random_feasible_system(7, m=2, d=1, n=1, horizon=3)


@pytest.fixture(scope="session")
def small_game(small_sys):
    return compactify(small_sys)
