"""Problem data: time-varying dynamics, noise model, gain schedules, and the
lifted (compact) form of the finite-horizon game."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .linalg import block_diag, min_eig, psd_sqrt, sym

# Slack for semidefinite checks and strict-positivity margins.
FEAS_TOL = 1e-9
_SYM_TOL = 1e-10

NOISE_KINDS = ("sphere", "truncated_gaussian")


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


def _matrix_tuple(
    mats: Sequence[np.ndarray], count: int, shape: tuple[int, int], name: str
) -> tuple[np.ndarray, ...]:
    mats = [np.asarray(m, dtype=float) for m in mats]
    if len(mats) != count:
        raise ConfigError(f"{name}: expected {count} matrices, got {len(mats)}")
    for t, m in enumerate(mats):
        if m.shape != shape:
            raise ConfigError(f"{name}[{t}]: expected shape {shape}, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ConfigError(f"{name}[{t}]: non-finite entries")
    return tuple(_freeze(m) for m in mats)


def _sym_tuple(
    mats: Sequence[np.ndarray],
    count: int,
    dim: int,
    name: str,
    min_eigenvalue: float | None = None,
) -> tuple[np.ndarray, ...]:
    mats = _matrix_tuple(mats, count, (dim, dim), name)
    out = []
    for t, m in enumerate(mats):
        if np.abs(m - m.T).max() > _SYM_TOL:
            raise ConfigError(f"{name}[{t}]: not symmetric")
        m = sym(m)
        if min_eigenvalue is not None and min_eig(m) < min_eigenvalue:
            raise ConfigError(
                f"{name}[{t}]: smallest eigenvalue {min_eig(m):.3e} below "
                f"{min_eigenvalue:.1e}"
            )
        out.append(_freeze(m))
    return tuple(out)


@dataclass(frozen=True)
class NoiseModel:
    """Step noise model: x_0 and every xi_t share one covariance.

    kind "sphere" draws sqrt(m) * sigma^{1/2} u with u uniform on the unit
    sphere, which has exactly the requested covariance and an almost-sure
    norm bound. kind "truncated_gaussian" rejects Gaussian draws whose norm
    exceeds the bound (covariance then holds only approximately).
    """

    sigma0_step: np.ndarray
    kind: str = "sphere"
    vartheta: float | None = None

    def __post_init__(self) -> None:
        (mat,) = _sym_tuple([self.sigma0_step], 1, np.asarray(self.sigma0_step).shape[0],
                            "sigma0_step")
        if min_eig(mat) <= 0.0:
            raise ConfigError("sigma0_step must be positive definite")
        object.__setattr__(self, "sigma0_step", mat)
        if self.kind not in NOISE_KINDS:
            raise ConfigError(f"noise kind must be one of {NOISE_KINDS}")
        if self.vartheta is not None and self.vartheta <= 0.0:
            raise ConfigError("vartheta must be positive")

    @property
    def m(self) -> int:
        return self.sigma0_step.shape[0]

    @cached_property
    def phi(self) -> float:
        """Smallest eigenvalue of the step covariance."""
        return min_eig(self.sigma0_step)

    @cached_property
    def sqrt(self) -> np.ndarray:
        return _freeze(psd_sqrt(self.sigma0_step))

    @cached_property
    def bound(self) -> float:
        """Almost-sure norm bound for a single draw."""
        if self.vartheta is not None:
            return float(self.vartheta)
        lam_max = float(np.linalg.eigvalsh(self.sigma0_step)[-1])
        return float(np.sqrt(self.m * lam_max))

    def trajectory_energy(self, horizon: int) -> float:
        """Worst-case total energy (N+1) * bound^2 of one noise trajectory."""
        return (horizon + 1) * self.bound**2


@dataclass(frozen=True)
class TimeVaryingSystem:
    """Finite-horizon two-player system

        x_{t+1} = A_t x_t + B_t u_t + D_t w_t + xi_t,   t = 0..N-1

    with stage weights Q_t (states, t = 0..N), Ru_t (minimizer), Rw_t
    (maximizer), and a shared step noise model.
    """

    A: tuple[np.ndarray, ...]
    B: tuple[np.ndarray, ...]
    D: tuple[np.ndarray, ...]
    Q: tuple[np.ndarray, ...]
    Ru: tuple[np.ndarray, ...]
    Rw: tuple[np.ndarray, ...]
    noise: NoiseModel

    def __post_init__(self) -> None:
        A = [np.asarray(a, dtype=float) for a in self.A]
        if not A:
            raise ConfigError("horizon must be at least 1")
        m = A[0].shape[0]
        N = len(A)
        B = [np.asarray(b, dtype=float) for b in self.B]
        D = [np.asarray(dd, dtype=float) for dd in self.D]
        if len(B) != N or len(D) != N:
            raise ConfigError("A, B, D must all have horizon entries")
        d = B[0].shape[1]
        n = D[0].shape[1]
        object.__setattr__(self, "A", _matrix_tuple(A, N, (m, m), "A"))
        object.__setattr__(self, "B", _matrix_tuple(B, N, (m, d), "B"))
        object.__setattr__(self, "D", _matrix_tuple(D, N, (m, n), "D"))
        object.__setattr__(
            self, "Q", _sym_tuple(self.Q, N + 1, m, "Q", min_eigenvalue=-FEAS_TOL)
        )
        object.__setattr__(
            self, "Ru", _sym_tuple(self.Ru, N, d, "Ru", min_eigenvalue=FEAS_TOL)
        )
        object.__setattr__(
            self, "Rw", _sym_tuple(self.Rw, N, n, "Rw", min_eigenvalue=FEAS_TOL)
        )
        if self.noise.m != m:
            raise ConfigError(
                f"noise dimension {self.noise.m} does not match state dimension {m}"
            )

    @classmethod
    def time_invariant(
        cls,
        A: np.ndarray,
        B: np.ndarray,
        D: np.ndarray,
        Q: np.ndarray,
        Ru: np.ndarray,
        Rw: np.ndarray,
        horizon: int,
        noise: NoiseModel | np.ndarray,
        terminal_Q: np.ndarray | None = None,
    ) -> "TimeVaryingSystem":
        """Replicate one set of matrices across the horizon.

        terminal_Q defaults to Q. noise may be a NoiseModel or a covariance
        matrix (wrapped in the default sphere model).
        """
        if horizon < 1:
            raise ConfigError("horizon must be at least 1")
        if not isinstance(noise, NoiseModel):
            noise = NoiseModel(sigma0_step=np.asarray(noise, dtype=float))
        QN = Q if terminal_Q is None else terminal_Q
        return cls(
            A=tuple(A for _ in range(horizon)),
            B=tuple(B for _ in range(horizon)),
            D=tuple(D for _ in range(horizon)),
            Q=tuple(Q for _ in range(horizon)) + (QN,),
            Ru=tuple(Ru for _ in range(horizon)),
            Rw=tuple(Rw for _ in range(horizon)),
            noise=noise,
        )

    @property
    def horizon(self) -> int:
        return len(self.A)

    @property
    def m(self) -> int:
        return self.A[0].shape[0]

    @property
    def d(self) -> int:
        return self.B[0].shape[1]

    @property
    def n(self) -> int:
        return self.D[0].shape[1]

    def to_dict(self) -> dict:
        return {
            "N": self.horizon,
            "m": self.m,
            "d": self.d,
            "n": self.n,
            "A": [a.tolist() for a in self.A],
            "B": [b.tolist() for b in self.B],
            "D": [dd.tolist() for dd in self.D],
            "Q": [q.tolist() for q in self.Q],
            "Ru": [r.tolist() for r in self.Ru],
            "Rw": [r.tolist() for r in self.Rw],
            "noise": {
                "sigma0_step": self.noise.sigma0_step.tolist(),
                "kind": self.noise.kind,
                "vartheta": self.noise.vartheta,
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TimeVaryingSystem":
        try:
            noise = NoiseModel(
                sigma0_step=np.asarray(data["noise"]["sigma0_step"], dtype=float),
                kind=data["noise"].get("kind", "sphere"),
                vartheta=data["noise"].get("vartheta"),
            )
            sys = cls(
                A=tuple(np.asarray(a, dtype=float) for a in data["A"]),
                B=tuple(np.asarray(b, dtype=float) for b in data["B"]),
                D=tuple(np.asarray(d, dtype=float) for d in data["D"]),
                Q=tuple(np.asarray(q, dtype=float) for q in data["Q"]),
                Ru=tuple(np.asarray(r, dtype=float) for r in data["Ru"]),
                Rw=tuple(np.asarray(r, dtype=float) for r in data["Rw"]),
                noise=noise,
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad system payload: {exc}") from exc
        declared = {
            "N": sys.horizon, "m": sys.m, "d": sys.d, "n": sys.n,
        }
        for key, actual in declared.items():
            if key in data and int(data[key]) != actual:
                raise ConfigError(
                    f"declared {key}={data[key]} does not match matrices ({actual})"
                )
        return sys


@dataclass(frozen=True)
class GainSchedule:
    """Per-step feedback gains for one player.

    Player "K" (minimizer, u_t = -K_t x_t) has d x m blocks, player "L"
    (maximizer, w_t = -L_t x_t) has n x m blocks, one block per t = 0..N-1.
    """

    player: str
    blocks: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        if self.player not in ("K", "L"):
            raise ConfigError('player must be "K" or "L"')
        blocks = [np.asarray(b, dtype=float) for b in self.blocks]
        if not blocks:
            raise ConfigError("a gain schedule needs at least one block")
        shape = blocks[0].shape
        object.__setattr__(
            self, "blocks", _matrix_tuple(blocks, len(blocks), shape, "blocks")
        )

    @classmethod
    def zeros(cls, player: str, horizon: int, rows: int, cols: int) -> "GainSchedule":
        return cls(player, tuple(np.zeros((rows, cols)) for _ in range(horizon)))

    @classmethod
    def constant(cls, player: str, block: np.ndarray, horizon: int) -> "GainSchedule":
        return cls(player, tuple(np.asarray(block, dtype=float) for _ in range(horizon)))

    @classmethod
    def from_compact(
        cls, player: str, mat: np.ndarray, horizon: int, rows: int, cols: int
    ) -> "GainSchedule":
        """Extract the diagonal blocks of a lifted gain matrix."""
        if mat.shape != (rows * horizon, cols * (horizon + 1)):
            raise ConfigError(
                f"compact gain has shape {mat.shape}, expected "
                f"{(rows * horizon, cols * (horizon + 1))}"
            )
        blocks = tuple(
            mat[t * rows : (t + 1) * rows, t * cols : (t + 1) * cols]
            for t in range(horizon)
        )
        return cls(player, blocks)

    @property
    def horizon(self) -> int:
        return len(self.blocks)

    @property
    def rows(self) -> int:
        return self.blocks[0].shape[0]

    @property
    def cols(self) -> int:
        return self.blocks[0].shape[1]

    def compact(self) -> np.ndarray:
        """Lifted gain [blkdiag(blocks), 0] acting on the stacked state."""
        out = np.zeros((self.rows * self.horizon, self.cols * (self.horizon + 1)))
        for t, b in enumerate(self.blocks):
            out[t * self.rows : (t + 1) * self.rows, t * self.cols : (t + 1) * self.cols] = b
        return out

    def norm(self) -> float:
        """Frobenius norm of the lifted gain."""
        return float(np.sqrt(sum(float(np.sum(b * b)) for b in self.blocks)))

    def add_scaled(self, other: "GainSchedule", scale: float = 1.0) -> "GainSchedule":
        if other.player != self.player or other.horizon != self.horizon:
            raise ConfigError("gain schedules are not compatible")
        return GainSchedule(
            self.player, tuple(b + scale * o for b, o in zip(self.blocks, other.blocks))
        )

    def diff_norm(self, other: "GainSchedule") -> float:
        return self.add_scaled(other, -1.0).norm()

    def to_dict(self) -> dict:
        return {"player": self.player, "blocks": [b.tolist() for b in self.blocks]}

    @classmethod
    def from_dict(cls, data: dict) -> "GainSchedule":
        try:
            return cls(
                player=data["player"],
                blocks=tuple(np.asarray(b, dtype=float) for b in data["blocks"]),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad gain payload: {exc}") from exc


def l_subspace_dim(sys: TimeVaryingSystem) -> int:
    """Intrinsic dimension of the maximizer's gain subspace."""
    return sys.m * sys.n * sys.horizon


def k_subspace_dim(sys: TimeVaryingSystem) -> int:
    """Intrinsic dimension of the minimizer's gain subspace."""
    return sys.m * sys.d * sys.horizon


def unit_schedule(
    player: str, horizon: int, rows: int, cols: int, rng: np.random.Generator
) -> GainSchedule:
    """Uniform draw from the unit Frobenius sphere of the gain subspace.

    Consumes exactly one standard-normal call of horizon*rows*cols values
    (plus retries in the measure-zero case of a zero draw).
    """
    while True:
        flat = rng.standard_normal(horizon * rows * cols)
        nrm = float(np.linalg.norm(flat))
        if nrm > 0.0:
            break
    flat /= nrm
    blocks = tuple(
        flat[t * rows * cols : (t + 1) * rows * cols].reshape(rows, cols)
        for t in range(horizon)
    )
    return GainSchedule(player, blocks)


@dataclass(frozen=True)
class CompactGame:
    """Lifted one-shot form of the dynamic game.

    The stacked state collects x_0..x_N, controls u_0..u_{N-1}, disturbances
    w_0..w_{N-1}. Dynamics matrices act block-wise: blockA carries A_t on the
    first subdiagonal (so it is nilpotent of degree N+1), blockB and blockD
    inject inputs one step later, the weight matrices are block diagonal.
    """

    sys: TimeVaryingSystem
    blockA: np.ndarray
    blockB: np.ndarray
    blockD: np.ndarray
    blockQ: np.ndarray
    blockRu: np.ndarray
    blockRw: np.ndarray
    sigma0: np.ndarray

    @property
    def horizon(self) -> int:
        return self.sys.horizon

    @property
    def m(self) -> int:
        return self.sys.m

    @property
    def d(self) -> int:
        return self.sys.d

    @property
    def n(self) -> int:
        return self.sys.n


def compactify(sys: TimeVaryingSystem) -> CompactGame:
    """Assemble the lifted game matrices for a time-varying system."""
    m, d, n, N = sys.m, sys.d, sys.n, sys.horizon
    blockA = np.zeros((m * (N + 1), m * (N + 1)))
    blockB = np.zeros((m * (N + 1), d * N))
    blockD = np.zeros((m * (N + 1), n * N))
    for t in range(N):
        r = m * (t + 1)
        blockA[r : r + m, m * t : m * (t + 1)] = sys.A[t]
        blockB[r : r + m, d * t : d * (t + 1)] = sys.B[t]
        blockD[r : r + m, n * t : n * (t + 1)] = sys.D[t]
    return CompactGame(
        sys=sys,
        blockA=_freeze(blockA),
        blockB=_freeze(blockB),
        blockD=_freeze(blockD),
        blockQ=_freeze(block_diag(list(sys.Q))),
        blockRu=_freeze(block_diag(list(sys.Ru))),
        blockRw=_freeze(block_diag(list(sys.Rw))),
        sigma0=_freeze(block_diag([sys.noise.sigma0_step] * (N + 1))),
    )
