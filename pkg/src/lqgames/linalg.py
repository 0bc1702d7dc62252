"""Small symmetric linear-algebra helpers used across the package.

All symmetric solves go through an eigendecomposition so that conditioning
problems surface as explicit errors instead of silent garbage.
"""

from __future__ import annotations

import numpy as np

from .errors import SingularMatrix

# Relative eigenvalue threshold below which a symmetric solve is refused.
_RCOND = 1e-13


def sym(mat: np.ndarray) -> np.ndarray:
    """Symmetric part of a square matrix."""
    return 0.5 * (mat + mat.T)


def min_eig(mat: np.ndarray) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    return float(np.linalg.eigvalsh(sym(mat))[0])


def max_abs_eig(mat: np.ndarray) -> float:
    """Spectral norm of a symmetric matrix."""
    vals = np.linalg.eigvalsh(sym(mat))
    return float(max(abs(vals[0]), abs(vals[-1])))


def solve_sym(mat: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve mat @ X = rhs for symmetric (possibly indefinite) mat.

    Raises SingularMatrix when the smallest |eigenvalue| is negligible
    relative to the largest.
    """
    vals, vecs = np.linalg.eigh(sym(mat))
    scale = np.abs(vals).max()
    if scale == 0.0 or np.abs(vals).min() <= _RCOND * scale:
        raise SingularMatrix(
            f"symmetric solve refused: |eig| range [{np.abs(vals).min():.3e}, {scale:.3e}]"
        )
    return vecs @ ((vecs.T @ rhs) / vals[:, None])


def psd_sqrt(mat: np.ndarray) -> np.ndarray:
    """Symmetric square root of a positive semidefinite matrix."""
    vals, vecs = np.linalg.eigh(sym(mat))
    vals = np.clip(vals, 0.0, None)
    return vecs @ (np.sqrt(vals)[:, None] * vecs.T)


def block_diag(blocks: list[np.ndarray] | tuple[np.ndarray, ...]) -> np.ndarray:
    """Dense block-diagonal assembly of square or rectangular blocks."""
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols))
    r = c = 0
    for b in blocks:
        out[r : r + b.shape[0], c : c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out
