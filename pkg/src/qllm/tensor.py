"""Dense complex tensor primitives.

Every tensor in the package is a ``numpy.ndarray`` of dtype ``complex128`` in
row-major (C) order. Real inputs are embedded with zero imaginary part.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, GuardExceededError, NonFiniteError, RankDeficiencyError

__all__ = [
    "TruncationPolicy",
    "EXACT",
    "SvdResult",
    "as_tensor",
    "dense_guard",
    "check_guard",
    "reshape_split",
    "regroup",
    "contract",
    "fix_svd_phases",
    "svd_truncate",
    "polar_project",
    "haar_unitary",
    "unitarity_residual",
]

DEFAULT_DENSE_GUARD = 2**26


def dense_guard() -> int:
    """Maximum number of elements a dense operator may have.

    Read from ``QLLM_DENSE_GUARD`` on every call so tests and the CLI can
    override it.
    """
    raw = os.environ.get("QLLM_DENSE_GUARD")
    if raw is None or raw == "":
        return DEFAULT_DENSE_GUARD
    return int(float(raw))


def check_guard(n_elements: int, guard: int | None = None) -> None:
    limit = dense_guard() if guard is None else guard
    if n_elements > limit:
        raise GuardExceededError(
            f"dense size {n_elements} exceeds guard {limit} (set QLLM_DENSE_GUARD to override)"
        )


def as_tensor(a, *, check_finite: bool = False) -> np.ndarray:
    t = np.ascontiguousarray(a, dtype=np.complex128)
    if t.ndim == 0 or any(d < 1 for d in t.shape):
        raise DimensionError(f"tensor dims must be non-empty and >= 1, got {t.shape}")
    if check_finite and not np.all(np.isfinite(t)):
        raise NonFiniteError("tensor contains non-finite values")
    return t


@dataclass(frozen=True)
class TruncationPolicy:
    """Bond truncation rule.

    ``chi_max=None`` means unbounded. Singular values with
    ``s_i / s_1 <= rel_cutoff`` are discarded; the small default only removes
    numerical zeros, so the default policy is exact to ~1e-14.
    """

    chi_max: int | None = None
    rel_cutoff: float = 1e-14

    def __post_init__(self):
        if self.chi_max is not None and self.chi_max < 1:
            raise ValueError(f"chi_max must be >= 1 or None, got {self.chi_max}")
        if not (0.0 <= self.rel_cutoff < 1.0):
            raise ValueError(f"rel_cutoff must lie in [0, 1), got {self.rel_cutoff}")


EXACT = TruncationPolicy()


@dataclass(frozen=True)
class SvdResult:
    left: np.ndarray
    singular_values: np.ndarray
    right: np.ndarray
    trunc_error: float

    @property
    def rank(self) -> int:
        return len(self.singular_values)

    def reconstruct(self) -> np.ndarray:
        return (self.left * self.singular_values) @ self.right


def reshape_split(matrix, out_site_dims, in_site_dims) -> np.ndarray:
    """View a matrix with one leg per site index.

    Rows factor over ``out_site_dims`` and columns over ``in_site_dims``,
    both row-major, so element ``(i1, i2, i3, j1, j2)`` of an 8x4 split
    ``[2,2,2] x [2,2]`` is ``matrix[4*i1 + 2*i2 + i3, 2*j1 + j2]``.
    """
    m = as_tensor(matrix)
    if m.ndim != 2:
        raise DimensionError(f"expected a rank-2 tensor, got rank {m.ndim}")
    out_site_dims = [int(d) for d in out_site_dims]
    in_site_dims = [int(d) for d in in_site_dims]
    if math.prod(out_site_dims) != m.shape[0] or math.prod(in_site_dims) != m.shape[1]:
        raise DimensionError(
            f"site dims {out_site_dims} x {in_site_dims} do not factor shape {m.shape}"
        )
    return m.reshape(out_site_dims + in_site_dims)


def regroup(tensor, n_row_legs: int) -> np.ndarray:
    """Inverse of :func:`reshape_split`: fuse the first ``n_row_legs`` legs into rows."""
    t = np.asarray(tensor)
    rows = math.prod(t.shape[:n_row_legs])
    return t.reshape(rows, -1)


def contract(a, legs_a, b, legs_b) -> np.ndarray:
    """Sum over paired legs; free legs of ``a`` precede free legs of ``b``."""
    a = np.asarray(a)
    b = np.asarray(b)
    legs_a = [int(x) for x in legs_a]
    legs_b = [int(x) for x in legs_b]
    if len(legs_a) != len(legs_b):
        raise DimensionError("legs_a and legs_b must pair up one-to-one")
    for legs, t, name in ((legs_a, a, "a"), (legs_b, b, "b")):
        if len(set(legs)) != len(legs):
            raise DimensionError(f"repeated leg index in operand {name}: {legs}")
        if any(not (0 <= x < t.ndim) for x in legs):
            raise DimensionError(f"leg index out of range for operand {name} of rank {t.ndim}")
    for la, lb in zip(legs_a, legs_b):
        if a.shape[la] != b.shape[lb]:
            raise DimensionError(
                f"paired legs {la} and {lb} have dims {a.shape[la]} != {b.shape[lb]}"
            )
    return np.tensordot(a, b, axes=(legs_a, legs_b))


def fix_svd_phases(u: np.ndarray, vh: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Make the largest-magnitude entry of each left vector real positive.

    The compensating phase moves into the matching row of ``vh``; ties go to
    the lowest index.
    """
    if u.shape[1] == 0:
        return u, vh
    idx = np.argmax(np.abs(u), axis=0)
    pivots = u[idx, np.arange(u.shape[1])]
    mags = np.abs(pivots)
    phases = np.where(mags > 0, pivots / np.where(mags > 0, mags, 1.0), 1.0)
    return u / phases, vh * phases[:, None]


def svd_truncate(matrix, policy: TruncationPolicy = EXACT) -> SvdResult:
    """Truncated SVD with a deterministic phase convention.

    Keeps ``min(chi_max, #{s_i / s_1 > rel_cutoff}, full rank)`` values, at
    least one. Degenerate values straddling the cut are split by index order.
    ``trunc_error`` is ``sqrt(sum discarded s^2 / sum s^2)``, the relative
    Frobenius error of the returned factors up to the sub-cutoff values.
    """
    m = as_tensor(matrix)
    if m.ndim != 2:
        raise DimensionError(f"expected a rank-2 tensor, got rank {m.ndim}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteError("svd_truncate received non-finite values")
    try:
        u, s, vh = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError:
        import scipy.linalg

        u, s, vh = scipy.linalg.svd(m, full_matrices=False, lapack_driver="gesvd")
    keep = len(s)
    if s[0] > 0:
        keep = int(np.count_nonzero(s / s[0] > policy.rel_cutoff))
    if policy.chi_max is not None:
        keep = min(keep, policy.chi_max)
    keep = max(keep, 1)
    total = float(np.sum(s**2))
    # values under the cutoff are numerical zeros and do not count as truncation
    dropped = s[keep:]
    if s[0] > 0:
        dropped = dropped[dropped / s[0] > policy.rel_cutoff]
    err = math.sqrt(float(np.sum(dropped**2)) / total) if total > 0 else 0.0
    u, vh = fix_svd_phases(u[:, :keep], vh[:keep, :])
    return SvdResult(u, s[:keep].copy(), vh, err)


def polar_project(matrix) -> np.ndarray:
    """Nearest unitary in Frobenius norm, ``X @ Y^H`` for ``A = X S Y^H``."""
    m = as_tensor(matrix)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"polar_project needs a square matrix, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteError("polar_project received non-finite values")
    x, s, yh = np.linalg.svd(m)
    if s[-1] <= 1e-12:
        raise RankDeficiencyError(f"smallest singular value {s[-1]:.3e} <= 1e-12")
    x, yh = fix_svd_phases(x, yh)
    return x @ yh


def haar_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary from the QR of a complex Gaussian matrix.

    The R diagonal is made positive (Mezzadri's fix), which both makes the
    distribution Haar and the output a deterministic function of ``rng``.
    """
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / math.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def unitarity_residual(g) -> float:
    g = np.asarray(g)
    return float(np.linalg.norm(g.conj().T @ g - np.eye(g.shape[1])))
