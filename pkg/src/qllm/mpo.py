"""Matrix product operators.

Cores carry legs ``(left_bond, phys_out, phys_in, right_bond)``. Site ``i``
holds output index ``o_i`` and input index ``n_i`` of the operator, with the
row (column) index of the dense matrix factorizing row-major over the
``o_i`` (``n_i``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .tensor import EXACT, TruncationPolicy, as_tensor, check_guard, reshape_split, svd_truncate

__all__ = [
    "SiteSpec",
    "MPO",
    "SpectrumReport",
    "mpo_from_matrix",
    "mpo_to_matrix",
    "canonicalize",
    "truncate_mpo",
    "operator_entanglement",
    "mpo_overlap",
    "mpo_norm",
    "fit_mpo",
    "identity_mpo",
    "random_mpo",
    "mpo_adjoint",
    "pad_bonds",
    "entropies",
    "isometry_residuals",
    "transfer_left",
    "transfer_right",
]


@dataclass(frozen=True)
class SiteSpec:
    out_dims: tuple[int, ...]
    in_dims: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "out_dims", tuple(int(d) for d in self.out_dims))
        object.__setattr__(self, "in_dims", tuple(int(d) for d in self.in_dims))
        if len(self.out_dims) != len(self.in_dims) or len(self.out_dims) < 1:
            raise DimensionError("out_dims and in_dims must have the same length k >= 1")
        if any(d < 1 for d in self.out_dims + self.in_dims):
            raise DimensionError("site dims must be >= 1")

    @classmethod
    def qubits(cls, k: int) -> "SiteSpec":
        return cls((2,) * k, (2,) * k)

    @classmethod
    def for_shape(cls, rows: int, cols: int, site_dim: int = 2) -> "SiteSpec":
        """Uniform sites of dimension ``site_dim``; the shorter side gets dim-1 padding sites."""
        a = _exact_log(rows, site_dim)
        b = _exact_log(cols, site_dim)
        if a is None or b is None:
            raise DimensionError(
                f"shape {rows}x{cols} does not factor over sites of dim {site_dim}; "
                "zero-pad to the next power first"
            )
        k = max(a, b, 1)
        return cls((site_dim,) * a + (1,) * (k - a), (site_dim,) * b + (1,) * (k - b))

    @property
    def num_sites(self) -> int:
        return len(self.out_dims)

    @property
    def rows(self) -> int:
        return math.prod(self.out_dims)

    @property
    def cols(self) -> int:
        return math.prod(self.in_dims)

    def max_bond_ranks(self) -> list[int]:
        """Largest useful bond dimension at each cut."""
        local = [o * n for o, n in zip(self.out_dims, self.in_dims)]
        return [
            min(math.prod(local[: i + 1]), math.prod(local[i + 1 :]))
            for i in range(self.num_sites - 1)
        ]

    def to_dict(self) -> dict:
        return {"out_dims": list(self.out_dims), "in_dims": list(self.in_dims)}

    @classmethod
    def from_dict(cls, d: dict) -> "SiteSpec":
        return cls(tuple(d["out_dims"]), tuple(d["in_dims"]))


def _exact_log(n: int, base: int) -> int | None:
    k = 0
    while n > 1:
        if n % base:
            return None
        n //= base
        k += 1
    return k if n == 1 else None


@dataclass
class MPO:
    cores: list[np.ndarray]
    site_spec: SiteSpec
    canonical_center: int | None = None

    def __post_init__(self):
        self.cores = [as_tensor(c) for c in self.cores]
        spec = self.site_spec
        if len(self.cores) != spec.num_sites:
            raise DimensionError(f"{len(self.cores)} cores for {spec.num_sites} sites")
        for i, c in enumerate(self.cores):
            if c.ndim != 4:
                raise DimensionError(f"core {i} has rank {c.ndim}, expected 4")
            if c.shape[1] != spec.out_dims[i] or c.shape[2] != spec.in_dims[i]:
                raise DimensionError(f"core {i} physical dims {c.shape[1:3]} disagree with site spec")
        if self.cores[0].shape[0] != 1 or self.cores[-1].shape[3] != 1:
            raise DimensionError("boundary bonds must have dim 1")
        for i in range(len(self.cores) - 1):
            if self.cores[i].shape[3] != self.cores[i + 1].shape[0]:
                raise DimensionError(f"bond mismatch between cores {i} and {i + 1}")

    @property
    def num_sites(self) -> int:
        return len(self.cores)

    @property
    def bond_dims(self) -> list[int]:
        return [c.shape[3] for c in self.cores[:-1]]

    @property
    def max_bond(self) -> int:
        return max(self.bond_dims, default=1)

    def copy(self) -> "MPO":
        return MPO([c.copy() for c in self.cores], self.site_spec, self.canonical_center)


@dataclass(frozen=True)
class SpectrumReport:
    bond_index: int
    singular_values: np.ndarray = field(repr=False)
    entropy_s1: float
    entropy_s2: float
    norm: float


def entropies(s) -> tuple[float, float]:
    """Von Neumann and Renyi-2 entropies (natural log) of a Schmidt spectrum."""
    s = np.asarray(s, dtype=float)
    w = s**2
    total = w.sum()
    if total <= 0:
        return 0.0, 0.0
    p = w / total
    p = p[p > 0]
    s1 = float(-np.sum(p * np.log(p)))
    s2 = float(-np.log(np.sum(p**2)))
    return max(s1, 0.0), max(s2, 0.0)


def _qr_pos(mat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    q, r = np.linalg.qr(mat)
    d = np.diagonal(r)
    mag = np.abs(d)
    ph = np.where(mag > 0, d / np.where(mag > 0, mag, 1.0), 1.0)
    return q * ph, ph.conj()[:, None] * r


def _left_orth(core: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    l, o, n, r = core.shape
    q, rr = _qr_pos(core.reshape(l * o * n, r))
    return q.reshape(l, o, n, q.shape[1]), rr


def _right_orth(core: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    l, o, n, r = core.shape
    q, rr = _qr_pos(core.reshape(l, o * n * r).conj().T)
    return q.conj().T.reshape(q.shape[1], o, n, r), rr.conj().T


def mpo_from_matrix(w, spec: SiteSpec, policy: TruncationPolicy = EXACT) -> tuple[MPO, float]:
    """Sequential left-to-right truncated SVD of a dense matrix.

    Returns the MPO in right-canonical form (center 0) and the root-sum-square
    of the per-bond relative truncation errors, which bounds the relative
    Frobenius reconstruction error.
    """
    w = as_tensor(w, check_finite=True)
    if w.ndim != 2 or w.shape != (spec.rows, spec.cols):
        raise DimensionError(f"matrix shape {w.shape} does not match site spec {spec.rows}x{spec.cols}")
    check_guard(w.size)
    k = spec.num_sites
    t = reshape_split(w, spec.out_dims, spec.in_dims)
    t = t.transpose([p for i in range(k) for p in (i, k + i)])
    rest = t.reshape(1, -1)
    cores = []
    sq_err = 0.0
    for i in range(k - 1):
        o, n = spec.out_dims[i], spec.in_dims[i]
        left = rest.shape[0]
        res = svd_truncate(rest.reshape(left * o * n, -1), policy)
        cores.append(res.left.reshape(left, o, n, res.rank))
        rest = res.singular_values[:, None] * res.right
        sq_err += res.trunc_error**2
    cores.append(rest.reshape(rest.shape[0], spec.out_dims[-1], spec.in_dims[-1], 1))
    m = MPO(cores, spec, canonical_center=k - 1)
    return canonicalize(m, 0), math.sqrt(sq_err)


def mpo_to_matrix(m: MPO, guard: int | None = None) -> np.ndarray:
    spec = m.site_spec
    check_guard(spec.rows * spec.cols, guard)
    k = m.num_sites
    t = m.cores[0][0]  # (o, n, r)
    for c in m.cores[1:]:
        t = np.tensordot(t, c, axes=(t.ndim - 1, 0))
    t = t[..., 0]  # legs o1 n1 o2 n2 ...
    t = t.transpose(list(range(0, 2 * k, 2)) + list(range(1, 2 * k, 2)))
    return t.reshape(spec.rows, spec.cols)


def canonicalize(m: MPO, center: int) -> MPO:
    """Mixed-canonical form around ``center``; the operator is unchanged.

    If ``m.canonical_center`` is set, only the cores between the old and new
    center are touched.
    """
    k = m.num_sites
    if not (0 <= center < k):
        raise IndexError(f"center {center} out of range for {k} sites")
    cores = list(m.cores)
    if m.canonical_center is None:
        lo, hi = 0, k - 1
    else:
        lo = hi = m.canonical_center
    for i in range(lo, center):
        q, r = _left_orth(cores[i])
        cores[i] = q
        cores[i + 1] = np.tensordot(r, cores[i + 1], axes=(1, 0))
    for i in range(hi, center, -1):
        q, r = _right_orth(cores[i])
        cores[i] = q
        cores[i - 1] = np.tensordot(cores[i - 1], r, axes=(3, 0))
    return MPO(cores, m.site_spec, canonical_center=center)


def truncate_mpo(m: MPO, policy: TruncationPolicy) -> tuple[MPO, float]:
    """Left-to-right SVD truncation from right-canonical form.

    Returns the truncated MPO (center at the last site) and the root-sum-square
    of per-bond relative errors. Each cut is an orthogonal projection nested
    inside the previous one, so the bound is rigorous.
    """
    m = canonicalize(m, 0)
    cores = list(m.cores)
    sq_err = 0.0
    for i in range(m.num_sites - 1):
        l, o, n, r = cores[i].shape
        res = svd_truncate(cores[i].reshape(l * o * n, r), policy)
        cores[i] = res.left.reshape(l, o, n, res.rank)
        sv = res.singular_values[:, None] * res.right
        cores[i + 1] = np.tensordot(sv, cores[i + 1], axes=(1, 0))
        sq_err += res.trunc_error**2
    return MPO(cores, m.site_spec, canonical_center=m.num_sites - 1), math.sqrt(sq_err)


def operator_entanglement(m: MPO, bond: int) -> SpectrumReport:
    """Schmidt spectrum of the vectorized operator across ``bond``."""
    if not (0 <= bond < m.num_sites - 1):
        raise IndexError(f"bond {bond} out of range for {m.num_sites} sites")
    c = canonicalize(m, bond).cores[bond]
    l, o, n, r = c.shape
    s = np.linalg.svd(c.reshape(l * o * n, r), compute_uv=False)
    s1, s2 = entropies(s)
    return SpectrumReport(bond, s, s1, s2, float(np.sqrt(np.sum(s**2))))


def transfer_left(env, ca, cb):
    """Absorb one site into a left environment ``env[a_bond, b_bond]`` of ``<a, b>``."""
    tmp = np.tensordot(env, cb, axes=(1, 0))
    return np.tensordot(ca.conj(), tmp, axes=([0, 1, 2], [0, 1, 2]))


def transfer_right(env, ca, cb):
    tmp = np.tensordot(cb, env, axes=(3, 1))
    return np.tensordot(ca.conj(), tmp, axes=([1, 2, 3], [1, 2, 3]))


def _check_same_spec(a: MPO, b: MPO) -> None:
    if a.site_spec != b.site_spec:
        raise DimensionError(f"site specs differ: {a.site_spec} vs {b.site_spec}")


def mpo_overlap(a: MPO, b: MPO) -> complex:
    """Frobenius inner product ``tr(A^H B)`` by bond-space transfer."""
    _check_same_spec(a, b)
    env = np.ones((1, 1), dtype=complex)
    for ca, cb in zip(a.cores, b.cores):
        env = transfer_left(env, ca, cb)
    return complex(env[0, 0])


def mpo_norm(m: MPO) -> float:
    return math.sqrt(max(mpo_overlap(m, m).real, 0.0))


def fit_mpo(init: MPO, target: MPO, sweeps: int = 1) -> MPO:
    """Variational single-site fit of ``target`` within the bond shape of ``init``.

    Each local update is the exact least-squares solution with the other
    cores held as isometries, so ``||target - fit||`` never increases from
    ``init``. Sweeps alternate direction, starting left to right.
    """
    _check_same_spec(init, target)
    k = init.num_sites
    m = canonicalize(init, 0)
    cores = list(m.cores)
    t = target.cores
    if k == 1:
        return MPO([t[0].copy()], init.site_spec, canonical_center=0)
    one = np.ones((1, 1), dtype=complex)
    left = [one] + [None] * k
    right = [None] * k + [one]
    for i in range(k - 1, 0, -1):
        right[i] = transfer_right(right[i + 1], cores[i], t[i])
    center = 0
    for sweep in range(sweeps):
        order = range(k) if sweep % 2 == 0 else range(k - 1, -1, -1)
        for i in order:
            new = np.tensordot(np.tensordot(left[i], t[i], axes=(1, 0)), right[i + 1], axes=(3, 1))
            if sweep % 2 == 0 and i < k - 1:
                q, r = _left_orth(new)
                cores[i] = q
                cores[i + 1] = np.tensordot(r, cores[i + 1], axes=(1, 0))
                left[i + 1] = transfer_left(left[i], q, t[i])
            elif sweep % 2 == 1 and i > 0:
                q, r = _right_orth(new)
                cores[i] = q
                cores[i - 1] = np.tensordot(cores[i - 1], r, axes=(3, 0))
                right[i] = transfer_right(right[i + 1], q, t[i])
            else:
                cores[i] = new
                center = i
    return MPO(cores, init.site_spec, canonical_center=center)


def identity_mpo(spec: SiteSpec) -> MPO:
    if spec.out_dims != spec.in_dims:
        raise DimensionError("identity needs matching input and output dims")
    cores = [np.eye(d, dtype=complex).reshape(1, d, d, 1) for d in spec.out_dims]
    return MPO(cores, spec, canonical_center=None)


def random_mpo(spec: SiteSpec, chi: int, rng: np.random.Generator, normalize: bool = True) -> MPO:
    """Gaussian random cores with bonds ``min(chi, max useful rank)``."""
    bonds = [1] + [min(chi, b) for b in spec.max_bond_ranks()] + [1]
    cores = []
    for i in range(spec.num_sites):
        shape = (bonds[i], spec.out_dims[i], spec.in_dims[i], bonds[i + 1])
        cores.append((rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2))
    m = canonicalize(MPO(cores, spec), 0)
    if normalize:
        c0 = m.cores[0] / np.linalg.norm(m.cores[0])
        m = MPO([c0] + m.cores[1:], spec, canonical_center=0)
    return m


def mpo_adjoint(m: MPO) -> MPO:
    """MPO of the conjugate transpose."""
    spec = SiteSpec(m.site_spec.in_dims, m.site_spec.out_dims)
    cores = [c.conj().transpose(0, 2, 1, 3) for c in m.cores]
    return MPO(cores, spec, canonical_center=m.canonical_center)


def pad_bonds(m: MPO, chi: int, noise: float = 0.0, rng: np.random.Generator | None = None) -> MPO:
    """Zero-pad every bond to ``min(chi, max useful rank)``.

    The operator is unchanged when ``noise == 0``. Otherwise the padded
    blocks receive Gaussian entries of scale ``noise`` relative to the
    operator norm.
    """
    caps = m.site_spec.max_bond_ranks()
    target = [1] + [max(b, min(chi, c)) for b, c in zip(m.bond_dims, caps)] + [1]
    if noise > 0 and rng is None:
        rng = np.random.default_rng()
    cores = []
    for i, c in enumerate(m.cores):
        l, o, n, r = c.shape
        new = np.zeros((target[i], o, n, target[i + 1]), dtype=complex)
        new[:l, :, :, :r] = c
        if noise > 0:
            mask = np.ones(new.shape, dtype=bool)
            mask[:l, :, :, :r] = False
            scale = noise * np.linalg.norm(c) / math.sqrt(max(c.size, 1))
            z = rng.standard_normal(new.shape) + 1j * rng.standard_normal(new.shape)
            new[mask] = scale * z[mask]
        cores.append(new)
    return MPO(cores, m.site_spec, canonical_center=None)


def isometry_residuals(m: MPO) -> list[float]:
    """Per-core deviation from the isometry condition implied by the center."""
    if m.canonical_center is None:
        raise ValueError("MPO has no canonical center")
    out = []
    for i, c in enumerate(m.cores):
        l, o, n, r = c.shape
        if i < m.canonical_center:
            mat = c.reshape(l * o * n, r)
            out.append(float(np.linalg.norm(mat.conj().T @ mat - np.eye(r))))
        elif i > m.canonical_center:
            mat = c.reshape(l, o * n * r)
            out.append(float(np.linalg.norm(mat @ mat.conj().T - np.eye(l))))
        else:
            out.append(0.0)
    return out
