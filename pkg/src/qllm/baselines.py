"""Baselines at a fixed error target: plain MPO, polar decomposition, disentangler.

The polar route writes ``W = U_p P`` and stores ``P`` as an MPO and ``U_p``
as a brickwork circuit. Its circuit cost is the smallest brickwork depth
at which the disentangler optimiser, run on ``U_p`` itself with a bond-1
core, reaches the target.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import scipy.linalg

from .circuit import CircuitLayout
from .disentangler import DisentangleConfig, disentangle
from .errors import DimensionError
from .layer import param_count, reconstruct
from .mpo import MPO, SiteSpec, mpo_from_matrix, mpo_to_matrix, truncate_mpo
from .tensor import EXACT, TruncationPolicy, as_tensor, check_guard

__all__ = ["BondProfile", "polar_decompose", "minimal_mpo", "baseline_profiles"]

PLAIN, POLAR, DISENTANGLER = "plain_mpo", "polar", "disentangler"
# looser stall test for the many short searches; a candidate that improves by
# less than this fraction of its infidelity per step is not going to reach the target
SEARCH_FID_TOL = 1e-6


@dataclass
class BondProfile:
    method: str
    target_error: float
    bond_dims: list[int]
    circuit_layers: int
    param_count: int
    achieved_error: float
    reached: bool

    def to_dict(self) -> dict:
        return asdict(self)


def polar_decompose(w, uniqueness_tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray, bool]:
    """``w = u_p @ p`` with ``u_p`` unitary and ``p`` Hermitian PSD.

    The third value is ``False`` when ``w`` is numerically singular, in which
    case ``u_p`` is one valid choice among many.
    """
    w = as_tensor(w, check_finite=True)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise DimensionError(f"polar_decompose needs a square matrix, got {w.shape}")
    u_p, p = scipy.linalg.polar(w, side="right")
    p = 0.5 * (p + p.conj().T)
    s = np.linalg.svd(w, compute_uv=False)
    unique = bool(s[-1] > uniqueness_tol * max(s[0], 1.0))
    return u_p, p, unique


def minimal_mpo(w, spec: SiteSpec, target_error: float) -> tuple[MPO, float]:
    """Smallest uniform bond cap whose truncation meets ``target_error``.

    Errors are measured against the dense ``w``; the projection identity
    ``||w||^2 - ||m||^2`` loses half the digits near zero.
    """
    w = as_tensor(w)
    full, _ = mpo_from_matrix(w, spec, EXACT)
    nw = np.linalg.norm(w)
    for chi in range(1, max(full.max_bond, 1) + 1):
        m, _ = truncate_mpo(full, TruncationPolicy(chi, EXACT.rel_cutoff))
        err = float(np.linalg.norm(w - mpo_to_matrix(m)) / nw) if nw > 0 else 0.0
        if err <= target_error:
            return m, err
    return full, float(np.linalg.norm(w - mpo_to_matrix(full)) / nw) if nw > 0 else 0.0


def _core_params(m: MPO) -> int:
    return 2 * sum(c.size for c in m.cores)


def _nominal_params(spec: SiteSpec, layers: int, chi: int) -> int:
    k = spec.num_sites
    gates = 0
    if k > 1:
        for side_dims in (spec.out_dims, spec.in_dims):
            layout = CircuitLayout(k, layers)
            for li in range(layers):
                gates += sum((side_dims[s] * side_dims[s + 1]) ** 2 for s in layout.pair_sites(li))
    caps = spec.max_bond_ranks()
    bonds = [1] + [min(chi, c) for c in caps] + [1]
    core = sum(bonds[i] * spec.out_dims[i] * spec.in_dims[i] * bonds[i + 1] for i in range(k))
    return 2 * (gates + core)


def _circuit_depth_for_unitary(u_p, spec: SiteSpec, target: float, max_depth: int,
                               restarts: int, max_sweeps: int, seed: int):
    """Smallest depth with error <= target, by bisection.

    Success is monotone in depth (extra identity layers keep a solution), so
    bisection is valid up to optimiser failures. Returns the depth and its
    factorization, or ``max_depth`` and the best attempt when even that fails.
    """
    m, _ = mpo_from_matrix(u_p, spec, EXACT)

    def attempt(d):
        cfg = DisentangleConfig(layers_u=d, layers_v=0, chi_new=1, max_sweeps=max_sweeps,
                                seed=seed, init="identity", target_error=target, fid_tol=SEARCH_FID_TOL)
        fac, rep = disentangle(m, cfg, restarts=restarts if d > 0 else 1)
        return fac, rep.final_rel_error

    if spec.num_sites < 2:
        fac, err = attempt(0)
        return 0, fac, err, err <= target
    top_fac, top_err = attempt(max_depth)
    if top_err > target:
        return max_depth, top_fac, top_err, False
    lo, hi = -1, max_depth
    best = (top_fac, top_err)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        fac, err = attempt(mid)
        if err <= target:
            hi, best = mid, (fac, err)
        else:
            lo = mid
    return hi, best[0], best[1], True


def _disentangler_profile(w_mpo: MPO, spec: SiteSpec, target: float, max_layers: int,
                          restarts: int, max_sweeps: int, seed: int):
    caps = spec.max_bond_ranks()
    max_chi = max(caps) if caps else 1
    cands = [(l, chi) for l in range(max_layers + 1) for chi in range(1, max_chi + 1)
             if spec.num_sites > 1 or l == 0]
    cands.sort(key=lambda lc: (_nominal_params(spec, *lc), lc))
    best = None
    for layers, chi in cands:
        cfg = DisentangleConfig(layers_u=layers, layers_v=layers, chi_new=chi, max_sweeps=max_sweeps,
                                seed=seed, init="identity", target_error=target, fid_tol=SEARCH_FID_TOL)
        fac, rep = disentangle(w_mpo, cfg, restarts=restarts if layers > 0 else 1)
        if best is None or rep.final_rel_error < best[1]:
            best = (fac, rep.final_rel_error, layers)
        if rep.final_rel_error <= target:
            return fac, rep.final_rel_error, layers, True
    return best[0], best[1], best[2], False


def baseline_profiles(
    w,
    spec: SiteSpec,
    target_error: float,
    *,
    max_layers: int = 2,
    max_polar_depth: int = 8,
    restarts: int = 3,
    max_sweeps: int = 200,
    seed: int = 0,
) -> list[BondProfile]:
    """Plain MPO, polar and disentangler profiles at ``target_error``.

    Parameter counts are stored real scalars. The polar count includes the
    ``P`` MPO, the gates of ``U_p``'s circuit and its bond-1 core. The
    disentangler candidates ``(layers, chi)`` are tried in order of their
    nominal parameter count and the first that reaches the target wins.
    """
    w = as_tensor(w, check_finite=True)
    check_guard(w.size)
    if w.shape != (spec.rows, spec.cols):
        raise DimensionError(f"matrix {w.shape} does not match site spec {spec.rows}x{spec.cols}")
    if not target_error > 0:
        raise ValueError("target_error must be > 0")

    plain, plain_err = minimal_mpo(w, spec, target_error)
    profiles = [BondProfile(PLAIN, target_error, list(plain.bond_dims), 0, _core_params(plain),
                            plain_err, True)]

    if spec.rows == spec.cols and spec.out_dims == spec.in_dims:
        u_p, p, _ = polar_decompose(w)
        p_mpo, p_err = minimal_mpo(p, spec, target_error)
        depth, u_fac, u_err, reached = _circuit_depth_for_unitary(
            u_p, spec, target_error, max_polar_depth, restarts, max_sweeps, seed)
        count = _core_params(p_mpo) + param_count(u_fac).total
        approx = reconstruct(u_fac) @ mpo_to_matrix(p_mpo)
        err = float(np.linalg.norm(w - approx) / np.linalg.norm(w)) if np.any(w) else 0.0
        profiles.append(BondProfile(POLAR, target_error, list(p_mpo.bond_dims), depth, count,
                                    err, reached and p_err <= target_error))

    full, _ = mpo_from_matrix(w, spec, EXACT)
    fac, err, layers, reached = _disentangler_profile(full, spec, target_error, max_layers,
                                                      restarts, max_sweeps, seed)
    profiles.append(BondProfile(DISENTANGLER, target_error, list(fac.core.bond_dims), layers,
                                param_count(fac).total, err, reached))
    return profiles
