"""Disentangler circuits around a residual MPO.

Given a target operator ``W`` in MPO form, find an output-side circuit ``U``,
an input-side circuit ``V^H`` and a core MPO ``M`` of bond dimension at most
``chi_new`` with ``W ~= U M V^H``.

The optimisation alternates two moves, both of which can only decrease
``||W - U M V^H||_F``:

* gate sweep: with ``M`` fixed the overlap ``Re tr[(U M V^H)^H W]`` is linear
  in each gate, so every gate gets the exact Procrustes maximiser of its
  environment;
* core update: ``M`` is refit to the residual ``T = U^H W V``, taking the
  better of a fresh SVD truncation of ``T`` and a variational sweep that
  starts from the previous core.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

from .circuit import (
    INPUT,
    OUTPUT,
    Circuit,
    CircuitLayout,
    apply_circuit_dense,
    apply_circuit_mpo,
    apply_matrix_mpo,
    brickwork,
    multiplication_steps,
)
from .errors import DimensionError, NonFiniteError
from .mpo import (
    MPO,
    SiteSpec,
    fit_mpo,
    mpo_overlap,
    mpo_to_matrix,
    operator_entanglement,
    transfer_left,
    transfer_right,
    truncate_mpo,
)
from .tensor import EXACT, TruncationPolicy, as_tensor, dense_guard, fix_svd_phases

__all__ = [
    "FactorizedOperator",
    "DisentangleConfig",
    "ConvergenceReport",
    "residual_mpo",
    "gate_environment",
    "procrustes_gate_update",
    "disentangle",
    "fidelity",
    "bond_entropies",
    "core_update",
    "relative_error",
]

log = logging.getLogger(__name__)


@dataclass
class FactorizedOperator:
    """``U @ core @ V^H`` with ``u`` on the output side and ``v_dag`` on the input side."""

    u: Circuit
    core: MPO
    v_dag: Circuit
    site_spec: SiteSpec
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        spec = self.site_spec
        if self.core.site_spec != spec:
            raise DimensionError("core site spec differs from the factorization's")
        if self.u.side != OUTPUT or self.v_dag.side != INPUT:
            raise ValueError("u must be an output-side circuit and v_dag an input-side circuit")
        if self.u.num_sites != spec.num_sites or self.v_dag.num_sites != spec.num_sites:
            raise DimensionError("circuit site counts must equal the core's")
        if self.u.site_dims != spec.out_dims or self.v_dag.site_dims != spec.in_dims:
            raise DimensionError("circuit site dims must match the core's output/input dims")

    def copy(self) -> "FactorizedOperator":
        return FactorizedOperator(self.u.copy(), self.core.copy(), self.v_dag.copy(),
                                  self.site_spec, dict(self.provenance))


@dataclass(frozen=True)
class DisentangleConfig:
    layers_u: int = 1
    layers_v: int = 1
    chi_new: int = 2
    max_sweeps: int = 200
    fid_tol: float = 1e-9
    seed: int = 0
    init: str = "identity"
    # stop a run (and further restarts) once the relative error estimate is below this
    target_error: float | None = None
    # "lbfgs": quasi-Newton on gate generators; "procrustes": one Procrustes update per gate per sweep
    method: str = "lbfgs"

    def __post_init__(self):
        if self.chi_new < 1:
            raise ValueError("chi_new must be >= 1")
        if self.fid_tol <= 0:
            raise ValueError("fid_tol must be > 0")
        if self.layers_u < 0 or self.layers_v < 0 or self.max_sweeps < 1:
            raise ValueError("layers must be >= 0 and max_sweeps >= 1")
        if self.init not in ("identity", "haar"):
            raise ValueError(f"init must be 'identity' or 'haar', got {self.init!r}")
        if self.method not in ("lbfgs", "procrustes"):
            raise ValueError(f"method must be 'lbfgs' or 'procrustes', got {self.method!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ConvergenceReport:
    sweep_fidelities: list[float]
    final_rel_error: float
    entropy_before: list[float]
    entropy_after: list[float]
    sweeps_used: int
    converged: bool
    restarts: int = 1
    best_restart: int = 0
    error_is_bound: bool = False
    # fidelity traces of every restart, best one included
    restart_fidelities: list[list[float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def bond_entropies(m: MPO) -> list[float]:
    return [operator_entanglement(m, b).entropy_s1 for b in range(m.num_sites - 1)]


def _exact_residual(mpo_old: MPO, u: Circuit, v_dag: Circuit) -> MPO:
    # no truncation happens, so the per-gate gauge moves can be skipped
    t = mpo_old
    for c in (u, v_dag):
        for site, mat in multiplication_steps(c, adjoint=True):
            t, _ = apply_matrix_mpo(t, site, mat, c.side, EXACT, canonical=False)
    return t


def residual_mpo(
    mpo_old: MPO, u: Circuit, v_dag: Circuit, chi_new: int
) -> tuple[MPO, float]:
    """``U^H W V`` truncated to ``chi_new``; returns the MPO and an error bound."""
    t, e1 = apply_circuit_mpo(mpo_old, u, adjoint=True, policy=EXACT)
    t, e2 = apply_circuit_mpo(t, v_dag, adjoint=True, policy=EXACT)
    core, e3 = truncate_mpo(t, TruncationPolicy(chi_new, EXACT.rel_cutoff))
    return core, e1 + e2 + e3


def _pair_environment(left: MPO, right: MPO, site: int, legs: str) -> np.ndarray:
    """Open two-site legs of ``<left, right>``.

    ``legs='out'`` gives ``E`` with ``<left, G right> = tr(G E)``;
    ``legs='in'`` gives ``E`` with ``<left, right G> = tr(G E)``.
    """
    k = left.num_sites
    env_l = np.ones((1, 1), dtype=complex)
    for i in range(site):
        env_l = transfer_left(env_l, left.cores[i], right.cores[i])
    env_r = np.ones((1, 1), dtype=complex)
    for i in range(k - 1, site + 1, -1):
        env_r = transfer_right(env_r, left.cores[i], right.cores[i])
    r2 = np.tensordot(right.cores[site], right.cores[site + 1], axes=(3, 0))
    r2 = np.tensordot(np.tensordot(env_l, r2, axes=(1, 0)), env_r, axes=(5, 1))
    l2 = np.tensordot(left.cores[site], left.cores[site + 1], axes=(3, 0)).conj()
    # r2 and l2 carry legs (bond, o1, n1, o2, n2, bond)
    if legs == "out":
        e = np.tensordot(r2, l2, axes=([0, 2, 4, 5], [0, 2, 4, 5]))
    else:
        e = np.tensordot(l2, r2, axes=([0, 1, 3, 5], [0, 1, 3, 5]))
    d = e.shape[0] * e.shape[1]
    return e.reshape(d, d)


def _apply_layer(m: MPO, c: Circuit, layer: int, side: str, adjoint: bool, skip_site: int | None = None) -> MPO:
    for g in c.layers[layer]:
        if g.site == skip_site:
            continue
        mat = g.matrix.conj().T if adjoint else g.matrix
        # environments only need the exact operator, not a canonical gauge
        m, _ = apply_matrix_mpo(m, g.site, mat, side, EXACT, canonical=False)
    return m


def gate_environment(
    mpo_old: MPO, fac: FactorizedOperator, which: str, layer: int, site: int
) -> np.ndarray:
    """Linearised environment of one gate in ``tr[(U M V^H)^H W]``.

    With every other gate and the core fixed, the overlap as a function of
    the gate matrix ``g`` equals ``tr(g @ E)``; its real part is the
    objective maximised by :func:`procrustes_gate_update`.
    """
    if which == "u":
        c = fac.u
        c.gate_at(layer, site)
        left = mpo_old
        for li in range(c.num_layers - 1, layer, -1):
            left = _apply_layer(left, c, li, OUTPUT, adjoint=True)
        right, _ = apply_circuit_mpo(fac.core, fac.v_dag, policy=EXACT)
        for li in range(layer):
            right = _apply_layer(right, c, li, OUTPUT, adjoint=False)
        right = _apply_layer(right, c, layer, OUTPUT, adjoint=False, skip_site=site)
        return _pair_environment(left, right, site, "out")
    if which == "v_dag":
        c = fac.v_dag
        c.gate_at(layer, site)
        left, _ = apply_circuit_mpo(mpo_old, fac.u, adjoint=True, policy=EXACT)
        for li in range(layer):
            left = _apply_layer(left, c, li, INPUT, adjoint=True)
        left = _apply_layer(left, c, layer, INPUT, adjoint=True, skip_site=site)
        right = fac.core
        for li in range(c.num_layers - 1, layer, -1):
            right = _apply_layer(right, c, li, INPUT, adjoint=False)
        return _pair_environment(left, right, site, "in")
    raise ValueError(f"which must be 'u' or 'v_dag', got {which!r}")


def procrustes_gate_update(env) -> tuple[np.ndarray, float]:
    """Unitary maximising ``Re tr(g @ env)``.

    For ``env = X S Y^H`` the maximiser is ``g = Y X^H`` and the maximum is
    the sum of singular values.
    """
    env = as_tensor(env)
    if not np.all(np.isfinite(env)):
        raise NonFiniteError("environment contains non-finite values")
    x, s, yh = np.linalg.svd(env)
    x, yh = fix_svd_phases(x, yh)
    return yh.conj().T @ x.conj().T, float(np.sum(s))


def _sweep_environments(
    mpo_old: MPO, u: Circuit, core: MPO, v_dag: Circuit, update: bool
) -> tuple[Circuit, Circuit, list[np.ndarray]]:
    """Environments of every gate, all of ``u`` then all of ``v_dag``.

    With ``update=True`` each gate is replaced by its Procrustes maximiser as
    soon as its environment is known (one sweep); otherwise the gates stay
    fixed and the environments form the gradient of the overlap. Partial
    products are cached layer by layer so the cost is a number of TEBD steps
    linear in the gate count (times the layer width).
    """
    envs: list[np.ndarray] = []
    n_u = u.num_layers
    lefts: list[MPO] = [mpo_old] * n_u
    cur = mpo_old
    for li in range(n_u - 1, -1, -1):
        lefts[li] = cur
        cur = _apply_layer(cur, u, li, OUTPUT, adjoint=True)
    base = core
    for li in range(v_dag.num_layers - 1, -1, -1):
        base = _apply_layer(base, v_dag, li, INPUT, adjoint=False)
    for li in range(n_u):
        for g in list(u.layers[li]):
            right = _apply_layer(base, u, li, OUTPUT, adjoint=False, skip_site=g.site)
            env = _pair_environment(lefts[li], right, g.site, "out")
            envs.append(env)
            if update:
                u = u.replace_gate(li, g.site, procrustes_gate_update(env)[0])
        base = _apply_layer(base, u, li, OUTPUT, adjoint=False)

    n_v = v_dag.num_layers
    rights: list[MPO] = [core] * n_v
    cur = core
    for li in range(n_v - 1, -1, -1):
        rights[li] = cur
        cur = _apply_layer(cur, v_dag, li, INPUT, adjoint=False)
    base = mpo_old
    for li in range(n_u - 1, -1, -1):
        base = _apply_layer(base, u, li, OUTPUT, adjoint=True)
    for li in range(n_v):
        for g in list(v_dag.layers[li]):
            left = _apply_layer(base, v_dag, li, INPUT, adjoint=True, skip_site=g.site)
            env = _pair_environment(left, rights[li], g.site, "in")
            envs.append(env)
            if update:
                v_dag = v_dag.replace_gate(li, g.site, procrustes_gate_update(env)[0])
        base = _apply_layer(base, v_dag, li, INPUT, adjoint=True)
    return u, v_dag, envs


def _gate_sweep(mpo_old: MPO, u: Circuit, core: MPO, v_dag: Circuit) -> tuple[Circuit, Circuit]:
    u, v_dag, _ = _sweep_environments(mpo_old, u, core, v_dag, update=True)
    return u, v_dag


def _sq_error(m: MPO, t: MPO, t_norm2: float) -> float:
    return t_norm2 + mpo_overlap(m, m).real - 2.0 * mpo_overlap(m, t).real


def _normalized_fidelity(m: MPO, t: MPO, t_norm2: float) -> float:
    m_norm2 = mpo_overlap(m, m).real
    if m_norm2 <= 0 or t_norm2 <= 0:
        return 0.0
    return abs(mpo_overlap(m, t)) ** 2 / (t_norm2 * m_norm2)


def core_update(core: MPO | None, t: MPO, chi: int) -> MPO:
    """Best of a fresh truncation of ``t`` and a variational refit of ``core``.

    The variational candidate can only improve on (a rescaling of) ``core``,
    which is what keeps the alternating loop monotone.
    """
    cand, _ = truncate_mpo(t, TruncationPolicy(chi, EXACT.rel_cutoff))
    if core is None:
        return cand
    t_norm2 = mpo_overlap(t, t).real
    refit = fit_mpo(core, t, sweeps=1)
    if _sq_error(refit, t, t_norm2) < _sq_error(cand, t, t_norm2):
        return refit
    return cand


def fidelity(fac: FactorizedOperator, mpo_old: MPO) -> float:
    """``|<R, W>|^2 / (||W||^2 ||R||^2)`` for the reconstruction ``R``, never densified."""
    if mpo_old.site_spec != fac.site_spec:
        raise DimensionError("factorization and target have different site specs")
    r, _ = apply_circuit_mpo(fac.core, fac.u, policy=EXACT)
    r, _ = apply_circuit_mpo(r, fac.v_dag, policy=EXACT)
    w2 = mpo_overlap(mpo_old, mpo_old).real
    r2 = mpo_overlap(r, r).real
    if w2 <= 0 or r2 <= 0:
        return 0.0
    return abs(mpo_overlap(r, mpo_old)) ** 2 / (w2 * r2)


def relative_error(fac: FactorizedOperator, mpo_old: MPO) -> tuple[float, bool]:
    """Dense relative error when within the guard, else the fidelity-based value.

    The second element is ``True`` when the fidelity-based estimate was used.
    """
    spec = fac.site_spec
    if spec.rows * spec.cols <= dense_guard():
        w = mpo_to_matrix(mpo_old)
        r = apply_circuit_dense(fac.u, mpo_to_matrix(fac.core))
        r = apply_circuit_dense(fac.v_dag, r)
        nw = np.linalg.norm(w)
        return (float(np.linalg.norm(w - r) / nw) if nw > 0 else float(np.linalg.norm(r))), False
    r, _ = apply_circuit_mpo(fac.core, fac.u, policy=EXACT)
    r, _ = apply_circuit_mpo(r, fac.v_dag, policy=EXACT)
    w2 = mpo_overlap(mpo_old, mpo_old).real
    e2 = w2 + mpo_overlap(r, r).real - 2 * mpo_overlap(r, mpo_old).real
    return math.sqrt(max(e2, 0.0) / w2) if w2 > 0 else 0.0, True


def _initial_circuits(spec: SiteSpec, cfg: DisentangleConfig, init: str, seed: int):
    k = spec.num_sites
    if k < 2:
        if cfg.layers_u or cfg.layers_v:
            raise DimensionError("circuits need at least two sites")
        return (Circuit(1, spec.out_dims, [], OUTPUT), Circuit(1, spec.in_dims, [], INPUT))
    seeds = np.random.SeedSequence(seed).generate_state(2)
    u = brickwork(CircuitLayout(k, cfg.layers_u), init, int(seeds[0]), spec.out_dims, OUTPUT)
    v = brickwork(CircuitLayout(k, cfg.layers_v), init, int(seeds[1]), spec.in_dims, INPUT)
    return u, v


def _with_matrices(c: Circuit, mats) -> Circuit:
    it = iter(mats)
    layers = [[g.with_matrix(next(it)) for g in layer] for layer in c.layers]
    return Circuit(c.num_sites, c.site_dims, layers, c.side, c.parity_start)


def _herm(s: np.ndarray) -> np.ndarray:
    # bijection from real d x d matrices onto Hermitian ones
    return 0.5 * (1 + 1j) * s + 0.5 * (1 - 1j) * s.T


class _GateObjective:
    """Truncation infidelity as a function of Hermitian gate generators.

    Gate ``i`` is ``base_i @ expm(1j * H_i)``. The value is ``1 - F`` with the
    core set to the ``chi``-truncation of the exact residual. Because that
    core is a projection of the residual, the gradient with the core held
    fixed is exact to first order, and it comes from the gate environments.
    """

    def __init__(self, mpo_old: MPO, u: Circuit, v_dag: Circuit, chi: int):
        self.mpo_old = mpo_old
        self.u = u
        self.v_dag = v_dag
        self.policy = TruncationPolicy(chi, EXACT.rel_cutoff)
        self.rebase(u, v_dag)

    def rebase(self, u: Circuit, v_dag: Circuit) -> None:
        self.u, self.v_dag = u, v_dag
        self.bases = [g.matrix for _, g in u.gates()] + [g.matrix for _, g in v_dag.gates()]
        self.sizes = [b.shape[0] ** 2 for b in self.bases]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)]).astype(int)

    @property
    def num_params(self) -> int:
        return int(self.offsets[-1])

    def _generators(self, x: np.ndarray) -> list[np.ndarray]:
        out = []
        for b, lo, hi in zip(self.bases, self.offsets[:-1], self.offsets[1:]):
            d = b.shape[0]
            out.append(1j * _herm(x[lo:hi].reshape(d, d)))
        return out

    def state(self, x: np.ndarray):
        gens = self._generators(x)
        mats = [b @ scipy.linalg.expm(a) for b, a in zip(self.bases, gens)]
        n_u = self.u.num_gates
        u = _with_matrices(self.u, mats[:n_u])
        v_dag = _with_matrices(self.v_dag, mats[n_u:])
        t = _exact_residual(self.mpo_old, u, v_dag)
        core, _ = truncate_mpo(t, self.policy)
        return gens, u, v_dag, t, core

    def value_and_grad(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        gens, u, v_dag, t, core = self.state(x)
        t2 = mpo_overlap(t, t).real
        f = _normalized_fidelity(core, t, t2)
        if not math.isfinite(f):
            raise NonFiniteError("fidelity became non-finite")
        _, _, envs = _sweep_environments(self.mpo_old, u, core, v_dag, update=False)
        grad = np.empty(self.num_params)
        for a, b, env, lo, hi in zip(gens, self.bases, envs, self.offsets[:-1], self.offsets[1:]):
            # adjoint of the Frechet derivative of expm: <Y, L(A, Z)> = <L(A^H, Y), Z>
            x_mat = env @ b
            k = scipy.linalg.expm_frechet(a.conj().T, x_mat.conj().T, compute_expm=False).conj().T
            g = 0.5 * ((k - k.T).real - (k + k.T).imag)
            grad[lo:hi] = (-2.0 / t2) * g.ravel()
        return 1.0 - f, grad


def _record(fids: list[float], f: float) -> None:
    if not math.isfinite(f):
        raise NonFiniteError(f"fidelity became non-finite after {len(fids)} sweeps")
    fids.append(f)


def _should_stop(fids: list[float], cfg: DisentangleConfig, rel: bool) -> bool:
    """Stopping rule on the fidelity trace.

    The Procrustes loop uses ``|dF| < fid_tol``. Quasi-Newton steps shrink
    the infidelity geometrically, so there the change is measured relative to
    ``1 - F`` and must stay small for three consecutive steps.
    """
    f = fids[-1]
    if cfg.target_error is not None and math.sqrt(max(1.0 - f, 0.0)) <= cfg.target_error:
        return True
    if len(fids) < 2:
        return False
    if not rel:
        return abs(f - fids[-2]) < cfg.fid_tol
    if 1.0 - f <= _INFIDELITY_FLOOR:
        return True
    if len(fids) < 4:
        return False
    scale = max(1.0 - f, _INFIDELITY_FLOOR)
    return all(abs(fids[-j] - fids[-j - 1]) <= cfg.fid_tol * scale for j in (1, 2, 3))


_INFIDELITY_FLOOR = 1e-15
_MAX_LINE_SEARCH = 8


def _run_procrustes(mpo_old, cfg, u, v_dag, core, t, fids):
    converged = False
    while len(fids) <= cfg.max_sweeps:
        u, v_dag = _gate_sweep(mpo_old, u, core, v_dag)
        t = _exact_residual(mpo_old, u, v_dag)
        _record(fids, _normalized_fidelity(core, t, mpo_overlap(t, t).real))
        core = core_update(core, t, cfg.chi_new)
        if _should_stop(fids, cfg, rel=False):
            converged = True
            break
    return u, v_dag, core, t, converged


def _run_lbfgs(mpo_old, cfg, u, v_dag, core, t, fids):
    obj = _GateObjective(mpo_old, u, v_dag, cfg.chi_new)
    converged = False

    def callback(intermediate_result):
        nonlocal converged
        _record(fids, 1.0 - float(intermediate_result.fun))
        if _should_stop(fids, cfg, rel=True):
            converged = True
            raise StopIteration

    while len(fids) <= cfg.max_sweeps and not converged:
        before = len(fids)
        res = scipy.optimize.minimize(
            obj.value_and_grad,
            np.zeros(obj.num_params),
            jac=True,
            method="L-BFGS-B",
            callback=callback,
            options={"maxiter": cfg.max_sweeps + 1 - len(fids), "ftol": 0.0, "gtol": 0.0, "maxls": _MAX_LINE_SEARCH},
        )
        _, u, v_dag, _, _ = obj.state(res.x)
        obj.rebase(u, v_dag)
        if len(fids) == before:
            # the line search made no progress even from a fresh quasi-Newton model
            converged = True
    t = _exact_residual(mpo_old, u, v_dag)
    core, _ = truncate_mpo(t, TruncationPolicy(cfg.chi_new, EXACT.rel_cutoff))
    return u, v_dag, core, t, converged


def _run(mpo_old: MPO, cfg: DisentangleConfig, init: str, seed: int):
    u, v_dag = _initial_circuits(mpo_old.site_spec, cfg, init, seed)
    t = _exact_residual(mpo_old, u, v_dag)
    core = core_update(None, t, cfg.chi_new)
    fids: list[float] = []
    _record(fids, _normalized_fidelity(core, t, mpo_overlap(t, t).real))
    if u.num_gates + v_dag.num_gates == 0:
        return u, core, v_dag, fids, True
    if cfg.method == "lbfgs":
        u, v_dag, core, t, converged = _run_lbfgs(mpo_old, cfg, u, v_dag, core, t, fids)
    else:
        u, v_dag, core, t, converged = _run_procrustes(mpo_old, cfg, u, v_dag, core, t, fids)
    # variational polish of the core; it can only raise the fidelity
    polished = core_update(core, t, cfg.chi_new)
    t2 = mpo_overlap(t, t).real
    f = _normalized_fidelity(polished, t, t2)
    if f > fids[-1]:
        core = polished
        _record(fids, f)
    return u, core, v_dag, fids, converged


def disentangle(
    mpo_old: MPO, cfg: DisentangleConfig, restarts: int = 1
) -> tuple[FactorizedOperator, ConvergenceReport]:
    """Fit ``mpo_old ~= U M V^H`` and report convergence.

    Restart ``r`` uses seed ``cfg.seed + r``; restart 0 uses ``cfg.init`` and
    later ones Haar-random gates. The restart with the lowest final error is
    returned. Non-convergence is reported, not raised.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    before = bond_entropies(mpo_old)
    best = None
    traces = []
    used = 0
    for r in range(restarts):
        init = cfg.init if r == 0 else "haar"
        u, core, v_dag, fids, converged = _run(mpo_old, cfg, init, cfg.seed + r)
        fac = FactorizedOperator(
            u, core, v_dag, mpo_old.site_spec,
            provenance={"config": cfg.to_dict(), "restart": r, "seed": cfg.seed + r, "init": init},
        )
        err, is_bound = relative_error(fac, mpo_old)
        traces.append(fids)
        used = r + 1
        log.debug("restart %d: %d sweeps, rel error %.3e", r, len(fids), err)
        if best is None or err < best[1]:
            best = (fac, err, is_bound, fids, converged, r)
        if cfg.target_error is not None and best[1] <= cfg.target_error:
            break
    fac, err, is_bound, fids, converged, r_best = best
    report = ConvergenceReport(
        sweep_fidelities=fids,
        final_rel_error=err,
        entropy_before=before,
        entropy_after=bond_entropies(fac.core),
        sweeps_used=len(fids) - 1,
        converged=converged,
        restarts=used,
        best_restart=r_best,
        error_is_bound=is_bound,
        restart_fidelities=traces,
    )
    return fac, report

