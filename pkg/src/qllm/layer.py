"""A factorized operator used as a layer: evaluation, accounting, growth, retraining."""
from __future__ import annotations

import math
import string
from dataclasses import asdict, dataclass, field

import numpy as np

from . import disentangler as _dis
from .circuit import Circuit, apply_circuit_dense, apply_pair_to_tensor
from .disentangler import DisentangleConfig, FactorizedOperator, core_update
from .errors import DimensionError, NonFiniteError
from .mpo import MPO, mpo_adjoint, mpo_overlap, mpo_to_matrix, pad_bonds
from .tensor import as_tensor, check_guard, polar_project

__all__ = [
    "EnhanceConfig",
    "LossTrace",
    "ParamCount",
    "reconstruct",
    "apply_to_batch",
    "param_count",
    "enhance",
    "retrain",
    "data_mse_loss",
    "data_mse_gradients",
    "matrix_loss",
    "SweepCell",
    "capacity_sweep",
]

MATRIX_FIDELITY = "matrix_fidelity"
DATA_MSE = "data_mse"
# losses this small are roundoff in the overlap-based evaluation
LOSS_FLOOR = 1e-14


@dataclass(frozen=True)
class EnhanceConfig:
    add_layers_u: int = 0
    add_layers_v: int = 0
    # None keeps the current maximal bond dimension
    new_chi: int | None = None
    retrain_steps: int = 100
    step_size: float = 0.05
    objective: str = MATRIX_FIDELITY
    # (x, y) column batches for the data_mse objective
    batch: tuple | None = field(default=None, compare=False, repr=False)
    seed: int = 0
    # scale of the seeded noise injected into zero-padded bond blocks
    noise: float = 0.0

    def __post_init__(self):
        if self.add_layers_u < 0 or self.add_layers_v < 0:
            raise ValueError("added layer counts must be >= 0")
        if self.new_chi is not None and self.new_chi < 1:
            raise ValueError("new_chi must be >= 1")
        if self.retrain_steps < 0:
            raise ValueError("retrain_steps must be >= 0")
        if not self.step_size > 0:
            raise ValueError("step_size must be > 0")
        if self.objective not in (MATRIX_FIDELITY, DATA_MSE):
            raise ValueError(f"objective must be {MATRIX_FIDELITY!r} or {DATA_MSE!r}")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("batch")
        return d


@dataclass
class LossTrace:
    step_losses: list[float]
    grad_check: dict | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ParamCount:
    gates: int
    core: int
    total: int
    dense_equiv: int
    ratio: float

    def to_dict(self) -> dict:
        return asdict(self)


def reconstruct(fac: FactorizedOperator) -> np.ndarray:
    spec = fac.site_spec
    check_guard(spec.rows * spec.cols)
    r = apply_circuit_dense(fac.u, mpo_to_matrix(fac.core))
    return apply_circuit_dense(fac.v_dag, r)


def _circuit_forward(c: Circuit, x: np.ndarray) -> np.ndarray:
    # x carries one leg per site followed by the batch leg; layer 0 acts first
    for layer in c.layers:
        for g in layer:
            x = apply_pair_to_tensor(x, g.site, g.matrix)
    return x


def _mpo_forward(m: MPO, x: np.ndarray) -> np.ndarray:
    """Apply the MPO to a tensor with legs ``(n_0 .. n_{k-1}, batch)``.

    Sites are absorbed left to right, so the running tensor has legs
    ``(o_0 .. o_{i-1}, bond, n_i .. n_{k-1}, batch)``.
    """
    t = x[np.newaxis]
    for i, core in enumerate(m.cores):
        # contract bond (axis i) and n_i (axis i + 1)
        t = np.tensordot(t, core, axes=([i, i + 1], [0, 2]))
        # legs now (o_0..o_{i-1}, n_{i+1}.., batch, o_i, bond): move o_i and bond back
        t = np.moveaxis(t, [-2, -1], [i, i + 1])
    return t[..., 0, :]


def apply_to_batch(fac: FactorizedOperator, x) -> np.ndarray:
    """``U M V^H x`` for a batch of column vectors, without forming the operator."""
    x = as_tensor(x)
    spec = fac.site_spec
    if x.ndim != 2 or x.shape[0] != spec.cols:
        raise DimensionError(f"batch must have shape ({spec.cols}, B), got {x.shape}")
    b = x.shape[1]
    t = _circuit_forward(fac.v_dag, x.reshape(spec.in_dims + (b,)))
    t = _mpo_forward(fac.core, t)
    t = _circuit_forward(fac.u, t)
    return t.reshape(spec.rows, b)


def param_count(fac: FactorizedOperator) -> ParamCount:
    """Stored real scalars; each complex entry counts twice."""
    gates = 2 * sum(g.matrix.size for c in (fac.u, fac.v_dag) for _, g in c.gates())
    core = 2 * sum(c.size for c in fac.core.cores)
    dense = 2 * fac.site_spec.rows * fac.site_spec.cols
    return ParamCount(gates, core, gates + core, dense, (gates + core) / dense)


def enhance(fac: FactorizedOperator, cfg: EnhanceConfig) -> FactorizedOperator:
    """Append identity layers and zero-pad the core bonds; the operator is unchanged."""
    chi = fac.core.max_bond if cfg.new_chi is None else cfg.new_chi
    if chi < fac.core.max_bond:
        raise ValueError(f"new_chi={chi} would shrink the core (max bond {fac.core.max_bond})")
    rng = np.random.default_rng(cfg.seed) if cfg.noise > 0 else None
    core = pad_bonds(fac.core, chi, noise=cfg.noise, rng=rng)
    u = fac.u.extended(cfg.add_layers_u) if fac.u.num_sites > 1 else fac.u
    v_dag = fac.v_dag.extended(cfg.add_layers_v) if fac.v_dag.num_sites > 1 else fac.v_dag
    prov = dict(fac.provenance)
    prov["enhance"] = cfg.to_dict()
    return FactorizedOperator(u, core, v_dag, fac.site_spec, prov)


def _residual(fac: FactorizedOperator, target: MPO) -> MPO:
    return _dis._exact_residual(target, fac.u, fac.v_dag)


def matrix_loss(fac: FactorizedOperator, target: MPO) -> float:
    """``||W - U M V^H||^2 / ||W||^2`` computed in MPO form."""
    t = _residual(fac, target)
    t2 = mpo_overlap(t, t).real
    m = fac.core
    e2 = t2 + mpo_overlap(m, m).real - 2.0 * mpo_overlap(m, t).real
    return max(e2, 0.0) / t2 if t2 > 0 else 0.0


def _retrain_matrix(fac: FactorizedOperator, target: MPO, cfg: EnhanceConfig):
    """Quasi-Newton gate optimisation from the current gates, keeping the best iterate.

    ``step_losses`` records the loss of the retained parameters after each
    step, so it is non-increasing by construction; an already exact fit is
    returned untouched.
    """
    best_loss = matrix_loss(fac, target)
    losses = [best_loss]
    if cfg.retrain_steps == 0 or best_loss <= LOSS_FLOOR:
        losses.extend([best_loss] * cfg.retrain_steps)
        return fac, losses
    chi = fac.core.max_bond
    dcfg = DisentangleConfig(
        layers_u=fac.u.num_layers, layers_v=fac.v_dag.num_layers, chi_new=chi,
        max_sweeps=cfg.retrain_steps, seed=cfg.seed,
    )
    u, v_dag = fac.u, fac.v_dag
    if u.num_gates + v_dag.num_gates > 0:
        t = _dis._exact_residual(target, u, v_dag)
        fids = [1.0 - best_loss]
        u, v_dag, core, t, _ = _dis._run_lbfgs(target, dcfg, u, v_dag, None, t, fids)
        for f in fids[1:]:
            best_loss = min(best_loss, max(1.0 - f, 0.0))
            losses.append(best_loss)
    else:
        t = _dis._exact_residual(target, u, v_dag)
        core = fac.core
    core = core_update(core, t, chi)
    cand = FactorizedOperator(u, core, v_dag, fac.site_spec, dict(fac.provenance))
    cand_loss = matrix_loss(cand, target)
    if cand_loss < losses[0] - LOSS_FLOOR:
        fac = cand
        losses.append(min(losses[-1], cand_loss))
    else:
        losses.append(losses[-1])
    return fac, losses


def _einsum_core_env(cores: list[np.ndarray], skip: int, lam: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Contract ``conj(lam)``, ``z`` and every core except ``skip``.

    ``lam`` has legs ``(o_0..o_{k-1}, batch)`` and ``z`` legs
    ``(n_0..n_{k-1}, batch)``; the result has the shape of ``cores[skip]``.
    """
    k = len(cores)
    letters = iter(string.ascii_letters)
    o = [next(letters) for _ in range(k)]
    n = [next(letters) for _ in range(k)]
    bond = [next(letters) for _ in range(k + 1)]
    batch = next(letters)
    terms = ["".join(o) + batch, "".join(n) + batch]
    ops = [lam.conj(), z]
    for i, c in enumerate(cores):
        if i != skip:
            terms.append(bond[i] + o[i] + n[i] + bond[i + 1])
            ops.append(c)
    # an outer bond of the skipped core has dimension 1 and appears nowhere else
    out = (bond[skip] if skip > 0 else "") + o[skip] + n[skip] + (bond[skip + 1] if skip < k - 1 else "")
    return np.einsum(",".join(terms) + "->" + out, *ops, optimize=True).reshape(cores[skip].shape)


def _gate_backward(c: Circuit, x_in: np.ndarray, lam_out: np.ndarray):
    """Backpropagate through a circuit applied to ``x_in``.

    Returns the gradients ``2 dL/d conj(g)`` for every gate, in ``c.gates()``
    order, and the cotangent at the circuit input.
    """
    states = []
    x = x_in
    for layer in c.layers:
        for g in layer:
            states.append(x)
            x = apply_pair_to_tensor(x, g.site, g.matrix)
    flat = [g for layer in c.layers for g in layer]
    grads = [None] * len(flat)
    lam = lam_out
    for j in range(len(flat) - 1, -1, -1):
        g, s = flat[j], states[j]
        a = np.moveaxis(lam, [g.site, g.site + 1], [0, 1])
        b = np.moveaxis(s, [g.site, g.site + 1], [0, 1])
        d1, d2 = a.shape[0], a.shape[1]
        grads[j] = a.reshape(d1 * d2, -1) @ b.reshape(d1 * d2, -1).conj().T
        lam = apply_pair_to_tensor(lam, g.site, g.matrix.conj().T)
    return grads, lam


def _mpo_backward(m: MPO, lam: np.ndarray) -> np.ndarray:
    """Cotangent through ``M``: apply ``M^H`` to a tensor with output legs."""
    return _mpo_forward(mpo_adjoint(m), lam)


def data_mse_loss(fac: FactorizedOperator, x, y) -> float:
    """``||R x - y||_F^2 / ||y||_F^2`` (plain squared error when ``y = 0``)."""
    y = as_tensor(y)
    r = apply_to_batch(fac, x) - y
    ny = float(np.vdot(y, y).real)
    return float(np.vdot(r, r).real) / (ny if ny > 0 else 1.0)


def data_mse_gradients(fac: FactorizedOperator, x, y):
    """Loss and ``2 dL/d conj(.)`` for every core tensor and gate matrix.

    With this convention a perturbation ``d`` of a parameter ``p`` changes
    the loss by ``Re sum(conj(G) * d)`` to first order.
    """
    x = as_tensor(x)
    y = as_tensor(y)
    spec = fac.site_spec
    b = x.shape[1]
    x_t = x.reshape(spec.in_dims + (b,))
    z = _circuit_forward(fac.v_dag, x_t)
    mz = _mpo_forward(fac.core, z)
    out = _circuit_forward(fac.u, mz)
    ny = float(np.vdot(y, y).real)
    scale = 1.0 / (ny if ny > 0 else 1.0)
    res = out - y.reshape(spec.out_dims + (b,))
    loss = float(np.vdot(res, res).real) * scale
    lam = 2.0 * scale * res
    u_grads, lam_core = _gate_backward(fac.u, mz, lam)
    core_grads = [
        _einsum_core_env(fac.core.cores, i, lam_core, z).conj() for i in range(fac.core.num_sites)
    ]
    lam_v = _mpo_backward(fac.core, lam_core)
    v_grads, _ = _gate_backward(fac.v_dag, x_t, lam_v)
    return loss, core_grads, u_grads, v_grads


def _retrain_data(fac: FactorizedOperator, cfg: EnhanceConfig):
    x, y = cfg.batch
    losses = []
    eta = cfg.step_size
    for _ in range(cfg.retrain_steps):
        loss, cg, ug, vg = data_mse_gradients(fac, x, y)
        if not math.isfinite(loss):
            raise NonFiniteError(f"data_mse loss became non-finite after {len(losses)} steps")
        losses.append(loss)
        cores = [c - eta * g for c, g in zip(fac.core.cores, cg)]
        u = _dis._with_matrices(fac.u, [polar_project(g.matrix - eta * d)
                                        for (_, g), d in zip(fac.u.gates(), ug)])
        v_dag = _dis._with_matrices(fac.v_dag, [polar_project(g.matrix - eta * d)
                                                for (_, g), d in zip(fac.v_dag.gates(), vg)])
        fac = FactorizedOperator(u, MPO(cores, fac.site_spec), v_dag, fac.site_spec,
                                 dict(fac.provenance))
    final = data_mse_loss(fac, x, y)
    if not math.isfinite(final):
        raise NonFiniteError("data_mse loss became non-finite")
    losses.append(final)
    return fac, losses


def retrain(fac: FactorizedOperator, target, cfg: EnhanceConfig) -> tuple[FactorizedOperator, LossTrace]:
    """Retrain gates and core against a target MPO or an ``(x, y)`` batch.

    ``matrix_fidelity`` needs ``target`` to be the MPO being approximated;
    ``data_mse`` takes the batch from ``cfg.batch`` (``target`` is ignored).
    """
    if cfg.objective == MATRIX_FIDELITY:
        if not isinstance(target, MPO):
            raise TypeError("matrix_fidelity retraining needs a target MPO")
        if target.site_spec != fac.site_spec:
            raise DimensionError("target site spec differs from the factorization's")
        out, losses = _retrain_matrix(fac, target, cfg)
    else:
        if cfg.batch is None:
            raise ValueError("data_mse retraining needs cfg.batch = (x, y)")
        out, losses = _retrain_data(fac, cfg)
    prov = dict(out.provenance)
    prov["retrain"] = cfg.to_dict()
    out = FactorizedOperator(out.u, out.core, out.v_dag, out.site_spec, prov)
    return out, LossTrace(losses)


@dataclass
class SweepCell:
    layers: int
    chi: int
    best_error: float
    # one entry per candidate, in the order tried
    errors: list[float]
    sources: list[str]
    # largest change of the operator caused by enhance() on a warm start
    enhance_drift: float

    def to_dict(self) -> dict:
        return asdict(self)


def capacity_sweep(
    target: MPO,
    layers_grid=(0, 1, 2),
    chi_grid=(1, 2, 4),
    *,
    starts: int = 5,
    retrain_steps: int = 200,
    seed: int = 0,
) -> tuple[list[SweepCell], dict]:
    """Best-of-``starts`` error over a (layers, chi) grid.

    Each cell first tries warm starts: the best factorization of the cell
    one step smaller in layers, and of the one smaller in chi, enhanced to
    the cell's shape and retrained. Seeded fresh runs fill the remaining
    slots (identity init for the first, Haar after). Retraining never
    returns a worse operator, so the best error is non-increasing along
    both axes. Returns the cells in grid order and the best operator per cell.
    """
    if starts < 1:
        raise ValueError("starts must be >= 1")
    layers_grid = sorted(layers_grid)
    chi_grid = sorted(chi_grid)
    best: dict[tuple[int, int], FactorizedOperator] = {}
    cells = []
    for li, layers in enumerate(layers_grid):
        for ci, chi in enumerate(chi_grid):
            cands, errors, sources, drift = [], [], [], 0.0
            warm = []
            if li > 0:
                warm.append(("layers", best[(layers_grid[li - 1], chi)],
                             EnhanceConfig(add_layers_u=layers - layers_grid[li - 1],
                                           add_layers_v=layers - layers_grid[li - 1])))
            if ci > 0:
                warm.append(("chi", best[(layers, chi_grid[ci - 1])], EnhanceConfig(new_chi=chi)))
            for name, prev, ecfg in warm:
                grown = enhance(prev, ecfg)
                drift = max(drift, float(np.linalg.norm(reconstruct(grown) - reconstruct(prev))
                                         / max(np.linalg.norm(reconstruct(prev)), 1e-300)))
                fac, _ = retrain(grown, target, EnhanceConfig(retrain_steps=retrain_steps, seed=seed))
                cands.append(fac)
                sources.append(f"warm:{name}")
            n_fresh = 1 if layers == 0 else max(starts - len(cands), 0)
            if layers == 0 and cands:
                n_fresh = 0
            for r in range(n_fresh):
                cfg = DisentangleConfig(layers_u=layers, layers_v=layers, chi_new=chi,
                                        max_sweeps=retrain_steps, seed=seed + r,
                                        init="identity" if r == 0 else "haar")
                fac, _ = _dis.disentangle(target, cfg)
                cands.append(fac)
                sources.append(f"seed:{seed + r}")
            for fac in cands:
                errors.append(_dis.relative_error(fac, target)[0])
            k = int(np.argmin(errors))
            best[(layers, chi)] = cands[k]
            cells.append(SweepCell(layers, chi, errors[k], errors, sources, drift))
    return cells, best
