"""Brickwork circuits of two-site unitaries and their action on operators.

A circuit is a data-flow sequence of layers: layer 0 acts first. As a matrix
it is ``C = L[n-1] ... L[1] L[0]``. Output-side circuits (the ``U`` of a
factorization) left-multiply an operator, ``C @ W``; input-side circuits
(``V^H``) right-multiply it, ``W @ C``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import DimensionError
from .mpo import MPO, canonicalize
from .tensor import (
    EXACT,
    TruncationPolicy,
    as_tensor,
    check_guard,
    haar_unitary,
    svd_truncate,
    unitarity_residual,
)

__all__ = [
    "Gate",
    "Circuit",
    "CircuitLayout",
    "brickwork",
    "apply_circuit_dense",
    "apply_gate_mpo",
    "apply_circuit_mpo",
    "multiplication_steps",
    "apply_matrix_mpo",
    "apply_pair_to_tensor",
]

OUTPUT = "output"
INPUT = "input"
UNITARY_TOL = 1e-10


@dataclass(frozen=True)
class Gate:
    site: int
    dims: tuple[int, int]
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        mat = as_tensor(self.matrix)
        dim = self.dims[0] * self.dims[1]
        if mat.shape != (dim, dim):
            raise DimensionError(f"gate matrix {mat.shape} does not match dims {self.dims}")
        res = unitarity_residual(mat)
        if res > UNITARY_TOL:
            raise ValueError(f"gate at site {self.site} is not unitary (residual {res:.2e})")
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "dims", (int(self.dims[0]), int(self.dims[1])))

    def with_matrix(self, matrix) -> "Gate":
        return Gate(self.site, self.dims, matrix)


@dataclass(frozen=True)
class CircuitLayout:
    num_sites: int
    num_layers: int
    parity_start: str = "even"

    def __post_init__(self):
        if self.parity_start not in ("even", "odd"):
            raise ValueError(f"parity_start must be 'even' or 'odd', got {self.parity_start!r}")

    def pair_sites(self, layer: int) -> list[int]:
        first = (int(self.parity_start == "odd") + layer) % 2
        return list(range(first, self.num_sites - 1, 2))


@dataclass
class Circuit:
    num_sites: int
    site_dims: tuple[int, ...]
    layers: list[list[Gate]]
    side: str = OUTPUT
    parity_start: str = "even"

    def __post_init__(self):
        self.site_dims = tuple(int(d) for d in self.site_dims)
        if self.side not in (OUTPUT, INPUT):
            raise ValueError(f"side must be 'output' or 'input', got {self.side!r}")
        if len(self.site_dims) != self.num_sites:
            raise DimensionError("site_dims length must equal num_sites")
        self.layers = [sorted(layer, key=lambda g: g.site) for layer in self.layers]
        for li, layer in enumerate(self.layers):
            used: set[int] = set()
            for g in layer:
                if not (0 <= g.site < self.num_sites - 1):
                    raise DimensionError(f"gate site {g.site} out of range in layer {li}")
                if {g.site, g.site + 1} & used:
                    raise ValueError(f"gates overlap in layer {li}")
                used |= {g.site, g.site + 1}
                if g.dims != (self.site_dims[g.site], self.site_dims[g.site + 1]):
                    raise DimensionError(f"gate dims {g.dims} do not match sites {g.site},{g.site + 1}")

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def num_gates(self) -> int:
        return sum(len(layer) for layer in self.layers)

    def gates(self) -> Iterator[tuple[int, Gate]]:
        for li, layer in enumerate(self.layers):
            for g in layer:
                yield li, g

    def gate_at(self, layer: int, site: int) -> Gate:
        for g in self.layers[layer]:
            if g.site == site:
                return g
        raise IndexError(f"no gate at layer {layer}, site {site}")

    def replace_gate(self, layer: int, site: int, matrix) -> "Circuit":
        layers = [list(lay) for lay in self.layers]
        for j, g in enumerate(layers[layer]):
            if g.site == site:
                layers[layer][j] = g.with_matrix(matrix)
                return Circuit(self.num_sites, self.site_dims, layers, self.side, self.parity_start)
        raise IndexError(f"no gate at layer {layer}, site {site}")

    def extended(self, extra_layers: int) -> "Circuit":
        """Append identity layers continuing the brickwork parity."""
        layout = CircuitLayout(self.num_sites, self.num_layers + extra_layers, self.parity_start)
        layers = [list(lay) for lay in self.layers]
        for li in range(self.num_layers, layout.num_layers):
            layers.append(
                [
                    Gate(s, (self.site_dims[s], self.site_dims[s + 1]),
                         np.eye(self.site_dims[s] * self.site_dims[s + 1], dtype=complex))
                    for s in layout.pair_sites(li)
                ]
            )
        return Circuit(self.num_sites, self.site_dims, layers, self.side, self.parity_start)

    def copy(self) -> "Circuit":
        return Circuit(self.num_sites, self.site_dims, [list(l) for l in self.layers], self.side,
                       self.parity_start)


def brickwork(
    layout: CircuitLayout,
    init: str = "identity",
    seed: int | None = None,
    site_dims=None,
    side: str = OUTPUT,
) -> Circuit:
    """Nearest-neighbour brickwork with identity or Haar-random gates."""
    if layout.num_sites < 2:
        raise ValueError("a brickwork circuit needs at least 2 sites")
    if layout.num_layers < 0:
        raise ValueError("num_layers must be >= 0")
    dims = tuple(site_dims) if site_dims is not None else (2,) * layout.num_sites
    if init not in ("identity", "haar"):
        raise ValueError(f"init must be 'identity' or 'haar', got {init!r}")
    rng = np.random.default_rng(seed) if init == "haar" else None
    layers = []
    for li in range(layout.num_layers):
        layer = []
        for s in layout.pair_sites(li):
            d = dims[s] * dims[s + 1]
            mat = haar_unitary(d, rng) if rng is not None else np.eye(d, dtype=complex)
            layer.append(Gate(s, (dims[s], dims[s + 1]), mat))
        layers.append(layer)
    return Circuit(layout.num_sites, dims, layers, side, layout.parity_start)


def multiplication_steps(c: Circuit, adjoint: bool = False) -> list[tuple[int, np.ndarray]]:
    """``(site, matrix)`` pairs in the order they multiply onto an operator.

    Output side: ``C W`` applies layer 0 first; ``C^H W`` applies the last
    layer first with conjugated gates. Input side: ``W C`` multiplies the last
    layer first; ``W C^H`` multiplies layer 0 first.
    """
    forward = (c.side == OUTPUT) != adjoint
    order = range(c.num_layers) if forward else range(c.num_layers - 1, -1, -1)
    steps = []
    for li in order:
        for g in c.layers[li]:
            steps.append((g.site, g.matrix.conj().T if adjoint else g.matrix))
    return steps


def apply_pair_to_tensor(t: np.ndarray, axis: int, mat: np.ndarray) -> np.ndarray:
    """Left-multiply a two-site matrix onto legs ``axis, axis+1`` of ``t``."""
    d1, d2 = t.shape[axis], t.shape[axis + 1]
    g4 = mat.reshape(d1, d2, d1, d2)
    out = np.tensordot(g4, t, axes=([2, 3], [axis, axis + 1]))
    return np.moveaxis(out, [0, 1], [axis, axis + 1])


def apply_circuit_dense(c: Circuit, w, adjoint: bool = False) -> np.ndarray:
    """Exact dense ``C W`` / ``C^H W`` (output side) or ``W C`` / ``W C^H`` (input side)."""
    w = as_tensor(w)
    if w.ndim != 2:
        raise DimensionError("apply_circuit_dense expects a matrix")
    check_guard(w.size)
    if c.side == OUTPUT:
        if math.prod(c.site_dims) != w.shape[0]:
            raise DimensionError(f"circuit dims {c.site_dims} do not match {w.shape[0]} rows")
        t = w.reshape(c.site_dims + (w.shape[1],))
        for site, mat in multiplication_steps(c, adjoint):
            t = apply_pair_to_tensor(t, site, mat)
        return t.reshape(w.shape)
    if math.prod(c.site_dims) != w.shape[1]:
        raise DimensionError(f"circuit dims {c.site_dims} do not match {w.shape[1]} columns")
    # (W G)[:, n'] = sum_n W[:, n] G[n, n'] is G^T acting on the column legs
    t = w.reshape((w.shape[0],) + c.site_dims)
    for site, mat in multiplication_steps(c, adjoint):
        t = apply_pair_to_tensor(t, site + 1, mat.T)
    return t.reshape(w.shape)


def apply_matrix_mpo(
    m: MPO, site: int, mat: np.ndarray, side: str, policy: TruncationPolicy = EXACT,
    canonical: bool = True,
) -> tuple[MPO, float]:
    """Multiply an arbitrary two-site matrix into an MPO and re-split.

    Output side computes ``G M``, input side ``M G``. The MPO is first moved
    to mixed-canonical form at ``site`` so the split is locally optimal; the
    returned MPO has its center at ``site + 1``. ``canonical=False`` skips
    the gauge move, which is only safe without truncation: the split is
    still exact but the error is no longer relative to the whole operator.
    """
    k = m.num_sites
    if not (0 <= site < k - 1):
        raise IndexError(f"gate site {site} out of range for {k} sites")
    spec = m.site_spec
    dims = spec.out_dims if side == OUTPUT else spec.in_dims
    d = dims[site] * dims[site + 1]
    if mat.shape != (d, d):
        raise DimensionError(f"gate of shape {mat.shape} does not fit sites with dims {dims[site:site + 2]}")
    if canonical:
        m = canonicalize(m, site)
    a, b = m.cores[site], m.cores[site + 1]
    theta = np.tensordot(a, b, axes=(3, 0))  # (l, o1, n1, o2, n2, r)
    if side == OUTPUT:
        theta = apply_pair_to_tensor(theta.transpose(0, 1, 3, 2, 4, 5), 1, mat).transpose(0, 1, 3, 2, 4, 5)
    else:
        theta = apply_pair_to_tensor(theta.transpose(0, 2, 4, 1, 3, 5), 1, mat.T).transpose(0, 3, 1, 4, 2, 5)
    l, o1, n1, o2, n2, r = theta.shape
    res = svd_truncate(theta.reshape(l * o1 * n1, o2 * n2 * r), policy)
    cores = list(m.cores)
    cores[site] = res.left.reshape(l, o1, n1, res.rank)
    cores[site + 1] = (res.singular_values[:, None] * res.right).reshape(res.rank, o2, n2, r)
    return MPO(cores, spec, canonical_center=site + 1 if canonical else None), res.trunc_error


def apply_gate_mpo(m: MPO, g: Gate, side: str, policy: TruncationPolicy = EXACT) -> tuple[MPO, float]:
    """TEBD step: contract one gate into the MPO and truncate the re-split pair."""
    if side not in (OUTPUT, INPUT):
        raise ValueError(f"side must be 'output' or 'input', got {side!r}")
    return apply_matrix_mpo(m, g.site, g.matrix, side, policy)


def _check_circuit_fits(m: MPO, c: Circuit) -> None:
    dims = m.site_spec.out_dims if c.side == OUTPUT else m.site_spec.in_dims
    if c.num_sites != m.num_sites or tuple(dims) != c.site_dims:
        raise DimensionError(f"{c.side}-side circuit dims {c.site_dims} do not match MPO dims {dims}")


def apply_circuit_mpo(
    m: MPO, c: Circuit, adjoint: bool = False, policy: TruncationPolicy = EXACT
) -> tuple[MPO, float]:
    """Apply every gate by TEBD, truncating after each gate.

    The returned bound is the sum of the per-step relative errors. Each step
    error is relative to the operator at that step, whose norm never exceeds
    the original, so the sum bounds the overall relative Frobenius error by
    the triangle inequality.
    """
    _check_circuit_fits(m, c)
    bound = 0.0
    for site, mat in multiplication_steps(c, adjoint):
        m, err = apply_matrix_mpo(m, site, mat, c.side, policy)
        bound += err
    return m, bound
