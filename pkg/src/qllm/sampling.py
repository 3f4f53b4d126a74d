"""Statevector execution of a circuit on an amplitude-encoded input, with shot sampling."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .circuit import Circuit, apply_pair_to_tensor
from .errors import DimensionError
from .tensor import as_tensor, check_guard

__all__ = ["StateVector", "ShotStudy", "encode_state", "apply_circuit_state", "sample_counts",
           "shot_noise_study", "STATE_GUARD"]

STATE_GUARD = 2**20
NORM_TOL = 1e-10


@dataclass(frozen=True)
class StateVector:
    num_sites: int
    site_dims: tuple[int, ...]
    amplitudes: np.ndarray
    input_norm: float = 1.0

    def __post_init__(self):
        amps = as_tensor(self.amplitudes).ravel()
        dims = tuple(int(d) for d in self.site_dims)
        if len(dims) != self.num_sites or math.prod(dims) != amps.size:
            raise DimensionError(f"{amps.size} amplitudes do not fit site dims {dims}")
        norm = float(np.linalg.norm(amps))
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"state is not normalized (norm {norm:.12f})")
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "site_dims", dims)

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def decode(self) -> np.ndarray:
        return self.amplitudes * self.input_norm


@dataclass
class ShotStudy:
    shots_list: list[int]
    l2_errors: list[float]
    seed: int

    def to_dict(self) -> dict:
        return asdict(self)


def encode_state(x, site_dims=None) -> StateVector:
    """Amplitude encoding: ``x / ||x||`` with the norm kept as metadata."""
    x = as_tensor(x, check_finite=True).ravel()
    if site_dims is None:
        k = int(round(math.log2(x.size))) if x.size > 1 else 1
        if 2**k != x.size:
            raise DimensionError(f"length {x.size} is not a power of two; pass site_dims")
        site_dims = (2,) * k
    norm = float(np.linalg.norm(x))
    if norm == 0.0:
        raise ValueError("cannot encode the zero vector")
    return StateVector(len(site_dims), tuple(site_dims), x / norm, norm)


def apply_circuit_state(c: Circuit, s: StateVector) -> StateVector:
    """Exact gate-by-gate evolution; layer 0 acts first."""
    if tuple(c.site_dims) != s.site_dims:
        raise DimensionError(f"circuit dims {c.site_dims} do not match state dims {s.site_dims}")
    check_guard(s.amplitudes.size, STATE_GUARD)
    t = s.amplitudes.reshape(s.site_dims)
    for layer in c.layers:
        for g in layer:
            t = apply_pair_to_tensor(t, g.site, g.matrix)
    amps = t.ravel()
    # renormalize away roundoff so long circuits keep the invariant
    return StateVector(s.num_sites, s.site_dims, amps / np.linalg.norm(amps), s.input_norm)


def sample_counts(s: StateVector, shots: int, seed: int) -> np.ndarray:
    """Counts per basis index from a seeded multinomial draw."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    p = s.probabilities()
    p = p / p.sum()
    return np.random.default_rng(seed).multinomial(shots, p)


def shot_noise_study(c: Circuit, x, shots_list, seed: int) -> ShotStudy:
    """L2 distance between empirical and exact output probabilities per shot budget.

    Shot setting ``i`` draws from the generator seeded with
    ``SeedSequence(seed).spawn`` child ``i``, so settings are independent.
    """
    shots_list = [int(n) for n in shots_list]
    out = apply_circuit_state(c, encode_state(x, c.site_dims))
    p = out.probabilities()
    children = np.random.SeedSequence(seed).spawn(len(shots_list))
    errors = []
    for n, child in zip(shots_list, children):
        if n < 1:
            raise ValueError("shots must be >= 1")
        counts = np.random.default_rng(child).multinomial(n, p / p.sum())
        errors.append(float(np.linalg.norm(counts / n - p)))
    return ShotStudy(shots_list, errors, seed)
