"""Planted instances: operators built from known circuits and a known low-bond core."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .circuit import INPUT, OUTPUT, CircuitLayout, brickwork
from .disentangler import FactorizedOperator
from .layer import reconstruct
from .mpo import SiteSpec, random_mpo
from .tensor import check_guard

__all__ = ["PlantedSpec", "plant_instance"]


@dataclass(frozen=True)
class PlantedSpec:
    k: int = 4
    site_dim: int = 2
    layers_u: int = 1
    layers_v: int = 1
    chi_core: int = 2
    noise_level: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.site_dim < 1 or self.chi_core < 1:
            raise ValueError("k, site_dim and chi_core must be >= 1")
        if self.layers_u < 0 or self.layers_v < 0:
            raise ValueError("layer counts must be >= 0")
        if (self.layers_u or self.layers_v) and self.k < 2:
            raise ValueError("circuits need k >= 2")
        if self.noise_level < 0:
            raise ValueError("noise_level must be >= 0")

    @property
    def site_spec(self) -> SiteSpec:
        return SiteSpec((self.site_dim,) * self.k, (self.site_dim,) * self.k)

    def to_dict(self) -> dict:
        return asdict(self)


def plant_instance(spec: PlantedSpec) -> tuple[np.ndarray, FactorizedOperator]:
    """``W = U0 M0 V0^H`` plus optional noise, and the true factors.

    The noise is a Gaussian matrix projected orthogonal to ``U0 M0 V0^H`` and
    scaled to relative norm ``noise_level``, so the relative distance of ``W``
    to the truth is ``noise_level / sqrt(1 + noise_level^2)``.
    """
    sites = spec.site_spec
    check_guard(sites.rows * sites.cols)
    rng = np.random.default_rng(spec.seed)
    core = random_mpo(sites, spec.chi_core, rng)
    dims = sites.out_dims
    if spec.k > 1:
        u = brickwork(CircuitLayout(spec.k, spec.layers_u), "haar", int(rng.integers(1 << 31)), dims, OUTPUT)
        v = brickwork(CircuitLayout(spec.k, spec.layers_v), "haar", int(rng.integers(1 << 31)), dims, INPUT)
    else:
        from .circuit import Circuit

        u, v = Circuit(1, dims, [], OUTPUT), Circuit(1, dims, [], INPUT)
    truth = FactorizedOperator(u, core, v, sites, provenance={"planted": spec.to_dict()})
    w0 = reconstruct(truth)
    if spec.noise_level == 0:
        return w0, truth
    z = rng.standard_normal(w0.shape) + 1j * rng.standard_normal(w0.shape)
    z -= (np.vdot(w0, z) / np.vdot(w0, w0)) * w0
    z *= spec.noise_level * np.linalg.norm(w0) / np.linalg.norm(z)
    return w0 + z, truth
