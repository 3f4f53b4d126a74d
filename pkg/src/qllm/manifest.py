"""Layer manifests: a factorized operator as JSON plus one QTEN file per tensor."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__
from .circuit import INPUT, OUTPUT, Circuit, Gate
from .disentangler import FactorizedOperator
from .mpo import MPO, SiteSpec
from .qten import atomic_write_bytes, encode_qten, read_qten

__all__ = ["MANIFEST_VERSION", "save_factorized", "load_factorized", "sha256_bytes", "dump_json"]

MANIFEST_VERSION = 1


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _circuit_entries(c: Circuit, which: str, stem: str):
    for li, g in c.gates():
        yield {"role": "gate", "side": which, "layer": li, "site": g.site,
               "file": f"{stem}.{which}.L{li}.S{g.site}.qten"}, g.matrix


def save_factorized(fac: FactorizedOperator, path, *, config=None, metrics=None, provenance=None) -> dict:
    """Write ``path`` (JSON) and its tensor files next to it; returns the manifest."""
    path = Path(path)
    stem = path.name[:-5] if path.name.endswith(".json") else path.name
    files = []
    payloads = []
    for i, core in enumerate(fac.core.cores):
        files.append({"role": f"core_{i}", "file": f"{stem}.core_{i}.qten"})
        payloads.append(core)
    for entry, mat in list(_circuit_entries(fac.u, "u", stem)) + list(_circuit_entries(fac.v_dag, "v_dag", stem)):
        files.append(entry)
        payloads.append(mat)
    for entry, tensor in zip(files, payloads):
        data = encode_qten(tensor)
        entry["sha256"] = sha256_bytes(data)
        atomic_write_bytes(path.parent / entry["file"], data)
    manifest = {
        "version": MANIFEST_VERSION,
        "site_spec": {"out_dims": list(fac.site_spec.out_dims), "in_dims": list(fac.site_spec.in_dims)},
        "circuits": {
            "u": {"num_layers": fac.u.num_layers, "parity_start": fac.u.parity_start},
            "v_dag": {"num_layers": fac.v_dag.num_layers, "parity_start": fac.v_dag.parity_start},
        },
        "tensors": files,
        "config": config or {},
        "provenance": {"tool_version": __version__, **(provenance or {})},
        "metrics": metrics or {},
    }
    atomic_write_bytes(path, dump_json(manifest).encode())
    return manifest


def load_factorized(path) -> tuple[FactorizedOperator, dict]:
    """Read a manifest and rebuild the operator; every tensor file must exist and match its hash."""
    path = Path(path)
    manifest = json.loads(path.read_text())
    if manifest.get("version") != MANIFEST_VERSION:
        raise ValueError(f"{path}: unsupported manifest version {manifest.get('version')!r}")
    ss = manifest["site_spec"]
    spec = SiteSpec(tuple(ss["out_dims"]), tuple(ss["in_dims"]))
    cores = {}
    gates = {"u": {}, "v_dag": {}}
    for entry in manifest["tensors"]:
        fpath = path.parent / entry["file"]
        if not fpath.exists():
            raise FileNotFoundError(f"{path}: referenced tensor file {entry['file']} is missing")
        data = fpath.read_bytes()
        if "sha256" in entry and sha256_bytes(data) != entry["sha256"]:
            raise ValueError(f"{path}: tensor file {entry['file']} does not match its recorded hash")
        tensor = read_qten(fpath)
        if entry["role"] == "gate":
            gates[entry["side"]][(entry["layer"], entry["site"])] = tensor
        else:
            cores[int(entry["role"].split("_")[1])] = tensor
    k = spec.num_sites
    if sorted(cores) != list(range(k)):
        raise ValueError(f"{path}: expected core_0..core_{k - 1}")
    core = MPO([cores[i].astype(complex) for i in range(k)], spec)
    circuits = {}
    for which, dims, side in (("u", spec.out_dims, OUTPUT), ("v_dag", spec.in_dims, INPUT)):
        meta = manifest["circuits"][which]
        layers = [[] for _ in range(meta["num_layers"])]
        for (li, site), mat in sorted(gates[which].items()):
            layers[li].append(Gate(site, (dims[site], dims[site + 1]), mat))
        circuits[which] = Circuit(k, dims, layers, side, meta["parity_start"])
    fac = FactorizedOperator(circuits["u"], core, circuits["v_dag"], spec,
                             provenance=dict(manifest.get("provenance", {})))
    return fac, manifest
