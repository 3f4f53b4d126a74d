"""Command-line interface.

Exit codes: 0 success, 1 invalid flags or inputs, 2 non-finite numerics.
Reports are JSON (to ``--report`` or stdout); logs go to stderr one record per line.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import baseline_profiles
from .circuit import CircuitLayout, brickwork
from .disentangler import (
    DisentangleConfig,
    FactorizedOperator,
    bond_entropies,
    disentangle,
    fidelity,
    relative_error,
)
from .errors import NonFiniteError
from .layer import DATA_MSE, MATRIX_FIDELITY, EnhanceConfig, enhance, param_count, retrain
from .manifest import dump_json, load_factorized, save_factorized, sha256_bytes
from .mpo import MPO, SiteSpec, mpo_from_matrix, truncate_mpo
from .planted import PlantedSpec, plant_instance
from .qten import QtenError, atomic_write_bytes, decode_qten, encode_qten, read_qten
from .sampling import shot_noise_study
from .tensor import EXACT, TruncationPolicy, as_tensor

SCHEMA_VERSION = 1
log = logging.getLogger("qllm")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(s: str) -> int:
    v = int(s)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _positive_float(s: str) -> float:
    v = float(s)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {s}")
    return v


def _nonneg_float(s: str) -> float:
    v = float(s)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {s}")
    return v


def _int_list(s: str) -> list[int]:
    try:
        vals = [int(float(x)) for x in s.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}")
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("shot counts must be >= 1")
    return vals


# ---------------------------------------------------------------- helpers


def _read_matrix(path) -> tuple[np.ndarray, bytes]:
    data = Path(path).read_bytes()
    w = decode_qten(data)
    if w.ndim != 2:
        raise ValueError(f"{path}: expected a rank-2 tensor, got rank {w.ndim}")
    return as_tensor(w, check_finite=True), data


def _target_mpo(w: np.ndarray, site_dim: int) -> MPO:
    spec = SiteSpec.for_shape(w.shape[0], w.shape[1], site_dim)
    m, _ = mpo_from_matrix(w, spec, EXACT)
    return m


def _metrics(fac: FactorizedOperator, target: MPO) -> dict:
    err, is_bound = relative_error(fac, target)
    return {
        "final_rel_error": err,
        "error_is_bound": is_bound,
        "fidelity": fidelity(fac, target),
        "bond_dims": list(fac.core.bond_dims),
        "circuit_layers": {"u": fac.u.num_layers, "v_dag": fac.v_dag.num_layers},
        "param_count": param_count(fac).to_dict(),
        "entropy_before": bond_entropies(target),
        "entropy_after": bond_entropies(fac.core),
    }


def _report(command: str, args, body: dict) -> dict:
    rep = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "tool_version": __version__,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    rep.update(body)
    return rep


def _emit(rep: dict, args) -> None:
    text = dump_json(rep)
    if args.report:
        atomic_write_bytes(args.report, text.encode())
    else:
        sys.stdout.write(text)


def _empty_circuits_fac(core: MPO) -> FactorizedOperator:
    from .circuit import INPUT, OUTPUT, Circuit

    spec = core.site_spec
    k = spec.num_sites
    return FactorizedOperator(Circuit(k, spec.out_dims, [], OUTPUT), core,
                              Circuit(k, spec.in_dims, [], INPUT), spec)


# ---------------------------------------------------------------- commands


def cmd_plant(args) -> dict:
    spec = PlantedSpec(k=args.k, site_dim=args.site_dim,
                       layers_u=args.layers if args.layers_u is None else args.layers_u,
                       layers_v=args.layers if args.layers_v is None else args.layers_v,
                       chi_core=args.chi, noise_level=args.noise, seed=args.seed)
    w, truth = plant_instance(spec)
    data = encode_qten(w)
    atomic_write_bytes(args.out, data)
    body = {"planted": spec.to_dict(), "out": str(args.out), "source_hash": sha256_bytes(data),
            "shape": list(w.shape), "frobenius_norm": float(np.linalg.norm(w))}
    if args.truth:
        target = _target_mpo(w, args.site_dim)
        metrics = _metrics(truth, target)
        save_factorized(truth, args.truth, config=spec.to_dict(), metrics=metrics,
                        provenance={"source_hash": sha256_bytes(data), "seed": args.seed})
        body["truth"] = str(args.truth)
        body["truth_metrics"] = metrics
    log.info("planted %s -> %s", spec, args.out)
    return body


def cmd_factorize(args) -> dict:
    w, data = _read_matrix(args.input)
    target = _target_mpo(w, args.site_dim)
    core, bound = truncate_mpo(target, TruncationPolicy(args.chi, EXACT.rel_cutoff))
    fac = _empty_circuits_fac(core)
    metrics = _metrics(fac, target)
    config = {"chi": args.chi, "site_dim": args.site_dim}
    prov = {"source_hash": sha256_bytes(data)}
    if args.out:
        save_factorized(fac, args.out, config=config, metrics=metrics, provenance=prov)
    log.info("factorized %s at chi=%d: rel error %.3e", args.input, args.chi, metrics["final_rel_error"])
    return {"config": config, "input": str(args.input), "provenance": prov, "metrics": metrics,
            "truncation_bound": bound, "out": str(args.out) if args.out else None}


def _disentangle_config(args) -> DisentangleConfig:
    return DisentangleConfig(
        layers_u=args.layers if args.layers_u is None else args.layers_u,
        layers_v=args.layers if args.layers_v is None else args.layers_v,
        chi_new=args.chi_new, max_sweeps=args.max_sweeps, fid_tol=args.fid_tol, seed=args.seed,
        init=args.init, target_error=args.target_error, method=args.method,
    )


def cmd_disentangle(args) -> dict:
    w, data = _read_matrix(args.input)
    target = _target_mpo(w, args.site_dim)
    cfg = _disentangle_config(args)
    fac, rep = disentangle(target, cfg, restarts=args.restarts)
    metrics = _metrics(fac, target)
    config = {**cfg.to_dict(), "restarts": args.restarts, "site_dim": args.site_dim}
    prov = {"source_hash": sha256_bytes(data), "seed": args.seed}
    if args.out:
        save_factorized(fac, args.out, config=config, metrics=metrics, provenance=prov)
    log.info("disentangled %s: rel error %.3e after %d restarts", args.input,
             metrics["final_rel_error"], rep.restarts)
    conv = rep.to_dict()
    return {"config": config, "input": str(args.input), "provenance": prov, "metrics": metrics,
            "convergence": conv, "out": str(args.out) if args.out else None}


def _compare_metrics(stored: dict, fresh: dict, tol: float = 1e-9) -> dict:
    worst = 0.0
    mismatched = []

    def walk(a, b, key):
        nonlocal worst
        if isinstance(a, dict) and isinstance(b, dict):
            for kk in a.keys() & b.keys():
                walk(a[kk], b[kk], f"{key}.{kk}" if key else kk)
        elif isinstance(a, list) and isinstance(b, list):
            if len(a) != len(b):
                mismatched.append(key)
                return
            for i, (x, y) in enumerate(zip(a, b)):
                walk(x, y, f"{key}[{i}]")
        elif isinstance(a, (int, float)) and isinstance(b, (int, float)) and not isinstance(a, bool):
            d = abs(float(a) - float(b))
            worst = max(worst, d)
            if d > tol:
                mismatched.append(key)
        elif a != b:
            mismatched.append(key)

    walk(stored, fresh, "")
    return {"max_abs_diff": worst, "tolerance": tol, "mismatched": sorted(mismatched),
            "ok": not mismatched}


def cmd_evaluate(args) -> dict:
    fac, manifest = load_factorized(args.layer)
    w, data = _read_matrix(args.reference)
    spec = fac.site_spec
    if w.shape != (spec.rows, spec.cols):
        raise ValueError(f"--reference {args.reference} has shape {w.shape}, {args.layer} expects "
                         f"{spec.rows}x{spec.cols}")
    target, _ = mpo_from_matrix(w, spec, EXACT)
    metrics = _metrics(fac, target)
    integrity = _compare_metrics(manifest.get("metrics", {}), metrics)
    if not integrity["ok"]:
        log.warning("stored metrics differ from recomputed ones: %s", integrity["mismatched"])
    return {"layer": str(args.layer), "reference": str(args.reference),
            "reference_hash": sha256_bytes(data), "metrics": metrics, "integrity": integrity}


def cmd_baseline(args) -> dict:
    w, data = _read_matrix(args.input)
    spec = SiteSpec.for_shape(w.shape[0], w.shape[1], args.site_dim)
    profiles = baseline_profiles(w, spec, args.target_error, max_layers=args.max_layers,
                                 max_polar_depth=args.max_polar_depth, restarts=args.restarts,
                                 max_sweeps=args.max_sweeps, seed=args.seed)
    return {"input": str(args.input), "source_hash": sha256_bytes(data),
            "config": {k: getattr(args, k) for k in ("target_error", "max_layers", "max_polar_depth",
                                                     "restarts", "max_sweeps", "seed", "site_dim")},
            "profiles": [p.to_dict() for p in profiles]}


def cmd_enhance(args) -> dict:
    fac, manifest = load_factorized(args.layer)
    cfg = EnhanceConfig(add_layers_u=args.add_layers_u, add_layers_v=args.add_layers_v,
                        new_chi=args.new_chi, noise=args.noise, seed=args.seed, retrain_steps=0)
    out = enhance(fac, cfg)
    metrics = {"bond_dims": list(out.core.bond_dims),
               "circuit_layers": {"u": out.u.num_layers, "v_dag": out.v_dag.num_layers},
               "param_count": param_count(out).to_dict()}
    save_factorized(out, args.out, config={**manifest.get("config", {}), "enhance": cfg.to_dict()},
                    metrics=metrics, provenance=manifest.get("provenance", {}))
    return {"layer": str(args.layer), "out": str(args.out), "config": cfg.to_dict(), "metrics": metrics}


def cmd_retrain(args) -> dict:
    fac, manifest = load_factorized(args.layer)
    batch = None
    if args.objective == DATA_MSE:
        if not (args.batch_x and args.batch_y):
            raise ValueError("--objective data_mse needs --batch-x and --batch-y")
        batch = (read_qten(args.batch_x), read_qten(args.batch_y))
        for name, arr in (("--batch-x", batch[0]), ("--batch-y", batch[1])):
            if not np.all(np.isfinite(arr)):
                raise NonFiniteError(f"{name} contains non-finite values")
    elif not args.reference:
        raise ValueError("--objective matrix_fidelity needs --reference")
    cfg = EnhanceConfig(retrain_steps=args.steps, step_size=args.step_size, objective=args.objective,
                        batch=batch, seed=args.seed)
    target = None
    if args.reference:
        w, _ = _read_matrix(args.reference)
        target, _ = mpo_from_matrix(w, fac.site_spec, EXACT)
    out, trace = retrain(fac, target, cfg)
    metrics = _metrics(out, target) if target is not None else {
        "bond_dims": list(out.core.bond_dims), "param_count": param_count(out).to_dict()}
    save_factorized(out, args.out, config={**manifest.get("config", {}), "retrain": cfg.to_dict()},
                    metrics=metrics, provenance=manifest.get("provenance", {}))
    return {"layer": str(args.layer), "out": str(args.out), "config": cfg.to_dict(),
            "metrics": metrics, "loss_trace": trace.to_dict()}


def cmd_sample_study(args) -> dict:
    if args.layer:
        fac, _ = load_factorized(args.layer)
        circuit = fac.u if args.circuit == "u" else fac.v_dag
    else:
        circuit = brickwork(CircuitLayout(args.k, args.layers), "haar", args.seed)
    dim = int(np.prod(circuit.site_dims))
    if args.input:
        x = read_qten(args.input).ravel()
    else:
        rng = np.random.default_rng(args.seed)
        x = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    study = shot_noise_study(circuit, x, args.shots, args.seed)
    return {"config": {"shots": args.shots, "seed": args.seed, "layers": circuit.num_layers,
                       "site_dims": list(circuit.site_dims)},
            "study": study.to_dict()}


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qllm", description="Disentangler factorization of weight matrices.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--report", type=Path, help="write the JSON report here instead of stdout")

    sp = sub.add_parser("plant", help="generate a planted instance")
    sp.add_argument("--k", type=_positive_int, required=True)
    sp.add_argument("--site-dim", type=_positive_int, default=2)
    sp.add_argument("--layers", type=_nonneg_int, default=1)
    sp.add_argument("--layers-u", type=_nonneg_int)
    sp.add_argument("--layers-v", type=_nonneg_int)
    sp.add_argument("--chi", type=_positive_int, default=2)
    sp.add_argument("--noise", type=_nonneg_float, default=0.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--truth", type=Path)
    common(sp)
    sp.set_defaults(func=cmd_plant)

    sp = sub.add_parser("factorize", help="plain MPO factorization truncated to --chi")
    sp.add_argument("--input", type=Path, required=True)
    sp.add_argument("--chi", type=_positive_int, required=True)
    sp.add_argument("--site-dim", type=_positive_int, default=2)
    sp.add_argument("--out", type=Path)
    common(sp)
    sp.set_defaults(func=cmd_factorize)

    sp = sub.add_parser("disentangle", help="fit U M V^H with brickwork circuits")
    sp.add_argument("--input", type=Path, required=True)
    sp.add_argument("--layers", type=_nonneg_int, default=1)
    sp.add_argument("--layers-u", type=_nonneg_int)
    sp.add_argument("--layers-v", type=_nonneg_int)
    sp.add_argument("--chi-new", type=_positive_int, required=True)
    sp.add_argument("--max-sweeps", type=_positive_int, default=200)
    sp.add_argument("--fid-tol", type=_positive_float, default=1e-9)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--init", choices=["identity", "haar"], default="identity")
    sp.add_argument("--restarts", type=_positive_int, default=1)
    sp.add_argument("--target-error", type=_positive_float)
    sp.add_argument("--method", choices=["lbfgs", "procrustes"], default="lbfgs")
    sp.add_argument("--site-dim", type=_positive_int, default=2)
    sp.add_argument("--out", type=Path)
    common(sp)
    sp.set_defaults(func=cmd_disentangle)

    sp = sub.add_parser("evaluate", help="recompute metrics of a stored layer against a reference")
    sp.add_argument("--layer", type=Path, required=True)
    sp.add_argument("--reference", type=Path, required=True)
    common(sp)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("baseline", help="plain MPO / polar / disentangler profiles at a target error")
    sp.add_argument("--input", type=Path, required=True)
    sp.add_argument("--target-error", type=_positive_float, default=1e-3)
    sp.add_argument("--max-layers", type=_nonneg_int, default=2)
    sp.add_argument("--max-polar-depth", type=_nonneg_int, default=8)
    sp.add_argument("--restarts", type=_positive_int, default=3)
    sp.add_argument("--max-sweeps", type=_positive_int, default=200)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--site-dim", type=_positive_int, default=2)
    common(sp)
    sp.set_defaults(func=cmd_baseline)

    sp = sub.add_parser("enhance", help="append identity layers and zero-pad bonds")
    sp.add_argument("--layer", type=Path, required=True)
    sp.add_argument("--add-layers-u", type=_nonneg_int, default=0)
    sp.add_argument("--add-layers-v", type=_nonneg_int, default=0)
    sp.add_argument("--new-chi", type=_positive_int)
    sp.add_argument("--noise", type=_nonneg_float, default=0.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", type=Path, required=True)
    common(sp)
    sp.set_defaults(func=cmd_enhance)

    sp = sub.add_parser("retrain", help="retrain a stored layer")
    sp.add_argument("--layer", type=Path, required=True)
    sp.add_argument("--objective", choices=[MATRIX_FIDELITY, DATA_MSE], default=MATRIX_FIDELITY)
    sp.add_argument("--reference", type=Path)
    sp.add_argument("--batch-x", type=Path)
    sp.add_argument("--batch-y", type=Path)
    sp.add_argument("--steps", type=_nonneg_int, default=100)
    sp.add_argument("--step-size", type=_positive_float, default=0.05)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", type=Path, required=True)
    common(sp)
    sp.set_defaults(func=cmd_retrain)

    sp = sub.add_parser("sample-study", help="shot-noise study of a circuit on an encoded input")
    src = sp.add_mutually_exclusive_group()
    src.add_argument("--layer", type=Path)
    src.add_argument("--k", type=_positive_int, default=4)
    sp.add_argument("--circuit", choices=["u", "v_dag"], default="u")
    sp.add_argument("--layers", type=_nonneg_int, default=2)
    sp.add_argument("--input", type=Path)
    sp.add_argument("--shots", type=_int_list, default=[100, 1000, 10000, 100000])
    sp.add_argument("--seed", type=int, default=0)
    common(sp)
    sp.set_defaults(func=cmd_sample_study)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # --help / --version exit 0; flag errors exit 1 via _Parser.error
        return int(exc.code or 0)
    logging.basicConfig(stream=sys.stderr, level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s %(message)s", force=True)
    try:
        body = args.func(args)
        _emit(_report(args.command, args, body), args)
    except NonFiniteError as exc:
        log.error("numerical failure: %s", exc)
        return 2
    except np.linalg.LinAlgError as exc:
        log.error("numerical failure: %s", exc)
        return 2
    except (ValueError, TypeError, KeyError, QtenError, OSError) as exc:
        log.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
