"""Parameter counts of plain MPO, polar and disentangler factorizations at a fixed error."""
import argparse
import json

from qllm.baselines import baseline_profiles
from qllm.planted import PlantedSpec, plant_instance


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--chi", type=int, default=2)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--target-error", type=float, default=1e-3)
    p.add_argument("--max-polar-depth", type=int, default=4)
    p.add_argument("--restarts", type=int, default=2)
    p.add_argument("--max-sweeps", type=int, default=150)
    p.add_argument("--out", default=None)
    args = p.parse_args()

    rows = []
    for seed in range(args.seeds):
        spec = PlantedSpec(k=args.k, layers_u=args.layers, layers_v=args.layers, chi_core=args.chi, seed=seed)
        w, _ = plant_instance(spec)
        profiles = baseline_profiles(w, spec.site_spec, args.target_error, max_polar_depth=args.max_polar_depth,
                                     restarts=args.restarts, max_sweeps=args.max_sweeps, seed=seed)
        rows.append({"seed": seed, "profiles": [pr.to_dict() for pr in profiles]})
        print(f"seed {seed}: " + "  ".join(f"{pr.method}={pr.param_count}{'' if pr.reached else '*'}"
                                           for pr in profiles), flush=True)
    print("(* = target not reached within the search limits; count is a lower bound)")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"config": vars(args), "instances": rows}, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
