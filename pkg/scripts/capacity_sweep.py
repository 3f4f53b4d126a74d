"""Best-of-N error over a (circuit layers, bond dimension) grid on a planted target."""
import argparse
import json

from qllm.layer import capacity_sweep
from qllm.mpo import mpo_from_matrix
from qllm.planted import PlantedSpec, plant_instance


def _ints(s):
    return tuple(int(x) for x in s.split(","))


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--planted-layers", type=int, default=2)
    p.add_argument("--planted-chi", type=int, default=4)
    p.add_argument("--layers", type=_ints, default=(0, 1, 2))
    p.add_argument("--chis", type=_ints, default=(1, 2, 4))
    p.add_argument("--starts", type=int, default=5)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    args = p.parse_args()

    spec = PlantedSpec(k=args.k, layers_u=args.planted_layers, layers_v=args.planted_layers,
                       chi_core=args.planted_chi, seed=args.seed)
    w, _ = plant_instance(spec)
    target, _ = mpo_from_matrix(w, spec.site_spec)
    cells, _ = capacity_sweep(target, args.layers, args.chis, starts=args.starts,
                              retrain_steps=args.steps, seed=args.seed)
    header = "layers " + "".join(f"{'chi=' + str(c):>12}" for c in args.chis)
    print(header)
    for layers in args.layers:
        row = [c.best_error for c in cells if c.layers == layers]
        print(f"{layers:>6} " + "".join(f"{e:12.3e}" for e in row))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"config": vars(args), "cells": [c.to_dict() for c in cells]}, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
