"""Median shot-noise error of a random brickwork circuit versus the number of shots."""
import argparse
import json

import numpy as np

from qllm.circuit import CircuitLayout, brickwork
from qllm.sampling import shot_noise_study


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--shots", default="100,1000,10000,100000")
    p.add_argument("--circuit-seed", type=int, default=11)
    p.add_argument("--out", default=None)
    args = p.parse_args()

    shots = [int(s) for s in args.shots.split(",")]
    c = brickwork(CircuitLayout(args.k, args.layers), "haar", args.circuit_seed)
    rng = np.random.default_rng(args.circuit_seed)
    x = rng.standard_normal(2**args.k) + 1j * rng.standard_normal(2**args.k)
    errs = np.array([shot_noise_study(c, x, shots, s).l2_errors for s in range(args.seeds)])
    med = np.median(errs, axis=0)
    slope = float(np.polyfit(np.log(shots), np.log(med), 1)[0])
    for n, e in zip(shots, med):
        print(f"{n:>8d} shots: median l2 error {e:.4e}")
    print(f"log-log slope {slope:.3f}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"config": vars(args), "median_l2": med.tolist(), "slope": slope}, fh, indent=2)


if __name__ == "__main__":
    main()
