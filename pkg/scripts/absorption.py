"""Extinction probability of the viral genome before it reaches the threshold,
SSA against the diffusion approximation, with Wilson 95% intervals."""

import argparse
import json

import numpy as np

from multiscale_crn.ensemble import MethodConfig, absorption_probability
from multiscale_crn.networks import load_builtin
from multiscale_crn.pipeline import MultiscaleModel


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--k", default="1,2", help="initial genome counts")
    ap.add_argument("--runs", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--threshold", type=float, default=1.0)
    args = ap.parse_args()
    net, spec, _ = load_builtin("viral")
    m = MultiscaleModel(net, spec)
    for k in map(int, args.k.split(",")):
        for meth, agg, limit in (("ssa", "S", 4.0 ** -k), ("diffusion", None, np.exp(-6 * k / 29))):
            cfg = MethodConfig(meth, net, spec, 1.0, aggregate=agg, model=m)
            rec = absorption_probability(cfg, k, args.runs, seed=args.seed, threshold=args.threshold).record()
            rec["large_N_limit"] = limit
            print(json.dumps(rec, sort_keys=True))


if __name__ == "__main__":
    main()
