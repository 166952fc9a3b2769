"""Gradient check over random shapes and gate depths; prints the worst relative error per setting."""

import argparse

import numpy as np

from netprofile import nn


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--instances", type=int, default=20)
    ap.add_argument("--depths", type=int, nargs="+", default=[1, 2, 3])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    for depth in args.depths:
        worst = 0.0
        for _ in range(args.instances):
            H, D, T = (int(v) for v in rng.integers(1, [9, 9, 11]))
            model = nn.SequenceClassifier(nn.LstmParams.init(H, D, rng, depth), nn.DenseParams.init(3, H, rng))
            err = nn.grad_check(model, rng.normal(size=(T, D)), int(rng.integers(0, 3)))
            worst = max(worst, max(err.values()))
        print(f"gate_depth {depth}: max relative error {worst:.2e} ({'ok' if worst < 1e-4 else 'FAIL'})")


if __name__ == "__main__":
    main()
