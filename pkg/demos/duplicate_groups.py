"""Duplicate column groups: which selectors keep one column per group?

Six binary columns where columns 3..5 repeat columns 0..2. A good selector
picking three features should take exactly one from each pair.

    python3 demos/duplicate_groups.py [--n 2000] [--epochs 200]
"""

import argparse

import numpy as np

from icdfs.neural import CaeConfig, cae_train
from icdfs.spectral import mcfs, pfa


def duplicated(seed, n):
    base = (np.random.default_rng(seed).random((n, 3)) < 0.5).astype(float)
    return np.column_stack([base, base])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    X = duplicated(args.seed, args.n)
    res, diag = cae_train(X, cfg=CaeConfig(n_best=3, epochs=args.epochs, seed=args.seed))
    print(f"CAE   selected {list(res.selected)}  merged {diag['duplicates_merged']}  "
          f"final T {diag['temperature'][-1]:.3g}  "
          f"mean-max prob {diag['mean_max_probability'][-1]:.3f}")
    print(f"MCFS  selected {list(mcfs(X, 3, seed=args.seed).selected)}")
    print(f"PFA   selected {list(pfa(X, 3, seed=args.seed).selected)}")

    # asking for more features than groups forces repeats
    res, diag = cae_train(X[:500], cfg=CaeConfig(n_best=5, epochs=args.epochs, seed=args.seed))
    print(f"CAE n_best=5: selected {list(res.selected)}, merged {diag['duplicates_merged']}, "
          f"identical pairs {diag['identical_columns']}")


if __name__ == "__main__":
    main()
