"""Compare the compiled and fallback kernel backends on the same inputs.

    python3 benchmarks/bench_kernels.py [--data ratings.csv --format movielens-csv]
                                        [--repeats 5] [--json out.json]

Without ``--data`` a synthetic dataset of similar shape to MovieLens-100K is
used. Every kernel's outputs are checked for equality across backends before
timings are reported.
"""

import argparse
import json
import sys
import timeit

import numpy as np

from pprec import kernels
from pprec.dataset import InteractionDataset, binarize, load_raw
from pprec.similarity import HashFamily, cooccurrence, minhash_signatures
from pprec.walksim import Population, WalkConfig, _build_log, _simulate


def synthetic(n_users=943, n_items=1682, likes=100_000, seed=0):
    rng = np.random.default_rng(seed)
    # skewed item popularity, like real rating data
    pop = rng.lognormal(0.0, 1.5, n_items)
    users = rng.integers(0, n_users, likes)
    items = rng.choice(n_items, likes, p=pop / pop.sum())
    return InteractionDataset.from_pairs(users, items, n_users, n_items)


def cases(ds, k_hash, k_rounds):
    fam = HashFamily(k_hash, 1)
    pop = Population.from_dataset(ds, 0.5)
    cfg = WalkConfig(k_rounds, seed=1)
    log = _build_log(pop, cfg, 0, _simulate(pop, cfg, 0, k_rounds))
    return {
        "exact co-occurrence": lambda be: cooccurrence(ds.likes_indptr, ds.likes_items, ds.n_items, backend=be),
        f"minhash signatures (k={k_hash})": lambda be: minhash_signatures(ds, fam, backend=be).values,
        f"walk rounds (k={k_rounds})": lambda be: _simulate(pop, cfg, 0, k_rounds, backend=be),
        f"round pair counts (k={k_rounds})": lambda be: kernels.get("set_pair_counts", be)(
            log.items_indptr, log.items, ds.n_items),
    }


def same(a, b):
    if isinstance(a, tuple):
        return len(a) == len(b) and all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data")
    ap.add_argument("--format", default="movielens-csv")
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--k-hash", type=int, default=64)
    ap.add_argument("--k-rounds", type=int, default=943)
    ap.add_argument("--json")
    args = ap.parse_args(argv)

    ds = binarize(load_raw(args.data, args.format)) if args.data else synthetic()
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the fallback is available", file=sys.stderr)
    print(f"dataset: {ds.n_users} users, {ds.n_items} items, {ds.n_likes} likes; "
          f"median of {args.repeats}")
    results = []
    print(f"{'kernel':36s}" + "".join(f"{b:>12s}" for b in backends) + "     speedup")
    for name, fn in cases(ds, args.k_hash, args.k_rounds).items():
        outs = {be: fn(be) for be in backends}
        if not all(same(outs[backends[0]], o) for o in outs.values()):
            raise SystemExit(f"{name}: backends disagree")
        t = {be: float(np.median(timeit.repeat(lambda: fn(be), number=1, repeat=args.repeats)))
             for be in backends}
        speed = t["python"] / t["cython"] if "cython" in t else float("nan")
        print(f"{name:36s}" + "".join(f"{t[b] * 1e3:10.1f}ms" for b in backends) + f"{speed:11.1f}x")
        results.append({"kernel": name, "seconds": t, "speedup": speed})
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"n_users": ds.n_users, "n_items": ds.n_items, "results": results}, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
