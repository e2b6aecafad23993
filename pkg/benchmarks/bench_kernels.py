"""Time the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--json PATH]

Reports per-call times for the masked Adam update and the pairwise mask
popcount, plus one end-to-end joint retraining run under each backend.
"""

import argparse
import json
import sys
import timeit

import numpy as np

from adaptive_tickets import _fallback, kernels
from adaptive_tickets.datasets import gen_gaussian_clusters, identity_mapping, partition_by_label
from adaptive_tickets.masking import BinaryMask, MaskSet
from adaptive_tickets.retraining import RetrainConfig, balance_batches, joint_retrain
from adaptive_tickets.tasks import detector_task
from adaptive_tickets.tensor import init_params

try:
    from adaptive_tickets import _kernels
except ImportError:
    _kernels = None


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def adam_case(impl, n, density, rng):
    param, grad = rng.normal(size=n), rng.normal(size=n)
    m, v = np.zeros(n), np.zeros(n)
    mask = None if density is None else (rng.random(n) < density).astype(np.uint8)
    args = (1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001)
    return lambda: impl.masked_adam_update(param, grad, m, v, mask, *args)


def pair_case(impl, k, n, rng):
    bits = (rng.random((k, n)) < 0.3).astype(np.uint8)
    return lambda: impl.pair_counts(bits)


def retrain_case():
    data = gen_gaussian_clusters(4, 200, 8, 0.25, 0)
    part = partition_by_label(data, identity_mapping(4))
    task = detector_task(data.features, part)
    init = init_params([8, 32, 32, 1], 0)
    rng = np.random.default_rng(0)
    masks = MaskSet([BinaryMask([rng.random(s) < 0.25 for s in init.shapes]) for _ in range(4)],
                    list(range(4)))
    plan = balance_batches(part, 32, 0)
    cfg = RetrainConfig(epochs=5, lr=1e-3)
    return lambda: joint_retrain(init, masks, plan, task, cfg)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--json", help="also write the results to this file")
    args = parser.parse_args(argv)

    if _kernels is None:
        print("compiled extension not built; nothing to compare", file=sys.stderr)
        return 1
    backends = {"compiled": _kernels, "python": _fallback}
    rng = np.random.default_rng(0)
    results = []

    for n in (1_000, 10_000, 100_000):
        for density in (None, 0.25):
            row = {"kernel": "masked_adam_update", "n": n, "density": density}
            for name, impl in backends.items():
                row[name] = best_of(adam_case(impl, n, density, rng), args.repeat, 200)
            results.append(row)
    for k, n in ((10, 1_000), (10, 100_000), (100, 10_000)):
        row = {"kernel": "pair_counts", "k": k, "n": n}
        for name, impl in backends.items():
            row[name] = best_of(pair_case(impl, k, n, rng), args.repeat, 5)
        results.append(row)

    row = {"kernel": "joint_retrain (5 epochs, K=4)"}
    saved = kernels.masked_adam_update
    for name, impl in backends.items():
        kernels.masked_adam_update = impl.masked_adam_update
        row[name] = best_of(retrain_case(), args.repeat, 1)
    kernels.masked_adam_update = saved
    results.append(row)

    print(f"{'case':52s} {'compiled':>12s} {'python':>12s} {'speedup':>8s}")
    for r in results:
        label = r["kernel"] + "".join(f" {k}={r[k]}" for k in ("n", "k", "density") if k in r)
        print(f"{label:52s} {r['compiled'] * 1e6:10.1f}us {r['python'] * 1e6:10.1f}us "
              f"{r['python'] / r['compiled']:7.2f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
