"""Compiled vs pure-numpy kernel timings on training-sized workloads.

    python benchmarks/bench_kernels.py [--repeat 20]
"""
import argparse
import timeit

import numpy as np

from citruslab import kernels
from citruslab.trainer import init_weights

WORKLOADS = {
    # one CITRUS batch of 5 is 20 boxes; a SABR/IBP batch is 5
    "toy 2-32-32-2, 20 rows": ([2, 32, 32, 2], 20),
    "toy 2-32-32-2, 200 rows": ([2, 32, 32, 2], 200),
    "mnist-ish 196-64-64-10, 20 rows": ([196, 64, 64, 10], 20),
}


def calls(layers, X, y):
    r = np.full_like(X, 0.05)
    return {
        "forward": lambda: kernels.forward(layers, X),
        "ce_input_grad": lambda: kernels.ce_input_grad(layers, X, y),
        "margin_bounds": lambda: kernels.margin_bounds(layers, X - r, X + r, y),
        "ibp_loss_grad": lambda: kernels.ibp_loss_grad(layers, X - r, X + r, y),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    backends = kernels.available()
    if "compiled" not in backends:
        print("compiled kernels not built; only the numpy backend is available")
    rng = np.random.default_rng(0)
    print(f"{'workload':34s} {'kernel':14s} " + " ".join(f"{b + ' us':>12s}" for b in backends)
          + ("   speedup" if len(backends) > 1 else ""))
    for name, (arch, n) in WORKLOADS.items():
        layers = init_weights(arch, 0).kernel_layers()
        X = rng.uniform(0, 1, size=(n, arch[0]))
        y = rng.integers(0, arch[-1], size=n)
        for kname in calls(layers, X, y):
            times = []
            for b in backends:
                with kernels.using(b):
                    fn = calls(layers, X, y)[kname]
                    fn()
                    times.append(min(timeit.repeat(fn, number=10, repeat=args.repeat)) / 10 * 1e6)
            line = f"{name:34s} {kname:14s} " + " ".join(f"{t:12.1f}" for t in times)
            if len(times) > 1:
                line += f"   {times[backends.index('python')] / times[backends.index('compiled')]:7.2f}x"
            print(line)


if __name__ == "__main__":
    main()
