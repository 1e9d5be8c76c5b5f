"""Compare the compiled and numpy kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--tracts N] [--repeat R]

Times each kernel under both backends on a simulated grid and reports the
speedup of the compiled one.
"""
import argparse
import math
import timeit

import numpy as np

from floodrisk import _backend
from floodrisk.model import ModelData
from floodrisk.simulate import TruthConfig, make_grid_graph, synthetic_counts


def _cases(data, rng):
    u = rng.normal(scale=0.3, size=data.dim)
    u[0] -= 5.0
    p = rng.normal(size=data.dim)
    im = np.ones(data.dim)
    angles = np.linspace(0, 2 * math.pi, 65)
    ring = np.column_stack([np.cos(angles), np.sin(angles)])
    ring[-1] = ring[0]
    px, py = rng.uniform(-1.2, 1.2, (2, 100_000))

    def grad(b):
        return lambda: b.logp_grad(u, data.kernel)

    def traj(b):
        g = b.logp_grad(u, data.kernel)[1]
        return lambda: b.trajectory(u, p, g, 0.01, 32, im, data.kernel)

    def ring_test(b):
        return lambda: b.ring_contains(px, py, ring)

    return {"logp_grad": grad, "trajectory (32 steps)": traj, "ring_contains (1e5 pts)": ring_test}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tracts", type=int, default=400, help="grid size (rounded to a square)")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    side = max(2, int(round(math.sqrt(args.tracts))))
    g, polys = make_grid_graph(side, side)
    counts, _, truth = synthetic_counts(g, polys, TruthConfig(), seed=0)
    data = ModelData(counts, g, truth.features)
    rng = np.random.default_rng(0)
    cases = _cases(data, rng)
    names = _backend.available()
    print(f"{g.n} tracts, dim {data.dim}; backends: {', '.join(names)}")
    print(f"{'kernel':<26}" + "".join(f"{n + ' (ms)':>14}" for n in names)
          + ("   speedup" if len(names) == 2 else ""))
    for label, make in cases.items():
        times = []
        for n in names:
            fn = make(_backend.get(n))
            number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-6)))
            best = min(timeit.repeat(fn, number=number, repeat=args.repeat)) / number
            times.append(best * 1e3)
        line = f"{label:<26}" + "".join(f"{t:>14.4f}" for t in times)
        if len(times) == 2:
            line += f"{times[1] / times[0]:>10.1f}x"
        print(line)


if __name__ == "__main__":
    main()
