"""Time the numba and numpy kernel backends on the same inputs.

Usage::

    python3 benchmarks/bench_kernels.py --repeats 5 --rounds 2000

The first numba call is a warm-up (JIT compile or cache load) and is not timed.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from safe_dogd import _backend, kernels
from safe_dogd.geometry import regular_polygon
from safe_dogd.network import named_topology


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def cases(rounds, rng):
    hexagon = regular_polygon(6, 1.0)
    points = 3.0 * rng.standard_normal((200, 2))
    m = 4
    topo = named_topology("ring", m)
    A_sets = np.stack([hexagon.A + 0.01 * rng.standard_normal(hexagon.A.shape) for _ in range(m)])
    b_sets = np.tile(hexagon.b, (m, 1))
    targets = rng.uniform(-1.5, 1.5, (rounds, m, 2))

    def polytope(backend):
        return lambda: [kernels.dykstra_polytope(hexagon.A, hexagon.b, np.inf, z, 1e-10, 10_000, backend)
                        for z in points]

    def cones(backend):
        return lambda: [kernels.dykstra_cones(hexagon.A, hexagon.b, 0.05, z, 1e-10, 10_000, backend)
                        for z in points]

    def loop(backend):
        return lambda: kernels.ogd_loop(np.zeros((m, 2)), targets, kernels.GRAD_TRACKING, topo.P, A_sets,
                                        b_sets, np.full(m, 0.05), np.full(m, np.inf), kernels.MODE_CONE,
                                        0.05, 1e-10, 10_000, backend)

    return {"dykstra_polytope (200 points)": polytope, "dykstra_cones (200 points)": cones,
            f"ogd_loop ({rounds} rounds, m={m})": loop}


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--rounds", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    backends = ["numpy"] + (["numba"] if _backend.HAVE_NUMBA else [])
    print(f"{'kernel':<36}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) == 2 else ""))
    for name, make in cases(args.rounds, np.random.default_rng(args.seed)).items():
        secs = []
        for b in backends:
            fn = make(b)
            if b == "numba":
                fn()
            secs.append(best_of(fn, args.repeats))
        line = f"{name:<36}" + "".join(f"{s * 1e3:>10.2f}ms" for s in secs)
        if len(secs) == 2:
            line += f"{secs[0] / secs[1]:>11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
