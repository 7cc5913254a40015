"""Compare the compiled and pure-Python kernels on representative inputs.

    python benchmarks/bench_kernels.py [--repeat N] [--events N]
"""

import argparse
import timeit

import numpy as np

from xidlens import kernels
from xidlens.simulate import SimConfig, _candidates


def inputs(n_events: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    group = np.sort(rng.integers(0, max(1, n_events // 50), n_events))
    msg = rng.integers(0, 3, n_events)
    t = np.empty(n_events, dtype=np.int64)
    for g in np.unique(group):
        idx = np.flatnonzero(group == g)
        t[idx] = np.cumsum(rng.choice([0, 1, 2, 4, 8, 120], len(idx)))
    gpu = rng.integers(0, 4, n_events)
    tick = SimConfig(replications=1)
    event = SimConfig(replications=1, engine="event")
    cells, ticks = _candidates(np.random.default_rng(seed), tick)
    times, slots, hours = _candidates(np.random.default_rng(seed), event)
    return {
        "coalesce_chains": lambda k: k.coalesce_chains(group, msg, t, 5.0),
        "first_successor": lambda k: k.first_successor(group, gpu, t, 5.0, True),
        "sim_tick (608 GPUs, 720 h)": lambda k: k.sim_tick(cells, ticks, tick.n_ticks, tick.job_nodes, 4),
        "sim_event (608 GPUs, 720 h)": lambda k: k.sim_event(times, slots, hours, 720.0, event.job_nodes, 4),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--events", type=int, default=200_000)
    args = ap.parse_args()
    backends = kernels.available()
    cases = inputs(args.events)
    print(f"{'kernel':32s}" + "".join(f"{b:>12s}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, call in cases.items():
        best = {}
        for b in backends:
            k = kernels.load(b)
            call(k)  # warm up
            best[b] = min(timeit.repeat(lambda: call(k), number=1, repeat=args.repeat))
        row = f"{name:32s}" + "".join(f"{1e3 * best[b]:10.3f}ms" for b in backends)
        if len(backends) > 1:
            row += f"{best['python'] / best['cython']:11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
