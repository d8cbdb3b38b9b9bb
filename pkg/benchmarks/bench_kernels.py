"""Compare the numba and numpy kernel backends.

Times each kernel directly, then one closed-loop evaluation end to end in a
subprocess per backend (the backend is fixed at import time by
CLOSEDLOOP_NUMBA). Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from closedloop import kernels
from closedloop.qsim import SpinSystem, basis_state, local_rotation

E2E = r"""
import json, timeit, numpy as np
from closedloop._accel import backend
from closedloop.bench import bell_benchmark, make_oracle
out = {"backend": backend()}
u = np.random.default_rng(1).uniform(-50, 50, 40)
for name, kw in (("plain", {}), ("distorted", {"t_r_over_dt": 1.0})):
    o = make_oracle(bell_benchmark("grape", **kw), np.random.default_rng(0))
    o.evaluate(u); o.measure_insertions(u)
    out[name + "_eval_ms"] = min(timeit.repeat(lambda: o.evaluate(u), number=50, repeat=REPEAT)) / 50 * 1e3
    out[name + "_grad_ms"] = min(timeit.repeat(lambda: o.measure_insertions(u), number=5, repeat=REPEAT)) / 5 * 1e3
print(json.dumps(out))
"""


def best_ms(fn, number, repeat):
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number * 1e3


def kernel_table(repeat):
    s = SpinSystem(2, ((1, 2, 214.5),), 5e-3, 10)
    rng = np.random.default_rng(0)
    rows = []
    for k in (10, 320):
        amps = np.ascontiguousarray(rng.uniform(-50, 50, (k, 4)))
        dts = np.full(k, 5e-3 / k)
        us = kernels.slice_propagators_np(s._h0, s._ops, amps, dts)
        rho0 = basis_state([0, 0])
        rots = np.array([local_rotation(a, sg, j, 2) for j in (1, 2) for a in "xy" for sg in "+-"])
        bnd = np.arange(1, 11, dtype=np.int64) * (k // 10)
        cases = {
            "slice_propagators": (lambda: kernels.slice_propagators_np(s._h0, s._ops, amps, dts),
                                  lambda: kernels.slice_propagators_nb(s._h0, s._ops, amps, dts)),
            "evolve_chain": (lambda: kernels.evolve_chain_np(us, rho0),
                             lambda: kernels.evolve_chain_nb(us, rho0)),
            "insertion_states": (lambda: kernels.insertion_states_np(us, rho0, rots, bnd),
                                 lambda: kernels.insertion_states_nb(us, rho0, rots, bnd)),
        }
        for name, (f_np, f_nb) in cases.items():
            f_nb()  # compile
            t_np, t_nb = best_ms(f_np, 20, repeat), best_ms(f_nb, 20, repeat)
            rows.append((f"{name} K={k}", t_np, t_nb))
    return rows


def end_to_end(repeat):
    res = {}
    for flag in ("0", "1"):
        env = dict(os.environ, CLOSEDLOOP_NUMBA=flag)
        code = E2E.replace("REPEAT", str(repeat))
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        d = json.loads(out.stdout.strip().splitlines()[-1])
        res[d.pop("backend")] = d
    return res


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"{'kernel':32s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, t_np, t_nb in kernel_table(args.repeat):
        print(f"{name:32s} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:8.2f}")
    res = end_to_end(args.repeat)
    print()
    print(f"{'oracle call':32s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for key in res["numpy"]:
        a, b = res["numpy"][key], res["numba"][key]
        print(f"{key:32s} {a:10.4f} {b:10.4f} {a / b:8.2f}")


if __name__ == "__main__":
    main()
