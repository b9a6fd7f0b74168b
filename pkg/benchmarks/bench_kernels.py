"""Compiled kernels versus their plain-Python bodies.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Times the lockstep pair simulation and batched segment collision checks with
numba and with MRTMP_DISABLE_NUMBA=1, each in its own interpreter, and
checks both give the same numbers.
"""
import argparse
import json
import os
import subprocess
import sys
import tempfile
import time

import numpy as np

from mrtmp import _accel, kernels
from mrtmp.scenario import corridor_scenario


def pair_args(sc, T, seed=0):
    g = np.random.default_rng(seed)
    r0, r1 = sc.robots
    mu0 = np.concatenate([r0.mean.as_array(), r1.mean.as_array()])
    P0 = np.zeros((6, 6))
    P0[:3, :3] = r0.covariance
    P0[3:, 3:] = r1.covariance
    ctr = np.tile([0.05, 0.0, 0.005], (2, T, 1))
    lms = sc.map.landmark_array.reshape(-1, 2)
    L = len(lms)
    return (mu0, P0, mu0.copy(), ctr, np.array([T, T]), sc.noise.W_diag, sc.noise.Q_landmark_diag,
            sc.noise.Q_mutual_diag, lms, float(sc.map.sensor_range), float(sc.mutual_range),
            g.standard_normal((T, 2, 3)), g.standard_normal((T, 2, L, 2)), g.standard_normal((T, 2)))


def segment_args(sc, n, seed=0):
    g = np.random.default_rng(seed)
    b = sc.map._bounds_arr
    lo, hi = b[:2], b[2:]
    return g.uniform(lo, hi, (n, 2)), g.uniform(lo, hi, (n, 2)), b, sc.map._obst_arr, 0.02


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - t)
    return min(times), out


def worker(repeat, dump):
    sc = corridor_scenario()
    if _accel.HAS_NUMBA:
        kernels.warm_up()
    cases = {"simulate_pair T=200": (kernels.simulate_pair, pair_args(sc, 200)),
             "simulate_pair T=1000": (kernels.simulate_pair, pair_args(sc, 1000)),
             "segments_free n=2000": (kernels.segments_free, segment_args(sc, 2000))}
    times, arrays = {}, {}
    for name, (fn, a) in cases.items():
        fn(*a)
        times[name], out = best_of(fn, a, repeat)
        for i, x in enumerate(out if isinstance(out, tuple) else (out,)):
            arrays[f"{name}/{i}"] = np.asarray(x)
    np.savez(dump, **arrays)
    return times


def run(flag, repeat, dump):
    env = dict(os.environ, MRTMP_DISABLE_NUMBA=flag)
    out = subprocess.run([sys.executable, __file__, "--worker", "--repeat", str(repeat), "--dump", dump],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    ap.add_argument("--dump", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.worker:
        print(json.dumps(worker(args.repeat, args.dump)))
        return
    with tempfile.TemporaryDirectory() as tmp:
        fast = run("0", args.repeat, os.path.join(tmp, "fast.npz"))
        slow = run("1", max(1, args.repeat // 2), os.path.join(tmp, "slow.npz"))
        a, b = np.load(os.path.join(tmp, "fast.npz")), np.load(os.path.join(tmp, "slow.npz"))
        print(f"{'kernel':<24}{'numba [ms]':>12}{'python [ms]':>13}{'speedup':>9}  agree")
        for name in fast:
            keys = [k for k in a.files if k.startswith(name + "/")]
            agree = all(np.allclose(a[k], b[k], rtol=0, atol=1e-12) for k in keys)
            print(f"{name:<24}{1e3 * fast[name]:>12.3f}{1e3 * slow[name]:>13.1f}"
                  f"{slow[name] / fast[name]:>8.0f}x  {agree}")


if __name__ == "__main__":
    main()
