"""Time the numba kernels against their numpy counterparts.

    python3 benchmarks/bench_kernels.py [--bags 1600] [--repeat 20]

The full-training comparison runs each backend in a subprocess because the
backend is chosen at import time from RISKLAB_DISABLE_NUMBA.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from risklab import _kernels
from risklab.evaluation import ExperimentConfig, simulate
from risklab.learner import initial_params

TRAIN_SNIPPET = """
import time
from risklab import _kernels, learner
from risklab.evaluation import ExperimentConfig, simulate, train_stream
data = simulate(ExperimentConfig(), 0)
learner.train(data.train_packed.subset(range(200)), learner.TrainConfig(iterations=5))  # warm-up
t0 = time.perf_counter()
learner.train(data.train_packed, ExperimentConfig().train, train_stream(0))
print(_kernels.BACKEND, time.perf_counter() - t0)
"""


def kernel_args(n_bags):
    data = simulate(ExperimentConfig(), 0)
    p = data.train_packed.subset(np.arange(min(n_bags, len(data.train_packed))))
    init = initial_params(p)
    hard = (p.tau, p.atten, p.level, p.mask, init.bounds(), init.ble_weights(), init.level_weights())
    soft = (p.tau, p.atten, p.level, p.mask, p.labels, init.bounds(), init.ble_weights(),
            init.level_weights(), init.mu, 2.0, 1e-12)
    return hard, soft


def best_of(fn, args, repeat):
    fn(*args)  # triggers compilation for numba
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--bags", type=int, default=1600)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--skip-train", action="store_true")
    args = ap.parse_args()
    if not _kernels.HAS_NUMBA:
        sys.exit("numba is not installed")

    hard, soft = kernel_args(args.bags)
    pairs = [
        ("hard_bag_risk", _kernels.hard_bag_risk_numpy, _kernels.hard_bag_risk_numba, hard),
        ("loss_grad", _kernels.loss_grad_numpy, _kernels.loss_grad_numba, soft),
    ]
    print(f"{'kernel':<16}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, f_np, f_nb, a in pairs:
        t_np, t_nb = best_of(f_np, a, args.repeat), best_of(f_nb, a, args.repeat)
        print(f"{name:<16}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}{t_np / t_nb:>9.1f}x")

    if not args.skip_train:
        for flag in ("0", "1"):
            env = {**os.environ, "RISKLAB_DISABLE_NUMBA": flag}
            out = subprocess.run([sys.executable, "-c", TRAIN_SNIPPET], env=env,
                                 capture_output=True, text=True, check=True).stdout.split()
            print(f"full train, {out[0]:<6} {float(out[1]):8.2f} s")


if __name__ == "__main__":
    main()
