"""Time the numba and numpy paths of each hot kernel, plus one training step per path.

    python benchmarks/bench_kernels.py [--repeat 20] [--quick]

Kernel timings call both implementations in-process. The training-step
timing runs a child interpreter per path so the env flag takes effect at
import time.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from dynreid import _kernels

STEP_SNIPPET = """
import time, numpy as np
from dynreid.autodiff.tensor import Tape
from dynreid.config import TrainConfig
from dynreid.data import generate_dataset, stack_images
from dynreid.model import DynReIDModel
from dynreid import _kernels
cfg = TrainConfig()
s = generate_dataset(cfg.synth_spec())
m = DynReIDModel(cfg, 8)
idx = [i for p in range(4) for i in range(p * 20, p * 20 + 4)]
x, y = stack_images([s[i] for i in idx]), np.array([s[i].id for i in idx])
def step():
    with Tape() as t:
        total, _ = m.losses(x, y)
    t.backward(total)
step()
t0 = time.perf_counter()
for _ in range({n}):
    step()
print(_kernels.backend(), (time.perf_counter() - t0) / {n})
"""


def cases(rng, quick):
    b = 16 if quick else 64
    xp = rng.uniform(-1, 1, (b, 16, 34, 18))
    dcols = rng.uniform(-1, 1, (b, 16, 3, 3, 16, 8))
    n = 64 if quick else 128
    f, k = rng.uniform(-1, 1, (n, 16)), rng.uniform(-1, 1, (n, 16, 16))
    g, kg = rng.uniform(-1, 1, (2 * n, 16)), rng.uniform(-1, 1, (2 * n, 16, 16))
    q = 54 if quick else 200
    d = rng.uniform(0, 1, (q, 2 * q))
    rank = (d, rng.integers(0, 8, q), rng.integers(0, 8, 2 * q), rng.integers(0, 3, q), rng.integers(0, 3, 2 * q), 2 * q)
    return [
        ("im2col", (xp, 3, 3, 2, 16, 8)),
        ("col2im", (dcols, 34, 18, 2)),
        ("mutual_self", (f, k)),
        ("mutual_cross", (f, k, g, kg)),
        ("rank_eval", rank),
    ]


def bench_kernels(repeat, quick):
    rng = np.random.default_rng(0)
    print(f"{'kernel':<14}{'numpy ms':>11}{'numba ms':>11}{'speedup':>9}")
    for name, args in cases(rng, quick):
        py = getattr(_kernels, name + "_np")
        t_np = min(timeit.repeat(lambda: py(*args), number=1, repeat=repeat))
        if _kernels.HAVE_NUMBA:
            nb = getattr(_kernels, "_" + name + "_nb")
            nb(*args)  # compile / load cache outside the timing
            t_nb = min(timeit.repeat(lambda: nb(*args), number=1, repeat=repeat))
            print(f"{name:<14}{t_np * 1e3:>11.3f}{t_nb * 1e3:>11.3f}{t_np / t_nb:>8.1f}x")
        else:
            print(f"{name:<14}{t_np * 1e3:>11.3f}{'n/a':>11}")


def bench_step(steps):
    print(f"\ntraining step (P=4, K=4, desk model), mean over {steps}:")
    for flag in ("0", "1"):
        env = dict(os.environ, DYNREID_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(n=steps)], env=env,
                             capture_output=True, text=True, check=True).stdout.split()
        print(f"  {out[0]:<7}{float(out[1]) * 1e3:8.1f} ms")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--quick", action="store_true", help="smaller inputs")
    ap.add_argument("--no-step", action="store_true", help="skip the training-step comparison")
    args = ap.parse_args()
    bench_kernels(args.repeat, args.quick)
    if not args.no_step:
        bench_step(5 if args.quick else 20)


if __name__ == "__main__":
    main()
