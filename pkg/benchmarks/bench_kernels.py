"""Compare the numba and pure-numpy propagation kernels.

Two measurements:

* the CSR x dense kernel alone, on synthetic meshes of several sizes and
  feature widths (scipy.sparse is listed as an outside reference);
* one full training step (forward, backward, Adam) in a subprocess per
  backend, since the backend is fixed at import time by
  ``HORIZON_GNN_DISABLE_NUMBA``.

Usage: python benchmarks/bench_kernels.py [--repeat 50] [--skip-train]
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np
import scipy.sparse as sp

from horizon_gnn.kernels import HAS_NUMBA, csr_spmm_numba, csr_spmm_numpy
from horizon_gnn.synthetic import SyntheticConfig, generate_mesh

STEP_SNIPPET = r"""
import time
import numpy as np
from horizon_gnn.dataset import HorizonSet, PairSet
from horizon_gnn.experiments import prepare_dataset
from horizon_gnn.model import ModelConfig, init_params
from horizon_gnn.synthetic import SyntheticConfig
from horizon_gnn.train import AdamState, TrainConfig, adam_step, batch_loss_and_grads
ds = prepare_dataset(SyntheticConfig(T=40))
cfg = TrainConfig(horizons=HorizonSet([1, 15]), hidden=16)
ps = PairSet.build(ds.train, ds.stats, cfg.horizons)
params = init_params(0, ModelConfig(ModelConfig.input_width(6), 16)).named()
state = AdamState.zeros_like(params)
rng = np.random.default_rng(0)
def step():
    global params
    _, g = batch_loss_and_grads(params, ps, rng.integers(0, len(ps), 8), cfg)
    params = adam_step(params, g, state, 1e-3)
for _ in range(5):
    step()
best = float("inf")
for _ in range(5):
    t = time.perf_counter()
    for _ in range(20):
        step()
    best = min(best, (time.perf_counter() - t) / 20)
print(best)
"""


def best_time(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_table(repeat):
    rows = []
    for n in (300, 1200):
        mesh = generate_mesh(SyntheticConfig(node_count=n))
        ip, ix, dv = mesh.indptr, mesh.indices, mesh.data
        a = sp.csr_matrix((dv, ix, ip), shape=(n, n))
        for m in (16, 128):
            x = np.random.default_rng(0).standard_normal((n, m))
            ref = a @ x
            row = {"N": n, "cols": m, "numpy": best_time(lambda: csr_spmm_numpy(ip, ix, dv, x), repeat),
                   "scipy": best_time(lambda: a @ x, repeat)}
            assert np.allclose(csr_spmm_numpy(ip, ix, dv, x), ref, rtol=1e-13, atol=1e-13)
            if HAS_NUMBA:
                csr_spmm_numba(ip, ix, dv, x)  # compile outside the timing
                row["numba"] = best_time(lambda: csr_spmm_numba(ip, ix, dv, x), repeat)
                same = csr_spmm_numba(ip, ix, dv, x).tobytes() == csr_spmm_numpy(ip, ix, dv, x).tobytes()
                row["bitwise_equal"] = same
            rows.append(row)
    return rows


def train_step_time(disable_numba: bool) -> float:
    env = dict(os.environ, HORIZON_GNN_DISABLE_NUMBA="1" if disable_numba else "0")
    out = subprocess.run([sys.executable, "-c", STEP_SNIPPET], env=env, check=True,
                         capture_output=True, text=True)
    return float(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description="numba vs numpy kernel benchmark")
    ap.add_argument("--repeat", type=int, default=50)
    ap.add_argument("--skip-train", action="store_true")
    args = ap.parse_args()

    print("kernel: CSR x dense (best of %d, microseconds)" % args.repeat)
    print(f"{'N':>6} {'cols':>5} {'numba':>9} {'numpy':>9} {'scipy':>9} {'speedup':>8} bitwise")
    for r in kernel_table(args.repeat):
        nb = r.get("numba", float("nan"))
        print(f"{r['N']:>6} {r['cols']:>5} {nb * 1e6:>9.1f} {r['numpy'] * 1e6:>9.1f} "
              f"{r['scipy'] * 1e6:>9.1f} {r['numpy'] / nb:>7.1f}x {r.get('bitwise_equal', '-')}")
    if not args.skip_train:
        print("\ntraining step, batch 8, N=300, hidden 16, H={1,15} (milliseconds)")
        t_nb = train_step_time(False) if HAS_NUMBA else float("nan")
        t_np = train_step_time(True)
        print(f"numba {t_nb * 1e3:.2f}  numpy {t_np * 1e3:.2f}  speedup {t_np / t_nb:.1f}x")


if __name__ == "__main__":
    main()
