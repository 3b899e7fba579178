"""Time the numba kernels against their numpy twins, plus one end-to-end encode.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Numba compile time is excluded: every jit kernel runs once before timing.
The end-to-end row re-runs encoding in a subprocess with MOLR_NO_JIT=1.
"""

import argparse
import os
import subprocess
import sys
from timeit import default_timer as timer

import numpy as np

from molr import _kernels as K


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = timer()
        fn()
        times.append(timer() - t0)
    return min(times)


def kernel_cases(rng):
    n_rows, n_seg, d = 200_000, 20_000, 64
    x = rng.normal(size=(n_rows, d))
    seg = np.sort(rng.integers(0, n_seg, n_rows))
    logits = rng.normal(size=n_rows)
    a, b = rng.normal(size=(2048, 256)), rng.normal(size=(2048, 256))
    return [
        ("segment_sum", (x, seg, n_seg)),
        ("segment_max", (x, seg, n_seg)),
        ("segment_softmax", (logits, seg, n_seg)),
        ("pairwise_distances", (a, b)),
    ]


ENCODE_SNIPPET = """
import sys, time
import numpy as np
from molr.datagen import random_molecule
from molr.encoders import EncoderConfig, encode_molecules, init_weights
from molr.graph import build_vocab
rng = np.random.default_rng(0)
mols = [random_molecule(int(rng.integers(4, 20)), rng) for _ in range(2000)]
vocab = build_vocab(mols)
cfg = EncoderConfig.uniform(sys.argv[1], 2, 128, heads=4)
w = init_weights(cfg, vocab.total_dim, 0)
encode_molecules(mols[:50], vocab, cfg, w)
t0 = time.perf_counter()
encode_molecules(mols, vocab, cfg, w)
print(time.perf_counter() - t0)
"""


def encode_time(gnn, no_jit):
    env = dict(os.environ, MOLR_NO_JIT="1" if no_jit else "0")
    out = subprocess.run([sys.executable, "-c", ENCODE_SNIPPET, gnn], env=env, check=True,
                         capture_output=True, text=True)
    return float(out.stdout.strip())


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--skip-encode", action="store_true")
    args = p.parse_args()

    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}")
    for name, inputs in kernel_cases(rng):
        np_fn, jit_fn = getattr(K, name + "_np"), getattr(K, name + "_jit")
        ref, got = np_fn(*inputs), jit_fn(*inputs)
        for r, g in zip(ref if isinstance(ref, tuple) else (ref,), got if isinstance(got, tuple) else (got,)):
            assert np.allclose(r, g, rtol=1e-12, atol=1e-12), name
        t_np = best_of(lambda: np_fn(*inputs), args.repeat)
        t_jit = best_of(lambda: jit_fn(*inputs), args.repeat)
        print(f"{name:<22}{1e3 * t_np:>12.2f}{1e3 * t_jit:>12.2f}{t_np / t_jit:>9.1f}x")

    if not args.skip_encode:
        print(f"\n{'encode 2000 mols':<22}{'numpy [s]':>12}{'numba [s]':>12}{'speedup':>10}")
        for gnn in ("gcn", "gat", "sage", "tag"):
            t_np, t_jit = encode_time(gnn, True), encode_time(gnn, False)
            print(f"{gnn:<22}{t_np:>12.3f}{t_jit:>12.3f}{t_np / t_jit:>9.1f}x")


if __name__ == "__main__":
    main()
