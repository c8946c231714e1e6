"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--steps 20]

Prints one TSV row per kernel: name, python ms, compiled ms, speedup.
"""

import argparse
import sys
import timeit

import numpy as np

from seqembed import kernels
from seqembed.datagen import GenSpec, generate_families
from seqembed.model import EmbedNet, preset
from seqembed.nn import Adam
from seqembed.train import EncodingCache, sample_batch, train_step


def cases(rng, steps):
    B, H = 32, 64
    z = rng.normal(size=(B, 4 * H))
    c = rng.normal(size=(B, H))
    gates, _, tc, _ = kernels.get_backend("python").lstm_cell_forward(z, c)
    dh, dc = rng.normal(size=(2, B, H))
    dcols = rng.normal(size=(B, 188, 13, 26))
    db = rng.normal(size=(20_000, 64))
    q = rng.normal(size=64)

    ds, _ = generate_families(GenSpec(num_families=10, sequences_per_family=20, seed=0))
    cache = EncodingCache(600)
    batches = [cache.batch(sample_batch(ds, B, rng)) for _ in range(steps)]

    def train():
        net = EmbedNet(preset("desk"))
        opt = Adam(list(net.parameters().values()))
        for b in batches:
            train_step(net, b, opt)

    return {
        "lstm_cell_forward (32x64)": lambda: kernels.lstm_cell_forward(z, c),
        "lstm_cell_backward (32x64)": lambda: kernels.lstm_cell_backward(dh, dc, gates, c, tc),
        "col2im_add (32x188x13x26)": lambda: kernels.col2im_add(dcols, 1, 200),
        "squared_distances (20000x64)": lambda: kernels.squared_distances(db, q),
        f"train_step desk batch 32 (x{steps})": train,
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--steps", type=int, default=20, help="train steps in the end-to-end case")
    args = ap.parse_args(argv)
    if "compiled" not in kernels.available_backends():
        print("compiled kernels are not built; nothing to compare", file=sys.stderr)
        return 1
    table = cases(np.random.default_rng(0), args.steps)
    print("kernel\tpython_ms\tcompiled_ms\tspeedup")
    for name, fn in table.items():
        ms = {}
        for backend in ("python", "compiled"):
            with kernels.use_backend(backend):
                fn()  # warm up
                ms[backend] = 1e3 * min(timeit.repeat(fn, number=1, repeat=args.repeat))
        print(f"{name}\t{ms['python']:.3f}\t{ms['compiled']:.3f}\t{ms['python'] / ms['compiled']:.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
