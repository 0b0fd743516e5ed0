"""Time each hot kernel under the compiled and pure-Python implementations.

    python3 benchmarks/bench_kernels.py [--repeat N] [--out FILE.csv]
"""

from __future__ import annotations

import argparse
import sys
import timeit

import numpy as np

from leapdecode import _kernels
from leapdecode._kernels import _pykernels


def cases():
    rng = np.random.default_rng(0)
    H, R, dh = 4, 96, 8
    q, k, v = (rng.standard_normal((H, R, dh)).astype(np.float32) for _ in range(3))
    mask = rng.random((R, R)) < 0.6
    np.fill_diagonal(mask, True)
    V, L = 8, 66
    init = rng.dirichlet(np.ones(V))
    trans = rng.dirichlet(np.ones(V), size=V)
    obs = np.where(rng.random(L) < 0.3, rng.integers(0, V, L), -1).astype(np.int64)
    left, right = rng.random((6, V)), rng.random((6, V))
    return {
        "splitmix64_uniform(n=4096)": lambda m: m.splitmix64_uniform(12345, 4096),
        "masked_attention(H=4,R=96,dh=8)": lambda m: m.masked_attention(q, k, v, mask),
        "chain_posteriors(V=8,L=66)": lambda m: m.chain_posteriors(init, trans, obs),
        "lookahead_agrees(6x6,V=8)": lambda m: m.lookahead_agrees(left, right, 0),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--out")
    args = ap.parse_args(argv)
    if _kernels.compiled is None:
        print("compiled kernels not built; only the Python fallback is available", file=sys.stderr)
    rows = ["kernel,python_us,compiled_us,speedup"]
    for name, fn in cases().items():
        timings = {}
        for label, mod in (("python", _pykernels), ("compiled", _kernels.compiled)):
            if mod is None:
                continue
            n = max(1, int(0.2 / max(timeit.timeit(lambda: fn(mod), number=1), 1e-6)))
            best = min(timeit.repeat(lambda: fn(mod), number=n, repeat=args.repeat)) / n
            timings[label] = best * 1e6
        py, cy = timings["python"], timings.get("compiled")
        rows.append(f"{name},{py:.1f},{'' if cy is None else f'{cy:.1f}'},"
                    f"{'' if cy is None else f'{py / cy:.1f}'}")
    text = "\n".join(rows) + "\n"
    print(text, end="")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)


if __name__ == "__main__":
    main()
