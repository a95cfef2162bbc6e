"""Compare the compiled and numpy message passing kernels.

    python3 benchmarks/bench_crf.py [--sizes 64 128 256] [--radius 6] [--repeat 3]

Prints one row per (size, kernel) with the best wall time of both backends,
the speed-up and the largest absolute difference between their outputs.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from wcdnet.config import CrfParams
from wcdnet.crf import postprocess_crf
from wcdnet.crf.filtering import get_filter


def _best(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256])
    parser.add_argument("--radius", type=int, default=6)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    try:
        compiled = get_filter("compiled")
    except ImportError:
        raise SystemExit("compiled extension not built; run `pip install --no-build-isolation -e .`")
    python = get_filter("python")
    rng = np.random.default_rng(0)
    print(f"{'size':>5} {'kernel':>10} {'numpy s':>9} {'compiled s':>11} {'speed-up':>9} {'max diff':>9}")
    for size in args.sizes:
        q = rng.random((2, size, size))
        guide = rng.random((3, size, size))
        for name, sigma_color in (("spatial", 0.0), ("bilateral", 0.1)):
            call_py = lambda: python(q, guide, 3.0, sigma_color, args.radius)  # noqa: E731
            call_c = lambda: compiled(q, guide, 3.0, sigma_color, args.radius)  # noqa: E731
            diff = float(np.abs(call_py() - call_c()).max())
            t_py, t_c = _best(call_py, args.repeat), _best(call_c, args.repeat)
            print(f"{size:>5} {name:>10} {t_py:>9.4f} {t_c:>11.4f} {t_py / t_c:>8.1f}x {diff:>9.1e}")
    size = args.sizes[0]
    mask = rng.random((size, size))
    guide = rng.random((3, size, size))
    params = CrfParams(kernel_truncation_radius=args.radius)
    for backend in ("python", "compiled"):
        t = _best(lambda: postprocess_crf(mask, guide, params, backend=backend), args.repeat)
        print(f"full post-processing CRF, {size}x{size}, {params.iterations} iterations, {backend}: {t:.4f} s")


if __name__ == "__main__":
    main()
