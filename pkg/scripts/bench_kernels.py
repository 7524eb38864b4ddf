"""Packed XNOR-popcount GEMM vs float32 BLAS on the same ±1 operands.

Exactness is asserted before any timing. The packed kernel is pure numpy
(word-level XOR plus popcount), so BLAS usually wins on a single core.

    python3 scripts/bench_kernels.py --sizes 64 128 256 512
"""

import argparse
import sys

from dybnn.cli import bench_gemm


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", nargs="+", type=int, default=[64, 128, 256, 512])
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    print(f"{'n':>6} {'packed ms':>10} {'float ms':>10} {'speedup':>8}")
    for r in bench_gemm(args.sizes, args.repeats, args.seed):
        print(f"{r['n']:>6} {r['packed_ms']:>10.3f} {r['float_ms']:>10.3f} {r['speedup']:>8.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
