"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_backends.py --sizes 14,28 --repeats 10
"""
import argparse
from collections import defaultdict

from kronattn.profiler import compare_backends


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", default="14,28")
    parser.add_argument("--channels", type=int, default=8)
    parser.add_argument("--repeats", type=int, default=10)
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    table = defaultdict(dict)
    for row in compare_backends(sizes, args.channels, args.repeats):
        table[(row["kernel"], row["size"])][row["backend"]] = row["ms"]

    print(f"{'kernel':<16}{'size':>6}{'python ms':>12}{'cython ms':>12}{'speedup':>10}")
    for (kernel, size), times in table.items():
        py, cy = times.get("python"), times.get("cython")
        ratio = f"{py / cy:.1f}x" if py and cy else "-"
        cy_cell = f"{cy:.3f}" if cy else "n/a"
        print(f"{kernel:<16}{size:>6}{py:>12.3f}{cy_cell:>12}{ratio:>10}")


if __name__ == "__main__":
    main()
