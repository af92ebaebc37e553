"""Audit every layer's backward pass against finite differences.

Each entry builds a tiny instance of one layer, wraps it in a scalar
objective, and compares the tape's gradient with central differences.
Anything at or above 1e-4 relative error would indicate a broken vjp.

The same suite backs the `siamcaps gradcheck` CLI subcommand.
"""

import time

from siamcaps.gradcheck import THRESHOLD, format_report, run_suite


def main():
    t0 = time.monotonic()
    results = run_suite(seed=0)
    elapsed = time.monotonic() - t0

    print(format_report(results))
    print(f"\n{len(results)} layers checked in {elapsed:.2f}s "
          f"(threshold {THRESHOLD:g})")

    worst_name, worst_err = max(results, key=lambda r: r[1])
    print(f"worst layer: {worst_name} at {worst_err:.3e} - "
          f"{'comfortably below' if worst_err < THRESHOLD else 'ABOVE'} "
          f"the threshold")


if __name__ == "__main__":
    main()
