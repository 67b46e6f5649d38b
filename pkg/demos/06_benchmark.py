"""
Timing the attention variants
=============================

Single-threaded BLAS, warm-up calls discarded, median of repeated calls.
Each cell is checked against the float64 explicit oracle before it is timed.
"""

from hybridfss import bench

results = bench.run_bench(bench.VARIANTS, token_sizes=(256, 1024, 2304), channels=(32,), repeats=5)

print("%-7s %6s %12s %12s" % ("variant", "tokens", "median ms", "p90 ms"))
for r in results:
    print("%-7s %6d %12.3f %12.3f" % (r.variant, r.tokens, r.median_ns / 1e6, r.p90_ns / 1e6))

print()
for d in bench.ratios_vs_na(results):
    if d["variant"] != "na":
        print("%-7s at %4d tokens: %5.1fx faster than na" % (d["variant"], d["tokens"], d["speedup"]))

print()
for variant in ("na", "ours"):
    print("%-4s time ratio 2304 vs 1024 tokens (x2.25): %.2f"
          % (variant, bench.scaling_ratio(results, variant, 1024, 2304, 32)))
