"""Timing harness for the attention variants.

Every cell (tokens, channels) gets one set of random inputs shared by all
variants. Before any timing, the factored kernel is checked against the
float64 unfactored oracle on that cell; a disagreement aborts the run.
Timed calls run under a one-thread BLAS limit, after discarded warm-up
calls, and are reduced to median and 90th percentile. Repeats are
interleaved round-robin over every (variant, cell) so that slow drift in
machine speed lands on all cells alike instead of skewing their ratios.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import ConfigError, InvariantError
from .p2p import Projection, cosine_align, explicit_attention_oracle, nla_align, p2p_align
from .tensor import max_relative_error

VARIANTS = ("na", "nla", "cosine", "ours")
GATE_RTOL = 1e-4
DEFAULT_WARMUP = 3


@dataclass
class BenchResult:
    variant: str
    tokens: int
    channels: int
    median_ns: int
    p90_ns: int
    repeats: int


def _kernel(variant: str):
    if variant == "ours":
        return p2p_align
    if variant == "na":
        return lambda q, s, m, p: explicit_attention_oracle(q, s, m, p, flag="na")
    if variant == "nla":
        return nla_align
    if variant == "cosine":
        return cosine_align
    raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def side_for(tokens: int) -> int:
    side = math.isqrt(tokens)
    if side < 1 or side * side != tokens:
        raise ConfigError(f"token count {tokens} is not a perfect square (need H = W)")
    return side


def make_inputs(tokens: int, channels: int, seed: int):
    side = side_for(tokens)
    rng = np.random.default_rng(np.random.SeedSequence([seed, tokens, channels]))
    q = rng.standard_normal((channels, side, side)).astype(np.float32)
    s = rng.standard_normal((channels, side, side)).astype(np.float32)
    mask = (rng.random((side, side)) < 0.5).astype(np.float32)
    proj = Projection.random(channels, seed)
    return q, s, mask, proj


def equivalence_gate(q, s, mask, proj, rtol: float = GATE_RTOL) -> float:
    """Relative error of the float32 factored kernel against the float64 oracle."""
    ours = p2p_align(q, s, mask, proj)
    oracle = explicit_attention_oracle(
        q.astype(np.float64), s.astype(np.float64), mask, proj.astype(np.float64), flag="unfactored"
    )
    err = max_relative_error(ours, oracle)
    if not err <= rtol:
        raise InvariantError(
            f"factored kernel disagrees with oracle (rel. error {err:.3g} > {rtol}); refusing to time it"
        )
    return err


def time_call(fn, args, repeats: int, warmup: int = DEFAULT_WARMUP) -> list[int]:
    for _ in range(warmup):
        fn(*args)
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn(*args)
        samples.append(max(time.perf_counter_ns() - t0, 1))
    return samples


def run_bench(variants=VARIANTS, token_sizes=(1024, 3600), channels=(64,), repeats: int = 10,
              seed: int = 0, warmup: int = DEFAULT_WARMUP) -> list[BenchResult]:
    if repeats < 5:
        raise ConfigError("repeats must be >= 5")
    kernels = {v: _kernel(v) for v in variants}
    for t in token_sizes:
        side_for(t)
    with threadpool_limits(limits=1):
        inputs = {}
        for t in token_sizes:
            for c in channels:
                inputs[(t, c)] = make_inputs(t, c, seed)
                equivalence_gate(*inputs[(t, c)])
        keys = [(v, t, c) for (t, c) in inputs for v in variants]
        for v, t, c in keys:
            for _ in range(warmup):
                kernels[v](*inputs[(t, c)])
        samples = {key: [] for key in keys}
        for _ in range(repeats):
            for v, t, c in keys:
                samples[(v, t, c)].extend(time_call(kernels[v], inputs[(t, c)], 1, warmup=0))
    results = [
        BenchResult(variant=v, tokens=t, channels=c,
                    median_ns=int(np.median(samples[(v, t, c)])),
                    p90_ns=int(np.percentile(samples[(v, t, c)], 90)),
                    repeats=repeats)
        for v, t, c in keys
    ]
    results.sort(key=lambda r: (r.variant, r.tokens, r.channels))
    return results


def ratios_vs_na(results: list[BenchResult]) -> list[dict]:
    """Speed-up of each variant over ``na`` in the same cell (na itself is 1.0)."""
    na = {(r.tokens, r.channels): r.median_ns for r in results if r.variant == "na"}
    out = []
    for r in results:
        base = na.get((r.tokens, r.channels))
        if base is None:
            continue
        out.append({"variant": r.variant, "tokens": r.tokens, "channels": r.channels,
                    "speedup": base / r.median_ns})
    return out


def scaling_ratio(results: list[BenchResult], variant: str, tokens_lo: int, tokens_hi: int,
                  channels: int) -> float:
    """median(tokens_hi) / median(tokens_lo) for one variant at fixed channels."""
    by = {(r.variant, r.tokens, r.channels): r.median_ns for r in results}
    return by[(variant, tokens_hi, channels)] / by[(variant, tokens_lo, channels)]


def monotonicity_violations(results: list[BenchResult], slack: float = 0.10) -> list[tuple]:
    """Cells where a larger token count ran more than ``slack`` faster than a smaller one."""
    bad = []
    groups: dict[tuple, list[BenchResult]] = {}
    for r in results:
        groups.setdefault((r.variant, r.channels), []).append(r)
    for key, rs in groups.items():
        rs = sorted(rs, key=lambda r: r.tokens)
        for a, b in zip(rs, rs[1:]):
            if b.median_ns < (1 - slack) * a.median_ns:
                bad.append((key, a.tokens, b.tokens))
    return bad


def report_json(results: list[BenchResult]) -> str:
    doc = {"results": [asdict(r) for r in results], "ratios_vs_na": ratios_vs_na(results)}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def report_csv(results: list[BenchResult]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=[
        "variant", "tokens", "channels", "median_ns", "p90_ns", "repeats"])
    writer.writeheader()
    for r in results:
        writer.writerow(asdict(r))
    return buf.getvalue()
