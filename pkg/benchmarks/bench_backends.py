"""Compiled kernel vs pure-Python twin on identical chains.

    python benchmarks/bench_backends.py --N 1024 --steps 200000

Both backends consume the same uniforms, so besides timing the script
checks that the two produce identical chain statistics.
"""
import argparse
import time

from cgmc import kernels
from cgmc.analysis_harness import build_model
from cgmc.coarse_graining import compress
from cgmc.samplers import SamplerConfig, run_chain


def timed(cfg, model, backend, ck, repeats):
    best, stats = float("inf"), None
    for _ in range(repeats):
        start = time.perf_counter()
        stats = run_chain(cfg, model, backend=backend, ck=ck)
        best = min(best, time.perf_counter() - start)
    return best, stats


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--N", type=int, default=1024)
    ap.add_argument("--steps", type=int, default=200_000)
    ap.add_argument("--q", type=int, nargs="+", default=[4, 8])
    ap.add_argument("--kernel", choices=["meanfield", "tabulated"], default="tabulated")
    ap.add_argument("--h", type=float, default=-3.5)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args(argv)

    if "cython" not in kernels.BACKENDS:
        raise SystemExit("compiled backend not built; run `pip install -e . --no-build-isolation` first")
    model = build_model(args.N, 1.0, 5.0, args.h, args.kernel)
    methods = [("classical", None)] + [("coupled", q) for q in args.q]
    print(f"N={args.N} steps={args.steps} kernel={args.kernel} h={args.h}")
    print(f"{'method':>10} {'cython ns/step':>15} {'python ns/step':>15} {'speedup':>8} {'identical':>10}")
    for kind, q in methods:
        cfg = SamplerConfig(kind, q=q, seed=1, n_steps=args.steps, initial="bernoulli")
        ck = compress(model, q) if q else None
        tc, sc = timed(cfg, model, "cython", ck, args.repeats)
        tp, sp = timed(cfg, model, "python", ck, 1)
        name = kind if q is None else f"q{q}"
        same = sc == sp and sc.final == sp.final
        print(f"{name:>10} {tc / args.steps * 1e9:15.1f} {tp / args.steps * 1e9:15.1f} {tp / tc:8.1f} {str(same):>10}")


if __name__ == "__main__":
    main()
