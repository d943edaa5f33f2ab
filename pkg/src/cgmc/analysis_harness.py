"""Experiment configuration and the commands behind the ``cgmc`` CLI.

Each ``cmd_*`` function takes an :class:`ExperimentConfig`, writes its
artifacts into ``config.out`` and returns the parsed result so tests can
inspect it without re-reading files.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import os
import struct
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .coarse_graining import compress, log_binomial_table
from .errors import ConfigurationError
from .exact_oracles import (
    analyze_kernel,
    build_transition_matrix,
    coverage_curve,
    enumerate_gibbs,
    exact_coarse_marginal,
    gap_bounds,
    kardar_coverage,
)
from .lattice_model import LatticeSpec, MeanField, ModelSpec, NearestNeighbor, Tabulated, SpinConfig, flip_delta
from .samplers import ChainStats, SamplerConfig, pooled_mean_stderr, run_chain

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SWEEP_SCHEMA = "cgmc-sweep/1"
U64 = (1 << 64) - 1


class VerificationFailed(Exception):
    def __init__(self, failed):
        super().__init__("verification failed: " + ", ".join(failed))
        self.failed = failed


@dataclass
class ExperimentConfig:
    N: int = 1024
    K: float = 1.0
    J: float = 5.0
    h: float | None = None
    kernel: str = "meanfield"
    h_start: float | None = None
    h_stop: float | None = None
    h_count: int = 20
    classical: bool = True
    q_list: list = field(default_factory=lambda: [4, 8])
    samples: int = 100_000
    burn_in: int = 20_000
    thinning: int = 1
    replicates: int = 4
    initial: str = "auto"
    rho: float = 0.5
    seed: int = 0
    threads: int = 1
    out: str = "results"
    backend: str | None = None
    bench_N: int = 4096
    bench_q_list: list = field(default_factory=lambda: [2, 4, 8, 16])
    bench_steps: int = 200_000
    bench_h: float = -3.5
    bench_repeats: int = 3

    def validate(self) -> None:
        LatticeSpec(self.N)
        if self.kernel not in ("meanfield", "tabulated"):
            raise ConfigurationError(f"unknown long-range kernel {self.kernel!r}")
        if self.h_count < 1:
            raise ConfigurationError("the field grid needs at least one point")
        if self.samples < 1:
            raise ConfigurationError("samples must be positive")
        if self.burn_in < 0 or self.thinning < 1 or self.replicates < 1 or self.threads < 1:
            raise ConfigurationError("burn_in >= 0, thinning >= 1, replicates >= 1 and threads >= 1 are required")
        if not 0 <= self.seed <= U64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        if self.initial not in ("auto", "bernoulli", "empty", "full"):
            raise ConfigurationError(f"unknown initial state {self.initial!r}")
        for q in self.q_list:
            LatticeSpec(self.N).check_level(int(q))
        for q in self.bench_q_list:
            LatticeSpec(self.bench_N).check_level(int(q))
        if not self.classical and not self.q_list:
            raise ConfigurationError("no sampler selected")
        if self.backend is not None:
            kernels.get(self.backend)
        for name in ("K", "J", "rho", "bench_h"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigurationError(f"{name} must be finite")

    def model(self, h: float) -> ModelSpec:
        return build_model(self.N, self.K, self.J, h, self.kernel)

    @property
    def methods(self) -> list[str]:
        return (["classical"] if self.classical else []) + [f"q{q}" for q in self.q_list]

    def h_grid(self) -> list[float]:
        if self.h is not None and self.h_start is None:
            return [float(self.h)]
        if self.h_start is None or self.h_stop is None:
            return default_h_grid(self.K, self.J, self.h_count)
        if self.h_count == 1:
            return [float(self.h_start)]
        return [float(h) for h in np.linspace(self.h_start, self.h_stop, self.h_count)]


def build_model(N: int, K: float, J: float, h: float, kernel: str = "meanfield") -> ModelSpec:
    """Nearest neighbour K plus a uniform long-range coupling of total strength J.

    ``kernel="tabulated"`` spreads J/N over every distance up to N/2 as an
    explicit table, which is the same Hamiltonian evaluated site by site.
    """
    lattice = LatticeSpec(N)
    long = MeanField(J) if kernel == "meanfield" else Tabulated.constant(J / N, N // 2)
    return ModelSpec(lattice, NearestNeighbor(K), long, h)


def _keys(*names, **renamed) -> dict:
    return {**{n: n for n in names}, **renamed}


# TOML section -> {key in file: ExperimentConfig field}
_SECTIONS = {
    "model": _keys("N", "K", "J", "h", "kernel"),
    "grid": _keys(start="h_start", stop="h_stop", count="h_count"),
    "sampler": _keys("samples", "burn_in", "thinning", "replicates", "initial", "rho", "classical", q="q_list"),
    "run": _keys("seed", "threads", "out", "backend"),
    "bench": _keys(N="bench_N", q="bench_q_list", steps="bench_steps", h="bench_h", repeats="bench_repeats"),
}


def load_config(path: str | os.PathLike | None = None, **overrides) -> ExperimentConfig:
    """Defaults, then the TOML file, then explicit overrides (``None`` ignored)."""
    values = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc
        for section, body in doc.items():
            if section not in _SECTIONS or not isinstance(body, dict):
                raise ConfigurationError(f"{path}: unknown section [{section}]")
            mapping = _SECTIONS[section]
            for key, value in body.items():
                if key not in mapping:
                    raise ConfigurationError(f"{path}: unknown key {section}.{key}")
                values[mapping[key]] = value
    values.update({k: v for k, v in overrides.items() if v is not None})
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(values) - names
    if unknown:
        raise ConfigurationError(f"unknown configuration keys {sorted(unknown)}")
    try:
        cfg = ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc
    cfg.validate()
    return cfg


def default_h_grid(K: float, J: float, count: int = 20, lo: float = 0.01, hi: float = 0.99) -> list[float]:
    """Evenly spaced fields spanning where the exact coverage rises from lo to hi."""
    scan = np.linspace(-40.0, 40.0, 1601)
    cov = np.array([p.coverage for p in coverage_curve(K, J, scan)])
    inside = np.flatnonzero((cov >= lo) & (cov <= hi))
    if inside.size == 0:
        raise ConfigurationError(f"coverage never lies in [{lo}, {hi}] for K={K}, J={J}")
    a, b = scan[inside[0]], scan[inside[-1]]
    if count == 1:
        return [float(0.5 * (a + b))]
    return [float(h) for h in np.linspace(a, b, count)]


def derive_seed(seed_base: int, h: float, method: str, replicate: int) -> int:
    """seed_base XOR a stable 64-bit hash of the task identity."""
    digest = hashlib.blake2b(struct.pack("<d", h) + f"|{method}|{replicate}".encode(), digest_size=8).digest()
    return (seed_base ^ int.from_bytes(digest, "little")) & U64


def _out_dir(config: ExperimentConfig) -> Path:
    out = Path(config.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror or exc}") from exc
    return out


def _write_text(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _write_json(path: Path, obj) -> None:
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def fmt(x) -> str:
    """Round-trip exact float text."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % x


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)] + [",".join(fmt(v) for v in row) for row in rows]
    _write_text(path, "\n".join(lines) + "\n")


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def rss_error(exact, estimate) -> float:
    """Root of summed squared pointwise differences."""
    return math.sqrt(sum((a - b) ** 2 for a, b in zip(exact, estimate)))


# ------------------------------------------------------------- exact-curve --


def cmd_exact_curve(config: ExperimentConfig) -> list:
    curve = coverage_curve(config.K, config.J, config.h_grid())
    out = _out_dir(config)
    _write_csv(
        out / "exact_curve.csv",
        ["h", "coverage", "jump_flag", "unique"],
        [[p.h, p.coverage, p.jump_flag, p.unique] for p in curve],
    )
    return curve


# ------------------------------------------------------------------ sample --


def _initial(config: ExperimentConfig, m_exact: float) -> str:
    if config.initial != "auto":
        return config.initial
    return "empty" if m_exact < 0.5 else "full"


def _sampler_config(config: ExperimentConfig, method: str, seed: int, initial: str) -> SamplerConfig:
    kind, q = ("classical", None) if method == "classical" else ("coupled", int(method[1:]))
    return SamplerConfig(
        kind=kind, q=q, seed=seed, n_steps=config.burn_in + config.samples * config.thinning,
        burn_in=config.burn_in, thinning=config.thinning, initial=initial, rho=config.rho,
    )


def _stats_dict(st: ChainStats) -> dict:
    return {
        "kind": st.kind,
        "q": st.q,
        "mean_coverage": st.mean_coverage,
        "stderr": st.stderr,
        "n_proposed": st.n_proposed,
        "n_coarse_accepted": st.n_coarse_accepted,
        "n_fine_evaluated": st.n_fine_evaluated,
        "n_fine_accepted": st.n_fine_accepted,
        "n_samples": st.n_samples,
        "coarse_acceptance": st.coarse_acceptance,
        "fine_acceptance": st.fine_acceptance,
        "acceptance": st.acceptance,
        "longrange_pair_evals": st.longrange_pair_evals,
        "coarse_pair_evals": st.coarse_pair_evals,
        "fine_alpha_min": st.fine_alpha_min,
        "wall_seconds": st.wall_nanos * 1e-9,
    }


def cmd_sample(config: ExperimentConfig) -> dict:
    """One chain per selected method at the first grid field."""
    h = config.h_grid()[0]
    model = config.model(h)
    m_ex = kardar_coverage(config.K, config.J, h)
    result = {"h": h, "m_exact": m_ex, "backend": kernels.get(config.backend).NAME, "chains": {}}
    for method in config.methods:
        sc = _sampler_config(config, method, derive_seed(config.seed, h, method, 0), _initial(config, m_ex))
        result["chains"][method] = _stats_dict(run_chain(sc, model, backend=config.backend))
    _write_json(_out_dir(config) / "sample.json", _jsonable(result))
    return result


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# ------------------------------------------------------------------- sweep --


def sweep_header(methods: list[str]) -> list[str]:
    cols = ["h", "m_exact", "jump_flag"]
    for m in methods:
        cols += [f"m_{m}", f"se_{m}", f"acc_{m}"]
        if m != "classical":
            cols += [f"coarse_acc_{m}", f"fine_acc_{m}"]
        cols += [f"longrange_evals_{m}", f"coarse_evals_{m}"]
    return cols


def run_sweep(config: ExperimentConfig):
    """All (h, method, replicate) chains; returns curve, methods and stats[h_index][method] lists."""
    config.validate()
    grid = config.h_grid()
    curve = coverage_curve(config.K, config.J, grid)
    methods = config.methods
    models = [config.model(h) for h in grid]
    kernels_by_task = {(i, q): compress(models[i], q) for i in range(len(grid)) for q in config.q_list}

    tasks = []
    for i, h in enumerate(grid):
        init = _initial(config, curve[i].coverage)
        for method in methods:
            for r in range(config.replicates):
                sc = _sampler_config(config, method, derive_seed(config.seed, h, method, r), init)
                ck = kernels_by_task.get((i, sc.q)) if sc.q else None
                tasks.append((i, method, r, sc, ck))

    def work(task):
        i, method, r, sc, ck = task
        return run_chain(sc, models[i], backend=config.backend, ck=ck)

    with ThreadPoolExecutor(max_workers=config.threads) as pool:
        results = list(pool.map(work, tasks))
    stats = [{m: [] for m in methods} for _ in grid]
    for (i, method, r, _, _), st in sorted(zip(tasks, results), key=lambda t: t[0][:3]):
        stats[i][method].append(st)
    return curve, methods, stats


def cmd_sweep(config: ExperimentConfig) -> dict:
    curve, methods, stats = run_sweep(config)
    rows = []
    means = {m: [] for m in methods}
    wall = {m: 0 for m in methods}
    evals = {m: {"longrange": 0, "coarse": 0, "proposed": 0} for m in methods}
    rates = {m: [] for m in methods}
    for point, per in zip(curve, stats):
        row = [point.h, point.coverage, point.jump_flag]
        for m in methods:
            reps = per[m]
            mean, se = pooled_mean_stderr(reps)
            total = sum(reps[1:], reps[0])
            means[m].append(mean)
            wall[m] += sum(s.wall_nanos for s in reps)
            evals[m]["longrange"] += total.longrange_pair_evals
            evals[m]["coarse"] += total.coarse_pair_evals
            evals[m]["proposed"] += total.n_proposed
            rates[m].append({
                "acceptance": total.acceptance,
                "coarse_acceptance": total.coarse_acceptance,
                "fine_acceptance": total.fine_acceptance,
            })
            row += [mean, se, total.acceptance]
            if m != "classical":
                row += [total.coarse_acceptance, total.fine_acceptance]
            row += [total.longrange_pair_evals, total.coarse_pair_evals]
        rows.append(row)

    out = _out_dir(config)
    _write_csv(out / "sweep.csv", sweep_header(methods), rows)
    exact = [p.coverage for p in curve]
    errors = {m: rss_error(exact, means[m]) for m in methods}
    summary = {
        "schema": SWEEP_SCHEMA,
        "backend": kernels.get(config.backend).NAME,
        "config": dataclasses.asdict(config),
        "h_grid": [p.h for p in curve],
        "Error_cl": errors.get("classical"),
        "Error_c": {m[1:]: e for m, e in errors.items() if m != "classical"},
        "local_log10_error": {
            m: [math.log10(abs(a - b)) if a != b else None for a, b in zip(exact, means[m])] for m in methods
        },
        "wall_seconds": {m: wall[m] * 1e-9 for m in methods},
        "pair_evals": evals,
        "acceptance": rates,
    }
    _write_json(out / "summary.json", _jsonable(summary))
    return summary


# ------------------------------------------------------------------ verify --

# (K, J) pairs of the three coupling regimes, each at its particle-hole symmetric field
VERIFY_REGIMES = [(-2.0, 2.0), (1.0, 5.0), (1.0, 1.0)]
VERIFY_SIZES = [4, 6, 8, 10]


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    passed: bool


def _le(name, value, threshold) -> Check:
    return Check(name, float(value), float(threshold), bool(value <= threshold))


def _gt(name, value, threshold) -> Check:
    return Check(name, float(value), float(threshold), bool(value > threshold))


def _flag(name, ok) -> Check:
    return Check(name, 1.0 if ok else 0.0, 1.0, bool(ok))


def verify_battery(fine_logratio=None, sizes=VERIFY_SIZES, regimes=VERIFY_REGIMES) -> list[Check]:
    """The exact checks run by ``cgmc verify``.

    ``fine_logratio`` swaps the coupled sampler's fine acceptance formula in
    the brute-force kernels; used by the negative-control tests.
    """
    checks: list[Check] = []
    for K, J in regimes:
        h = -K - J / 2.0
        for N in sizes:
            model = ModelSpec.kardar(N, K, J, h)
            f = enumerate_gibbs(model).distribution
            tag = f"K={K:g},J={J:g},N={N}"
            Kc = build_transition_matrix("classical", model)
            rc = analyze_kernel(Kc, f)
            checks += [
                _le(f"row_sums[classical,{tag}]", rc.row_sum_error, 1e-12),
                _le(f"detailed_balance[classical,{tag}]", rc.db_violation, 1e-12),
                _le(f"stationary_tv[classical,{tag}]", rc.stationary_tv_error, 1e-10),
                _gt(f"spectral_gap[classical,{tag}]", rc.spectral_gap, 0.0),
                _flag(f"mixing_bound[classical,{tag}]", rc.mixing_bound_ok),
            ]
            pi_c = rc.stationary_tv_error
            for q in sorted({2, N // 2}):
                tq = f"{tag},q={q}"
                Kcg = build_transition_matrix("coupled", model, q, fine_logratio=fine_logratio)
                rg = analyze_kernel(Kcg, f)
                checks += [
                    _le(f"row_sums[coupled,{tq}]", rg.row_sum_error, 1e-12),
                    _le(f"detailed_balance[coupled,{tq}]", rg.db_violation, 1e-12),
                    _le(f"stationary_tv[coupled,{tq}]", rg.stationary_tv_error, 1e-10),
                    _gt(f"spectral_gap[coupled,{tq}]", rg.spectral_gap, 0.0),
                    _flag(f"mixing_bound[coupled,{tq}]", rg.mixing_bound_ok),
                    _le(f"shared_stationary[{tq}]", pi_c + rg.stationary_tv_error, 1e-10),
                ]
                if fine_logratio is None:
                    gb = gap_bounds(model, q)
                    checks += [
                        _flag(f"gap_sandwich[{tq}]", gb.bound_holds),
                        _le(f"gap_factorization[{tq}]", gb.factorization_residual, 1e-12),
                    ]

    # full-cell reconstruction gives the same stationary measure
    model = ModelSpec.kardar(6, 1.0, 1.0, -1.5)
    f = enumerate_gibbs(model).distribution
    rcell = analyze_kernel(build_transition_matrix("coupled", model, 3, reconstruction="cell", fine_logratio=fine_logratio), f)
    checks += [
        _le("detailed_balance[coupled,cell-reconstruction]", rcell.db_violation, 1e-12),
        _le("stationary_tv[coupled,cell-reconstruction]", rcell.stationary_tv_error, 1e-10),
    ]

    collapse = 0.0
    for q in range(1, 17):
        table = log_binomial_table(q)
        for n in range(q + 1):
            for s in (-1, 1):
                if 0 <= n + s <= q:
                    prior = table[n + s] - table[n]
                    log_fr = table[n] - table[n + s]
                    collapse = max(collapse, abs(prior + log_fr))
    checks.append(_le("combinatorial_collapse", collapse, 0.0))

    worst = 0.0
    for N, q in ((8, 2), (8, 4), (12, 3)):
        mf = ModelSpec.kardar(N, 0.0, 3.0, -0.7)
        ck = compress(mf, q)
        for code in range(1 << N):
            sigma = SpinConfig.from_code(code, N, q)
            for x in range(N):
                dfine = flip_delta(sigma, x, mf)
                s = 1 - 2 * int(sigma.occ[x])
                k = x // q
                row = ck.jbar_offdiag[k]
                own = sigma.cell_sums[k] if s > 0 else sigma.cell_sums[k] - 1
                dcoarse = -s * (float(row @ sigma.cell_sums) + ck.jbar_diag[k] * own) - mf.h * s
                worst = max(worst, max(0.0, dfine - dcoarse))
    checks.append(_le("meanfield_fine_acceptance_is_one", worst, 1e-12))

    for N, q in ((12, 2), (12, 3), (12, 4)):
        rep = exact_coarse_marginal(ModelSpec.kardar(N, 1.0, 2.0, -1.5), q)
        checks.append(_le(f"entropy_decomposition[N={N},q={q}]", rep.decomposition_residual, 1e-12))
    rep = exact_coarse_marginal(ModelSpec.kardar(12, 0.0, 2.0, -1.0), 4)
    checks.append(_le("meanfield_rel_entropy_zero", abs(rep.rel_entropy_per_site), 1e-12))
    return checks


def cmd_verify(config: ExperimentConfig | None = None, fine_logratio=None) -> dict:
    start = time.perf_counter()
    checks = verify_battery(fine_logratio=fine_logratio)
    failed = [c.name for c in checks if not c.passed]
    report = {
        "passed": not failed,
        "n_checks": len(checks),
        "failed": failed,
        "seconds": time.perf_counter() - start,
        "checks": [dataclasses.asdict(c) for c in checks],
    }
    if config is not None:
        _write_json(_out_dir(config) / "verify.json", _jsonable(report))
    if failed:
        raise VerificationFailed(failed)
    return report


# ------------------------------------------------------------------- bench --


def cmd_bench(config: ExperimentConfig) -> dict:
    """Cost model: pair evaluations and wall time per method on a tabulated kernel.

    Each method runs ``bench_repeats`` times from the same state; the
    fastest wall time is reported, the counters come from the first run.
    """
    config.validate()
    N = config.bench_N
    model = build_model(N, config.K, config.J, config.bench_h, "tabulated")
    backend = kernels.get(config.backend).NAME
    result = {"backend": backend, "N": N, "L": model.long.L, "h": config.bench_h, "steps": config.bench_steps, "methods": {}}
    methods = ["classical"] + [f"q{q}" for q in config.bench_q_list]
    for method in methods:
        kind, q = ("classical", None) if method == "classical" else ("coupled", int(method[1:]))
        sc = SamplerConfig(kind=kind, q=q, seed=derive_seed(config.seed, config.bench_h, method, 0),
                           n_steps=config.bench_steps, initial="bernoulli", rho=config.rho)
        ck = compress(model, q) if q else None
        runs = [run_chain(sc, model, backend=config.backend, ck=ck) for _ in range(config.bench_repeats)]
        st = runs[0]
        n = st.n_proposed
        p = st.coarse_acceptance
        entry = {
            "wall_seconds": min(r.wall_nanos for r in runs) * 1e-9,
            "n_proposed": n,
            "n_coarse_accepted": st.n_coarse_accepted,
            "n_fine_evaluated": st.n_fine_evaluated,
            "n_fine_accepted": st.n_fine_accepted,
            "coarse_acceptance": p,
            "coarse_acceptance_se": math.sqrt(p * (1 - p) / n),
            "n1_over_n": st.n_fine_evaluated / n,
            "longrange_per_iter": st.longrange_pair_evals / n,
            "coarse_per_iter": st.coarse_pair_evals / n,
            "fine_acceptance": st.fine_acceptance,
            "acceptance": st.acceptance,
            "exact_compression": bool(compress(model, q).exact) if q else None,
        }
        result["methods"][method] = entry
    m = result["methods"]
    walls = {k: v["wall_seconds"] for k, v in m.items()}
    result["wall_ratio_q8_q4"] = walls["q8"] / walls["q4"] if "q8" in walls and "q4" in walls else None
    result["runtime_vs_q"] = [[int(k[1:]), walls[k]] for k in methods if k != "classical"]
    _write_json(_out_dir(config) / "bench.json", _jsonable(result))
    return result
