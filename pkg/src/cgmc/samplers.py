"""Single-site Metropolis and coupled coarse-grained Metropolis chains.

``classical_step`` and ``coupled_step`` are the readable one-step reference
implementations built on the model/coarse-graining operations.  ``run_chain``
drives the block kernels (compiled or pure Python, see :mod:`cgmc.kernels`)
that the harness uses for production runs; tests check the two paths agree
trajectory by trajectory.

A coarse rejection ends the iteration with the chain unchanged (delayed
acceptance), and boundary proposals eta(k)+s outside [0, q] are proposed and
rejected, which keeps the coarse proposal symmetric.
"""
from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .coarse_graining import (
    CoarseConfig,
    CompressedKernel,
    coarse_delta,
    coarse_prior_logratio,
    compress,
    log_binomial_table,
    reconstruct_cell,
    reconstruction_site,
)
from .errors import ConfigurationError, ContractViolation, InternalConsistencyError
from .lattice_model import MeanField, ModelSpec, SpinConfig, apply_flip, flip_delta, total_energy

LOG_CLAMP = 700.0
BLOCK_STEPS = 1 << 15
REVALIDATE_EVERY = 1 << 16
MIN_BATCHES = 32
HIST_MAX_N = 20


class Stage(enum.Enum):
    COARSE_REJECTED = "coarse_rejected"
    FINE_REJECTED = "fine_rejected"
    ACCEPTED = "accepted"


@dataclass
class StepOutcome:
    stage: Stage
    delta_fine: float = math.nan
    delta_coarse: float = math.nan
    flipped_site: int | None = None
    alpha_fine: float = math.nan


@dataclass
class SamplerConfig:
    kind: str = "classical"
    q: int | None = None
    seed: int = 0
    n_steps: int = 100_000
    burn_in: int = 0
    thinning: int = 1
    record_series: bool = False
    initial: str = "bernoulli"
    rho: float = 0.5

    def validate(self, model: ModelSpec | None = None) -> None:
        if self.kind not in ("classical", "coupled"):
            raise ConfigurationError(f"unknown sampler kind {self.kind!r}")
        if self.n_steps < 1:
            raise ConfigurationError("n_steps must be positive")
        if not 0 <= self.burn_in < self.n_steps:
            raise ConfigurationError(f"burn_in={self.burn_in} must lie in [0, n_steps={self.n_steps})")
        if self.thinning < 1:
            raise ConfigurationError("thinning must be >= 1")
        if self.initial not in ("bernoulli", "empty", "full"):
            raise ConfigurationError(f"unknown initial state {self.initial!r}")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigurationError("rho must lie in [0, 1]")
        if self.kind == "coupled":
            if self.q is None:
                raise ConfigurationError("coupled sampler needs a coarse level q")
            if model is not None:
                model.lattice.check_level(self.q)

    @property
    def n_recorded(self) -> int:
        return -(-(self.n_steps - self.burn_in) // self.thinning)


@dataclass
class ChainStats:
    kind: str = "classical"
    q: int | None = None
    N: int = 0
    n_proposed: int = 0
    n_coarse_accepted: int = 0
    n_fine_evaluated: int = 0
    n_fine_accepted: int = 0
    n_samples: int = 0
    occupied_sum: int = 0
    occupied_sq_sum: int = 0
    longrange_pair_evals: int = 0
    coarse_pair_evals: int = 0
    fine_alpha_min: float = 1.0
    n_chains: int = 1
    stderr_sq_sum: float = math.nan
    wall_nanos: int = field(default=0, compare=False)
    series: np.ndarray | None = field(default=None, compare=False, repr=False)
    histogram: np.ndarray | None = field(default=None, compare=False, repr=False)
    final: SpinConfig | None = field(default=None, compare=False, repr=False)

    @property
    def stderr(self) -> float:
        """Batch-means standard error of ``mean_coverage`` (pooled over merged chains)."""
        return math.sqrt(self.stderr_sq_sum) / self.n_chains

    @property
    def coverage_sum(self) -> float:
        return self.occupied_sum / self.N

    @property
    def coverage_sq_sum(self) -> float:
        return self.occupied_sq_sum / (self.N * self.N)

    @property
    def mean_coverage(self) -> float:
        return self.occupied_sum / (self.n_samples * self.N) if self.n_samples else math.nan

    @property
    def coarse_acceptance(self) -> float:
        return self.n_coarse_accepted / self.n_proposed if self.n_proposed else math.nan

    @property
    def fine_acceptance(self) -> float:
        """Fine acceptance given that the coarse stage accepted."""
        return self.n_fine_accepted / self.n_fine_evaluated if self.n_fine_evaluated else math.nan

    @property
    def acceptance(self) -> float:
        return self.n_fine_accepted / self.n_proposed if self.n_proposed else math.nan

    def __add__(self, other: "ChainStats") -> "ChainStats":
        if (self.kind, self.q, self.N) != (other.kind, other.q, other.N):
            raise ValueError("can only merge statistics of the same sampler on the same lattice")
        return ChainStats(
            kind=self.kind,
            q=self.q,
            N=self.N,
            n_proposed=self.n_proposed + other.n_proposed,
            n_coarse_accepted=self.n_coarse_accepted + other.n_coarse_accepted,
            n_fine_evaluated=self.n_fine_evaluated + other.n_fine_evaluated,
            n_fine_accepted=self.n_fine_accepted + other.n_fine_accepted,
            n_samples=self.n_samples + other.n_samples,
            occupied_sum=self.occupied_sum + other.occupied_sum,
            occupied_sq_sum=self.occupied_sq_sum + other.occupied_sq_sum,
            longrange_pair_evals=self.longrange_pair_evals + other.longrange_pair_evals,
            coarse_pair_evals=self.coarse_pair_evals + other.coarse_pair_evals,
            fine_alpha_min=min(self.fine_alpha_min, other.fine_alpha_min),
            n_chains=self.n_chains + other.n_chains,
            stderr_sq_sum=self.stderr_sq_sum + other.stderr_sq_sum,
            wall_nanos=self.wall_nanos + other.wall_nanos,
        )


def batch_means_stderr(x: np.ndarray, n_batches: int = MIN_BATCHES) -> float:
    x = np.asarray(x, dtype=float)
    if x.size < 2 * n_batches:
        n_batches = max(2, x.size // 2)
    if x.size < 2:
        return math.nan
    means = np.array([b.mean() for b in np.array_split(x, n_batches)])
    return float(means.std(ddof=1) / math.sqrt(n_batches))


def pooled_mean_stderr(stats: list[ChainStats]) -> tuple[float, float]:
    """Average of replicate means and the standard error of that average."""
    total = sum(stats[1:], stats[0])
    return float(np.mean([s.mean_coverage for s in stats])), total.stderr


def _accept(logratio: float, u: float) -> tuple[bool, float]:
    alpha = math.exp(min(max(logratio, -LOG_CLAMP), LOG_CLAMP))
    return u < alpha, min(1.0, alpha)


def classical_step(sigma: SpinConfig, model: ModelSpec, rng, stats: ChainStats | None = None) -> StepOutcome:
    u = rng.random(2)
    x = int(u[0] * model.N)
    delta = flip_delta(sigma, x, model)
    ok, alpha = _accept(-delta, u[1])
    if stats is not None:
        stats.n_proposed += 1
        stats.n_coarse_accepted += 1
        stats.n_fine_evaluated += 1
        stats.longrange_pair_evals += 1 if isinstance(model.long, MeanField) else _tab_terms(model)
        stats.fine_alpha_min = min(stats.fine_alpha_min, alpha)
    if ok:
        apply_flip(sigma, x)
        if stats is not None:
            stats.n_fine_accepted += 1
        return StepOutcome(Stage.ACCEPTED, delta_fine=delta, flipped_site=x, alpha_fine=alpha)
    return StepOutcome(Stage.FINE_REJECTED, delta_fine=delta, alpha_fine=alpha)


def _tab_terms(model: ModelSpec) -> int:
    L = model.long.L
    return 2 * L - (1 if 2 * L == model.N else 0)


def coupled_step(
    sigma: SpinConfig,
    eta: CoarseConfig,
    model: ModelSpec,
    ck: CompressedKernel,
    rng,
    stats: ChainStats | None = None,
    reconstruction: str = "site",
    verify: bool = False,
) -> StepOutcome:
    q = ck.q
    if sigma.q != q:
        raise ContractViolation("configuration must carry cell sums for the kernel's coarse level")
    if verify and not np.array_equal(eta.eta, sigma.cell_sums):
        raise InternalConsistencyError("coarse configuration out of sync with the microscopic state")
    u = rng.random(5)
    k = int(u[0] * ck.M)
    s = -1 if u[1] < 0.5 else 1
    if stats is not None:
        stats.n_proposed += 1
    n = int(eta.eta[k])
    if not 0 <= n + s <= q:
        return StepOutcome(Stage.COARSE_REJECTED)
    dcoarse = coarse_delta(eta, k, s, ck)
    ok, _ = _accept(-dcoarse + coarse_prior_logratio(eta, k, s), u[3])
    if stats is not None:
        stats.coarse_pair_evals += ck.M
    if not ok:
        return StepOutcome(Stage.COARSE_REJECTED, delta_coarse=dcoarse)
    if stats is not None:
        stats.n_coarse_accepted += 1
        stats.n_fine_evaluated += 1

    if reconstruction == "site":
        x = reconstruction_site(sigma.occ, k, s, q, u[2])
        dfine = flip_delta(sigma, x, model)
        proposal = None
        if stats is not None:
            stats.longrange_pair_evals += ck.residual_values[x % q].size
    else:
        proposal, _ = reconstruct_cell(sigma, k, s, rng, mode=reconstruction)
        dfine = total_energy(proposal, model) - total_energy(sigma, model)
        x = None
    ok, alpha = _accept(-(dfine - dcoarse), u[4])
    if stats is not None:
        stats.fine_alpha_min = min(stats.fine_alpha_min, alpha)
    if not ok:
        return StepOutcome(Stage.FINE_REJECTED, dfine, dcoarse, alpha_fine=alpha)
    if proposal is None:
        apply_flip(sigma, x)
    else:
        sigma.occ[:] = proposal.occ
        sigma.total = proposal.total
        sigma.cell_sums[:] = proposal.cell_sums
    eta.eta[k] += s
    eta.total += s
    if stats is not None:
        stats.n_fine_accepted += 1
    return StepOutcome(Stage.ACCEPTED, dfine, dcoarse, flipped_site=x, alpha_fine=alpha)


def initial_state(config: SamplerConfig, N: int, rng) -> SpinConfig:
    if config.initial == "empty":
        return SpinConfig.empty(N)
    if config.initial == "full":
        return SpinConfig.full(N)
    return SpinConfig.bernoulli(N, config.rho, rng)


def _residual_arrays(ck: CompressedKernel):
    sizes = [v.size for v in ck.residual_values]
    ptr = np.zeros(ck.q + 1, dtype=np.int64)
    ptr[1:] = np.cumsum(sizes)
    dy = np.concatenate(ck.residual_offsets).astype(np.int64) if ptr[-1] else np.zeros(0, np.int64)
    val = np.concatenate(ck.residual_values).astype(float) if ptr[-1] else np.zeros(0)
    return ptr, dy, val


def run_chain(
    config: SamplerConfig,
    model: ModelSpec,
    initial: SpinConfig | None = None,
    *,
    histogram: bool = False,
    backend: str | None = None,
    verify: bool = False,
    ck: CompressedKernel | None = None,
) -> ChainStats:
    """Run ``config.n_steps`` iterations and summarise the post-burn-in coverage.

    Deterministic given ``config.seed``: the same seed yields identical
    statistics on every backend.  ``histogram=True`` (N <= 20) also counts
    visits to each microstate, indexed by the bit code of the occupancy.
    """
    config.validate(model)
    N = model.N
    init_seq, step_seq = np.random.SeedSequence(config.seed).spawn(2)
    if initial is None:
        sigma = initial_state(config, N, np.random.default_rng(init_seq))
    else:
        if initial.N != N:
            raise ContractViolation(f"initial state has {initial.N} sites, model has {N}")
        sigma = initial.copy()
    rng = np.random.default_rng(step_seq)
    kern = kernels.get(backend)

    if histogram and N > HIST_MAX_N:
        raise ConfigurationError(f"state histograms are limited to N <= {HIST_MAX_N}")
    hist = np.zeros(1 << N if histogram else 0, dtype=np.int64)
    code = sigma.code() if histogram else 0
    series = np.zeros(config.n_recorded, dtype=np.int64)
    counters = np.zeros(6, dtype=np.int64)
    fstats = np.ones(1)
    occ = np.ascontiguousarray(sigma.occ, dtype=np.uint8)
    total = int(occ.sum())
    spos = 0

    if config.kind == "coupled":
        q = config.q
        ck = ck if ck is not None else compress(model, q)
        if ck.q != q or ck.N != N:
            raise ConfigurationError("compressed kernel does not match the sampler configuration")
        cell = occ.reshape(-1, q).sum(axis=1).astype(np.int64)
        jbar = np.ascontiguousarray(ck.jbar_offdiag, dtype=float)
        if np.any(np.diag(jbar) != 0.0):
            raise ConfigurationError("compressed kernel must carry a zero off-diagonal table diagonal")
        jdiag = np.ascontiguousarray(ck.jbar_diag, dtype=float)
        logc = np.ascontiguousarray(log_binomial_table(q), dtype=float)
        res_ptr, res_dy, res_val = _residual_arrays(ck)
        cols = 5
    else:
        if isinstance(model.long, MeanField):
            long_kind, j_over_n, tab, L = 0, model.long.J / N, np.zeros(1), 0
        else:
            long_kind, j_over_n = 1, 0.0
            tab = np.ascontiguousarray(model.long_pair_weights(), dtype=float)
            L = model.long.L
        cols = 2

    start = time.perf_counter_ns()
    t = 0
    next_check = REVALIDATE_EVERY
    while t < config.n_steps:
        nb = min(BLOCK_STEPS, config.n_steps - t)
        u = rng.random((nb, cols))
        if config.kind == "coupled":
            total, spos, code = kern.coupled_block(
                occ, cell, total, q, model.K, jbar, jdiag, logc, res_ptr, res_dy, res_val, model.h,
                u, t, config.burn_in, config.thinning, series, spos, hist, code, counters, fstats,
            )
        else:
            total, spos, code = kern.classical_block(
                occ, total, model.K, long_kind, j_over_n, tab, L, model.h,
                u, t, config.burn_in, config.thinning, series, spos, hist, code, counters, fstats,
            )
        t += nb
        if verify or counters[3] >= next_check or t >= config.n_steps:
            next_check = (counters[3] // REVALIDATE_EVERY + 1) * REVALIDATE_EVERY
            if total != int(occ.sum()):
                raise InternalConsistencyError("cached particle count drifted from the occupancy")
            if config.kind == "coupled" and not np.array_equal(cell, occ.reshape(-1, q).sum(axis=1)):
                raise InternalConsistencyError("cell sums out of sync with the microscopic state")
    wall = time.perf_counter_ns() - start

    if spos != series.size:
        raise InternalConsistencyError(f"recorded {spos} samples, expected {series.size}")
    final = SpinConfig(occ)
    return ChainStats(
        kind=config.kind,
        q=config.q if config.kind == "coupled" else None,
        N=N,
        n_proposed=int(counters[0]),
        n_coarse_accepted=int(counters[1]),
        n_fine_evaluated=int(counters[2]),
        n_fine_accepted=int(counters[3]),
        n_samples=int(series.size),
        occupied_sum=int(series.sum()),
        occupied_sq_sum=int(np.sum(series * series)),
        longrange_pair_evals=int(counters[4]),
        coarse_pair_evals=int(counters[5]),
        fine_alpha_min=float(fstats[0]),
        stderr_sq_sum=batch_means_stderr(series / N) ** 2,
        wall_nanos=wall,
        series=series if config.record_series else None,
        histogram=hist if histogram else None,
        final=final,
    )
