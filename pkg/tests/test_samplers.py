import math

import numpy as np
import pytest

from cgmc import kernels
from cgmc.coarse_graining import CoarseConfig, compress
from cgmc.errors import ConfigurationError, ContractViolation
from cgmc.exact_oracles import enumerate_gibbs
from cgmc.lattice_model import LatticeSpec, ModelSpec, NearestNeighbor, SpinConfig, Tabulated, project
from cgmc.samplers import (
    ChainStats,
    SamplerConfig,
    Stage,
    batch_means_stderr,
    classical_step,
    coupled_step,
    pooled_mean_stderr,
    run_chain,
)
from conftest import smooth_kernel

BACKENDS = sorted(kernels.BACKENDS)


def tab_model(N=32, L=8, K=0.7, h=-1.2):
    return ModelSpec(LatticeSpec(N), NearestNeighbor(K), smooth_kernel(N, L, total=3.0), h)


class ScriptedRng:
    """Feeds fixed uniforms to the step functions."""

    def __init__(self, *rows):
        self.rows = list(rows)

    def random(self, n=None):
        row = self.rows.pop(0)
        return np.array(row) if n is not None else row


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SamplerConfig(n_steps=10, burn_in=10).validate()
    with pytest.raises(ConfigurationError):
        SamplerConfig(n_steps=0).validate()
    with pytest.raises(ConfigurationError):
        SamplerConfig(kind="coupled", q=3).validate(ModelSpec.kardar(8, 0, 0, 0))
    with pytest.raises(ConfigurationError):
        SamplerConfig(thinning=0).validate()


def test_classical_zero_delta_always_accepted():
    model = ModelSpec.kardar(8, 0.0, 0.0, 0.0)
    sigma = SpinConfig.empty(8)
    out = classical_step(sigma, model, ScriptedRng([0.3, 0.999999]))
    assert out.stage is Stage.ACCEPTED and out.alpha_fine == 1.0 and out.flipped_site == 2


def test_classical_downhill_from_empty():
    model = ModelSpec.kardar(16, 0.0, 0.0, 0.4)
    sigma = SpinConfig.empty(16)
    stats = ChainStats(N=16)
    rng = np.random.default_rng(1)
    for _ in range(16):
        before = sigma.total
        out = classical_step(sigma, model, rng, stats)
        if before == 0 or out.delta_fine < 0:
            assert out.stage is Stage.ACCEPTED
    assert stats.n_fine_accepted <= stats.n_coarse_accepted == stats.n_proposed == 16


def test_coupled_infeasible_move_is_coarse_rejection():
    model = ModelSpec.kardar(8, 1.0, 2.0, 0.0)
    sigma = SpinConfig.full(8, q=4)
    eta = project(sigma, 4)
    out = coupled_step(sigma, eta, model, compress(model, 4), ScriptedRng([0.1, 0.9, 0.5, 0.0, 0.0]))
    assert out.stage is Stage.COARSE_REJECTED and out.flipped_site is None
    assert sigma == SpinConfig.full(8) and eta.eta.tolist() == [4, 4]


def test_coupled_requires_attached_level():
    model = ModelSpec.kardar(8, 1.0, 2.0, 0.0)
    with pytest.raises(ContractViolation):
        coupled_step(SpinConfig.empty(8), CoarseConfig([0, 0], 4), model, compress(model, 4), np.random.default_rng(0))


def test_coupled_detects_desync_in_verify_mode():
    from cgmc.errors import InternalConsistencyError

    model = ModelSpec.kardar(8, 1.0, 2.0, 0.0)
    sigma = SpinConfig.empty(8, q=4)
    with pytest.raises(InternalConsistencyError):
        coupled_step(sigma, CoarseConfig([1, 0], 4), model, compress(model, 4), np.random.default_rng(0), verify=True)


def test_accepted_outcome_carries_site():
    model = ModelSpec.kardar(8, 0.0, 0.0, 5.0)
    sigma = SpinConfig.empty(8, q=4)
    eta = project(sigma, 4)
    out = coupled_step(sigma, eta, model, compress(model, 4), ScriptedRng([0.6, 0.9, 0.0, 0.0, 0.0]))
    assert out.stage is Stage.ACCEPTED and out.flipped_site == 4
    assert eta.eta.tolist() == [0, 1] and sigma.cell_sums.tolist() == [0, 1]


def test_meanfield_without_short_range_has_unit_fine_acceptance():
    st = run_chain(SamplerConfig("coupled", q=8, seed=5, n_steps=100_000), ModelSpec.kardar(256, 0.0, 4.0, -2.0))
    assert st.n_fine_evaluated > 0
    assert st.fine_alpha_min >= 1.0 - 1e-12
    assert st.n_fine_accepted == st.n_fine_evaluated


@pytest.mark.parametrize("h", [0.0, -1.3, 0.8])
def test_independent_sites_mean_coverage(h):
    model = ModelSpec.kardar(64, 0.0, 0.0, h)
    expected = math.exp(h) / (1 + math.exp(h))
    for cfg in (SamplerConfig(seed=3, n_steps=100_000, burn_in=1000), SamplerConfig("coupled", q=4, seed=3, n_steps=100_000, burn_in=1000)):
        st = run_chain(cfg, model)
        assert abs(st.mean_coverage - expected) < 4 * st.stderr


@pytest.mark.parametrize("kind,q", [("classical", None), ("coupled", 4), ("coupled", 8)])
def test_same_seed_same_stats(kind, q):
    cfg = SamplerConfig(kind, q=q, seed=99, n_steps=40_000, burn_in=500, thinning=3, record_series=True)
    a, b = run_chain(cfg, tab_model()), run_chain(cfg, tab_model())
    assert a == b
    assert np.array_equal(a.series, b.series) and a.final == b.final


@pytest.mark.parametrize("kind,q", [("classical", None), ("coupled", 2), ("coupled", 8)])
@pytest.mark.parametrize("model", [tab_model(), ModelSpec.kardar(64, 1.0, 5.0, -3.0)], ids=["tabulated", "meanfield"])
def test_backends_agree_bit_for_bit(kind, q, model):
    if len(BACKENDS) < 2:
        pytest.skip("compiled backend not built")
    cfg = SamplerConfig(kind, q=q, seed=7, n_steps=30_000, burn_in=100, thinning=2, record_series=True)
    a, b = (run_chain(cfg, model, backend=name, histogram=False) for name in BACKENDS)
    assert a == b and np.array_equal(a.series, b.series) and a.final == b.final


def test_step_functions_reproduce_block_kernel():
    model = tab_model()
    cfg = SamplerConfig("coupled", q=4, seed=3, n_steps=20_000, initial="empty")
    st = run_chain(cfg, model)
    _, step_seq = np.random.SeedSequence(3).spawn(2)
    rng = np.random.default_rng(step_seq)
    sigma = SpinConfig.empty(32, q=4)
    eta = project(sigma, 4)
    ck = compress(model, 4)
    ref = ChainStats(kind="coupled", q=4, N=32)
    for _ in range(20_000):
        coupled_step(sigma, eta, model, ck, rng, ref)
    assert sigma == st.final
    for name in ("n_proposed", "n_coarse_accepted", "n_fine_evaluated", "n_fine_accepted", "longrange_pair_evals", "coarse_pair_evals"):
        assert getattr(ref, name) == getattr(st, name), name


def test_classical_step_reproduces_block_kernel():
    model = tab_model()
    cfg = SamplerConfig(seed=4, n_steps=10_000, initial="full")
    st = run_chain(cfg, model)
    _, step_seq = np.random.SeedSequence(4).spawn(2)
    rng = np.random.default_rng(step_seq)
    sigma = SpinConfig.full(32)
    ref = ChainStats(N=32)
    for _ in range(10_000):
        classical_step(sigma, model, rng, ref)
    assert sigma == st.final
    assert (ref.n_fine_accepted, ref.longrange_pair_evals) == (st.n_fine_accepted, st.longrange_pair_evals)


@pytest.mark.parametrize("kind,q", [("classical", None), ("coupled", 4)])
def test_counter_invariants(kind, q):
    st = run_chain(SamplerConfig(kind, q=q, seed=1, n_steps=50_000, burn_in=10_000, thinning=7), tab_model())
    assert st.n_fine_accepted <= st.n_coarse_accepted <= st.n_proposed == 50_000
    assert st.n_fine_evaluated == st.n_coarse_accepted
    assert st.n_samples == -(-40_000 // 7)
    assert 0.0 <= st.mean_coverage <= 1.0 and st.stderr >= 0


def test_pair_eval_accounting():
    N = 64
    const = ModelSpec(LatticeSpec(N), NearestNeighbor(1.0), Tabulated.constant(5.0 / N, N // 2), -3.0)
    cl = run_chain(SamplerConfig(seed=2, n_steps=5000), const)
    assert cl.longrange_pair_evals == 5000 * (N - 1)
    cp = run_chain(SamplerConfig("coupled", q=8, seed=2, n_steps=5000), const)
    assert cp.longrange_pair_evals == 0  # constant kernel compresses exactly
    assert cp.coarse_pair_evals % (N // 8) == 0
    mf = run_chain(SamplerConfig(seed=2, n_steps=5000), ModelSpec.kardar(N, 1.0, 5.0, -3.0))
    assert mf.longrange_pair_evals == 5000


def test_merge_adds_counters_and_pools_error():
    cfgs = [SamplerConfig(seed=s, n_steps=20_000) for s in range(4)]
    reps = [run_chain(c, tab_model()) for c in cfgs]
    merged = sum(reps[1:], reps[0])
    assert merged.n_proposed == 80_000 and merged.n_chains == 4
    mean, se = pooled_mean_stderr(reps)
    assert mean == pytest.approx(merged.mean_coverage, abs=1e-15)
    assert se == pytest.approx(math.sqrt(sum(r.stderr**2 for r in reps)) / 4)
    with pytest.raises(ValueError):
        reps[0] + run_chain(SamplerConfig("coupled", q=4, n_steps=100), tab_model())


def test_batch_means_on_iid_noise():
    x = np.random.default_rng(0).normal(size=64_000)
    assert batch_means_stderr(x) == pytest.approx(1 / math.sqrt(64_000), rel=0.35)


def test_histogram_limited_to_small_lattices():
    with pytest.raises(ConfigurationError):
        run_chain(SamplerConfig(n_steps=10), ModelSpec.kardar(24, 0, 0, 0), histogram=True)


def test_verify_mode_runs_clean():
    st = run_chain(SamplerConfig("coupled", q=4, seed=8, n_steps=70_000), tab_model(), verify=True)
    assert st.final.check_caches()


def empirical_tv(model, cfg):
    f = enumerate_gibbs(model).distribution
    st = run_chain(cfg, model, histogram=True)
    p = st.histogram / st.histogram.sum()
    return 0.5 * float(np.abs(p - f).sum())


STATIONARITY_REGIMES = [(1.0, 5.0, -3.5), (-2.0, 2.0, 1.0), (1.0, 1.0, -1.5)]


@pytest.mark.parametrize("K,J,h", STATIONARITY_REGIMES)
@pytest.mark.parametrize("N,steps", [(4, 10**6), (6, 4 * 10**6)])
def test_stationarity_small_lattices(K, J, h, N, steps):
    model = ModelSpec.kardar(N, K, J, h)
    for kind, q in [("classical", None), ("coupled", 2), ("coupled", N // 2)]:
        tv = empirical_tv(model, SamplerConfig(kind, q=q, seed=17, n_steps=steps, burn_in=1000))
        assert tv <= 0.01, (kind, q, tv)


@pytest.mark.slow
@pytest.mark.parametrize("K,J,h", STATIONARITY_REGIMES)
def test_stationarity_eight_sites(K, J, h):
    model = ModelSpec.kardar(8, K, J, h)
    for kind, q in [("classical", None), ("coupled", 2), ("coupled", 4)]:
        tv = empirical_tv(model, SamplerConfig(kind, q=q, seed=23, n_steps=2 * 10**7, burn_in=1000))
        assert tv <= 0.01, (kind, q, tv)


def test_stationarity_tabulated_kernel():
    model = ModelSpec(LatticeSpec(8), NearestNeighbor(0.5), Tabulated([0.4, -0.3, 0.2, 0.1]), -0.2)
    for kind, q in [("classical", None), ("coupled", 2), ("coupled", 4)]:
        tv = empirical_tv(model, SamplerConfig(kind, q=q, seed=29, n_steps=4 * 10**6, burn_in=1000))
        assert tv <= 0.01, (kind, q, tv)
