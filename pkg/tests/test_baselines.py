import numpy as np
import pytest

from prefixstats.baselines import (
    DENSE_REFERENCE_SEED,
    AnalyticSource,
    FunctionSource,
    McConfig,
    PredictorSource,
    batch_mc_estimate,
    dense_reference,
    make_source,
    mc_estimate,
    reduce_draws,
)
from prefixstats.dynamics import generate_dataset, instantaneous_energy, oracle_interval_stat, sample_params
from prefixstats.errors import DegenerateInterval, InvalidConfig
from prefixstats.nn import Mlp, MlpConfig
from prefixstats.normalization import NormalizationStats
from prefixstats.transforms import CdfAt, Exceedance, Max, Mean, Quantile, RangeProb

X = sample_params(0, 0)


def constant_source(k0):
    return FunctionSource(lambda p, s: np.full(np.shape(s), k0))


@pytest.mark.parametrize("k", [1, 10, 400])
def test_constant_source_mean_is_exact(k):
    assert mc_estimate(constant_source(4.25), X, (0.1, 0.8), Mean(), k, seed=3) == 4.25


def test_single_draw_max_is_that_draw():
    src = AnalyticSource()
    v = mc_estimate(src, X, (0.2, 0.9), Max(10.0), 1, seed=7)
    u = np.random.Generator(np.random.Philox(np.random.SeedSequence([7, 0]))).random((1, 1))[0, 0]
    assert v == instantaneous_energy(X, 0.2 + 0.7 * u)
    assert src.evaluations == 1


def test_dense_reference_on_constant():
    assert dense_reference(constant_source(-2.0), X, (0.0, 1.0), Mean()) == -2.0


def test_dense_reference_matches_oracle():
    # reference trajectory: first test trajectory of the default seed-0 dataset
    p = sample_params(0, 2000)
    ref = oracle_interval_stat(p, (0.0, 0.97), Mean())
    assert abs(dense_reference(AnalyticSource(), p, (0.0, 0.97), Mean()) - ref) <= 0.01 * abs(ref)


def test_dense_reference_error_is_within_sampling_noise():
    for traj in range(10):
        p = sample_params(0, traj)
        ref = oracle_interval_stat(p, (0.0, 0.97), Mean())
        h = instantaneous_energy(p, np.linspace(0.0, 0.97, 4001))
        se = h.std() / np.sqrt(1000)
        assert abs(dense_reference(AnalyticSource(), p, (0.0, 0.97), Mean()) - ref) <= 3 * se


def test_dense_reference_is_deterministic():
    a = dense_reference(AnalyticSource(), X, (0.1, 0.6), Quantile(0.5))
    b = dense_reference(AnalyticSource(), X, (0.1, 0.6), Quantile(0.5))
    assert a == b
    assert a == mc_estimate(AnalyticSource(), X, (0.1, 0.6), Quantile(0.5), 1000, DENSE_REFERENCE_SEED)


def test_dense_reference_needs_two_samples():
    with pytest.raises(InvalidConfig):
        dense_reference(AnalyticSource(), X, (0.1, 0.6), Mean(), n=1)


def test_seeds_and_query_ids_give_distinct_streams():
    vals = {mc_estimate(AnalyticSource(), X, (0.0, 1.0), Mean(), 10, seed, q) for seed in range(3) for q in range(3)}
    assert len(vals) == 9


def test_mc_mean_is_unbiased():
    p = sample_params(0, 3)
    iv = (0.2, 0.9)
    ref = oracle_interval_stat(p, iv, Mean())
    est = np.array([mc_estimate(AnalyticSource(), p, iv, Mean(), 10, seed) for seed in range(200)])
    se = est.std(ddof=1) / np.sqrt(len(est))
    assert abs(est.mean() - ref) <= 3 * se


def test_batch_matches_single_queries():
    P = np.stack([sample_params(0, i) for i in range(4)])
    s0 = np.array([0.0, 0.1, 0.2, 0.3])
    s1 = s0 + 0.5
    batch = batch_mc_estimate(AnalyticSource(), P, s0, s1, Mean(), 16, seed=2, ids=(9,))
    u = np.random.Generator(np.random.Philox(np.random.SeedSequence([2, 9]))).random((4, 16))
    manual = [instantaneous_energy(P[i], s0[i] + 0.5 * u[i]).mean() for i in range(4)]
    np.testing.assert_allclose(batch, manual, rtol=0, atol=1e-12)


def test_reduce_draws_estimators():
    v = np.array([[1.0, 4.0, 2.0, 3.0]])
    assert reduce_draws(v, Mean())[0] == 2.5
    assert reduce_draws(v, Max(1.0))[0] == 4.0
    assert reduce_draws(v, Quantile(0.5))[0] == 2.5
    assert reduce_draws(v, CdfAt(2.0))[0] == 0.5
    assert reduce_draws(v, Exceedance(2.0))[0] == 0.5
    assert reduce_draws(v, RangeProb(1.0, 3.0))[0] == 0.5


def test_degenerate_interval():
    with pytest.raises(DegenerateInterval):
        mc_estimate(AnalyticSource(), X, (0.5, 0.5), Mean(), 10, 0)
    with pytest.raises(DegenerateInterval):
        batch_mc_estimate(AnalyticSource(), [X], [0.6], [0.5], Mean(), 10, 0)


def test_k_must_be_positive():
    with pytest.raises(InvalidConfig):
        mc_estimate(AnalyticSource(), X, (0.1, 0.5), Mean(), 0, 0)


def test_mc_config_validation():
    assert McConfig(10).seeds == (0, 1, 2, 3, 4)
    assert McConfig(100).label == "mc100"
    with pytest.raises(InvalidConfig):
        McConfig(0)
    with pytest.raises(InvalidConfig):
        McConfig(10, seeds=())
    with pytest.raises(InvalidConfig):
        McConfig(10, source="grid")


def test_predictor_source_counts_and_shapes():
    ds = generate_dataset(8, 2, 8, seed=0)
    net = Mlp.init(MlpConfig(8, 8, 1, 1, seed=0))
    src = PredictorSource(net, ds.normalization)
    out = src(np.stack([X, X])[:, None, :], np.full((2, 5), 0.3))
    assert out.shape == (2, 5)
    assert src.evaluations == 10
    np.testing.assert_allclose(out, out[0, 0])


def test_make_source():
    assert isinstance(make_source("analytic"), AnalyticSource)
    with pytest.raises(InvalidConfig):
        make_source("predictor")
    with pytest.raises(InvalidConfig):
        make_source("nope")
    net = Mlp.init(MlpConfig(8, 4, 1, 1, seed=0))
    assert isinstance(make_source("predictor", net, NormalizationStats.identity()), PredictorSource)
