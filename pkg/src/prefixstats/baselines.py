"""Monte Carlo estimators of interval statistics and the dense reference.

An estimator draws ``k`` i.i.d. quantile coordinates ``s ~ Unif(s0, s1)``,
evaluates a single-condition response source at each, and reduces the draws
with the statistic's natural empirical estimator.  Sources count every
evaluation so baselines and prefix queries can be compared on cost.

Seeding: the draws for a batch of queries come from a Philox stream keyed by
``SeedSequence([seed, *ids])``; a single query uses ``ids = (query_id,)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .condition_space import QuantileInterval
from .dynamics import as_param_array, instantaneous_energy
from .errors import DegenerateInterval, InvalidConfig
from .nn import Mlp
from .normalization import NormalizationStats
from .training import predict_energy
from .transforms import CdfAt, Exceedance, Max, Mean, Quantile, RangeProb, StatSpec

DENSE_REFERENCE_N = 1000
DENSE_REFERENCE_SEED = 1_000_003
SOURCES = ("analytic", "predictor")


class AnalyticSource:
    """Closed-form spiral energy ``h(x, s)``."""

    kind = "analytic"

    def __init__(self):
        self.evaluations = 0

    def __call__(self, params: np.ndarray, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        self.evaluations += s.size
        return instantaneous_energy(params, s)


class PredictorSource:
    """Trained single-condition predictor, returning physical energy."""

    kind = "predictor"

    def __init__(self, net: Mlp, norm: NormalizationStats):
        self.net = net
        self.norm = norm
        self.evaluations = 0

    def __call__(self, params: np.ndarray, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        p = np.asarray(params, dtype=float)
        shape = s.shape
        flat_s = s.reshape(-1)
        flat_p = np.broadcast_to(p, shape + (p.shape[-1],)).reshape(-1, p.shape[-1])
        self.evaluations += flat_s.size
        x = self.norm.normalize_params(flat_p)
        return predict_energy(self.net, self.norm, x, flat_s).reshape(shape)


class FunctionSource:
    """Wraps ``fn(params, s)``; used for stubs such as a constant predictor."""

    kind = "function"

    def __init__(self, fn):
        self.fn = fn
        self.evaluations = 0

    def __call__(self, params, s):
        s = np.asarray(s, dtype=float)
        self.evaluations += s.size
        return np.broadcast_to(np.asarray(self.fn(params, s), dtype=float), s.shape)


@dataclass(frozen=True)
class McConfig:
    k: int
    seeds: Sequence[int] = field(default=(0, 1, 2, 3, 4))
    source: str = "analytic"

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise InvalidConfig(f"k must be a positive integer, got {self.k}")
        if len(self.seeds) == 0:
            raise InvalidConfig("at least one seed is required")
        if self.source not in SOURCES:
            raise InvalidConfig(f"source must be one of {SOURCES}")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    @property
    def label(self) -> str:
        return f"mc{self.k}"


def derive_rng(seed: int, *ids: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, ids)])))


def reduce_draws(values: np.ndarray, stat: StatSpec) -> np.ndarray:
    """Empirical statistic along the last axis of ``values``."""
    v = np.asarray(values, dtype=float)
    if isinstance(stat, Mean):
        return v.mean(axis=-1)
    if isinstance(stat, Max):
        return v.max(axis=-1)
    if isinstance(stat, Quantile):
        return np.quantile(v, stat.alpha, axis=-1)
    if isinstance(stat, CdfAt):
        return (v <= stat.y).mean(axis=-1)
    if isinstance(stat, Exceedance):
        return (v > stat.tau).mean(axis=-1)
    if isinstance(stat, RangeProb):
        return ((v > stat.a) & (v <= stat.b)).mean(axis=-1)
    raise InvalidConfig(f"unsupported statistic {stat!r}")


def batch_mc_estimate(source, params, s0, s1, stat: StatSpec, k: int, seed: int, ids: Sequence[int] = ()) -> np.ndarray:
    """MC estimates for ``n`` queries at once; ``params`` is ``(n, 7)``."""
    if int(k) != k or k < 1:
        raise InvalidConfig(f"k must be a positive integer, got {k}")
    p = np.atleast_2d(as_param_array(params))
    s0 = np.atleast_1d(np.asarray(s0, dtype=float))
    s1 = np.atleast_1d(np.asarray(s1, dtype=float))
    if np.any(~(s1 > s0)) or np.any(s0 < 0) or np.any(s1 > 1):
        raise DegenerateInterval("every interval needs 0 <= s0 < s1 <= 1")
    u = derive_rng(seed, *ids).random((len(s0), int(k)))
    s = s0[:, None] + (s1 - s0)[:, None] * u
    return reduce_draws(source(p[:, None, :], s), stat)


def mc_estimate(source, params, interval, stat: StatSpec, k: int, seed: int, query_id: int = 0) -> float:
    iv = interval if isinstance(interval, QuantileInterval) else QuantileInterval(*map(float, interval))
    return float(batch_mc_estimate(source, [as_param_array(params)], [iv.s0], [iv.s1], stat, k, seed, (query_id,))[0])


def dense_reference(source, params, interval, stat: StatSpec, n: int = DENSE_REFERENCE_N, query_id: int = 0) -> float:
    """``mc_estimate`` with ``k = n`` and the pinned reference seed."""
    if n < 2:
        raise InvalidConfig(f"dense reference needs n >= 2, got {n}")
    return mc_estimate(source, params, interval, stat, n, DENSE_REFERENCE_SEED, query_id)


def make_source(kind: str, predictor: Optional[Mlp] = None, norm: Optional[NormalizationStats] = None):
    if kind == "analytic":
        return AnalyticSource()
    if kind == "predictor":
        if predictor is None or norm is None:
            raise InvalidConfig("predictor source needs a trained predictor and its normalization")
        return PredictorSource(predictor, norm)
    raise InvalidConfig(f"unknown source {kind!r}")
