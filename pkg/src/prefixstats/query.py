"""Interval-statistic queries answered from a trained prefix network.

For a quantile interval ``[s0, s1]`` with mass ``m`` the averaged signal is
``(s1 H(s1) - s0 H(s0)) / m``; when ``s0 == 0`` the left term vanishes and
only one network pass is made.  Every pass is counted.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .condition_space import ConditionDistribution, QuantileInterval, interval_to_quantiles
from .dynamics import as_param_array, energy_bracket
from .errors import BracketInvalid, DegenerateInterval, StatNetMismatch
from .nn import Checkpoint, Mlp, prefix_input
from .normalization import NormalizationStats
from .transforms import (
    CdfAt,
    Exceedance,
    Max,
    Mean,
    Quantile,
    RangeProb,
    StatSpec,
    phi,
    stat_family,
    stat_from_dict,
)


class PrefixModel:
    """A prefix network plus everything needed to interpret its outputs.

    ``prefix`` takes normalized parameters, quantile coordinates and (for
    CDF-family nets) normalized thresholds, and counts forward passes in
    :attr:`evaluations`.
    """

    def __init__(
        self,
        net: Optional[Mlp],
        family: str,
        norm: NormalizationStats,
        beta: Optional[float] = None,
        y_bracket: Optional[tuple[float, float]] = None,
        condition: Optional[ConditionDistribution] = None,
    ):
        self.net = net
        self.family = family
        self.norm = norm
        self.beta = beta
        self.y_bracket = y_bracket
        self.condition = condition or ConditionDistribution()
        self.evaluations = 0

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "PrefixModel":
        meta = ckpt.metadata
        if meta.get("role") != "prefix":
            raise StatNetMismatch(f"checkpoint role is {meta.get('role')!r}, not a prefix network")
        stat = stat_from_dict(meta["stat"])
        bracket = meta.get("y_bracket")
        cond = meta.get("condition")
        return cls(
            ckpt.net,
            meta["family"],
            ckpt.normalization or NormalizationStats.identity(),
            beta=stat.beta if isinstance(stat, Max) else None,
            y_bracket=None if bracket is None else (float(bracket[0]), float(bracket[1])),
            condition=None if cond is None else ConditionDistribution.from_dict(cond),
        )

    def _evaluate(self, x_norm: np.ndarray, s: np.ndarray, y_bar: Optional[np.ndarray]) -> np.ndarray:
        return self.net.forward(prefix_input(x_norm, s, y_bar))[:, 0]

    def prefix(self, x_norm, s, y_bar=None) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        x = np.atleast_2d(np.asarray(x_norm, dtype=float))
        n = max(len(s), len(x))
        if (y_bar is None) != (self.family != "cdf"):
            raise StatNetMismatch("thresholds must be supplied exactly for CDF-family networks")
        y = None if y_bar is None else np.broadcast_to(np.asarray(y_bar, dtype=float).reshape(-1), (n,))
        if n == 0:
            return np.zeros(0)
        self.evaluations += n
        return np.asarray(self._evaluate(np.broadcast_to(x, (n, x.shape[1])), np.broadcast_to(s, (n,)), y), dtype=float)


class FunctionPrefix(PrefixModel):
    """Prefix model backed by a plain function ``fn(x_norm, s, y_bar)``; for stubs and oracles."""

    def __init__(self, fn: Callable, family: str = "mean", norm: Optional[NormalizationStats] = None, **kw):
        super().__init__(None, family, norm or NormalizationStats.identity(), **kw)
        self.fn = fn

    def _evaluate(self, x_norm, s, y_bar):
        out = self.fn(x_norm, s, y_bar)
        return np.broadcast_to(np.asarray(out, dtype=float), s.shape)


@dataclass(frozen=True)
class IntervalQuery:
    params: object
    c0: float
    c1: float
    stat: StatSpec


@dataclass(frozen=True)
class QueryResult:
    value: float
    n_evaluations: int
    interval: QuantileInterval

    def to_json(self) -> str:
        return json.dumps(
            {"value": self.value, "n_evaluations": self.n_evaluations, "s0": self.interval.s0, "s1": self.interval.s1}
        )


def batch_interval_integrals(model: PrefixModel, x_norm, s0, s1, y_bar=None) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``(s1 H(s1) - s0 H(s0)) / m``; returns ``(values, passes per query)``."""
    x = np.atleast_2d(np.asarray(x_norm, dtype=float))
    s0 = np.atleast_1d(np.asarray(s0, dtype=float))
    s1 = np.atleast_1d(np.asarray(s1, dtype=float))
    n = len(s0)
    x = np.broadcast_to(x, (n, x.shape[1]))
    m = s1 - s0
    if np.any(~(m > 0)):
        raise DegenerateInterval("every query interval needs s1 > s0")
    y = None if y_bar is None else np.broadcast_to(np.asarray(y_bar, dtype=float).reshape(-1), (n,))
    left = s0 > 0
    rows_x = np.concatenate([x, x[left]])
    rows_s = np.concatenate([s1, s0[left]])
    rows_y = None if y is None else np.concatenate([y, y[left]])
    before = model.evaluations
    vals = model.prefix(rows_x, rows_s, rows_y)
    passes = 1 + left.astype(int)
    assert model.evaluations - before == int(passes.sum())
    total = s1 * vals[:n]
    total[left] -= s0[left] * vals[n:]
    return total / m, passes


def normalized_interval_integral(model: PrefixModel, params, interval: QuantileInterval, threshold=None) -> float:
    """Averaged signal over one interval; ``threshold`` is a normalized level for CDF nets."""
    x = model.norm.normalize_params(as_param_array(params))
    v, _ = batch_interval_integrals(model, x, [interval.s0], [interval.s1], None if threshold is None else [threshold])
    return float(v[0])


def _check_family(model: PrefixModel, stat: StatSpec) -> None:
    fam = stat_family(stat)
    if fam != model.family:
        raise StatNetMismatch(f"statistic {type(stat).__name__} needs a {fam!r} network, checkpoint is {model.family!r}")
    if isinstance(stat, Max) and model.beta is not None and stat.beta != model.beta:
        raise StatNetMismatch(f"network was trained for beta={model.beta}, query asks beta={stat.beta}")


def batch_cdf(model: PrefixModel, x_norm, s0, s1, y) -> tuple[np.ndarray, np.ndarray]:
    """Interval CDF at physical levels ``y``; ``(values in [0, 1], passes)``."""
    y_bar = model.norm.normalize_energy(np.broadcast_to(np.asarray(y, dtype=float), np.shape(s0)))
    v, passes = batch_interval_integrals(model, x_norm, s0, s1, y_bar)
    return np.clip(v, 0.0, 1.0), passes


def batch_interval_statistic(model: PrefixModel, x_norm, s0, s1, stat: StatSpec) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised statistic for many queries sharing one ``stat``."""
    _check_family(model, stat)
    if isinstance(stat, (Mean, Max)):
        v, passes = batch_interval_integrals(model, x_norm, s0, s1)
        return np.atleast_1d(phi(stat, v, model.norm)), passes
    if isinstance(stat, CdfAt):
        return batch_cdf(model, x_norm, s0, s1, stat.y)
    if isinstance(stat, Exceedance):
        v, passes = batch_cdf(model, x_norm, s0, s1, stat.tau)
        return 1.0 - v, passes
    if isinstance(stat, RangeProb):
        vb, pb = batch_cdf(model, x_norm, s0, s1, stat.b)
        va, pa = batch_cdf(model, x_norm, s0, s1, stat.a)
        return np.clip(vb - va, 0.0, 1.0), pa + pb
    if isinstance(stat, Quantile):
        return batch_quantile(model, x_norm, s0, s1, stat.alpha, stat.bisect_steps)
    raise StatNetMismatch(f"unsupported statistic {stat!r}")


def batch_quantile(
    model: PrefixModel,
    x_norm,
    s0,
    s1,
    alpha: float,
    steps: int = 5,
    y_bracket: Optional[tuple[float, float]] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Fixed-budget bisection on the interval CDF with a running monotone envelope.

    The CDF value compared against ``alpha`` at a probe ``y`` is the maximum
    over all probes made so far at levels ``<= y``, which keeps brackets
    consistent when the learned CDF wiggles.  Returns the final bracket
    midpoints and the passes spent per query.
    """
    if model.family != "cdf":
        raise StatNetMismatch(f"quantiles need a 'cdf' network, checkpoint is {model.family!r}")
    bracket = y_bracket or model.y_bracket
    if bracket is None or not bracket[0] < bracket[1]:
        raise BracketInvalid(f"need y_min < y_max, got {bracket}")
    s0 = np.atleast_1d(np.asarray(s0, dtype=float))
    n = len(s0)
    lo = np.full(n, float(bracket[0]))
    hi = np.full(n, float(bracket[1]))
    probe_y = np.empty((n, steps))
    probe_f = np.empty((n, steps))
    passes = np.zeros(n, dtype=int)
    for j in range(steps):
        mid = 0.5 * (lo + hi)
        f, p = batch_cdf(model, x_norm, s0, s1, mid)
        passes += p
        probe_y[:, j] = mid
        probe_f[:, j] = f
        below = probe_y[:, : j + 1] <= mid[:, None]
        envelope = np.max(np.where(below, probe_f[:, : j + 1], -np.inf), axis=1)
        up = envelope >= alpha
        hi = np.where(up, mid, hi)
        lo = np.where(up, lo, mid)
    return 0.5 * (lo + hi), passes


def _query_interval(model: PrefixModel, query: IntervalQuery) -> QuantileInterval:
    return interval_to_quantiles(model.condition, query.c0, query.c1)


def interval_statistic(model: PrefixModel, query: IntervalQuery, norm: Optional[NormalizationStats] = None) -> QueryResult:
    """Answer one interval query (mean, max, CDF, exceedance, range or quantile)."""
    if norm is not None:
        model.norm = norm
    iv = _query_interval(model, query)
    x = model.norm.normalize_params(as_param_array(query.params))
    v, passes = batch_interval_statistic(model, x, [iv.s0], [iv.s1], query.stat)
    return QueryResult(float(v[0]), int(passes[0]), iv)


def quantile_bisect(
    model: PrefixModel,
    query: IntervalQuery,
    y_bracket: Optional[tuple[float, float]] = None,
    norm: Optional[NormalizationStats] = None,
) -> QueryResult:
    if not isinstance(query.stat, Quantile):
        raise StatNetMismatch("quantile_bisect needs a Quantile statistic")
    if y_bracket is not None and not y_bracket[0] < y_bracket[1]:
        raise BracketInvalid(f"need y_min < y_max, got {y_bracket}")
    if norm is not None:
        model.norm = norm
    iv = _query_interval(model, query)
    x = model.norm.normalize_params(as_param_array(query.params))
    v, passes = batch_quantile(model, x, [iv.s0], [iv.s1], query.stat.alpha, query.stat.bisect_steps, y_bracket)
    return QueryResult(float(v[0]), int(passes[0]), iv)


def default_y_bracket(dataset_or_energies) -> tuple[float, float]:
    """Train-split energy range padded by 5% of its span (``k +/- 1`` for a constant)."""
    return energy_bracket(getattr(dataset_or_energies, "train_energy", dataset_or_energies))
