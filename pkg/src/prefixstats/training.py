"""Predictor pretraining and identity-matching training of prefix networks.

The prefix network ``H(x, s)`` is fitted to the first-order identity
``s dH/ds + H = psi`` by regressing ``H`` onto the frozen target
``psi - s dH/ds``, with ``dH/ds`` taken by finite differences.  Each step mixes
a predictor branch (random ``s``, signal from a single-condition model) and a
data branch (a stored grid sample), weighted ``1`` and ``lambda_data``.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Optional, Union

import numpy as np

from .condition_space import ConditionDistribution
from .dynamics import Dataset, instantaneous_energy
from .errors import InvalidConfig, MissingPredictor, NonFiniteLoss
from .nn import Checkpoint, Mlp, MlpConfig, OneCycleSchedule, OptimizerState, adamw_step, fd_partial_s, prefix_input
from .normalization import NormalizationStats
from .query import PrefixModel, default_y_bracket
from .transforms import (
    EXP_CLAMP,
    Mean,
    SmoothingSchedule,
    StatSpec,
    anneal_eps,
    parse_stat,
    psi_cdf,
    stat_family,
    stat_from_dict,
    stat_to_dict,
)

log = logging.getLogger(__name__)

PREDICTOR_MODES = ("pretrained-mlp", "analytic-oracle")
THRESHOLD_SAMPLING = ("per-step", "per-sample")

# Energy signal hook: (physical params (n, 7), s (n,)) -> energy (n,)
EnergySignal = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class TrainConfig:
    epochs: int = 2000
    batch_size: int = 64
    lambda_data: float = 0.1
    delta_s: float = 1e-2
    stat: StatSpec = field(default_factory=Mean)
    max_lr: float = 1e-3
    warmup_fraction: float = 0.3
    final_lr_fraction: float = 1e-2
    weight_decay: float = 0.0
    smoothing: SmoothingSchedule = field(default_factory=SmoothingSchedule)
    seed: int = 0
    predictor_mode: str = "pretrained-mlp"
    threshold_sampling: str = "per-sample"
    hidden_width: int = 256
    hidden_layers: int = 4

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidConfig("epochs must be >= 1")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be >= 1")
        if self.lambda_data < 0:
            raise InvalidConfig("lambda_data must be >= 0")
        if not 0 < self.delta_s < 0.5:
            raise InvalidConfig("delta_s must lie in (0, 0.5)")
        if self.predictor_mode not in PREDICTOR_MODES:
            raise InvalidConfig(f"predictor_mode must be one of {PREDICTOR_MODES}")
        if self.threshold_sampling not in THRESHOLD_SAMPLING:
            raise InvalidConfig(f"threshold_sampling must be one of {THRESHOLD_SAMPLING}")

    def schedule(self, total_steps: int) -> OneCycleSchedule:
        return OneCycleSchedule(self.max_lr, total_steps, self.warmup_fraction, self.final_lr_fraction)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["stat"] = stat_to_dict(self.stat)
        d["smoothing"] = asdict(self.smoothing)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainConfig":
        d = dict(d)
        if "stat" in d:
            stat = d["stat"]
            if isinstance(stat, str):
                d["stat"] = parse_stat(stat)
            else:
                d["stat"] = stat_from_dict(stat)
        if "smoothing" in d:
            d["smoothing"] = SmoothingSchedule(**d["smoothing"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(f"unknown training options {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpochLog:
    epoch: int
    loss_neural: float
    loss_data: float
    loss_total: float
    lr: float
    eps: float


@dataclass
class TrainReport:
    epochs: list[EpochLog] = field(default_factory=list)
    checkpoint_path: Optional[str] = None
    wall_time: float = 0.0
    test_loss_neural: Optional[float] = None

    def write_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss_neural", "loss_data", "loss_total", "lr", "eps"])
            for e in self.epochs:
                w.writerow([e.epoch] + [format(v, ".17g") for v in (e.loss_neural, e.loss_data, e.loss_total, e.lr, e.eps)])
        return path


@dataclass
class TrainResult:
    net: Mlp
    report: TrainReport
    checkpoint: Checkpoint


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), stream])))


def predict_energy(net: Mlp, norm: NormalizationStats, x_norm, s) -> np.ndarray:
    """Physical energy from a predictor that regresses z-scored energy on ``x (+) s``."""
    return norm.denormalize_energy(net.forward(prefix_input(x_norm, s))[:, 0])


def _analytic_signal(params: np.ndarray, s: np.ndarray) -> np.ndarray:
    return instantaneous_energy(params, s)


# ---------------------------------------------------------------------------
# predictor
# ---------------------------------------------------------------------------


def train_predictor(dataset: Dataset, config: TrainConfig) -> TrainResult:
    """MSE regression of z-scored energy on ``x_norm (+) s`` over every train sample."""
    if dataset.n_train == 0:
        raise InvalidConfig("dataset has no training trajectories")
    t0 = time.perf_counter()
    norm = dataset.normalization
    n, g = dataset.train_energy.shape
    x = norm.normalize_params(dataset.train_params)
    inputs = prefix_input(np.repeat(x, g, axis=0), np.tile(dataset.grid, n))
    targets = norm.normalize_energy(dataset.train_energy.reshape(-1))

    net = Mlp.init(MlpConfig(inputs.shape[1], config.hidden_width, config.hidden_layers, 1, seed=config.seed))
    opt = OptimizerState.for_net(net, config.weight_decay)
    steps_per_epoch = math.ceil(len(inputs) / config.batch_size)
    sched = config.schedule(config.epochs * steps_per_epoch)
    rng = _rng(config.seed, 2)
    report = TrainReport()
    step = 0
    for epoch in range(config.epochs):
        perm = rng.permutation(len(inputs))
        total = 0.0
        lr0 = sched.lr(step)
        for k in range(steps_per_epoch):
            idx = perm[k * config.batch_size:(k + 1) * config.batch_size]
            out, cache = net.forward_cache(inputs[idx])
            r = out[:, 0] - targets[idx]
            loss = float(np.mean(r * r))
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"predictor loss became {loss} at epoch {epoch}, step {k}")
            grads = net.backward(cache, 2.0 * r / len(idx))
            adamw_step(net, opt, grads, sched.lr(step))
            step += 1
            total += loss * len(idx)
        mse = total / len(inputs)
        report.epochs.append(EpochLog(epoch, mse, mse, mse, lr0, 0.0))
        log.debug("predictor epoch %d mse %.3e", epoch, mse)
    report.wall_time = time.perf_counter() - t0
    meta = {
        "role": "predictor",
        "train_config": config.to_dict(),
        "dataset_seed": dataset.seed,
        "final_mse": report.epochs[-1].loss_total,
    }
    return TrainResult(net, report, Checkpoint(net, norm, meta))


# ---------------------------------------------------------------------------
# prefix network
# ---------------------------------------------------------------------------


def identity_target(psi_value, s, partial_s):
    """Frozen regression target ``psi - s * dH/ds``; callers treat it as a constant."""
    return np.asarray(psi_value, dtype=float) - np.asarray(s, dtype=float) * np.asarray(partial_s, dtype=float)


def identity_loss_grads(net: Mlp, inputs: np.ndarray, targets: np.ndarray, weights: np.ndarray):
    """Weighted squared error against constant targets and its parameter gradients.

    Returns ``(per_row_squared_error, grads)``.  Rows with zero weight are
    dropped before backpropagation, so they cannot influence the gradient.
    """
    keep = weights != 0
    out, cache = net.forward_cache(inputs[keep])
    r = out[:, 0] - targets[keep]
    grads = net.backward(cache, 2.0 * weights[keep] * r)
    sq = np.full(len(inputs), np.nan)
    sq[keep] = r * r
    return sq, grads


def _psi_normalized(stat: StatSpec, z, y_bar, eps):
    family = stat_family(stat)
    if family == "mean":
        return z
    if family == "max":
        return np.exp(np.clip(stat.beta * z, -EXP_CLAMP, EXP_CLAMP))
    return psi_cdf(z, y_bar, eps)


def _normalized_bracket(dataset: Dataset) -> tuple[float, float]:
    lo, hi = default_y_bracket(dataset)
    n = dataset.normalization
    return float(n.normalize_energy(lo)), float(n.normalize_energy(hi))


def _prefix_residual_sq(net, x, s, psi_vals, thr, delta_s):
    d = fd_partial_s(net, x, s, delta_s, threshold=thr)
    tgt = identity_target(psi_vals, s, d)
    out = net.forward(prefix_input(x, s, thr))[:, 0]
    return (out - tgt) ** 2


def evaluate_identity_loss(
    net: Mlp,
    dataset: Dataset,
    config: TrainConfig,
    predictor: Optional[Mlp] = None,
    split: str = "test",
    draws_per_trajectory: int = 8,
    eps: Optional[float] = None,
    seed: int = 12345,
) -> float:
    """Predictor-branch identity loss on a split at fixed random ``s`` (and thresholds)."""
    norm = dataset.normalization
    params, _ = dataset.split(split)
    rng = _rng(seed, 7)
    n = len(params) * draws_per_trajectory
    p = np.repeat(params, draws_per_trajectory, axis=0)
    x = norm.normalize_params(p)
    s = config.delta_s + (1.0 - config.delta_s) * (1.0 - rng.random(n))
    if config.predictor_mode == "analytic-oracle":
        h = _analytic_signal(p, s)
    elif predictor is None:
        raise MissingPredictor("the predictor branch needs a trained predictor")
    else:
        h = predict_energy(predictor, norm, x, s)
    thr = None
    if stat_family(config.stat) == "cdf":
        lo, hi = _normalized_bracket(dataset)
        thr = rng.uniform(lo, hi, n)
    e = config.smoothing.eps_end if eps is None else eps
    psi_vals = _psi_normalized(config.stat, norm.normalize_energy(h), thr, e)
    return float(np.mean(_prefix_residual_sq(net, x, s, psi_vals, thr, config.delta_s)))


def train_prefix(
    dataset: Dataset,
    predictor: Optional[Mlp],
    config: TrainConfig,
    signal: Optional[EnergySignal] = None,
    evaluate_test: bool = False,
    condition: Optional[ConditionDistribution] = None,
) -> TrainResult:
    """Hybrid identity-matching training of a prefix network.

    Per step, each trajectory in the batch contributes one predictor-branch
    point at ``s ~ Unif(delta_s, 1]`` and one data-branch point at a random
    stored grid sample.  ``signal`` overrides the analytic energy used when
    ``predictor_mode == "analytic-oracle"``.
    """
    analytic = config.predictor_mode == "analytic-oracle"
    if not analytic and predictor is None:
        raise MissingPredictor("predictor_mode 'pretrained-mlp' needs a trained predictor")
    signal = signal or _analytic_signal
    t0 = time.perf_counter()
    norm = dataset.normalization
    family = stat_family(config.stat)
    x_all = norm.normalize_params(dataset.train_params)
    z_all = norm.normalize_energy(dataset.train_energy)
    grid = dataset.grid
    n, g = z_all.shape
    y_lo, y_hi = _normalized_bracket(dataset)

    in_dim = x_all.shape[1] + 1 + (1 if family == "cdf" else 0)
    net = Mlp.init(MlpConfig(in_dim, config.hidden_width, config.hidden_layers, 1, seed=config.seed))
    opt = OptimizerState.for_net(net, config.weight_decay)
    b_size = min(config.batch_size, n)
    steps_per_epoch = math.ceil(n / b_size)
    sched = config.schedule(config.epochs * steps_per_epoch)
    rng = _rng(config.seed, 1)
    ds = config.delta_s
    weights_cache: dict[int, np.ndarray] = {}
    report = TrainReport()
    step = 0
    for epoch in range(config.epochs):
        eps = anneal_eps(config.smoothing, epoch, max(config.epochs - 1, 1)) if family == "cdf" else 0.0
        perm = rng.permutation(n)
        sums = np.zeros(2)
        lr0 = sched.lr(step)
        for k in range(steps_per_epoch):
            idx = perm[k * b_size:(k + 1) * b_size]
            b = len(idx)
            xb = x_all[idx]
            s_n = ds + (1.0 - ds) * (1.0 - rng.random(b))
            if analytic:
                h_n = norm.normalize_energy(signal(dataset.train_params[idx], s_n))
            else:
                h_n = predictor.forward(prefix_input(xb, s_n))[:, 0]
            kk = rng.integers(0, g, b)
            s_d = grid[kk]
            z_d = z_all[idx, kk]
            if family == "cdf":
                if config.threshold_sampling == "per-step":
                    thr = np.full(b, rng.uniform(y_lo, y_hi))
                else:
                    thr = rng.uniform(y_lo, y_hi, b)
                thr2 = np.concatenate([thr, thr])
            else:
                thr2 = None
            x2 = np.concatenate([xb, xb])
            s2 = np.concatenate([s_n, s_d])
            psi2 = _psi_normalized(config.stat, np.concatenate([h_n, z_d]), thr2, eps)
            target = identity_target(psi2, s2, fd_partial_s(net, x2, s2, ds, threshold=thr2))
            if b not in weights_cache:
                weights_cache[b] = np.concatenate([np.full(b, 1.0 / b), np.full(b, config.lambda_data / b)])
            w = weights_cache[b]
            inputs = prefix_input(x2, s2, thr2)
            sq, grads = identity_loss_grads(net, inputs, target, w)
            if config.lambda_data == 0:
                # data rows were skipped by backprop; still log their loss
                sq[b:] = (net.forward(inputs[b:])[:, 0] - target[b:]) ** 2
            ln, ld = float(sq[:b].mean()), float(sq[b:].mean())
            if not (math.isfinite(ln) and math.isfinite(ld)):
                raise NonFiniteLoss(f"prefix loss became non-finite at epoch {epoch}, step {k} (neural {ln}, data {ld})")
            adamw_step(net, opt, grads, sched.lr(step))
            step += 1
            sums += (ln, ld)
        ln, ld = sums / steps_per_epoch
        report.epochs.append(EpochLog(epoch, ln, ld, ln + config.lambda_data * ld, lr0, eps))
        log.debug("prefix epoch %d neural %.3e data %.3e", epoch, ln, ld)
    if evaluate_test:
        report.test_loss_neural = evaluate_identity_loss(net, dataset, config, predictor)
    report.wall_time = time.perf_counter() - t0
    meta = {
        "role": "prefix",
        "family": family,
        "stat": stat_to_dict(config.stat),
        "train_config": config.to_dict(),
        "dataset_seed": dataset.seed,
        "y_bracket": list(default_y_bracket(dataset)),
        "condition": (condition or ConditionDistribution()).to_dict(),
    }
    return TrainResult(net, report, Checkpoint(net, norm, meta))


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


@dataclass
class ResidualDiagnostics:
    s: np.ndarray
    prefix: np.ndarray
    psi: np.ndarray
    reconstructed: np.ndarray   # d/ds [s H(s)] = H + s dH/ds
    residual: np.ndarray        # reconstructed - psi


def residual_diagnostics(
    prefix: Union[PrefixModel, Callable[[np.ndarray], np.ndarray]],
    params,
    psi_fn: Callable[[np.ndarray], np.ndarray],
    grid: int = 256,
    delta_s: float = 1e-2,
    threshold: Optional[float] = None,
    clip: bool = True,
) -> ResidualDiagnostics:
    """Identity residual ``s dH/ds + H - psi`` on a uniform grid over ``[0, 1]``.

    ``prefix`` is either a trained :class:`PrefixModel` or any callable
    ``H(s)`` (for instance the quadrature prefix); ``psi_fn`` gives the local
    signal in the same units.  ``clip=False`` uses central differences at the
    ends too, for callables that extend past [0, 1].
    """
    if grid < 2:
        raise InvalidConfig("grid must be >= 2")
    s = np.linspace(0.0, 1.0, grid)
    if isinstance(prefix, PrefixModel):
        x = prefix.norm.normalize_params(np.atleast_2d(params))
        y_bar = None if threshold is None else float(prefix.norm.normalize_energy(threshold))
        h_fn = lambda t: prefix.prefix(x, t, y_bar)  # noqa: E731
    else:
        h_fn = lambda t: np.asarray(prefix(np.asarray(t)), dtype=float)  # noqa: E731
    values = h_fn(s)
    d = fd_partial_s(lambda _x, t: h_fn(t), np.zeros((1, 1)), s, delta_s, clip=clip)
    recon = values + s * d
    psi_vals = np.asarray(psi_fn(s), dtype=float)
    return ResidualDiagnostics(s, values, psi_vals, recon, recon - psi_vals)


def with_overrides(config: TrainConfig, **kw) -> TrainConfig:
    return replace(config, **kw)
