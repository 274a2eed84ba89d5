"""Synthetic planar spiral benchmark with a closed-form kinetic-energy signal.

A trajectory ``x = (a, b, phi_r, omega0, alpha_spin, phi_omega, phi0)`` traces
``r(s) * (cos eta(s), sin eta(s))`` over the normalised time ``s in [0, 1]``
with

    r(s)    = a + b s + 0.1 sin(2 pi s + phi_r)
    eta'(s) = omega0 + 2 pi alpha_spin cos(2 pi s + phi_omega)

and the response is the instantaneous kinetic energy
``h(x, s) = r'(s)^2 + (r(s) eta'(s))^2``.  ``phi0`` only rotates the curve and
therefore never enters ``h``.

Random draws use the counter-based Philox generator.  Trajectory ``i`` of a
dataset with seed ``seed`` is drawn from ``Philox(SeedSequence([seed, i]))``,
so every trajectory can be regenerated on its own, on any platform.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np

from .condition_space import QuantileInterval
from .errors import EmptyDataset, InvalidConfig
from .normalization import NormalizationStats
from .quadrature import adaptive_gauss_legendre, golden_section_max
from .transforms import (
    CdfAt,
    Exceedance,
    Max,
    Mean,
    Quantile,
    RangeProb,
    StatSpec,
    psi,
)

TWO_PI = 2.0 * math.pi

PARAM_FIELDS = ("a", "b", "phi_r", "omega0", "alpha_spin", "phi_omega", "phi0")
# Sampling box for each parameter.  The radius never drops below
# 0.8 - 0.3 - 0.1 = 0.4.
PARAM_RANGES = {
    "a": (0.8, 1.2),
    "b": (-0.3, 0.3),
    "phi_r": (0.0, TWO_PI),
    "omega0": (math.pi, 3.0 * math.pi),
    "alpha_spin": (0.0, 0.5),
    "phi_omega": (0.0, TWO_PI),
    "phi0": (0.0, TWO_PI),
}

MAX_GRID = 4096
QUANTILE_GRID = 8192
MAX_LATTICE = float(2**26)
CSV_HEADER = ("traj_id",) + PARAM_FIELDS + ("s", "energy")


@dataclass(frozen=True)
class TrajectoryParams:
    a: float
    b: float
    phi_r: float
    omega0: float
    alpha_spin: float
    phi_omega: float
    phi0: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in PARAM_FIELDS], dtype=float)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "TrajectoryParams":
        values = [float(v) for v in values]
        if len(values) != len(PARAM_FIELDS):
            raise InvalidConfig(f"expected {len(PARAM_FIELDS)} parameters, got {len(values)}")
        return cls(*values)


ParamsLike = Union[TrajectoryParams, np.ndarray, Sequence[float]]


def as_param_array(params: ParamsLike) -> np.ndarray:
    if isinstance(params, TrajectoryParams):
        return params.as_array()
    arr = np.asarray(params, dtype=float)
    if arr.shape[-1] != len(PARAM_FIELDS):
        raise InvalidConfig(f"parameter arrays need a trailing axis of {len(PARAM_FIELDS)}")
    return arr


def instantaneous_energy(params: ParamsLike, s):
    """Kinetic energy ``r'(s)^2 + (r(s) eta'(s))^2``.

    ``params`` may be a single trajectory or an ``(..., 7)`` array; extra
    trailing axes of ``s`` broadcast against the batch axes.
    """
    p = as_param_array(params)
    s = np.asarray(s, dtype=float)
    cols = [p[..., i] for i in range(len(PARAM_FIELDS))]
    extra = s.ndim - (p.ndim - 1)
    if extra > 0:
        cols = [c.reshape(c.shape + (1,) * extra) for c in cols]
    a, b, phi_r, omega0, alpha_spin, phi_omega, _ = cols
    r = a + b * s + 0.1 * np.sin(TWO_PI * s + phi_r)
    dr = b + 0.2 * math.pi * np.cos(TWO_PI * s + phi_r)
    deta = omega0 + TWO_PI * alpha_spin * np.cos(TWO_PI * s + phi_omega)
    out = dr * dr + (r * deta) ** 2
    return float(out) if out.ndim == 0 else out


def trajectory_rng(seed: int, traj_id: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(traj_id)])))


def sample_params(seed: int, traj_id: int) -> np.ndarray:
    rng = trajectory_rng(seed, traj_id)
    lo = np.array([PARAM_RANGES[f][0] for f in PARAM_FIELDS])
    hi = np.array([PARAM_RANGES[f][1] for f in PARAM_FIELDS])
    return lo + (hi - lo) * rng.random(len(PARAM_FIELDS))


@dataclass(frozen=True)
class Sample:
    params: TrajectoryParams
    s: float
    energy: float


@dataclass
class Dataset:
    seed: int
    grid: np.ndarray            # (G,) normalised timestamps k / (G - 1)
    train_params: np.ndarray    # (n_train, 7)
    train_energy: np.ndarray    # (n_train, G)
    test_params: np.ndarray     # (n_test, 7)
    test_energy: np.ndarray     # (n_test, G)
    normalization: NormalizationStats

    @property
    def n_train(self) -> int:
        return len(self.train_params)

    @property
    def n_test(self) -> int:
        return len(self.test_params)

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        if name == "train":
            return self.train_params, self.train_energy
        if name == "test":
            return self.test_params, self.test_energy
        raise InvalidConfig(f"unknown split {name!r}")

    def samples(self, split: str = "train") -> Iterator[Sample]:
        params, energy = self.split(split)
        for p, row in zip(params, energy):
            tp = TrajectoryParams.from_array(p)
            for s, y in zip(self.grid, row):
                yield Sample(tp, float(s), float(y))


def generate_dataset(n_train: int, n_test: int, grid_points_per_trajectory: int = 64, seed: int = 0) -> Dataset:
    if n_train < 1 or n_test < 1:
        raise InvalidConfig("n_train and n_test must be >= 1")
    if grid_points_per_trajectory < 2:
        raise InvalidConfig("need at least two grid points per trajectory")
    params = np.stack([sample_params(seed, i) for i in range(n_train + n_test)])
    grid = np.linspace(0.0, 1.0, grid_points_per_trajectory)
    energy = instantaneous_energy(params, np.broadcast_to(grid, (len(params), len(grid))))
    train_p, test_p = params[:n_train], params[n_train:]
    train_e, test_e = energy[:n_train], energy[n_train:]
    return Dataset(
        seed=int(seed),
        grid=grid,
        train_params=train_p,
        train_energy=train_e,
        test_params=test_p,
        test_energy=test_e,
        normalization=NormalizationStats.fit(train_p, train_e),
    )


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def energy_bracket(energies) -> tuple[float, float]:
    """Energy range padded by 5% of its span on each side.

    A constant response has no span; the bracket then falls back to ``k +/- 1``.
    """
    e = np.asarray(energies, dtype=float)
    if e.size == 0:
        raise EmptyDataset("cannot derive a response bracket from no samples")
    lo, hi = float(e.min()), float(e.max())
    span = hi - lo
    if span == 0:
        return lo - 1.0, hi + 1.0
    return lo - 0.05 * span, hi + 0.05 * span


def save_dataset(dataset: Dataset, path: Union[str, Path], extra_meta: Optional[dict] = None) -> Path:
    """Write the sample CSV plus a ``.json`` sidecar; returns the CSV path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    params = np.concatenate([dataset.train_params, dataset.test_params])
    energy = np.concatenate([dataset.train_energy, dataset.test_energy])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for tid, (p, row) in enumerate(zip(params, energy)):
            pf = [_fmt(v) for v in p]
            for s, y in zip(dataset.grid, row):
                w.writerow([tid, *pf, _fmt(s), _fmt(y)])
    meta = {
        "seed": dataset.seed,
        "n_train": dataset.n_train,
        "n_test": dataset.n_test,
        "grid_points": len(dataset.grid),
        "normalization": dataset.normalization.to_dict(),
        "y_bracket": list(energy_bracket(dataset.train_energy)),
    }
    meta.update(extra_meta or {})
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_dataset(path: Union[str, Path]) -> Dataset:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        raise EmptyDataset(f"{path} holds no samples")
    g = int(meta["grid_points"])
    n = int(meta["n_train"]) + int(meta["n_test"])
    data = data[np.argsort(data[:, 0], kind="stable")]
    if len(data) != n * g:
        raise InvalidConfig(f"{path}: expected {n * g} rows, found {len(data)}")
    blocks = data.reshape(n, g, -1)
    params = blocks[:, 0, 1:8]
    grid = blocks[0, :, 8]
    energy = blocks[:, :, 9]
    k = int(meta["n_train"])
    return Dataset(
        seed=int(meta["seed"]),
        grid=grid.copy(),
        train_params=params[:k].copy(),
        train_energy=energy[:k].copy(),
        test_params=params[k:].copy(),
        test_energy=energy[k:].copy(),
        normalization=NormalizationStats.from_dict(meta["normalization"]),
    )


# ---------------------------------------------------------------------------
# oracle statistics
# ---------------------------------------------------------------------------

Signal = Callable[[np.ndarray], np.ndarray]


def _signal(params: Optional[ParamsLike], signal: Optional[Signal]) -> Signal:
    if signal is not None:
        return lambda s: np.broadcast_to(np.asarray(signal(np.asarray(s, dtype=float)), dtype=float), np.shape(s))
    p = as_param_array(params)
    return lambda s: instantaneous_energy(p, s)


def _interval(interval) -> QuantileInterval:
    if isinstance(interval, QuantileInterval):
        return interval
    return QuantileInterval(float(interval[0]), float(interval[1]))


def oracle_max(params: Optional[ParamsLike], interval, signal: Optional[Signal] = None, tol: float = 1e-9) -> float:
    """Hard interval maximum: dense grid, then golden-section on the best bracket.

    The refined location is snapped to a fixed global lattice of spacing
    ``2**-26`` and the maximum is taken over the lattice points (and any
    interval endpoint) next to it.  Overlapping intervals that find the same
    peak therefore evaluate the signal at the same points, so the maximum is
    exactly monotone under interval inclusion.
    """
    iv = _interval(interval)
    f = _signal(params, signal)
    grid = np.linspace(iv.s0, iv.s1, MAX_GRID)
    i = int(np.argmax(f(grid)))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, MAX_GRID - 1)]
    x, _ = golden_section_max(lambda t: float(f(np.array([t]))[0]), lo, hi, tol=tol)
    k = round(x * MAX_LATTICE)
    pts = np.arange(k - 8, k + 9) / MAX_LATTICE
    pts = pts[(pts >= iv.s0) & (pts <= iv.s1)]
    ends = [e for e in (iv.s0, iv.s1) if abs(e - x) <= 9.0 / MAX_LATTICE]
    return float(f(np.concatenate([pts, ends])).max())


def oracle_interval_stat(
    params: Optional[ParamsLike],
    interval,
    stat: StatSpec,
    signal: Optional[Signal] = None,
    tol: float = 1e-9,
) -> float:
    """Ground-truth interval statistic of the raw response.

    Means use adaptive Gauss-Legendre quadrature, maxima a grid plus
    golden-section refinement, and distributional statistics an
    ``8192``-point grid with linearly interpolated empirical quantiles.
    ``signal`` replaces the spiral energy by an arbitrary ``h(s)``.
    """
    iv = _interval(interval)
    f = _signal(params, signal)
    if isinstance(stat, Mean):
        return adaptive_gauss_legendre(f, iv.s0, iv.s1, tol=tol) / iv.m
    if isinstance(stat, Max):
        return oracle_max(params, iv, signal, tol)
    vals = np.sort(f(np.linspace(iv.s0, iv.s1, QUANTILE_GRID)))
    if isinstance(stat, Quantile):
        return float(np.quantile(vals, stat.alpha))
    if isinstance(stat, CdfAt):
        return float(np.searchsorted(vals, stat.y, side="right")) / len(vals)
    if isinstance(stat, Exceedance):
        return 1.0 - float(np.searchsorted(vals, stat.tau, side="right")) / len(vals)
    if isinstance(stat, RangeProb):
        hi = np.searchsorted(vals, stat.b, side="right")
        lo = np.searchsorted(vals, stat.a, side="right")
        return float(hi - lo) / len(vals)
    raise InvalidConfig(f"unsupported statistic {stat!r}")


def oracle_soft_max(
    params: Optional[ParamsLike],
    interval,
    beta: float,
    norm: NormalizationStats,
    signal: Optional[Signal] = None,
    tol: float = 1e-12,
) -> float:
    """Log-mean-exp soft maximum at temperature ``beta`` on z-scored energy.

    Shifted by the hard maximum before exponentiation, so any ``beta`` is safe.
    """
    iv = _interval(interval)
    f = _signal(params, signal)
    z_top = float(norm.normalize_energy(oracle_max(params, iv, signal)))
    integrand = lambda s: np.exp(beta * (norm.normalize_energy(f(s)) - z_top))  # noqa: E731
    avg = adaptive_gauss_legendre(integrand, iv.s0, iv.s1, tol=tol) / iv.m
    return float(norm.denormalize_energy(z_top + math.log(avg) / beta))


def oracle_psi_integral(
    params: Optional[ParamsLike],
    interval,
    stat: StatSpec,
    norm: NormalizationStats,
    signal: Optional[Signal] = None,
    tol: float = 1e-10,
) -> float:
    """``(1/m) * integral of psi over [s0, s1]`` in the network's units."""
    iv = _interval(interval)
    f = _signal(params, signal)
    return adaptive_gauss_legendre(lambda s: psi(stat, f(s), norm), iv.s0, iv.s1, tol=tol) / iv.m


def oracle_prefix(
    params: Optional[ParamsLike],
    s,
    stat: StatSpec,
    norm: NormalizationStats,
    signal: Optional[Signal] = None,
    tol: float = 1e-10,
):
    """Exact prefix statistic ``(1/s) * integral_0^s psi``; its limit ``psi(0)`` at ``s = 0``."""
    f = _signal(params, signal)
    g = lambda t: np.atleast_1d(psi(stat, f(np.atleast_1d(t)), norm))  # noqa: E731
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    out = np.empty_like(s_arr)
    for i, si in enumerate(s_arr):
        out[i] = g(0.0)[0] if si == 0.0 else adaptive_gauss_legendre(g, 0.0, float(si), tol=tol) / si
    return float(out[0]) if np.ndim(s) == 0 else out
