"""Width-binned evaluation, reports and the end-to-end experiment pipeline."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np

from .baselines import DENSE_REFERENCE_N, DENSE_REFERENCE_SEED, McConfig, batch_mc_estimate, make_source
from .dynamics import (
    Dataset,
    generate_dataset,
    instantaneous_energy,
    oracle_interval_stat,
    oracle_prefix,
    save_dataset,
)
from .errors import InvalidConfig, PrefixStatsError, ZeroReference
from .nn import Checkpoint, Mlp
from .query import PrefixModel, batch_interval_statistic
from .training import TrainConfig, residual_diagnostics, train_predictor, train_prefix
from .transforms import CdfAt, Max, Mean, StatSpec, format_stat, psi

log = logging.getLogger(__name__)

DEFAULT_WIDTHS = (0.50, 0.56, 0.62, 0.68, 0.74, 0.80, 0.86, 0.92)
REPORT_COLUMNS = ("method", "stat", "width", "rel_l2_mean", "rel_l2_se", "n_eval_mean")
DIAGNOSTIC_COLUMNS = ("traj_id", "s", "prefix", "oracle_prefix", "reconstructed", "psi")


class StageError(PrefixStatsError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class WidthBin:
    widths: Sequence[float] = DEFAULT_WIDTHS
    intervals_per_width: int = 8

    def __post_init__(self):
        if not self.widths or any(not 0.0 < w <= 1.0 for w in self.widths):
            raise InvalidConfig(f"widths must lie in (0, 1], got {list(self.widths)}")
        if self.intervals_per_width < 1:
            raise InvalidConfig("intervals_per_width must be >= 1")
        object.__setattr__(self, "widths", tuple(float(w) for w in self.widths))

    def placements(self, width: float) -> np.ndarray:
        """Left endpoints spread uniformly over ``[0, 1 - width]``, both ends included."""
        return np.linspace(0.0, max(1.0 - width, 0.0), self.intervals_per_width)


def rel_l2(pred, ref) -> float:
    pred = np.asarray(pred, dtype=float).reshape(-1)
    ref = np.asarray(ref, dtype=float).reshape(-1)
    if pred.shape != ref.shape or pred.size == 0:
        raise InvalidConfig(f"rel_l2 needs equal non-empty vectors, got {pred.shape} and {ref.shape}")
    denom = float(np.linalg.norm(ref))
    if denom == 0.0:
        raise ZeroReference("reference vector has zero norm")
    return float(np.linalg.norm(pred - ref)) / denom


@dataclass(frozen=True)
class ErrorRow:
    method: str
    stat: str
    width: float
    rel_l2_mean: float
    rel_l2_se: float
    n_eval_mean: float


@dataclass
class ErrorReport:
    rows: list[ErrorRow] = field(default_factory=list)
    metadata: dict[str, Any] = field(default_factory=dict)

    def get(self, method: str, width: float) -> ErrorRow:
        for r in self.rows:
            if r.method == method and math.isclose(r.width, width, abs_tol=1e-12):
                return r
        raise KeyError((method, width))

    def methods(self) -> list[str]:
        return list(dict.fromkeys(r.method for r in self.rows))

    def write_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for r in self.rows:
                w.writerow([r.method, r.stat, f"{r.width:.2f}", f"{r.rel_l2_mean:.10g}", f"{r.rel_l2_se:.10g}", f"{r.n_eval_mean:.10g}"])
        return path

    @classmethod
    def read_csv(cls, path: Union[str, Path]) -> "ErrorReport":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [
                ErrorRow(d["method"], d["stat"], float(d["width"]), float(d["rel_l2_mean"]), float(d["rel_l2_se"]), float(d["n_eval_mean"]))
                for d in csv.DictReader(fh)
            ]
        return cls(rows)


def batch_oracle(params: np.ndarray, s0: np.ndarray, s1: np.ndarray, stat: StatSpec) -> np.ndarray:
    return np.array([oracle_interval_stat(p, (a, b), stat) for p, a, b in zip(params, s0, s1)])


def _mean_se(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
    return float(v.mean()), se


def width_binned_eval(
    model: Optional[PrefixModel],
    dataset: Dataset,
    stat: StatSpec,
    bins: WidthBin = WidthBin(),
    reference: str = "analytic",
    mc_configs: Sequence[McConfig] = (),
    predictor: Optional[Mlp] = None,
    n_trajectories: Optional[int] = None,
    dense_n: int = DENSE_REFERENCE_N,
) -> ErrorReport:
    """relL2 per width bin for the prefix network and each MC baseline.

    All (test trajectory, placement) pairs of a width are stacked into one
    vector.  ``reference`` is ``analytic`` (quadrature and dense-grid oracles)
    or ``dense`` (``dense_n`` MC draws from the predictor at the pinned seed).
    MC draws for seed ``r``, width ``i`` and placement ``j`` use stream
    ``(r, i, j)``.  ``model=None`` evaluates only the baselines.
    """
    if reference not in ("analytic", "dense"):
        raise InvalidConfig(f"reference must be 'analytic' or 'dense', got {reference!r}")
    if reference == "dense" and predictor is None:
        raise InvalidConfig("a dense reference needs the single-condition predictor")
    params = dataset.test_params if n_trajectories is None else dataset.test_params[:n_trajectories]
    if len(params) == 0:
        raise InvalidConfig("no test trajectories to evaluate")
    norm = dataset.normalization
    x = norm.normalize_params(params)
    n = len(params)
    name = format_stat(stat)
    report = ErrorReport(metadata={
        "dataset_seed": dataset.seed,
        "reference": reference,
        "n_trajectories": n,
        "intervals_per_width": bins.intervals_per_width,
        "dense_n": dense_n if reference == "dense" else None,
        "dense_seed": DENSE_REFERENCE_SEED if reference == "dense" else None,
    })
    dense_src = make_source("predictor", predictor, norm) if reference == "dense" else None
    for i, w in enumerate(bins.widths):
        refs, neural, passes = [], [], []
        mc = {c: {s: [] for s in c.seeds} for c in mc_configs}
        for j, s0 in enumerate(bins.placements(w)):
            s0v = np.full(n, s0)
            s1v = np.minimum(s0v + w, 1.0)
            if reference == "analytic":
                refs.append(batch_oracle(params, s0v, s1v, stat))
            else:
                refs.append(batch_mc_estimate(dense_src, params, s0v, s1v, stat, dense_n, DENSE_REFERENCE_SEED, (i, j)))
            if model is not None:
                v, p = batch_interval_statistic(model, x, s0v, s1v, stat)
                neural.append(v)
                passes.append(p)
            for c in mc_configs:
                src = make_source(c.source, predictor, norm)
                for seed in c.seeds:
                    mc[c][seed].append(batch_mc_estimate(src, params, s0v, s1v, stat, c.k, seed, (i, j)))
        ref = np.concatenate(refs)
        if model is not None:
            report.rows.append(ErrorRow("neural", name, w, rel_l2(np.concatenate(neural), ref), 0.0, float(np.concatenate(passes).mean())))
        for c in mc_configs:
            mean, se = _mean_se([rel_l2(np.concatenate(mc[c][seed]), ref) for seed in c.seeds])
            report.rows.append(ErrorRow(c.label, name, w, mean, se, float(c.k)))
    return report


def diagnostics_report(
    model: PrefixModel,
    dataset: Dataset,
    n_trajectories: int,
    path: Optional[Union[str, Path]] = None,
    stat: Optional[StatSpec] = None,
    grid: int = 256,
    delta_s: float = 1e-2,
) -> list[tuple]:
    """Per-trajectory curves of the learned prefix against the quadrature prefix.

    Rows are ``(traj_id, s, prefix, oracle_prefix, reconstructed, psi)`` with
    ``reconstructed = d/ds [s H(s)]``.  CDF-family models need ``stat`` to be a
    ``CdfAt`` giving the threshold.
    """
    norm = dataset.normalization
    if stat is None:
        if model.family == "cdf":
            raise InvalidConfig("CDF diagnostics need a CdfAt statistic for the threshold")
        stat = _family_stat(model)
    threshold = stat.y if isinstance(stat, CdfAt) else None
    rows: list[tuple] = []
    for t in range(min(n_trajectories, dataset.n_test)):
        p = dataset.test_params[t]
        diag = residual_diagnostics(model, p, lambda s: psi(stat, instantaneous_energy(p, s), norm), grid, delta_s, threshold)
        ref = oracle_prefix(p, diag.s, stat, norm)
        for k in range(len(diag.s)):
            rows.append((t, diag.s[k], diag.prefix[k], ref[k], diag.reconstructed[k], diag.psi[k]))
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(DIAGNOSTIC_COLUMNS)
            for r in rows:
                w.writerow([r[0]] + [f"{v:.12g}" for v in r[1:]])
    return rows


def _family_stat(model: PrefixModel) -> StatSpec:
    return Max(model.beta) if model.family == "max" else Mean()


def write_gnuplot(report_csv: Union[str, Path], out_dir: Union[str, Path]) -> list[Path]:
    """Split a report into one data file per method plus a gnuplot script."""
    report = ErrorReport.read_csv(report_csv)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    plots = []
    for m in report.methods():
        p = out / f"{m}.dat"
        with open(p, "w", encoding="utf-8") as fh:
            fh.write("# width rel_l2_mean rel_l2_se\n")
            for r in report.rows:
                if r.method == m:
                    fh.write(f"{r.width:.2f} {r.rel_l2_mean:.10g} {r.rel_l2_se:.10g}\n")
        paths.append(p)
        plots.append(f"'{p.name}' using 1:2:3 with yerrorlines title '{m}'")
    script = out / "report.gp"
    script.write_text(
        "set terminal pngcairo size 800,500\n"
        "set output 'report.png'\n"
        "set xlabel 'interval width s1 - s0'\n"
        "set ylabel 'relative L2 error'\n"
        "set logscale y\n"
        "plot " + ", \\\n     ".join(plots) + "\n",
        encoding="utf-8",
    )
    return paths + [script]


# ---------------------------------------------------------------------------
# experiment pipeline
# ---------------------------------------------------------------------------


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class ExperimentConfig:
    seed: int = 0
    n_train: int = 2000
    n_test: int = 500
    grid_points: int = 64
    predictor: Optional[dict] = None
    prefix: list[dict] = field(default_factory=lambda: [{"stat": "mean"}])
    widths: Sequence[float] = DEFAULT_WIDTHS
    intervals_per_width: int = 8
    reference: str = "analytic"
    mc: list[dict] = field(default_factory=lambda: [{"k": 10}, {"k": 100}, {"k": 400}])
    n_eval_trajectories: Optional[int] = None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(f"unknown experiment options {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"{path}: {exc}") from None


def _stage(name: str, fn, *args, **kw):
    log.info("stage %s", name)
    try:
        return fn(*args, **kw)
    except PrefixStatsError as exc:
        raise StageError(name, exc) from exc


def run_experiment(config_path: Union[str, Path, ExperimentConfig], out_dir: Union[str, Path]) -> dict:
    """gen-data, train-predictor, train-prefix per statistic, eval, report.

    Every output is listed in ``manifest.json`` with its sha256; timings live
    only in the manifest so the CSVs are reproducible byte for byte.
    """
    cfg = config_path if isinstance(config_path, ExperimentConfig) else _stage("config", ExperimentConfig.load, config_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}
    outputs: list[Path] = []

    t = time.perf_counter()
    ds = _stage("gen-data", generate_dataset, cfg.n_train, cfg.n_test, cfg.grid_points, cfg.seed)
    outputs += [p := save_dataset(ds, out / "dataset.csv"), p.with_suffix(".json")]
    timings["gen-data"] = time.perf_counter() - t

    prefix_cfgs = [_stage("config", _prefix_config, p, cfg.seed) for p in cfg.prefix]
    mc_cfgs = [McConfig(**m) for m in cfg.mc]
    need_predictor = (
        cfg.predictor is not None
        or cfg.reference == "dense"
        or any(c.predictor_mode == "pretrained-mlp" for c in prefix_cfgs)
        or any(m.source == "predictor" for m in mc_cfgs)
    )
    predictor = None
    if need_predictor:
        t = time.perf_counter()
        pcfg = _stage("config", TrainConfig.from_dict, {"seed": cfg.seed, **(cfg.predictor or {})})
        res = _stage("train-predictor", train_predictor, ds, pcfg)
        predictor = res.net
        outputs += [res.checkpoint.save(out / "predictor.json"), res.report.write_csv(out / "predictor_loss.csv")]
        timings["train-predictor"] = time.perf_counter() - t

    bins = WidthBin(cfg.widths, cfg.intervals_per_width)
    reports = []
    for tc in prefix_cfgs:
        tag = format_stat(tc.stat).replace(":", "_").replace(",", "_").replace("=", "")
        t = time.perf_counter()
        res = _stage("train-prefix", train_prefix, ds, predictor, tc)
        outputs += [res.checkpoint.save(out / f"prefix_{tag}.json"), res.report.write_csv(out / f"prefix_{tag}_loss.csv")]
        timings[f"train-prefix:{tag}"] = time.perf_counter() - t

        t = time.perf_counter()
        model = PrefixModel.from_checkpoint(res.checkpoint)
        rep = _stage("eval", width_binned_eval, model, ds, tc.stat, bins, cfg.reference, mc_cfgs, predictor, cfg.n_eval_trajectories)
        reports.append(rep)
        timings[f"eval:{tag}"] = time.perf_counter() - t

    merged = ErrorReport([r for rep in reports for r in rep.rows])
    outputs.append(_stage("report", merged.write_csv, out / "report.csv"))
    manifest = {
        "config": cfg.__dict__ | {"widths": list(cfg.widths)},
        "outputs": {p.name: _sha256(p) for p in outputs},
        "timings_s": timings,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return manifest


def _prefix_config(entry: dict, seed: int) -> TrainConfig:
    return TrainConfig.from_dict({"seed": seed, **entry})


def load_model(path: Union[str, Path]) -> PrefixModel:
    return PrefixModel.from_checkpoint(Checkpoint.load(path))
