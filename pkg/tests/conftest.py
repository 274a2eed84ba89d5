"""Shared trained models for the acceptance suite.

Training the desk-scale models takes several minutes, so checkpoints are
cached under ``.acceptance_cache/`` keyed by a hash of the training setup and
the package source.  Any source change retrains from scratch.
"""
import hashlib
import json
from pathlib import Path

import pytest

import prefixstats
from prefixstats.dynamics import generate_dataset
from prefixstats.nn import Checkpoint
from prefixstats.query import PrefixModel
from prefixstats.training import TrainConfig, train_predictor, train_prefix
from prefixstats.transforms import Mean, Quantile

CACHE = Path(__file__).resolve().parent.parent / ".acceptance_cache"

DATASET = dict(n_train=2000, n_test=500, grid_points_per_trajectory=64, seed=0)
PREDICTOR = TrainConfig(epochs=10, batch_size=256, max_lr=2e-3, seed=0)
# reduced schedules; the default is 2000 epochs
MEAN = TrainConfig(stat=Mean(), epochs=500, seed=0)
CDF = TrainConfig(stat=Quantile(0.5), epochs=600, seed=0)
ABLATION_EPOCHS = 100

RESULTS: dict[int, tuple[bool, str]] = {}


def _source_digest() -> str:
    h = hashlib.sha256()
    for p in sorted(Path(prefixstats.__file__).parent.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def _key(name: str, *parts) -> Path:
    blob = json.dumps([DATASET, [p if isinstance(p, dict) else p.to_dict() for p in parts]], sort_keys=True)
    digest = hashlib.sha256((blob + _source_digest()).encode()).hexdigest()[:16]
    return CACHE / f"{name}-{digest}.json"


def _cached(name: str, parts, train):
    path = _key(name, *parts)
    if path.exists():
        return Checkpoint.load(path)
    ckpt = train()
    CACHE.mkdir(exist_ok=True)
    ckpt.save(path)
    return ckpt


@pytest.fixture(scope="session")
def dataset():
    return generate_dataset(**DATASET)


@pytest.fixture(scope="session")
def predictor(dataset):
    return _cached("predictor", [PREDICTOR], lambda: train_predictor(dataset, PREDICTOR).checkpoint).net


@pytest.fixture(scope="session")
def mean_model(dataset, predictor):
    ckpt = _cached("mean", [PREDICTOR, MEAN], lambda: train_prefix(dataset, predictor, MEAN).checkpoint)
    return PrefixModel.from_checkpoint(ckpt)


@pytest.fixture(scope="session")
def cdf_model(dataset, predictor):
    ckpt = _cached("cdf", [PREDICTOR, CDF], lambda: train_prefix(dataset, predictor, CDF).checkpoint)
    return PrefixModel.from_checkpoint(ckpt)


@pytest.fixture(scope="session")
def ablation_losses(dataset, predictor):
    """Final-epoch neural-branch test loss for lambda_data in {0, 0.1}."""
    out = {}
    for lam in (0.0, 0.1):
        cfg = TrainConfig(stat=Mean(), epochs=ABLATION_EPOCHS, lambda_data=lam, seed=0)
        path = _key(f"ablation{lam}", PREDICTOR, cfg).with_suffix(".loss")
        if path.exists():
            out[lam] = float(path.read_text())
            continue
        res = train_prefix(dataset, predictor, cfg, evaluate_test=True)
        out[lam] = res.report.test_loss_neural
        CACHE.mkdir(exist_ok=True)
        path.write_text(repr(out[lam]))
    return out


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
