"""Dense SiLU networks with hand-written backprop, AdamW and a one-cycle schedule.

Everything runs in float64 numpy so gradients can be checked against finite
differences and training is bit-reproducible on one platform.
"""
from __future__ import annotations

import base64
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Union

import numpy as np

from .errors import CheckpointError, InvalidConfig, NonFiniteGradient, ShapeMismatch
from .normalization import NormalizationStats

CHECKPOINT_FORMAT_VERSION = 1


def silu(z):
    return z / (1.0 + np.exp(-z))


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden_width: int = 256
    hidden_layers: int = 4
    output_dim: int = 1
    activation: str = "silu"
    seed: int = 0

    def __post_init__(self):
        for name in ("input_dim", "hidden_width", "hidden_layers", "output_dim"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1")
        if self.activation != "silu":
            raise InvalidConfig(f"unsupported activation {self.activation!r}")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim] + [self.hidden_width] * self.hidden_layers + [self.output_dim]


class Mlp:
    """Affine layers with SiLU between them and a linear output layer.

    Weights are stored ``(fan_in, fan_out)`` so a batch ``X`` of shape
    ``(n, input_dim)`` maps through ``X @ W + b``.
    """

    def __init__(self, config: MlpConfig, weights: list[np.ndarray], biases: list[np.ndarray]):
        sizes = config.layer_sizes
        if len(weights) != len(sizes) - 1 or len(biases) != len(weights):
            raise ShapeMismatch("layer count does not match config")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise ShapeMismatch(f"layer {i}: got {w.shape}/{b.shape}")
        self.config = config
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]

    @classmethod
    def init(cls, config: MlpConfig) -> "Mlp":
        """Glorot-uniform weights from a Philox stream keyed by ``config.seed``; zero biases."""
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(config.seed)))
        sizes = config.layer_sizes
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(config, weights, biases)

    @classmethod
    def zeros(cls, config: MlpConfig) -> "Mlp":
        sizes = config.layer_sizes
        return cls(
            config,
            [np.zeros((i, o)) for i, o in zip(sizes[:-1], sizes[1:])],
            [np.zeros(o) for o in sizes[1:]],
        )

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "Mlp":
        return Mlp(self.config, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def _check_input(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise ShapeMismatch(f"expected inputs of width {self.config.input_dim}, got shape {x.shape}")
        return x, single

    def forward(self, x) -> np.ndarray:
        x, single = self._check_input(x)
        a = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            a = z if i == last else silu(z)
        return a[0] if single else a

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)

    def forward_cache(self, x):
        x, _ = self._check_input(x)
        acts, sigs = [x], []
        a = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            if i == last:
                a = z
            else:
                sig = 1.0 / (1.0 + np.exp(-z))
                sigs.append((z, sig))
                a = z * sig
            acts.append(a)
        return a, (acts, sigs)

    def backward(self, cache, upstream) -> list[np.ndarray]:
        """Gradients of ``sum(output * upstream)``, ordered like :meth:`parameters`."""
        acts, sigs = cache
        g = np.asarray(upstream, dtype=np.float64)
        if g.size != acts[-1].size:
            raise ShapeMismatch(f"upstream shape {g.shape} != output shape {acts[-1].shape}")
        g = g.reshape(acts[-1].shape)
        n_layers = len(self.weights)
        grads: list[Optional[np.ndarray]] = [None] * (2 * n_layers)
        for i in reversed(range(n_layers)):
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = g @ self.weights[i].T
                z, sig = sigs[i - 1]
                g = g * (sig * (1.0 + z * (1.0 - sig)))
        return grads  # type: ignore[return-value]

    def input_gradient(self, x, upstream=None) -> np.ndarray:
        """d(sum(output * upstream))/d(input), used for exact partials in tests."""
        out, (acts, sigs) = self.forward_cache(x)
        g = np.ones_like(out) if upstream is None else np.asarray(upstream, dtype=np.float64).reshape(out.shape)
        for i in reversed(range(len(self.weights))):
            g = g @ self.weights[i].T
            if i > 0:
                z, sig = sigs[i - 1]
                g = g * (sig * (1.0 + z * (1.0 - sig)))
        return g


def grad(net: Mlp, x, upstream) -> list[np.ndarray]:
    """Exact reverse-mode gradient of ``output . upstream`` for every parameter."""
    _, cache = net.forward_cache(x)
    return net.backward(cache, upstream)


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    @classmethod
    def for_net(cls, net: Mlp, weight_decay: float = 0.01, **kw) -> "OptimizerState":
        params = net.parameters()
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], weight_decay=weight_decay, **kw)


def adamw_step(net: Mlp, state: OptimizerState, grads: list[np.ndarray], lr: float) -> None:
    """One in-place AdamW update with decoupled weight decay."""
    if not lr > 0:
        raise InvalidConfig(f"learning rate must be positive, got {lr}")
    params = net.parameters()
    if len(grads) != len(params):
        raise ShapeMismatch("gradient list does not match parameters")
    for i, g in enumerate(grads):
        if g.shape != params[i].shape:
            raise ShapeMismatch(f"gradient {i} has shape {g.shape}, expected {params[i].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in parameter tensor {i} at step {state.step + 1}")
    state.step += 1
    b1, b2 = state.betas
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if state.weight_decay:
            p *= 1.0 - lr * state.weight_decay
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass(frozen=True)
class OneCycleSchedule:
    """Cosine warm-up to ``max_lr`` then cosine decay to ``max_lr * final_lr_fraction``."""

    max_lr: float = 1e-3
    total_steps: int = 1
    warmup_fraction: float = 0.3
    final_lr_fraction: float = 1e-2
    initial_lr_fraction: float = 0.04

    def __post_init__(self):
        if not self.max_lr > 0 or self.total_steps < 1:
            raise InvalidConfig("one-cycle needs max_lr > 0 and total_steps >= 1")
        if not 0.0 < self.warmup_fraction < 1.0:
            raise InvalidConfig("warmup_fraction must lie in (0, 1)")
        if not (self.final_lr_fraction > 0 and self.initial_lr_fraction > 0):
            raise InvalidConfig("lr fractions must be positive")

    @property
    def warmup_steps(self) -> int:
        return max(1, int(round(self.warmup_fraction * self.total_steps)))

    def lr(self, step: int) -> float:
        lo = self.max_lr * self.initial_lr_fraction
        end = self.max_lr * self.final_lr_fraction
        warm = self.warmup_steps
        if step < warm:
            frac = step / warm
            return lo + (self.max_lr - lo) * 0.5 * (1.0 - math.cos(math.pi * frac))
        span = max(self.total_steps - 1 - warm, 1)
        frac = min((step - warm) / span, 1.0)
        return end + (self.max_lr - end) * 0.5 * (1.0 + math.cos(math.pi * frac))


# ---------------------------------------------------------------------------
# prefix-network helpers
# ---------------------------------------------------------------------------


def prefix_input(x_features, s, threshold=None) -> np.ndarray:
    """Network input ``x (+) s`` or ``x (+) s (+) y`` for threshold-conditioned nets."""
    x = np.atleast_2d(np.asarray(x_features, dtype=np.float64))
    s = np.asarray(s, dtype=np.float64).reshape(-1)
    n = max(len(x), len(s))
    cols = [np.broadcast_to(x, (n, x.shape[1])), np.broadcast_to(s, (n,))[:, None]]
    if threshold is not None:
        cols.append(np.broadcast_to(np.asarray(threshold, dtype=np.float64).reshape(-1), (n,))[:, None])
    return np.concatenate(cols, axis=1)


PrefixFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def fd_partial_s(net: Union[Mlp, PrefixFn], x_features, s, delta_s: float = 1e-2, threshold=None, clip: bool = True):
    """Finite-difference ``d/ds`` of a prefix network at ``s``.

    Central differences in the interior; near ``s = 0`` or ``s = 1`` the stencil
    is clipped to the domain, which degrades to a one-sided difference on the
    boundary itself.  ``net`` may also be a plain callable ``f(x, s)``;
    ``clip=False`` keeps the central stencil for callables defined beyond [0, 1].
    """
    if not delta_s > 0:
        raise InvalidConfig("delta_s must be positive")
    scalar = np.ndim(s) == 0
    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    n = len(s)
    hi, lo = s + delta_s, s - delta_s
    if clip:
        hi, lo = np.minimum(hi, 1.0), np.maximum(lo, 0.0)
    x = np.atleast_2d(np.asarray(x_features, dtype=np.float64))
    xb = np.broadcast_to(x, (n, x.shape[1]))
    x2, s2 = np.concatenate([xb, xb]), np.concatenate([hi, lo])
    if isinstance(net, Mlp):
        thr2 = None
        if threshold is not None:
            thr = np.broadcast_to(np.asarray(threshold, dtype=np.float64).reshape(-1), (n,))
            thr2 = np.concatenate([thr, thr])
        vals = net.forward(prefix_input(x2, s2, thr2))[:, 0]
    else:
        vals = np.asarray(net(x2, s2), dtype=np.float64).reshape(-1)
    out = (vals[:n] - vals[n:]) / (hi - lo)
    return float(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _encode(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")


def _decode(text: str, shape) -> np.ndarray:
    raw = base64.b64decode(text.encode("ascii"))
    arr = np.frombuffer(raw, dtype="<f8")
    if arr.size != int(np.prod(shape)):
        raise CheckpointError(f"payload holds {arr.size} values, header says {shape}")
    return arr.reshape(shape).astype(np.float64)


@dataclass
class Checkpoint:
    net: Mlp
    normalization: Optional[NormalizationStats] = None
    metadata: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "config": asdict(self.net.config),
            "normalization": None if self.normalization is None else self.normalization.to_dict(),
            "metadata": self.metadata,
            "layers": [
                {"weight_shape": list(w.shape), "weight": _encode(w), "bias_shape": list(b.shape), "bias": _encode(b)}
                for w, b in zip(self.net.weights, self.net.biases)
            ],
        }
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json(), encoding="utf-8")
        return path

    @classmethod
    def from_json(cls, text: str) -> "Checkpoint":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"checkpoint is not valid JSON: {exc}") from None
        version = doc.get("format_version")
        if version != CHECKPOINT_FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format_version {version!r}")
        config = MlpConfig(**doc["config"])
        weights, biases = [], []
        for layer in doc["layers"]:
            weights.append(_decode(layer["weight"], tuple(layer["weight_shape"])))
            biases.append(_decode(layer["bias"], tuple(layer["bias_shape"])))
        try:
            net = Mlp(config, weights, biases)
        except ShapeMismatch as exc:
            raise CheckpointError(f"checkpoint shapes disagree with its config: {exc}") from None
        norm = doc.get("normalization")
        return cls(net, None if norm is None else NormalizationStats.from_dict(norm), doc.get("metadata", {}))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Checkpoint":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))
