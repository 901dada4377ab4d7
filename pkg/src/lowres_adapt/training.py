"""Adapter and training configurations, presets, and a desk-scale trainer.

The toy task is a 32 -> 32 linear regression: a frozen random base matrix,
targets from a hidden low-rank perturbation of it, mean squared error and
plain gradient descent. Ranks and scaling rules interact visibly there,
and at step 0 (B = 0) the B-gradient is exactly linear in the scaling
factor, which is what the collapse demonstration measures.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import adapters
from .adapters import AdapterLayer, init_layer, scaling_factor

DEFAULT_TARGETS = ("q", "k", "v", "o", "gate", "up", "down")


class ConfigError(ValueError):
    def __init__(self, errors: list[str]) -> None:
        super().__init__("; ".join(errors))
        self.errors = list(errors)


class TrainingDiverged(ArithmeticError):
    def __init__(self, step: int, telemetry: TrainTelemetry) -> None:
        super().__init__(f"non-finite loss at step {step}")
        self.step = step
        self.telemetry = telemetry


@dataclass(frozen=True)
class AdapterConfig:
    method: str
    rank: int | None = None
    alpha: float | None = None
    dropout: float = 0.05
    learning_rate: float = 2e-5
    targets: tuple[str, ...] = DEFAULT_TARGETS

    @property
    def gamma(self) -> float:
        return scaling_factor(self.method, self.alpha, self.rank)


@dataclass(frozen=True)
class TrainConfig:
    per_device_batch: int = 1
    grad_accum: int = 16
    effective_batch: int = 16
    seq_len: int = 4096
    warmup_steps: int = 50
    epochs: int = 2
    eval_split: float = 0.025
    seed: int = 42
    learning_rate: float = 5e-5


def validate_adapter_config(cfg: AdapterConfig) -> AdapterConfig:
    errors = []
    if cfg.method not in adapters.METHODS:
        errors.append(f"method must be one of {', '.join(adapters.METHODS)}, got {cfg.method!r}")
    elif cfg.method == "full":
        if cfg.rank is not None or cfg.alpha is not None:
            errors.append("full fine-tuning takes no rank or alpha")
    else:
        if not isinstance(cfg.rank, int) or cfg.rank < 1:
            errors.append(f"rank must be a positive integer, got {cfg.rank!r}")
        if cfg.alpha is None or not cfg.alpha > 0:
            errors.append(f"alpha must be positive, got {cfg.alpha!r}")
    if not 0.0 <= cfg.dropout < 1.0:
        errors.append(f"dropout must lie in [0, 1), got {cfg.dropout}")
    if not cfg.learning_rate > 0:
        errors.append(f"learning rate must be positive, got {cfg.learning_rate}")
    if errors:
        raise ConfigError(errors)
    return cfg


def validate_train_config(cfg: TrainConfig) -> TrainConfig:
    """Return ``cfg`` unchanged, or raise ConfigError listing every violation."""
    errors = []
    for name in ("per_device_batch", "grad_accum", "effective_batch", "seq_len", "epochs"):
        value = getattr(cfg, name)
        if not isinstance(value, int) or value < 1:
            errors.append(f"{name} must be a positive integer, got {value!r}")
    if not isinstance(cfg.warmup_steps, int) or cfg.warmup_steps < 0:
        errors.append(f"warmup_steps must be a non-negative integer, got {cfg.warmup_steps!r}")
    if cfg.effective_batch != cfg.per_device_batch * cfg.grad_accum:
        errors.append(
            f"effective batch mismatch: {cfg.per_device_batch} x {cfg.grad_accum} "
            f"= {cfg.per_device_batch * cfg.grad_accum}, not {cfg.effective_batch}")
    if not 0.0 < cfg.eval_split < 1.0:
        errors.append(f"eval_split must lie in (0, 1), got {cfg.eval_split}")
    if not cfg.learning_rate > 0:
        errors.append(f"learning rate must be positive, got {cfg.learning_rate}")
    if errors:
        raise ConfigError(errors)
    return cfg


CPT_TRAIN = TrainConfig()
SFT_TRAIN = TrainConfig(eval_split=0.05)

ADAPTER_PRESETS = {
    "sft-full": AdapterConfig("full", dropout=0.0, learning_rate=1e-5),
    "sft-lora-r64": AdapterConfig("lora", 64, 128.0, learning_rate=2e-4),
    "sft-rslora-r128": AdapterConfig("rslora", 128, 128.0, learning_rate=2e-5),
    "sft-rslora-r256": AdapterConfig("rslora", 256, 256.0, learning_rate=2e-5),
    "sft-dora-r256": AdapterConfig("dora", 256, 256.0, learning_rate=2e-5),
}

TRAIN_PRESETS = {"cpt-table3": CPT_TRAIN}
for _name, _adapter in ADAPTER_PRESETS.items():
    TRAIN_PRESETS[_name] = TrainConfig(eval_split=0.05, learning_rate=_adapter.learning_rate)


# ---------------------------------------------------------------- toy trainer

@dataclass
class TrainTelemetry:
    method: str
    rank: int
    alpha: float
    seed: int
    loss: list[float] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    b_grad_norm: list[float] = field(default_factory=list)
    eval_loss: float | None = None

    def records(self) -> list[dict]:
        return [{"step": i, "loss": l, "grad_norm": g}
                for i, (l, g) in enumerate(zip(self.loss, self.grad_norm))]

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ToyTask:
    W0: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    X_eval: np.ndarray
    Y_eval: np.ndarray


def make_toy_task(seed: int = 42, dim: int = 32, hidden_rank: int = 8,
                  n_train: int = 256, n_eval: int = 64, delta_scale: float = 0.5) -> ToyTask:
    rng = np.random.default_rng([seed, 0])
    W0 = rng.standard_normal((dim, dim)) / math.sqrt(dim)
    P = rng.standard_normal((dim, hidden_rank))
    Q = rng.standard_normal((hidden_rank, dim))
    target = W0 + delta_scale * (P @ Q) / math.sqrt(hidden_rank * dim)
    X = rng.standard_normal((dim, n_train))
    X_eval = rng.standard_normal((dim, n_eval))
    return ToyTask(W0, X, target @ X, X_eval, target @ X_eval)


def mse(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean((pred - target) ** 2))


def toy_train(method: str, r: int, alpha: float, steps: int, seed: int = 42, *,
              lr: float = 0.5, dropout: float = 0.0, task: ToyTask | None = None) -> TrainTelemetry:
    """Gradient descent on the toy task; returns per-step loss and gradient norms.

    The base matrix and data depend on ``seed`` only, and ``A`` on
    ``(seed, r)``, so runs that differ only in scaling share every other
    piece of state.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if not 0.0 <= dropout < 1.0:
        raise ValueError(f"dropout must lie in [0, 1), got {dropout}")
    task = task or make_toy_task(seed)
    tel = TrainTelemetry(method, r, alpha, seed)
    drop_rng = np.random.default_rng([seed, 2])

    if method == "full":
        delta = np.zeros_like(task.W0)
        for step in range(steps):
            resid = (task.W0 + delta) @ task.X - task.Y
            loss = float(np.mean(resid ** 2))
            grad = 2.0 * resid @ task.X.T / resid.size
            _record(tel, step, loss, float(np.linalg.norm(grad)), 0.0)
            delta -= lr * grad
        tel.eval_loss = mse((task.W0 + delta) @ task.X_eval, task.Y_eval)
        return tel

    layer = init_layer(task.W0, r, alpha, method, seed=_adapter_seed(seed, r))
    for step in range(steps):
        mask = None
        if dropout > 0:
            keep = drop_rng.random((r, task.X.shape[1])) >= dropout
            mask = keep / (1.0 - dropout)
        pred = adapters.adapter_forward(layer, task.X, mask)
        resid = pred - task.Y
        loss = float(np.mean(resid ** 2))
        grads = adapters.adapter_grads(layer, task.X, 2.0 * resid / resid.size, mask)
        total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        _record(tel, step, loss, total, float(np.linalg.norm(grads["B"])))
        layer = layer.with_params(**{k: v - lr * grads[k] for k, v in layer.params().items()})
    tel.eval_loss = mse(adapters.adapter_forward(layer, task.X_eval), task.Y_eval)
    return tel


def _adapter_seed(seed: int, r: int) -> int:
    return int(np.random.SeedSequence([seed, 1, r]).generate_state(1)[0])


def _record(tel: TrainTelemetry, step: int, loss: float, grad_norm: float, b_norm: float) -> None:
    tel.loss.append(loss)
    tel.grad_norm.append(grad_norm)
    tel.b_grad_norm.append(b_norm)
    if not (math.isfinite(loss) and math.isfinite(grad_norm)):
        raise TrainingDiverged(step, tel)


def collapse_ratio(r: int, alpha: float = 16.0, seed: int = 42) -> tuple[float, float]:
    """Step-0 B-gradient norm under alpha/r divided by the norm under alpha/sqrt(r).

    Returns ``(measured, expected)`` where expected is ``1/sqrt(r)``.
    """
    lora = toy_train("lora", r, alpha, 1, seed)
    rs = toy_train("rslora", r, alpha, 1, seed)
    return lora.b_grad_norm[0] / rs.b_grad_norm[0], 1.0 / math.sqrt(r)
