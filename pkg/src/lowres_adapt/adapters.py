"""LoRA, rsLoRA and DoRA layers on dense matrices, in float64.

Shapes follow the usual storage convention: the base weight ``W0`` is
``d_out x d_in``, ``A`` is ``r x d_in`` and ``B`` is ``d_out x r``, so the
composed weight is ``V = W0 + gamma * B @ A``.

DoRA keeps one magnitude per output unit. Each output unit's weight vector
(a row of ``V`` in this storage, a column in the ``d_in x d_out`` layout
the method is usually written in) is normalised to unit length and then
rescaled by its magnitude::

    y_i = m_i * (V_i . x) / ||V_i||

The norm is not detached: gradients go through it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

METHODS = ("lora", "rslora", "dora", "full")


class SingularNormError(ArithmeticError):
    """A DoRA direction vector has zero norm."""


class NonFiniteError(ArithmeticError):
    pass


def scaling_factor(method: str, alpha: float, r: int) -> float:
    """alpha / r for LoRA; alpha / sqrt(r) for rsLoRA and DoRA."""
    if method == "full":
        raise ValueError("full fine-tuning has no adapter scaling factor")
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if not isinstance(r, (int, np.integer)) or r < 1:
        raise ValueError(f"rank must be a positive integer, got {r!r}")
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha!r}")
    if method == "lora":
        return alpha / r
    return alpha / math.sqrt(r)


def param_count(method: str, d_in: int, d_out: int, r: int = 0) -> int:
    if method == "full":
        return d_in * d_out
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if r < 0:
        raise ValueError(f"rank must be >= 0, got {r}")
    n = r * (d_in + d_out)
    return n + d_out if method == "dora" else n


def row_norms(m: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", m, m))


@dataclass(frozen=True)
class AdapterLayer:
    W0: np.ndarray
    A: np.ndarray
    B: np.ndarray
    gamma: float
    method: str = "lora"
    m: np.ndarray | None = None

    def __post_init__(self) -> None:
        d_out, d_in = self.W0.shape
        r = self.A.shape[0]
        if self.A.shape != (r, d_in):
            raise ValueError(f"A has shape {self.A.shape}, expected ({r}, {d_in})")
        if self.B.shape != (d_out, r):
            raise ValueError(f"B has shape {self.B.shape}, expected ({d_out}, {r})")
        if self.method not in ("lora", "rslora", "dora"):
            raise ValueError(f"adapter layers are lora, rslora or dora, not {self.method!r}")
        if self.method == "dora":
            if self.m is None:
                raise ValueError("DoRA layer needs a magnitude vector")
            if self.m.shape != (d_out,):
                raise ValueError(f"m has shape {self.m.shape}, expected ({d_out},)")

    @property
    def d_in(self) -> int:
        return self.W0.shape[1]

    @property
    def d_out(self) -> int:
        return self.W0.shape[0]

    @property
    def rank(self) -> int:
        return self.A.shape[0]

    def composed(self) -> np.ndarray:
        return self.W0 + self.gamma * (self.B @ self.A)

    def params(self) -> dict[str, np.ndarray]:
        out = {"A": self.A, "B": self.B}
        if self.method == "dora":
            out["m"] = self.m
        return out

    def with_params(self, **params: np.ndarray) -> AdapterLayer:
        return replace(self, **params)


def init_layer(W0: np.ndarray, r: int, alpha: float, method: str = "lora",
               seed: int = 42) -> AdapterLayer:
    """A ~ U(-1/sqrt(d_in), 1/sqrt(d_in)), B = 0, m = per-output norms of W0."""
    W0 = np.asarray(W0, dtype=np.float64)
    d_out, d_in = W0.shape
    rng = np.random.default_rng(seed)
    bound = 1.0 / math.sqrt(d_in)
    A = rng.uniform(-bound, bound, size=(r, d_in))
    B = np.zeros((d_out, r))
    m = row_norms(W0) if method == "dora" else None
    return AdapterLayer(W0, A, B, scaling_factor(method, alpha, r), method, m)


def _check_input(layer: AdapterLayer, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    if x.shape[0] != layer.d_in:
        raise ValueError(f"input has leading dimension {x.shape[0]}, layer expects {layer.d_in}")
    return x


def _dropped(h: np.ndarray, dropout_mask: np.ndarray | None) -> np.ndarray:
    return h if dropout_mask is None else h * dropout_mask


def adapter_forward(layer: AdapterLayer, x: np.ndarray,
                    dropout_mask: np.ndarray | None = None) -> np.ndarray:
    """y = W0 x + gamma * B (A x). ``x`` may be a vector or a ``d_in x n`` batch.

    ``dropout_mask`` (already scaled by 1/(1-p)) multiplies the ``A x``
    intermediate during training.
    """
    if layer.method == "dora":
        return dora_forward(layer, x, dropout_mask)
    x = _check_input(layer, x)
    return layer.W0 @ x + layer.gamma * (layer.B @ _dropped(layer.A @ x, dropout_mask))


def dora_norms(layer: AdapterLayer) -> np.ndarray:
    norms = row_norms(layer.composed())
    if np.any(norms == 0.0):
        rows = np.flatnonzero(norms == 0.0).tolist()
        raise SingularNormError(f"zero-norm direction for output unit(s) {rows}")
    return norms


def dora_forward(layer: AdapterLayer, x: np.ndarray,
                 dropout_mask: np.ndarray | None = None) -> np.ndarray:
    if layer.m is None:
        raise ValueError("DoRA forward needs a magnitude vector")
    x = _check_input(layer, x)
    norms = dora_norms(layer)
    s = layer.W0 @ x + layer.gamma * (layer.B @ _dropped(layer.A @ x, dropout_mask))
    scale = layer.m / norms
    return scale[:, None] * s if s.ndim == 2 else scale * s


def forward(layer: AdapterLayer, x: np.ndarray, dropout_mask: np.ndarray | None = None) -> np.ndarray:
    return adapter_forward(layer, x, dropout_mask)


def adapter_grads(layer: AdapterLayer, x: np.ndarray, upstream: np.ndarray,
                  dropout_mask: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Gradients of <upstream, forward(x)> w.r.t. A, B (and m for DoRA).

    Batched inputs (``d_in x n`` with ``d_out x n`` upstream) sum over the batch.
    """
    x = _check_input(layer, x)
    u = np.asarray(upstream, dtype=np.float64)
    if u.shape[0] != layer.d_out:
        raise ValueError(f"upstream has leading dimension {u.shape[0]}, layer outputs {layer.d_out}")
    X = x[:, None] if x.ndim == 1 else x
    U = u[:, None] if u.ndim == 1 else u
    g = layer.gamma
    H = _dropped(layer.A @ X, None if dropout_mask is None else
                 (dropout_mask[:, None] if dropout_mask.ndim == 1 else dropout_mask))

    if layer.method != "dora":
        return {"A": g * _grad_a(layer.B.T @ U, X, dropout_mask), "B": g * (U @ H.T)}

    norms = dora_norms(layer)
    V = layer.composed()
    S = layer.W0 @ X + g * (layer.B @ H)              # unnormalised outputs, d_out x n
    scale = layer.m / norms
    grad_m = np.sum(U * S, axis=1) / norms
    # d/dV of m_i * s_i / ||V_i||: the direct path through s, and the norm path
    Us = U * scale[:, None]                           # upstream seen by s
    coef = np.sum(U * S, axis=1) * layer.m / norms**3
    grad_V_norm = -coef[:, None] * V                  # norm path, d_out x d_in
    grad_B = g * (Us @ H.T) + g * (grad_V_norm @ layer.A.T)
    grad_A = g * _grad_a(layer.B.T @ Us, X, dropout_mask) + g * (layer.B.T @ grad_V_norm)
    return {"A": grad_A, "B": grad_B, "m": grad_m}


def _grad_a(BtU: np.ndarray, X: np.ndarray, dropout_mask: np.ndarray | None) -> np.ndarray:
    if dropout_mask is not None:
        mask = dropout_mask[:, None] if dropout_mask.ndim == 1 else dropout_mask
        BtU = BtU * mask
    return BtU @ X.T


def gradient_check(layer: AdapterLayer, x: np.ndarray, eps: float = 1e-5,
                   upstream: np.ndarray | None = None, floor: float = 1e-12,
                   seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    The scalar being differentiated is <upstream, forward(x)>; a seeded
    random ``upstream`` is drawn when none is given. Perturbed objectives
    are evaluated in extended precision so the difference quotient is not
    swamped by float64 round-off on small gradient entries.
    """
    if not 0 < eps <= 1e-2:
        raise ValueError(f"eps must lie in (0, 1e-2], got {eps}")
    x = _check_input(layer, x)
    if upstream is None:
        out_shape = (layer.d_out,) if x.ndim == 1 else (layer.d_out, x.shape[1])
        upstream = np.random.default_rng(seed).standard_normal(out_shape)
    upstream = np.asarray(upstream, dtype=np.float64)

    wide = np.longdouble
    x_wide, u_wide = x.astype(wide), upstream.astype(wide)
    base = replace(layer, W0=layer.W0.astype(wide), A=layer.A.astype(wide), B=layer.B.astype(wide),
                   m=None if layer.m is None else layer.m.astype(wide))
    step = wide(eps)

    def objective(candidate: AdapterLayer):
        val = np.sum(u_wide * adapter_forward(candidate, x_wide))
        if not np.isfinite(val):
            raise NonFiniteError("non-finite objective during gradient check")
        return val

    analytic = adapter_grads(layer, x, upstream)
    worst = 0.0
    for name, value in base.params().items():
        grad = analytic[name]
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"non-finite analytic gradient for {name}")
        for idx in np.ndindex(value.shape):
            plus = value.copy()
            plus[idx] += step
            minus = value.copy()
            minus[idx] -= step
            numeric = float((objective(base.with_params(**{name: plus}))
                             - objective(base.with_params(**{name: minus}))) / (2 * step))
            a = float(grad[idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst
