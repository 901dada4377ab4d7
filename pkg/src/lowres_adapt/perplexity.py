"""Perplexity from mean NLL, and byte-fallback normalization.

When every character costs ``k`` tokens, per-token loss is roughly the
per-character loss divided by ``k``, so ``ppl_token = ppl_info ** (1/k)``
and the information-level figure is recovered as ``ppl_token ** k``.
All losses are natural-log (nats per token).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class PerplexityRecord:
    mean_nll: float
    ppl_token: float
    k: float
    ppl_info: float

    def to_json(self) -> dict:
        return asdict(self)


def ppl_from_nll(mean_nll: float) -> float:
    if not math.isfinite(mean_nll):
        raise ValueError(f"mean NLL must be finite, got {mean_nll}")
    return math.exp(mean_nll)


def normalize_ppl(ppl_token: float, k: float) -> float:
    if not math.isfinite(ppl_token) or ppl_token < 1.0:
        raise ValueError(f"per-token perplexity must be >= 1, got {ppl_token}")
    if not math.isfinite(k) or k < 1.0:
        raise ValueError(f"bytes per codepoint must be >= 1, got {k}")
    return ppl_token ** k


def perplexity_record(mean_nll: float, k: float = 1.0) -> PerplexityRecord:
    ppl = ppl_from_nll(mean_nll)
    return PerplexityRecord(mean_nll, ppl, k, normalize_ppl(ppl, k))


def record_from_totals(token_count: int, total_nll_nats: float, k: float = 1.0) -> PerplexityRecord:
    if token_count <= 0:
        raise ValueError(f"token_count must be positive, got {token_count}")
    return perplexity_record(total_nll_nats / token_count, k)


def record_from_ppl(ppl_token: float, k: float = 1.0) -> PerplexityRecord:
    info = normalize_ppl(ppl_token, k)
    return PerplexityRecord(math.log(ppl_token), ppl_token, k, info)
