"""Corpus BLEU, chrF, and bootstrap standard errors.

BLEU tokenization: every Unicode punctuation codepoint (category P*) is
split off as its own token, then text is split on Unicode whitespace;
case is kept. No smoothing: a zero pooled precision gives BLEU 0. Orders
for which the hypotheses contain no n-grams at all are left out of the
geometric mean, so short identical sentences still score 100.

chrF: character n-grams of orders 1-6 with whitespace removed, precision
and recall pooled over the corpus per order, averaged over the orders that
have reference n-grams, combined with beta = 2.
"""

from __future__ import annotations

import logging
import math
import unicodedata
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .parallel import ordered_map
from .rng import Xoshiro256, stream_seeds

log = logging.getLogger(__name__)

BLEU_ORDER = 4
CHRF_ORDER = 6
CHRF_BETA = 2.0
DEFAULT_RESAMPLES = 1000
DEFAULT_SEED = 42


@dataclass(frozen=True)
class SentencePair:
    hypothesis: str
    reference: str
    direction: str = ""

    def __post_init__(self) -> None:
        if not self.reference:
            raise ValueError("reference must be non-empty")


@dataclass(frozen=True)
class MetricScore:
    metric: str
    value: float
    stderr: float
    n_resamples: int
    seed: int
    warning: str | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.value <= 100.0:
            raise ValueError(f"{self.metric} value {self.value} outside [0, 100]")
        if self.stderr < 0:
            raise ValueError("stderr must be non-negative")

    def to_json(self) -> dict:
        out = asdict(self)
        if out["warning"] is None:
            del out["warning"]
        return out


def _as_pairs(pairs) -> list[tuple[str, str]]:
    out = []
    for p in pairs:
        if isinstance(p, SentencePair):
            out.append((p.hypothesis, p.reference))
        else:
            hyp, ref = p[0], p[1]
            out.append((hyp, ref))
    return out


# ---------------------------------------------------------------- BLEU

def bleu_tokenize(text: str) -> list[str]:
    spaced = "".join(f" {c} " if unicodedata.category(c).startswith("P") else c for c in text)
    return spaced.split()


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(hypothesis: str, reference: str, order: int = BLEU_ORDER) -> np.ndarray:
    """Sufficient statistics: [hyp_len, ref_len, match_1, total_1, ..., match_N, total_N]."""
    hyp = bleu_tokenize(hypothesis)
    ref = bleu_tokenize(reference)
    stats = np.zeros(2 + 2 * order, dtype=np.int64)
    stats[0], stats[1] = len(hyp), len(ref)
    for n in range(1, order + 1):
        h, r = _ngrams(hyp, n), _ngrams(ref, n)
        stats[2 * n] = sum((h & r).values())
        stats[2 * n + 1] = sum(h.values())
    return stats


def bleu_from_stats(stats: np.ndarray, order: int = BLEU_ORDER) -> float:
    hyp_len, ref_len = int(stats[0]), int(stats[1])
    if hyp_len == 0:
        return 0.0
    log_sum, used = 0.0, 0
    for n in range(1, order + 1):
        match, total = int(stats[2 * n]), int(stats[2 * n + 1])
        if total == 0:
            continue
        if match == 0:
            return 0.0
        log_sum += math.log(match / total)
        used += 1
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_sum / used)


def bleu(pairs: Iterable) -> float:
    pairs = _as_pairs(pairs)
    if not pairs:
        raise ValueError("BLEU needs at least one sentence pair")
    return bleu_from_stats(sum(bleu_stats(h, r) for h, r in pairs))


# ---------------------------------------------------------------- chrF

def _strip_ws(text: str) -> str:
    return "".join(text.split())


def chrf_stats(hypothesis: str, reference: str, order: int = CHRF_ORDER) -> np.ndarray:
    """Per order: [hyp n-grams, ref n-grams, matches], flattened."""
    hyp, ref = _strip_ws(hypothesis), _strip_ws(reference)
    stats = np.zeros(3 * order, dtype=np.int64)
    for n in range(1, order + 1):
        h, r = _ngrams(hyp, n), _ngrams(ref, n)
        stats[3 * (n - 1)] = sum(h.values())
        stats[3 * (n - 1) + 1] = sum(r.values())
        stats[3 * (n - 1) + 2] = sum((h & r).values())
    return stats


def chrf_from_stats(stats: np.ndarray, order: int = CHRF_ORDER, beta: float = CHRF_BETA) -> float:
    prec_sum = rec_sum = 0.0
    used = 0
    for n in range(order):
        hyp_n, ref_n, match = (int(v) for v in stats[3 * n:3 * n + 3])
        if ref_n == 0:
            continue
        prec_sum += match / hyp_n if hyp_n else 0.0
        rec_sum += match / ref_n
        used += 1
    if used == 0:
        return 0.0
    p, r = prec_sum / used, rec_sum / used
    if p + r == 0:
        return 0.0
    b2 = beta * beta
    return 100.0 * (1 + b2) * p * r / (b2 * p + r)


def chrf(pairs: Iterable) -> float:
    pairs = _as_pairs(pairs)
    if not pairs:
        raise ValueError("chrF needs at least one sentence pair")
    return chrf_from_stats(sum(chrf_stats(h, r) for h, r in pairs))


# ---------------------------------------------------------------- bootstrap

_STATS = {"bleu": (bleu_stats, bleu_from_stats), "chrf": (chrf_stats, chrf_from_stats)}


def resample_indices(n: int, stream_seed: int) -> list[int]:
    gen = Xoshiro256(stream_seed)
    return [gen.below(n) for _ in range(n)]


def _resample_scores(args) -> list[float]:
    metric, per_pair, seeds = args
    _, score = _STATS[metric]
    n = len(per_pair)
    out = []
    for s in seeds:
        idx = resample_indices(n, s)
        out.append(score(per_pair[idx].sum(axis=0)))
    return out


def bootstrap_stderr(pairs: Iterable, metric: str = "bleu", n_resamples: int = DEFAULT_RESAMPLES,
                     seed: int = DEFAULT_SEED, workers: int = 1) -> MetricScore:
    """Point estimate on the full set plus the spread of resampled scores.

    Resample ``i`` draws its indices from its own generator seeded with the
    ``i``-th splitmix64 output of ``seed``, so the result does not depend on
    how resamples are spread over workers. ``stderr`` is the population
    standard deviation of the resample scores.
    """
    if metric not in _STATS:
        raise ValueError(f"unknown metric {metric!r}")
    if n_resamples < 2:
        raise ValueError(f"n_resamples must be >= 2, got {n_resamples}")
    pairs = _as_pairs(pairs)
    if not pairs:
        raise ValueError(f"{metric} needs at least one sentence pair")
    stats_fn, score_fn = _STATS[metric]
    per_pair = np.stack([stats_fn(h, r) for h, r in pairs])
    value = score_fn(per_pair.sum(axis=0))
    if len(pairs) < 2:
        log.warning("bootstrap over %d pair(s): stderr reported as 0", len(pairs))
        return MetricScore(metric, value, 0.0, n_resamples, seed, warning="fewer than 2 pairs")

    seeds = stream_seeds(seed, n_resamples)
    n_jobs = max(1, min(workers, n_resamples))
    size = math.ceil(n_resamples / n_jobs)
    jobs = [(metric, per_pair, seeds[i:i + size]) for i in range(0, n_resamples, size)]
    scores = [s for chunk in ordered_map(_resample_scores, jobs, workers) for s in chunk]
    stderr = float(np.std(np.asarray(scores), ddof=0))
    return MetricScore(metric, value, stderr, n_resamples, seed)
