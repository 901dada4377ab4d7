import math
import random

import pytest
from hypothesis import given, strategies as st

from lowres_adapt.metrics import (MetricScore, SentencePair, bleu, bleu_tokenize, bootstrap_stderr,
                                  chrf, resample_indices)
from lowres_adapt.rng import stream_seeds

import oracles

VOCAB = ["su", "sa", "limba", "domo", ",", ".", "!", "àinu", "Su", "de", "a", "b"]


def random_corpus(rng, max_pairs=10, max_tokens=12):
    pairs = []
    for _ in range(rng.randint(1, max_pairs)):
        ref = " ".join(rng.choices(VOCAB, k=rng.randint(1, max_tokens)))
        hyp = " ".join(rng.choices(VOCAB, k=rng.randint(0, max_tokens)))
        pairs.append((hyp, ref))
    return pairs


# ---------------------------------------------------------------- BLEU

def test_tokenize_splits_punctuation():
    assert bleu_tokenize("Ciao, mundu!  «sì»") == ["Ciao", ",", "mundu", "!", "«", "sì", "»"]


def test_bleu_examples():
    assert bleu([("a b c d", "a b c d")]) == 100.0
    assert bleu([("x y z", "a b c")]) == 0.0
    assert bleu([("a b c d", "a b c d e")]) == pytest.approx(100 * math.exp(-0.25), abs=1e-12)
    assert bleu([("a b c d", "a b c d e")]) == pytest.approx(oracles.bleu([("a b c d", "a b c d e")]), abs=1e-12)


def test_bleu_short_identical_is_100():
    assert bleu([("sì", "sì")]) == 100.0


def test_bleu_is_case_sensitive():
    assert bleu([("Su", "su")]) == 0.0


def test_empty_corpus_rejected():
    with pytest.raises(ValueError):
        bleu([])
    with pytest.raises(ValueError):
        chrf([])


# ---------------------------------------------------------------- chrF

def test_chrf_examples():
    assert chrf([("sa limba", "sa limba")]) == 100.0
    assert chrf([("", "sa limba")]) == 0.0
    assert chrf([("abc", "abd")]) == pytest.approx(oracles.chrf([("abc", "abd")]), abs=1e-12)
    # orders 1-3 only: P = R = (2/3 + 1/2 + 0) / 3
    assert chrf([("abc", "abd")]) == pytest.approx(100 * 7 / 18, abs=1e-12)


def test_chrf_ignores_whitespace():
    assert chrf([("sa limba", "salimba")]) == 100.0


# ---------------------------------------------------------------- oracle and properties

def test_oracle_equivalence():
    rng = random.Random(123)
    for _ in range(50):
        pairs = random_corpus(rng)
        assert bleu(pairs) == pytest.approx(oracles.bleu(pairs), abs=1e-9)
        assert chrf(pairs) == pytest.approx(oracles.chrf(pairs), abs=1e-9)


text = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=30)


@given(st.lists(st.tuples(text, text.filter(bool)), min_size=1, max_size=5))
def test_scores_in_range(pairs):
    for metric in (bleu, chrf):
        assert 0.0 <= metric(pairs) <= 100.0


@given(st.lists(st.tuples(text, text.filter(bool)), min_size=1, max_size=5))
def test_fuzz_against_oracle(pairs):
    assert bleu(pairs) == pytest.approx(oracles.bleu(pairs), abs=1e-9)
    assert chrf(pairs) == pytest.approx(oracles.chrf(pairs), abs=1e-9)


@given(st.lists(text.filter(lambda t: t.strip()), min_size=1, max_size=5))
def test_identical_scores_100(refs):
    pairs = [(r, r) for r in refs]
    assert bleu(pairs) == 100.0 and chrf(pairs) == 100.0


def test_sentence_pair_requires_reference():
    with pytest.raises(ValueError):
        SentencePair("x", "")
    assert bleu([SentencePair("a b", "a b", "EN-SC")]) == 100.0


def test_metric_score_range():
    with pytest.raises(ValueError):
        MetricScore("bleu", 101.0, 0.0, 10, 42)
    with pytest.raises(ValueError):
        MetricScore("bleu", 50.0, -1.0, 10, 42)


# ---------------------------------------------------------------- bootstrap

def twenty_pairs():
    rng = random.Random(9)
    return [(" ".join(rng.choices(VOCAB[:6], k=8)), " ".join(rng.choices(VOCAB[:6], k=8))) for _ in range(20)]


def test_resample_indices_match_oracle_rng():
    seed = stream_seeds(42, 3)[2]
    rng = oracles.Rng(seed)
    assert resample_indices(17, seed) == [rng.below(17) for _ in range(17)]


@pytest.mark.parametrize("metric", ["bleu", "chrf"])
def test_bootstrap_matches_oracle(metric):
    pairs = twenty_pairs()
    score = bootstrap_stderr(pairs, metric, n_resamples=200, seed=42)
    expected = oracles.bootstrap_stderr(pairs, metric, 200, 42)
    assert score.stderr == pytest.approx(expected, rel=0.10)
    assert score.stderr == pytest.approx(expected, rel=1e-9)


def test_bootstrap_identical_pairs():
    pairs = [("su sardu", "su sardu")] * 20
    score = bootstrap_stderr(pairs, "bleu", 100)
    assert (score.value, score.stderr) == (100.0, 0.0)


def test_bootstrap_point_estimate_independent_of_resampling():
    pairs = twenty_pairs()
    values = {bootstrap_stderr(pairs, "chrf", n, s).value for n, s in [(2, 1), (50, 2), (100, 42)]}
    assert values == {chrf(pairs)}


def test_bootstrap_workers_do_not_change_result():
    pairs = twenty_pairs()
    a = bootstrap_stderr(pairs, "bleu", 100, workers=1)
    b = bootstrap_stderr(pairs, "bleu", 100, workers=3)
    assert a == b


def test_bootstrap_single_pair_warns():
    score = bootstrap_stderr([("a", "a")], "bleu", 10)
    assert score.stderr == 0.0 and score.warning


def test_bootstrap_rejects():
    with pytest.raises(ValueError):
        bootstrap_stderr(twenty_pairs(), "bleu", 1)
    with pytest.raises(ValueError):
        bootstrap_stderr(twenty_pairs(), "ter", 10)
