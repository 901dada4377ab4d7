import random
from collections import Counter

import pytest
from hypothesis import given, strategies as st

from lowres_adapt.sft import (CHATML, ChatTemplate, InfeasibleTargets, InstructionPair,
                              assemble_pool, assign_system_prompts, dedup_pairs, pool_stats,
                              serialize_chatml, upsample_bucket)
from lowres_adapt.tokenizer import CHATML_END, CHATML_START, Tokenizer

from fixtures import POOL_RAW_COUNTS, random_pair, full_pool_pairs

TOK = Tokenizer()


def pair(i, user="A", assistant="B", bucket="capybara", system=None):
    turns = ((("system", system),) if system else ()) + (("user", user), ("assistant", assistant))
    return InstructionPair(f"p{i}", turns, bucket)


def scan_spans(ids, tok=TOK):
    """Re-scan a serialization into (role, content ids) spans."""
    start, end = tok.special_id(CHATML_START), tok.special_id(CHATML_END)
    newline = tok.encode("\n")[0]
    spans, i = [], 0
    while i < len(ids):
        assert ids[i] == start
        j = ids.index(newline, i + 1)
        role = tok.decode(ids[i + 1:j])
        k = ids.index(end, j + 1)
        spans.append((role, ids[j + 1:k]))
        assert ids[k + 1] == newline
        i = k + 2
    return spans


# ---------------------------------------------------------------- validation

@pytest.mark.parametrize("turns", [
    (("user", "a"),),
    (("assistant", "a"),),
    (("user", "a"), ("user", "b")),
    (("user", "a"), ("assistant", "b"), ("system", "c")),
    (("robot", "a"), ("assistant", "b")),
])
def test_invalid_turns_rejected(turns):
    with pytest.raises(ValueError):
        InstructionPair("x", turns, "capybara")


def test_unknown_bucket_rejected():
    with pytest.raises(ValueError):
        pair(0, bucket="other")


# ---------------------------------------------------------------- dedup and upsample

def test_dedup_examples():
    a, b = pair(0, "q", "r", "capybara"), pair(1, "q", "r", "synthesized", system="S")
    kept, drops = dedup_pairs([a, b])
    assert kept == [a] and drops == [{"id": "p1", "reason": "duplicate", "kept_id": "p0"}]
    distinct = [pair(i, f"q{i}") for i in range(5)]
    assert dedup_pairs(distinct)[0] == distinct
    ten = [pair(i, f"q{i % 8}") for i in range(10)]
    assert len(dedup_pairs(ten)[0]) == 8


@given(st.lists(st.sampled_from(["a", "b", "c"]), max_size=15))
def test_dedup_idempotent(users):
    pairs = [pair(i, u) for i, u in enumerate(users)]
    once, _ = dedup_pairs(pairs)
    assert dedup_pairs(once) == (once, [])


@given(st.lists(st.sampled_from(["capybara", "synthesized", "song"]), max_size=20), st.integers(1, 6))
def test_upsample_multiset(buckets, factor):
    pairs = [pair(i, f"q{i}", bucket=b) for i, b in enumerate(buckets)]
    out = upsample_bucket(pairs, "synthesized", factor)
    counts = Counter(p.id.split("#")[0] for p in out)
    for p in pairs:
        assert counts[p.id] == (factor if p.bucket == "synthesized" else 1)
    assert out[:len(pairs)] == pairs


def test_upsample_422_by_five():
    pairs = [pair(i, f"q{i}", bucket="synthesized") for i in range(422)]
    assert len(upsample_bucket(pairs, "synthesized", 5)) - 422 == 1688
    assert upsample_bucket(pairs, "synthesized", 1) == pairs
    with pytest.raises(ValueError):
        upsample_bucket(pairs, "synthesized", 0)


# ---------------------------------------------------------------- system prompts

def test_prompt_histogram_exact_on_full_pool():
    pairs = [pair(i, f"q{i}") for i in range(14404)]
    targets = {"italian": 300, "english": 250, "spanish": 150, "portuguese": 100, "french": 75}
    out = assign_system_prompts(pairs, targets, seed=42)
    hist = Counter(p.system_prompt_lang for p in out)
    for lang, n in targets.items():
        assert hist[lang] == n
    assert sum(targets.values()) == 875
    assert hist["none"] == round((14404 - 875) * 0.05)
    assert hist["sardinian"] == 14404 - 875 - hist["none"]
    assert out == assign_system_prompts(pairs, targets, seed=42)


def test_prompt_turns_match_labels():
    pairs = [pair(i, f"q{i}", system="old") for i in range(50)]
    out = assign_system_prompts(pairs, {"italian": 5}, seed=1, no_prompt_share=0.2)
    for p in out:
        assert (p.system_text is None) == (p.system_prompt_lang == "none")
        assert p.dialogue == (("user", p.dialogue[0][1]), ("assistant", "B"))


def test_all_zero_targets():
    out = assign_system_prompts([pair(i) for i in range(30)], {}, seed=3)
    assert {p.system_prompt_lang for p in out} <= {"sardinian", "none"}


@pytest.mark.parametrize("targets", [{"italian": 11}, {"klingon": 1}, {"italian": -1}])
def test_infeasible_targets(targets):
    with pytest.raises(InfeasibleTargets):
        assign_system_prompts([pair(i) for i in range(10)], targets)


@given(st.integers(0, 60), st.data())
def test_histogram_matches_feasible_targets(n, data):
    targets = {}
    left = n
    for lang in ("italian", "english", "french"):
        targets[lang] = data.draw(st.integers(0, left))
        left -= targets[lang]
    out = assign_system_prompts([pair(i) for i in range(n)], targets, seed=data.draw(st.integers(0, 99)))
    hist = Counter(p.system_prompt_lang for p in out)
    assert all(hist[k] == v for k, v in targets.items())
    assert sum(hist.values()) == n


# ---------------------------------------------------------------- serialization

def test_single_turn_mask_count():
    ex = serialize_chatml(pair(0, "A", "B"), TOK)
    assert sum(ex.loss_mask) == TOK.count("B") + 1


def test_empty_assistant_masks_only_end_marker():
    ex = serialize_chatml(pair(0, "A", ""), TOK)
    masked = [i for i, m in zip(ex.token_ids, ex.loss_mask) if m]
    assert masked == [TOK.special_id(CHATML_END)]


def test_two_assistant_turns():
    p = InstructionPair("x", (("user", "u1"), ("assistant", "risposta"), ("user", "u2"),
                              ("assistant", "àteru")), "capybara")
    ex = serialize_chatml(p, TOK)
    assistant = [ids for role, ids in scan_spans(list(ex.token_ids)) if role == "assistant"]
    assert sum(ex.loss_mask) == sum(len(s) + 1 for s in assistant)


def test_literal_marker_template():
    template = ChatTemplate(special_markers=False)
    ex = serialize_chatml(pair(0, "A", "B"), TOK, template)
    assert TOK.decode(ex.token_ids) == f"{CHATML_START}user\nA{CHATML_END}\n{CHATML_START}assistant\nB{CHATML_END}\n"
    assert sum(ex.loss_mask) == 1 + len(CHATML_END)


def test_mask_contract_on_random_pairs():
    rng = random.Random(1)
    for i in range(40):
        p = random_pair(rng, i)
        ex = serialize_chatml(p, TOK, CHATML)
        assert len(ex.loss_mask) == len(ex.token_ids)
        spans = scan_spans(list(ex.token_ids))
        assert [r for r, _ in spans] == [r for r, _ in p.turns]
        expected = sum(len(ids) + 1 for role, ids in spans if role == "assistant")
        assert sum(ex.loss_mask) == expected
        for (role, ids), (_, text) in zip(spans, p.turns):
            if role != "assistant":
                assert TOK.decode(ids) == text


# ---------------------------------------------------------------- manifest and pipeline

def test_empty_pool_manifest():
    m = pool_stats([], TOK)
    assert m.raw_pairs == 0 and m.final_pairs == 0 and m.raw_tokens == 0


def test_full_pool_arithmetic():
    pairs = full_pool_pairs()
    pool = assemble_pool(pairs, TOK)
    m = pool.manifest
    assert m.raw_by_bucket == POOL_RAW_COUNTS and m.raw_pairs == 13127
    assert m.deduped_pairs == 12716 and m.deduped_by_bucket["synthesized"] == 422
    assert m.upsampled_additions == 1688 and m.final_pairs == 14404
    assert {k: m.prompt_histogram[k] for k in ("italian", "english", "spanish", "portuguese", "french")} == {
        "italian": 300, "english": 250, "spanish": 150, "portuguese": 100, "french": 75}
    assert sum(m.prompt_histogram.values()) == 14404
    assert len(pool.examples) == 14404 and len(pool.drops) == 411
    assert m.raw_tokens > 0 and m.final_tokens > 0


def test_factor_one_final_equals_deduped():
    pairs = [pair(i, f"q{i % 30}", bucket="synthesized") for i in range(40)]
    pool = assemble_pool(pairs, TOK, upsample={"synthesized": 1}, prompt_targets={})
    assert pool.manifest.final_pairs == pool.manifest.deduped_pairs == 30


def test_assemble_independent_of_workers():
    rng = random.Random(5)
    pairs = [random_pair(rng, i) for i in range(80)]
    a = assemble_pool(pairs, TOK, prompt_targets={"italian": 10}, workers=1)
    b = assemble_pool(pairs, TOK, prompt_targets={"italian": 10}, workers=3)
    assert a.examples == b.examples and a.pairs == b.pairs
