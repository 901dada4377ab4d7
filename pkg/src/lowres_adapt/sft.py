"""Supervised fine-tuning pool assembly.

dedup -> per-bucket upsampling -> system-prompt assignment -> ChatML
serialization with a completion-only loss mask.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .corpus import normalize_text
from .rng import Xoshiro256
from .tokenizer import CHATML_END, CHATML_START, Tokenizer

ROLES = ("system", "user", "assistant")
BUCKETS = ("capybara", "translation", "synthesized", "song")
PROMPT_LANGS = ("sardinian", "italian", "english", "spanish", "portuguese", "french", "none")
# assignment order for the non-Sardinian prompt languages
FOREIGN_PROMPT_LANGS = ("italian", "english", "spanish", "portuguese", "french")
PROMPT_LANG_ALIASES = {"sc": "sardinian", "it": "italian", "en": "english", "es": "spanish",
                       "pt": "portuguese", "fr": "french"}

DEFAULT_PROMPT_TARGETS = {"italian": 300, "english": 250, "spanish": 150,
                          "portuguese": 100, "french": 75}
DEFAULT_NO_PROMPT_SHARE = 0.05
DEFAULT_UPSAMPLE = {"synthesized": 5}

DEFAULT_SYSTEM_PROMPTS = {
    "sardinian": "Ses un'assistente chi agiudat in limba sarda. Risponde semper in sardu.",
    "italian": "Sei un assistente che aiuta in lingua sarda. Rispondi in sardo.",
    "english": "You are an assistant that helps in the Sardinian language. Reply in Sardinian.",
    "spanish": "Eres un asistente que ayuda en lengua sarda. Responde en sardo.",
    "portuguese": "És um assistente que ajuda em língua sarda. Responde em sardo.",
    "french": "Tu es un assistant qui aide en langue sarde. Réponds en sarde.",
}


class InfeasibleTargets(ValueError):
    pass


@dataclass(frozen=True)
class InstructionPair:
    id: str
    turns: tuple[tuple[str, str], ...]
    bucket: str
    system_prompt_lang: str = "none"

    def __post_init__(self) -> None:
        if self.bucket not in BUCKETS:
            raise ValueError(f"pair {self.id!r}: unknown bucket {self.bucket!r}")
        if self.system_prompt_lang not in PROMPT_LANGS:
            raise ValueError(f"pair {self.id!r}: unknown prompt language {self.system_prompt_lang!r}")
        validate_turns(self.turns, self.id)

    @classmethod
    def from_json(cls, obj: dict) -> InstructionPair:
        missing = [k for k in ("id", "turns", "bucket") if k not in obj]
        if missing:
            raise ValueError(f"missing field(s): {', '.join(missing)}")
        turns = []
        for t in obj["turns"]:
            if not isinstance(t, dict) or "role" not in t or "text" not in t:
                raise ValueError("each turn needs 'role' and 'text'")
            turns.append((t["role"], t["text"]))
        lang = obj.get("system_prompt_lang")
        if lang is None:
            lang = "none"
        return cls(str(obj["id"]), tuple(turns), obj["bucket"], PROMPT_LANG_ALIASES.get(lang, lang))

    def to_json(self) -> dict:
        return {"id": self.id, "bucket": self.bucket, "system_prompt_lang": self.system_prompt_lang,
                "turns": [{"role": r, "text": t} for r, t in self.turns]}

    @property
    def system_text(self) -> str | None:
        if self.turns and self.turns[0][0] == "system":
            return self.turns[0][1]
        return None

    @property
    def dialogue(self) -> tuple[tuple[str, str], ...]:
        return self.turns[1:] if self.system_text is not None else self.turns


def validate_turns(turns: Sequence[tuple[str, str]], pair_id: str = "?") -> None:
    for role, text in turns:
        if role not in ROLES:
            raise ValueError(f"pair {pair_id!r}: unknown role {role!r}")
        if not isinstance(text, str):
            raise ValueError(f"pair {pair_id!r}: turn text must be a string")
    body = list(turns)
    if body and body[0][0] == "system":
        body = body[1:]
    for i, (role, _) in enumerate(body):
        expected = "user" if i % 2 == 0 else "assistant"
        if role != expected:
            raise ValueError(f"pair {pair_id!r}: turn {i} is {role!r}, expected {expected!r}")
    if not any(role == "assistant" for role, _ in body):
        raise ValueError(f"pair {pair_id!r}: no assistant turn")


# ---------------------------------------------------------------- dedup

def pair_key(pair: InstructionPair) -> str:
    """Content-only key: bucket and system prompt are ignored."""
    h = hashlib.sha256()
    for role, text in pair.dialogue:
        h.update(role.encode())
        h.update(b"\x00")
        h.update(normalize_text(text).encode("utf-8"))
        h.update(b"\x01")
    return h.hexdigest()


def dedup_pairs(pairs: Iterable[InstructionPair]):
    seen: dict[str, str] = {}
    kept, drops = [], []
    for p in pairs:
        key = pair_key(p)
        if key in seen:
            drops.append({"id": p.id, "reason": "duplicate", "kept_id": seen[key]})
        else:
            seen[key] = p.id
            kept.append(p)
    return kept, drops


# ---------------------------------------------------------------- upsampling

def upsample_bucket(pairs: Sequence[InstructionPair], bucket: str, factor: int) -> list[InstructionPair]:
    """Repeat every pair of ``bucket`` ``factor`` times in total.

    Originals keep their order; the ``factor - 1`` copies of each pair follow
    all originals, grouped per source pair, with ids ``<id>#copy<k>``.
    """
    if not isinstance(factor, int) or factor < 1:
        raise ValueError(f"upsample factor must be an integer >= 1, got {factor!r}")
    copies = []
    for p in pairs:
        if p.bucket == bucket:
            copies.extend(replace(p, id=f"{p.id}#copy{k}") for k in range(1, factor))
    return list(pairs) + copies


# ---------------------------------------------------------------- system prompts

def _canonical_targets(distribution: Mapping[str, int]) -> dict[str, int]:
    targets = dict.fromkeys(FOREIGN_PROMPT_LANGS, 0)
    for lang, n in distribution.items():
        lang = PROMPT_LANG_ALIASES.get(lang, lang)
        if lang not in FOREIGN_PROMPT_LANGS:
            raise InfeasibleTargets(f"no target count allowed for prompt language {lang!r}")
        if int(n) != n or n < 0:
            raise InfeasibleTargets(f"target for {lang} must be a non-negative integer, got {n!r}")
        targets[lang] = int(n)
    return targets


def no_prompt_count(remainder: int, share: float) -> int:
    return math.floor(remainder * share + 0.5)


def assign_system_prompts(pairs: Sequence[InstructionPair], distribution: Mapping[str, int],
                          seed: int = 42, no_prompt_share: float = DEFAULT_NO_PROMPT_SHARE,
                          prompts: Mapping[str, str] | None = DEFAULT_SYSTEM_PROMPTS
                          ) -> list[InstructionPair]:
    """Give each pair a system-prompt language; counts hit the targets exactly.

    Pair indices are shuffled with ``seed``; the first slice of the shuffle
    gets Italian, the next English, and so on. Of the remainder a
    ``no_prompt_share`` fraction (rounded half up) gets no prompt and the
    rest the Sardinian prompt. When ``prompts`` is given the leading system
    turn is rewritten to match (removed for "none").
    """
    targets = _canonical_targets(distribution)
    if not 0.0 <= no_prompt_share <= 1.0:
        raise InfeasibleTargets(f"no-prompt share must lie in [0, 1], got {no_prompt_share}")
    total = sum(targets.values())
    if total > len(pairs):
        raise InfeasibleTargets(f"prompt targets sum to {total} but the pool has {len(pairs)} pairs")

    order = list(range(len(pairs)))
    Xoshiro256(seed).shuffle(order)
    labels = [""] * len(pairs)
    pos = 0
    for lang in FOREIGN_PROMPT_LANGS:
        for idx in order[pos:pos + targets[lang]]:
            labels[idx] = lang
        pos += targets[lang]
    n_none = no_prompt_count(len(pairs) - pos, no_prompt_share)
    for idx in order[pos:pos + n_none]:
        labels[idx] = "none"
    for idx in order[pos + n_none:]:
        labels[idx] = "sardinian"

    out = []
    for pair, lang in zip(pairs, labels):
        turns = pair.turns
        if prompts is not None:
            body = pair.dialogue
            turns = body if lang == "none" else (("system", prompts[lang]),) + tuple(body)
        out.append(replace(pair, turns=tuple(turns), system_prompt_lang=lang))
    return out


# ---------------------------------------------------------------- serialization

@dataclass(frozen=True)
class SerializedExample:
    id: str
    token_ids: tuple[int, ...]
    loss_mask: tuple[bool, ...]

    def __post_init__(self) -> None:
        if len(self.token_ids) != len(self.loss_mask):
            raise ValueError("loss mask and token ids differ in length")

    def to_json(self) -> dict:
        return {"id": self.id, "token_ids": list(self.token_ids), "loss_mask": list(self.loss_mask)}


@dataclass(frozen=True)
class ChatTemplate:
    """ChatML frame: ``<start>role\\n text <end>\\n`` per turn.

    With ``special_markers`` the start/end markers are single special
    tokens; otherwise they are tokenized as literal text.
    """

    start: str = CHATML_START
    end: str = CHATML_END
    special_markers: bool = True
    mask_role_header: bool = True

    def marker_ids(self, marker: str, tokenizer: Tokenizer) -> list[int]:
        if self.special_markers:
            return [tokenizer.special_id(marker)]
        return tokenizer.encode(marker)


CHATML = ChatTemplate()


def serialize_chatml(pair: InstructionPair, tokenizer: Tokenizer,
                     template: ChatTemplate = CHATML) -> SerializedExample:
    """Token ids plus a mask that is true only on assistant text and its end marker."""
    ids: list[int] = []
    mask: list[bool] = []
    start = template.marker_ids(template.start, tokenizer)
    end = template.marker_ids(template.end, tokenizer)
    newline = tokenizer.encode("\n")
    for role, text in pair.turns:
        if role not in ROLES:
            raise ValueError(f"unknown role {role!r}")
        completion = role == "assistant"
        header = start + tokenizer.encode(role) + newline
        ids += header
        mask += [completion and not template.mask_role_header] * len(header)
        body = tokenizer.encode(text) + end
        ids += body
        mask += [completion] * len(body)
        ids += newline
        mask += [False] * len(newline)
    return SerializedExample(pair.id, tuple(ids), tuple(mask))


def _serialize_task(args) -> SerializedExample:
    pair, tokenizer, template = args
    return serialize_chatml(pair, tokenizer, template)


# ---------------------------------------------------------------- manifest

def pair_tokens(pair: InstructionPair, tokenizer: Tokenizer) -> int:
    return sum(tokenizer.count(text) for _, text in pair.turns)


@dataclass
class PoolManifest:
    raw_pairs: int = 0
    raw_by_bucket: dict[str, int] = field(default_factory=lambda: dict.fromkeys(BUCKETS, 0))
    raw_tokens_by_bucket: dict[str, int] = field(default_factory=lambda: dict.fromkeys(BUCKETS, 0))
    deduped_pairs: int = 0
    deduped_by_bucket: dict[str, int] = field(default_factory=lambda: dict.fromkeys(BUCKETS, 0))
    upsample_factors: dict[str, int] = field(default_factory=dict)
    upsampled_additions: int = 0
    final_pairs: int = 0
    final_by_bucket: dict[str, int] = field(default_factory=lambda: dict.fromkeys(BUCKETS, 0))
    prompt_histogram: dict[str, int] = field(default_factory=lambda: dict.fromkeys(PROMPT_LANGS, 0))
    no_prompt_share: float = DEFAULT_NO_PROMPT_SHARE
    final_tokens: int = 0
    tokenizer: str = "byte-level"
    order: tuple[str, ...] = ("dedup", "upsample", "assign-system-prompts", "serialize")

    @property
    def raw_tokens(self) -> int:
        return sum(self.raw_tokens_by_bucket.values())

    def check(self) -> None:
        if self.final_pairs != self.deduped_pairs + self.upsampled_additions:
            raise AssertionError("final count != deduped + upsampled additions")
        if sum(self.prompt_histogram.values()) not in (0, self.final_pairs):
            raise AssertionError("prompt histogram does not sum to the final count")

    def to_json(self) -> dict:
        raw_rows = [{"bucket": b, "pairs": self.raw_by_bucket[b], "tokens": self.raw_tokens_by_bucket[b]}
                    for b in BUCKETS]
        raw_rows.append({"bucket": "total_raw", "pairs": self.raw_pairs, "tokens": self.raw_tokens})
        return {
            "raw": raw_rows,
            "deduped_pairs": self.deduped_pairs,
            "deduped_by_bucket": self.deduped_by_bucket,
            "upsample_factors": dict(sorted(self.upsample_factors.items())),
            "upsampled_additions": self.upsampled_additions,
            "final_pairs": self.final_pairs,
            "final_by_bucket": self.final_by_bucket,
            "final_tokens": self.final_tokens,
            "prompt_histogram": self.prompt_histogram,
            "no_prompt_share": self.no_prompt_share,
            "tokenizer": self.tokenizer,
            "order": list(self.order),
        }


def _bucket_counts(pairs: Iterable[InstructionPair]) -> dict[str, int]:
    counts = dict.fromkeys(BUCKETS, 0)
    for p in pairs:
        counts[p.bucket] += 1
    return counts


def pool_stats(pairs: Sequence[InstructionPair], tokenizer: Tokenizer, *,
               deduped: Sequence[InstructionPair] | None = None,
               final: Sequence[InstructionPair] | None = None,
               upsample_factors: Mapping[str, int] | None = None,
               no_prompt_share: float = DEFAULT_NO_PROMPT_SHARE) -> PoolManifest:
    """Manifest over the raw pool and, when given, its deduped and final stages.

    Missing stages default to the previous one (no dedup, no upsampling).
    """
    deduped = pairs if deduped is None else deduped
    final = deduped if final is None else final
    m = PoolManifest(tokenizer=tokenizer.name, no_prompt_share=no_prompt_share,
                     upsample_factors=dict(upsample_factors or {}))
    m.raw_pairs = len(pairs)
    m.raw_by_bucket = _bucket_counts(pairs)
    for p in pairs:
        m.raw_tokens_by_bucket[p.bucket] += pair_tokens(p, tokenizer)
    m.deduped_pairs = len(deduped)
    m.deduped_by_bucket = _bucket_counts(deduped)
    m.final_pairs = len(final)
    m.final_by_bucket = _bucket_counts(final)
    m.upsampled_additions = len(final) - len(deduped)
    for p in final:
        m.prompt_histogram[p.system_prompt_lang] += 1
        m.final_tokens += pair_tokens(p, tokenizer)
    m.check()
    return m


# ---------------------------------------------------------------- pipeline

@dataclass
class AssembledPool:
    pairs: list[InstructionPair]
    examples: list[SerializedExample]
    drops: list[dict]
    manifest: PoolManifest


def assemble_pool(pairs: Sequence[InstructionPair], tokenizer: Tokenizer, *,
                  upsample: Mapping[str, int] = DEFAULT_UPSAMPLE,
                  prompt_targets: Mapping[str, int] = DEFAULT_PROMPT_TARGETS,
                  no_prompt_share: float = DEFAULT_NO_PROMPT_SHARE, seed: int = 42,
                  dedup: bool = True, prompts: Mapping[str, str] | None = DEFAULT_SYSTEM_PROMPTS,
                  template: ChatTemplate = CHATML, workers: int = 1) -> AssembledPool:
    from .parallel import ordered_map

    ids = [p.id for p in pairs]
    if len(set(ids)) != len(ids):
        raise ValueError("pair ids must be unique")
    if dedup:
        kept, drops = dedup_pairs(pairs)
    else:
        kept, drops = list(pairs), []
    final = list(kept)
    for bucket in sorted(upsample):
        if bucket not in BUCKETS:
            raise ValueError(f"cannot upsample unknown bucket {bucket!r}")
        final = upsample_bucket(final, bucket, upsample[bucket])
    # prompts are drawn after upsampling, so copies are assigned independently
    final = assign_system_prompts(final, prompt_targets, seed, no_prompt_share, prompts)
    examples = ordered_map(_serialize_task, [(p, tokenizer, template) for p in final], workers)
    manifest = pool_stats(pairs, tokenizer, deduped=kept, final=final,
                          upsample_factors=upsample, no_prompt_share=no_prompt_share)
    return AssembledPool(final, examples, drops, manifest)
