"""Deterministic synthetic inputs shared by the tests."""

import random

from lowres_adapt.corpus import Document
from lowres_adapt.sft import InstructionPair

POOL_RAW_COUNTS = {"capybara": 10517, "translation": 2020, "synthesized": 448, "song": 142}
# duplicates of earlier pairs in the same bucket; 411 in total
POOL_DUPLICATES = {"capybara": 310, "translation": 60, "synthesized": 26, "song": 15}

WORDS = ("su", "sardu", "limba", "domo", "mannu", "cantu", "àinu", "cità", "bentu", "mare",
         "fìgiu", "pane", "così", "ciao", "perché", "ñu", "ação", "😀", "zz", "a")


def _turns(rng: random.Random, tag: str, n_exchanges: int = 1, system: str | None = None):
    turns = []
    if system is not None:
        turns.append(("system", system))
    for i in range(n_exchanges):
        turns.append(("user", f"{tag} domanda {i}: " + " ".join(rng.choices(WORDS, k=rng.randint(1, 8)))))
        turns.append(("assistant", f"{tag} risposta {i}: " + " ".join(rng.choices(WORDS, k=rng.randint(1, 12)))))
    return tuple(turns)


def full_pool_pairs(seed: int = 7) -> list[InstructionPair]:
    """13,127 pairs; dedup leaves 12,716 with 422 synthesized."""
    rng = random.Random(seed)
    pairs = []
    for bucket, raw in POOL_RAW_COUNTS.items():
        n_dupes = POOL_DUPLICATES[bucket]
        originals = []
        for i in range(raw - n_dupes):
            system = "Rispondi in sardu." if i % 3 == 0 else None
            p = InstructionPair(f"{bucket}-{i}", _turns(rng, f"{bucket}{i}", system=system), bucket)
            originals.append(p)
        pairs.extend(originals)
        for j in range(n_dupes):
            src = originals[j * 7 % len(originals)]
            # differing system prompt and whitespace must not defeat dedup
            turns = tuple((r, "  " + t.replace(" ", "  ")) for r, t in src.dialogue)
            pairs.append(InstructionPair(f"{bucket}-dup{j}", (("system", "Altro prompt."),) + turns, bucket))
    return pairs


def random_pair(rng: random.Random, idx: int = 0) -> InstructionPair:
    system = rng.choice([None, "Ses un'assistente.", "Sistema: 🎵 canta\nin sardu."])
    turns = _turns(rng, f"p{idx}", n_exchanges=rng.randint(1, 4), system=system)
    # sprinkle newlines and empty strings into the text
    turns = tuple((r, t + ("\n" * rng.randint(0, 2)) if rng.random() < 0.3 else t) for r, t in turns)
    return InstructionPair(f"pair-{idx}", turns, rng.choice(["capybara", "translation", "synthesized", "song"]))


SOURCES = ("web", "wikipedia", "glotcc", "books", "poetry", "bilingual", "replay")


def random_corpus(n: int = 1000, seed: int = 3) -> list[Document]:
    rng = random.Random(seed)
    docs = []
    for i in range(n):
        source = rng.choice(SOURCES)
        if i > 10 and rng.random() < 0.05:
            text = rng.choice(docs).text + rng.choice(["", " ", "\n"])
        else:
            sep = "\n" if source == "poetry" else " "
            text = sep.join(" ".join(rng.choices(WORDS, k=rng.randint(1, 12)))
                            for _ in range(rng.randint(1, 60)))
        lang = "it" if source == "replay" else rng.choice(["sc", "sc", "sc", "en", "fr", None, "xx"])
        docs.append(Document(f"doc-{i:04d}", text, source, lang, dictionary_template=rng.random() < 0.02))
    return docs


def docs_to_jsonl(docs) -> list[dict]:
    return [{"id": d.id, "text": d.text, "source": d.source, "lang_hint": d.lang_hint,
             "dictionary_template": d.dictionary_template} for d in docs]
