"""Pretraining corpus preparation.

normalize -> language filter -> exact dedup -> replay interleave -> chunk,
with a manifest that mirrors the source-bucket table (documents and tokens
per bucket, Sardinian total, replay, combined).
"""

from __future__ import annotations

import hashlib
import logging
import unicodedata
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

from .rng import Xoshiro256
from .tokenizer import Tokenizer

log = logging.getLogger(__name__)

SARDINIAN_BUCKETS = ("web", "wikipedia", "glotcc", "books", "poetry", "bilingual")
REPLAY_BUCKET = "replay"
SOURCE_BUCKETS = SARDINIAN_BUCKETS + (REPLAY_BUCKET,)

BUCKET_LABELS = {
    "web": "Web scrape",
    "wikipedia": "Sardinian Wikipedia",
    "glotcc": "GlotCC CommonCrawl",
    "books": "Translated books",
    "poetry": "Poetry anthologies",
    "bilingual": "Bilingual text and song lyrics",
    "replay": "Romance replay",
}

DEFAULT_WINDOW = 4096
DEFAULT_OVERLAP = 128
DEFAULT_SEED = 42
PIPELINE_ORDER = ("normalize", "template-drop", "language-filter", "dedup", "interleave", "chunk")

# Sardinian is absent from common language-ID models and lands on its
# Romance neighbours, so those labels are retained.
KEEP_LANGS = frozenset({"it", "es", "pt", "ca", "sc"})
DROP_LANGS = frozenset({"en", "de", "fr"})
UNKNOWN_LANGS = frozenset({"", "unknown", "und", "unk", "ambiguous"})

LANG_ALIASES = {
    "italian": "it", "ita": "it",
    "spanish": "es", "spa": "es",
    "portuguese": "pt", "por": "pt",
    "catalan": "ca", "cat": "ca",
    "sardinian": "sc", "srd": "sc",
    "english": "en", "eng": "en",
    "german": "de", "deu": "de", "ger": "de",
    "french": "fr", "fra": "fr", "fre": "fr",
}


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    source: str
    lang_hint: str | None = None
    dictionary_template: bool = False

    def __post_init__(self) -> None:
        if self.source not in SOURCE_BUCKETS:
            raise ValueError(f"document {self.id!r}: unknown source {self.source!r}")

    @classmethod
    def from_json(cls, obj: dict) -> Document:
        missing = [k for k in ("id", "text", "source") if k not in obj]
        if missing:
            raise ValueError(f"missing field(s): {', '.join(missing)}")
        if not isinstance(obj["text"], str):
            raise ValueError("field 'text' must be a string")
        return cls(
            id=str(obj["id"]),
            text=obj["text"],
            source=obj["source"],
            lang_hint=obj.get("lang_hint"),
            dictionary_template=bool(obj.get("dictionary_template", False)),
        )


@dataclass(frozen=True)
class TokenChunk:
    doc_id: str
    index: int
    token_ids: tuple[int, ...]
    start: int
    end: int

    def to_json(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "index": self.index,
            "start": self.start,
            "end": self.end,
            "token_ids": list(self.token_ids),
        }


@dataclass(frozen=True)
class DropRecord:
    id: str
    reason: str
    kept_id: str | None = None
    label: str | None = None
    confidence: float | None = None

    def to_json(self) -> dict:
        out = {"id": self.id, "reason": self.reason}
        if self.kept_id is not None:
            out["kept_id"] = self.kept_id
        if self.label is not None:
            out["label"] = self.label
        if self.confidence is not None:
            out["confidence"] = self.confidence
        return out


@dataclass(frozen=True)
class FilterDecision:
    doc_id: str
    keep: bool
    reason: str
    label: str | None
    confidence: float | None
    warning: str | None = None


# ---------------------------------------------------------------- normalize

def normalize_text(text: str, preserve_linebreaks: bool = False) -> str:
    """NFC, collapse whitespace runs, strip.

    With ``preserve_linebreaks`` the line structure (blank lines included)
    is kept and only horizontal whitespace inside each line is collapsed.
    """
    text = unicodedata.normalize("NFC", text)
    if not preserve_linebreaks:
        return " ".join(text.split())
    lines = [" ".join(line.split()) for line in text.splitlines()]
    return "\n".join(lines).strip("\n")


def normalize_document(doc: Document) -> Document:
    return replace(doc, text=normalize_text(doc.text, preserve_linebreaks=doc.source == "poetry"))


# ---------------------------------------------------------------- language filter

def canonical_lang(label: str | None) -> str:
    if label is None:
        return "unknown"
    label = label.strip().lower()
    # tolerate "it_Latn" / "it-IT" style labels
    for sep in ("_", "-"):
        if sep in label:
            label = label.split(sep, 1)[0]
    return LANG_ALIASES.get(label, label)


Classifier = Callable[[str], "tuple[str | None, float]"]


def hint_classifier(doc: Document) -> tuple[str | None, float]:
    """Fallback classifier that trusts the document's ``lang_hint``."""
    return doc.lang_hint, 1.0 if doc.lang_hint else 0.0


def filter_language(doc: Document, classifier: Classifier | None = None,
                    min_drop_confidence: float = 0.0) -> FilterDecision:
    """Keep/drop decision for one document.

    Only English, German and French are dropped. Unknown labels,
    low-confidence drop labels, and classifier failures are kept.
    """
    try:
        if classifier is None:
            label, confidence = hint_classifier(doc)
        else:
            label, confidence = classifier(doc.text)
    except Exception as exc:  # fail open
        log.warning("classifier failed on %s: %s", doc.id, exc)
        return FilterDecision(doc.id, True, "classifier-error", None, None,
                              warning=f"classifier error: {exc}")
    lang = canonical_lang(label)
    conf = None if confidence is None else float(confidence)
    if lang in UNKNOWN_LANGS:
        return FilterDecision(doc.id, True, "unknown-language", label, conf,
                              warning="language unknown; retained")
    if lang in DROP_LANGS:
        if conf is not None and conf < min_drop_confidence:
            return FilterDecision(doc.id, True, "ambiguous-language", label, conf,
                                  warning="low-confidence drop label; retained")
        return FilterDecision(doc.id, False, f"language-{lang}", label, conf)
    if lang in KEEP_LANGS:
        return FilterDecision(doc.id, True, f"language-{lang}", label, conf)
    return FilterDecision(doc.id, True, "other-language-retained", label, conf)


# ---------------------------------------------------------------- dedup

def text_key(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def dedup_documents(docs: Iterable[Document]) -> tuple[list[Document], list[DropRecord]]:
    """Exact dedup on the hash of (already normalized) text; first occurrence wins."""
    seen: dict[str, str] = {}
    kept, drops = [], []
    for doc in docs:
        key = text_key(doc.text)
        first = seen.get(key)
        if first is None:
            seen[key] = doc.id
            kept.append(doc)
        else:
            drops.append(DropRecord(doc.id, "duplicate", kept_id=first))
    return kept, drops


# ---------------------------------------------------------------- chunking

def chunk_document(token_ids: Sequence[int], window: int = DEFAULT_WINDOW,
                   overlap: int = DEFAULT_OVERLAP, doc_id: str = "") -> list[TokenChunk]:
    """Split a token sequence into windows sharing ``overlap`` tokens.

    Windows start at multiples of ``window - overlap``; the last one ends at
    the document end. Documents that fit in one window give one chunk.
    """
    if window < 1:
        raise ValueError(f"window must be positive, got {window}")
    if not 0 <= overlap < window:
        raise ValueError(f"overlap must satisfy 0 <= overlap < window, got {overlap} vs {window}")
    n = len(token_ids)
    if n == 0:
        raise ValueError("cannot chunk an empty token sequence")
    stride = window - overlap
    chunks = []
    start = 0
    while True:
        end = min(start + window, n)
        chunks.append(TokenChunk(doc_id, len(chunks), tuple(token_ids[start:end]), start, end))
        if end == n:
            return chunks
        start += stride


def reconstruct(chunks: Sequence[TokenChunk], overlap: int) -> list[int]:
    out: list[int] = []
    for i, c in enumerate(chunks):
        out.extend(c.token_ids if i == 0 else c.token_ids[overlap:])
    return out


# ---------------------------------------------------------------- replay mixing

def interleave_replay(sardinian_docs: Sequence, replay_docs: Sequence,
                      seed: int = DEFAULT_SEED) -> list:
    """Document-level shuffle of Sardinian and replay text. No language tags."""
    out = list(sardinian_docs) + list(replay_docs)
    Xoshiro256(seed).shuffle(out)
    return out


# ---------------------------------------------------------------- manifest

@dataclass
class CorpusManifest:
    documents: dict[str, int] = field(default_factory=lambda: dict.fromkeys(SOURCE_BUCKETS, 0))
    tokens: dict[str, int] = field(default_factory=lambda: dict.fromkeys(SOURCE_BUCKETS, 0))
    chunks: int = 0
    tokenizer: str = "byte-level"
    pipeline_order: tuple[str, ...] = PIPELINE_ORDER
    dropped: dict[str, int] = field(default_factory=dict)

    @property
    def sardinian_documents(self) -> int:
        return sum(self.documents[b] for b in SARDINIAN_BUCKETS)

    @property
    def sardinian_tokens(self) -> int:
        return sum(self.tokens[b] for b in SARDINIAN_BUCKETS)

    @property
    def replay_documents(self) -> int:
        return self.documents[REPLAY_BUCKET]

    @property
    def replay_tokens(self) -> int:
        return self.tokens[REPLAY_BUCKET]

    @property
    def combined_documents(self) -> int:
        return self.sardinian_documents + self.replay_documents

    @property
    def combined_tokens(self) -> int:
        return self.sardinian_tokens + self.replay_tokens

    def rows(self) -> list[dict]:
        rows = [{"source": b, "label": BUCKET_LABELS[b], "documents": self.documents[b],
                 "tokens": self.tokens[b]} for b in SARDINIAN_BUCKETS]
        rows.append({"source": "total_sardinian", "label": "Total Sardinian",
                     "documents": self.sardinian_documents, "tokens": self.sardinian_tokens})
        rows.append({"source": REPLAY_BUCKET, "label": BUCKET_LABELS[REPLAY_BUCKET],
                     "documents": self.replay_documents, "tokens": self.replay_tokens})
        rows.append({"source": "combined", "label": "Combined corpus",
                     "documents": self.combined_documents, "tokens": self.combined_tokens})
        return rows

    def to_json(self) -> dict:
        return {
            "rows": self.rows(),
            "chunks": self.chunks,
            "tokenizer": self.tokenizer,
            "pipeline_order": list(self.pipeline_order),
            "dropped": dict(sorted(self.dropped.items())),
        }


def corpus_stats(docs: Iterable[Document], chunks: Sequence[TokenChunk],
                 tokenizer: Tokenizer, token_counts: dict[str, int] | None = None) -> CorpusManifest:
    """Per-bucket document and token counts plus totals.

    ``token_counts`` (doc id -> tokens) skips re-tokenizing when the caller
    already has the counts.
    """
    m = CorpusManifest(tokenizer=tokenizer.name, chunks=len(chunks))
    for doc in docs:
        m.documents[doc.source] += 1
        n = token_counts[doc.id] if token_counts is not None else tokenizer.count(doc.text)
        m.tokens[doc.source] += n
    return m


# ---------------------------------------------------------------- pipeline

@dataclass
class PreparedCorpus:
    documents: list[Document]
    chunks: list[TokenChunk]
    drops: list[DropRecord]
    manifest: CorpusManifest


def _tokenize_and_chunk(args) -> tuple[int, list[TokenChunk]]:
    doc, tokenizer, window, overlap = args
    ids = tokenizer.encode(doc.text)
    return len(ids), chunk_document(ids, window, overlap, doc_id=doc.id)


def _filter_task(args) -> FilterDecision:
    doc, classifier, min_conf = args
    return filter_language(doc, classifier, min_conf)


def prepare_corpus(docs: Sequence[Document], tokenizer: Tokenizer, *,
                   window: int = DEFAULT_WINDOW, overlap: int = DEFAULT_OVERLAP,
                   seed: int = DEFAULT_SEED, dedup: bool = True,
                   classifier: Classifier | None = None, min_drop_confidence: float = 0.0,
                   workers: int = 1) -> PreparedCorpus:
    """Run the whole preparation pipeline; output is independent of ``workers``."""
    from .parallel import ordered_map

    ids = [d.id for d in docs]
    if len(set(ids)) != len(ids):
        dupes = sorted(i for i, n in Counter(ids).items() if n > 1)
        raise ValueError(f"document ids must be unique; repeated: {dupes[:5]}")
    if not 0 <= overlap < window:
        raise ValueError(f"overlap must satisfy 0 <= overlap < window, got {overlap} vs {window}")

    drops: list[DropRecord] = []
    normalized = ordered_map(normalize_document, docs, workers)
    live = []
    for doc in normalized:
        if not doc.text:
            drops.append(DropRecord(doc.id, "empty-after-normalization"))
        elif doc.dictionary_template:
            drops.append(DropRecord(doc.id, "dictionary-template"))
        else:
            live.append(doc)

    decisions = ordered_map(_filter_task, [(d, classifier, min_drop_confidence) for d in live], workers)
    kept = []
    for doc, dec in zip(live, decisions):
        if dec.keep:
            kept.append(doc)
        else:
            drops.append(DropRecord(doc.id, dec.reason, label=dec.label, confidence=dec.confidence))

    if dedup:
        kept, dup_drops = dedup_documents(kept)
        drops.extend(dup_drops)

    sardinian = [d for d in kept if d.source != REPLAY_BUCKET]
    replay = [d for d in kept if d.source == REPLAY_BUCKET]
    mixed = interleave_replay(sardinian, replay, seed)

    results = ordered_map(_tokenize_and_chunk, [(d, tokenizer, window, overlap) for d in mixed], workers)
    chunks: list[TokenChunk] = []
    counts = {}
    for doc, (n, doc_chunks) in zip(mixed, results):
        counts[doc.id] = n
        chunks.extend(doc_chunks)

    manifest = corpus_stats(mixed, chunks, tokenizer, token_counts=counts)
    dropped: dict[str, int] = {}
    for d in drops:
        dropped[d.reason] = dropped.get(d.reason, 0) + 1
    manifest.dropped = dropped
    return PreparedCorpus(mixed, chunks, drops, manifest)
