"""Tokenizers and UTF-8 byte statistics.

The default tokenizer is byte-level: every UTF-8 byte of the text is one
token id in [0, 256). Chat-template markers are registered as special
tokens with ids above the byte range, so a marker always costs exactly
one token. Ordinary text never encodes to a special id; only the chat
serializer emits them.

A vocabulary-table tokenizer (greedy longest match over byte strings with
byte fallback) is provided for loading a real vocabulary later.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

CHATML_START = "<|im_start|>"
CHATML_END = "<|im_end|>"
DEFAULT_SPECIALS = (CHATML_START, CHATML_END)


def _as_text(text: str | bytes) -> str:
    if isinstance(text, bytes):
        return text.decode("utf-8")  # strict: raises UnicodeDecodeError
    return text


def _utf8(text: str | bytes) -> bytes:
    if isinstance(text, bytes):
        text.decode("utf-8")
        return text
    # lone surrogates raise UnicodeEncodeError here
    return text.encode("utf-8")


@dataclass(frozen=True)
class ByteStats:
    codepoints: int
    bytes: int

    @property
    def k(self) -> float:
        return self.bytes / self.codepoints


def bytes_per_codepoint(text: str | bytes) -> ByteStats:
    """Mean UTF-8 bytes per codepoint of ``text``; 1.0 for ASCII, 3.0 for Tibetan."""
    text = _as_text(text)
    if not text:
        raise ValueError("bytes per codepoint is undefined for empty text")
    return ByteStats(codepoints=len(text), bytes=len(_utf8(text)))


@dataclass
class Tokenizer:
    """Byte-level tokenizer, or a vocabulary tokenizer when ``vocab`` is set.

    ``vocab`` maps byte strings to ids. Bytes the vocabulary cannot cover
    fall back to per-byte ids assigned after the largest vocabulary id.
    Special tokens get ids after everything else.
    """

    name: str = "byte-level"
    byte_level: bool = True
    vocab: Mapping[bytes, int] | None = None
    specials: Sequence[str] = DEFAULT_SPECIALS
    _special_ids: dict[str, int] = field(init=False, repr=False)
    _id_to_piece: dict[int, bytes] = field(init=False, repr=False)
    _max_piece: int = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.byte_level and self.vocab:
            raise ValueError("byte-level mode takes no vocabulary")
        if not self.byte_level and not self.vocab:
            raise ValueError("vocabulary mode needs a non-empty vocabulary")
        if self.byte_level:
            self._id_to_piece = {b: bytes([b]) for b in range(256)}
            self._max_piece = 1
        else:
            pieces: dict[int, bytes] = {}
            for piece, idx in self.vocab.items():
                if not piece:
                    raise ValueError("empty vocabulary entry")
                if idx in pieces:
                    raise ValueError(f"duplicate vocabulary id {idx}")
                pieces[idx] = bytes(piece)
            next_id = max(pieces) + 1
            known = set(pieces.values())
            for b in range(256):
                single = bytes([b])
                if single in known:
                    continue
                pieces[next_id] = single
                next_id += 1
            self._id_to_piece = pieces
            self._max_piece = max(len(p) for p in pieces.values())
        self._piece_to_id = {p: i for i, p in self._id_to_piece.items()}
        base = max(self._id_to_piece) + 1
        self._special_ids = {s: base + i for i, s in enumerate(self.specials)}
        self._special_by_id = {i: s for s, i in self._special_ids.items()}

    @property
    def vocab_size(self) -> int:
        return len(self._id_to_piece) + len(self._special_ids)

    def special_id(self, marker: str) -> int:
        try:
            return self._special_ids[marker]
        except KeyError:
            raise KeyError(f"{marker!r} is not a special token of {self.name}") from None

    def is_special(self, token_id: int) -> bool:
        return token_id in self._special_by_id

    def encode(self, text: str | bytes) -> list[int]:
        data = _utf8(text)
        if self.byte_level:
            return list(data)
        ids = []
        i, n = 0, len(data)
        while i < n:
            for length in range(min(self._max_piece, n - i), 0, -1):
                idx = self._piece_to_id.get(data[i:i + length])
                if idx is not None:
                    ids.append(idx)
                    i += length
                    break
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        """Inverse of :meth:`encode`; special ids decode to their marker text.

        Raises ``UnicodeDecodeError`` if the bytes are not valid UTF-8.
        """
        out = bytearray()
        for idx in ids:
            piece = self._id_to_piece.get(idx)
            if piece is None:
                special = self._special_by_id.get(idx)
                if special is None:
                    raise ValueError(f"unknown token id {idx}")
                piece = special.encode("utf-8")
            out += piece
        return bytes(out).decode("utf-8")

    def count(self, text: str | bytes) -> int:
        if self.byte_level:
            return len(_utf8(text))
        return len(self.encode(text))


def encode(text: str | bytes, tokenizer: Tokenizer) -> list[int]:
    return tokenizer.encode(text)


def decode(ids: Iterable[int], tokenizer: Tokenizer) -> str:
    return tokenizer.decode(ids)


def count_tokens(text: str | bytes, tokenizer: Tokenizer) -> int:
    return tokenizer.count(text)


def load_vocab_tokenizer(path: str | Path, name: str | None = None) -> Tokenizer:
    """Load a JSON vocabulary ``{"<hex bytes>": id, ...}`` into a Tokenizer."""
    path = Path(path)
    raw = json.loads(path.read_text(encoding="utf-8"))
    vocab = {bytes.fromhex(k): int(v) for k, v in raw.items()}
    return Tokenizer(name=name or path.stem, byte_level=False, vocab=vocab)


def get_tokenizer(spec: str = "byte-level") -> Tokenizer:
    if spec in ("byte-level", "byte", "bytes"):
        return Tokenizer()
    return load_vocab_tokenizer(spec)
