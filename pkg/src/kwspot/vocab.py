"""Grapheme vocabulary, keyword rewriting, and tokenization."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

KW_TOKEN = "<kw>"
BLANK_TOKEN = "<blank>"

DEFAULT_GRAPHEMES = list("abcdefghijklmnopqrstuvwxyz") + [" ", "'"]


class OovError(ValueError):
    """Raised when a text contains a character outside the vocabulary."""

    def __init__(self, char: str, offset: int):
        self.char = char
        self.offset = offset
        super().__init__(f"out-of-vocabulary character {char!r} at offset {offset}")


@dataclass(frozen=True)
class Vocabulary:
    """Ordered token inventory with the special keyword token and blank.

    Blank is part of the output distribution but never appears in
    transcripts; tokenize/detokenize only ever touch the non-blank tokens.
    """

    tokens: tuple[str, ...]
    kw_token_id: int
    blank_id: int
    _char_to_id: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        if not (0 <= self.kw_token_id < len(self.tokens)):
            raise ValueError("kw_token_id out of range")
        if not (0 <= self.blank_id < len(self.tokens)):
            raise ValueError("blank_id out of range")
        if self.kw_token_id == self.blank_id:
            raise ValueError("kw_token_id must differ from blank_id")
        char_to_id = {
            tok: i
            for i, tok in enumerate(self.tokens)
            if len(tok) == 1
        }
        object.__setattr__(self, "_char_to_id", char_to_id)

    @property
    def size(self) -> int:
        return len(self.tokens)

    @classmethod
    def default(cls, graphemes: list[str] | None = None) -> "Vocabulary":
        """Lowercase letters, space, apostrophe, <kw>, and blank."""
        graphemes = list(DEFAULT_GRAPHEMES if graphemes is None else graphemes)
        tokens = tuple(graphemes + [KW_TOKEN, BLANK_TOKEN])
        return cls(tokens=tokens, kw_token_id=len(graphemes), blank_id=len(graphemes) + 1)

    def to_dict(self) -> dict:
        return {
            "tokens": list(self.tokens),
            "kw_token_id": self.kw_token_id,
            "blank_id": self.blank_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(tuple(d["tokens"]), d["kw_token_id"], d["blank_id"])


def rewrite_keywords(text: str, keywords: list[str]) -> str:
    """Replace every whole-word keyword occurrence with the <kw> token.

    Matching is case-insensitive, left to right, longest keyword first at
    each position; non-overlapping. Text without a match is returned
    unchanged.
    """
    if not keywords:
        raise ValueError("keywords must be non-empty")
    ordered = sorted(keywords, key=len, reverse=True)
    pattern = re.compile(
        r"\b(?:" + "|".join(re.escape(k) for k in ordered) + r")\b",
        flags=re.IGNORECASE,
    )
    return pattern.sub(KW_TOKEN, text)


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    """Map text to token ids; <kw> substrings map to the single kw id."""
    ids = []
    i = 0
    n = len(text)
    while i < n:
        if text.startswith(KW_TOKEN, i):
            ids.append(vocab.kw_token_id)
            i += len(KW_TOKEN)
            continue
        tok_id = vocab._char_to_id.get(text[i])
        if tok_id is None or tok_id == vocab.blank_id:
            raise OovError(text[i], i)
        ids.append(tok_id)
        i += 1
    return ids


def detokenize(ids: list[int], vocab: Vocabulary) -> str:
    parts = []
    for tok_id in ids:
        if tok_id == vocab.blank_id:
            raise ValueError("blank id has no text form")
        parts.append(vocab.tokens[tok_id])
    return "".join(parts)


def count_kw_tokens(ids, vocab: Vocabulary) -> int:
    """Number of positions equal to the <kw> token id."""
    kw = vocab.kw_token_id
    return sum(1 for t in ids if t == kw)
