"""Whitespace-and-punctuation word tokenizer with a fixed vocabulary.

Both sequence models consume ids from this module. Anything that honors
``encode``/``decode``/``token_count`` (a subword tokenizer, say) can be
dropped in; the models only see ids and the four reserved specials.
"""

from __future__ import annotations

import json
import re
from collections.abc import Iterable
from pathlib import Path
from typing import Protocol

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3
SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")


def word_tokenize(text: str, lowercase: bool = True) -> list[str]:
    """Split into word tokens; punctuation marks are single tokens."""
    if lowercase:
        text = text.lower()
    return _TOKEN_RE.findall(text)


def token_count(text: str) -> int:
    return len(word_tokenize(text))


class TokenCodec(Protocol):
    def encode(self, text: str) -> list[int]: ...

    def decode(self, ids: Iterable[int]) -> str: ...


class Vocabulary:
    """Id table built from a text corpus; unseen tokens map to ``<unk>``."""

    def __init__(self, tokens: Iterable[str]):
        self.id_to_token = list(SPECIALS) + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "Vocabulary":
        seen: set[str] = set()
        for text in texts:
            seen.update(word_tokenize(text))
        return cls(sorted(seen - set(SPECIALS)))

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode(self, text: str) -> list[int]:
        return [self.token_to_id.get(t, UNK_ID) for t in word_tokenize(text)]

    def decode(self, ids: Iterable[int]) -> str:
        words = []
        for i in ids:
            if i in (PAD_ID, BOS_ID, EOS_ID):
                continue
            words.append(self.id_to_token[i] if 0 <= i < len(self.id_to_token) else SPECIALS[UNK_ID])
        return " ".join(words)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.id_to_token[len(SPECIALS):], ensure_ascii=False))

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls(json.loads(Path(path).read_text()))
