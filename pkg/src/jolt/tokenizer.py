"""Reference character-level tokenizer with registrable word tokens.

The mock backend and client-side accounting use this tokenizer; an HTTP
backend carries its own server-side tokenizer.  Multi-character word
tokens take precedence (longest match) so both single-token and
multi-token renderings of the same category name can be exercised.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

DIGITS = tuple("0123456789")


class TokenizeError(ValueError):
    """A character in the input is not encodable under the vocabulary."""


@dataclass(frozen=True)
class TokenSeq:
    ids: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)


class Vocab:
    """Ordered token strings with id lookup."""

    def __init__(self, tokens: Sequence[str]):
        tokens = tuple(tokens)
        if any(not t for t in tokens):
            raise ValueError("vocab tokens must be nonempty strings")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocab tokens must be unique")
        self.tokens = tokens
        self._index = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id_of(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise TokenizeError(f"token {token!r} not in vocabulary") from None

    def to_json(self) -> str:
        return json.dumps(list(self.tokens), ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str) -> "Vocab":
        return cls(json.loads(text))


def char_vocab(words: Iterable[str] = ()) -> Vocab:
    """Printable ASCII plus newline/tab, followed by extra word tokens."""
    chars = ["\n", "\t"] + [chr(c) for c in range(32, 127)]
    seen = set(chars)
    extra = []
    for w in words:
        if w in seen:
            raise ValueError(f"word token {w!r} duplicates an existing token")
        seen.add(w)
        extra.append(w)
    return Vocab(chars + extra)


class CharTokenizer:
    """Greedy longest-match tokenizer over a character vocabulary."""

    def __init__(self, vocab: Vocab):
        self.vocab = vocab
        self._words = sorted((t for t in vocab.tokens if len(t) > 1), key=len, reverse=True)

    def tokenize(self, text: str) -> TokenSeq:
        ids: list[int] = []
        pos = 0
        while pos < len(text):
            for w in self._words:
                if text.startswith(w, pos):
                    ids.append(self.vocab.id_of(w))
                    pos += len(w)
                    break
            else:
                ch = text[pos]
                if ch not in self.vocab:
                    raise TokenizeError(f"character {ch!r} at offset {pos} is not encodable")
                ids.append(self.vocab.id_of(ch))
                pos += 1
        return TokenSeq(tuple(ids))

    def detokenize(self, seq: TokenSeq | Iterable[int]) -> str:
        ids = seq.ids if isinstance(seq, TokenSeq) else tuple(seq)
        return "".join(self.vocab.tokens[i] for i in ids)

    def token_strings(self, text: str) -> list[str]:
        return [self.vocab.tokens[i] for i in self.tokenize(text).ids]


def allowed_token_ids(tokenizer: CharTokenizer, allowed: Iterable[str]) -> frozenset[int]:
    """Token ids appearing in the tokenization of any allowed string."""
    ids: set[int] = set()
    for s in allowed:
        ids.update(tokenizer.tokenize(s).ids)
    return frozenset(ids)


def numeric_token_mask(tokenizer: CharTokenizer, allowed: Iterable[str]) -> np.ndarray:
    """Boolean mask over the vocab, True exactly for tokens NOT in the allowed set."""
    mask = np.ones(len(tokenizer.vocab), dtype=bool)
    ids = allowed_token_ids(tokenizer, allowed)
    if ids:
        mask[list(ids)] = False
    return mask


def validate_single_digit(vocab: Vocab) -> bool:
    """True iff every digit is its own token and no multi-digit token exists."""
    if not all(d in vocab for d in DIGITS):
        return False
    return not any(len(t) > 1 and all(c in "0123456789" for c in t) for t in vocab.tokens)
