"""Deterministic toy tokenizer.

Words (``\\w+`` runs) are one token each and every punctuation character is
its own token; whitespace only separates. Token ids are 64-bit BLAKE2b
digests of the segment, so results are identical across runs, processes and
platforms (Python's builtin ``hash`` of ``str`` is salted and would not be).
"""

from __future__ import annotations

import hashlib
import random
import re
from dataclasses import dataclass
from functools import lru_cache

_SEGMENT = re.compile(r"\w+|[^\w\s]")

_vocab: dict[str, int] = {}


def _digest64(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def token_id(segment: str) -> int:
    tid = _vocab.get(segment)
    if tid is None:
        tid = _vocab[segment] = _digest64(segment.encode("utf-8"))
    return tid


@dataclass(frozen=True)
class TokenSeq:
    tokens: tuple[int, ...]
    source_hash: int

    def __len__(self) -> int:
        return len(self.tokens)


def content_hash(text: str) -> int:
    return _digest64(text.encode("utf-8"))


@lru_cache(maxsize=65536)
def tokenize(text: str) -> TokenSeq:
    """Split ``text`` into word and punctuation tokens.

    >>> [len(tokenize(s)) for s in ("", "Tak.", "ala ma kota")]
    [0, 2, 3]
    """
    return TokenSeq(
        tokens=tuple(token_id(seg) for seg in _SEGMENT.findall(text)),
        source_hash=content_hash(text),
    )


def segments(text: str) -> list[str]:
    return _SEGMENT.findall(text)


def is_boundary(left: str, right: str) -> bool:
    """True when ``left + right`` tokenizes as ``tokenize(left) + tokenize(right)``."""
    if not left or not right:
        return True
    a, b = left[-1], right[0]
    return not (_is_word_char(a) and _is_word_char(b))


def _is_word_char(ch: str) -> bool:
    return bool(re.match(r"\w", ch))


_SYLLABLES = (
    "ka", "to", "mi", "ra", "no", "wi", "se", "lo", "pa", "dy", "ze", "bu",
    "sta", "prze", "cie", "gro", "mat", "kol", "wen", "dar", "ni", "ło", "ść", "ję",
)


@lru_cache(maxsize=1)
def _synth_vocab() -> tuple[str, ...]:
    rng = random.Random(0x5EED)
    words = {"".join(rng.choice(_SYLLABLES) for _ in range(rng.randint(1, 3))) for _ in range(6000)}
    return tuple(sorted(words))


def synth_text(n_tokens: int, seed: int) -> str:
    """Pseudo-random text of exactly ``n_tokens`` tokens (words, no punctuation)."""
    if n_tokens < 1:
        raise ValueError("n_tokens must be >= 1")
    return " ".join(random.Random(seed).choices(_synth_vocab(), k=n_tokens))
