"""Byte-level vocabulary and lossless tokenization.

The tokenizer is a bijection between byte strings and reserved-free token
sequences: token ids 0..255 are the raw byte values, followed by the three
reserved ids (<bos>, <eos>, <pad>).  Because every byte maps to exactly one
token, the detokenize(tokenize(x)) round trip is exact for arbitrary input,
which removes any dependence on a detokenize/retokenize pipeline agreeing
across the two endpoints.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import MalformedSequence, UnknownToken

NUM_BYTES = 256


@dataclass(frozen=True)
class Vocabulary:
    size: int
    bos_id: int
    eos_id: int
    pad_id: int

    def __post_init__(self):
        if self.size < 4:
            raise ValueError("vocabulary must have at least 4 tokens")
        reserved = {self.bos_id, self.eos_id, self.pad_id}
        if len(reserved) != 3 or not all(0 <= r < self.size for r in reserved):
            raise ValueError("reserved ids must be three distinct in-range ids")

    @property
    def reserved_ids(self):
        return (self.bos_id, self.eos_id, self.pad_id)

    def is_reserved(self, token_id: int) -> bool:
        return token_id in self.reserved_ids


def byte_vocab() -> Vocabulary:
    """The reference vocabulary: 256 byte tokens plus <bos>/<eos>/<pad>."""
    return Vocabulary(size=NUM_BYTES + 3, bos_id=256, eos_id=257, pad_id=258)


def validate_tokens(tokens, vocab: Vocabulary):
    for t in tokens:
        if not 0 <= t < vocab.size:
            raise UnknownToken(f"token id {t} outside vocabulary of size {vocab.size}")


def tokenize(text: bytes, vocab: Vocabulary) -> list[int]:
    """Map a byte string to its token sequence (identity on byte values)."""
    if isinstance(text, str):
        text = text.encode("utf-8")
    return list(text)


def detokenize(tokens, vocab: Vocabulary) -> bytes:
    """Inverse of tokenize.  A single trailing <eos> is stripped; any other
    reserved id is rejected."""
    toks = list(tokens)
    if toks and toks[-1] == vocab.eos_id:
        toks = toks[:-1]
    out = bytearray()
    for i, t in enumerate(toks):
        if not 0 <= t < vocab.size:
            raise UnknownToken(f"token id {t} outside vocabulary")
        if t >= NUM_BYTES:
            raise MalformedSequence(f"reserved id {t} at interior position {i}")
        out.append(t)
    return bytes(out)
