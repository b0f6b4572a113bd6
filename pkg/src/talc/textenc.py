"""Word-level tokenizer, learned caption embeddings and the frame-repeat operation."""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .errors import UsageError
from .numerics import Tensor, add, take

PAD, UNK, NULL = 0, 1, 2
RESERVED = ("<pad>", "<unk>", "<null>")
_WORD = re.compile(r"\w+", re.UNICODE)


def tokenize(text: str) -> List[str]:
    return _WORD.findall(text.lower())


class Vocabulary:
    """Dense token ids; ids below ``len(RESERVED)`` are reserved."""

    def __init__(self, tokens: Sequence[str] = ()):
        self.tokens: List[str] = []
        self.index = {}
        for tok in tokens:
            self.add(tok)

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocabulary":
        words = set()
        for t in texts:
            words.update(tokenize(t))
        return cls(sorted(words))

    def add(self, token: str) -> int:
        if token not in self.index:
            self.index[token] = len(RESERVED) + len(self.tokens)
            self.tokens.append(token)
        return self.index[token]

    def __len__(self):
        return len(RESERVED) + len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def ids(self, text: str) -> List[int]:
        ids = [self.index.get(w, UNK) for w in tokenize(text)]
        return ids or [UNK]

    def to_text(self) -> str:
        return "".join(tok + "\n" for tok in self.tokens)

    @classmethod
    def from_text(cls, text: str) -> "Vocabulary":
        return cls([line for line in text.split("\n") if line])

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens


@dataclass(frozen=True, eq=False)
class CaptionEmbedding:
    """Padded s x d token embeddings with a real-token mask."""

    tokens: Tensor
    mask: np.ndarray
    ids: tuple
    text: str = ""

    @property
    def num_tokens(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True, eq=False)
class FrameConditioning:
    per_frame: tuple

    def __len__(self):
        return len(self.per_frame)

    def unique(self):
        """Distinct embeddings in first-use order plus a per-frame index into them."""
        seen, order, index = {}, [], []
        for emb in self.per_frame:
            k = id(emb)
            if k not in seen:
                seen[k] = len(order)
                order.append(emb)
            index.append(seen[k])
        return order, np.asarray(index, dtype=np.int64)


class TextEncoder:
    """Token table plus learned positional offsets over ``max_tokens`` slots."""

    def __init__(self, vocab: Vocabulary, table: Tensor, positions: Tensor):
        self.vocab = vocab
        self.table = table
        self.positions = positions

    @classmethod
    def init(cls, vocab: Vocabulary, width: int, max_tokens: int, rng, scale: float = 0.5) -> "TextEncoder":
        table = Tensor(rng.normal((len(vocab), width)) * scale, requires_grad=True, name="text.table")
        pos = Tensor(rng.normal((max_tokens, width)) * scale, requires_grad=True, name="text.positions")
        return cls(vocab, table, pos)

    @property
    def max_tokens(self) -> int:
        return self.positions.shape[0]

    @property
    def width(self) -> int:
        return self.table.shape[1]

    def parameters(self):
        return {"text.table": self.table, "text.positions": self.positions}

    def encode(self, text: str, null: bool = False) -> CaptionEmbedding:
        return encode_caption(text, self.vocab, self, null=null)

    def null(self) -> CaptionEmbedding:
        return self.encode("", null=True)


def encode_caption(text: str, vocab: Vocabulary, params: TextEncoder, null: bool = False) -> CaptionEmbedding:
    s = params.max_tokens
    if null:
        ids = [NULL]
    else:
        if not text.strip():
            raise UsageError("empty caption; request the NULL caption explicitly")
        ids = vocab.ids(text)[:s]
    padded = np.full(s, PAD, dtype=np.int64)
    padded[: len(ids)] = ids
    mask = np.zeros(s, dtype=bool)
    mask[: len(ids)] = True
    tokens = add(take(params.table, padded), params.positions)
    return CaptionEmbedding(tokens=tokens, mask=mask, ids=tuple(ids), text="" if null else text)


def repeat_conditioning(emb: CaptionEmbedding, L: int) -> FrameConditioning:
    if L <= 0:
        raise UsageError(f"frame count must be positive, got {L}")
    return FrameConditioning(per_frame=(emb,) * L)
