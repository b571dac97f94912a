"""Corpus-built subword vocabulary with first-subword alignment.

Words seen at least ``min_word_freq`` times become single pieces; anything
rarer is spelled out character by character with distinct word-initial
(``^c``) and continuation (``##c``) pieces, so unseen words at prediction
time still map to trained embeddings. Characters never seen in training have
no piece at all — a word made entirely of them encodes to zero pieces, which
the prediction path must handle explicitly.
"""

from __future__ import annotations

from collections import Counter
from typing import Iterable, Sequence

PAD = "<pad>"


class SubwordTokenizer:
    def __init__(self, pieces: Sequence[str]):
        if not pieces or pieces[0] != PAD:
            raise ValueError(f"piece 0 must be {PAD!r}")
        if len(set(pieces)) != len(pieces):
            raise ValueError("duplicate pieces in vocabulary")
        self.pieces = list(pieces)
        self._ids = {piece: i for i, piece in enumerate(self.pieces)}

    @classmethod
    def build(
        cls, sentences: Iterable[Sequence[str]], min_word_freq: int = 2
    ) -> "SubwordTokenizer":
        """Vocabulary from tokenized sentences (sequences of word surfaces)."""
        if min_word_freq < 1:
            raise ValueError(f"min_word_freq must be >= 1, got {min_word_freq}")
        word_counts: Counter[str] = Counter()
        chars: set[str] = set()
        for words in sentences:
            for word in words:
                word_counts[word] += 1
                chars.update(word)
        words = sorted(w for w, c in word_counts.items() if c >= min_word_freq)
        char_list = sorted(chars)
        pieces = (
            [PAD]
            + words
            + [f"^{c}" for c in char_list]
            + [f"##{c}" for c in char_list]
        )
        return cls(pieces)

    def __len__(self) -> int:
        return len(self.pieces)

    def encode_word(self, word: str) -> list[int]:
        """Piece ids for one word; empty when no trained piece applies."""
        whole = self._ids.get(word)
        if whole is not None:
            return [whole]
        ids: list[int] = []
        for i, char in enumerate(word):
            key = f"^{char}" if i == 0 else f"##{char}"
            piece_id = self._ids.get(key)
            if piece_id is not None:
                ids.append(piece_id)
        return ids

    def encode_sentence(self, words: Sequence[str]) -> tuple[list[int], list[int]]:
        """Concatenated piece ids plus each word's first-piece index (-1 when
        the word produced no pieces)."""
        ids: list[int] = []
        firsts: list[int] = []
        for word in words:
            pieces = self.encode_word(word)
            firsts.append(len(ids) if pieces else -1)
            ids.extend(pieces)
        return ids, firsts

    def to_dict(self) -> dict:
        return {"pieces": self.pieces}

    @classmethod
    def from_dict(cls, payload: dict) -> "SubwordTokenizer":
        return cls(payload["pieces"])
