"""Whitespace word tokenizer with a corpus-derived vocabulary.

No pretrained vocabulary is downloaded; the vocabulary is built from the
training records themselves and saved next to each checkpoint so a model
can always be reloaded with the exact token mapping it was trained under.
"""

from __future__ import annotations

import json
from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

__all__ = ["WordTokenizer"]

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
_SPECIALS = (PAD, BOS, EOS, UNK)


class WordTokenizer:
    """Maps whitespace-separated tokens to ids. Ids 0..3 are reserved."""

    def __init__(self, tokens: Sequence[str]) -> None:
        if tuple(tokens[:4]) != _SPECIALS:
            raise ValueError(f"vocabulary must start with {_SPECIALS}")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary contains duplicates")
        self._tokens = tuple(tokens)
        self._ids = {tok: i for i, tok in enumerate(self._tokens)}

    # -- construction --------------------------------------------------

    @classmethod
    def build(cls, texts: Iterable[str], max_vocab: int | None = None) -> "WordTokenizer":
        """Count whitespace tokens and keep the most frequent first.

        Ties break alphabetically so the vocabulary is a pure function of
        the corpus. max_vocab bounds the total size including specials.
        """
        counts: Counter[str] = Counter()
        for text in texts:
            counts.update(text.split())
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        words = [w for w, _ in ranked if w not in _SPECIALS]
        if max_vocab is not None:
            if max_vocab < len(_SPECIALS) + 1:
                raise ValueError(f"max_vocab too small: {max_vocab}")
            words = words[: max_vocab - len(_SPECIALS)]
        return cls(_SPECIALS + tuple(words))

    # -- persistence ---------------------------------------------------

    def save(self, path: Path | str) -> None:
        Path(path).write_text(
            json.dumps(list(self._tokens), ensure_ascii=False, indent=0) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path: Path | str) -> "WordTokenizer":
        tokens = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
            raise ValueError(f"{path}: vocabulary file must hold a list of strings")
        return cls(tokens)

    # -- encoding ------------------------------------------------------

    @property
    def vocab_size(self) -> int:
        return len(self._tokens)

    pad_id = 0
    bos_id = 1
    eos_id = 2
    unk_id = 3

    def encode(self, text: str) -> list[int]:
        return [self._ids.get(tok, self.unk_id) for tok in text.split()]

    def decode(self, ids: Iterable[int]) -> str:
        return " ".join(self._tokens[i] for i in ids)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, WordTokenizer) and self._tokens == other._tokens

    def __len__(self) -> int:
        return len(self._tokens)
