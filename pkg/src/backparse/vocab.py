"""Token vocabularies for words and concepts."""

from __future__ import annotations

from collections import Counter
from typing import Iterable, Sequence

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<s>", "</s>"


class Vocab:
    def __init__(self, tokens: Iterable[str] = (), specials: Sequence[str] = (PAD, UNK, BOS, EOS)):
        self.itos: list[str] = []
        self.stoi: dict[str, int] = {}
        for s in (*specials, *tokens):
            if s not in self.stoi:
                self.stoi[s] = len(self.itos)
                self.itos.append(s)

    @classmethod
    def build(cls, corpus: Iterable[Iterable[str]], min_freq: int = 1, specials=(PAD, UNK, BOS, EOS)) -> "Vocab":
        counts = Counter(tok for seq in corpus for tok in seq)
        keep = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
        return cls(keep, specials)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, tok: str) -> bool:
        return tok in self.stoi

    @property
    def pad(self) -> int:
        return self.stoi[PAD]

    @property
    def unk(self) -> int:
        return self.stoi[UNK]

    @property
    def bos(self) -> int:
        return self.stoi[BOS]

    @property
    def eos(self) -> int:
        return self.stoi[EOS]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        unk = self.stoi.get(UNK, 0)
        return [self.stoi.get(t, unk) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for s in self.itos:
                f.write(s + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, encoding="utf-8") as f:
            return cls([line.rstrip("\n") for line in f], specials=())
