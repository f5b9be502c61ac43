from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Sequence

import numpy as np

from spkdlg.config import ROLES
from spkdlg.corpus.dialogues import Dialogue
from spkdlg.errors import ContractError

logger = logging.getLogger(__name__)

PAD, UNK = "<pad>", "<unk>"
PAD_ID, UNK_ID = 0, 1


class _Bijection:
    """Dense string <-> index map."""

    def __init__(self, items: Sequence[str]) -> None:
        if len(set(items)) != len(items):
            raise ContractError("vocabulary entries must be unique")
        self._items: List[str] = list(items)
        self._index: Dict[str, int] = {s: i for i, s in enumerate(self._items)}

    def __len__(self) -> int:
        return len(self._items)

    def __contains__(self, item: str) -> bool:
        return item in self._index

    def __iter__(self):
        return iter(self._items)

    def __eq__(self, other: object) -> bool:
        return type(other) is type(self) and other._items == self._items

    def index(self, item: str) -> int:
        return self._index[item]

    def item(self, index: int) -> str:
        return self._items[index]

    def to_list(self) -> List[str]:
        return list(self._items)


class TokenVocab(_Bijection):
    """Index 0 is padding, index 1 the unknown token."""

    @classmethod
    def build(cls, token_lists: Iterable[Sequence[str]], min_freq: int = 1) -> "TokenVocab":
        counts = Counter(tok for tokens in token_lists for tok in tokens)
        kept = sorted((t for t, c in counts.items() if c >= min_freq and t not in (PAD, UNK)),
                      key=lambda t: (-counts[t], t))
        return cls([PAD, UNK] + kept)

    @classmethod
    def from_list(cls, items: Sequence[str]) -> "TokenVocab":
        if list(items[:2]) != [PAD, UNK]:
            raise ContractError("token vocabulary must start with <pad>, <unk>")
        return cls(items)

    def encode(self, tokens: Sequence[str]) -> List[int]:
        return [self._index.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Sequence[int]) -> List[str]:
        return [self._items[i] for i in ids]


class LabelVocab(_Bijection):
    """Intent / action label alphabet, sorted for deterministic indices."""

    @classmethod
    def build(cls, label_sets: Iterable[Iterable[str]]) -> "LabelVocab":
        return cls(sorted({label for labels in label_sets for label in labels}))

    @classmethod
    def from_list(cls, items: Sequence[str]) -> "LabelVocab":
        return cls(items)

    def multi_hot(self, labels: Iterable[str]) -> np.ndarray:
        """0/1 vector; labels outside the alphabet are dropped."""
        vec = np.zeros(len(self), dtype=np.float64)
        for label in labels:
            idx = self._index.get(label)
            if idx is not None:
                vec[idx] = 1.0
        return vec

    def decode(self, indices: Iterable[int]) -> FrozenSet[str]:
        return frozenset(self._items[i] for i in indices)

    def from_multi_hot(self, vec: np.ndarray) -> FrozenSet[str]:
        return self.decode(int(i) for i in np.flatnonzero(vec > 0.5))


@dataclass(frozen=True)
class Vocabularies:
    tokens: TokenVocab
    labels: LabelVocab
    actions: LabelVocab

    def to_dict(self) -> Dict[str, List[str]]:
        return {"tokens": self.tokens.to_list(), "labels": self.labels.to_list(), "actions": self.actions.to_list()}

    @classmethod
    def from_dict(cls, data: Dict[str, List[str]]) -> "Vocabularies":
        return cls(
            tokens=TokenVocab.from_list(data["tokens"]),
            labels=LabelVocab.from_list(data["labels"]),
            actions=LabelVocab.from_list(data["actions"]),
        )


def build_vocabularies(train: Sequence[Dialogue], min_freq: int = 1) -> Vocabularies:
    """Built from the training split only."""
    guide = ROLES[1]
    turns = [t for d in train for t in d.turns]
    vocabs = Vocabularies(
        tokens=TokenVocab.build((t.tokens for t in turns), min_freq=min_freq),
        labels=LabelVocab.build(t.intents for t in turns),
        actions=LabelVocab.build(t.intents for t in turns if t.speaker == guide),
    )
    logger.info(
        "Vocabularies: %d tokens, %d labels, %d actions", len(vocabs.tokens), len(vocabs.labels), len(vocabs.actions)
    )
    return vocabs
