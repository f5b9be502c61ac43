"""
Pretrained word-vector loading (GloVe-style text: a word followed by `dim` reals).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from spkdlg.corpus.vocab import PAD_ID, UNK_ID, TokenVocab
from spkdlg.errors import CorpusFormatError, EmbeddingFormatError
from spkdlg.layers import EmbeddingTable, init_uniform
from spkdlg.tensor_core import Tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmbeddingLoadReport:
    hits: int
    candidates: int  # vocabulary entries other than <pad>/<unk>

    @property
    def hit_rate(self) -> float:
        return self.hits / self.candidates if self.candidates else 0.0


def load_embeddings(
    path: Union[str, Path],
    vocab: TokenVocab,
    dim: int = 200,
    rng: Optional[np.random.Generator] = None,
    trainable: bool = True,
) -> Tuple[EmbeddingTable, EmbeddingLoadReport]:
    """
    Fill rows for vocabulary hits from the file; misses keep a random
    initialisation and the padding row stays zero.
    """
    path = str(path)
    rng = rng if rng is not None else np.random.default_rng(0)
    weights = init_uniform(rng, len(vocab), dim, (len(vocab), dim))
    weights[PAD_ID] = 0.0
    found = set()
    try:
        with open(path, "r", encoding="utf-8") as f:
            for line_no, raw in enumerate(f, start=1):
                parts = raw.rstrip("\n").split()
                if not parts:
                    continue
                if len(parts) != dim + 1:
                    raise EmbeddingFormatError(
                        f"expected a word and {dim} values, got {len(parts) - 1} values", path, line_no
                    )
                word = parts[0]
                if word not in vocab:
                    continue
                try:
                    vector = np.array([float(x) for x in parts[1:]], dtype=np.float64)
                except ValueError as e:
                    raise EmbeddingFormatError(f"non-numeric component ({e})", path, line_no) from e
                idx = vocab.index(word)
                if idx == PAD_ID:
                    continue
                weights[idx] = vector
                found.add(idx)
    except UnicodeDecodeError as e:
        raise CorpusFormatError(f"not valid UTF-8 ({e.reason})", path) from e

    candidates = max(0, len(vocab) - 2)
    report = EmbeddingLoadReport(hits=len(found - {UNK_ID}), candidates=candidates)
    logger.info(
        "Embeddings from %s: %d/%d vocabulary hits (%.1f%%)",
        path,
        report.hits,
        report.candidates,
        100.0 * report.hit_rate,
    )
    table = EmbeddingTable(weights=Tensor(weights, requires_grad=trainable), trainable=trainable, padding_idx=PAD_ID)
    return table, report
