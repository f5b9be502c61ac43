"""
Dialogue data model and the JSON Lines corpus format.

One record per line:
    {"session": "s01", "turn": 0, "speaker": "tourist", "transcript": "...", "intents": ["QST_WHAT"]}
See mdfiles/CORPUS_FORMAT.md for the full schema.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, FrozenSet, List, Sequence, Tuple, Union

import numpy as np

from spkdlg.config import ROLES
from spkdlg.errors import ConfigError, CorpusFormatError, RoleValidationError

logger = logging.getLogger(__name__)

TOURIST, GUIDE = ROLES

_TOKEN_RE = re.compile(r"[^\W_]+|[^\w\s]|_")
_REQUIRED_KEYS = ("session", "turn", "speaker", "transcript", "intents")


def tokenize(text: str) -> List[str]:
    """Lowercase, split on whitespace, and split every punctuation character off."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Turn:
    speaker: str
    transcript: str
    tokens: Tuple[str, ...]
    intents: Tuple[str, ...]  # file order; use `intent_set` for set semantics

    def __post_init__(self) -> None:
        if self.speaker not in ROLES:
            raise RoleValidationError(f"unknown speaker role {self.speaker!r}; expected one of {ROLES}")

    @property
    def intent_set(self) -> FrozenSet[str]:
        return frozenset(self.intents)

    @classmethod
    def from_text(cls, speaker: str, transcript: str, intents: Sequence[str]) -> "Turn":
        return cls(speaker=speaker, transcript=transcript, tokens=tuple(tokenize(transcript)), intents=tuple(intents))


@dataclass(frozen=True)
class Dialogue:
    session_id: str
    turns: Tuple[Turn, ...]

    def __post_init__(self) -> None:
        if not self.turns:
            raise CorpusFormatError(f"dialogue {self.session_id!r} has no turns")

    def __len__(self) -> int:
        return len(self.turns)


def _parse_record(raw: str, path: str, line_no: int) -> Dict[str, Any]:
    try:
        record = json.loads(raw)
    except json.JSONDecodeError as e:
        raise CorpusFormatError(f"invalid JSON ({e.msg})", path, line_no) from e
    if not isinstance(record, dict):
        raise CorpusFormatError("record must be a JSON object", path, line_no)
    missing = [k for k in _REQUIRED_KEYS if k not in record]
    if missing:
        raise CorpusFormatError(f"missing fields {missing}", path, line_no)
    if not isinstance(record["session"], str) or not record["session"]:
        raise CorpusFormatError("'session' must be a non-empty string", path, line_no)
    if not isinstance(record["turn"], int) or isinstance(record["turn"], bool) or record["turn"] < 0:
        raise CorpusFormatError("'turn' must be a non-negative integer", path, line_no)
    if not isinstance(record["transcript"], str):
        raise CorpusFormatError("'transcript' must be a string", path, line_no)
    intents = record["intents"]
    if not isinstance(intents, list) or not all(isinstance(i, str) and i for i in intents):
        raise CorpusFormatError("'intents' must be a list of non-empty strings", path, line_no)
    speaker = record["speaker"]
    if not isinstance(speaker, str) or speaker.lower() not in ROLES:
        raise RoleValidationError(f"unknown speaker role {speaker!r}; expected one of {ROLES}", path, line_no)
    return record


def load_corpus(path: Union[str, Path]) -> List[Dialogue]:
    """Read and validate a corpus file. Blank lines are ignored."""
    path = str(path)
    sessions: List[Tuple[str, List[Turn]]] = []
    seen = set()
    try:
        with open(path, "r", encoding="utf-8") as f:
            for line_no, raw in enumerate(f, start=1):
                if not raw.strip():
                    continue
                record = _parse_record(raw, path, line_no)
                session = record["session"]
                if not sessions or sessions[-1][0] != session:
                    if session in seen:
                        raise CorpusFormatError(f"session {session!r} is not contiguous", path, line_no)
                    seen.add(session)
                    sessions.append((session, []))
                turns = sessions[-1][1]
                if record["turn"] != len(turns):
                    raise CorpusFormatError(
                        f"turn index {record['turn']} out of order (expected {len(turns)})", path, line_no
                    )
                turns.append(
                    Turn(
                        speaker=record["speaker"].lower(),
                        transcript=record["transcript"],
                        tokens=tuple(tokenize(record["transcript"])),
                        intents=tuple(record["intents"]),
                    )
                )
    except UnicodeDecodeError as e:
        raise CorpusFormatError(f"not valid UTF-8 ({e.reason})", path) from e

    dialogues = [Dialogue(session_id=s, turns=tuple(t)) for s, t in sessions]
    logger.info("Loaded %d dialogues (%d turns) from %s", len(dialogues), sum(len(d) for d in dialogues), path)
    return dialogues


def dialogue_records(dialogues: Sequence[Dialogue]) -> List[Dict[str, Any]]:
    records = []
    for dialogue in dialogues:
        for index, turn in enumerate(dialogue.turns):
            records.append(
                {
                    "session": dialogue.session_id,
                    "turn": index,
                    "speaker": turn.speaker,
                    "transcript": turn.transcript,
                    "intents": list(turn.intents),
                }
            )
    return records


def save_corpus(dialogues: Sequence[Dialogue], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in dialogue_records(dialogues):
            f.write(json.dumps(record, ensure_ascii=False) + "\n")
    logger.info("Wrote %d dialogues to %s", len(dialogues), path)


def split_sessions(
    dialogues: Sequence[Dialogue], seed: int, fractions: Tuple[float, float, float] = (0.7, 0.15, 0.15)
) -> Tuple[List[Dialogue], List[Dialogue], List[Dialogue]]:
    """Seeded session-level train/dev/test split."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {fractions}")
    n = len(dialogues)
    order = np.random.default_rng(seed).permutation(n)
    n_dev = int(round(n * fractions[1]))
    n_test = int(round(n * fractions[2]))
    if n > 0 and n - n_dev - n_test < 1:
        # tiny corpora: training keeps at least one session
        overflow = 1 - (n - n_dev - n_test)
        n_test = max(0, n_test - overflow)
        n_dev = n - 1 - n_test
    n_train = n - n_dev - n_test
    train = [dialogues[i] for i in order[:n_train]]
    dev = [dialogues[i] for i in order[n_train : n_train + n_dev]]
    test = [dialogues[i] for i in order[n_train + n_dev :]]
    logger.info("Split %d sessions into %d/%d/%d (seed %d)", n, len(train), len(dev), len(test), seed)
    return train, dev, test
