"""
Turning dialogues into supervised examples.

One example per turn of the target role. Its history is the preceding turns of
the session (at most `history_window`), its LU target that turn's intents, and
its policy target the intents of the guide turn that immediately follows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import FrozenSet, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from spkdlg.config import ModelConfig, ROLES
from spkdlg.corpus.dialogues import Dialogue
from spkdlg.corpus.vocab import PAD_ID, Vocabularies

logger = logging.getLogger(__name__)


class HistoryEntry(NamedTuple):
    role: str
    payload: Union[np.ndarray, Tuple[int, ...]]  # intent vector (semantic) or token ids (NL)


@dataclass(frozen=True)
class Example:
    session_id: str
    turn_index: int
    speaker: str
    token_ids: Tuple[int, ...]
    semantic_history: Tuple[HistoryEntry, ...]
    nl_history: Tuple[HistoryEntry, ...]
    history_intents: Tuple[np.ndarray, ...]  # gold multi-hot per history turn, for guidance
    lu_gold: FrozenSet[str]
    lu_target: np.ndarray
    current_tags: np.ndarray
    policy_gold: Optional[FrozenSet[str]] = None
    policy_target: Optional[np.ndarray] = None

    @property
    def has_policy_target(self) -> bool:
        return self.policy_target is not None


def build_examples(dialogues: Sequence[Dialogue], vocabs: Vocabularies, config: ModelConfig) -> List[Example]:
    guide = ROLES[1]
    examples: List[Example] = []
    skipped = 0
    for dialogue in dialogues:
        turns = dialogue.turns
        for t, turn in enumerate(turns):
            if turn.speaker != config.target_role:
                continue
            token_ids = tuple(vocabs.tokens.encode(turn.tokens))
            if not token_ids:
                skipped += 1
                continue
            start = 0 if config.history_window is None else max(0, t - config.history_window)
            prior = turns[start:t]
            semantic = tuple(HistoryEntry(p.speaker, vocabs.labels.multi_hot(p.intents)) for p in prior)
            nl = tuple(
                HistoryEntry(p.speaker, tuple(vocabs.tokens.encode(p.tokens)) or (PAD_ID,)) for p in prior
            )
            policy_gold = policy_target = None
            if t + 1 < len(turns) and turns[t + 1].speaker == guide:
                policy_gold = turns[t + 1].intent_set
                policy_target = vocabs.actions.multi_hot(turns[t + 1].intents)
            examples.append(
                Example(
                    session_id=dialogue.session_id,
                    turn_index=t,
                    speaker=turn.speaker,
                    token_ids=token_ids,
                    semantic_history=semantic,
                    nl_history=nl,
                    history_intents=tuple(e.payload for e in semantic),
                    lu_gold=turn.intent_set,
                    lu_target=vocabs.labels.multi_hot(turn.intents),
                    current_tags=vocabs.labels.multi_hot(turn.intents),
                    policy_gold=policy_gold,
                    policy_target=policy_target,
                )
            )
    if skipped:
        logger.warning("Skipped %d target turns with empty transcripts", skipped)
    return examples


def task_examples(examples: Sequence[Example], task: str) -> List[Example]:
    """Examples usable for a task; policy needs a following guide turn."""
    if task in ("lu", "joint"):
        return list(examples)
    return [e for e in examples if e.has_policy_target]
