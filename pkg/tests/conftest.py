"""Shared toy fixtures: a few short sessions, their vocabularies, and a tiny model config."""

from __future__ import annotations

import pytest

from spkdlg.config import ModelConfig
from spkdlg.corpus.dialogues import Dialogue, Turn
from spkdlg.corpus.vocab import build_vocabularies


def _session(session_id, turns):
    return Dialogue(session_id=session_id, turns=tuple(Turn.from_text(*t) for t in turns))


@pytest.fixture
def toy_dialogues():
    return [
        _session(
            "s1",
            [
                ("tourist", "where is the museum ?", ["QST_WHERE"]),
                ("guide", "it is near the park", ["RES_INFO"]),
                ("tourist", "when does it open", ["QST_WHEN"]),
                ("guide", "at nine , every day", ["RES_INFO", "FOL_CONFIRM"]),
            ],
        ),
        _session(
            "s2",
            [
                ("guide", "welcome to the city", ["FOL_ACK"]),
                ("tourist", "what should i eat", ["QST_RECOMMEND"]),
                ("tourist", "something local please", ["QST_RECOMMEND", "FOL_ACK"]),
                ("guide", "try the noodle soup", ["RES_RECOMMEND"]),
            ],
        ),
        _session(
            "s3",
            [
                ("tourist", "thanks a lot", ["FOL_ACK"]),
                ("guide", "you are welcome", ["FOL_ACK"]),
            ],
        ),
    ]


@pytest.fixture
def toy_vocabs(toy_dialogues):
    return build_vocabularies(toy_dialogues)


@pytest.fixture
def tiny_config():
    return ModelConfig(hidden_dim=4, embedding_dim=5, filter_widths=(2, 3), filters_per_width=3)


@pytest.fixture
def registry():
    """Run registry bound to a fresh in-memory SQLite database."""
    from db import database

    database.configure_engine("sqlite://")
    database.init_db()
    yield database
    database.Base.metadata.drop_all(bind=database.engine)
