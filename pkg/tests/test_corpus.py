import json
from dataclasses import replace

import numpy as np
import pytest

from spkdlg.corpus.dialogues import load_corpus, save_corpus, split_sessions, tokenize
from spkdlg.corpus.embeddings import load_embeddings
from spkdlg.corpus.examples import build_examples, task_examples
from spkdlg.corpus.vocab import PAD_ID, UNK_ID, LabelVocab, TokenVocab, Vocabularies
from spkdlg.errors import ConfigError, CorpusFormatError, EmbeddingFormatError, RoleValidationError


def _write_records(path, records):
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n", encoding="utf-8")
    return path


def _record(session, turn, speaker, transcript, intents):
    return {"session": session, "turn": turn, "speaker": speaker, "transcript": transcript, "intents": intents}


@pytest.mark.parametrize(
    "text, expected",
    [
        ("Where is it?", ["where", "is", "it", "?"]),
        ("OK, thanks.", ["ok", ",", "thanks", "."]),
        ("  spaced   out ", ["spaced", "out"]),
        ("snake_case", ["snake", "_", "case"]),
        ("", []),
    ],
)
def test_tokenize(text, expected):
    assert tokenize(text) == expected


_ALPHABET = list("abcXYZ019_.,?!'-()") + [" ", " ", "\t", "é"]


@pytest.mark.parametrize("seed", range(20))
def test_tokenize_is_idempotent_on_random_text(seed):
    rng = np.random.default_rng(seed)
    for _ in range(25):
        text = "".join(rng.choice(_ALPHABET, size=int(rng.integers(0, 40))))
        tokens = tokenize(text)
        assert tokenize(" ".join(tokens)) == tokens
        assert all(token and not token.isspace() for token in tokens)


def test_corpus_round_trip(tmp_path, toy_dialogues):
    path = tmp_path / "corpus.jsonl"
    save_corpus(toy_dialogues, path)
    assert load_corpus(path) == toy_dialogues


def test_unknown_role_reports_line_number(tmp_path):
    path = _write_records(
        tmp_path / "bad.jsonl",
        [
            _record("a", 0, "tourist", "hello", ["FOL_OPENING"]),
            _record("a", 1, "robot", "beep", ["FOL_ACK"]),
        ],
    )
    with pytest.raises(RoleValidationError) as info:
        load_corpus(path)
    assert info.value.line == 2
    assert "robot" in str(info.value)


def test_speaker_case_is_normalised(tmp_path):
    path = _write_records(tmp_path / "c.jsonl", [_record("a", 0, "Guide", "hi there", ["FOL_OPENING"])])
    assert load_corpus(path)[0].turns[0].speaker == "guide"


@pytest.mark.parametrize(
    "line, fragment",
    [
        ("{not json", "invalid JSON"),
        ('["list"]', "JSON object"),
        ('{"session": "a", "turn": 0, "speaker": "tourist", "intents": []}', "missing"),
        ('{"session": "a", "turn": -1, "speaker": "tourist", "transcript": "x", "intents": []}', "turn"),
        ('{"session": "a", "turn": 0, "speaker": "tourist", "transcript": "x", "intents": "QST"}', "intents"),
    ],
)
def test_malformed_records_are_rejected(tmp_path, line, fragment):
    path = tmp_path / "bad.jsonl"
    path.write_text(line + "\n", encoding="utf-8")
    with pytest.raises(CorpusFormatError, match=fragment) as info:
        load_corpus(path)
    assert info.value.line == 1


def test_out_of_order_turns_are_rejected(tmp_path):
    path = _write_records(
        tmp_path / "c.jsonl",
        [_record("a", 0, "tourist", "x", []), _record("a", 2, "guide", "y", [])],
    )
    with pytest.raises(CorpusFormatError, match="out of order"):
        load_corpus(path)


def test_split_sessions_is_seeded_and_disjoint(toy_dialogues):
    first = split_sessions(toy_dialogues, seed=3, fractions=(0.34, 0.33, 0.33))
    second = split_sessions(toy_dialogues, seed=3, fractions=(0.34, 0.33, 0.33))
    assert first == second
    ids = [d.session_id for part in first for d in part]
    assert sorted(ids) == ["s1", "s2", "s3"]
    with pytest.raises(ConfigError):
        split_sessions(toy_dialogues, seed=0, fractions=(0.5, 0.5, 0.5))


def test_tiny_split_keeps_a_training_session(toy_dialogues):
    train, dev, test = split_sessions(toy_dialogues[:1], seed=0)
    assert len(train) == 1 and not dev and not test


def test_token_vocab_reserves_padding_and_unknown(toy_dialogues):
    vocab = TokenVocab.build(t.tokens for d in toy_dialogues for t in d.turns)
    assert vocab.item(PAD_ID) == "<pad>" and vocab.item(UNK_ID) == "<unk>"
    assert vocab.encode(["the", "zeppelin"])[1] == UNK_ID
    assert vocab.item(2) == "the"


def test_min_frequency_drops_rare_tokens(toy_dialogues):
    vocab = TokenVocab.build((t.tokens for d in toy_dialogues for t in d.turns), min_freq=2)
    assert "museum" not in vocab
    assert "the" in vocab


def test_label_vocab_is_sorted_and_multi_hot(toy_vocabs):
    labels = toy_vocabs.labels
    assert labels.to_list() == sorted(labels.to_list())
    vec = labels.multi_hot(["RES_INFO", "NOT_A_LABEL"])
    assert vec.sum() == 1.0
    assert labels.from_multi_hot(vec) == {"RES_INFO"}


def test_actions_come_from_guide_turns_only(toy_vocabs):
    assert "QST_WHERE" not in toy_vocabs.actions
    assert set(toy_vocabs.actions) == {"RES_INFO", "FOL_CONFIRM", "FOL_ACK", "RES_RECOMMEND"}


def test_vocabularies_round_trip_through_dict(toy_vocabs):
    assert Vocabularies.from_dict(toy_vocabs.to_dict()) == toy_vocabs


def test_label_vocab_from_list_preserves_order():
    assert LabelVocab.from_list(["b", "a"]).index("b") == 0


def test_examples_target_tourist_turns(toy_dialogues, toy_vocabs, tiny_config):
    examples = build_examples(toy_dialogues, toy_vocabs, tiny_config)
    assert [(e.session_id, e.turn_index) for e in examples] == [
        ("s1", 0), ("s1", 2), ("s2", 1), ("s2", 2), ("s3", 0),
    ]
    first = examples[0]
    assert first.semantic_history == () and first.nl_history == ()
    assert first.policy_gold == {"RES_INFO"}


def test_examples_carry_role_tagged_history(toy_dialogues, toy_vocabs, tiny_config):
    examples = build_examples(toy_dialogues, toy_vocabs, tiny_config)
    s2_last = examples[3]
    assert [e.role for e in s2_last.semantic_history] == ["guide", "tourist"]
    np.testing.assert_array_equal(s2_last.history_intents[0], toy_vocabs.labels.multi_hot(["FOL_ACK"]))
    assert s2_last.nl_history[1].payload == tuple(toy_vocabs.tokens.encode(["what", "should", "i", "eat"]))


def test_history_window_truncates(toy_dialogues, toy_vocabs, tiny_config):
    examples = build_examples(toy_dialogues, toy_vocabs, replace(tiny_config, history_window=1))
    assert len(examples[1].semantic_history) == 1
    assert examples[1].semantic_history[0].role == "guide"


def test_policy_examples_need_a_following_guide_turn(toy_dialogues, toy_vocabs, tiny_config):
    examples = build_examples(toy_dialogues, toy_vocabs, tiny_config)
    usable = task_examples(examples, "policy")
    assert ("s2", 1) not in [(e.session_id, e.turn_index) for e in usable]
    assert len(usable) == 4
    assert len(task_examples(examples, "lu")) == 5


def test_embeddings_fill_hits_and_keep_padding_zero(tmp_path, toy_vocabs):
    path = tmp_path / "vectors.txt"
    path.write_text("the 1 2 3\nmuseum 4 5 6\nabsent 7 8 9\n", encoding="utf-8")
    table, report = load_embeddings(path, toy_vocabs.tokens, dim=3)
    np.testing.assert_array_equal(table.weights.data[toy_vocabs.tokens.index("the")], [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(table.weights.data[PAD_ID], np.zeros(3))
    assert report.hits == 2
    assert report.candidates == len(toy_vocabs.tokens) - 2


def test_embedding_with_wrong_width_reports_line(tmp_path, toy_vocabs):
    path = tmp_path / "vectors.txt"
    path.write_text("the 1 2 3\nmuseum 4 5\n", encoding="utf-8")
    with pytest.raises(EmbeddingFormatError) as info:
        load_embeddings(path, toy_vocabs.tokens, dim=3)
    assert info.value.line == 2
