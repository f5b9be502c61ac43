import json

from scripts.convert_dstc4 import convert, labels_for


def test_labels_join_act_and_attribute():
    annotation = {
        "speech_act": [
            {"act": "qst", "attributes": ["where", "when"]},
            {"act": "FOL", "attributes": []},
            {"act": "QST", "attributes": ["WHERE"]},
        ]
    }
    assert labels_for(annotation) == ["QST_WHERE", "QST_WHEN", "FOL"]
    assert labels_for({}) == []


def test_convert_reads_session_folders(tmp_path):
    session = tmp_path / "001"
    session.mkdir()
    (session / "log.json").write_text(
        json.dumps(
            {
                "session_id": 1,
                "utterances": [
                    {"utter_index": 1, "speaker": "Guide", "transcript": "Hello."},
                    {"utter_index": 0, "speaker": "Tourist", "transcript": "Hi, where to?"},
                ],
            }
        )
    )
    (session / "label.json").write_text(
        json.dumps({"utterances": [{"utter_index": 0, "speech_act": [{"act": "QST", "attributes": ["WHERE"]}]}]})
    )
    (dialogue,) = convert(tmp_path)
    assert dialogue.session_id == "1"
    assert [t.speaker for t in dialogue.turns] == ["tourist", "guide"]
    assert dialogue.turns[0].intents == ("QST_WHERE",)
    assert dialogue.turns[1].intents == ()
