"""
DSTC4 -> JSON Lines converter
=============================
Walks a directory of per-session folders, each holding `log.json` (utterances)
and `label.json` (speech-act annotations), and writes the corpus format described
in mdfiles/CORPUS_FORMAT.md. Each act/attribute pair becomes one label
("QST" + "WHAT" -> "QST_WHAT"); an act without attributes is kept bare.

Usage:
    python scripts/convert_dstc4.py --data-dir path/to/dstc4 --out data/dstc4.jsonl
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List

project_root = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(project_root))

from spkdlg.corpus.dialogues import Dialogue, Turn, save_corpus  # noqa: E402
from spkdlg.errors import CorpusFormatError, SpkDlgError  # noqa: E402

logger = logging.getLogger(__name__)


def _load_json(path: Path) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise CorpusFormatError(f"invalid JSON ({e.msg})", str(path), e.lineno) from e


def labels_for(annotation: Dict[str, Any]) -> List[str]:
    labels: List[str] = []
    for act in annotation.get("speech_act", []):
        name = str(act.get("act", "")).upper()
        if not name:
            continue
        attributes = act.get("attributes") or []
        for attribute in attributes:
            label = f"{name}_{str(attribute).upper()}"
            if label not in labels:
                labels.append(label)
        if not attributes and name not in labels:
            labels.append(name)
    return labels


def convert_session(session_dir: Path) -> Dialogue:
    log = _load_json(session_dir / "log.json")
    label = _load_json(session_dir / "label.json")
    annotations = {u["utter_index"]: u for u in label.get("utterances", [])}
    turns = []
    for utterance in sorted(log.get("utterances", []), key=lambda u: u["utter_index"]):
        annotation = annotations.get(utterance["utter_index"], {})
        turns.append(
            Turn.from_text(
                speaker=str(utterance["speaker"]).lower(),
                transcript=utterance.get("transcript", ""),
                intents=labels_for(annotation),
            )
        )
    session_id = str(log.get("session_id", session_dir.name))
    return Dialogue(session_id=session_id, turns=tuple(turns))


def convert(data_dir: Path) -> List[Dialogue]:
    sessions = sorted(p.parent for p in data_dir.rglob("log.json") if (p.parent / "label.json").exists())
    if not sessions:
        logger.warning("No log.json/label.json pairs under %s", data_dir)
    return [convert_session(s) for s in sessions]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    parser.add_argument("--data-dir", type=Path, required=True)
    parser.add_argument("--out", type=Path, required=True)
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO)
    try:
        dialogues = convert(args.data_dir)
        save_corpus(dialogues, args.out)
    except SpkDlgError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
