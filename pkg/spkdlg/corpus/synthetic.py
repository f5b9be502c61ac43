"""
Synthetic two-role dialogue generator.

Labels come in confusable pairs (2i, 2i+1). Each turn first draws a pair from a
shared Markov chain over the previous turn's pair, then the member inside the
pair: with probability `delta` from a role-specific table keyed on the pair the
*other* role used most recently, otherwise uniformly. `delta = 0` makes the roles
statistically identical and leaves the member unpredictable from history.
Surface words come from per-label pools, and with probability
`lexical_ambiguity` from a pool shared by the pair, so the words reveal the pair
but often not the member. A turn may also carry a fixed companion label.

The generating tables are persisted next to the corpus so Bayes-optimal
predictions can be computed exactly.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
from scipy.stats import chi2_contingency

from spkdlg.config import ROLES
from spkdlg.corpus.dialogues import Dialogue, Turn, save_corpus
from spkdlg.errors import ConfigError

logger = logging.getLogger(__name__)

TOURIST, GUIDE = ROLES

DEFAULT_LABELS = (
    "QST_WHAT",
    "QST_WHERE",
    "QST_WHEN",
    "QST_RECOMMEND",
    "RES_INFO",
    "RES_RECOMMEND",
    "FOL_ACK",
    "FOL_CONFIRM",
)

FILLER_SHARE = 0.2  # probability a word comes from the label-independent filler pool
DIRICHLET_ALPHA = 0.3  # low concentration: peaked pair transitions
MEMBER_NOISE = 0.05  # role tables pick the member with probability 1 - MEMBER_NOISE


@dataclass(frozen=True)
class SynthSpec:
    sessions: int = 200
    turns_per_session: int = 12
    delta: float = 1.0
    vocab_size: int = 120
    labels: Tuple[str, ...] = DEFAULT_LABELS
    seed: int = 0
    lexical_ambiguity: float = 0.8
    companion_rate: float = 0.0
    switch_prob: float = 0.5
    min_words: int = 2
    max_words: int = 6

    def validate(self) -> "SynthSpec":
        if self.sessions < 1 or self.turns_per_session < 1:
            raise ConfigError("sessions and turns_per_session must be positive")
        if not 0.0 <= self.delta <= 1.0:
            raise ConfigError(f"delta must lie in [0, 1], got {self.delta}")
        for name in ("lexical_ambiguity", "companion_rate", "switch_prob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
        if len(self.labels) < 2 or len(self.labels) % 2 or len(set(self.labels)) != len(self.labels):
            raise ConfigError("labels must hold an even number (at least two) of distinct entries")
        if self.vocab_size < _pool_count(len(self.labels)) + 1:
            raise ConfigError(
                f"vocab_size {self.vocab_size} too small for {len(self.labels)} labels "
                f"(need >= {_pool_count(len(self.labels)) + 1})"
            )
        if not 1 <= self.min_words <= self.max_words:
            raise ConfigError("need 1 <= min_words <= max_words")
        return self

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["labels"] = list(self.labels)
        return data


def _pool_count(n_labels: int) -> int:
    # one distinctive pool per label, one shared pool per confusable pair
    return n_labels + n_labels // 2


@dataclass
class SyntheticTables:
    labels: List[str]
    delta: float
    start: np.ndarray  # [P] first-turn pair distribution
    pair_transitions: np.ndarray  # [P, P] previous pair -> next pair, shared by both roles
    member_tables: Dict[str, np.ndarray]  # role -> [P+1] P(member = 1 | other role's last pair); index P: none yet
    companion: List[int]
    companion_rate: float
    switch_prob: float
    word_pools: Dict[str, List[List[str]]] = field(default_factory=dict)

    @property
    def n_labels(self) -> int:
        return len(self.labels)

    @property
    def n_pairs(self) -> int:
        return len(self.labels) // 2

    def member_probability(self, role: str, last_other: int) -> float:
        """P(member = 1) for a turn of `role`; `last_other` is the other role's last intent, -1 if none."""
        P = self.n_pairs
        index = P if last_other < 0 else last_other // 2
        return self.delta * float(self.member_tables[role][index]) + (1.0 - self.delta) * 0.5

    def next_distribution(self, role: str, previous: int, last_tourist: int, last_guide: int) -> np.ndarray:
        """True conditional over the next primary intent. -1 means no such turn yet."""
        pair_row = self.start if previous < 0 else self.pair_transitions[previous // 2]
        q = self.member_probability(role, last_guide if role == TOURIST else last_tourist)
        out = np.empty(self.n_labels)
        out[0::2] = pair_row * (1.0 - q)
        out[1::2] = pair_row * q
        return out

    def to_dict(self) -> Dict:
        return {
            "labels": self.labels,
            "delta": self.delta,
            "start": self.start.tolist(),
            "pair_transitions": self.pair_transitions.tolist(),
            "member_tables": {r: t.tolist() for r, t in self.member_tables.items()},
            "companion": self.companion,
            "companion_rate": self.companion_rate,
            "switch_prob": self.switch_prob,
            "word_pools": self.word_pools,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "SyntheticTables":
        return cls(
            labels=list(data["labels"]),
            delta=float(data["delta"]),
            start=np.asarray(data["start"], dtype=np.float64),
            pair_transitions=np.asarray(data["pair_transitions"], dtype=np.float64),
            member_tables={r: np.asarray(t, dtype=np.float64) for r, t in data["member_tables"].items()},
            companion=[int(c) for c in data["companion"]],
            companion_rate=float(data["companion_rate"]),
            switch_prob=float(data["switch_prob"]),
            word_pools={k: [list(p) for p in v] for k, v in data.get("word_pools", {}).items()},
        )


@dataclass
class SyntheticCorpus:
    dialogues: List[Dialogue]
    tables: SyntheticTables


def tables_path_for(corpus_path: Union[str, Path]) -> Path:
    corpus_path = Path(corpus_path)
    return corpus_path.with_name(corpus_path.stem + ".tables.json")


def _build_tables(spec: SynthSpec, rng: np.random.Generator) -> SyntheticTables:
    K = len(spec.labels)
    P = K // 2
    start = rng.dirichlet(np.ones(P))
    pair_transitions = rng.dirichlet(np.full(P, DIRICHLET_ALPHA), size=P)
    tourist_bits = rng.integers(2, size=P + 1)
    # the guide uses the complementary mapping so the roles disagree on every context
    member_tables = {
        TOURIST: np.where(tourist_bits == 1, 1.0 - MEMBER_NOISE, MEMBER_NOISE),
        GUIDE: np.where(tourist_bits == 1, MEMBER_NOISE, 1.0 - MEMBER_NOISE),
    }
    companion = [int((k + 1 + rng.integers(K - 1)) % K) for k in range(K)]

    n_pools = _pool_count(K)
    per_pool = max(1, (spec.vocab_size - 1) // (n_pools + 1))
    words = [f"w{i:03d}" for i in range(spec.vocab_size)]
    rng.shuffle(words)
    pools = [words[i * per_pool : (i + 1) * per_pool] for i in range(n_pools)]
    filler = words[n_pools * per_pool :]
    word_pools = {
        "distinct": pools[:K],
        "shared": pools[K:],
        "filler": [filler],
    }
    return SyntheticTables(
        labels=list(spec.labels),
        delta=spec.delta,
        start=start,
        pair_transitions=pair_transitions,
        member_tables=member_tables,
        companion=companion,
        companion_rate=spec.companion_rate,
        switch_prob=spec.switch_prob,
        word_pools=word_pools,
    )


def _surface(labels: Sequence[int], tables: SyntheticTables, spec: SynthSpec, rng: np.random.Generator) -> str:
    pools = tables.word_pools
    n_words = int(rng.integers(spec.min_words, spec.max_words + 1))
    out = []
    for _ in range(n_words):
        if rng.random() < FILLER_SHARE and pools["filler"][0]:
            pool = pools["filler"][0]
        else:
            k = labels[int(rng.integers(len(labels)))]
            if rng.random() < spec.lexical_ambiguity:
                pool = pools["shared"][k // 2]
            else:
                pool = pools["distinct"][k]
        out.append(pool[int(rng.integers(len(pool)))])
    return " ".join(out)


def generate_synthetic(spec: SynthSpec) -> SyntheticCorpus:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    tables = _build_tables(spec, rng)
    P = tables.n_pairs

    dialogues = []
    for s in range(spec.sessions):
        speaker = ROLES[int(rng.integers(2))]
        previous = -1
        last = {TOURIST: -1, GUIDE: -1}
        turns = []
        for t in range(spec.turns_per_session):
            if t > 0 and rng.random() < spec.switch_prob:
                speaker = GUIDE if speaker == TOURIST else TOURIST
            pair_row = tables.start if previous < 0 else tables.pair_transitions[previous // 2]
            pair = int(rng.choice(P, p=pair_row))
            other = GUIDE if speaker == TOURIST else TOURIST
            if rng.random() < spec.delta:
                q = tables.member_tables[speaker][P if last[other] < 0 else last[other] // 2]
            else:
                q = 0.5
            primary = 2 * pair + int(rng.random() < q)
            labels = [primary]
            if rng.random() < spec.companion_rate:
                labels.append(tables.companion[primary])
            transcript = _surface(labels, tables, spec, rng)
            turns.append(Turn.from_text(speaker, transcript, [spec.labels[k] for k in labels]))
            previous = primary
            last[speaker] = primary
        dialogues.append(Dialogue(session_id=f"synth-{s:04d}", turns=tuple(turns)))

    logger.info(
        "Generated %d synthetic sessions (%d turns each, delta=%.2f, seed=%d)",
        spec.sessions,
        spec.turns_per_session,
        spec.delta,
        spec.seed,
    )
    return SyntheticCorpus(dialogues=dialogues, tables=tables)


def save_synthetic(corpus: SyntheticCorpus, path: Union[str, Path]) -> Path:
    """Write the corpus and its generating tables side by side."""
    save_corpus(corpus.dialogues, path)
    tables_path = tables_path_for(path)
    with open(tables_path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(corpus.tables.to_dict(), f, sort_keys=True)
        f.write("\n")
    logger.info("Wrote generating tables to %s", tables_path)
    return tables_path


def load_tables(path: Union[str, Path]) -> SyntheticTables:
    with open(path, "r", encoding="utf-8") as f:
        return SyntheticTables.from_dict(json.load(f))


# ---------------------------------------------------------------- oracles


def _primary_sequence(dialogue: Dialogue, labels: Sequence[str]) -> List[Tuple[str, int]]:
    # primary intent is written first; turns without a known primary are skipped
    index = {label: i for i, label in enumerate(labels)}
    return [
        (turn.speaker, index[turn.intents[0]]) for turn in dialogue.turns if turn.intents and turn.intents[0] in index
    ]


def oracle_accuracy(dialogues: Sequence[Dialogue], tables: SyntheticTables, role_aware: bool) -> float:
    """
    Next-primary-intent accuracy of a brute-force predictor.

    role_aware: argmax of the true generating mixture (Bayes-optimal).
    otherwise:  argmax of the role-pooled first-order table fitted on `dialogues`.
    """
    K = tables.n_labels
    sequences = [_primary_sequence(d, tables.labels) for d in dialogues]

    pooled = np.zeros((K + 1, K))
    if not role_aware:
        for seq in sequences:
            previous = K
            for _, k in seq:
                pooled[previous, k] += 1
                previous = k

    correct = total = 0
    for seq in sequences:
        previous = last_tourist = last_guide = -1
        for speaker, k in seq:
            if role_aware:
                guess = int(np.argmax(tables.next_distribution(speaker, previous, last_tourist, last_guide)))
            else:
                guess = int(np.argmax(pooled[K if previous < 0 else previous]))
            correct += int(guess == k)
            total += 1
            previous = k
            if speaker == TOURIST:
                last_tourist = k
            else:
                last_guide = k
    return correct / total if total else 0.0


def _role_pair_counts(dialogues: Sequence[Dialogue], labels: Sequence[str]) -> Dict[str, Counter]:
    counts = {role: Counter() for role in ROLES}
    for dialogue in dialogues:
        previous = "<start>"
        for speaker, k in _primary_sequence(dialogue, labels):
            counts[speaker][(previous, k)] += 1
            previous = k
    return counts


def role_transition_divergence(dialogues: Sequence[Dialogue], labels: Sequence[str]) -> float:
    """Total variation between the roles' (previous intent, intent) distributions."""
    counts = _role_pair_counts(dialogues, labels)
    keys = sorted(set(counts[TOURIST]) | set(counts[GUIDE]), key=str)
    totals = {role: max(1, sum(counts[role].values())) for role in ROLES}
    return 0.5 * float(
        np.sum([abs(counts[TOURIST][k] / totals[TOURIST] - counts[GUIDE][k] / totals[GUIDE]) for k in keys])
    )


def homogeneity_test(dialogues: Sequence[Dialogue], labels: Sequence[str]) -> Tuple[float, float]:
    """Chi-square test that both roles share one transition distribution. Returns (statistic, p)."""
    counts = _role_pair_counts(dialogues, labels)
    keys = sorted(set(counts[TOURIST]) | set(counts[GUIDE]), key=str)
    table = np.array([[counts[role][k] for k in keys] for role in ROLES], dtype=np.float64)
    if table.size == 0 or (table.sum(axis=1) == 0).any():
        logger.warning("Homogeneity test needs turns from both roles; returning a null result")
        return 0.0, 1.0
    statistic, p_value, _, _ = chi2_contingency(table)
    return float(statistic), float(p_value)
