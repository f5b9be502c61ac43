from spkdlg.corpus.dialogues import Dialogue, Turn, load_corpus, save_corpus, split_sessions, tokenize
from spkdlg.corpus.embeddings import EmbeddingLoadReport, load_embeddings
from spkdlg.corpus.examples import Example, HistoryEntry, build_examples, task_examples
from spkdlg.corpus.synthetic import (
    SynthSpec,
    SyntheticCorpus,
    SyntheticTables,
    generate_synthetic,
    homogeneity_test,
    load_tables,
    oracle_accuracy,
    role_transition_divergence,
    save_synthetic,
)
from spkdlg.corpus.vocab import LabelVocab, TokenVocab, Vocabularies, build_vocabularies

__all__ = [
    "Dialogue",
    "EmbeddingLoadReport",
    "Example",
    "HistoryEntry",
    "LabelVocab",
    "SynthSpec",
    "SyntheticCorpus",
    "SyntheticTables",
    "TokenVocab",
    "Turn",
    "Vocabularies",
    "build_examples",
    "build_vocabularies",
    "generate_synthetic",
    "homogeneity_test",
    "load_corpus",
    "load_embeddings",
    "load_tables",
    "oracle_accuracy",
    "role_transition_divergence",
    "save_corpus",
    "save_synthetic",
    "split_sessions",
    "task_examples",
    "tokenize",
]
