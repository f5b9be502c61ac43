"""
Per-utterance average F1 and evaluation orchestration.

Forward passes run outside any tape, so worker threads only read the
parameters. Results are gathered in input order before reduction.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import AbstractSet, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from spkdlg.config import load_settings
from spkdlg.corpus.examples import Example, task_examples
from spkdlg.errors import ContractError, PreconditionError

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.5


def utterance_f1(predicted: AbstractSet, gold: AbstractSet) -> float:
    """F1 of one utterance; both empty scores 1.0, exactly one empty scores 0.0."""
    if not predicted and not gold:
        return 1.0
    if not predicted or not gold:
        return 0.0
    hits = len(set(predicted) & set(gold))
    if hits == 0:
        return 0.0
    precision = hits / len(predicted)
    recall = hits / len(gold)
    return 2.0 * precision * recall / (precision + recall)


def corpus_f1(scores: Sequence[float]) -> float:
    if len(scores) == 0:
        raise ContractError("cannot average F1 over an empty evaluation set")
    return float(np.mean(np.asarray(scores, dtype=np.float64)))


def default_grid() -> List[float]:
    grid = [round(0.05 * k, 2) for k in range(1, 20)]
    if DEFAULT_THRESHOLD not in grid:
        grid.append(DEFAULT_THRESHOLD)
    return sorted(grid)


@dataclass(frozen=True)
class UtterancePrediction:
    session_id: str
    turn_index: int
    predicted: FrozenSet[str]
    gold: FrozenSet[str]
    f1: float


@dataclass(frozen=True)
class EvaluationReport:
    task: str
    threshold: float
    predictions: Tuple[UtterancePrediction, ...]
    f1: float

    @property
    def n_utterances(self) -> int:
        return len(self.predictions)


def _head_probs(model, example: Example, task: str) -> np.ndarray:
    result = model.forward(example)
    probs = result.lu_probs if task == "lu" else result.policy_probs
    if probs is None:
        raise ContractError(f"model has no {task} head")
    return probs.numpy()


def _gold(example: Example, task: str) -> FrozenSet[str]:
    return example.lu_gold if task == "lu" else example.policy_gold


class EvaluationService:
    """
    Scores a model on a list of examples, sharding forward passes over a
    thread pool capped by SPKDLG_THREADS.
    """

    def __init__(self, threads: Optional[int] = None) -> None:
        self._threads = threads

    @property
    def threads(self) -> int:
        if self._threads is None:
            self._threads = load_settings().threads
        return self._threads

    def collect_probabilities(
        self, model, examples: Sequence[Example], task: str, threads: Optional[int] = None
    ) -> List[np.ndarray]:
        if task not in ("lu", "policy"):
            raise ContractError(f"evaluation task must be 'lu' or 'policy', got {task!r}")
        workers = max(1, threads if threads is not None else self.threads)
        if workers == 1 or len(examples) < 2:
            return [_head_probs(model, e, task) for e in examples]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            # map() yields in submission order
            return list(pool.map(lambda e: _head_probs(model, e, task), examples))

    def evaluate_examples(
        self,
        model,
        examples: Sequence[Example],
        task: str,
        threshold: Optional[float] = None,
        threads: Optional[int] = None,
    ) -> EvaluationReport:
        theta = model.config.threshold if threshold is None else threshold
        if not 0.0 < theta < 1.0:
            raise PreconditionError(f"threshold must lie in (0, 1), got {theta}")
        usable = task_examples(examples, task)
        if not usable:
            raise ContractError(f"no examples to evaluate for task {task!r}")
        vocab = model.vocabs.labels if task == "lu" else model.vocabs.actions
        probabilities = self.collect_probabilities(model, usable, task, threads)

        predictions = []
        for example, probs in zip(usable, probabilities):
            predicted = vocab.decode(int(k) for k in np.flatnonzero(probs > theta))
            gold = _gold(example, task)
            predictions.append(
                UtterancePrediction(
                    session_id=example.session_id,
                    turn_index=example.turn_index,
                    predicted=predicted,
                    gold=gold,
                    f1=utterance_f1(predicted, gold),
                )
            )
        report = EvaluationReport(
            task=task,
            threshold=theta,
            predictions=tuple(predictions),
            f1=corpus_f1([p.f1 for p in predictions]),
        )
        logger.info("Evaluated %s on %d utterances: F1=%.4f (threshold %.2f)", task, report.n_utterances, report.f1, theta)
        return report

    def tune_threshold(
        self,
        probabilities: Sequence[np.ndarray],
        golds: Sequence[AbstractSet[int]],
        grid: Optional[Iterable[float]] = None,
    ) -> Tuple[float, float]:
        """
        Best threshold on a grid by corpus F1. Golds are label-index sets.
        Ties go to the threshold closest to the default, then the lower one.
        """
        if len(probabilities) != len(golds):
            raise ContractError("one gold set per probability vector")
        candidates = sorted(set(default_grid() if grid is None else grid) | {DEFAULT_THRESHOLD})
        best: Optional[Tuple[float, float]] = None
        for theta in candidates:
            if not 0.0 < theta < 1.0:
                raise PreconditionError(f"grid threshold must lie in (0, 1), got {theta}")
            score = corpus_f1(
                [
                    utterance_f1(frozenset(int(k) for k in np.flatnonzero(np.asarray(p) > theta)), gold)
                    for p, gold in zip(probabilities, golds)
                ]
            )
            if (
                best is None
                or score > best[1]
                or (score == best[1] and abs(theta - DEFAULT_THRESHOLD) < abs(best[0] - DEFAULT_THRESHOLD))
            ):
                best = (theta, score)
        logger.info("Tuned threshold %.2f (F1=%.4f over %d utterances)", best[0], best[1], len(probabilities))
        return best

    def tune_model_threshold(
        self, model, examples: Sequence[Example], task: str, grid: Optional[Iterable[float]] = None
    ) -> Tuple[float, float]:
        usable = task_examples(examples, task)
        if not usable:
            raise ContractError(f"no examples to tune on for task {task!r}")
        vocab = model.vocabs.labels if task == "lu" else model.vocabs.actions
        probabilities = self.collect_probabilities(model, usable, task)
        # gold labels outside the alphabet stay as strings: unpredictable, but still counted
        golds = [frozenset(vocab.index(label) if label in vocab else label for label in _gold(e, task)) for e in usable]
        return self.tune_threshold(probabilities, golds, grid)


# Singleton instance
evaluation_service = EvaluationService()
