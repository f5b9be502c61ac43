"""
Mini-batch Adam training of the contextual model.

Objective per example: task cross-entropy (LU, policy, or both in joint mode)
plus the summed guidance loss when enabled. Batch loss is the mean over the
batch's examples.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from spkdlg import tensor_core as tc
from spkdlg.checkpoint import save_checkpoint
from spkdlg.config import ModelConfig, TrainConfig
from spkdlg.corpus.dialogues import Dialogue, split_sessions
from spkdlg.corpus.examples import Example, build_examples, task_examples
from spkdlg.corpus.vocab import build_vocabularies
from spkdlg.dialogue_model import RoleContextualModel, example_loss
from spkdlg.errors import ContractError, NumericalError
from spkdlg.layers import NamedParams
from spkdlg.losses import multilabel_xent  # noqa: F401 - re-exported
from spkdlg.services.evaluation_service import evaluation_service
from spkdlg.tensor_core import Tape

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_config(cls, config: TrainConfig) -> "AdamState":
        return cls(learning_rate=config.learning_rate, beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)


def adam_step(state: AdamState, params: NamedParams) -> None:
    """
    One bias-corrected Adam update from each tensor's `.grad` (unset counts as zero).
    Raises NumericalError naming the first parameter with a NaN gradient; no
    parameter is touched in that case.
    """
    for name, p in params:
        if p.grad is not None and np.isnan(p.grad).any():
            raise NumericalError(name)
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**t
    correction2 = 1.0 - b2**t
    for name, p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / correction1
        v_hat = v / correction2
        p.data -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)


def clip_global_norm(params: NamedParams, max_norm: Optional[float]) -> float:
    """Rescale all gradients so their joint L2 norm is at most `max_norm`. Returns the factor used."""
    if max_norm is None:
        return 1.0
    total = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for _, p in params if p.grad is not None))
    if total <= max_norm or total == 0.0:
        return 1.0
    factor = max_norm / total
    for _, p in params:
        if p.grad is not None:
            p.grad *= factor
    return factor


# ---------------------------------------------------------------- metric log


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    guidance_loss: float
    dev_lu_f1: Optional[float]
    dev_policy_f1: Optional[float]


METRIC_LOG_COLUMNS = ("epoch", "train_loss", "dev_LU_F1", "dev_policy_F1")


def _fmt(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.6f}"


def format_metric_line(record: EpochRecord) -> str:
    return "\t".join(
        [str(record.epoch), _fmt(record.train_loss), _fmt(record.dev_lu_f1), _fmt(record.dev_policy_f1)]
    )


def write_metric_log(path: Union[str, Path], records: Sequence[EpochRecord]) -> Path:
    """One tab-separated line per epoch, columns METRIC_LOG_COLUMNS; '-' marks a metric the run does not produce."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(format_metric_line(record) + "\n")
    return path


# ---------------------------------------------------------------- trainer


def history_pad_length(batch: Sequence[Example]) -> Optional[int]:
    lengths = [len(entry.payload) for e in batch for entry in e.nl_history]
    return max(lengths) if lengths else None


@dataclass
class TrainResult:
    model: RoleContextualModel
    records: List[EpochRecord]
    best_epoch: int


EpochCallback = Callable[[EpochRecord], None]


class Trainer:
    def __init__(
        self,
        model: RoleContextualModel,
        config: TrainConfig,
        on_epoch: Optional[EpochCallback] = None,
        threads: Optional[int] = None,
    ) -> None:
        self.model = model
        self.config = config.validate()
        self.on_epoch = on_epoch
        self.threads = threads
        self.optimizer = AdamState.from_config(config)
        self._rng = np.random.default_rng(config.seed)

    def run_batch(self, batch: Sequence[Example]) -> Tuple[float, float]:
        """Forward, backward and one Adam step. Returns (mean objective, mean guidance)."""
        masked = self.config.padding == "masked"
        pad_to = history_pad_length(batch) if self.model.config.history_mode == "natural_language" else None
        params = self.model.trainable_parameters()
        tc.zero_grad(p for _, p in params)
        guidance_total = 0.0
        with Tape() as tape:
            objective = None
            for example in batch:
                task_loss, guidance = example_loss(self.model, example, pad_to=pad_to, masked=masked)
                total = task_loss
                if guidance is not None:
                    guidance_total += guidance.item()
                    total = total + guidance
                objective = total if objective is None else objective + total
            loss = tc.scale(objective, 1.0 / len(batch))
        tc.backward(loss, tape)
        clip_global_norm(params, self.config.clip_norm)
        adam_step(self.optimizer, params)
        return loss.item(), guidance_total / len(batch)

    def run_epoch(self, examples: Sequence[Example]) -> Tuple[float, float]:
        order = self._rng.permutation(len(examples)) if self.config.shuffle else np.arange(len(examples))
        size = self.config.batch_size
        loss_sum = guidance_sum = 0.0
        for start in range(0, len(order), size):
            batch = [examples[i] for i in order[start : start + size]]
            batch_loss, batch_guidance = self.run_batch(batch)
            logger.debug("batch %d: loss=%.6f", start // size, batch_loss)
            loss_sum += batch_loss * len(batch)
            guidance_sum += batch_guidance * len(batch)
        return loss_sum / len(examples), guidance_sum / len(examples)

    def _dev_scores(self, dev: Sequence[Example]) -> Tuple[Optional[float], Optional[float]]:
        task = self.model.config.task
        lu = policy = None
        if task in ("lu", "joint") and dev:
            lu = evaluation_service.evaluate_examples(self.model, dev, "lu", threads=self.threads).f1
        if task in ("policy", "joint") and task_examples(dev, "policy"):
            policy = evaluation_service.evaluate_examples(self.model, dev, "policy", threads=self.threads).f1
        return lu, policy

    def train(
        self,
        train_examples: Sequence[Example],
        dev_examples: Sequence[Example] = (),
        checkpoint_path: Optional[Union[str, Path]] = None,
        checkpoint_metadata: Optional[Mapping] = None,
    ) -> TrainResult:
        task = self.model.config.task
        usable = task_examples(train_examples, task)
        if not usable:
            raise ContractError(f"no training examples for task {task!r}")
        if not dev_examples:
            logger.warning("Empty dev split; dev F1 will not be reported")

        logger.info(
            "Training on %d examples (%d dev) for %d epochs, batch %d",
            len(usable),
            len(dev_examples),
            self.config.epochs,
            self.config.batch_size,
        )
        records: List[EpochRecord] = []
        best_score, best_epoch, stale = -1.0, 0, 0
        for epoch in range(1, self.config.epochs + 1):
            train_loss, guidance = self.run_epoch(usable)
            dev_lu, dev_policy = self._dev_scores(dev_examples)
            record = EpochRecord(epoch, train_loss, guidance, dev_lu, dev_policy)
            records.append(record)
            logger.info(
                "epoch %d: loss=%.4f guidance=%.4f dev_LU_F1=%s dev_policy_F1=%s",
                epoch,
                train_loss,
                guidance,
                _fmt(dev_lu),
                _fmt(dev_policy),
            )
            if self.on_epoch is not None:
                self.on_epoch(record)

            score = dev_lu if task != "policy" else dev_policy
            if score is not None and score > best_score:
                best_score, best_epoch, stale = score, epoch, 0
            elif score is not None:
                stale += 1
            if self.config.early_stop and stale >= self.config.patience:
                logger.info("Early stop after epoch %d (best dev F1 %.4f at epoch %d)", epoch, best_score, best_epoch)
                break

        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, self.model, metadata=dict(checkpoint_metadata or {}))
        return TrainResult(model=self.model, records=records, best_epoch=best_epoch or len(records))


# ---------------------------------------------------------------- multi-run comparison


def table_configurations(task: str = "lu", base: Optional[ModelConfig] = None) -> Dict[str, ModelConfig]:
    """The six standard rows: no history, semantic (pooled, role-split), NL (pooled, role-split, + guidance)."""
    base = base or ModelConfig()
    base = replace(base, task=task, role_split=False, intermediate_guidance=False)
    return {
        "baseline": replace(base, history_mode="none"),
        "semantic": replace(base, history_mode="semantic"),
        "semantic+role": replace(base, history_mode="semantic", role_split=True),
        "nl": replace(base, history_mode="natural_language"),
        "nl+role": replace(base, history_mode="natural_language", role_split=True),
        "nl+role+guidance": replace(
            base, history_mode="natural_language", role_split=True, intermediate_guidance=True
        ),
    }


@dataclass(frozen=True)
class ComparisonRow:
    configuration: str
    seed: int
    test_lu_f1: Optional[float]
    test_policy_f1: Optional[float]
    final_train_loss: float
    guidance_losses: Tuple[float, ...] = ()  # per epoch, zeros without guidance


def compare_configurations(
    dialogues: Sequence[Dialogue],
    configs: Mapping[str, ModelConfig],
    seeds: Sequence[int],
    train_config: TrainConfig,
    threads: Optional[int] = None,
) -> List[ComparisonRow]:
    """
    Train and test every configuration once per seed. The session split is fixed
    by `train_config.split_seed`; the seed varies initialisation and batch order.
    """
    if not dialogues:
        raise ContractError("cannot compare configurations on an empty corpus")
    train_d, dev_d, test_d = split_sessions(dialogues, train_config.split_seed, train_config.split_fractions)
    vocabs = build_vocabularies(train_d, train_config.min_token_freq)

    rows: List[ComparisonRow] = []
    for name, config in configs.items():
        config.validate()
        train_x = build_examples(train_d, vocabs, config)
        dev_x = build_examples(dev_d, vocabs, config)
        test_x = build_examples(test_d, vocabs, config)
        for seed in seeds:
            model = RoleContextualModel.create(config, vocabs, seed=seed)
            result = Trainer(model, replace(train_config, seed=seed), threads=threads).train(train_x, dev_x)
            lu = policy = None
            if config.task in ("lu", "joint") and test_x:
                lu = evaluation_service.evaluate_examples(model, test_x, "lu", threads=threads).f1
            if config.task in ("policy", "joint") and task_examples(test_x, "policy"):
                policy = evaluation_service.evaluate_examples(model, test_x, "policy", threads=threads).f1
            guidance = tuple(r.guidance_loss for r in result.records)
            rows.append(ComparisonRow(name, seed, lu, policy, result.records[-1].train_loss, guidance))
            logger.info("compare %s seed %d: test LU F1=%s policy F1=%s", name, seed, _fmt(lu), _fmt(policy))
    return rows
