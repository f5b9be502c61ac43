"""
Role-based contextual model for language understanding and guide-action prediction.

Pipeline per example:
    history turns -> (semantic multi-hot | CNN sentence vectors) -> history BLSTM(s) -> v_his
    current utterance -> embedding -> BLSTM conditioned on W_his·v_his -> v_cur
    v_cur -> W_LU -> sigmoid   (LU head)
    v_cur -> W_pi -> sigmoid   (policy head)

With role_split the history is partitioned by speaker role, each role has its own
history BLSTM, and the two summaries are added. Intermediate guidance puts a
supervised head on every history sentence vector during training.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np

from spkdlg import tensor_core as tc
from spkdlg.config import ROLES, ModelConfig
from spkdlg.corpus.examples import Example, HistoryEntry
from spkdlg.corpus.vocab import PAD_ID, Vocabularies
from spkdlg.errors import ContractError, DimensionError, PreconditionError
from spkdlg.layers import (
    BLSTMEncoder,
    CNNEncoder,
    DenseLayer,
    EmbeddingTable,
    NamedParams,
    blstm_encode,
    cnn_encode,
    dense,
    embed,
)
from spkdlg.losses import multilabel_xent
from spkdlg.tensor_core import Tensor

logger = logging.getLogger(__name__)

POOLED = "pooled"

SentenceEncoder = Union[CNNEncoder, BLSTMEncoder]


@dataclass
class ModelParams:
    """Every weight of one model. Absent components are None / empty."""

    config: ModelConfig
    embedding: EmbeddingTable
    current: BLSTMEncoder
    W_LU: Optional[DenseLayer]
    W_pi: Optional[DenseLayer]
    history: Dict[str, BLSTMEncoder] = field(default_factory=dict)  # "pooled" or one per role
    sentence: Optional[SentenceEncoder] = None
    W_his: Optional[DenseLayer] = None
    guidance: Optional[DenseLayer] = None
    W_tag: Optional[DenseLayer] = None

    @property
    def summary_dim(self) -> int:
        return 2 * self.config.hidden_dim

    def named_parameters(self) -> NamedParams:
        named: NamedParams = []
        named += self.embedding.named_parameters("embedding")
        if self.sentence is not None:
            kind = "cnn" if isinstance(self.sentence, CNNEncoder) else "blstm"
            named += self.sentence.named_parameters(f"sentence.{kind}")
        for key in (POOLED,) + ROLES:
            if key in self.history:
                prefix = "history" if key == POOLED else f"history.{key}"
                named += self.history[key].named_parameters(prefix)
        if self.W_his is not None:
            named += self.W_his.named_parameters("W_his")
        named += self.current.named_parameters("current")
        if self.W_tag is not None:
            named += self.W_tag.named_parameters("W_tag")
        if self.W_LU is not None:
            named += self.W_LU.named_parameters("W_LU")
        if self.W_pi is not None:
            named += self.W_pi.named_parameters("W_pi")
        if self.guidance is not None:
            named += self.guidance.named_parameters("guidance")
        return named

    def trainable_parameters(self) -> NamedParams:
        return [(name, p) for name, p in self.named_parameters() if p.requires_grad]


def sentence_dim(config: ModelConfig) -> int:
    if config.sentence_encoder == "cnn":
        return config.filters_per_width * len(config.filter_widths)
    return 2 * config.hidden_dim


def build_params(
    config: ModelConfig,
    token_vocab_size: int,
    label_vocab_size: int,
    action_vocab_size: int,
    seed: int = 0,
    embedding: Optional[EmbeddingTable] = None,
) -> ModelParams:
    """Deterministic construction: same config, sizes and seed give the same weights."""
    config.validate()
    rng = np.random.default_rng(seed)
    hidden = config.hidden_dim
    summary = 2 * hidden
    has_history = config.history_mode != "none"

    if embedding is None:
        embedding = EmbeddingTable.create(
            token_vocab_size, config.embedding_dim, rng, trainable=config.trainable_embeddings
        )
    elif embedding.vocab_size != token_vocab_size or embedding.dim != config.embedding_dim:
        raise DimensionError(
            "build_params embedding", embedding.weights.shape, (token_vocab_size, config.embedding_dim)
        )

    sentence: Optional[SentenceEncoder] = None
    history: Dict[str, BLSTMEncoder] = {}
    W_his = guidance = None
    if has_history:
        if config.history_mode == "natural_language":
            if config.sentence_encoder == "cnn":
                sentence = CNNEncoder.create(
                    config.embedding_dim, config.filter_widths, config.filters_per_width, rng
                )
            else:
                sentence = BLSTMEncoder.create(config.embedding_dim, hidden, rng)
            history_in = sentence_dim(config)
        else:
            history_in = label_vocab_size
        keys = ROLES if config.role_split else (POOLED,)
        for key in keys:
            history[key] = BLSTMEncoder.create(history_in, hidden, rng)
        W_his = DenseLayer.create(summary, hidden, rng)
        if config.intermediate_guidance:
            guidance = DenseLayer.create(sentence_dim(config), label_vocab_size, rng)

    current_in = config.embedding_dim
    if has_history and config.conditioning == "concat_input":
        current_in += hidden
    current = BLSTMEncoder.create(current_in, hidden, rng)

    W_LU = W_pi = W_tag = None
    if config.task in ("lu", "joint"):
        W_LU = DenseLayer.create(summary, label_vocab_size, rng)
    if config.task in ("policy", "joint"):
        W_pi = DenseLayer.create(summary, action_vocab_size, rng)
    if config.policy_input == "tags":
        W_tag = DenseLayer.create(label_vocab_size + (summary if has_history else 0), summary, rng)

    params = ModelParams(
        config=config,
        embedding=embedding,
        current=current,
        W_LU=W_LU,
        W_pi=W_pi,
        history=history,
        sentence=sentence,
        W_his=W_his,
        guidance=guidance,
        W_tag=W_tag,
    )
    logger.debug("Built %d parameter tensors (%d values)", len(params.named_parameters()), parameter_count(params))
    return params


def parameter_count(params: ModelParams) -> int:
    return int(np.sum([p.size for _, p in params.named_parameters()]))


def role_encoder_names(params: ModelParams) -> List[str]:
    """Names of the history-encoder tensors."""
    return [name for name, _ in params.named_parameters() if name.startswith("history.")]


# ---------------------------------------------------------------- history


def _zero_summary(params: ModelParams) -> Tensor:
    return Tensor(np.zeros(params.summary_dim))


def _partitions(params: ModelParams, history: Sequence[HistoryEntry], role_split: bool) -> List[Tuple[str, List[int]]]:
    if role_split:
        return [(role, [i for i, e in enumerate(history) if e.role == role]) for role in ROLES]
    return [(POOLED, list(range(len(history))))]


def _summarize(params: ModelParams, vectors: Sequence[Tensor], history: Sequence[HistoryEntry], role_split: bool) -> Tensor:
    if role_split and not all(role in params.history for role in ROLES):
        raise ContractError("role_split history needs one encoder per role")
    if not role_split and POOLED not in params.history:
        raise ContractError("pooled history needs a pooled encoder")
    total: Optional[Tensor] = None
    for key, indices in _partitions(params, history, role_split):
        if not indices:
            continue
        summary = blstm_encode(params.history[key], tc.stack([vectors[i] for i in indices]))
        total = summary if total is None else total + summary
    return total if total is not None else _zero_summary(params)


def encode_history_semantic(params: ModelParams, history: Sequence[HistoryEntry], role_split: bool) -> Tensor:
    """v_his from intent vectors; an empty history (or empty partition) contributes zeros."""
    vectors = []
    for entry in history:
        if not isinstance(entry.payload, np.ndarray):
            raise ContractError("semantic history needs intent vectors, got token ids")
        vectors.append(Tensor(entry.payload))
    return _summarize(params, vectors, history, role_split)


def encode_sentence(
    params: ModelParams, token_ids: Sequence[int], pad_to: Optional[int] = None, masked: bool = True
) -> Tensor:
    """
    Sentence vector for one history utterance.

    `pad_to` right-pads with <pad> to a batch length; with `masked` the CNN pools
    only over windows starting inside the real tokens.
    """
    if params.sentence is None:
        raise ContractError("this model has no sentence encoder")
    ids = list(token_ids)
    if not ids:
        raise PreconditionError("history utterance has no tokens")
    if isinstance(params.sentence, BLSTMEncoder):
        return blstm_encode(params.sentence, embed(params.embedding, ids))
    valid = len(ids)
    if pad_to is not None and pad_to > valid:
        ids = ids + [PAD_ID] * (pad_to - valid)
    return cnn_encode(params.sentence, embed(params.embedding, ids), valid_length=valid if masked else None)


def encode_history_nl(
    params: ModelParams,
    history: Sequence[HistoryEntry],
    role_split: bool,
    pad_to: Optional[int] = None,
    masked: bool = True,
) -> Tuple[Tensor, List[Tensor]]:
    """v_his from history transcripts, plus the per-utterance sentence vectors in order."""
    vectors = []
    for entry in history:
        if isinstance(entry.payload, np.ndarray):
            raise ContractError("natural-language history needs token ids, got an intent vector")
        vectors.append(encode_sentence(params, entry.payload, pad_to=pad_to, masked=masked))
    return _summarize(params, vectors, history, role_split), vectors


# ---------------------------------------------------------------- current utterance and heads


def encode_current(params: ModelParams, token_ids: Sequence[int], v_his: Optional[Tensor]) -> Tensor:
    if not len(token_ids):
        raise PreconditionError("current utterance has no tokens")
    seq = embed(params.embedding, token_ids)
    if v_his is None or params.W_his is None:
        return blstm_encode(params.current, seq)
    context = dense(params.W_his, v_his)
    if params.config.conditioning == "concat_input":
        return blstm_encode(params.current, seq, step_input=context)
    return blstm_encode(params.current, seq, init_fwd=context, init_bwd=context)


def encode_tag_vector(params: ModelParams, tags: np.ndarray, v_his: Optional[Tensor]) -> Tensor:
    """Tags-based policy input: tanh(W_tag·[tags; v_his]) in place of v_cur."""
    if params.W_tag is None:
        raise ContractError("this model was not built with policy_input='tags'")
    x = Tensor(tags)
    if v_his is not None:
        x = tc.concat([x, v_his], axis=0)
    return tc.tanh(dense(params.W_tag, x))


def lu_head(params: ModelParams, v_cur: Tensor) -> Tensor:
    if params.W_LU is None:
        raise ContractError("this model has no LU head")
    return tc.sigmoid(dense(params.W_LU, v_cur))


def policy_head(params: ModelParams, v_cur: Tensor) -> Tensor:
    if params.W_pi is None:
        raise ContractError("this model has no policy head")
    return tc.sigmoid(dense(params.W_pi, v_cur))


def forward_lu(params: ModelParams, current_utterance: Sequence[int], v_his: Optional[Tensor]) -> Tensor:
    return lu_head(params, encode_current(params, current_utterance, v_his))


def forward_policy(params: ModelParams, current_utterance: Sequence[int], v_his: Optional[Tensor]) -> Tensor:
    return policy_head(params, encode_current(params, current_utterance, v_his))


def predict_labels(o: Union[Tensor, np.ndarray], threshold: float) -> FrozenSet[int]:
    """Indices strictly above the threshold; the empty set is a valid prediction."""
    if not 0.0 < threshold < 1.0:
        raise PreconditionError(f"threshold must lie in (0, 1), got {threshold}")
    values = o.values if isinstance(o, Tensor) else np.asarray(o).reshape(-1)
    return frozenset(int(k) for k in np.flatnonzero(values > threshold))


def guidance_loss(
    params: ModelParams, sentence_vectors: Sequence[Tensor], gold_history_intents: Optional[Sequence[np.ndarray]]
) -> Tensor:
    """Sum of per-utterance multi-label cross-entropies on the history sentence vectors."""
    if params.guidance is None:
        raise ContractError("guidance head not built; enable intermediate_guidance")
    if gold_history_intents is None or len(gold_history_intents) != len(sentence_vectors):
        raise ContractError("guidance needs one gold intent vector per history utterance")
    if not sentence_vectors:
        return Tensor(0.0)
    losses = [
        multilabel_xent(tc.sigmoid(dense(params.guidance, s)), gold)
        for s, gold in zip(sentence_vectors, gold_history_intents)
    ]
    total = losses[0]
    for loss in losses[1:]:
        total = total + loss
    return total


# ---------------------------------------------------------------- model


@dataclass
class ForwardResult:
    lu_probs: Optional[Tensor]
    policy_probs: Optional[Tensor]
    guidance_loss: Optional[Tensor]
    v_cur: Optional[Tensor] = None


class RoleContextualModel:
    """A parameter set plus the configuration that says how to run it."""

    def __init__(self, params: ModelParams, vocabs: Vocabularies) -> None:
        self.params = params
        self.config = params.config
        self.vocabs = vocabs

    @classmethod
    def create(
        cls,
        config: ModelConfig,
        vocabs: Vocabularies,
        seed: int = 0,
        embedding: Optional[EmbeddingTable] = None,
    ) -> "RoleContextualModel":
        params = build_params(
            config, len(vocabs.tokens), len(vocabs.labels), len(vocabs.actions), seed=seed, embedding=embedding
        )
        logger.info(
            "Model: history=%s role_split=%s guidance=%s task=%s, %d parameters",
            config.history_mode,
            config.role_split,
            config.intermediate_guidance,
            config.task,
            parameter_count(params),
        )
        return cls(params, vocabs)

    def named_parameters(self) -> NamedParams:
        return self.params.named_parameters()

    def trainable_parameters(self) -> NamedParams:
        return self.params.trainable_parameters()

    def encode_history(
        self, example: Example, pad_to: Optional[int] = None, masked: bool = True
    ) -> Tuple[Optional[Tensor], List[Tensor]]:
        mode = self.config.history_mode
        if mode == "semantic":
            return encode_history_semantic(self.params, example.semantic_history, self.config.role_split), []
        if mode == "natural_language":
            return encode_history_nl(
                self.params, example.nl_history, self.config.role_split, pad_to=pad_to, masked=masked
            )
        return None, []

    def forward(
        self, example: Example, train: bool = False, pad_to: Optional[int] = None, masked: bool = True
    ) -> ForwardResult:
        """
        Both heads share one v_cur. The guidance term is only computed when
        `train` is set; prediction never touches gold history labels.
        """
        config = self.config
        v_his, sentences = self.encode_history(example, pad_to=pad_to, masked=masked)

        v_cur = None
        if config.task in ("lu", "joint") or config.policy_input == "words":
            v_cur = encode_current(self.params, example.token_ids, v_his)

        lu_probs = policy_probs = None
        if config.task in ("lu", "joint"):
            lu_probs = lu_head(self.params, v_cur)
        if config.task in ("policy", "joint"):
            if config.policy_input == "tags":
                policy_probs = policy_head(self.params, encode_tag_vector(self.params, example.current_tags, v_his))
            else:
                policy_probs = policy_head(self.params, v_cur)

        guidance = None
        if train and config.intermediate_guidance:
            guidance = guidance_loss(self.params, sentences, example.history_intents)
        return ForwardResult(lu_probs=lu_probs, policy_probs=policy_probs, guidance_loss=guidance, v_cur=v_cur)

    def predict(self, example: Example, threshold: Optional[float] = None) -> Dict[str, FrozenSet[str]]:
        """Label names per active head."""
        theta = self.config.threshold if threshold is None else threshold
        result = self.forward(example)
        out: Dict[str, FrozenSet[str]] = {}
        if result.lu_probs is not None:
            out["lu"] = self.vocabs.labels.decode(predict_labels(result.lu_probs, theta))
        if result.policy_probs is not None:
            out["policy"] = self.vocabs.actions.decode(predict_labels(result.policy_probs, theta))
        return out


def example_loss(
    model: RoleContextualModel, example: Example, pad_to: Optional[int] = None, masked: bool = True
) -> Tuple[Tensor, Optional[Tensor]]:
    """(task loss, guidance loss) for one training example."""
    result = model.forward(example, train=True, pad_to=pad_to, masked=masked)
    terms = []
    if result.lu_probs is not None:
        terms.append(multilabel_xent(result.lu_probs, example.lu_target))
    if result.policy_probs is not None:
        if example.policy_target is not None:
            terms.append(multilabel_xent(result.policy_probs, example.policy_target))
        elif model.config.task == "policy":
            raise ContractError(f"example {example.session_id}:{example.turn_index} has no policy target")
    task_loss = terms[0]
    for term in terms[1:]:
        task_loss = task_loss + term
    return task_loss, result.guidance_loss
