"""
Finite-difference verification of every backward rule and of the full model loss.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from spkdlg import tensor_core as tc
from spkdlg.config import ModelConfig
from spkdlg.corpus.dialogues import Dialogue, Turn
from spkdlg.corpus.examples import build_examples
from spkdlg.corpus.vocab import build_vocabularies
from spkdlg.dialogue_model import RoleContextualModel, example_loss
from spkdlg.layers import BLSTMEncoder, CNNEncoder, LSTMCellParams, blstm_encode, cnn_encode, lstm_step
from spkdlg.tensor_core import Tape, Tensor

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-4
STEP = 1e-5


@dataclass(frozen=True)
class GradcheckResult:
    name: str
    max_rel_error: float
    n_values: int
    passed: bool


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / (||a|| + ||n||), zero when both vanish."""
    denom = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    if denom < 1e-12:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / denom)


def _check(name: str, build: Callable[[], Tensor], inputs: Sequence[Tensor], tolerance: float) -> GradcheckResult:
    """`build` maps the inputs to a scalar; every input is compared separately."""
    tc.zero_grad(inputs)
    with Tape() as tape:
        loss = build()
    tc.backward(loss, tape)
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = tc.numerical_gradient(build, t, STEP)
        worst = max(worst, relative_error(analytic, numeric))
    return GradcheckResult(name, worst, int(np.sum([t.size for t in inputs])), worst <= tolerance)


def _away_from_zero(rng: np.random.Generator, shape: Tuple[int, ...], low: float = 0.1) -> np.ndarray:
    """Random values with |x| >= low, so kinked ops stay differentiable under the probe step."""
    magnitude = rng.uniform(low, 1.0, size=shape)
    return magnitude * rng.choice([-1.0, 1.0], size=shape)


class GradcheckService:
    """Per-op table for the primitives and layers, plus the full-model check."""

    def __init__(self, seed: int = 0, tolerance: float = DEFAULT_TOLERANCE) -> None:
        self.seed = seed
        self.tolerance = tolerance

    def _weighted(self, out: Tensor, weights: np.ndarray) -> Tensor:
        return tc.sum(tc.mul(out, weights))

    def primitive_cases(self) -> Dict[str, Tuple[Callable[[], Tensor], List[Tensor]]]:
        rng = np.random.default_rng(self.seed)

        def param(shape, values=None) -> Tensor:
            data = rng.normal(size=shape) if values is None else values
            return Tensor(data, requires_grad=True)

        w = self._weighted
        cases: Dict[str, Tuple[Callable[[], Tensor], List[Tensor]]] = {}

        a, b = param((3, 4)), param((4, 2))
        r = rng.normal(size=(3, 2))
        cases["matmul"] = (lambda: w(tc.matmul(a, b), r), [a, b])

        v, m = param((4,)), param((4, 3))
        r_v = rng.normal(size=3)
        cases["matmul_vector"] = (lambda: w(tc.matmul(v, m), r_v), [v, m])

        x, y, row = param((3, 4)), param((3, 4)), param((4,))
        r34 = rng.normal(size=(3, 4))
        cases["add"] = (lambda: w(tc.add(x, row), r34), [x, row])
        cases["sub"] = (lambda: w(tc.sub(x, y), r34), [x, y])
        cases["mul"] = (lambda: w(tc.mul(x, y), r34), [x, y])
        cases["sigmoid"] = (lambda: w(tc.sigmoid(x), r34), [x])
        cases["tanh"] = (lambda: w(tc.tanh(x), r34), [x])

        k = param((3, 4), _away_from_zero(rng, (3, 4)))
        cases["relu"] = (lambda: w(tc.relu(k), r34), [k])
        cases["scale"] = (lambda: w(tc.scale(x, -2.5), r34), [x])

        pos = param((3, 4), rng.uniform(0.5, 2.0, size=(3, 4)))
        cases["log"] = (lambda: w(tc.log(pos), r34), [pos])

        inside = param((3, 4), rng.uniform(0.2, 0.8, size=(3, 4)))
        cases["clip"] = (lambda: w(tc.clip(inside, 0.1, 0.9), r34), [inside])
        cases["sum"] = (lambda: tc.sum(tc.mul(x, x)), [x])
        cases["mean"] = (lambda: tc.mean(tc.mul(x, x)), [x])

        # distinct values per column keep the argmax stable under the probe
        distinct = param((5, 3), rng.permutation(15).reshape(5, 3) * 0.1)
        r3 = rng.normal(size=3)
        cases["max_over_time"] = (lambda: w(tc.max_over_time(distinct), r3), [distinct])

        p, q = param((2, 3)), param((4, 3))
        r63 = rng.normal(size=(6, 3))
        cases["concat"] = (lambda: w(tc.concat([p, q], axis=0), r63), [p, q])

        u1, u2 = param((3,)), param((3,))
        r23 = rng.normal(size=(2, 3))
        cases["stack"] = (lambda: w(tc.stack([u1, u2]), r23), [u1, u2])
        cases["take_row"] = (lambda: w(tc.take_row(q, 2), r3), [q])

        table = param((6, 3))
        r_g = rng.normal(size=(4, 3))
        cases["gather_rows"] = (lambda: w(tc.gather_rows(table, [1, 3, 3, 5], padding_idx=0), r_g), [table])

        seq, kernel, bias = param((6, 3)), param((2 * 3, 4)), param((4,))
        r_c = rng.normal(size=(5, 4))
        cases["conv1d"] = (lambda: w(tc.conv1d(seq, kernel, bias, 2), r_c), [seq, kernel, bias])
        return cases

    def layer_cases(self) -> Dict[str, Tuple[Callable[[], Tensor], List[Tensor]]]:
        rng = np.random.default_rng(self.seed + 1)
        w = self._weighted
        cases: Dict[str, Tuple[Callable[[], Tensor], List[Tensor]]] = {}

        cell = LSTMCellParams.create(3, 2, rng)
        x_t = Tensor(rng.normal(size=3), requires_grad=True)
        h0 = Tensor(rng.normal(size=2), requires_grad=True)
        c0 = Tensor(rng.normal(size=2), requires_grad=True)
        r2 = rng.normal(size=2)

        def lstm() -> Tensor:
            h, c = lstm_step(cell, x_t, h0, c0)
            return w(h, r2) + w(c, r2)

        cell_params = [t for _, t in cell.named_parameters("cell")]
        cases["lstm_step"] = (lstm, [x_t, h0, c0] + cell_params)

        enc = BLSTMEncoder.create(3, 2, rng)
        seq = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        init = Tensor(rng.normal(size=2), requires_grad=True)
        r4 = rng.normal(size=4)
        cases["blstm_encode"] = (
            lambda: w(blstm_encode(enc, seq, init_fwd=init, init_bwd=init), r4),
            [seq, init] + [t for _, t in enc.named_parameters("enc")],
        )

        cnn = CNNEncoder.create(3, (2, 3), 2, rng, activation="tanh")
        cnn_seq = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
        cases["cnn_encode"] = (
            lambda: w(cnn_encode(cnn, cnn_seq), r4),
            [cnn_seq] + [t for _, t in cnn.named_parameters("cnn")],
        )
        return cases

    def run_ops(self) -> List[GradcheckResult]:
        results = []
        for name, (build, inputs) in {**self.primitive_cases(), **self.layer_cases()}.items():
            result = _check(name, build, inputs, self.tolerance)
            logger.debug("gradcheck %s: %.2e", name, result.max_rel_error)
            results.append(result)
        return results

    def run_model(self, config: Optional[ModelConfig] = None) -> List[GradcheckResult]:
        """Full loss on the toy session, one row per parameter tensor."""
        config = config or toy_config()
        dialogues = toy_dialogues()
        vocabs = build_vocabularies(dialogues)
        model = RoleContextualModel.create(config, vocabs, seed=self.seed)
        examples = build_examples(dialogues, vocabs, config)
        example = max(examples, key=lambda e: len(e.nl_history))

        def objective() -> Tensor:
            task_loss, guidance = example_loss(model, example)
            return task_loss if guidance is None else task_loss + guidance

        results = []
        for name, tensor in model.trainable_parameters():
            result = _check(f"model:{name}", objective, [tensor], self.tolerance)
            results.append(result)
        return results

    def run_all(self, include_model: bool = True) -> List[GradcheckResult]:
        results = self.run_ops()
        if include_model:
            results += self.run_model()
        failed = [r.name for r in results if not r.passed]
        if failed:
            logger.error("gradcheck failed for %s", ", ".join(failed))
        else:
            logger.info("gradcheck passed for %d checks", len(results))
        return results


def toy_config() -> ModelConfig:
    """Small NL role-split joint model with guidance; touches every head."""
    return ModelConfig(
        history_mode="natural_language",
        role_split=True,
        intermediate_guidance=True,
        hidden_dim=3,
        embedding_dim=4,
        filter_widths=(2, 3),
        filters_per_width=2,
        task="joint",
    )


def toy_dialogues() -> List[Dialogue]:
    """One four-turn session alternating tourist and guide."""
    turns = (
        Turn.from_text("tourist", "where is the museum", ["QST_WHERE"]),
        Turn.from_text("guide", "it is near the park", ["RES_INFO"]),
        Turn.from_text("tourist", "when does it open today", ["QST_WHEN", "FOL_ACK"]),
        Turn.from_text("guide", "at nine", ["RES_INFO", "FOL_CONFIRM"]),
    )
    return [Dialogue(session_id="toy", turns=turns)]


# Singleton instance
gradcheck_service = GradcheckService()
