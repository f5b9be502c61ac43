"""End-to-end directional checks on synthetic data. Slow: run with `pytest -m slow`."""

from dataclasses import replace

import numpy as np
import pytest

from spkdlg import tensor_core as tc
from spkdlg.config import ModelConfig, TrainConfig
from spkdlg.corpus.examples import build_examples
from spkdlg.corpus.synthetic import DEFAULT_LABELS, SynthSpec, generate_synthetic, homogeneity_test
from spkdlg.corpus.vocab import build_vocabularies
from spkdlg.dialogue_model import RoleContextualModel
from spkdlg.services.evaluation_service import evaluation_service
from spkdlg.tensor_core import Tape, Tensor
from spkdlg.training import AdamState, Trainer, adam_step, compare_configurations, table_configurations

pytestmark = pytest.mark.slow

BASE = ModelConfig(hidden_dim=16, embedding_dim=16, filter_widths=(2, 3), filters_per_width=8)
TRAIN = TrainConfig(epochs=12, batch_size=16, learning_rate=5e-3, split_seed=0)
SEEDS = [0, 1, 2, 3, 4]
CONTEXTUAL = ["semantic", "semantic+role", "nl", "nl+role"]


def _lu_scores(dialogues, names):
    configs = table_configurations("lu", BASE)
    rows = compare_configurations(dialogues, {n: configs[n] for n in names}, seeds=SEEDS, train_config=TRAIN)
    scores = {n: [] for n in names}
    curves = {n: [] for n in names}
    for row in rows:
        scores[row.configuration].append(row.test_lu_f1)
        curves[row.configuration].append(row.guidance_losses)
    return {n: np.array(v) for n, v in scores.items()}, curves


@pytest.fixture(scope="module")
def divergent_runs():
    dialogues = generate_synthetic(SynthSpec(sessions=200, delta=1.0, seed=0)).dialogues
    return _lu_scores(dialogues, ["baseline"] + CONTEXTUAL + ["nl+role+guidance"])


@pytest.fixture(scope="module")
def shared_runs():
    dialogues = generate_synthetic(SynthSpec(sessions=200, delta=0.0, seed=0)).dialogues
    return _lu_scores(dialogues, CONTEXTUAL)


def test_adam_drives_scalar_quadratic_to_zero():
    w = Tensor([1.0], requires_grad=True)
    state = AdamState(learning_rate=0.01)
    for _ in range(500):
        w.grad = None
        with Tape() as tape:
            loss = tc.sum(tc.mul(w, w))
        tc.backward(loss, tape)
        adam_step(state, [("w", w)])
    assert abs(w.data[0]) < 1e-3


def test_shared_dynamics_pass_homogeneity_at_scale():
    corpus = generate_synthetic(SynthSpec(sessions=834, turns_per_session=12, delta=0.0, seed=5))
    _, p_value = homogeneity_test(corpus.dialogues, DEFAULT_LABELS)
    assert p_value > 1e-3


@pytest.mark.parametrize("name", ["baseline", "semantic", "semantic+role", "nl", "nl+role", "nl+role+guidance"])
def test_every_configuration_overfits_ten_sessions(name):
    dialogues = generate_synthetic(SynthSpec(sessions=10, seed=8, min_words=4)).dialogues
    vocabs = build_vocabularies(dialogues)
    config = table_configurations("lu", BASE)[name]
    examples = build_examples(dialogues, vocabs, config)
    model = RoleContextualModel.create(config, vocabs, seed=0)
    trainer = Trainer(model, replace(TRAIN, learning_rate=1e-2))
    f1 = 0.0
    for epoch in range(1, 301):
        trainer.run_epoch(examples)
        if epoch % 10 == 0:
            f1 = evaluation_service.evaluate_examples(model, examples, "lu").f1
            if f1 >= 0.99:
                break
    assert f1 >= 0.99


@pytest.mark.parametrize("pooled, split", [("semantic", "semantic+role"), ("nl", "nl+role")])
def test_role_split_beats_pooled_history_when_roles_differ(divergent_runs, pooled, split):
    scores, _ = divergent_runs
    gain = scores[split] - scores[pooled]
    assert gain.mean() >= 0.03
    assert int((gain > 0).sum()) >= 4


@pytest.mark.parametrize("pooled, split", [("semantic", "semantic+role"), ("nl", "nl+role")])
def test_role_split_is_neutral_when_roles_share_dynamics(shared_runs, pooled, split):
    scores, _ = shared_runs
    assert abs((scores[split] - scores[pooled]).mean()) <= 0.02


@pytest.mark.parametrize("name", CONTEXTUAL)
def test_history_beats_no_history_baseline(divergent_runs, name):
    scores, _ = divergent_runs
    assert scores[name].mean() - scores["baseline"].mean() >= 0.05


def test_guidance_helps_and_its_loss_falls_for_ten_epochs(divergent_runs):
    scores, curves = divergent_runs
    assert scores["nl+role+guidance"].mean() >= scores["nl+role"].mean()
    monotone = [all(b < a for a, b in zip(curve[:10], curve[1:10])) for curve in curves["nl+role+guidance"]]
    assert sum(monotone) >= 4
