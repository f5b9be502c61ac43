from dataclasses import replace

import numpy as np
import pytest

from spkdlg import tensor_core as tc
from spkdlg.config import ModelConfig
from spkdlg.corpus.examples import HistoryEntry, build_examples
from spkdlg.dialogue_model import (
    RoleContextualModel,
    build_params,
    encode_history_nl,
    encode_history_semantic,
    example_loss,
    forward_lu,
    guidance_loss,
    parameter_count,
    predict_labels,
    role_encoder_names,
)
from spkdlg.errors import ConfigError, ContractError, PreconditionError
from spkdlg.layers import blstm_encode, cnn_encode, dense, embed
from spkdlg.losses import multilabel_xent
from spkdlg.tensor_core import Tape, Tensor


def _model(vocabs, config, seed=0):
    return RoleContextualModel.create(config, vocabs, seed=seed)


def _richest_example(dialogues, vocabs, config):
    examples = build_examples(dialogues, vocabs, config)
    return max(examples, key=lambda e: len(e.nl_history))


def _names(model):
    return [name for name, _ in model.named_parameters()]


def test_parameter_names_follow_component_layout(toy_vocabs, tiny_config):
    pooled = _model(toy_vocabs, replace(tiny_config, history_mode="semantic"))
    split_nl = _model(toy_vocabs, replace(tiny_config, history_mode="natural_language", role_split=True))

    assert "embedding.weights" in _names(pooled)
    assert "current.fwd.W_i" in _names(pooled)
    assert "history.fwd.W_i" in _names(pooled)
    assert "W_his.W" in _names(pooled)
    assert "W_LU.b" in _names(pooled)
    assert "history.tourist.bwd.b_f" in _names(split_nl)
    assert "history.guide.fwd.W_c" in _names(split_nl)
    assert "sentence.cnn.w2.W" in _names(split_nl)
    for model in (pooled, split_nl):
        assert len(set(_names(model))) == len(_names(model))


def test_baseline_has_no_history_components(toy_vocabs, tiny_config):
    names = _names(_model(toy_vocabs, tiny_config))
    assert not any(n.startswith(("history", "W_his", "sentence", "guidance")) for n in names)


def test_role_split_adds_exactly_one_history_encoder(toy_vocabs, tiny_config):
    cfg = replace(tiny_config, history_mode="semantic")
    pooled = build_params(cfg, len(toy_vocabs.tokens), len(toy_vocabs.labels), len(toy_vocabs.actions))
    split = build_params(
        replace(cfg, role_split=True), len(toy_vocabs.tokens), len(toy_vocabs.labels), len(toy_vocabs.actions)
    )
    encoder_names = set(role_encoder_names(pooled))
    one_encoder = sum(p.size for name, p in pooled.named_parameters() if name in encoder_names)
    assert parameter_count(split) - parameter_count(pooled) == one_encoder
    assert len(role_encoder_names(split)) == 2 * len(role_encoder_names(pooled))


def test_build_params_is_deterministic(toy_vocabs, tiny_config):
    sizes = (len(toy_vocabs.tokens), len(toy_vocabs.labels), len(toy_vocabs.actions))
    a = build_params(tiny_config, *sizes, seed=3)
    b = build_params(tiny_config, *sizes, seed=3)
    for (na, ta), (nb, tb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb
        np.testing.assert_array_equal(ta.data, tb.data)


def test_empty_history_gives_zero_summary(toy_vocabs, tiny_config):
    model = _model(toy_vocabs, replace(tiny_config, history_mode="semantic", role_split=True))
    v_his = encode_history_semantic(model.params, (), role_split=True)
    np.testing.assert_array_equal(v_his.data, np.zeros(2 * tiny_config.hidden_dim))


def test_single_role_history_equals_that_roles_encoder(toy_vocabs, tiny_config):
    model = _model(toy_vocabs, replace(tiny_config, history_mode="semantic", role_split=True))
    labels = toy_vocabs.labels
    history = (
        HistoryEntry("guide", labels.multi_hot(["RES_INFO"])),
        HistoryEntry("guide", labels.multi_hot(["FOL_ACK"])),
    )
    v_his = encode_history_semantic(model.params, history, role_split=True)
    expected = blstm_encode(model.params.history["guide"], Tensor(np.stack([e.payload for e in history])))
    np.testing.assert_allclose(v_his.data, expected.data)


def test_swapping_roles_with_their_encoders_leaves_summary_unchanged(toy_vocabs, tiny_config):
    model = _model(toy_vocabs, replace(tiny_config, history_mode="semantic", role_split=True))
    labels = toy_vocabs.labels
    history = (
        HistoryEntry("tourist", labels.multi_hot(["QST_WHERE"])),
        HistoryEntry("guide", labels.multi_hot(["RES_INFO"])),
        HistoryEntry("tourist", labels.multi_hot(["QST_WHEN", "FOL_ACK"])),
    )
    before = encode_history_semantic(model.params, history, role_split=True)

    swapped = tuple(HistoryEntry("guide" if e.role == "tourist" else "tourist", e.payload) for e in history)
    params = model.params
    params.history = {"tourist": params.history["guide"], "guide": params.history["tourist"]}
    after = encode_history_semantic(params, swapped, role_split=True)
    np.testing.assert_allclose(after.data, before.data, rtol=0, atol=1e-12)


def test_nl_history_matches_hand_composed_pipeline(toy_dialogues, toy_vocabs, tiny_config):
    cfg = replace(tiny_config, history_mode="natural_language")
    model = _model(toy_vocabs, cfg)
    example = _richest_example(toy_dialogues, toy_vocabs, cfg)
    v_his, sentences = encode_history_nl(model.params, example.nl_history, role_split=False)

    manual = [
        cnn_encode(model.params.sentence, embed(model.params.embedding, e.payload), valid_length=len(e.payload))
        for e in example.nl_history
    ]
    expected = blstm_encode(model.params.history["pooled"], tc.stack(manual))
    np.testing.assert_allclose(v_his.data, expected.data)
    assert len(sentences) == len(example.nl_history)
    assert v_his.shape == (2 * cfg.hidden_dim,)


def test_pooled_and_role_split_summaries_share_a_shape(toy_dialogues, toy_vocabs, tiny_config):
    cfg = replace(tiny_config, history_mode="natural_language")
    example = _richest_example(toy_dialogues, toy_vocabs, cfg)
    pooled = _model(toy_vocabs, cfg)
    split = _model(toy_vocabs, replace(cfg, role_split=True))
    a, _ = encode_history_nl(pooled.params, example.nl_history, role_split=False)
    b, _ = encode_history_nl(split.params, example.nl_history, role_split=True)
    assert a.shape == b.shape == (2 * cfg.hidden_dim,)


def test_payload_kind_must_match_mode(toy_dialogues, toy_vocabs, tiny_config):
    cfg = replace(tiny_config, history_mode="semantic")
    model = _model(toy_vocabs, cfg)
    example = _richest_example(toy_dialogues, toy_vocabs, cfg)
    with pytest.raises(ContractError):
        encode_history_semantic(model.params, example.nl_history, role_split=False)


def test_zero_weights_give_one_half_everywhere(toy_vocabs, tiny_config):
    model = _model(toy_vocabs, tiny_config)
    for _, p in model.named_parameters():
        p.data[...] = 0.0
    probs = forward_lu(model.params, [2, 3, 4], None)
    np.testing.assert_allclose(probs.data, np.full(len(toy_vocabs.labels), 0.5))


def test_lu_output_is_a_probability_per_label(toy_dialogues, toy_vocabs, tiny_config):
    cfg = replace(tiny_config, history_mode="natural_language", role_split=True)
    model = _model(toy_vocabs, cfg)
    example = _richest_example(toy_dialogues, toy_vocabs, cfg)
    probs = model.forward(example).lu_probs
    assert probs.shape == (len(toy_vocabs.labels),)
    assert np.all((probs.data > 0.0) & (probs.data < 1.0))


def test_empty_current_utterance_is_rejected(toy_vocabs, tiny_config):
    model = _model(toy_vocabs, tiny_config)
    with pytest.raises(PreconditionError):
        forward_lu(model.params, [], None)


def test_no_history_model_ignores_history_content(toy_dialogues, toy_vocabs, tiny_config):
    model = _model(toy_vocabs, tiny_config)
    example = _richest_example(toy_dialogues, toy_vocabs, tiny_config)
    altered = replace(
        example,
        semantic_history=(HistoryEntry("guide", np.ones(len(toy_vocabs.labels))),),
        nl_history=(HistoryEntry("guide", (1, 1, 1)),),
    )
    np.testing.assert_array_equal(model.forward(example).lu_probs.data, model.forward(altered).lu_probs.data)


def test_joint_mode_shares_one_context_vector(toy_dialogues, toy_vocabs, tiny_config):
    cfg = replace(tiny_config, history_mode="semantic", task="joint")
    model = _model(toy_vocabs, cfg)
    example = _richest_example(toy_dialogues, toy_vocabs, cfg)
    result = model.forward(example)
    np.testing.assert_allclose(result.lu_probs.data, tc.sigmoid(dense(model.params.W_LU, result.v_cur)).data)
    np.testing.assert_allclose(result.policy_probs.data, tc.sigmoid(dense(model.params.W_pi, result.v_cur)).data)
    assert result.policy_probs.shape == (len(toy_vocabs.actions),)


def test_tag_policy_input_ignores_the_words(toy_dialogues, toy_vocabs, tiny_config):
    cfg = replace(tiny_config, task="policy", policy_input="tags")
    model = _model(toy_vocabs, cfg)
    example = _richest_example(toy_dialogues, toy_vocabs, cfg)
    reworded = replace(example, token_ids=(1, 1))
    a = model.forward(example).policy_probs
    b = model.forward(reworded).policy_probs
    np.testing.assert_array_equal(a.data, b.data)
    assert "W_tag.W" in _names(model)


def test_tags_input_requires_policy_task(tiny_config):
    with pytest.raises(ConfigError):
        replace(tiny_config, policy_input="tags").validate()


def test_guidance_requires_natural_language_history(tiny_config):
    with pytest.raises(ConfigError):
        replace(tiny_config, history_mode="semantic", intermediate_guidance=True).validate()


def test_alternative_encoders_build_and_run(toy_dialogues, toy_vocabs, tiny_config):
    cfg = replace(
        tiny_config, history_mode="natural_language", sentence_encoder="blstm", conditioning="concat_input"
    )
    model = _model(toy_vocabs, cfg)
    assert "sentence.blstm.fwd.W_i" in _names(model)
    example = _richest_example(toy_dialogues, toy_vocabs, cfg)
    assert model.forward(example).lu_probs.shape == (len(toy_vocabs.labels),)


def test_predict_labels_uses_strict_threshold():
    assert predict_labels(np.array([0.7, 0.2, 0.51]), 0.5) == {0, 2}
    assert predict_labels(np.array([0.9, 0.1]), 0.5) == {0}
    assert predict_labels(np.array([0.1, 0.2]), 0.5) == frozenset()
    assert predict_labels(np.array([0.5, 0.6]), 0.5) == {1}
    with pytest.raises(PreconditionError):
        predict_labels(np.array([0.5]), 1.0)


def test_guidance_loss_edge_cases(toy_vocabs, tiny_config):
    cfg = replace(tiny_config, history_mode="natural_language", intermediate_guidance=True)
    model = _model(toy_vocabs, cfg)
    assert guidance_loss(model.params, [], []).item() == 0.0
    with pytest.raises(ContractError):
        guidance_loss(model.params, [Tensor(np.ones(6))], None)


def test_guidance_loss_is_non_negative_and_only_at_training(toy_dialogues, toy_vocabs, tiny_config):
    cfg = replace(tiny_config, history_mode="natural_language", role_split=True, intermediate_guidance=True)
    model = _model(toy_vocabs, cfg)
    example = _richest_example(toy_dialogues, toy_vocabs, cfg)
    assert model.forward(example).guidance_loss is None
    train_result = model.forward(example, train=True)
    assert train_result.guidance_loss.item() >= 0.0


def test_guidance_term_gives_no_gradient_to_heads(toy_dialogues, toy_vocabs, tiny_config):
    cfg = replace(tiny_config, history_mode="natural_language", role_split=True, intermediate_guidance=True)
    model = _model(toy_vocabs, cfg)
    example = _richest_example(toy_dialogues, toy_vocabs, cfg)
    tc.zero_grad(p for _, p in model.named_parameters())
    with Tape() as tape:
        result = model.forward(example, train=True)
    tc.backward(result.guidance_loss, tape)
    assert model.params.W_LU.W.grad is None
    assert model.params.guidance.W.grad is not None
    assert model.params.sentence.filters[0][0].grad is not None


def test_guidance_off_leaves_task_loss_unchanged(toy_dialogues, toy_vocabs, tiny_config):
    cfg = replace(tiny_config, history_mode="natural_language", role_split=True)
    guided = _model(toy_vocabs, replace(cfg, intermediate_guidance=True))
    plain = _model(toy_vocabs, cfg)
    source = dict(guided.named_parameters())
    for name, p in plain.named_parameters():
        p.data[...] = source[name].data
    example = _richest_example(toy_dialogues, toy_vocabs, cfg)

    guided_task, guided_extra = example_loss(guided, example)
    plain_task, plain_extra = example_loss(plain, example)
    assert plain_extra is None
    assert guided_extra is not None
    assert guided_task.item() == plain_task.item()


def test_example_loss_matches_direct_cross_entropy(toy_dialogues, toy_vocabs, tiny_config):
    model = _model(toy_vocabs, tiny_config)
    example = _richest_example(toy_dialogues, toy_vocabs, tiny_config)
    task_loss, extra = example_loss(model, example)
    expected = multilabel_xent(model.forward(example).lu_probs, example.lu_target)
    assert extra is None
    assert task_loss.item() == pytest.approx(expected.item())


def test_predict_returns_label_names(toy_dialogues, toy_vocabs, tiny_config):
    model = _model(toy_vocabs, replace(tiny_config, task="joint"))
    example = _richest_example(toy_dialogues, toy_vocabs, tiny_config)
    out = model.predict(example)
    assert set(out) == {"lu", "policy"}
    assert out["lu"] <= set(toy_vocabs.labels)
    assert out["policy"] <= set(toy_vocabs.actions)


def test_default_config_matches_published_setup():
    cfg = ModelConfig()
    assert (cfg.hidden_dim, cfg.embedding_dim, cfg.filter_widths, cfg.filters_per_width) == (128, 200, (2, 3, 4), 128)
    assert cfg.threshold == 0.5 and cfg.history_window == 5
