from dataclasses import replace

import numpy as np
import pytest

from spkdlg.services.gradcheck_service import (
    GradcheckService,
    relative_error,
    toy_config,
    toy_dialogues,
)


def test_relative_error_is_zero_for_matching_or_vanishing_gradients():
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.array([1.0]), np.array([-1.0])) == pytest.approx(1.0)


def test_every_primitive_and_layer_passes():
    results = GradcheckService(seed=0).run_ops()
    names = {r.name for r in results}
    assert {"matmul", "conv1d", "max_over_time", "gather_rows", "lstm_step", "blstm_encode", "cnn_encode"} <= names
    failures = [(r.name, r.max_rel_error) for r in results if not r.passed]
    assert failures == []


def test_full_model_gradients_match_finite_differences():
    results = GradcheckService(seed=0).run_model()
    assert results
    assert all(r.name.startswith("model:") for r in results)
    assert {"model:W_LU.W", "model:W_pi.W", "model:guidance.W", "model:history.guide.fwd.W_i"} <= {
        r.name for r in results
    }
    failures = [(r.name, r.max_rel_error) for r in results if not r.passed]
    assert failures == []


def test_semantic_model_gradients_match_finite_differences():
    config = replace(toy_config(), history_mode="semantic", intermediate_guidance=False, task="lu")
    results = GradcheckService(seed=1).run_model(config)
    assert all(r.passed for r in results)


def test_toy_session_alternates_roles():
    (dialogue,) = toy_dialogues()
    assert [t.speaker for t in dialogue.turns] == ["tourist", "guide", "tourist", "guide"]
