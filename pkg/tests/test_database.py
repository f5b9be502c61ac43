from spkdlg.training import EpochRecord


def test_run_lifecycle_is_recorded(registry):
    run = registry.record_run("abc-1", {"config": {"task": "lu"}}, "abc", "/tmp/out")
    assert run is not None and run.status == "running"

    assert registry.record_epoch("abc-1", EpochRecord(1, 0.9, 0.0, 0.4, None))
    assert registry.record_epoch("abc-1", EpochRecord(2, 0.7, 0.0, 0.5, None))
    assert registry.finish_run("abc-1")

    (history,) = registry.get_run_history("abc-1")
    assert history["status"] == "finished"
    assert history["manifest"] == {"config": {"task": "lu"}}
    assert [e["epoch"] for e in history["epochs"]] == [1, 2]
    assert history["epochs"][0]["dev_policy_f1"] is None


def test_history_lists_newest_first(registry):
    registry.record_run("first", {}, "h1", "a")
    registry.record_run("second", {}, "h2", "b")
    assert [r["run_id"] for r in registry.get_run_history()] == ["second", "first"]


def test_duplicate_run_id_is_logged_not_raised(registry):
    assert registry.record_run("dup", {}, "h", "a") is not None
    assert registry.record_run("dup", {}, "h", "a") is None


def test_finishing_unknown_run_returns_false(registry):
    assert registry.finish_run("nope") is False


def test_evaluation_results_are_stored(registry):
    result = registry.save_evaluation_result("m.ckpt", "lu", "test", 0.75, 0.5, 12)
    assert result is not None
    db = next(registry.get_db())
    try:
        stored = db.query(registry.EvaluationResult).one()
        assert (stored.task, stored.split, stored.f1, stored.n_utterances) == ("lu", "test", 0.75, 12)
        assert stored.run_id is None
    finally:
        db.close()
