"""
Command-line surface: train, evaluate, predict, gradcheck, synth, tune-threshold, compare.

Exit status: 0 success, 1 runtime failure (bad data, missing file, failed
gradcheck), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from spkdlg.analytics_engine import (
    analyze_report,
    comparison_frame,
    generate_report_text,
    generate_training_summary,
    label_breakdown,
    render_table,
    summarize_comparison,
    write_tsv,
)
from spkdlg.checkpoint import load_checkpoint
from spkdlg.config import MODE_ALIASES, ModelConfig, TrainConfig, load_settings
from spkdlg.corpus.dialogues import Dialogue, load_corpus, split_sessions
from spkdlg.corpus.embeddings import load_embeddings
from spkdlg.corpus.examples import Example, build_examples
from spkdlg.corpus.synthetic import (
    SynthSpec,
    generate_synthetic,
    homogeneity_test,
    oracle_accuracy,
    role_transition_divergence,
    save_synthetic,
)
from spkdlg.corpus.vocab import build_vocabularies
from spkdlg.dialogue_model import RoleContextualModel
from spkdlg.errors import ConfigError, SpkDlgError
from spkdlg.services.evaluation_service import evaluation_service
from spkdlg.services.gradcheck_service import GradcheckService
from spkdlg.training import (
    METRIC_LOG_COLUMNS,
    Trainer,
    compare_configurations,
    format_metric_line,
    table_configurations,
    write_metric_log,
)

logger = logging.getLogger(__name__)

DEFAULT_SYNTH_DIR = Path("data") / "synth"
DEFAULT_CORPUS = DEFAULT_SYNTH_DIR / "corpus.jsonl"
DEFAULT_RUN_DIR = Path("runs") / "latest"
SPLITS = ("train", "dev", "test", "all")


# ---------------------------------------------------------------- helpers


def compute_input_hash(paths: Sequence[Path], configs: Sequence[Dict[str, Any]]) -> str:
    """sha256 over each input file's bytes followed by the canonical JSON of each config."""
    digest = hashlib.sha256()
    for path in paths:
        with open(path, "rb") as f:
            for chunk in iter(lambda: f.read(1 << 20), b""):
                digest.update(chunk)
    for config in configs:
        digest.update(json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8"))
    return digest.hexdigest()


def _history_window(raw: str) -> Optional[int]:
    if raw.lower() == "all":
        return None
    try:
        value = int(raw)
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected a positive integer or 'all', got {raw!r}") from e
    if value < 1:
        raise argparse.ArgumentTypeError("history window must be >= 1")
    return value


def _model_config(args: argparse.Namespace) -> ModelConfig:
    return ModelConfig(
        history_mode=MODE_ALIASES[args.mode],
        role_split=args.role_split,
        intermediate_guidance=args.guidance,
        history_window=args.history_window,
        threshold=args.threshold,
        hidden_dim=args.hidden_dim,
        embedding_dim=args.embedding_dim,
        filters_per_width=args.filters,
        sentence_encoder=args.sentence_encoder,
        conditioning=args.conditioning,
        task=args.task,
        policy_input=args.policy_input,
        trainable_embeddings=not args.freeze_embeddings,
    ).validate()


def _train_config(args: argparse.Namespace) -> TrainConfig:
    return TrainConfig(
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
        early_stop=args.early_stop,
        patience=args.patience,
        learning_rate=args.lr,
        clip_norm=None if args.clip_norm <= 0 else args.clip_norm,
        padding=args.padding,
        split_seed=args.split_seed,
        min_token_freq=args.min_token_freq,
    ).validate()


def _select_split(dialogues: List[Dialogue], split: str, train_config: TrainConfig) -> List[Dialogue]:
    if split == "all":
        return dialogues
    train, dev, test = split_sessions(dialogues, train_config.split_seed, train_config.split_fractions)
    return {"train": train, "dev": dev, "test": test}[split]


def _load_model(args: argparse.Namespace) -> Tuple[RoleContextualModel, TrainConfig]:
    model, metadata = load_checkpoint(args.checkpoint)
    train_config = TrainConfig.from_dict(metadata["train_config"]) if "train_config" in metadata else TrainConfig()
    return model, train_config


def _eval_examples(args: argparse.Namespace) -> Tuple[RoleContextualModel, List[Example]]:
    model, train_config = _load_model(args)
    dialogues = _select_split(load_corpus(args.corpus), args.split, train_config)
    return model, build_examples(dialogues, model.vocabs, model.config)


def _tasks_for(model: RoleContextualModel, requested: Optional[str]) -> List[str]:
    if requested:
        return [requested]
    return ["lu", "policy"] if model.config.task == "joint" else [model.config.task]


# ---------------------------------------------------------------- commands


def cmd_train(args: argparse.Namespace) -> int:
    from db.database import finish_run, record_epoch, record_run

    settings = load_settings()
    model_config = _model_config(args)
    train_config = _train_config(args)

    dialogues = load_corpus(args.corpus)
    if not dialogues:
        raise SpkDlgError(f"{args.corpus}: corpus is empty")
    train_d, dev_d, test_d = split_sessions(dialogues, train_config.split_seed, train_config.split_fractions)
    vocabs = build_vocabularies(train_d, train_config.min_token_freq)

    inputs = [Path(args.corpus)] + ([Path(args.embeddings)] if args.embeddings else [])
    input_hash = compute_input_hash(inputs, [model_config.to_dict(), train_config.to_dict()])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "model_config": model_config.to_dict(),
        "train_config": train_config.to_dict(),
        "corpus": str(args.corpus),
        "embeddings": str(args.embeddings) if args.embeddings else None,
        "split_seed": train_config.split_seed,
        "split_sessions": {
            "train": [d.session_id for d in train_d],
            "dev": [d.session_id for d in dev_d],
            "test": [d.session_id for d in test_d],
        },
        "input_hash": input_hash,
        "out_dir": str(out),
    }
    with open(out / "manifest.json", "w", encoding="utf-8", newline="\n") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")

    run_id = f"{input_hash[:12]}-{datetime.datetime.now().strftime('%Y%m%d%H%M%S%f')}"
    record_run(run_id, manifest, input_hash, str(out))

    embedding = None
    if args.embeddings:
        embedding, _ = load_embeddings(
            args.embeddings,
            vocabs.tokens,
            dim=model_config.embedding_dim,
            rng=np.random.default_rng(train_config.seed),
            trainable=model_config.trainable_embeddings,
        )
    model = RoleContextualModel.create(model_config, vocabs, seed=train_config.seed, embedding=embedding)
    train_x = build_examples(train_d, vocabs, model_config)
    dev_x = build_examples(dev_d, vocabs, model_config)

    log_path = write_metric_log(out / "metrics.tsv", [])

    def on_epoch(record) -> None:
        with open(log_path, "a", encoding="utf-8", newline="\n") as f:
            f.write(format_metric_line(record) + "\n")
        record_epoch(run_id, record)

    try:
        result = Trainer(model, train_config, on_epoch=on_epoch, threads=settings.threads).train(
            train_x,
            dev_x,
            checkpoint_path=out / "model.ckpt",
            checkpoint_metadata={"train_config": train_config.to_dict(), "input_hash": input_hash},
        )
    except Exception:
        finish_run(run_id, status="failed")
        raise
    finish_run(run_id)
    sys.stdout.write(generate_training_summary(result.records, result.best_epoch))
    print(f"checkpoint: {out / 'model.ckpt'}")
    print(f"metric log: {log_path}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    from db.database import save_evaluation_result

    model, examples = _eval_examples(args)
    settings = load_settings()
    out = Path(args.out) if args.out else None
    for task in _tasks_for(model, args.task):
        report = evaluation_service.evaluate_examples(
            model, examples, task, threshold=args.threshold, threads=settings.threads
        )
        text = generate_report_text(analyze_report(report), title=f"{task} on {args.split} split")
        sys.stdout.write(text)
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            with open(out / f"report_{task}.txt", "w", encoding="utf-8", newline="\n") as f:
                f.write(text)
            write_tsv(label_breakdown(report), out / f"report_{task}.tsv")
        save_evaluation_result(
            str(args.checkpoint), task, args.split, report.f1, report.threshold, report.n_utterances
        )
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    model, examples = _eval_examples(args)
    lines = []
    for example in examples:
        labels = model.predict(example, threshold=args.threshold)
        record = {"session": example.session_id, "turn": example.turn_index}
        record.update({task: sorted(values) for task, values in labels.items()})
        lines.append(json.dumps(record, ensure_ascii=False))
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "predictions.jsonl", "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    service = GradcheckService(seed=args.seed, tolerance=args.tolerance)
    results = service.run_all(include_model=not args.ops_only)
    width = max(len(r.name) for r in results)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  {r.max_rel_error:.3e}  {status}")
    failed = sum(1 for r in results if not r.passed)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 1


def cmd_synth(args: argparse.Namespace) -> int:
    spec = SynthSpec(
        sessions=args.sessions,
        turns_per_session=args.turns,
        delta=args.delta,
        vocab_size=args.vocab_size,
        seed=args.seed,
        lexical_ambiguity=args.lexical_ambiguity,
        companion_rate=args.companion_rate,
        switch_prob=args.switch_prob,
    ).validate()
    corpus = generate_synthetic(spec)
    path = Path(args.out) / "corpus.jsonl"
    tables_path = save_synthetic(corpus, path)
    labels = corpus.tables.labels
    statistic, p_value = homogeneity_test(corpus.dialogues, labels)
    print(f"corpus: {path}")
    print(f"tables: {tables_path}")
    print(f"role divergence (TV): {role_transition_divergence(corpus.dialogues, labels):.4f}")
    print(f"homogeneity chi2: {statistic:.2f} (p={p_value:.4g})")
    print(f"oracle accuracy role-aware: {oracle_accuracy(corpus.dialogues, corpus.tables, role_aware=True):.4f}")
    print(f"oracle accuracy pooled:     {oracle_accuracy(corpus.dialogues, corpus.tables, role_aware=False):.4f}")
    return 0


def cmd_tune_threshold(args: argparse.Namespace) -> int:
    model, examples = _eval_examples(args)
    for task in _tasks_for(model, args.task):
        theta, f1 = evaluation_service.tune_model_threshold(model, examples, task)
        default = evaluation_service.evaluate_examples(model, examples, task, threshold=model.config.threshold).f1
        print(f"{task}: best threshold {theta:.2f} (F1 {f1:.4f}; default {model.config.threshold:.2f} gives {default:.4f})")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    base = _model_config(args)
    train_config = _train_config(args)
    seeds = list(range(args.seed, args.seed + args.runs))
    dialogues = load_corpus(args.corpus)
    rows = compare_configurations(
        dialogues, table_configurations(args.task, base), seeds, train_config, threads=load_settings().threads
    )
    out = Path(args.out)
    runs = comparison_frame(rows)
    summary = summarize_comparison(runs)
    write_tsv(runs, out / "comparison_runs.tsv")
    write_tsv(summary, out / "comparison.tsv")
    text = render_table(summary) + "\n"
    with open(out / "comparison.txt", "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------- parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR (default SPKDLG_LOG_LEVEL)")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=sorted(MODE_ALIASES), default="none")
    p.add_argument("--role-split", action="store_true")
    p.add_argument("--guidance", action="store_true")
    p.add_argument("--history-window", type=_history_window, default=5, metavar="N")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--task", choices=("lu", "policy", "joint"), default="lu")
    p.add_argument("--hidden-dim", type=int, default=128)
    p.add_argument("--embedding-dim", type=int, default=200)
    p.add_argument("--filters", type=int, default=128, help="filters per CNN width")
    p.add_argument("--sentence-encoder", choices=("cnn", "blstm"), default="cnn")
    p.add_argument("--conditioning", choices=("init_state", "concat_input"), default="init_state")
    p.add_argument("--policy-input", choices=("words", "tags"), default="words")
    p.add_argument("--freeze-embeddings", action="store_true")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--clip-norm", type=float, default=5.0, help="<= 0 disables clipping")
    p.add_argument("--padding", choices=("masked", "zeros"), default="masked")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--min-token-freq", type=int, default=1)
    p.add_argument("--early-stop", action="store_true")
    p.add_argument("--patience", type=int, default=3)


def _add_eval_flags(p: argparse.ArgumentParser, default_split: str) -> None:
    p.add_argument("--checkpoint", type=Path, default=DEFAULT_RUN_DIR / "model.ckpt")
    p.add_argument("--corpus", type=Path, default=DEFAULT_CORPUS)
    p.add_argument("--split", choices=SPLITS, default=default_split)
    p.add_argument("--task", choices=("lu", "policy"), default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spkdlg", description="Role-based contextual dialogue models")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "train",
        help="train a model and write checkpoint, metric log and manifest",
        epilog="metrics.tsv holds one tab-separated line per epoch with columns "
        + ", ".join(METRIC_LOG_COLUMNS)
        + "; '-' marks a metric the run does not produce.",
    )
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--corpus", type=Path, default=DEFAULT_CORPUS)
    p.add_argument("--embeddings", type=Path, default=None)
    p.add_argument("--out", type=Path, default=DEFAULT_RUN_DIR)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="average F1 report per task")
    _add_eval_flags(p, "test")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--out", type=Path, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="per-utterance label sets as JSON lines")
    _add_eval_flags(p, "all")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--out", type=Path, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and the full loss")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--ops-only", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="generate a synthetic role-divergent corpus")
    p.add_argument("--sessions", type=int, default=200)
    p.add_argument("--turns", type=int, default=12)
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--vocab-size", type=int, default=120)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lexical-ambiguity", type=float, default=SynthSpec.lexical_ambiguity)
    p.add_argument("--companion-rate", type=float, default=SynthSpec.companion_rate)
    p.add_argument("--switch-prob", type=float, default=SynthSpec.switch_prob)
    p.add_argument("--out", type=Path, default=DEFAULT_SYNTH_DIR)
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("tune-threshold", help="best threshold on the dev split")
    _add_eval_flags(p, "dev")
    _add_common(p)
    p.set_defaults(func=cmd_tune_threshold)

    p = sub.add_parser("compare", help="train the six standard configurations over several seeds")
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--runs", type=int, default=5, help="number of seeds, starting at --seed")
    p.add_argument("--corpus", type=Path, default=DEFAULT_CORPUS)
    p.add_argument("--out", type=Path, default=Path("runs") / "compare")
    _add_common(p)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    level = (args.log_level or load_settings().log_level).upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e.filename}: no such file", file=sys.stderr)
        return 1
    except SpkDlgError as e:
        logger.error("%s failed: %s", args.command, e)
        print(f"error: {e}", file=sys.stderr)
        return 1
