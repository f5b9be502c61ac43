"""
Analytics Engine - run reports.

Epoch logs, evaluation reports and multi-seed comparisons as pandas DataFrames,
rendered as a fixed-width text table or written as TSV.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.6f"


def epoch_frame(records: Sequence[Any]) -> pd.DataFrame:
    """One row per EpochRecord."""
    columns = ["epoch", "train_loss", "guidance_loss", "dev_lu_f1", "dev_policy_f1"]
    return pd.DataFrame([{c: getattr(r, c) for c in columns} for r in records], columns=columns)


def comparison_frame(rows: Sequence[Any]) -> pd.DataFrame:
    columns = ["configuration", "seed", "test_lu_f1", "test_policy_f1", "final_train_loss"]
    return pd.DataFrame([{c: getattr(r, c) for c in columns} for r in rows], columns=columns)


def summarize_comparison(rows: Union[Sequence[Any], pd.DataFrame], baseline: str = "baseline") -> pd.DataFrame:
    """
    Mean and standard deviation of test F1 per configuration (over seeds), plus
    the relative improvement of each mean over the baseline mean, in percent.
    Configurations keep their first-seen order.
    """
    df = rows if isinstance(rows, pd.DataFrame) else comparison_frame(rows)
    if df.empty:
        return pd.DataFrame(columns=["configuration", "runs"])
    order = list(dict.fromkeys(df["configuration"]))
    summary = pd.DataFrame({"configuration": order})
    grouped = df.groupby("configuration", sort=False)
    summary["runs"] = [int(grouped.size()[c]) for c in order]

    for metric, label in (("test_lu_f1", "lu"), ("test_policy_f1", "policy")):
        if df[metric].isna().all():
            continue
        means = grouped[metric].mean()
        # ddof=0: a single run reports 0 rather than NaN
        stds = grouped[metric].std(ddof=0)
        summary[f"{label}_f1_mean"] = [means[c] for c in order]
        summary[f"{label}_f1_std"] = [stds[c] for c in order]
        if baseline in means.index and means[baseline] and not np.isnan(means[baseline]):
            base = means[baseline]
            summary[f"{label}_rel_improvement_pct"] = [100.0 * (means[c] - base) / base for c in order]
    return summary


def label_breakdown(report: Any) -> pd.DataFrame:
    """Per-label support, precision, recall and F1 over an EvaluationReport's predictions."""
    stats: Dict[str, Dict[str, int]] = {}
    for p in report.predictions:
        for label in set(p.predicted) | set(p.gold):
            s = stats.setdefault(label, {"tp": 0, "fp": 0, "fn": 0})
            if label in p.predicted and label in p.gold:
                s["tp"] += 1
            elif label in p.predicted:
                s["fp"] += 1
            else:
                s["fn"] += 1
    rows = []
    for label in sorted(stats):
        s = stats[label]
        precision = s["tp"] / (s["tp"] + s["fp"]) if s["tp"] + s["fp"] else 0.0
        recall = s["tp"] / (s["tp"] + s["fn"]) if s["tp"] + s["fn"] else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        rows.append(
            {"label": label, "support": s["tp"] + s["fn"], "precision": precision, "recall": recall, "f1": f1}
        )
    return pd.DataFrame(rows, columns=["label", "support", "precision", "recall", "f1"])


def analyze_report(report: Any) -> Dict[str, Any]:
    """Headline numbers and the weakest supported label of an evaluation."""
    breakdown = label_breakdown(report)
    supported = breakdown[breakdown["support"] > 0]
    weakest = None
    if not supported.empty:
        row = supported.sort_values(["f1", "label"]).iloc[0]
        weakest = {"label": row["label"], "f1": float(row["f1"]), "support": int(row["support"])}
    empty_predictions = sum(1 for p in report.predictions if not p.predicted)
    return {
        "task": report.task,
        "f1": report.f1,
        "threshold": report.threshold,
        "utterances": report.n_utterances,
        "empty_predictions": empty_predictions,
        "weakest_label": weakest,
        "breakdown": breakdown,
    }


def render_table(df: pd.DataFrame) -> str:
    if df.empty:
        return "(no rows)"
    return df.to_string(index=False, float_format=lambda v: f"{v:.4f}", na_rep="-")


def write_tsv(df: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, sep="\t", index=False, float_format=FLOAT_FORMAT, na_rep="-", lineterminator="\n")
    logger.info("Wrote %s (%d rows)", path, len(df))
    return path


def generate_report_text(analysis: Dict[str, Any], title: Optional[str] = None) -> str:
    """Plain-text evaluation report."""
    lines: List[str] = []
    lines.append(title or f"Evaluation report ({analysis['task']})")
    lines.append("=" * len(lines[0]))
    lines.append(f"utterances:        {analysis['utterances']}")
    lines.append(f"threshold:         {analysis['threshold']:.2f}")
    lines.append(f"average F1:        {analysis['f1']:.4f}")
    lines.append(f"empty predictions: {analysis['empty_predictions']}")
    weakest = analysis.get("weakest_label")
    if weakest:
        lines.append(f"weakest label:     {weakest['label']} (F1 {weakest['f1']:.4f}, support {weakest['support']})")
    lines.append("")
    lines.append(render_table(analysis["breakdown"]))
    return "\n".join(lines) + "\n"


def generate_training_summary(records: Sequence[Any], best_epoch: int) -> str:
    """Epoch table of a finished run with its best epoch and final losses."""
    frame = epoch_frame(records).dropna(axis=1, how="all")
    if frame.empty:
        return "(no epochs)\n"
    last = frame.iloc[-1]
    lines = [
        f"epochs run:        {len(frame)}",
        f"best epoch:        {best_epoch}",
        f"final train loss:  {last['train_loss']:.4f}",
    ]
    if frame["guidance_loss"].any():
        lines.append(f"final guidance:    {last['guidance_loss']:.4f}")
    lines.append("")
    lines.append(render_table(frame))
    return "\n".join(lines) + "\n"
