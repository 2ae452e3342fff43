"""Scoring reports: confusion counts, F1, detection expansion, PR curves,
hop-neighborhood statistics, and a side-by-side model comparison table."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .features import LabeledDataset, Split, Tag
from .graph import DeviceSharingGraph, _bfs_distances


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(
    scores: Mapping[int, float], labels: Mapping[int, bool], threshold: float
) -> ConfusionCounts:
    """Counts with 'predicted positive' meaning score >= threshold."""
    if set(scores) != set(labels):
        only_s = sorted(set(scores) - set(labels))[:5]
        only_l = sorted(set(labels) - set(scores))[:5]
        raise ValueError(f"scores and labels cover different accounts (extra scores {only_s}, extra labels {only_l})")
    tp = fp = tn = fn = 0
    for key, score in scores.items():
        predicted = score >= threshold
        if predicted and labels[key]:
            tp += 1
        elif predicted:
            fp += 1
        elif labels[key]:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp, fp, tn, fn)


def precision(counts: ConfusionCounts) -> float:
    if counts.tp + counts.fp == 0:
        return 0.0
    return counts.tp / (counts.tp + counts.fp)


def recall(counts: ConfusionCounts) -> float:
    if counts.tp + counts.fn == 0:
        return 0.0
    return counts.tp / (counts.tp + counts.fn)


def f1(counts: ConfusionCounts) -> float:
    """Harmonic mean of precision and recall; 0 when either is undefined."""
    p = precision(counts)
    r = recall(counts)
    if p + r == 0.0:
        return 0.0
    return 2.0 * p * r / (p + r)


def detection_expansion(counts: ConfusionCounts) -> float:
    """(fp + tp + fn) / (tp + fn): how far flagged accounts expand the labeled set.

    Always >= 1, with equality exactly when nothing beyond the labeled
    positives is flagged.
    """
    denom = counts.tp + counts.fn
    if denom == 0:
        raise ValueError("detection expansion undefined: no positive labels")
    return (counts.fp + counts.tp + counts.fn) / denom


def pr_curve(
    scores: Mapping[int, float], labels: Mapping[int, bool]
) -> list[tuple[float, float, float]]:
    """(threshold, precision, recall) at every distinct score, descending."""
    if not any(labels.values()):
        raise ValueError("PR curve needs at least one positive label")
    keys = sorted(scores)
    s = np.array([scores[k] for k in keys])
    y = np.array([labels[k] for k in keys], dtype=bool)
    order = np.argsort(-s, kind="stable")
    s = s[order]
    y = y[order]
    tp_cum = np.cumsum(y)
    n_pos = int(y.sum())
    # index of the last element in each block of equal scores
    block_ends = np.flatnonzero(np.concatenate([s[1:] < s[:-1], [True]]))
    return [
        (float(s[e]), int(tp_cum[e]) / (int(e) + 1), int(tp_cum[e]) / n_pos)
        for e in block_ends
    ]


def best_f1_threshold(
    scores: Mapping[int, float], labels: Mapping[int, bool]
) -> tuple[float, float]:
    """Distinct score value maximizing F1; ties go to the highest threshold."""
    best: tuple[float, float] | None = None
    for threshold in sorted({float(v) for v in scores.values()}, reverse=True):
        value = f1(confusion(scores, labels, threshold))
        if best is None or value > best[1]:
            best = (threshold, value)
    if best is None:
        raise ValueError("no scores to threshold")
    return best


@dataclass
class ModelRow:
    model: str
    threshold: float
    precision: float
    recall: float
    f1: float
    detection_expansion: float


@dataclass
class EvalReport:
    rows: list[ModelRow]
    pr_curves: dict[str, list[tuple[float, float, float]]]
    hop_stats: dict[int, tuple[float, float]] = field(default_factory=dict)
    label_source: str = "tags"


def evaluation_labels(
    ds: LabeledDataset, accounts: Sequence[int], source: str = "tags"
) -> dict[int, bool]:
    return ds.labels(accounts, source=source)


def compare_models(
    ds: LabeledDataset,
    model_scores: Mapping[str, Mapping[int, float]],
    label_source: str = "tags",
) -> EvalReport:
    """Table of per-model metrics on the Test split at each model's F1-best threshold."""
    test_accounts = [i for i in map(int, ds.graph.account_indices()) if ds.split[i] is Split.TEST]
    labels = evaluation_labels(ds, test_accounts, label_source)
    rows: list[ModelRow] = []
    curves: dict[str, list[tuple[float, float, float]]] = {}
    for name, all_scores in model_scores.items():
        scores = {a: float(all_scores[a]) for a in test_accounts}
        threshold, best = best_f1_threshold(scores, labels)
        counts = confusion(scores, labels, threshold)
        rows.append(
            ModelRow(
                name,
                threshold,
                precision(counts),
                recall(counts),
                best,
                detection_expansion(counts),
            )
        )
        curves[name] = pr_curve(scores, labels)
    return EvalReport(rows, curves, label_source=label_source)


def fraud_neighbor_stats(
    g: DeviceSharingGraph, is_fraud: Mapping[int, bool], max_hop: int = 2
) -> tuple[float, float]:
    """Average count of fraud accounts within max_hop hops, around fraud vs regular accounts.

    The center account itself is excluded from its own count.
    """
    fraud_seeds = [a for a, flag in is_fraud.items() if flag]
    regular_seeds = [a for a, flag in is_fraud.items() if not flag]
    if not fraud_seeds or not regular_seeds:
        raise ValueError("need both fraud and regular accounts")

    fraud_mask = np.zeros(g.num_nodes, dtype=bool)
    for a in fraud_seeds:
        fraud_mask[a] = True

    def average(seeds: list[int]) -> float:
        total = 0
        for a in seeds:
            dist = _bfs_distances(g, a, max_hop)
            total += int((fraud_mask & (dist > 0)).sum())
        return total / len(seeds)

    return average(fraud_seeds), average(regular_seeds)


def tag_truth_mismatches(ds: LabeledDataset) -> list[int]:
    """Accounts whose rule tag disagrees with ground truth (flipped fraud tags)."""
    if ds.ground_truth is None:
        raise ValueError("dataset has no ground truth")
    out = []
    for i in map(int, ds.graph.account_indices()):
        tagged = ds.records[i].tag is Tag.HIGH_RISK
        if tagged != ds.ground_truth[i]:
            out.append(i)
    return out


def save_report(report: EvalReport, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("model\tthreshold\tprecision\trecall\tf1\tde\n")
        for row in report.rows:
            fh.write(
                f"{row.model}\t{row.threshold:.9g}\t{row.precision:.9g}"
                f"\t{row.recall:.9g}\t{row.f1:.9g}\t{row.detection_expansion:.9g}\n"
            )


def save_pr_curves(report: EvalReport, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("model\tthreshold\tprecision\trecall\n")
        for name, curve in report.pr_curves.items():
            for threshold, prec, rec in curve:
                fh.write(f"{name}\t{threshold:.9g}\t{prec:.9g}\t{rec:.9g}\n")
