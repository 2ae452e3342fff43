"""Per-account feature vectors and rule-generated risk tags, with normalization and splits."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .graph import DeviceSharingGraph, NodeKind, load_graph, prune_singletons

GRAPH_FILE = "graph.tsv"
FEATURES_FILE = "features.tsv"
GROUND_TRUTH_FILE = "ground_truth.tsv"
CLAIMS_FILE = "claims.tsv"
LOGINS_FILE = "logins.tsv"


class FeatureFormatError(ValueError):
    """Malformed features or ground-truth file."""


class Tag(Enum):
    HIGH_RISK = "HIGH_RISK"
    NO_OBSERVABLE_RISK = "NO_OBSERVABLE_RISK"


class Split(Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass
class AccountRecord:
    account_index: int
    features: np.ndarray
    tag: Tag


@dataclass
class LabeledDataset:
    """Graph plus per-account records, a train/test split, and optional ground truth.

    Rule tags are the training signal; ground_truth exists only for synthetic
    data and is consumed exclusively by evaluation.
    """

    graph: DeviceSharingGraph
    records: dict[int, AccountRecord]
    split: dict[int, Split]
    ground_truth: dict[int, bool] | None = None

    @property
    def feature_dim(self) -> int:
        first = next(iter(self.records.values()))
        return int(first.features.shape[0])

    def account_order(self) -> np.ndarray:
        return self.graph.account_indices()

    def feature_matrix(self, accounts: Sequence[int] | None = None) -> np.ndarray:
        idx = self.account_order() if accounts is None else np.asarray(accounts, dtype=np.int64)
        return np.stack([self.records[int(i)].features for i in idx]) if len(idx) else np.zeros((0, 0))

    def accounts_with(self, tag: Tag | None = None, split: Split | None = None) -> list[int]:
        """Account indices filtered by tag and/or split, in graph order."""
        out = []
        for i in self.account_order():
            i = int(i)
            if tag is not None and self.records[i].tag is not tag:
                continue
            if split is not None and self.split[i] is not split:
                continue
            out.append(i)
        return out

    def labels(self, accounts: Iterable[int], source: str = "tags") -> dict[int, bool]:
        """Boolean positive labels from 'tags' (rule tags) or 'ground-truth'."""
        if source == "tags":
            return {int(i): self.records[int(i)].tag is Tag.HIGH_RISK for i in accounts}
        if source == "ground-truth":
            if self.ground_truth is None:
                raise ValueError("dataset has no ground truth")
            return {int(i): self.ground_truth[int(i)] for i in accounts}
        raise ValueError(f"unknown label source {source!r}")


def check_dataset(ds: LabeledDataset) -> None:
    """Validate dataset invariants; raises ValueError on violation."""
    accounts = set(int(i) for i in ds.graph.account_indices())
    if set(ds.records) != accounts:
        missing = accounts - set(ds.records)
        extra = set(ds.records) - accounts
        raise ValueError(f"records do not cover account nodes exactly (missing {sorted(missing)[:5]}, extra {sorted(extra)[:5]})")
    if set(ds.split) != accounts:
        raise ValueError("split must cover every account exactly once")
    dims = {rec.features.shape for rec in ds.records.values()}
    if len(dims) > 1:
        raise ValueError(f"inconsistent feature lengths: {sorted(dims)}")
    if ds.ground_truth is not None and set(ds.ground_truth) != accounts:
        raise ValueError("ground truth must cover every account")


def train_feature_stats(ds: LabeledDataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension (mean, population std) computed on the Train split only."""
    train = [i for i in ds.account_order() if ds.split[int(i)] is Split.TRAIN]
    if not train:
        raise ValueError("cannot compute feature statistics: Train split is empty")
    x = ds.feature_matrix(train)
    return x.mean(axis=0), x.std(axis=0)


def normalize_features(ds: LabeledDataset) -> LabeledDataset:
    """Standardize every feature dimension using Train-split statistics.

    Train-split columns come out with mean 0 and std 1; zero-variance
    columns map to all zeros. Test rows are transformed with the Train
    statistics. Returns a new dataset; the input is untouched.
    """
    mean, std = train_feature_stats(ds)
    zero_var = std == 0.0
    safe_std = np.where(zero_var, 1.0, std)
    records = {}
    for i, rec in ds.records.items():
        x = (rec.features - mean) / safe_std
        x[zero_var] = 0.0
        records[i] = AccountRecord(rec.account_index, x, rec.tag)
    return LabeledDataset(ds.graph, records, dict(ds.split), dict(ds.ground_truth) if ds.ground_truth else ds.ground_truth)


def split_train_test(ds: LabeledDataset, test_fraction: float, seed: int) -> LabeledDataset:
    """Stratified random split: each tag class contributes floor(size * fraction) Test accounts."""
    if not (0.0 < test_fraction < 1.0):
        raise ValueError("test_fraction must lie in (0, 1)")
    split: dict[int, Split] = {}
    rng = np.random.default_rng(seed)
    for tag in (Tag.HIGH_RISK, Tag.NO_OBSERVABLE_RISK):
        members = np.array(ds.accounts_with(tag=tag), dtype=np.int64)
        if len(members) < 2:
            raise ValueError(f"cannot stratify: tag {tag.value} has {len(members)} account(s)")
        n_test = math.floor(len(members) * test_fraction)
        perm = rng.permutation(members)
        for i in perm[:n_test]:
            split[int(i)] = Split.TEST
        for i in perm[n_test:]:
            split[int(i)] = Split.TRAIN
    return LabeledDataset(ds.graph, ds.records, split, ds.ground_truth)


def prune_dataset(ds: LabeledDataset) -> LabeledDataset:
    """Apply prune_singletons to the graph and remap records/split/truth to the new indices."""
    pruned = prune_singletons(ds.graph)
    by_id = pruned.account_index_by_id()
    records: dict[int, AccountRecord] = {}
    split: dict[int, Split] = {}
    truth: dict[int, bool] | None = {} if ds.ground_truth is not None else None
    for old, rec in ds.records.items():
        new = by_id.get(ds.graph.nodes[old].external_id)
        if new is None:
            continue
        records[new] = AccountRecord(new, rec.features, rec.tag)
        split[new] = ds.split[old]
        if truth is not None:
            truth[new] = ds.ground_truth[old]  # type: ignore[index]
    out = LabeledDataset(pruned, records, split, truth)
    check_dataset(out)
    return out


def save_features(ds: LabeledDataset, path: str) -> None:
    """Write the features TSV keyed by account external id, values at 9 significant digits."""
    p = ds.feature_dim
    header = "account_id\ttag\t" + "\t".join(f"f{j}" for j in range(p))
    lines = [header]
    for i in ds.account_order():
        rec = ds.records[int(i)]
        ext = ds.graph.nodes[int(i)].external_id
        values = "\t".join(f"{v:.9g}" for v in rec.features)
        lines.append(f"{ext}\t{rec.tag.value}\t{values}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_features(path: str, graph: DeviceSharingGraph) -> LabeledDataset:
    """Load a features TSV against an existing graph; every account must get one row."""
    by_id = graph.account_index_by_id()
    with open(path, encoding="utf-8") as fh:
        raw = fh.read().splitlines()
    if not raw:
        raise FeatureFormatError(f"{path}:1: empty features file")
    header = raw[0].split("\t")
    if len(header) < 3 or header[0] != "account_id" or header[1] != "tag":
        raise FeatureFormatError(f"{path}:1: bad header {raw[0]!r}")
    p = len(header) - 2

    records: dict[int, AccountRecord] = {}
    for lineno, line in enumerate(raw[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != p + 2:
            raise FeatureFormatError(f"{path}:{lineno}: expected {p + 2} fields, got {len(parts)}")
        ext_id = parts[0]
        if ext_id not in by_id:
            raise FeatureFormatError(f"{path}:{lineno}: unknown account id {ext_id!r}")
        try:
            tag = Tag(parts[1])
        except ValueError:
            raise FeatureFormatError(f"{path}:{lineno}: unknown tag {parts[1]!r}") from None
        try:
            values = np.array([float(v) for v in parts[2:]], dtype=np.float64)
        except ValueError:
            raise FeatureFormatError(f"{path}:{lineno}: non-numeric feature value") from None
        idx = by_id[ext_id]
        if idx in records:
            raise FeatureFormatError(f"{path}:{lineno}: duplicate row for account {ext_id!r}")
        records[idx] = AccountRecord(idx, values, tag)

    ds = LabeledDataset(graph, records, {i: Split.TRAIN for i in records})
    check_dataset(ds)
    return ds


def save_ground_truth(ds: LabeledDataset, path: str) -> None:
    if ds.ground_truth is None:
        raise ValueError("dataset has no ground truth to save")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("account_id\tis_fraud\n")
        for i in ds.account_order():
            ext = ds.graph.nodes[int(i)].external_id
            fh.write(f"{ext}\t{1 if ds.ground_truth[int(i)] else 0}\n")


def load_ground_truth(path: str, graph: DeviceSharingGraph) -> dict[int, bool]:
    by_id = graph.account_index_by_id()
    truth: dict[int, bool] = {}
    with open(path, encoding="utf-8") as fh:
        raw = fh.read().splitlines()
    if not raw or raw[0] != "account_id\tis_fraud":
        raise FeatureFormatError(f"{path}:1: bad ground-truth header")
    for lineno, line in enumerate(raw[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise FeatureFormatError(f"{path}:{lineno}: expected 2 fields, got {len(parts)}")
        if parts[0] not in by_id:
            raise FeatureFormatError(f"{path}:{lineno}: unknown account id {parts[0]!r}")
        if parts[1] not in ("0", "1"):
            raise FeatureFormatError(f"{path}:{lineno}: is_fraud must be 0 or 1, got {parts[1]!r}")
        truth[by_id[parts[0]]] = parts[1] == "1"
    return truth


def load_dataset(directory: str) -> LabeledDataset:
    """Load graph + features (+ ground truth when present) from a dataset directory.

    The split starts as all-Train; apply split_train_test afterwards.
    """
    graph = load_graph(os.path.join(directory, GRAPH_FILE))
    ds = load_features(os.path.join(directory, FEATURES_FILE), graph)
    gt_path = os.path.join(directory, GROUND_TRUTH_FILE)
    if os.path.exists(gt_path):
        ds.ground_truth = load_ground_truth(gt_path, graph)
    check_dataset(ds)
    return ds
