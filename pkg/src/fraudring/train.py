"""Label-uncertainty training loop: all tagged-high-risk accounts as positives,
a fresh downsample of the untagged pool as negatives each epoch."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .features import LabeledDataset, Split, Tag
from .geniepath import (
    PROB_CLAMP,
    GeniePathParams,
    _bce_dprobs,
    _clamped_bce,
    backward,
    forward,
)


class NumericalError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


class Optimizer(Enum):
    SGD = "sgd"
    ADAM = "adam"


@dataclass
class TrainConfig:
    epochs: int = 300
    learning_rate: float = 0.01
    negative_sample_rate: float = 0.25
    optimizer: Optimizer = Optimizer.ADAM
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    resample_each_epoch: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not (0.0 < self.negative_sample_rate <= 1.0):
            raise ValueError("negative_sample_rate must lie in (0, 1]")


@dataclass
class TrainReport:
    loss_history: list[float]
    sampled_negative_counts: list[int]
    params: GeniePathParams


def sample_negatives(
    tags: Mapping[int, Tag], rate: float, rng: np.random.Generator
) -> set[int]:
    """Fixed-size uniform sample, without replacement, of the untagged accounts.

    Sample size is round(rate * count of NoObservableRisk keys).
    """
    if not (0.0 < rate <= 1.0):
        raise ValueError("rate must lie in (0, 1]")
    pool = sorted(i for i, tag in tags.items() if tag is Tag.NO_OBSERVABLE_RISK)
    if not pool:
        raise ValueError("no untagged accounts to sample negatives from")
    n = int(round(rate * len(pool)))
    chosen = rng.choice(len(pool), size=n, replace=False)
    return {pool[int(j)] for j in chosen}


def loss(
    probabilities: Mapping[int, float],
    positives: set[int],
    negatives: set[int],
) -> float:
    """Cross-entropy over the positive set and the sampled negative set.

    Probabilities are clamped to [1e-12, 1 - 1e-12] so the value stays finite.
    """
    overlap = positives & negatives
    if overlap:
        raise ValueError(f"positive and negative sets overlap on {sorted(overlap)[:5]}")
    total = 0.0
    for v in positives:
        total -= np.log(min(max(probabilities[v], PROB_CLAMP), 1.0 - PROB_CLAMP))
    for v in negatives:
        total -= np.log(1.0 - min(max(probabilities[v], PROB_CLAMP), 1.0 - PROB_CLAMP))
    return float(total)


def train(
    ds: LabeledDataset,
    params: GeniePathParams,
    config: TrainConfig,
) -> tuple[GeniePathParams, TrainReport]:
    """Optimize the network on the Train split; deterministic for a fixed seed."""
    accounts = [int(i) for i in ds.graph.account_indices()]
    row_of = {a: r for r, a in enumerate(accounts)}
    features = ds.feature_matrix()

    train_tags = {
        a: ds.records[a].tag for a in accounts if ds.split[a] is Split.TRAIN
    }
    pos_rows = np.array(
        sorted(row_of[a] for a, tag in train_tags.items() if tag is Tag.HIGH_RISK),
        dtype=np.int64,
    )
    if len(pos_rows) == 0:
        raise ValueError("Train split has no tagged high-risk accounts")

    rng = np.random.default_rng(config.seed)
    params = params.copy()
    vec = params.to_vector()
    adam_m = np.zeros_like(vec)
    adam_v = np.zeros_like(vec)

    neg_rows: np.ndarray | None = None
    loss_history: list[float] = []
    neg_counts: list[int] = []
    n_acc = len(accounts)
    for epoch in range(config.epochs):
        if neg_rows is None or config.resample_each_epoch:
            sampled = sample_negatives(train_tags, config.negative_sample_rate, rng)
            neg_rows = np.array(sorted(row_of[a] for a in sampled), dtype=np.int64)

        pos_mask = np.zeros(n_acc, dtype=bool)
        neg_mask = np.zeros(n_acc, dtype=bool)
        pos_mask[pos_rows] = True
        neg_mask[neg_rows] = True

        probs, cache = forward(params, ds.graph, features)
        epoch_loss = _clamped_bce(probs, pos_mask, neg_mask)
        grads = backward(params, cache, _bce_dprobs(probs, pos_mask, neg_mask))
        gvec = grads.to_vector()
        if not np.isfinite(epoch_loss) or not np.all(np.isfinite(gvec)):
            raise NumericalError(f"non-finite loss or gradient at epoch {epoch}")

        if config.optimizer is Optimizer.SGD:
            vec = vec - config.learning_rate * gvec
        else:
            adam_m = config.adam_beta1 * adam_m + (1.0 - config.adam_beta1) * gvec
            adam_v = config.adam_beta2 * adam_v + (1.0 - config.adam_beta2) * gvec**2
            m_hat = adam_m / (1.0 - config.adam_beta1 ** (epoch + 1))
            v_hat = adam_v / (1.0 - config.adam_beta2 ** (epoch + 1))
            vec = vec - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
        params = params.from_vector(vec)

        loss_history.append(epoch_loss)
        neg_counts.append(int(len(neg_rows)))

    return params, TrainReport(loss_history, neg_counts, params)


def score_accounts(
    ds: LabeledDataset, params: GeniePathParams, split: Split | None = None
) -> dict[int, float]:
    """Forward-pass probabilities keyed by account node index, optionally split-filtered."""
    accounts = [int(i) for i in ds.graph.account_indices()]
    probs, _ = forward(params, ds.graph, ds.feature_matrix())
    return {
        a: float(probs[r])
        for r, a in enumerate(accounts)
        if split is None or ds.split[a] is split
    }


def save_train_report(report: TrainReport, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch\tloss\tn_sampled_neg\n")
        for epoch, (ls, n) in enumerate(zip(report.loss_history, report.sampled_negative_counts)):
            fh.write(f"{epoch}\t{ls:.17g}\t{n}\n")
