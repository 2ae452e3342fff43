"""Second-order biased random walks and skip-gram embeddings over the graph.

Walks traverse accounts and devices alike; only account embeddings feed the
downstream classifier, concatenated in front of the account features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..features import LabeledDataset, Split, Tag
from ..geniepath import sigmoid
from ..graph import DeviceSharingGraph
from .gbdt import GBDTConfig, GBDTModel, gbdt_fit


@dataclass
class Node2vecConfig:
    dimensions: int = 16
    walk_length: int = 20
    walks_per_node: int = 10
    window: int = 5
    return_param: float = 1.0
    inout_param: float = 1.0
    negative_samples: int = 5
    epochs: int = 3
    step_size: float = 0.025
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("dimensions", "walk_length", "walks_per_node", "window", "negative_samples", "epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("return_param", "inout_param", "step_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")


def _alias_build(weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vose alias table: sample i with prob weights[i]/sum in O(1) per draw."""
    n = len(weights)
    prob = np.ones(n)
    alias = np.arange(n)
    scaled = weights * (n / weights.sum())
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    while small and large:
        s = small.pop()
        l = large.pop()
        prob[s] = scaled[s]
        alias[s] = l
        scaled[l] = scaled[l] + scaled[s] - 1.0
        (small if scaled[l] < 1.0 else large).append(l)
    return prob, alias


def _edge_transition_weights(
    prev: int, prev_neighbors: np.ndarray, cur_neighbors: np.ndarray, p: float, q: float
) -> np.ndarray:
    """Unnormalized weights over cur's neighbors for a walk arriving from prev.

    Returning to prev weighs 1/p, moving to a node adjacent to prev weighs 1,
    anything else 1/q. prev_neighbors must be sorted.
    """
    w = np.full(len(cur_neighbors), 1.0 / q)
    if len(prev_neighbors):
        pos = np.minimum(
            np.searchsorted(prev_neighbors, cur_neighbors), len(prev_neighbors) - 1
        )
        w[prev_neighbors[pos] == cur_neighbors] = 1.0
    w[cur_neighbors == prev] = 1.0 / p
    return w


class _BiasedSampler:
    """Per-directed-edge alias tables for the (p, q) second-order transition."""

    def __init__(self, g: DeviceSharingGraph, p: float, q: float):
        offsets, targets = g.csr()
        n = g.num_nodes
        deg = np.diff(offsets)
        n_directed = len(targets)
        src_of = np.repeat(np.arange(n), deg)
        # keys sorted ascending because CSR iterates src blocks in order with sorted targets
        self._keys = src_of * n + targets
        self._n = n
        self._offsets = offsets
        self._targets = targets
        self._deg = deg

        table_sizes = deg[targets]
        self._table_ptr = np.zeros(n_directed + 1, dtype=np.int64)
        np.cumsum(table_sizes, out=self._table_ptr[1:])
        self._prob = np.empty(int(table_sizes.sum()))
        self._alias = np.empty(int(table_sizes.sum()), dtype=np.int64)
        for eid in range(n_directed):
            prev = int(src_of[eid])
            cur = int(targets[eid])
            cur_nbrs = targets[offsets[cur] : offsets[cur + 1]]
            prev_nbrs = targets[offsets[prev] : offsets[prev + 1]]
            w = _edge_transition_weights(prev, prev_nbrs, cur_nbrs, p, q)
            prob, alias = _alias_build(w)
            lo, hi = self._table_ptr[eid], self._table_ptr[eid + 1]
            self._prob[lo:hi] = prob
            self._alias[lo:hi] = alias

    def step(self, prev: np.ndarray, cur: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        eid = np.searchsorted(self._keys, prev * self._n + cur)
        d = self._deg[cur]
        k = np.minimum((rng.random(len(cur)) * d).astype(np.int64), d - 1)
        flat = self._table_ptr[eid] + k
        take = rng.random(len(cur)) < self._prob[flat]
        choice = np.where(take, k, self._alias[flat])
        return self._targets[self._offsets[cur] + choice]


def biased_walks(g: DeviceSharingGraph, config: Node2vecConfig) -> list[list[int]]:
    """walks_per_node truncated walks from every node; deterministic per seed.

    Walks from isolated nodes stop immediately. With return_param and
    inout_param both 1 every step is a uniform neighbor choice.
    """
    if g.num_nodes == 0:
        raise ValueError("graph has no nodes")
    rng = np.random.default_rng(config.seed)
    offsets, targets = g.csr()
    deg = np.diff(offsets)
    n = g.num_nodes

    starts = np.tile(np.arange(n), config.walks_per_node)
    paths = np.full((len(starts), config.walk_length), -1, dtype=np.int64)
    paths[:, 0] = starts

    uniform = config.return_param == 1.0 and config.inout_param == 1.0
    sampler = None if uniform else _BiasedSampler(g, config.return_param, config.inout_param)

    active = np.flatnonzero(deg[starts] > 0)
    if config.walk_length > 1 and len(active):
        cur = starts[active]
        k = np.minimum((rng.random(len(cur)) * deg[cur]).astype(np.int64), deg[cur] - 1)
        nxt = targets[offsets[cur] + k]
        paths[active, 1] = nxt
        prev, cur = cur, nxt
        for step in range(2, config.walk_length):
            if uniform:
                k = np.minimum((rng.random(len(cur)) * deg[cur]).astype(np.int64), deg[cur] - 1)
                nxt = targets[offsets[cur] + k]
            else:
                nxt = sampler.step(prev, cur, rng)
            paths[active, step] = nxt
            prev, cur = cur, nxt

    return [[int(v) for v in row[row >= 0]] for row in paths]


@dataclass
class Embeddings:
    """Per-node vectors plus the averaged skip-gram loss per training epoch."""

    vectors: np.ndarray
    epoch_losses: list[float]

    def __getitem__(self, node: int) -> np.ndarray:
        return self.vectors[node]

    @property
    def dimensions(self) -> int:
        return int(self.vectors.shape[1])


def _walk_pairs(walks: Sequence[Sequence[int]], window: int) -> tuple[np.ndarray, np.ndarray]:
    longest = max(len(walk) for walk in walks)
    padded = np.full((len(walks), longest), -1, dtype=np.int64)
    for i, walk in enumerate(walks):
        padded[i, : len(walk)] = walk
    centers: list[np.ndarray] = []
    contexts: list[np.ndarray] = []
    for off in range(1, window + 1):
        if off >= longest:
            break
        a = padded[:, :-off].ravel()
        b = padded[:, off:].ravel()
        ok = (a >= 0) & (b >= 0)
        centers.append(a[ok])
        contexts.append(b[ok])
        centers.append(b[ok])
        contexts.append(a[ok])
    if not centers:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    return np.concatenate(centers), np.concatenate(contexts)


def train_embeddings(
    walks: Sequence[Sequence[int]], config: Node2vecConfig, n_nodes: int | None = None
) -> Embeddings:
    """Skip-gram with negative sampling over walk co-occurrence windows.

    Negatives follow the unigram^0.75 distribution of walk tokens. The step
    size decays linearly across all batches from step_size to 1% of it.
    """
    if not walks:
        raise ValueError("walks must be nonempty")
    if n_nodes is None:
        n_nodes = 1 + max(max(w) for w in walks if w)
    rng = np.random.default_rng(config.seed)
    d = config.dimensions
    w_center = rng.uniform(-0.5 / d, 0.5 / d, size=(n_nodes, d))
    w_context = np.zeros((n_nodes, d))

    centers, contexts = _walk_pairs(walks, config.window)
    if len(centers) == 0:
        return Embeddings(w_center, [])

    counts = np.bincount(
        np.concatenate([np.asarray(w, dtype=np.int64) for w in walks]), minlength=n_nodes
    ).astype(np.float64)
    noise = counts**0.75
    noise_cdf = np.cumsum(noise / noise.sum())

    # Updates within a batch are accumulated at stale parameters, so tie the
    # batch size to the vocabulary: tiny graphs otherwise pile hundreds of
    # same-direction contributions onto each node and diverge.
    batch_size = min(8192, max(64, 8 * n_nodes))
    n_batches_total = config.epochs * math.ceil(len(centers) / batch_size)
    batch_index = 0
    epoch_losses: list[float] = []
    for _ in range(config.epochs):
        order = rng.permutation(len(centers))
        total = 0.0
        for lo in range(0, len(order), batch_size):
            sel = order[lo : lo + batch_size]
            c = centers[sel]
            ctx = contexts[sel]
            neg = np.searchsorted(noise_cdf, rng.random((len(sel), config.negative_samples)))

            lr = config.step_size * max(0.01, 1.0 - batch_index / n_batches_total)
            batch_index += 1

            u = w_center[c]
            v_pos = w_context[ctx]
            v_neg = w_context[neg]
            s_pos = np.einsum("bd,bd->b", u, v_pos)
            s_neg = np.einsum("bd,bnd->bn", u, v_neg)
            total += float(
                np.logaddexp(0.0, -s_pos).sum() + np.logaddexp(0.0, s_neg).sum()
            )

            g_pos = sigmoid(s_pos) - 1.0
            g_neg = sigmoid(s_neg)
            du = g_pos[:, None] * v_pos + np.einsum("bn,bnd->bd", g_neg, v_neg)
            np.add.at(w_center, c, -lr * du)
            np.add.at(w_context, ctx, -lr * (g_pos[:, None] * u))
            np.add.at(
                w_context,
                neg.ravel(),
                (-lr * (g_neg[..., None] * u[:, None, :])).reshape(-1, d),
            )
        epoch_losses.append(total / len(centers))
    return Embeddings(w_center, epoch_losses)


def save_embeddings(emb: Embeddings, g: DeviceSharingGraph, path: str) -> None:
    """TSV of node external id and vector, accounts and devices alike."""
    with open(path, "w", encoding="utf-8") as fh:
        for node in g.nodes:
            values = "\t".join(f"{v:.17g}" for v in emb.vectors[node.index])
            fh.write(f"{node.external_id}\t{values}\n")


def load_embeddings(path: str, g: DeviceSharingGraph) -> Embeddings:
    by_id = {nd.external_id: nd.index for nd in g.nodes}
    vectors: np.ndarray | None = None
    seen = np.zeros(g.num_nodes, dtype=bool)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh.read().splitlines(), start=1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if parts[0] not in by_id:
                raise ValueError(f"{path}:{lineno}: unknown node id {parts[0]!r}")
            try:
                vec = np.array([float(v) for v in parts[1:]], dtype=np.float64)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric embedding value") from None
            if vectors is None:
                vectors = np.zeros((g.num_nodes, len(vec)))
            if len(vec) != vectors.shape[1]:
                raise ValueError(f"{path}:{lineno}: inconsistent embedding width")
            idx = by_id[parts[0]]
            vectors[idx] = vec
            seen[idx] = True
    if vectors is None or not seen.all():
        raise ValueError(f"{path}: embeddings missing for some graph nodes")
    return Embeddings(vectors, [])


def embed_concat_fit(
    ds: LabeledDataset,
    n2v_config: Node2vecConfig,
    gbdt_config: GBDTConfig,
    negative_sample_rate: float = 0.25,
) -> tuple[GBDTModel, Embeddings]:
    """Fit a GBDT on [embedding, features] rows with the shared label sampling.

    Positives are the tagged high-risk Train accounts; negatives a downsample
    of the untagged Train pool at negative_sample_rate, drawn from the GBDT
    seed. Returns the fitted model along with the embeddings it consumed.
    """
    from ..train import sample_negatives

    walks = biased_walks(ds.graph, n2v_config)
    emb = train_embeddings(walks, n2v_config, n_nodes=ds.graph.num_nodes)

    accounts = [int(i) for i in ds.graph.account_indices()]
    train_tags = {a: ds.records[a].tag for a in accounts if ds.split[a] is Split.TRAIN}
    positives = sorted(a for a, tag in train_tags.items() if tag is Tag.HIGH_RISK)
    rng = np.random.default_rng(gbdt_config.seed)
    negatives = sorted(sample_negatives(train_tags, negative_sample_rate, rng))

    chosen = positives + negatives
    x = np.hstack([emb.vectors[chosen], np.stack([ds.records[a].features for a in chosen])])
    y = np.array([1.0] * len(positives) + [0.0] * len(negatives))
    model = gbdt_fit(x, y, gbdt_config)
    return model, emb
