"""Shared fixture builders for the test suite."""
import numpy as np

from fraudring.features import AccountRecord, LabeledDataset, Split, Tag
from fraudring.graph import DeviceSharingGraph, NodeKind, NodeRef


def make_graph(kinds: str, edges):
    """Graph from a kind string like "AADD" and an edge list.

    Accounts get ids a0, a1, ... and devices d0, d1, ... by position.
    """
    nodes = []
    for i, ch in enumerate(kinds):
        kind = NodeKind.ACCOUNT if ch == "A" else NodeKind.DEVICE
        prefix = "a" if ch == "A" else "d"
        nodes.append(NodeRef(i, kind, f"{prefix}{i}"))
    return DeviceSharingGraph(nodes, edges)


def random_bipartite(rng: np.random.Generator, n_accounts: int, n_devices: int, edge_prob: float):
    kinds = "A" * n_accounts + "D" * n_devices
    edges = [
        (a, n_accounts + d)
        for a in range(n_accounts)
        for d in range(n_devices)
        if rng.random() < edge_prob
    ]
    return make_graph(kinds, edges)


def adjacency_lists(g: DeviceSharingGraph):
    return [[int(v) for v in g.neighbors(u)] for u in range(g.num_nodes)]


def make_dataset(
    g: DeviceSharingGraph,
    features,
    tags=None,
    split=None,
    truth=None,
) -> LabeledDataset:
    """LabeledDataset over g's accounts with row i of features on account i.

    tags default to NO_OBSERVABLE_RISK, truth to absent; split defaults to TRAIN.
    """
    accounts = [int(i) for i in g.account_indices()]
    features = np.asarray(features, dtype=np.float64)
    records = {}
    for row, a in enumerate(accounts):
        tag = tags[row] if tags is not None else Tag.NO_OBSERVABLE_RISK
        records[a] = AccountRecord(a, features[row].copy(), tag)
    split_map = {
        a: (split[row] if split is not None else Split.TRAIN)
        for row, a in enumerate(accounts)
    }
    truth_map = None
    if truth is not None:
        truth_map = {a: bool(truth[row]) for row, a in enumerate(accounts)}
    return LabeledDataset(g, records, split_map, truth_map)
