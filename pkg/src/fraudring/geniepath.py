"""Graph neural network over the device-sharing graph.

Each layer pools a node's one-hop neighborhood (itself included) with learned
attention weights; an LSTM then runs over the per-node sequence of layer
outputs so the model can pick which receptive depth to trust. A sigmoid head
turns the LSTM state into a fraud probability per account. Forward and exact
reverse-mode gradients are implemented directly on numpy arrays; a
finite-difference checker validates the gradients end to end.

Device nodes carry no features: their initial embedding is zero and they act
as mixing hubs through which account signals travel in two hops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .graph import DeviceSharingGraph


class CheckpointFormatError(ValueError):
    """Malformed model checkpoint file."""


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class BreadthLayerParams:
    """One attention-pooling layer.

    Attention score of candidate v around center u is
    attn . tanh(w_src h_u + w_dst h_v); the layer output is
    tanh(w_agg sum_v softmax(score)_v h_v) over v in neighbors(u) + {u}.
    """

    w_agg: np.ndarray
    w_src: np.ndarray
    w_dst: np.ndarray
    attn: np.ndarray


@dataclass
class LSTMParams:
    """Single-layer LSTM; gate order in the stacked arrays is input, forget, cell, output."""

    w_x: np.ndarray
    w_h: np.ndarray
    bias: np.ndarray


@dataclass
class GeniePathParams:
    w_in: np.ndarray
    layers: list[BreadthLayerParams]
    lstm: LSTMParams
    w_out: np.ndarray
    b_out: np.ndarray

    @property
    def feature_dim(self) -> int:
        return int(self.w_in.shape[1])

    @property
    def hidden_dim(self) -> int:
        return int(self.w_in.shape[0])

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        out: list[tuple[str, np.ndarray]] = [("w_in", self.w_in)]
        for t, layer in enumerate(self.layers):
            out += [
                (f"layer{t}.w_agg", layer.w_agg),
                (f"layer{t}.w_src", layer.w_src),
                (f"layer{t}.w_dst", layer.w_dst),
                (f"layer{t}.attn", layer.attn),
            ]
        out += [
            ("lstm.w_x", self.lstm.w_x),
            ("lstm.w_h", self.lstm.w_h),
            ("lstm.bias", self.lstm.bias),
            ("w_out", self.w_out),
            ("b_out", self.b_out),
        ]
        return out

    def validate(self) -> None:
        p, k = self.feature_dim, self.hidden_dim
        expected = dict(_tensor_spec(p, k, self.n_layers))
        for name, arr in self.named_arrays():
            if arr.shape != expected[name]:
                raise ValueError(f"{name} has shape {arr.shape}, expected {expected[name]}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")

    def to_vector(self) -> np.ndarray:
        return np.concatenate([arr.ravel() for _, arr in self.named_arrays()])

    def from_vector(self, vec: np.ndarray) -> "GeniePathParams":
        """New params with this instance's shapes and the given flat values."""
        arrays = []
        pos = 0
        for _, arr in self.named_arrays():
            arrays.append(vec[pos : pos + arr.size].reshape(arr.shape).copy())
            pos += arr.size
        if pos != vec.size:
            raise ValueError(f"vector has {vec.size} entries, parameters need {pos}")
        return _assemble(arrays, self.n_layers)

    def zeros_like(self) -> "GeniePathParams":
        return self.from_vector(np.zeros(self.to_vector().size))

    def copy(self) -> "GeniePathParams":
        return self.from_vector(self.to_vector())


def _tensor_spec(feature_dim: int, hidden_dim: int, n_layers: int) -> list[tuple[str, tuple[int, ...]]]:
    p, k = feature_dim, hidden_dim
    spec: list[tuple[str, tuple[int, ...]]] = [("w_in", (k, p))]
    for t in range(n_layers):
        spec += [
            (f"layer{t}.w_agg", (k, k)),
            (f"layer{t}.w_src", (k, k)),
            (f"layer{t}.w_dst", (k, k)),
            (f"layer{t}.attn", (k,)),
        ]
    spec += [
        ("lstm.w_x", (4 * k, k)),
        ("lstm.w_h", (4 * k, k)),
        ("lstm.bias", (4 * k,)),
        ("w_out", (k,)),
        ("b_out", (1,)),
    ]
    return spec


def _assemble(arrays: list[np.ndarray], n_layers: int) -> GeniePathParams:
    it = iter(arrays)
    w_in = next(it)
    layers = [BreadthLayerParams(next(it), next(it), next(it), next(it)) for _ in range(n_layers)]
    lstm = LSTMParams(next(it), next(it), next(it))
    return GeniePathParams(w_in, layers, lstm, next(it), next(it))


def init_params(
    feature_dim: int, hidden_dim: int = 16, n_layers: int = 2, seed: int = 0
) -> GeniePathParams:
    """Uniform(-a, a) init with a = sqrt(6 / (fan_in + fan_out)); forget-gate bias +1."""
    if feature_dim < 1 or hidden_dim < 1 or n_layers < 1:
        raise ValueError("feature_dim, hidden_dim, and n_layers must be >= 1")
    rng = np.random.default_rng(seed)

    def glorot(shape: tuple[int, ...]) -> np.ndarray:
        fan_out = shape[0]
        fan_in = shape[1] if len(shape) > 1 else 1
        a = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-a, a, size=shape)

    arrays = []
    for name, shape in _tensor_spec(feature_dim, hidden_dim, n_layers):
        if name == "lstm.bias" or name == "b_out":
            arrays.append(np.zeros(shape))
        else:
            arrays.append(glorot(shape))
    params = _assemble(arrays, n_layers)
    params.lstm.bias[hidden_dim : 2 * hidden_dim] = 1.0
    return params


def _candidates(g: DeviceSharingGraph) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-node candidate lists [self, neighbors...] flattened, with segment starts."""
    offsets, targets = g.csr()
    n = g.num_nodes
    deg = np.diff(offsets)
    seg_len = deg + 1
    seg_starts = np.zeros(n, dtype=np.int64)
    np.cumsum(seg_len[:-1], out=seg_starts[1:])
    total = int(seg_len.sum())
    cand_dst = np.empty(total, dtype=np.int64)
    cand_dst[seg_starts] = np.arange(n)
    mask = np.ones(total, dtype=bool)
    mask[seg_starts] = False
    cand_dst[mask] = targets
    cand_src = np.repeat(np.arange(n), seg_len)
    return cand_src, cand_dst, seg_starts


@dataclass
class _LayerCache:
    z: np.ndarray
    alpha: np.ndarray
    agg: np.ndarray


@dataclass
class _LSTMStepCache:
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    tanh_c: np.ndarray


@dataclass
class ForwardCache:
    accounts: np.ndarray
    features: np.ndarray
    cand_src: np.ndarray
    cand_dst: np.ndarray
    seg_starts: np.ndarray
    h_stack: list[np.ndarray]
    layer_caches: list[_LayerCache]
    lstm_steps: list[_LSTMStepCache]
    h_final: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


def _breadth_forward(
    layer: BreadthLayerParams,
    h: np.ndarray,
    cand_src: np.ndarray,
    cand_dst: np.ndarray,
    seg_starts: np.ndarray,
) -> tuple[np.ndarray, _LayerCache]:
    src_term = h @ layer.w_src.T
    dst_term = h @ layer.w_dst.T
    z = np.tanh(src_term[cand_src] + dst_term[cand_dst])
    scores = z @ layer.attn
    seg_max = np.maximum.reduceat(scores, seg_starts)
    shifted = np.exp(scores - seg_max[cand_src])
    denom = np.add.reduceat(shifted, seg_starts)
    alpha = shifted / denom[cand_src]
    agg = np.add.reduceat(alpha[:, None] * h[cand_dst], seg_starts, axis=0)
    h_next = np.tanh(agg @ layer.w_agg.T)
    return h_next, _LayerCache(z, alpha, agg)


def breadth_layer(
    layer: BreadthLayerParams, g: DeviceSharingGraph, h: np.ndarray
) -> np.ndarray:
    """One attention-pooling step over every node's neighborhood-plus-self."""
    cand_src, cand_dst, seg_starts = _candidates(g)
    h_next, _ = _breadth_forward(layer, np.asarray(h, dtype=np.float64), cand_src, cand_dst, seg_starts)
    return h_next


def attention_weights(
    layer: BreadthLayerParams, h_center: np.ndarray, h_neighbors: np.ndarray
) -> np.ndarray:
    """Attention weights over [center, neighbor_0, ...]; positive, summing to 1."""
    h_neighbors = np.asarray(h_neighbors, dtype=np.float64).reshape(-1, h_center.shape[0])
    cands = np.vstack([h_center[None, :], h_neighbors])
    z = np.tanh((layer.w_src @ h_center)[None, :] + cands @ layer.w_dst.T)
    scores = z @ layer.attn
    shifted = np.exp(scores - scores.max())
    return shifted / shifted.sum()


def _lstm_forward(
    lstm: LSTMParams, xs: Sequence[np.ndarray]
) -> tuple[np.ndarray, list[_LSTMStepCache]]:
    n, k = xs[0].shape
    h = np.zeros((n, k))
    c = np.zeros((n, k))
    steps: list[_LSTMStepCache] = []
    for x in xs:
        a = x @ lstm.w_x.T + h @ lstm.w_h.T + lstm.bias
        i = sigmoid(a[:, :k])
        f = sigmoid(a[:, k : 2 * k])
        g = np.tanh(a[:, 2 * k : 3 * k])
        o = sigmoid(a[:, 3 * k :])
        c_new = f * c + i * g
        tanh_c = np.tanh(c_new)
        steps.append(_LSTMStepCache(x, h, c, i, f, g, o, tanh_c))
        h = o * tanh_c
        c = c_new
    return h, steps


def depth_layer(lstm: LSTMParams, sequence: Sequence[np.ndarray]) -> np.ndarray:
    """Final LSTM hidden state over a (T+1)-long sequence of (n, K) embeddings."""
    if len(sequence) < 1:
        raise ValueError("sequence must contain at least one step")
    h, _ = _lstm_forward(lstm, [np.asarray(x, dtype=np.float64) for x in sequence])
    return h


def forward(
    params: GeniePathParams, g: DeviceSharingGraph, features: np.ndarray
) -> tuple[np.ndarray, ForwardCache]:
    """Fraud probability per account node.

    features rows align with g.account_indices(). Returns (probs, cache);
    the cache feeds backward().
    """
    accounts = g.account_indices()
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] != len(accounts) or features.shape[1] != params.feature_dim:
        raise ValueError(
            f"feature matrix shape {features.shape} does not match "
            f"{len(accounts)} accounts x {params.feature_dim} model input dims"
        )

    cand_src, cand_dst, seg_starts = _candidates(g)
    h0 = np.zeros((g.num_nodes, params.hidden_dim))
    h0[accounts] = np.tanh(features @ params.w_in.T)

    h_stack = [h0]
    layer_caches: list[_LayerCache] = []
    for layer in params.layers:
        h_next, cache = _breadth_forward(layer, h_stack[-1], cand_src, cand_dst, seg_starts)
        h_stack.append(h_next)
        layer_caches.append(cache)

    xs = [h[accounts] for h in h_stack]
    h_final, lstm_steps = _lstm_forward(params.lstm, xs)

    logits = h_final @ params.w_out + params.b_out[0]
    probs = sigmoid(logits)
    return probs, ForwardCache(
        accounts, features, cand_src, cand_dst, seg_starts,
        h_stack, layer_caches, lstm_steps, h_final, logits, probs,
    )


def backward(
    params: GeniePathParams, cache: ForwardCache, dprobs: np.ndarray
) -> GeniePathParams:
    """Exact gradients of a scalar loss given its gradient at the output probabilities."""
    grads = params.zeros_like()
    k = params.hidden_dim
    accounts = cache.accounts

    dlogits = np.asarray(dprobs, dtype=np.float64) * cache.probs * (1.0 - cache.probs)
    grads.w_out[:] = cache.h_final.T @ dlogits
    grads.b_out[0] = dlogits.sum()

    dh = dlogits[:, None] * params.w_out
    dc = np.zeros_like(dh)
    dxs: list[np.ndarray] = [np.empty(0)] * len(cache.lstm_steps)
    for t in range(len(cache.lstm_steps) - 1, -1, -1):
        s = cache.lstm_steps[t]
        do = dh * s.tanh_c
        dc = dc + dh * s.o * (1.0 - s.tanh_c**2)
        di = dc * s.g
        df = dc * s.c_prev
        dg = dc * s.i
        dc = dc * s.f
        da = np.concatenate(
            [
                di * s.i * (1.0 - s.i),
                df * s.f * (1.0 - s.f),
                dg * (1.0 - s.g**2),
                do * s.o * (1.0 - s.o),
            ],
            axis=1,
        )
        grads.lstm.w_x += da.T @ s.x
        grads.lstm.w_h += da.T @ s.h_prev
        grads.lstm.bias += da.sum(axis=0)
        dxs[t] = da @ params.lstm.w_x
        dh = da @ params.lstm.w_h

    n = cache.h_stack[0].shape[0]
    dh_node = np.zeros((n, k))
    dh_node[accounts] = dxs[-1]

    for t in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[t]
        lc = cache.layer_caches[t]
        h = cache.h_stack[t]
        h_next = cache.h_stack[t + 1]

        dpre_out = dh_node * (1.0 - h_next**2)
        grads.layers[t].w_agg += dpre_out.T @ lc.agg
        dagg = dpre_out @ layer.w_agg

        dagg_per_cand = dagg[cache.cand_src]
        dalpha = np.einsum("ij,ij->i", dagg_per_cand, h[cache.cand_dst])
        dh_prev = np.zeros((n, k))
        np.add.at(dh_prev, cache.cand_dst, lc.alpha[:, None] * dagg_per_cand)

        seg_dot = np.add.reduceat(lc.alpha * dalpha, cache.seg_starts)
        dscores = lc.alpha * (dalpha - seg_dot[cache.cand_src])

        grads.layers[t].attn += lc.z.T @ dscores
        dpre = (dscores[:, None] * layer.attn) * (1.0 - lc.z**2)

        grads.layers[t].w_src += dpre.T @ h[cache.cand_src]
        grads.layers[t].w_dst += dpre.T @ h[cache.cand_dst]
        dh_prev += np.add.reduceat(dpre @ layer.w_src, cache.seg_starts, axis=0)
        np.add.at(dh_prev, cache.cand_dst, dpre @ layer.w_dst)

        dh_prev[accounts] += dxs[t]
        dh_node = dh_prev

    dpre_in = dh_node[accounts] * (1.0 - cache.h_stack[0][accounts] ** 2)
    grads.w_in[:] = dpre_in.T @ cache.features
    return grads


PROB_CLAMP = 1e-12


def _clamped_bce(probs: np.ndarray, pos_mask: np.ndarray, neg_mask: np.ndarray) -> float:
    p = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.log(p[pos_mask]).sum() - np.log(1.0 - p[neg_mask]).sum())


def _bce_dprobs(probs: np.ndarray, pos_mask: np.ndarray, neg_mask: np.ndarray) -> np.ndarray:
    p = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    d = np.zeros_like(probs)
    d[pos_mask] = -1.0 / p[pos_mask]
    d[neg_mask] = 1.0 / (1.0 - p[neg_mask])
    return d


def gradient_check(
    params: GeniePathParams,
    g: DeviceSharingGraph,
    features: np.ndarray,
    positives: Iterable[int],
    negatives: Iterable[int],
    eps: float = 1e-5,
    corrupt: str | None = None,
) -> float:
    """Max relative error between analytic and central finite-difference gradients.

    positives/negatives index rows of the account feature matrix. The corrupt
    hook deliberately breaks one analytic gradient block (test fixture).
    """
    n_acc = len(g.account_indices())
    pos_mask = np.zeros(n_acc, dtype=bool)
    neg_mask = np.zeros(n_acc, dtype=bool)
    pos_mask[list(positives)] = True
    neg_mask[list(negatives)] = True
    if np.any(pos_mask & neg_mask):
        raise ValueError("positive and negative sets overlap")

    probs, cache = forward(params, g, features)
    grads = backward(params, cache, _bce_dprobs(probs, pos_mask, neg_mask))
    if corrupt is not None:
        if corrupt != "ws":
            raise ValueError(f"unknown corruption target {corrupt!r}")
        grads.layers[0].w_src += 0.1

    analytic = grads.to_vector()
    vec = params.to_vector()
    fd = np.zeros_like(analytic)
    for j in range(vec.size):
        bumped = vec.copy()
        bumped[j] = vec[j] + eps
        p_hi, _ = forward(params.from_vector(bumped), g, features)
        bumped[j] = vec[j] - eps
        p_lo, _ = forward(params.from_vector(bumped), g, features)
        fd[j] = (
            _clamped_bce(p_hi, pos_mask, neg_mask) - _clamped_bce(p_lo, pos_mask, neg_mask)
        ) / (2.0 * eps)

    rel = np.abs(analytic - fd) / np.maximum(1e-8, np.abs(analytic) + np.abs(fd))
    return float(rel.max())


CHECKPOINT_HEADER = "geniepath-checkpoint v1"


def save_params(params: GeniePathParams, path: str) -> None:
    """Text checkpoint at full float64 precision; load_params restores it exactly."""
    params.validate()
    lines = [CHECKPOINT_HEADER, f"dims {params.feature_dim} {params.hidden_dim} {params.n_layers}"]
    for name, arr in params.named_arrays():
        lines.append(f"tensor {name} {' '.join(str(d) for d in arr.shape)}")
        rows = arr if arr.ndim == 2 else arr[None, :]
        for row in rows:
            lines.append(" ".join(f"{v:.17g}" for v in row))
    lines.append("end")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_params(path: str) -> GeniePathParams:
    with open(path, encoding="utf-8") as fh:
        raw = fh.read().splitlines()

    def fail(lineno: int, message: str) -> CheckpointFormatError:
        return CheckpointFormatError(f"{path}:{lineno}: {message}")

    if not raw or raw[0] != CHECKPOINT_HEADER:
        raise fail(1, f"expected header {CHECKPOINT_HEADER!r}")
    if len(raw) < 2 or not raw[1].startswith("dims "):
        raise fail(2, "expected 'dims P K T'")
    try:
        p, k, t = (int(v) for v in raw[1].split()[1:])
    except ValueError:
        raise fail(2, f"bad dims line {raw[1]!r}") from None
    if p < 1 or k < 1 or t < 1:
        raise fail(2, f"dims must be positive, got {p} {k} {t}")

    arrays: list[np.ndarray] = []
    lineno = 2
    for name, shape in _tensor_spec(p, k, t):
        lineno += 1
        if lineno > len(raw):
            raise fail(lineno, f"missing tensor {name}")
        parts = raw[lineno - 1].split()
        if parts[:2] != ["tensor", name]:
            raise fail(lineno, f"expected tensor {name}, got {raw[lineno - 1]!r}")
        if tuple(int(d) for d in parts[2:]) != shape:
            raise fail(lineno, f"tensor {name} has shape {parts[2:]}, expected {shape}")
        n_rows = shape[0] if len(shape) == 2 else 1
        n_cols = shape[1] if len(shape) == 2 else shape[0]
        rows = []
        for _ in range(n_rows):
            lineno += 1
            if lineno > len(raw):
                raise fail(lineno, f"tensor {name} is truncated")
            try:
                row = np.array([float(v) for v in raw[lineno - 1].split()], dtype=np.float64)
            except ValueError:
                raise fail(lineno, f"non-numeric value in tensor {name}") from None
            if row.size != n_cols:
                raise fail(lineno, f"tensor {name} row has {row.size} values, expected {n_cols}")
            rows.append(row)
        arr = np.vstack(rows) if len(shape) == 2 else rows[0]
        if not np.all(np.isfinite(arr)):
            raise fail(lineno, f"tensor {name} contains non-finite values")
        arrays.append(arr)

    lineno += 1
    if lineno > len(raw) or raw[lineno - 1] != "end":
        raise fail(lineno, "missing 'end' terminator")
    params = _assemble(arrays, t)
    params.validate()
    return params
