"""The differentiable network: two graph convolutions and a dense softmax
head, with an optional label-masked first layer and exact reverse-mode
gradients.

The masked variant removes each node's self-loop on the label columns of
the input, so label information enters only through neighbors.  Its
prediction read-out additionally occludes the scored node's own label
entries, which makes "a node's prediction never reads its own label" hold
exactly at the API surface (see ``predict``); for nodes whose label block
is zero, as in every evaluation protocol here, the occlusion is a no-op.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .data import InputMatrix
from .sparse import SparseMatrix, propagate_masked, spmm

TRAIN = "train"
EVAL = "eval"

# probabilities are clamped here before the log so saturated rows cannot
# produce an infinite loss
LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    hidden_dim: int
    n_classes: int
    dropout_rate: float = 0.5
    masked_first_layer: bool = False

    def __post_init__(self):
        if min(self.input_dim, self.hidden_dim, self.n_classes) <= 0:
            raise ValueError("dimensions must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")


@dataclass
class ModelParams:
    """Weight matrices of the two convolutions and the dense head."""

    W0: np.ndarray
    W1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {"W0": self.W0, "W1": self.W1, "W2": self.W2, "b2": self.b2}

    def copy(self) -> "ModelParams":
        return ModelParams(self.W0.copy(), self.W1.copy(), self.W2.copy(), self.b2.copy())


@dataclass
class ForwardTrace:
    """Cached intermediates of one forward pass plus the output probabilities."""

    propagated: np.ndarray  # first-layer propagation of the input
    z1: np.ndarray
    keep1: np.ndarray | None
    q: np.ndarray  # second-layer propagation of dropped hidden state
    z2: np.ndarray
    keep2: np.ndarray | None
    h2_dropped: np.ndarray
    probs: np.ndarray
    mode: str


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Glorot-uniform weights and zero output bias, deterministic per seed."""
    rng = np.random.default_rng(seed)

    def glorot(fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    return ModelParams(
        W0=glorot(config.input_dim, config.hidden_dim),
        W1=glorot(config.hidden_dim, config.hidden_dim),
        W2=glorot(config.hidden_dim, config.n_classes),
        b2=np.zeros(config.n_classes),
    )


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def propagate_input(config: ModelConfig, ahat: SparseMatrix, inp: InputMatrix) -> np.ndarray:
    """First-layer propagation of the input (masked or standard).

    Constant for a fixed (adjacency, input) pair, so callers that run many
    forwards against one input compute it once and hand it to ``forward``.
    """
    if config.masked_first_layer:
        return propagate_masked(ahat, inp.X, inp.mask)
    return spmm(ahat, inp.X)


def forward(
    params: ModelParams,
    config: ModelConfig,
    ahat: SparseMatrix,
    inp: InputMatrix,
    mode: str = EVAL,
    dropout_seed: int = 0,
    propagated: np.ndarray | None = None,
) -> ForwardTrace:
    """Run the network and cache everything the backward pass needs.

    Train mode applies inverted dropout (masks scaled by 1/keep at train
    time) after each convolution, drawn deterministically from
    ``dropout_seed``; eval mode applies none.  ``propagated`` optionally
    supplies the output of ``propagate_input`` for this exact input.
    """
    if mode not in (TRAIN, EVAL):
        raise ValueError(f"unknown mode {mode!r}")
    if inp.X.shape[1] != config.input_dim:
        raise ValueError(f"input width {inp.X.shape[1]} != configured {config.input_dim}")
    if params.W0.shape != (config.input_dim, config.hidden_dim):
        raise ValueError("parameter shapes do not match the configuration")

    if propagated is None:
        p = propagate_input(config, ahat, inp)
    else:
        p = propagated
        if p.shape != (ahat.n_rows, config.input_dim):
            raise ValueError("precomputed propagation has the wrong shape")
    z1 = p @ params.W0
    h1 = np.maximum(z1, 0.0)

    keep1 = keep2 = None
    if mode == TRAIN and config.dropout_rate > 0.0:
        rng = np.random.default_rng(dropout_seed)
        keep_prob = 1.0 - config.dropout_rate
        keep1 = (rng.random(h1.shape) < keep_prob) / keep_prob
        h1 = h1 * keep1

    q = spmm(ahat, h1)
    z2 = q @ params.W1
    h2 = np.maximum(z2, 0.0)

    if mode == TRAIN and config.dropout_rate > 0.0:
        keep_prob = 1.0 - config.dropout_rate
        keep2 = (rng.random(h2.shape) < keep_prob) / keep_prob
        h2 = h2 * keep2

    logits = h2 @ params.W2 + params.b2
    probs = _softmax(logits)
    return ForwardTrace(p, z1, keep1, q, z2, keep2, h2, probs, mode)


def cross_entropy(
    probs: np.ndarray,
    nodes: np.ndarray,
    classes: np.ndarray,
    weights: np.ndarray | None = None,
) -> float:
    """Weighted mean negative log-probability of the target classes."""
    nodes = np.asarray(nodes, dtype=np.int64)
    classes = np.asarray(classes, dtype=np.int64)
    if nodes.size == 0:
        raise ValueError("empty target set")
    if weights is None:
        weights = np.ones(nodes.size)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != nodes.shape:
        raise ValueError("one weight per target node required")
    if np.any(weights < 0):
        raise ValueError("target weights must be non-negative")
    total = weights.sum()
    if total <= 0:
        raise ValueError("target weights sum to zero")
    picked = np.clip(probs[nodes, classes], LOG_CLAMP, None)
    return float(-(weights * np.log(picked)).sum() / total)


def loss_and_gradients(
    params: ModelParams,
    config: ModelConfig,
    ahat: SparseMatrix,
    inp: InputMatrix,
    nodes,
    classes,
    trace: ForwardTrace,
    weights=None,
) -> tuple[float, ModelParams]:
    """Cross-entropy over the target nodes and exact parameter gradients.

    ``nodes`` may contain repeats; a node listed m times (or once with
    weight m) contributes exactly m summands to the weighted mean.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    classes = np.asarray(classes, dtype=np.int64)
    if weights is None:
        weights = np.ones(nodes.size)
    weights = np.asarray(weights, dtype=np.float64)
    loss = cross_entropy(trace.probs, nodes, classes, weights)
    total = weights.sum()

    n = trace.probs.shape[0]
    dlogits = np.zeros_like(trace.probs)
    np.add.at(dlogits, nodes, trace.probs[nodes] * weights[:, None])
    np.subtract.at(dlogits, (nodes, classes), weights)
    dlogits /= total

    d_w2 = trace.h2_dropped.T @ dlogits
    d_b2 = dlogits.sum(axis=0)
    dh2 = dlogits @ params.W2.T
    if trace.keep2 is not None:
        dh2 = dh2 * trace.keep2
    dz2 = dh2 * (trace.z2 > 0.0)

    d_w1 = trace.q.T @ dz2
    dq = dz2 @ params.W1.T
    dh1 = spmm(ahat, dq)  # propagation matrix is symmetric
    if trace.keep1 is not None:
        dh1 = dh1 * trace.keep1
    dz1 = dh1 * (trace.z1 > 0.0)

    d_w0 = trace.propagated.T @ dz1
    return loss, ModelParams(d_w0, d_w1, d_w2, d_b2)


def _occluded_rows(inp: InputMatrix, nodes: np.ndarray) -> np.ndarray:
    """Requested nodes whose own label entries are non-zero."""
    cols = inp.mask.label_cols
    if cols.size == 0:
        return np.empty(0, dtype=np.int64)
    hot = np.any(inp.X[np.ix_(nodes, cols)] != 0.0, axis=1)
    return nodes[hot]


def _occluded_trace(params, config, ahat, inp, node) -> ForwardTrace:
    x = inp.X.copy()
    x[node, inp.mask.label_cols] = 0.0
    return forward(params, config, ahat, InputMatrix(x, inp.mask), mode=EVAL)


def predict(
    params: ModelParams,
    config: ModelConfig,
    ahat: SparseMatrix,
    inp: InputMatrix,
    nodes=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode class predictions and probability vectors for ``nodes``.

    For the masked variant a scored node's own label entries are zeroed
    before its forward pass, so its prediction is independent of its own
    label feature by construction.  Ties resolve to the lower class index.
    """
    nodes = np.arange(inp.X.shape[0]) if nodes is None else np.asarray(nodes, dtype=np.int64)
    trace = forward(params, config, ahat, inp, mode=EVAL)
    probs = trace.probs[nodes].copy()
    if config.masked_first_layer:
        for node in _occluded_rows(inp, nodes):
            own = _occluded_trace(params, config, ahat, inp, node)
            probs[np.flatnonzero(nodes == node)] = own.probs[node]
    return probs.argmax(axis=1), probs


def embeddings(
    params: ModelParams,
    config: ModelConfig,
    ahat: SparseMatrix,
    inp: InputMatrix,
    nodes=None,
) -> np.ndarray:
    """Last hidden activations (before the dense head) in eval mode.

    The masked variant applies the same own-label occlusion as ``predict``.
    """
    nodes = np.arange(inp.X.shape[0]) if nodes is None else np.asarray(nodes, dtype=np.int64)
    trace = forward(params, config, ahat, inp, mode=EVAL)
    out = np.maximum(trace.z2, 0.0)[nodes].copy()
    if config.masked_first_layer:
        for node in _occluded_rows(inp, nodes):
            own = _occluded_trace(params, config, ahat, inp, node)
            out[np.flatnonzero(nodes == node)] = np.maximum(own.z2[node], 0.0)
    return out


def save_checkpoint(path, params: ModelParams, config: ModelConfig) -> None:
    """Write parameters and a config echo; round-trips bit-exactly."""
    np.savez(
        path,
        config=np.frombuffer(json.dumps(asdict(config)).encode(), dtype=np.uint8),
        **{k: np.ascontiguousarray(v) for k, v in params.arrays().items()},
    )


def load_checkpoint(path) -> tuple[ModelParams, ModelConfig]:
    with np.load(path) as data:
        config = ModelConfig(**json.loads(bytes(data["config"]).decode()))
        params = ModelParams(data["W0"], data["W1"], data["W2"], data["b2"])
    return params, config
