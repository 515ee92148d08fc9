"""Dataset model, benchmark file ingestion, split sampling and the
label-augmented input matrix.

Citation graphs use the tab-separated .content/.cites layout; the Bitcoin
transaction graph uses its standard CSV triple.  Splits and label
visibility are sampled deterministically from explicit seeds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sparse import LabelColumnMask, SparseMatrix, build_adjacency

ONE_HOT = "one_hot"
SCALAR_MAP = "scalar_map"

# scalar label encoding: negative class -1, positive class +1, hidden 0
SCALAR_VALUES = (-1.0, 1.0)


class DataError(Exception):
    """Malformed or inconsistent dataset files."""


@dataclass
class GraphDataset:
    """An attributed graph with partially known node classes.

    ``labels[i]`` is the class id in 0..n_classes-1 or -1 when unknown.
    ``edges`` keeps the raw (deduplicated-on-load only by the adjacency
    builder) pair list; ``time_step`` is present for temporally indexed
    graphs only.
    """

    n: int
    d: int
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    edges: np.ndarray
    label_encoding: str = ONE_HOT
    class_names: list[str] | None = None
    time_step: np.ndarray | None = None
    node_ids: list[str] | None = None
    dropped_edge_count: int = 0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64).reshape(self.n, self.d)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(self.n)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if self.label_encoding not in (ONE_HOT, SCALAR_MAP):
            raise ValueError(f"unknown label encoding {self.label_encoding!r}")
        if self.label_encoding == SCALAR_MAP and self.n_classes != 2:
            raise ValueError("scalar label encoding requires a binary class set")
        if self.labels.size and self.labels.max() >= self.n_classes:
            raise ValueError("label id out of range")
        if self.time_step is not None:
            self.time_step = np.asarray(self.time_step, dtype=np.int64).reshape(self.n)

    @property
    def labeled_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.labels >= 0)

    @property
    def label_block_width(self) -> int:
        return 1 if self.label_encoding == SCALAR_MAP else self.n_classes

    def adjacency(self) -> SparseMatrix:
        return build_adjacency(self.edges, self.n)


def load_citation(content_path, cites_path, row_normalize: bool = False) -> GraphDataset:
    """Load a citation graph from .content / .cites files.

    Content lines are ``node_id <tab> f_1 .. f_d <tab> class_name``; cites
    lines are ``cited <tab> citing``.  Nodes are indexed densely in file
    order, class names map to ids in lexicographic order, and cite lines
    referencing unknown ids are dropped (counted on the result).
    ``row_normalize`` optionally scales each feature row to unit sum.
    """
    ids: dict[str, int] = {}
    rows: list[np.ndarray] = []
    names: list[str] = []
    raw_classes: list[str] = []
    d = None
    with open(content_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) < 3:
                raise DataError(f"{content_path}:{lineno}: expected id, features and class")
            if d is None:
                d = len(parts) - 2
            elif len(parts) != d + 2:
                raise DataError(f"{content_path}:{lineno}: expected {d} feature values")
            node_id = parts[0]
            if node_id in ids:
                raise DataError(f"{content_path}:{lineno}: duplicate node id {node_id!r}")
            try:
                feats = np.array([float(v) for v in parts[1:-1]])
            except ValueError as exc:
                raise DataError(f"{content_path}:{lineno}: non-numeric feature value") from exc
            ids[node_id] = len(rows)
            rows.append(feats)
            names.append(node_id)
            raw_classes.append(parts[-1])
    if not rows:
        raise DataError(f"{content_path}: empty content file")
    class_names = sorted(set(raw_classes))
    class_map = {c: k for k, c in enumerate(class_names)}
    labels = np.array([class_map[c] for c in raw_classes], dtype=np.int64)

    edges: list[tuple[int, int]] = []
    dropped = 0
    with open(cites_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DataError(f"{cites_path}:{lineno}: expected two node ids")
            cited, citing = parts
            if cited in ids and citing in ids:
                edges.append((ids[cited], ids[citing]))
            else:
                dropped += 1

    features = np.vstack(rows)
    if row_normalize:
        sums = features.sum(axis=1, keepdims=True)
        np.divide(features, sums, out=features, where=sums != 0)
    return GraphDataset(
        n=len(rows),
        d=d,
        features=features,
        labels=labels,
        n_classes=len(class_names),
        edges=np.array(edges, dtype=np.int64).reshape(-1, 2),
        label_encoding=ONE_HOT,
        class_names=class_names,
        node_ids=names,
        dropped_edge_count=dropped,
    )


def load_elliptic(features_csv, classes_csv, edgelist_csv) -> GraphDataset:
    """Load the Bitcoin transaction graph from its standard CSV triple.

    The headerless features file carries the transaction id, the time step
    and 165 numeric features per row; the time step is kept both as the
    per-node time index and as the first feature column.  Class "1" maps
    to the positive (illicit) class, "2" to licit, "unknown" stays
    unlabeled.
    """
    import pandas as pd

    feats = pd.read_csv(features_csv, header=None)
    if feats.shape[1] < 3:
        raise DataError(f"{features_csv}: expected id, time step and feature columns")
    tx_ids = feats.iloc[:, 0].astype(str).to_numpy()
    if len(set(tx_ids)) != len(tx_ids):
        raise DataError(f"{features_csv}: duplicate transaction id")
    index = {t: i for i, t in enumerate(tx_ids)}
    try:
        matrix = feats.iloc[:, 1:].to_numpy(dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{features_csv}: non-numeric feature value") from exc
    time_step = matrix[:, 0].astype(np.int64)

    classes = pd.read_csv(classes_csv)
    if classes.shape[1] != 2:
        raise DataError(f"{classes_csv}: expected txId,class columns")
    if classes.shape[0] != feats.shape[0]:
        raise DataError(
            f"row-count mismatch: {feats.shape[0]} feature rows vs {classes.shape[0]} class rows"
        )
    labels = np.full(len(tx_ids), -1, dtype=np.int64)
    for tx, cls in zip(classes.iloc[:, 0].astype(str), classes.iloc[:, 1].astype(str)):
        if tx not in index:
            raise DataError(f"{classes_csv}: unknown transaction id {tx!r}")
        if cls == "1":
            labels[index[tx]] = 1
        elif cls == "2":
            labels[index[tx]] = 0
        elif cls != "unknown":
            raise DataError(f"{classes_csv}: unknown class value {cls!r}")

    edge_df = pd.read_csv(edgelist_csv)
    if edge_df.shape[1] != 2:
        raise DataError(f"{edgelist_csv}: expected txId1,txId2 columns")
    edges = np.empty((edge_df.shape[0], 2), dtype=np.int64)
    for k, (a, b) in enumerate(zip(edge_df.iloc[:, 0].astype(str), edge_df.iloc[:, 1].astype(str))):
        if a not in index or b not in index:
            raise DataError(f"{edgelist_csv}: edge references unknown transaction id")
        edges[k, 0] = index[a]
        edges[k, 1] = index[b]

    return GraphDataset(
        n=len(tx_ids),
        d=matrix.shape[1],
        features=matrix,
        labels=labels,
        n_classes=2,
        edges=edges,
        label_encoding=SCALAR_MAP,
        class_names=["licit", "illicit"],
        time_step=time_step,
        node_ids=list(tx_ids),
    )


@dataclass(frozen=True)
class SplitSizes:
    train: int
    validation: int
    test: int
    support: int

    def __post_init__(self):
        if min(self.train, self.validation, self.test, self.support) < 0:
            raise ValueError("split sizes must be non-negative")

    @property
    def total(self) -> int:
        return self.train + self.validation + self.test + self.support


@dataclass(frozen=True)
class SplitSpec:
    """Disjoint train / validation / test / support node sets."""

    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    support: np.ndarray

    def __post_init__(self):
        for name in ("train", "validation", "test", "support"):
            arr = np.sort(np.asarray(getattr(self, name), dtype=np.int64).ravel())
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        all_nodes = np.concatenate([self.train, self.validation, self.test, self.support])
        if np.unique(all_nodes).size != all_nodes.size:
            raise ValueError("split sets must be pairwise disjoint")


def sample_split(ds: GraphDataset, sizes: SplitSizes, seed: int) -> SplitSpec:
    """Uniform random disjoint split over the labeled nodes."""
    labeled = ds.labeled_nodes
    if sizes.total > labeled.size:
        raise ValueError(
            f"split needs {sizes.total} labeled nodes, dataset has {labeled.size}"
        )
    perm = np.random.default_rng(seed).permutation(labeled)
    a = sizes.train
    b = a + sizes.validation
    c = b + sizes.test
    e = c + sizes.support
    return SplitSpec(perm[:a], perm[a:b], perm[b:c], perm[c:e])


@dataclass(frozen=True)
class LabelVisibility:
    """Nodes whose labels are exposed as input features."""

    visible: np.ndarray

    def __post_init__(self):
        arr = np.unique(np.asarray(self.visible, dtype=np.int64).ravel())
        arr.flags.writeable = False
        object.__setattr__(self, "visible", arr)

    def __len__(self) -> int:
        return int(self.visible.size)


TRAINING = "training"
INFERENCE = "inference"


def visibility_for_phase(
    split: SplitSpec,
    phase: str,
    support_fraction: float = 0.0,
    seed: int = 0,
) -> LabelVisibility:
    """Visible-label set for a phase.

    Training exposes train and validation labels only.  Inference
    additionally exposes a fixed-permutation prefix of the support set, so
    visibility is nested across fractions for one seed.  Test labels are
    never exposed.
    """
    if phase not in (TRAINING, INFERENCE):
        raise ValueError(f"unknown phase {phase!r}")
    if not 0.0 <= support_fraction <= 1.0:
        raise ValueError("support fraction must lie in [0, 1]")
    base = [split.train, split.validation]
    if phase == INFERENCE:
        k = int(round(support_fraction * split.support.size))
        perm = np.random.default_rng(seed).permutation(split.support)
        base.append(perm[:k])
    vis = LabelVisibility(np.concatenate(base))
    if np.intersect1d(vis.visible, split.test).size:
        raise AssertionError("test labels must never be visible")
    return vis


@dataclass(frozen=True)
class InputMatrix:
    """Feature matrix with a trailing label block and its column mask."""

    X: np.ndarray
    mask: LabelColumnMask

    @property
    def width(self) -> int:
        return int(self.X.shape[1])


def build_input(ds: GraphDataset, vis: LabelVisibility) -> InputMatrix:
    """Assemble [raw features | label block] under a visibility set.

    One-hot encoding appends one column per class; the scalar encoding
    appends a single column mapping the negative class to -1 and the
    positive class to +1.  Label entries of nodes outside the visibility
    set (and of unlabeled nodes) are zero.
    """
    width = ds.label_block_width
    block = np.zeros((ds.n, width))
    if vis.visible.size and (vis.visible.min() < 0 or vis.visible.max() >= ds.n):
        raise ValueError("visibility set references nodes outside the dataset")
    visible = vis.visible[ds.labels[vis.visible] >= 0]
    if ds.label_encoding == ONE_HOT:
        block[visible, ds.labels[visible]] = 1.0
    else:
        block[visible, 0] = np.where(ds.labels[visible] == 1, SCALAR_VALUES[1], SCALAR_VALUES[0])
    x = np.concatenate([ds.features, block], axis=1)
    return InputMatrix(x, LabelColumnMask.trailing(x.shape[1], width))


def feature_only_input(ds: GraphDataset) -> InputMatrix:
    """Raw features with no label block (the plain-model input)."""
    return InputMatrix(ds.features.copy(), LabelColumnMask([]))


def induced_subgraph(ds: GraphDataset, nodes) -> tuple[GraphDataset, np.ndarray]:
    """Subgraph on ``nodes`` (edges with both endpoints kept, reindexed).

    Returns the new dataset and the kept nodes in their new order, so
    original index i maps to the position of i in the returned array.
    """
    nodes = np.unique(np.asarray(nodes, dtype=np.int64))
    remap = np.full(ds.n, -1, dtype=np.int64)
    remap[nodes] = np.arange(nodes.size)
    keep = (remap[ds.edges[:, 0]] >= 0) & (remap[ds.edges[:, 1]] >= 0)
    edges = remap[ds.edges[keep]]
    sub = GraphDataset(
        n=nodes.size,
        d=ds.d,
        features=ds.features[nodes],
        labels=ds.labels[nodes],
        n_classes=ds.n_classes,
        edges=edges,
        label_encoding=ds.label_encoding,
        class_names=ds.class_names,
        time_step=None if ds.time_step is None else ds.time_step[nodes],
        node_ids=None if ds.node_ids is None else [ds.node_ids[i] for i in nodes],
    )
    return sub, nodes
