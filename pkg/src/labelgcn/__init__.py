"""Graph convolutional networks with a label-aware first layer.

The package implements, from scratch on numpy: CSR propagation kernels
(standard and with per-node self-loop removal on label feature columns),
a two-convolution network with exact reverse-mode gradients, dataset
ingestion for the citation and Bitcoin-transaction benchmarks, and the
reproducible transductive / inductive experiment harness.
"""

__version__ = "0.1.0"

from .data import (
    DataError,
    GraphDataset,
    InputMatrix,
    LabelVisibility,
    SplitSizes,
    SplitSpec,
    build_input,
    feature_only_input,
    induced_subgraph,
    load_citation,
    load_elliptic,
    sample_split,
    visibility_for_phase,
)
from .metrics import (
    ConfusionCounts,
    accuracy,
    confusion_counts,
    label_average_histogram,
    neighbor_label_average,
    precision_recall_f1,
)
from .model import (
    ForwardTrace,
    ModelConfig,
    ModelParams,
    embeddings,
    forward,
    init_params,
    load_checkpoint,
    loss_and_gradients,
    predict,
    save_checkpoint,
)
from .sparse import (
    LabelColumnMask,
    SparseMatrix,
    build_adjacency,
    normalize_adjacency,
    propagate_masked,
    propagate_masked_adjoint,
    spmm,
)
from .training import (
    AdamState,
    DivergenceError,
    InductiveReport,
    SweepReport,
    TrainConfig,
    TrialResult,
    adam_step,
    run_inductive_elliptic,
    run_transductive_sweep,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
