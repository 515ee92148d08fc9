"""Full-batch Adam training with early stopping, plus the two experiment
drivers: the transductive support-fraction sweep and the inductive
time-stepped evaluation.

Every trial draws its randomness from seeds derived deterministically
from a base seed and the trial coordinates, so results are identical for
any worker count and bit-identical between runs.
"""

from __future__ import annotations

import csv
import json
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import (
    INFERENCE,
    TRAINING,
    GraphDataset,
    InputMatrix,
    SplitSizes,
    build_input,
    feature_only_input,
    induced_subgraph,
    sample_split,
    visibility_for_phase,
)
from .metrics import accuracy, confusion_counts, precision_recall_f1
from .model import (
    EVAL,
    TRAIN,
    ModelConfig,
    ModelParams,
    cross_entropy,
    forward,
    init_params,
    loss_and_gradients,
    predict,
    propagate_input,
)
from .sparse import SparseMatrix, normalize_adjacency

GCN = "gcn"
LABEL_GCN = "label-gcn"
VARIANTS = (GCN, LABEL_GCN)

# tags for deriving independent per-trial random streams
_SEED_SPLIT = 11
_SEED_INIT = 22
_SEED_DROPOUT = 33
_SEED_SUPPORT = 44


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


def derive_seed(base: int, *tags: int) -> int:
    """Deterministic child seed for a (base, tag...) coordinate."""
    return int(np.random.SeedSequence([int(base), *map(int, tags)]).generate_state(1)[0])


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    max_epochs: int = 300
    patience: int | None = 10
    positive_oversample: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be at least 1 when enabled")
        if self.positive_oversample < 1:
            raise ValueError("oversample factor must be at least 1")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def like(cls, params: ModelParams) -> "AdamState":
        return cls(
            m={k: np.zeros_like(a) for k, a in params.arrays().items()},
            v={k: np.zeros_like(a) for k, a in params.arrays().items()},
        )


def adam_step(params: ModelParams, grads: ModelParams, state: AdamState, config: TrainConfig) -> None:
    """Standard bias-corrected Adam update, in place."""
    state.t += 1
    c1 = 1.0 - config.beta1**state.t
    c2 = 1.0 - config.beta2**state.t
    for name, p in params.arrays().items():
        g = grads.arrays()[name]
        m, v = state.m[name], state.v[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * g * g
        p -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)


@dataclass
class TrialResult:
    best_epoch: int
    epochs_run: int
    train_losses: list[float]
    val_losses: list[float]
    metrics: dict = field(default_factory=dict)


def train(
    ahat: SparseMatrix,
    inp: InputMatrix,
    train_nodes,
    train_classes,
    model_config: ModelConfig,
    train_config: TrainConfig,
    init_seed: int,
    dropout_seed: int,
    val_nodes=None,
    val_classes=None,
    train_weights=None,
) -> tuple[ModelParams, TrialResult]:
    """Full-batch Adam with validation-loss early stopping.

    Stops once validation loss has not improved for ``patience``
    consecutive epochs and returns the parameters of the best-validation
    epoch; with patience disabled it runs ``max_epochs`` and returns the
    final parameters.  Raises DivergenceError on a non-finite loss.
    """
    train_nodes = np.asarray(train_nodes, dtype=np.int64)
    train_classes = np.asarray(train_classes, dtype=np.int64)
    params = init_params(model_config, init_seed)
    state = AdamState.like(params)
    epoch_seeds = np.random.SeedSequence(dropout_seed).generate_state(train_config.max_epochs)
    # the first-layer propagation of the fixed training input is reused
    # across every epoch's forward passes
    propagated = propagate_input(model_config, ahat, inp)

    has_val = val_nodes is not None and len(val_nodes) > 0
    stop_early = train_config.patience is not None and has_val
    best_loss = np.inf
    best_params = params.copy()
    best_epoch = 0
    stall = 0
    train_losses: list[float] = []
    val_losses: list[float] = []

    for epoch in range(1, train_config.max_epochs + 1):
        trace = forward(
            params,
            model_config,
            ahat,
            inp,
            mode=TRAIN,
            dropout_seed=int(epoch_seeds[epoch - 1]),
            propagated=propagated,
        )
        loss, grads = loss_and_gradients(
            params, model_config, ahat, inp, train_nodes, train_classes, trace, train_weights
        )
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite training loss at epoch {epoch}")
        adam_step(params, grads, state, train_config)
        train_losses.append(loss)

        if has_val:
            eval_trace = forward(params, model_config, ahat, inp, mode=EVAL, propagated=propagated)
            val_loss = cross_entropy(eval_trace.probs, val_nodes, val_classes)
            if not np.isfinite(val_loss):
                raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
            val_losses.append(val_loss)
            if stop_early:
                if val_loss < best_loss:
                    best_loss = val_loss
                    best_params = params.copy()
                    best_epoch = epoch
                    stall = 0
                else:
                    stall += 1
                    if stall >= train_config.patience:
                        break

    if stop_early:
        return best_params, TrialResult(best_epoch, len(train_losses), train_losses, val_losses)
    return params, TrialResult(len(train_losses), len(train_losses), train_losses, val_losses)


def _oversample_weights(classes: np.ndarray, factor: int, n_classes: int) -> np.ndarray | None:
    if factor <= 1:
        return None
    if n_classes != 2:
        raise ValueError("class oversampling is defined for binary datasets only")
    return np.where(classes == 1, float(factor), 1.0)


def evaluate_nodes(params, model_config, ahat, inp, nodes, labels, positive_class=None) -> dict:
    """Accuracy (and positive-class precision/recall/F1 when requested)."""
    preds, _ = predict(params, model_config, ahat, inp, nodes)
    out = {"accuracy": accuracy(preds, labels)}
    if positive_class is not None:
        p, r, f1 = precision_recall_f1(preds, labels, positive_class)
        out.update({"precision": p, "recall": r, "f1": f1})
    return out


def _mean_std(values: list[float]) -> tuple[float | None, float | None, int, int]:
    """Mean and sample std over the defined entries, plus n and skip count."""
    defined = [v for v in values if v is not None]
    skipped = len(values) - len(defined)
    if not defined:
        return None, None, 0, skipped
    arr = np.asarray(defined)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std, len(defined), skipped


# ---------------------------------------------------------------------------
# transductive sweep

_POOL_CTX: dict = {}


def _pool_call(item):
    return _POOL_CTX["fn"](item)


def _map_jobs(fn, items, jobs: int) -> list:
    """Run fn over items, optionally on a fork-based process pool.

    Results are ordered and independent of the worker count; jobs=1 is the
    bit-exact sequential reference.
    """
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    _POOL_CTX["fn"] = fn
    try:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=min(jobs, len(items)), mp_context=ctx) as ex:
            return list(ex.map(_pool_call, items))
    finally:
        _POOL_CTX.pop("fn", None)


@dataclass
class SweepReport:
    """Aggregated sweep metrics plus full per-trial detail."""

    variant: str
    rows: list[dict]
    trials: list[dict]
    requested_trials: int
    aborted_trials: int

    @property
    def abort_fraction(self) -> float:
        return self.aborted_trials / self.requested_trials if self.requested_trials else 0.0

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "variant": self.variant,
                    "requested_trials": self.requested_trials,
                    "aborted_trials": self.aborted_trials,
                    "rows": self.rows,
                    "trials": self.trials,
                },
                fh,
                indent=2,
                sort_keys=True,
            )

    def to_csv(self, path) -> None:
        if not self.rows:
            return
        fields = list(self.rows[0].keys())
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for row in self.rows:
                writer.writerow(row)


def run_transductive_sweep(
    ds: GraphDataset,
    sizes: SplitSizes,
    support_fractions,
    n_splits: int,
    n_inits: int,
    variant: str = LABEL_GCN,
    hidden_dim: int = 16,
    dropout_rate: float = 0.5,
    train_config: TrainConfig = TrainConfig(),
    base_seed: int = 0,
    jobs: int = 1,
) -> SweepReport:
    """Train per split x initialization, then re-evaluate the trained model
    under inference-phase visibility for each support fraction.

    The plain model carries no label block, so its metrics do not depend
    on the fraction and are reported as a single row.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown model variant {variant!r}")
    fractions = [float(f) for f in support_fractions]
    if any(not 0.0 <= f <= 1.0 for f in fractions):
        raise ValueError("support fractions must lie in [0, 1]")
    ahat = normalize_adjacency(ds.adjacency())
    positive = 1 if ds.n_classes == 2 else None

    def run_trial(coords: tuple[int, int]) -> dict:
        split_idx, init_idx = coords
        split = sample_split(ds, sizes, derive_seed(base_seed, _SEED_SPLIT, split_idx))
        inp = (
            build_input(ds, visibility_for_phase(split, TRAINING))
            if variant == LABEL_GCN
            else feature_only_input(ds)
        )
        model_config = ModelConfig(
            input_dim=inp.width,
            hidden_dim=hidden_dim,
            n_classes=ds.n_classes,
            dropout_rate=dropout_rate,
            masked_first_layer=variant == LABEL_GCN,
        )
        train_classes = ds.labels[split.train]
        weights = _oversample_weights(train_classes, train_config.positive_oversample, ds.n_classes)
        record: dict = {"split": split_idx, "init": init_idx, "aborted": False}
        try:
            params, result = train(
                ahat,
                inp,
                split.train,
                train_classes,
                model_config,
                train_config,
                init_seed=derive_seed(base_seed, _SEED_INIT, split_idx, init_idx),
                dropout_seed=derive_seed(base_seed, _SEED_DROPOUT, split_idx, init_idx),
                val_nodes=split.validation,
                val_classes=ds.labels[split.validation],
                train_weights=weights,
            )
        except DivergenceError as exc:
            record.update({"aborted": True, "reason": str(exc)})
            return record
        record["best_epoch"] = result.best_epoch
        record["epochs_run"] = result.epochs_run
        record["validation"] = evaluate_nodes(
            params, model_config, ahat, inp, split.validation, ds.labels[split.validation], positive
        )
        support_seed = derive_seed(base_seed, _SEED_SUPPORT, split_idx, init_idx)
        evaluations = []
        if variant == LABEL_GCN:
            for fraction in fractions:
                vis = visibility_for_phase(split, INFERENCE, fraction, support_seed)
                inp_eval = build_input(ds, vis)
                evaluations.append(
                    (
                        fraction,
                        evaluate_nodes(
                            params, model_config, ahat, inp_eval, split.test, ds.labels[split.test], positive
                        ),
                    )
                )
        else:
            evaluations.append(
                (None, evaluate_nodes(params, model_config, ahat, inp, split.test, ds.labels[split.test], positive))
            )
        record["test"] = [{"fraction": f, **m} for f, m in evaluations]
        return record

    coords = [(s, i) for s in range(n_splits) for i in range(n_inits)]
    trials = _map_jobs(run_trial, coords, jobs)
    completed = [t for t in trials if not t["aborted"]]
    aborted = len(trials) - len(completed)

    rows = []
    row_fractions = fractions if variant == LABEL_GCN else [None]
    for k, fraction in enumerate(row_fractions):
        row: dict = {"fraction": fraction}
        metric_names = completed[0]["test"][k].keys() if completed else []
        for name in metric_names:
            if name == "fraction":
                continue
            mean, std, n, skipped = _mean_std([t["test"][k][name] for t in completed])
            row[f"{name}_mean"] = mean
            row[f"{name}_std"] = std
            if name == "accuracy":
                row["n_trials"] = n
            if skipped:
                row[f"{name}_undefined"] = skipped
        rows.append(row)
    return SweepReport(variant, rows, trials, len(trials), aborted)


# ---------------------------------------------------------------------------
# inductive time-stepped evaluation


@dataclass
class InductiveReport:
    """Per-step and pooled metrics for the time-stepped evaluation."""

    variant: str
    train_through: int
    shutdown_step: int
    steps: list[dict]
    aggregate: dict
    per_init: list[dict]
    skipped_steps: list[int]

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "variant": self.variant,
                    "train_through": self.train_through,
                    "shutdown_step": self.shutdown_step,
                    "steps": self.steps,
                    "aggregate": self.aggregate,
                    "per_init": self.per_init,
                    "skipped_steps": self.skipped_steps,
                },
                fh,
                indent=2,
                sort_keys=True,
            )

    def to_csv(self, path) -> None:
        if not self.steps:
            return
        fields = list(self.steps[0].keys())
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for row in self.steps:
                writer.writerow(row)


def _pooled_metrics(counts: dict) -> dict:
    tp, fp, fn, correct, total = (counts[k] for k in ("tp", "fp", "fn", "correct", "total"))
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    f1 = None
    if precision is not None and recall is not None and precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    return {
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "accuracy": correct / total if total else None,
    }


def run_inductive_elliptic(
    ds: GraphDataset,
    variant: str = LABEL_GCN,
    hidden_dim: int = 100,
    dropout_rate: float = 0.5,
    train_config: TrainConfig | None = None,
    n_inits: int = 5,
    base_seed: int = 0,
    jobs: int = 1,
    train_through: int = 34,
    shutdown_step: int = 43,
) -> InductiveReport:
    """Train on the early-time subgraph, then score each later time step on
    the graph grown up to that step.

    At test step t all labeled nodes' labels are visible to the
    label-aware model except the nodes at t being scored.  Positive-class
    metrics are pooled over the whole test window per initialization,
    and over the post-shutdown window for the shift-robustness column.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown model variant {variant!r}")
    if ds.time_step is None:
        raise ValueError("inductive evaluation needs per-node time steps")
    if train_config is None:
        train_config = TrainConfig(
            learning_rate=0.001, max_epochs=1000, patience=None, positive_oversample=6
        )
    max_step = int(ds.time_step.max())
    if max_step <= train_through:
        raise ValueError(f"no time steps after {train_through} to test on")

    train_ds, _ = induced_subgraph(ds, np.flatnonzero(ds.time_step <= train_through))
    ahat_train = normalize_adjacency(train_ds.adjacency())
    labeled = train_ds.labeled_nodes
    if variant == LABEL_GCN:
        from .data import LabelVisibility

        inp_train = build_input(train_ds, LabelVisibility(labeled))
    else:
        inp_train = feature_only_input(train_ds)
    model_config = ModelConfig(
        input_dim=inp_train.width,
        hidden_dim=hidden_dim,
        n_classes=ds.n_classes,
        dropout_rate=dropout_rate,
        masked_first_layer=variant == LABEL_GCN,
    )
    train_classes = train_ds.labels[labeled]
    weights = _oversample_weights(train_classes, train_config.positive_oversample, ds.n_classes)

    def train_one(init_idx: int) -> ModelParams:
        params, _ = train(
            ahat_train,
            inp_train,
            labeled,
            train_classes,
            model_config,
            train_config,
            init_seed=derive_seed(base_seed, _SEED_INIT, init_idx),
            dropout_seed=derive_seed(base_seed, _SEED_DROPOUT, init_idx),
        )
        return params

    models = _map_jobs(train_one, range(n_inits), jobs)

    step_records: dict[int, list[dict]] = {}
    pooled = [
        {"tp": 0, "fp": 0, "fn": 0, "correct": 0, "total": 0} for _ in range(n_inits)
    ]
    pooled_late = [
        {"tp": 0, "fp": 0, "fn": 0, "correct": 0, "total": 0} for _ in range(n_inits)
    ]
    skipped_steps: list[int] = []
    for step in range(train_through + 1, max_step + 1):
        sub, kept = induced_subgraph(ds, np.flatnonzero(ds.time_step <= step))
        test_local = np.flatnonzero((sub.time_step == step) & (sub.labels >= 0))
        if test_local.size == 0:
            skipped_steps.append(step)
            continue
        ahat = normalize_adjacency(sub.adjacency())
        if variant == LABEL_GCN:
            from .data import LabelVisibility

            visible = np.flatnonzero((sub.labels >= 0) & (sub.time_step < step))
            inp = build_input(sub, LabelVisibility(visible))
        else:
            inp = feature_only_input(sub)
        targets = sub.labels[test_local]
        for init_idx, params in enumerate(models):
            preds, _ = predict(params, model_config, ahat, inp, test_local)
            counts = confusion_counts(preds, targets, positive_class=1)
            p, r, f1 = precision_recall_f1(preds, targets, positive_class=1)
            step_records.setdefault(step, []).append(
                {"precision": p, "recall": r, "f1": f1, "n_test": int(test_local.size)}
            )
            for bucket in (pooled[init_idx],) + ((pooled_late[init_idx],) if step >= shutdown_step else ()):
                bucket["tp"] += counts.tp
                bucket["fp"] += counts.fp
                bucket["fn"] += counts.fn
                bucket["correct"] += counts.tp + counts.tn
                bucket["total"] += counts.total

    steps = []
    for step in sorted(step_records):
        row: dict = {"step": step, "n_test": step_records[step][0]["n_test"]}
        for name in ("precision", "recall", "f1"):
            mean, std, n, skipped = _mean_std([rec[name] for rec in step_records[step]])
            row[f"{name}_mean"] = mean
            row[f"{name}_std"] = std
            if skipped:
                row[f"{name}_undefined"] = skipped
        steps.append(row)

    per_init = []
    for init_idx in range(n_inits):
        per_init.append(
            {
                "init": init_idx,
                "window": _pooled_metrics(pooled[init_idx]),
                "post_shutdown": _pooled_metrics(pooled_late[init_idx]),
            }
        )
    aggregate: dict = {}
    for scope in ("window", "post_shutdown"):
        for name in ("precision", "recall", "f1", "accuracy"):
            mean, std, n, skipped = _mean_std([rec[scope][name] for rec in per_init])
            key = name if scope == "window" else f"{name}_post_shutdown"
            aggregate[f"{key}_mean"] = mean
            aggregate[f"{key}_std"] = std
    return InductiveReport(
        variant, train_through, shutdown_step, steps, aggregate, per_init, skipped_steps
    )
