"""Command-line surface: train, sweep, inductive, gradcheck, analyze-labels.

Every run resolves its settings from (lowest to highest precedence)
per-dataset defaults, an optional flat key=value config file, and explicit
flags, then writes the fully resolved manifest beside its outputs.
Re-running a command from its manifest reproduces the metrics bit-exactly
in single-threaded mode.

Exit codes: 0 ok, 1 usage error, 2 data error, 3 divergence or a failed
quality threshold.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    INFERENCE,
    TRAINING,
    DataError,
    GraphDataset,
    SplitSizes,
    build_input,
    feature_only_input,
    load_citation,
    load_elliptic,
    sample_split,
    visibility_for_phase,
)
from .gradcheck import finite_difference_check
from .metrics import label_average_histogram, neighbor_label_average
from .model import ModelConfig, save_checkpoint
from .sparse import normalize_adjacency
from .training import (
    GCN,
    LABEL_GCN,
    VARIANTS,
    DivergenceError,
    TrainConfig,
    derive_seed,
    evaluate_nodes,
    run_inductive_elliptic,
    run_transductive_sweep,
    train,
    _SEED_DROPOUT,
    _SEED_INIT,
    _SEED_SPLIT,
    _SEED_SUPPORT,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_THRESHOLD = 3

# a sweep is rejected when more than this fraction of trials abort
MAX_ABORT_FRACTION = 0.05

GRADCHECK_TOLERANCE = 1e-6


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class DatasetPreset:
    kind: str
    hidden_dim: int
    learning_rate: float
    patience: int
    max_epochs: int
    sizes: tuple[int, int, int, int]
    files: tuple[str, ...]


DATASETS = {
    "cora": DatasetPreset(
        "citation", 16, 0.01, 10, 300, (140, 140, 273, 2155), ("cora/cora.content", "cora/cora.cites")
    ),
    "citeseer": DatasetPreset(
        "citation", 16, 0.01, 10, 300, (120, 120, 332, 2740), ("citeseer/citeseer.content", "citeseer/citeseer.cites")
    ),
    "pubmed": DatasetPreset(
        "citation", 16, 0.01, 10, 300, (60, 60, 1973, 17624), ("pubmed/pubmed.content", "pubmed/pubmed.cites")
    ),
    "elliptic": DatasetPreset(
        "elliptic",
        100,
        0.01,
        30,
        300,
        (4656, 4656, 9314, 27938),
        (
            "elliptic_bitcoin_dataset/elliptic_txs_features.csv",
            "elliptic_bitcoin_dataset/elliptic_txs_classes.csv",
            "elliptic_bitcoin_dataset/elliptic_txs_edgelist.csv",
        ),
    ),
}

# paper-recipe settings for the time-stepped run, applied by cmd_inductive
# when the user does not override them
INDUCTIVE_LEARNING_RATE = 0.001
INDUCTIVE_EPOCHS = 1000
INDUCTIVE_OVERSAMPLE = 6


def parse_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` lines; blank lines and # comments ignored."""
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = stripped.partition("=")
            values[key.strip()] = value.strip()
    return values


_FIELD_TYPES = {
    "dataset": str,
    "data_dir": str,
    "content": str,
    "cites": str,
    "model": str,
    "hidden_dim": int,
    "dropout": float,
    "learning_rate": float,
    "max_epochs": int,
    "patience": int,  # 0 disables early stopping
    "oversample": int,
    "row_normalize": bool,
    "seed": int,
    "out_dir": str,
    "support_fraction": float,
    "fractions": str,
    "n_splits": int,
    "n_inits": int,
    "baseline": bool,
    "jobs": int,
    "train_size": int,
    "val_size": int,
    "test_size": int,
    "support_size": int,
    "train_through": int,
    "shutdown_step": int,
    "bins": int,
    "corrupt": float,
}

_DEFAULTS = {
    "data_dir": "data",
    "model": LABEL_GCN,
    "dropout": 0.5,
    "oversample": 1,
    "row_normalize": False,
    "seed": 0,
    "support_fraction": 1.0,
    "fractions": "0,0.25,0.62,1.0",
    "n_splits": 20,
    "n_inits": 5,
    "baseline": False,
    "jobs": 1,
    "train_through": 34,
    "shutdown_step": 43,
    "bins": 41,
    "corrupt": 0.0,
}


def _coerce(key: str, raw):
    kind = _FIELD_TYPES[key]
    if isinstance(raw, str):
        if kind is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise UsageError(f"invalid boolean for {key}: {raw!r}")
        try:
            return kind(raw)
        except ValueError as exc:
            raise UsageError(f"invalid value for {key}: {raw!r}") from exc
    return raw


def resolve_settings(args: argparse.Namespace) -> dict:
    """Merge preset defaults, config-file values and explicit flags."""
    settings = dict(_DEFAULTS)
    file_values = parse_config_file(args.config) if args.config else {}
    for key, raw in file_values.items():
        if key in ("command", "version"):
            continue
        if key not in _FIELD_TYPES:
            raise UsageError(f"unknown config key {key!r}")
        settings[key] = _coerce(key, raw)
    for key in _FIELD_TYPES:
        flag = getattr(args, key, None)
        if flag is not None:
            settings[key] = _coerce(key, flag)

    dataset = settings.get("dataset")
    if dataset is not None and dataset not in DATASETS:
        raise UsageError(f"unknown dataset {dataset!r} (choose from {', '.join(DATASETS)})")
    preset = DATASETS.get(dataset) if dataset else None
    if preset is not None:
        settings.setdefault("hidden_dim", preset.hidden_dim)
        settings.setdefault("learning_rate", preset.learning_rate)
        settings.setdefault("patience", preset.patience)
        settings.setdefault("max_epochs", preset.max_epochs)
        settings.setdefault("train_size", preset.sizes[0])
        settings.setdefault("val_size", preset.sizes[1])
        settings.setdefault("test_size", preset.sizes[2])
        settings.setdefault("support_size", preset.sizes[3])
    else:
        # custom graphs fall back to the citation-scale recipe
        settings.setdefault("hidden_dim", 16)
        settings.setdefault("learning_rate", 0.01)
        settings.setdefault("patience", 10)
        settings.setdefault("max_epochs", 300)
    if settings.get("model") not in VARIANTS:
        raise UsageError(f"model must be one of {', '.join(VARIANTS)}")
    return settings


def load_dataset(settings: dict) -> GraphDataset:
    data_dir = Path(settings["data_dir"])
    dataset = settings.get("dataset")
    if settings.get("content"):
        if not settings.get("cites"):
            raise UsageError("--content requires --cites")
        return load_citation(settings["content"], settings["cites"], settings["row_normalize"])
    if dataset is None:
        raise UsageError("no dataset selected: pass --dataset or --content/--cites")
    preset = DATASETS[dataset]
    paths = [data_dir / rel for rel in preset.files]
    missing = [str(p) for p in paths if not p.exists()]
    if missing:
        raise DataError(
            f"dataset files not found: {', '.join(missing)} "
            f"(see README for the expected layout under {data_dir})"
        )
    if preset.kind == "citation":
        return load_citation(paths[0], paths[1], settings["row_normalize"])
    return load_elliptic(paths[0], paths[1], paths[2])


def _require(settings: dict, keys) -> None:
    missing = [k for k in keys if settings.get(k) is None]
    if missing:
        raise UsageError(
            "missing settings: " + ", ".join(missing) + " (pass flags or pick a --dataset preset)"
        )


def train_config_from(settings: dict, inductive: bool = False) -> TrainConfig:
    if inductive:
        settings.setdefault("learning_rate", INDUCTIVE_LEARNING_RATE)
        settings.setdefault("max_epochs", INDUCTIVE_EPOCHS)
        lr = settings.get("learning_rate", INDUCTIVE_LEARNING_RATE)
        epochs = settings.get("max_epochs", INDUCTIVE_EPOCHS)
        patience = settings.get("patience") or 0  # disabled unless explicitly set
        oversample = settings.get("oversample")
        if oversample in (None, 1):
            oversample = INDUCTIVE_OVERSAMPLE
        return TrainConfig(
            learning_rate=lr,
            max_epochs=epochs,
            patience=patience if patience > 0 else None,
            positive_oversample=oversample,
        )
    _require(settings, ("learning_rate", "max_epochs", "patience"))
    patience = settings["patience"]
    return TrainConfig(
        learning_rate=settings["learning_rate"],
        max_epochs=settings["max_epochs"],
        patience=patience if patience > 0 else None,
        positive_oversample=settings["oversample"],
    )


def write_manifest(out_dir: Path, command: str, settings: dict) -> None:
    lines = [f"command = {command}", f"version = {__version__}"]
    for key in sorted(settings):
        value = settings[key]
        if value is None:
            continue
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    (out_dir / "manifest.cfg").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _json_dump(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _out_dir(settings: dict, command: str) -> Path:
    out = Path(settings.get("out_dir") or f"runs/{command}")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(settings: dict) -> int:
    ds = load_dataset(settings)
    _require(settings, ("hidden_dim", "train_size", "val_size", "test_size", "support_size"))
    out = _out_dir(settings, "train")
    write_manifest(out, "train", settings)
    tcfg = train_config_from(settings)
    sizes = SplitSizes(
        settings["train_size"], settings["val_size"], settings["test_size"], settings["support_size"]
    )
    seed = settings["seed"]
    variant = settings["model"]
    split = sample_split(ds, sizes, derive_seed(seed, _SEED_SPLIT, 0))
    ahat = normalize_adjacency(ds.adjacency())
    inp = (
        build_input(ds, visibility_for_phase(split, TRAINING))
        if variant == LABEL_GCN
        else feature_only_input(ds)
    )
    mcfg = ModelConfig(
        input_dim=inp.width,
        hidden_dim=settings["hidden_dim"],
        n_classes=ds.n_classes,
        dropout_rate=settings["dropout"],
        masked_first_layer=variant == LABEL_GCN,
    )
    train_classes = ds.labels[split.train]
    weights = None
    if tcfg.positive_oversample > 1:
        weights = np.where(train_classes == 1, float(tcfg.positive_oversample), 1.0)
    params, result = train(
        ahat,
        inp,
        split.train,
        train_classes,
        mcfg,
        tcfg,
        init_seed=derive_seed(seed, _SEED_INIT, 0, 0),
        dropout_seed=derive_seed(seed, _SEED_DROPOUT, 0, 0),
        val_nodes=split.validation,
        val_classes=ds.labels[split.validation],
        train_weights=weights,
    )
    positive = 1 if ds.n_classes == 2 else None
    validation = evaluate_nodes(params, mcfg, ahat, inp, split.validation, ds.labels[split.validation], positive)
    if variant == LABEL_GCN:
        vis = visibility_for_phase(
            split, INFERENCE, settings["support_fraction"], derive_seed(seed, _SEED_SUPPORT, 0, 0)
        )
        inp_eval = build_input(ds, vis)
    else:
        inp_eval = inp
    test = evaluate_nodes(params, mcfg, ahat, inp_eval, split.test, ds.labels[split.test], positive)

    save_checkpoint(out / "checkpoint.npz", params, mcfg)
    _json_dump(
        out / "metrics.json",
        {
            "best_epoch": result.best_epoch,
            "epochs_run": result.epochs_run,
            "validation": validation,
            "test": test,
        },
    )
    with open(out / "loss_curve.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "validation_loss"])
        for i, tl in enumerate(result.train_losses):
            vl = result.val_losses[i] if i < len(result.val_losses) else ""
            writer.writerow([i + 1, repr(tl), repr(vl) if vl != "" else ""])
    print(f"train: best_epoch={result.best_epoch} epochs={result.epochs_run}")
    print(f"train: validation={validation}")
    print(f"train: test={test}")
    print(f"train: outputs written to {out}")
    return EXIT_OK


def _sizes(settings: dict) -> SplitSizes:
    _require(settings, ("train_size", "val_size", "test_size", "support_size"))
    return SplitSizes(
        settings["train_size"], settings["val_size"], settings["test_size"], settings["support_size"]
    )


def cmd_sweep(settings: dict) -> int:
    ds = load_dataset(settings)
    _require(settings, ("hidden_dim",))
    out = _out_dir(settings, "sweep")
    write_manifest(out, "sweep", settings)
    tcfg = train_config_from(settings)
    try:
        fractions = [float(tok) for tok in settings["fractions"].split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise UsageError(f"invalid fractions list {settings['fractions']!r}") from exc
    if not fractions or any(not 0.0 <= f <= 1.0 for f in fractions):
        raise UsageError("fractions must be a non-empty list of values in [0, 1]")
    variants = [settings["model"]] + ([GCN] if settings["baseline"] and settings["model"] != GCN else [])
    failed = False
    for variant in variants:
        report = run_transductive_sweep(
            ds,
            _sizes(settings),
            support_fractions=fractions,
            n_splits=settings["n_splits"],
            n_inits=settings["n_inits"],
            variant=variant,
            hidden_dim=settings["hidden_dim"],
            dropout_rate=settings["dropout"],
            train_config=tcfg,
            base_seed=settings["seed"],
            jobs=settings["jobs"],
        )
        report.to_csv(out / f"sweep_{variant}.csv")
        report.to_json(out / f"sweep_{variant}.json")
        for row in report.rows:
            frac = "-" if row["fraction"] is None else f"{row['fraction']:.2f}"
            acc = row.get("accuracy_mean")
            acc_std = row.get("accuracy_std")
            acc_str = "n/a" if acc is None else f"{100 * acc:.1f} +/- {100 * (acc_std or 0):.1f}"
            print(f"sweep[{variant}] fraction={frac} accuracy={acc_str} (n={row.get('n_trials', 0)})")
        if report.abort_fraction > MAX_ABORT_FRACTION:
            print(
                f"sweep[{variant}]: {report.aborted_trials}/{report.requested_trials} trials aborted",
                file=sys.stderr,
            )
            failed = True
    print(f"sweep: outputs written to {out}")
    return EXIT_THRESHOLD if failed else EXIT_OK


def cmd_inductive(settings: dict) -> int:
    ds = load_dataset(settings)
    if ds.time_step is None:
        raise DataError("inductive evaluation needs a dataset with per-node time steps")
    _require(settings, ("hidden_dim",))
    out = _out_dir(settings, "inductive")
    write_manifest(out, "inductive", settings)
    tcfg = train_config_from(settings, inductive=True)
    summary_rows = []
    for variant in (GCN, LABEL_GCN):
        report = run_inductive_elliptic(
            ds,
            variant=variant,
            hidden_dim=settings["hidden_dim"],
            dropout_rate=settings["dropout"],
            train_config=tcfg,
            n_inits=settings["n_inits"],
            base_seed=settings["seed"],
            jobs=settings["jobs"],
            train_through=settings["train_through"],
            shutdown_step=settings["shutdown_step"],
        )
        report.to_csv(out / f"inductive_steps_{variant}.csv")
        report.to_json(out / f"inductive_{variant}.json")
        agg = report.aggregate
        summary_rows.append({"method": variant, **agg})

        def fmt(key):
            mean = agg.get(f"{key}_mean")
            std = agg.get(f"{key}_std")
            return "n/a" if mean is None else f"{100 * mean:.1f} +/- {100 * (std or 0):.1f}"

        print(
            f"inductive[{variant}] precision={fmt('precision')} recall={fmt('recall')} "
            f"f1={fmt('f1')} f1_post_shutdown={fmt('f1_post_shutdown')} accuracy={fmt('accuracy')}"
        )
    with open(out / "inductive_summary.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(summary_rows[0].keys()))
        writer.writeheader()
        writer.writerows(summary_rows)
    print(f"inductive: outputs written to {out}")
    return EXIT_OK


def cmd_gradcheck(settings: dict) -> int:
    """Finite-difference check of both model variants on a random fixture."""
    out = _out_dir(settings, "gradcheck")
    write_manifest(out, "gradcheck", settings)
    rng = np.random.default_rng(settings["seed"])
    n, d, k = 20, 6, 3
    iu = np.triu_indices(n, k=1)
    keep = rng.random(iu[0].size) < 0.3
    edges = np.stack([iu[0][keep], iu[1][keep]], axis=1)
    labels = rng.integers(0, k, size=n)
    ds = GraphDataset(
        n=n, d=d, features=rng.standard_normal((n, d)), labels=labels, n_classes=k, edges=edges
    )
    from .data import LabelVisibility

    ahat = normalize_adjacency(ds.adjacency())
    inp = build_input(ds, LabelVisibility(np.arange(n)))
    nodes = np.arange(0, n, 2)
    results = {}
    worst = 0.0
    for variant, masked in ((GCN, False), (LABEL_GCN, True)):
        cfg = ModelConfig(inp.width, 8, k, dropout_rate=0.0, masked_first_layer=masked)
        check = finite_difference_check(
            cfg,
            ahat,
            inp,
            nodes,
            labels[nodes],
            seed=settings["seed"],
            corrupt=settings["corrupt"],
        )
        results[variant] = {"max_rel_error": check.max_rel_error, "per_array": check.per_array}
        worst = max(worst, check.max_rel_error)
        print(f"gradcheck[{variant}] max_rel_error={check.max_rel_error:.3e}")
    passed = worst <= GRADCHECK_TOLERANCE
    _json_dump(out / "gradcheck.json", {"results": results, "tolerance": GRADCHECK_TOLERANCE, "passed": passed})
    print(f"gradcheck: {'PASS' if passed else 'FAIL'} (tolerance {GRADCHECK_TOLERANCE:g})")
    return EXIT_OK if passed else EXIT_THRESHOLD


def cmd_analyze_labels(settings: dict) -> int:
    """One-hop averaged-label histogram for a binary dataset."""
    ds = load_dataset(settings)
    if ds.n_classes != 2:
        raise DataError("analyze-labels needs a binary dataset")
    out = _out_dir(settings, "analyze-labels")
    write_manifest(out, "analyze-labels", settings)
    rows = label_average_histogram(ds, bins=settings["bins"])
    with open(out / "labels_hist.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_center", "count_licit", "count_illicit"])
        for center, neg, pos in rows:
            writer.writerow([repr(center), neg, pos])
    avg = neighbor_label_average(ds)
    for name, cls in (("licit", 0), ("illicit", 1)):
        members = ds.labels == cls
        if np.any(members):
            print(f"analyze-labels: mean one-hop average around {name} nodes = {avg[members].mean():+.4f}")
    print(f"analyze-labels: histogram written to {out / 'labels_hist.csv'}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="labelgcn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="flat key=value config file (flags win)")
        p.add_argument("--dataset", help="dataset preset: " + ", ".join(DATASETS))
        p.add_argument("--data-dir", dest="data_dir", help="root directory of dataset files")
        p.add_argument("--content", help="citation .content file (custom graphs)")
        p.add_argument("--cites", help="citation .cites file (custom graphs)")
        p.add_argument("--model", choices=VARIANTS, help="model variant")
        p.add_argument("--hidden-dim", dest="hidden_dim", type=int)
        p.add_argument("--dropout", type=float)
        p.add_argument("--learning-rate", dest="learning_rate", type=float)
        p.add_argument("--max-epochs", dest="max_epochs", type=int)
        p.add_argument("--patience", type=int, help="early-stopping patience, 0 disables")
        p.add_argument("--oversample", type=int, help="positive-class loss repetition factor")
        p.add_argument("--row-normalize", dest="row_normalize", action="store_const", const=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", dest="out_dir", help="output directory")
        p.add_argument("--jobs", type=int, help="parallel trials (1 = bit-exact reference)")
        for size in ("train-size", "val-size", "test-size", "support-size"):
            p.add_argument(f"--{size}", dest=size.replace("-", "_"), type=int)

    p_train = sub.add_parser("train", help="train one trial and write checkpoint + metrics")
    add_common(p_train)
    p_train.add_argument("--support-fraction", dest="support_fraction", type=float)

    p_sweep = sub.add_parser("sweep", help="transductive support-fraction sweep")
    add_common(p_sweep)
    p_sweep.add_argument("--fractions", help="comma-separated support fractions")
    p_sweep.add_argument("--n-splits", dest="n_splits", type=int)
    p_sweep.add_argument("--n-inits", dest="n_inits", type=int)
    p_sweep.add_argument("--baseline", action="store_const", const=True, help="also run the plain model")

    p_ind = sub.add_parser("inductive", help="time-stepped evaluation of both variants")
    add_common(p_ind)
    p_ind.add_argument("--n-inits", dest="n_inits", type=int)
    p_ind.add_argument("--train-through", dest="train_through", type=int)
    p_ind.add_argument("--shutdown-step", dest="shutdown_step", type=int)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    add_common(p_grad)
    p_grad.add_argument(
        "--corrupt", type=float, help="offset analytic gradients (verifies the check detects errors)"
    )

    p_hist = sub.add_parser("analyze-labels", help="one-hop averaged-label histogram")
    add_common(p_hist)
    p_hist.add_argument("--bins", type=int)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        settings = resolve_settings(args)
        handler = {
            "train": cmd_train,
            "sweep": cmd_sweep,
            "inductive": cmd_inductive,
            "gradcheck": cmd_gradcheck,
            "analyze-labels": cmd_analyze_labels,
        }[args.command]
        return handler(settings)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_THRESHOLD if isinstance(exc, DivergenceError) else EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
