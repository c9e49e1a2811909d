"""Command-line interface.

Exit codes:
  0  success
  1  usage error (unknown or conflicting flags, bad config file)
  2  data error (missing/malformed input, unusable labels)
  3  numeric divergence during training
  4  I/O failure while writing outputs
"""
import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import fields

import numpy as np

from . import __version__
from ._backend import backend_name
from .dataio import DataError, dataset_rows, format_float, load_column_map, load_csv, stratified_folds, synthesize
from .dynamic_graph import build_subject_graph, fuse_features, median_heuristic
from .gcn import save_checkpoint
from .kernels import pairwise_sq_euclidean
from .trainer import (
    HISTORY_COLUMNS,
    LAMBDA1_GRID,
    LAMBDA2_GRID,
    METRIC_NAMES,
    DivergenceError,
    TrainConfig,
    cross_validate,
    evaluate,
    grid_search,
    nested_cross_validate,
    prepare_features,
    train_fold,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3, 4
OUTPUT_DIR_ENV = "DDGCN_OUTPUT_DIR"

log = logging.getLogger("ddgcn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# config resolution


def _coerce(name, raw, default):
    text = str(raw).strip()
    if name == "freeze_graph_after":
        return None if text.lower() in ("", "none") else int(text)
    if isinstance(default, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean for {name}, got {raw!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def read_config_file(path):
    """Parse ``key = value`` lines into TrainConfig overrides."""
    defaults = TrainConfig()
    known = {f.name for f in fields(TrainConfig)}
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in known:
                raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                out[key] = _coerce(key, value, getattr(defaults, key))
            except ValueError as exc:
                raise UsageError(f"{path}:{lineno}: {exc}") from None
    return out


def resolve_config(args):
    """Merge defaults < config file < flags; returns (config, sources)."""
    defaults = TrainConfig()
    values = {f.name: getattr(defaults, f.name) for f in fields(TrainConfig)}
    sources = dict.fromkeys(values, "default")
    if args.config:
        for key, val in read_config_file(args.config).items():
            values[key] = val
            sources[key] = "file"
    for f in fields(TrainConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = flag
            sources[f.name] = "flag"
    if not values["rebuild_graph_every_epoch"] and values["freeze_graph_after"] is not None:
        raise UsageError("--freeze-graph-after conflicts with --no-rebuild-graph")
    try:
        return TrainConfig(**values), sources
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# ---------------------------------------------------------------------------
# output helpers


def _csv_text(rows):
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    return str(v)


def history_text(history):
    rows = [list(HISTORY_COLUMNS)]
    rows += [[_cell(row[c]) for c in HISTORY_COLUMNS] for row in history]
    return _csv_text(rows)


def metrics_text(fold_metrics, summary, extra=None):
    extra = extra or {}
    cols = ["fold", *extra, "tp", "tn", "fp", "fn", *METRIC_NAMES]
    rows = [cols]
    for i, m in enumerate(fold_metrics):
        rows.append([str(i), *(_cell(v) for v in extra.values()),
                     str(m.tp), str(m.tn), str(m.fp), str(m.fn),
                     *(_cell(getattr(m, k)) for k in METRIC_NAMES)])
    for stat in ("mean", "std"):
        rows.append([stat, *(_cell(v) for v in extra.values()), "", "", "", "",
                     *(_cell(summary[stat][k]) for k in METRIC_NAMES)])
    return _csv_text(rows)


def write_outputs(outdir, files):
    """Write every ``name -> text`` pair atomically (temp file + rename)."""
    os.makedirs(outdir, exist_ok=True)
    staged = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=outdir)
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            staged.append((tmp, os.path.join(outdir, name)))
        for tmp, final in staged:
            os.replace(tmp, final)
    finally:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)


def manifest_text(args, config, sources, outputs, extra=None):
    doc = {
        "artifact": "ddgcn",
        "version": __version__,
        "backend": backend_name(),
        "subcommand": args.command,
        "input": getattr(args, "input", None),
        "seed": config.seed if config else getattr(args, "seed", None),
        "config": (
            {k: {"value": v, "source": sources[k]} for k, v in config.as_dict().items()}
            if config else None
        ),
        "outputs": sorted(outputs),
        "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# subcommands


def _load(args):
    cmap = load_column_map(args.column_map) if args.column_map else None
    ds = load_csv(args.input, args.label_column, args.id_column, column_map=cmap)
    if ds.dropped_count:
        log.warning("dropped %d row(s) with missing values", ds.dropped_count)
    return ds


def cmd_synth(args):
    ds = synthesize(args.n_per_class, args.d_total, args.d_informative, args.gap, args.seed)
    name = args.out or "synthetic.csv"
    return {name: _csv_text(dataset_rows(ds))}, None, {}


def cmd_select_features(args, config):
    ds = _load(args)
    everyone = np.ones(ds.n_subjects, dtype=bool)
    prep = prepare_features(ds.X, ds.y, everyone, config)
    st = prep.state
    selected = set(prep.selected.tolist())
    order = np.argsort(-st.c_tilde, kind="stable")
    rows = [["index", "name", "w", "m", "s", "c_tilde", "selected"]]
    for i in order:
        rows.append([str(i), ds.feature_names[i], _cell(st.w[i]), _cell(st.m[i]),
                     _cell(st.s[i]), _cell(st.c_tilde[i]), _cell(i in selected)])
    return {"features.csv": _csv_text(rows)}, {"selected": len(selected)}


def cmd_build_graph(args, config):
    ds = _load(args)
    everyone = np.ones(ds.n_subjects, dtype=bool)
    prep = prepare_features(ds.X, ds.y, everyone, config)
    H = fuse_features(prep.Z[:, prep.selected], prep.C)
    dist_sq = pairwise_sq_euclidean(H)
    theta = args.theta if args.theta is not None else median_heuristic(dist_sq)
    graph = build_subject_graph(H, theta, config.knn_k, dist_sq)
    rows = [["i", "j", "a_ij"]]
    rows += [[str(i), str(j), _cell(w)] for i, j, w in graph.edges]
    return {"edges.csv": _csv_text(rows)}, {"theta": theta, "edges": len(graph.edges)}


def cmd_train(args, config):
    ds = _load(args)
    assignment = stratified_folds(ds.y, config.folds, seed=[config.seed, 0])
    if not 0 <= args.holdout_fold < config.folds:
        raise UsageError(f"--holdout-fold must lie in [0, {config.folds})")
    test = assignment == args.holdout_fold
    run = train_fold(ds, ~test, test, config, fold_index=args.holdout_fold)
    m = evaluate(run.model, run.H, run.A_hat, ds.y, test, config.positive_label)
    summary = {"mean": {k: getattr(m, k) for k in METRIC_NAMES},
               "std": dict.fromkeys(METRIC_NAMES, 0.0)}
    fd, tmp = tempfile.mkstemp(suffix=".ckpt")
    os.close(fd)
    try:
        save_checkpoint(run.model, tmp)
        with open(tmp, encoding="utf-8") as fh:
            ckpt = fh.read()
    finally:
        os.unlink(tmp)
    return {
        "model.ckpt": ckpt,
        "history.csv": history_text(run.history),
        "metrics.csv": metrics_text([m], summary),
    }, {"holdout_fold": args.holdout_fold}


def cmd_cv(args, config):
    ds = _load(args)
    res = cross_validate(ds, config)
    files = {"metrics.csv": metrics_text(res.fold_metrics, res.summary)}
    for i, hist in enumerate(res.histories):
        files[f"history_fold{i}.csv"] = history_text(hist)
    return files, {"mean_acc": res.summary["mean"]["acc"]}


def cmd_grid_search(args, config):
    ds = _load(args)
    l1 = args.lambda1_grid or LAMBDA1_GRID
    l2 = args.lambda2_grid or LAMBDA2_GRID
    res = grid_search(ds, config, l1, l2, n_jobs=args.jobs)
    cols = ["lambda1", "lambda2", *METRIC_NAMES, *(f"{k}_std" for k in METRIC_NAMES)]
    rows = [cols] + [[_cell(c[k]) for k in cols] for c in res.surface]
    files = {"grid_surface.csv": _csv_text(rows)}
    extra = {"best_lambda1": res.best[0], "best_lambda2": res.best[1]}
    if args.nested:
        outer, chosen = nested_cross_validate(ds, config, l1, l2, n_jobs=args.jobs)
        files["nested_metrics.csv"] = metrics_text(outer.fold_metrics, outer.summary)
        extra["nested_choices"] = [list(c) for c in chosen]
    return files, extra


# ---------------------------------------------------------------------------
# parser


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_train_flags(p):
    g = p.add_argument_group("training configuration (flag > --config file > default)")
    g.add_argument("--learning-rate", dest="learning_rate", type=float)
    g.add_argument("--epochs", type=int)
    g.add_argument("--dropout", type=float)
    g.add_argument("--weight-decay", dest="weight_decay", type=float)
    g.add_argument("--knn-k", dest="knn_k", type=int, help="neighbours per subject (default 8)")
    g.add_argument("--lambda1", type=float)
    g.add_argument("--lambda2", type=float)
    g.add_argument("--alpha", type=float, help="Fisher vs MI blend (default 0.5)")
    g.add_argument("--top-k-features", "--k", dest="top_k_features", type=int,
                   help="number of features kept (default 60)")
    g.add_argument("--mi-bins", dest="mi_bins", type=int)
    g.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--folds", type=int)
    g.add_argument("--no-rebuild-graph", dest="rebuild_graph_every_epoch",
                   action="store_const", const=False, default=None)
    g.add_argument("--freeze-graph-after", dest="freeze_graph_after", type=int)
    g.add_argument("--ce-reduction", dest="ce_reduction", choices=("mean", "sum"))
    g.add_argument("--optimizer", choices=("adam", "sgd"))
    g.add_argument("--fusion-mode", dest="fusion_mode", choices=("blend", "off"),
                   help="how the previous energy matrix enters the fused features")
    g.add_argument("--positive-label", dest="positive_label", type=int)
    g.add_argument("--no-rescale-scores", dest="rescale_scores",
                   action="store_const", const=False, default=None)
    g.add_argument("--normalize-mi", dest="normalize_mi",
                   action="store_const", const=True, default=None)


def _add_io_flags(p):
    p.add_argument("--input", "-i", required=True, help="feature table (CSV)")
    p.add_argument("--label-column", default="label")
    p.add_argument("--id-column", default="id")
    p.add_argument("--column-map", help="key = value file renaming input headers")
    p.add_argument("--config", help="flat key = value config file")


def build_parser():
    parser = _Parser(
        prog="ddgcn",
        description="Dynamic dual-graph fusion GCN for binary tabular classification.",
        epilog=__doc__.split("\n", 2)[2],
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"ddgcn {__version__}")
    parser.add_argument("--output-dir", "-o",
                        help=f"output directory (default ${OUTPUT_DIR_ENV} or '.')")
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a seeded two-class Gaussian dataset")
    p.add_argument("--n-per-class", dest="n_per_class", type=int, default=100)
    p.add_argument("--d-total", dest="d_total", type=int, default=100)
    p.add_argument("--d-informative", dest="d_informative", type=int, default=10)
    p.add_argument("--gap", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="file name inside the output directory (default synthetic.csv)")

    p = sub.add_parser("select-features", help="rank features and mark the top-k")
    _add_io_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("build-graph", help="emit the KNN subject graph as an edge list")
    _add_io_flags(p)
    _add_train_flags(p)
    p.add_argument("--theta", type=float, help="kernel width (default: median heuristic)")

    p = sub.add_parser("train", help="train on all but one stratified fold")
    _add_io_flags(p)
    _add_train_flags(p)
    p.add_argument("--holdout-fold", dest="holdout_fold", type=int, default=0)

    p = sub.add_parser("cv", help="stratified k-fold cross-validation")
    _add_io_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("grid-search", help="cross-validate every (lambda1, lambda2) cell")
    _add_io_flags(p)
    _add_train_flags(p)
    p.add_argument("--lambda1-grid", type=_float_list, help="comma-separated values")
    p.add_argument("--lambda2-grid", type=_float_list, help="comma-separated values")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for grid cells")
    p.add_argument("--nested", action="store_true",
                   help="also run per-fold nested grid selection")
    return parser


HANDLERS = {
    "select-features": cmd_select_features,
    "build-graph": cmd_build_graph,
    "train": cmd_train,
    "cv": cmd_cv,
    "grid-search": cmd_grid_search,
}


def run(argv=None):
    """Entry point returning an exit code; never leaves partial outputs."""
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(str(exc).splitlines()[0], file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return exc.code or EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    outdir = args.output_dir or os.environ.get(OUTPUT_DIR_ENV) or "."
    try:
        if args.command == "synth":
            files, config, extra = cmd_synth(args)
            sources = {}
        else:
            config, sources = resolve_config(args)
            files, extra = HANDLERS[args.command](args, config)
        files["manifest.json"] = manifest_text(args, config, sources, files, extra)
    except UsageError as exc:
        print(f"ddgcn: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, ValueError) as exc:
        print(f"ddgcn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"ddgcn: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    try:
        write_outputs(outdir, files)
    except OSError as exc:
        print(f"ddgcn: cannot write outputs to {outdir}: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def main():
    sys.exit(run())
