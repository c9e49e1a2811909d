"""Training loop, cross-validation and the lambda1/lambda2 grid search.

The protocol is transductive: the subject graph spans every subject, but
feature scoring, standardisation and the loss only see training rows.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .dataio import DataError, standardize, stratified_folds
from .dynamic_graph import Edges, build_subject_graph, fuse_features, median_heuristic
from .feature_graph import (
    build_feature_graph,
    energy_matrix,
    feature_adjacency,
    select_top_k,
)
from .gcn import SGD, Adam, GcnModel, gcn_backward, gcn_forward, init_model, normalize_adjacency, theta_gradient
from .kernels import pairwise_sq_euclidean
from .loss import RewardState, compute_rewards, cross_entropy, graph_loss, total_loss
from .metrics import binary_metrics

log = logging.getLogger(__name__)

LAMBDA1_GRID = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
LAMBDA2_GRID = (0.2, 0.4, 0.6, 0.8, 1.0)
HISTORY_COLUMNS = ("epoch", "l_ce", "l_graph", "total", "train_acc", "ema_acc", "theta")

# independent RNG streams derived from the seed
_SPLIT, _INIT, _DROPOUT = 0, 1, 2


class DivergenceError(RuntimeError):
    def __init__(self, epoch, value):
        super().__init__(f"non-finite loss ({value}) at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.005
    epochs: int = 50
    dropout: float = 0.1
    weight_decay: float = 5e-4
    knn_k: int = 8
    lambda1: float = 1e-2
    lambda2: float = 1.0
    alpha: float = 0.5
    top_k_features: int = 60
    mi_bins: int = 10
    hidden_dim: int = 16
    seed: int = 0
    rebuild_graph_every_epoch: bool = True
    folds: int = 5
    freeze_graph_after: int | None = None
    ce_reduction: str = "mean"
    optimizer: str = "adam"
    fusion_mode: str = "blend"
    graph_layers: int = 2
    positive_label: int = 1
    rescale_scores: bool = True
    normalize_mi: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be >= 0")
        if self.ce_reduction not in ("mean", "sum"):
            raise ValueError(f"ce_reduction must be mean or sum, got {self.ce_reduction!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if self.fusion_mode not in ("blend", "off"):
            raise ValueError(f"fusion_mode must be blend or off, got {self.fusion_mode!r}")

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class PreparedFeatures:
    """Leak-free feature pipeline output for one train/test split."""

    Z: np.ndarray
    scaler: object
    state: object
    selected: np.ndarray
    s_selected: np.ndarray
    r: float
    C: np.ndarray


def prepare_features(X, y, train_mask, config):
    """Standardise, score on training rows, keep the top-k, build C for them."""
    train_mask = np.asarray(train_mask, dtype=bool)
    Z, scaler = standardize(X, train_mask)
    state = build_feature_graph(
        Z[train_mask], y[train_mask], alpha=config.alpha, bins=config.mi_bins,
        rescale=config.rescale_scores, normalize_mi=config.normalize_mi,
    )
    k = min(config.top_k_features, Z.shape[1])
    selected = select_top_k(state.c_tilde, k)
    s_sel = state.s[selected]
    r, C = energy_matrix(feature_adjacency(s_sel), method="rank_one")
    return PreparedFeatures(Z=Z, scaler=scaler, state=state, selected=selected,
                            s_selected=s_sel, r=r, C=C)


@dataclass
class FoldRun:
    model: GcnModel
    history: list
    features: PreparedFeatures
    H: np.ndarray
    graph: object
    A_hat: np.ndarray
    probs: np.ndarray
    train_mask: np.ndarray
    test_mask: np.ndarray


def _fused(features, config, epoch):
    X_sel = features.Z[:, features.selected]
    if epoch == 1 or config.fusion_mode == "off":
        return fuse_features(X_sel, features.C)
    # C is fixed once fitted, so the previous epoch's C is the same matrix
    return fuse_features(X_sel, features.C, features.C, config.lambda1)


def _make_optimizer(config):
    if config.optimizer == "adam":
        return Adam(lr=config.learning_rate, weight_decay=config.weight_decay)
    return SGD(lr=config.learning_rate, weight_decay=config.weight_decay)


def train_fold(dataset, train_mask, test_mask, config, fold_index=0):
    """Train one model; returns a :class:`FoldRun` with the per-epoch history."""
    X, y = dataset.X, dataset.y
    train_mask = np.asarray(train_mask, dtype=bool)
    test_mask = np.asarray(test_mask, dtype=bool)
    if np.any(train_mask & test_mask):
        raise ValueError("train and test masks overlap")
    if np.unique(y[train_mask]).size < 2:
        raise DataError("training mask must contain both classes")
    n_classes = int(y.max()) + 1

    features = prepare_features(X, y, train_mask, config)
    H = _fused(features, config, 1)
    theta0 = median_heuristic(pairwise_sq_euclidean(H))
    init_rng = np.random.default_rng([config.seed, _INIT, fold_index])
    model = init_model(features.selected.size, config.hidden_dim, n_classes, theta0,
                       init_rng, dropout_rate=config.dropout)
    opt = _make_optimizer(config)
    reward = RewardState()
    graph, A_hat, edges = None, None, None
    history = []

    for epoch in range(1, config.epochs + 1):
        H = _fused(features, config, epoch)
        dist_sq = pairwise_sq_euclidean(H)
        theta = model.theta
        frozen = (
            not config.rebuild_graph_every_epoch
            or (config.freeze_graph_after is not None and epoch > config.freeze_graph_after)
        )
        if graph is None or not frozen:
            graph = build_subject_graph(H, theta, config.knn_k, dist_sq)
            A_hat = normalize_adjacency(graph.A_prime)
            edges = graph.edges
        else:
            d_e = dist_sq[graph.edges.i, graph.edges.j]
            edges = Edges(graph.edges.i, graph.edges.j, np.exp(-theta * d_e), d_e)

        drop_rng = np.random.default_rng([config.seed, _DROPOUT, fold_index, epoch])
        trace = gcn_forward(A_hat, H, model, training=True, rng=drop_rng)
        l_ce, grad_logits = cross_entropy(trace.probs, y, train_mask, config.ce_reduction)
        pred = trace.probs.argmax(axis=1)
        reward = compute_rewards(pred, y, train_mask, reward)
        l_graph = graph_loss(edges, reward.delta, config.graph_layers)
        total = total_loss(l_ce, l_graph, config.lambda2)
        if not np.isfinite(total):
            raise DivergenceError(epoch, total)

        dW1, dW2 = gcn_backward(trace, grad_logits, model)
        dtau = config.lambda2 * theta_gradient(edges, reward.delta, theta, config.graph_layers)
        train_acc = float(np.mean(pred[train_mask] == y[train_mask]))
        history.append({
            "epoch": epoch, "l_ce": l_ce, "l_graph": l_graph, "total": total,
            "train_acc": train_acc, "ema_acc": reward.running_accuracy, "theta": theta,
        })
        new = opt.step({"W1": model.W1, "W2": model.W2, "tau": model.tau},
                       {"W1": dW1, "W2": dW2, "tau": dtau})
        model = GcnModel(W1=new["W1"], W2=new["W2"], tau=float(new["tau"]),
                         dropout_rate=model.dropout_rate)
        if not (np.all(np.isfinite(model.W1)) and np.all(np.isfinite(model.W2))
                and np.isfinite(model.tau)):
            raise DivergenceError(epoch, "parameters")

    H = _fused(features, config, config.epochs + 1)
    dist_sq = pairwise_sq_euclidean(H)
    if config.rebuild_graph_every_epoch and config.freeze_graph_after is None:
        graph = build_subject_graph(H, model.theta, config.knn_k, dist_sq)
        A_hat = normalize_adjacency(graph.A_prime)
    probs = gcn_forward(A_hat, H, model, training=False).probs
    return FoldRun(model=model, history=history, features=features, H=H, graph=graph,
                   A_hat=A_hat, probs=probs, train_mask=train_mask, test_mask=test_mask)


def evaluate(model, H, A_hat, labels, mask, positive_label=1):
    """Metrics of the argmax predictions on ``mask``.

    The positive-class probability is the AUC ranking score.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("evaluation mask selects no nodes")
    probs = gcn_forward(A_hat, H, model, training=False).probs
    pred = probs.argmax(axis=1)
    labels = np.asarray(labels)
    return binary_metrics(labels[mask], pred[mask], probs[mask, positive_label],
                          positive=positive_label)


@dataclass
class CVResult:
    fold_metrics: list
    histories: list
    assignment: np.ndarray
    summary: dict = field(default_factory=dict)

    @property
    def mean_accuracy(self):
        return self.summary["mean"]["acc"]


METRIC_NAMES = ("acc", "sen", "spe", "auc")


def summarize(fold_metrics):
    vals = {m: np.array([getattr(f, m) for f in fold_metrics], dtype=np.float64)
            for m in METRIC_NAMES}
    mean, std = {}, {}
    for m, v in vals.items():
        finite = v[np.isfinite(v)]
        mean[m] = float(finite.mean()) if finite.size else float("nan")
        std[m] = float(finite.std()) if finite.size else float("nan")
    return {"mean": mean, "std": std}


def cross_validate(dataset, config):
    """Stratified k-fold CV; each fold trains from scratch and scores its held-out part."""
    if dataset.n_subjects < config.folds:
        raise DataError(f"{dataset.n_subjects} subjects cannot fill {config.folds} folds")
    assignment = stratified_folds(dataset.y, config.folds, seed=[config.seed, _SPLIT])
    fold_metrics, histories = [], []
    for fold in range(config.folds):
        test = assignment == fold
        run = train_fold(dataset, ~test, test, config, fold_index=fold)
        m = evaluate(run.model, run.H, run.A_hat, dataset.y, test, config.positive_label)
        log.info("fold %d: acc=%.4f sen=%.4f spe=%.4f auc=%.4f", fold, m.acc, m.sen, m.spe, m.auc)
        fold_metrics.append(m)
        histories.append(run.history)
    return CVResult(fold_metrics=fold_metrics, histories=histories,
                    assignment=assignment, summary=summarize(fold_metrics))


@dataclass
class GridResult:
    best: tuple
    surface: list

    def accuracy_matrix(self, lambda1_grid, lambda2_grid):
        out = np.full((len(lambda1_grid), len(lambda2_grid)), np.nan)
        lookup = {(c["lambda1"], c["lambda2"]): c["acc"] for c in self.surface}
        for a, l1 in enumerate(lambda1_grid):
            for b, l2 in enumerate(lambda2_grid):
                out[a, b] = lookup[(l1, l2)]
        return out


def _grid_cell(args):
    dataset, config = args
    res = cross_validate(dataset, config)
    return {
        "lambda1": config.lambda1, "lambda2": config.lambda2,
        **res.summary["mean"],
        **{f"{k}_std": v for k, v in res.summary["std"].items()},
    }


def pick_best(surface):
    """Max mean accuracy; ties go to the smaller lambda2, then the smaller lambda1."""
    if not surface:
        raise ValueError("empty grid surface")
    best = min(surface, key=lambda c: (-c["acc"], c["lambda2"], c["lambda1"]))
    return best["lambda1"], best["lambda2"]


def grid_search(dataset, base_config, lambda1_grid=LAMBDA1_GRID, lambda2_grid=LAMBDA2_GRID,
                n_jobs=1):
    """Cross-validate every (lambda1, lambda2) cell.

    Cells are independent; with ``n_jobs > 1`` they run in worker processes
    and are collected back in grid order.
    """
    if len(lambda1_grid) == 0 or len(lambda2_grid) == 0:
        raise ValueError("grids must be non-empty")
    jobs = [(dataset, replace(base_config, lambda1=float(l1), lambda2=float(l2)))
            for l1 in lambda1_grid for l2 in lambda2_grid]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            surface = list(pool.map(_grid_cell, jobs))
    else:
        surface = [_grid_cell(job) for job in jobs]
    return GridResult(best=pick_best(surface), surface=surface)


def nested_cross_validate(dataset, base_config, lambda1_grid=LAMBDA1_GRID,
                          lambda2_grid=LAMBDA2_GRID, n_jobs=1):
    """Outer CV whose folds each pick (lambda1, lambda2) by an inner grid search.

    Returns the outer :class:`CVResult` and the chosen cell per outer fold.
    """
    assignment = stratified_folds(dataset.y, base_config.folds, seed=[base_config.seed, _SPLIT])
    fold_metrics, histories, chosen = [], [], []
    for fold in range(base_config.folds):
        test = assignment == fold
        inner = _restrict(dataset, ~test)
        grid = grid_search(inner, base_config, lambda1_grid, lambda2_grid, n_jobs=n_jobs)
        l1, l2 = grid.best
        config = replace(base_config, lambda1=l1, lambda2=l2)
        run = train_fold(dataset, ~test, test, config, fold_index=fold)
        fold_metrics.append(evaluate(run.model, run.H, run.A_hat, dataset.y, test,
                                     config.positive_label))
        histories.append(run.history)
        chosen.append((l1, l2))
    return CVResult(fold_metrics, histories, assignment, summarize(fold_metrics)), chosen


def _restrict(dataset, rows):
    from .dataio import Dataset

    rows = np.asarray(rows, dtype=bool)
    return Dataset(
        X=dataset.X[rows], y=dataset.y[rows], feature_names=dataset.feature_names,
        subject_ids=[s for s, keep in zip(dataset.subject_ids, rows) if keep],
        class_names=dataset.class_names,
    )
