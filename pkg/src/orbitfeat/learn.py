"""Linear predictors on top of feature maps, plus grid-search cross-validation."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .distributions import DeltaIdentity, GroupDistribution
from .features import (
    DATA_SIDE,
    REAL_COSINE,
    build_nys,
    build_rf,
    build_two_layer,
)
from .groups import InputLayout
from .kernels import GaussianKernel, squared_distances
from .seeding import derive_seed, make_rng

REGRESSION = "regression"
CLASSIFICATION = "classification"


@dataclass
class RidgeModel:
    weights: np.ndarray  # D x t
    intercepts: np.ndarray  # t
    lam: float
    classes: Optional[np.ndarray] = None

    @property
    def n_features(self) -> int:
        return self.weights.shape[0]

    def _check(self, F):
        F = np.asarray(F, dtype=float)
        if F.ndim != 2 or F.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got shape {F.shape}")
        return F

    def predict(self, F) -> np.ndarray:
        out = self._check(F) @ self.weights + self.intercepts
        return out[:, 0] if out.shape[1] == 1 and self.classes is None else out

    def scores(self, F) -> np.ndarray:
        return self._check(F) @ self.weights + self.intercepts

    def classify(self, F) -> np.ndarray:
        if self.classes is None:
            raise ValueError("model was fit for regression")
        # argmax returns the first maximum: ties go to the lowest class index
        return self.classes[np.argmax(self.scores(F), axis=1)]


def _center(F, Y):
    F = np.asarray(F, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if F.ndim != 2 or F.shape[0] != Y.shape[0] or F.shape[0] < 1:
        raise ValueError(f"incompatible shapes {F.shape} and {Y.shape}")
    if not (np.isfinite(F).all() and np.isfinite(Y).all()):
        raise ValueError("non-finite inputs")
    f_mean = F.mean(axis=0)
    y_mean = Y.mean(axis=0)
    return F - f_mean, Y - y_mean, f_mean, y_mean


def fit_ridge(F, Y, lam: float) -> RidgeModel:
    """Regularized least squares with an unpenalized intercept.

    Solves ``(Fc^T Fc + lam I) W = Fc^T Yc`` on centered data. When there are
    more features than rows the equivalent dual system is solved instead.
    """
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    Fc, Yc, f_mean, y_mean = _center(F, Y)
    n, D = Fc.shape
    if D <= n:
        A = Fc.T @ Fc
        A[np.diag_indices_from(A)] += lam
        W = scipy.linalg.solve(A, Fc.T @ Yc, assume_a="pos")
    else:
        G = Fc @ Fc.T
        G[np.diag_indices_from(G)] += lam
        W = Fc.T @ scipy.linalg.solve(G, Yc, assume_a="pos")
    return RidgeModel(W, y_mean - f_mean @ W, lam)


def ridge_path(F, Y, lams) -> list[RidgeModel]:
    """One model per lambda from a single eigendecomposition."""
    Fc, Yc, f_mean, y_mean = _center(F, Y)
    n, D = Fc.shape
    models = []
    if D <= n:
        evals, V = np.linalg.eigh(Fc.T @ Fc)
        proj = V.T @ (Fc.T @ Yc)
        for lam in lams:
            W = V @ (proj / (evals + lam)[:, None])
            models.append(RidgeModel(W, y_mean - f_mean @ W, lam))
    else:
        evals, U = np.linalg.eigh(Fc @ Fc.T)
        proj = U.T @ Yc
        for lam in lams:
            W = Fc.T @ (U @ (proj / (evals + lam)[:, None]))
            models.append(RidgeModel(W, y_mean - f_mean @ W, lam))
    return models


def one_vs_rest_targets(labels) -> tuple[np.ndarray, np.ndarray]:
    labels = np.asarray(labels)
    classes = np.unique(labels)
    Y = -np.ones((labels.shape[0], classes.shape[0]))
    Y[np.arange(labels.shape[0]), np.searchsorted(classes, labels)] = 1.0
    return classes, Y


def fit_classifier(F, labels, lam: float) -> RidgeModel:
    classes, Y = one_vs_rest_targets(labels)
    model = fit_ridge(F, Y, lam)
    model.classes = classes
    return model


def predict(model: RidgeModel, F) -> np.ndarray:
    return model.predict(F)


def classify(model: RidgeModel, F) -> np.ndarray:
    return model.classify(F)


def rmse(y_true, y_pred) -> float:
    diff = np.asarray(y_true, dtype=float).ravel() - np.asarray(y_pred, dtype=float).ravel()
    return float(np.sqrt(np.mean(diff**2)))


def accuracy(y_true, y_pred) -> float:
    return float(np.mean(np.asarray(y_true) == np.asarray(y_pred)))


# ---------------------------------------------------------------------------
# Pipelines and cross-validation
# ---------------------------------------------------------------------------


@dataclass
class CVGrid:
    lambdas: list = field(default_factory=lambda: [1e-6, 1e-4, 1e-2, 1.0, 1e2])
    sigmas: list = field(default_factory=lambda: [1.0])
    widths: list = field(default_factory=lambda: [None])
    sigma2_scales: list = field(default_factory=lambda: [1.0])
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        for name in ("lambdas", "sigmas", "widths", "sigma2_scales"):
            if not list(getattr(self, name)):
                raise ValueError(f"grid {name!r} is empty")
        if self.folds < 2:
            raise ValueError("need at least 2 folds")

    def feature_configs(self) -> list[dict]:
        return [
            {"sigma": s, "width": w, "sigma2_scale": s2}
            for s, w, s2 in itertools.product(self.sigmas, self.widths, self.sigma2_scales)
        ]


@dataclass
class Pipeline:
    """How to turn a configuration into a fitted feature map.

    ``dist_family`` maps a grid width to a group distribution; ``None`` means
    no group averaging (the plain random Fourier / Nystrom baseline).
    """

    layout: InputLayout
    method: str = "rf"
    s: int = 1000
    r: int = 1
    layers: int = 1
    s2: int = 1000
    dist_family: Optional[Callable[[float], GroupDistribution]] = None
    variant: str = REAL_COSINE
    transfer_mode: str = DATA_SIDE
    rank_tol: float = 1e-10
    unitary_normalize: bool = True
    task: str = REGRESSION

    def distribution(self, width) -> GroupDistribution:
        if self.dist_family is None:
            return DeltaIdentity()
        return self.dist_family(width)

    def group_count(self) -> int:
        return 1 if self.dist_family is None else self.r


def median_distance(F: np.ndarray, max_rows: int = 500) -> float:
    F = np.asarray(F, dtype=float)[:max_rows]
    D = squared_distances(F)
    vals = np.sqrt(D[np.triu_indices_from(D, k=1)])
    med = float(np.median(vals)) if vals.size else 1.0
    return med if med > 0 else 1.0


def build_pipeline_map(pipeline: Pipeline, config: dict, X_train, seed: int, threads: int = 1):
    """Fitted feature map for one configuration (landmarks and layer-2 scale use ``X_train``)."""
    base = GaussianKernel(config["sigma"])
    dist = pipeline.distribution(config.get("width"))
    r = pipeline.group_count()
    if pipeline.method == "rf":
        fmap = build_rf(
            base, dist, pipeline.s, r, pipeline.layout,
            variant=pipeline.variant, transfer_mode=pipeline.transfer_mode,
            seed=seed, unitary_normalize=pipeline.unitary_normalize,
        )
    elif pipeline.method == "nys":
        fmap = build_nys(
            base, dist, r, pipeline.layout, X=X_train, m=min(pipeline.s, len(X_train)),
            transfer_mode=pipeline.transfer_mode, rank_tol=pipeline.rank_tol,
            seed=seed, unitary_normalize=pipeline.unitary_normalize,
        )
    else:
        raise ValueError(f"unknown method {pipeline.method!r}")
    if pipeline.layers == 2:
        H = fmap.transform(X_train, threads)
        sigma2 = config.get("sigma2_scale", 1.0) * median_distance(H)
        fmap = build_two_layer(fmap, sigma2, pipeline.s2, seed=derive_seed(seed, "layer2"))
    elif pipeline.layers != 1:
        raise ValueError("layers must be 1 or 2")
    return fmap


def _score(task, model, F, Y) -> float:
    if task == CLASSIFICATION:
        return accuracy(Y, model.classify(F))
    return rmse(Y, model.predict(F))


def _fit(task, F, Y, lam):
    return fit_classifier(F, Y, lam) if task == CLASSIFICATION else fit_ridge(F, Y, lam)


def _fit_path(task, F, Y, lams):
    if task == CLASSIFICATION:
        classes, T = one_vs_rest_targets(Y)
        models = ridge_path(F, T, lams)
        for m in models:
            m.classes = classes
        return models
    return ridge_path(F, Y, lams)


def fold_assignment(n: int, folds: int, seed: int) -> list[np.ndarray]:
    if n < folds:
        raise ValueError(f"cannot split {n} rows into {folds} folds")
    order = make_rng(seed, "folds").permutation(n)
    parts = np.array_split(order, folds)
    if any(p.size == 0 for p in parts):
        raise ValueError("degenerate fold with zero rows")
    return [np.sort(p) for p in parts]


@dataclass
class CVResult:
    best: dict
    table: list[dict]  # one row per configuration: config + fold scores + mean


def cross_validate(X, Y, grid: CVGrid, pipeline: Pipeline, threads: int = 1) -> CVResult:
    """Grid search over kernel width, group width, layer-2 scale and lambda."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y)
    folds = fold_assignment(X.shape[0], grid.folds, grid.seed)
    configs = [dict(fc, lam=lam) for fc in grid.feature_configs() for lam in grid.lambdas]
    scores = np.zeros((len(configs), grid.folds))
    n_lam = len(grid.lambdas)
    for f, val_idx in enumerate(folds):
        train_idx = np.setdiff1d(np.arange(X.shape[0]), val_idx)
        fold_seed = derive_seed(grid.seed, "fold", f)
        for c, fc in enumerate(grid.feature_configs()):
            fmap = build_pipeline_map(pipeline, fc, X[train_idx], fold_seed, threads)
            F_tr = fmap.transform(X[train_idx], threads)
            F_va = fmap.transform(X[val_idx], threads)
            for j, model in enumerate(_fit_path(pipeline.task, F_tr, Y[train_idx], grid.lambdas)):
                scores[c * n_lam + j, f] = _score(pipeline.task, model, F_va, Y[val_idx])
    means = scores.mean(axis=1)
    best = int(np.argmax(means)) if pipeline.task == CLASSIFICATION else int(np.argmin(means))
    table = [
        dict(cfg, folds=[float(v) for v in scores[i]], mean=float(means[i]))
        for i, cfg in enumerate(configs)
    ]
    return CVResult(best=dict(configs[best]), table=table)


def fit_pipeline(X, Y, config: dict, pipeline: Pipeline, seed: int, threads: int = 1):
    """Feature map and linear model trained on all of ``X`` with one configuration."""
    fmap = build_pipeline_map(pipeline, config, X, seed, threads)
    model = _fit(pipeline.task, fmap.transform(X, threads), Y, config["lam"])
    return fmap, model


def evaluate(fmap, model, X, Y, task: str, threads: int = 1) -> float:
    return _score(task, model, fmap.transform(X, threads), Y)
