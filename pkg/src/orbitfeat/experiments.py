"""Experiment harness: approximation-error sweeps, benchmarks and risk probes.

Every job derives its seed from the master seed and a job label, so results
do not depend on scheduling or on the number of worker threads.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .distributions import (
    GaussianTranslation,
    LogNormalScaling,
    ProductAffine,
    UniformPermutation,
    VonMisesRotation,
)
from .distributions import DeltaIdentity
from .features import DATA_SIDE, REAL_COSINE, build_nys, build_rf
from .groups import Image, Rotation2D, SymmetricMatrix, Vector, apply_batch, enumerate_permutations
from .io import ResultTable
from .kernels import U_STAT, V_STAT, GaussianKernel, group_average_gram, pooled_eval, pooled_gram
from .learn import (
    CLASSIFICATION,
    CVGrid,
    Pipeline,
    cross_validate,
    evaluate,
    fit_classifier,
    fit_pipeline,
    fit_ridge,
    median_distance,
)
from .seeding import derive_seed, make_rng
from .tasks import (
    AffineShapes,
    PermInvariantRegression,
    RotatedShapesClassification,
    coulomb_matrices,
    generate_task,
    render_shape,
)

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ["axis_value", "spectral_err", "frobenius_err", "r", "seed"]
RESULT_COLUMNS = ["method", "layer", "fold", "metric", "value", "seed"]


def run_jobs(fn, jobs, threads: int = 1) -> list:
    """Run ``fn`` over ``jobs`` and return results in job order."""
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


def spectral_norm(A: np.ndarray, tol: float = 1e-6, max_iter: int = 200, seed: int = 0) -> float:
    """Largest singular value by power iteration on ``A^T A``.

    Falls back to a dense computation for ``n <= 500`` when the iteration
    has not converged.
    """
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        raise ValueError("empty matrix")
    v = make_rng(seed, "power").normal(size=A.shape[1])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = A @ v
        new = float(np.linalg.norm(w))
        if new == 0.0:
            return 0.0
        v = A.T @ w
        v /= np.linalg.norm(v)
        if abs(new - est) <= tol * new:
            return float(np.linalg.norm(A @ v))
        est = new
    if max(A.shape) <= 500:
        return float(np.linalg.norm(A, 2))
    logger.warning("power iteration did not reach tol=%g", tol)
    return float(np.linalg.norm(A @ v))


def normalized_errors(K_hat: np.ndarray, K: np.ndarray, seed: int = 0) -> tuple[float, float]:
    """``(||K_hat - K||_2 / ||K||_2, ||K_hat - K||_F / ||K||_F)``."""
    E = K_hat - K
    spec = spectral_norm(E, seed=seed) / spectral_norm(K, seed=seed)
    frob = float(np.linalg.norm(E) / np.linalg.norm(K))
    return spec, frob


# ---------------------------------------------------------------------------
# Kernel approximation sweeps
# ---------------------------------------------------------------------------


@dataclass
class SweepConfig:
    """Approximation error of permutation-averaged RF kernels against a pooled oracle.

    ``sigma_scale`` multiplies the median pairwise distance of the batch.
    Errors at each point are averaged over ``template_reps`` independent
    template draws.
    """

    n_mat: int = 20
    n_points: int = 200
    sigma_scale: float = 0.25
    oracle_r: int = 70
    r_values: list = field(default_factory=lambda: [20, 40, 70])
    s_values: list = field(default_factory=lambda: [2**k for k in range(7, 14)])
    template_reps: int = 3
    variant: str = REAL_COSINE
    transfer_mode: str = DATA_SIDE
    seed: int = 0

    def __post_init__(self):
        for name in ("r_values", "s_values"):
            values = list(getattr(self, name))
            if not values or values != sorted(values) or min(values) < 1:
                raise ValueError(f"{name} must be non-empty, positive and sorted ascending")
        if self.n_points < 2:
            raise ValueError("need at least two data points")
        if self.template_reps < 1 or self.oracle_r < 1:
            raise ValueError("template_reps and oracle_r must be positive")


@dataclass
class ApproxErrorReport:
    config: SweepConfig
    table: ResultTable
    sigma: float


def sweep_data(cfg: SweepConfig) -> np.ndarray:
    C = coulomb_matrices(cfg.n_points, cfg.n_mat, make_rng(cfg.seed, "sweep-data"))
    return C.reshape(cfg.n_points, -1)


def approx_error_sweep(cfg: SweepConfig, threads: int = 1) -> ApproxErrorReport:
    """Normalized spectral and Frobenius errors of feature Gram matrices versus ``s``.

    The oracle Gram matrix is the V-statistic over ``oracle_r`` sampled
    permutations. A map with ``r`` group elements uses the first ``r`` of
    them (fresh draws beyond ``oracle_r``), so the residual at large ``s`` is
    the pool truncation error. Along ``s`` the templates are nested: the
    map at ``s`` uses the first ``s`` of ``max(s_values)`` templates.
    """
    X = sweep_data(cfg)
    layout = SymmetricMatrix(cfg.n_mat)
    sigma = cfg.sigma_scale * median_distance(X)
    base = GaussianKernel(sigma)
    dist = UniformPermutation(cfg.n_mat)
    oracle_pool = dist.sample(cfg.oracle_r, make_rng(cfg.seed, "oracle-pool"))
    K = pooled_gram(base, oracle_pool, X, layout)
    if not np.isfinite(K).all() or np.linalg.norm(K) == 0.0:
        raise ValueError("degenerate oracle Gram matrix")
    s_max = max(cfg.s_values)
    width = 1 if cfg.variant == REAL_COSINE else 2

    def pool_for(r):
        if r <= cfg.oracle_r:
            return oracle_pool[:r]
        return oracle_pool + dist.sample(r - cfg.oracle_r, make_rng(cfg.seed, "extra-pool", r))

    def job(rt):
        r, rep = rt
        fmap = build_rf(
            base, dist, s_max, r, layout, variant=cfg.variant, transfer_mode=cfg.transfer_mode,
            seed=derive_seed(cfg.seed, "templates", r, rep), pool=pool_for(r),
        )
        F = fmap.transform(X)
        errs = []
        for s in cfg.s_values:
            Fs = F[:, : width * s] * math.sqrt(s_max / s)
            errs.append(normalized_errors(Fs @ Fs.T, K, seed=cfg.seed))
        return np.array(errs)

    jobs = [(r, rep) for r in cfg.r_values for rep in range(cfg.template_reps)]
    results = run_jobs(job, jobs, threads)
    table = ResultTable(SWEEP_COLUMNS)
    for i, r in enumerate(cfg.r_values):
        errs = np.mean(results[i * cfg.template_reps : (i + 1) * cfg.template_reps], axis=0)
        for s, (spec, frob) in zip(cfg.s_values, errs):
            logger.info("sweep r=%d s=%d spectral=%.4g frobenius=%.4g", r, s, spec, frob)
            table.append({"axis_value": s, "spectral_err": float(spec), "frobenius_err": float(frob),
                          "r": r, "seed": cfg.seed})
    return ApproxErrorReport(cfg, table, sigma)


def curve(table: ResultTable, r: int, column: str) -> tuple[np.ndarray, np.ndarray]:
    rows = [row for row in table.rows if row["r"] == r]
    return np.array([row["axis_value"] for row in rows]), np.array([row[column] for row in rows])


def loglog_slope(xs, ys) -> float:
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def monotone_within(values, band: float = 0.1) -> bool:
    """Each value at most ``(1 + band)`` times its predecessor."""
    values = np.asarray(values, dtype=float)
    return bool(np.all(values[1:] <= (1.0 + band) * values[:-1]))


def rf_convergence(
    n_mat: int = 20,
    r: int = 40,
    s_values=(128, 256, 512, 1024, 2048, 4096, 8192),
    n_pairs: int = 200,
    sigma_scale: float = 0.25,
    quantile: float = 90.0,
    seed: int = 0,
) -> ResultTable:
    """Pairwise error of RF inner products against the V-statistic over the map's own pool.

    Isolates the template (``s``) part of the error: the group pool is fixed
    and the reference is the exact pool average.
    """
    layout = SymmetricMatrix(n_mat)
    C = coulomb_matrices(2 * n_pairs, n_mat, make_rng(seed, "conv-data"))
    X = C.reshape(2 * n_pairs, -1)
    base = GaussianKernel(sigma_scale * median_distance(X))
    dist = UniformPermutation(n_mat)
    pool = dist.sample(r, make_rng(seed, "conv-pool"))
    Xa, Xb = X[:n_pairs], X[n_pairs:]
    K = np.diag(pooled_gram(base, pool, Xa, layout, Y=Xb))
    table = ResultTable(["s", "error_quantile", "max_error", "r", "seed"])
    for s in s_values:
        fmap = build_rf(base, dist, s, r, layout, seed=derive_seed(seed, "conv", s), pool=pool)
        ip = np.sum(fmap.transform(Xa) * fmap.transform(Xb), axis=1)
        err = np.abs(ip - K)
        table.append({"s": s, "error_quantile": float(np.percentile(err, quantile)),
                      "max_error": float(err.max()), "r": r, "seed": seed})
    return table


# ---------------------------------------------------------------------------
# Benchmarks
# ---------------------------------------------------------------------------

METHODS = ("VanillaRF", "VanillaNys", "LGIKA_RF", "LGIKA_Nys")


def dist_family_for(task):
    """Group distribution family, indexed by the grid's width parameter."""
    if getattr(task, "dist", None) is not None:
        return lambda width: task.dist
    if isinstance(task, PermInvariantRegression):
        return lambda width: UniformPermutation(task.n_mat)
    if isinstance(task, RotatedShapesClassification):
        return lambda width: VonMisesRotation(float(width))
    if isinstance(task, AffineShapes):
        # width scales all three factors; 1.0 gives the CIFAR-style setting
        return lambda width: ProductAffine(
            (
                LogNormalScaling(0.0, 0.3 * width),
                GaussianTranslation(0.3 * width),
                VonMisesRotation(9.0 / width),
            )
        )
    raise TypeError(f"no group family for {task!r}")


@dataclass
class BenchConfig:
    methods: list = field(default_factory=lambda: ["VanillaRF", "LGIKA_RF"])
    layers: list = field(default_factory=lambda: [1, 2])
    s: int = 1000
    r: int = 70
    s2: int = 1000
    lambdas: list = field(default_factory=lambda: [1e-6, 1e-4, 1e-2, 1.0, 1e2])
    sigma_scales: list = field(default_factory=lambda: [0.5, 1.0, 2.0])
    widths: list = field(default_factory=lambda: [1.0])
    sigma2_scales: list = field(default_factory=lambda: [0.5, 1.0, 2.0])
    folds: int = 3
    seed: int = 0


def _pipeline(task, method: str, layers: int, cfg: BenchConfig) -> Pipeline:
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    lgika = method.startswith("LGIKA")
    return Pipeline(
        layout=task.layout,
        method="rf" if method.endswith("RF") else "nys",
        s=cfg.s,
        r=cfg.r if lgika else 1,
        layers=layers,
        s2=cfg.s2,
        dist_family=dist_family_for(task) if lgika else None,
        task=task.task,
    )


def run_benchmark(task, cfg: BenchConfig, threads: int = 1, data=None) -> ResultTable:
    """Cross-validate, refit and test every (method, layer) pair.

    Emits one row per validation fold (metric ``cv_rmse``/``cv_accuracy``)
    and one ``test`` row per method.
    """
    if not cfg.methods:
        raise ValueError("no methods requested")
    Xtr, Ytr, Xte, Yte = data if data is not None else generate_task(task)
    metric = "accuracy" if task.task == CLASSIFICATION else "rmse"
    med = median_distance(Xtr)
    jobs = [(m, layer) for m in cfg.methods for layer in cfg.layers]

    def job(ml):
        method, layer = ml
        pipe = _pipeline(task, method, layer, cfg)
        grid = CVGrid(
            lambdas=list(cfg.lambdas),
            sigmas=[sc * med for sc in cfg.sigma_scales],
            widths=list(cfg.widths) if pipe.dist_family is not None else [None],
            sigma2_scales=list(cfg.sigma2_scales) if layer == 2 else [1.0],
            folds=cfg.folds,
            seed=derive_seed(cfg.seed, "cv"),
        )
        cv = cross_validate(Xtr, Ytr, grid, pipe)
        best_row = next(r for r in cv.table if all(r[k] == v for k, v in cv.best.items()))
        fmap, model = fit_pipeline(Xtr, Ytr, cv.best, pipe, derive_seed(cfg.seed, "final"))
        test = evaluate(fmap, model, Xte, Yte, pipe.task)
        logger.info("%s layer=%d best=%s test %s=%.4g", method, layer, cv.best, metric, test)
        rows = [
            {"method": method, "layer": layer, "fold": f, "metric": f"cv_{metric}",
             "value": v, "seed": cfg.seed}
            for f, v in enumerate(best_row["folds"])
        ]
        rows.append({"method": method, "layer": layer, "fold": "test", "metric": metric,
                     "value": test, "seed": cfg.seed})
        return rows

    table = ResultTable(RESULT_COLUMNS)
    for rows in run_jobs(job, jobs, threads):
        for row in rows:
            table.append(row)
    return table


def final_metric(table: ResultTable, method: str, layer: int) -> float:
    for row in table.rows:
        if row["method"] == method and row["layer"] == layer and row["fold"] == "test":
            return float(row["value"])
    raise KeyError((method, layer))


# ---------------------------------------------------------------------------
# Risk probe
# ---------------------------------------------------------------------------


@dataclass
class ProbeConfig:
    n_values: list = field(default_factory=lambda: [100, 200, 400])
    s_values: list = field(default_factory=lambda: [1, 64, 1024])
    r_values: list = field(default_factory=lambda: [1, 10, 70])
    seeds: int = 5
    lam: float = 1e-3
    sigma_scale: float = 1.0
    seed: int = 0


def _clipped_risk(y_true, y_pred, lo, hi) -> float:
    return float(np.mean((np.clip(y_pred, lo, hi) - y_true) ** 2))


def risk_gap_probe(task: PermInvariantRegression, cfg: ProbeConfig, threads: int = 1) -> ResultTable:
    """Test risk of ridge on invariant RF features along the N, s and r axes.

    Each axis is varied with the other two held at their largest value.
    Squared loss on predictions clipped to the training target range.
    """
    n_max, s_max, r_max = max(cfg.n_values), max(cfg.s_values), max(cfg.r_values)
    points = [("N", n, s_max, r_max) for n in cfg.n_values]
    points += [("s", n_max, s, r_max) for s in cfg.s_values]
    points += [("r", n_max, s_max, r) for r in cfg.r_values]
    dist = dist_family_for(task)(1.0)

    def job(point):
        axis, n, s, r = point
        risks = []
        for k in range(cfg.seeds):
            t = PermInvariantRegression(task.n_mat, task.noise, n, task.n_test, derive_seed(cfg.seed, "probe", k))
            Xtr, Ytr, Xte, Yte = generate_task(t)
            base = GaussianKernel(cfg.sigma_scale * median_distance(Xtr))
            fmap = build_rf(base, dist, s, r, t.layout, seed=derive_seed(cfg.seed, "probe-map", k, axis, n, s, r))
            model = fit_ridge(fmap.transform(Xtr), Ytr, cfg.lam)
            risks.append(_clipped_risk(Yte, model.predict(fmap.transform(Xte)), Ytr.min(), Ytr.max()))
        risks = np.array(risks)
        return {"axis": axis, "value": {"N": n, "s": s, "r": r}[axis], "N": n, "s": s, "r": r,
                "mean_risk": float(risks.mean()), "std_risk": float(risks.std(ddof=1)) if len(risks) > 1 else 0.0,
                "median_risk": float(np.median(risks))}

    columns = ["axis", "value", "N", "s", "r", "mean_risk", "std_risk", "median_risk"]
    return ResultTable(columns, run_jobs(job, points, threads))


def risk_non_increasing(table: ResultTable, axis: str) -> bool:
    """Mean risk never rises by more than one standard deviation along ``axis``."""
    rows = [row for row in table.rows if row["axis"] == axis]
    for prev, cur in zip(rows, rows[1:]):
        if cur["mean_risk"] > prev["mean_risk"] + max(prev["std_risk"], cur["std_risk"]):
            return False
    return True


def sqrt_rate(n) -> float:
    return 1.0 / math.sqrt(n)


# ---------------------------------------------------------------------------
# Self checks
# ---------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float


def check_exact_invariance(seed: int = 0, n_pairs: int = 100) -> CheckResult:
    """Worst ``|k_G(g x, y) - k_G(x, y)|`` over all of S3 with the exhaustive kernel."""
    rng = make_rng(seed, "check-invariance")
    layout = SymmetricMatrix(3)
    C = coulomb_matrices(2 * n_pairs, 3, rng).reshape(2 * n_pairs, -1)
    X, Y = C[:n_pairs], C[n_pairs:]
    base = GaussianKernel(median_distance(C))
    group = enumerate_permutations(3)
    ref = np.diag(group_average_gram(base, group, X, layout, Y=Y))
    worst = 0.0
    for g in group:
        moved = np.diag(group_average_gram(base, group, apply_batch(g, X, layout), layout, Y=Y))
        worst = max(worst, float(np.max(np.abs(moved - ref))))
    return CheckResult("exact_invariance_S3", worst <= 1e-12, worst, 1e-12)


def check_classifier_invariance(seed: int = 0, n: int = 120) -> CheckResult:
    """Fraction of test points whose predicted class changes under S3 (must be zero)."""
    rng = make_rng(seed, "check-classifier")
    layout = SymmetricMatrix(3)
    X = coulomb_matrices(n, 3, rng).reshape(n, -1)
    labels = (np.sort(X[:, [0, 4, 8]], axis=1)[:, -1] > np.median(X[:, [0, 4, 8]].max(axis=1))).astype(int)
    group = enumerate_permutations(3)
    fmap = build_rf(GaussianKernel(median_distance(X)), UniformPermutation(3), 512, len(group), layout,
                    seed=derive_seed(seed, "check-classifier-map"), pool=group)
    model = fit_classifier(fmap.transform(X), labels, 1e-3)
    pred = model.classify(fmap.transform(X))
    changed = 0
    for g in group:
        changed += int(np.sum(model.classify(fmap.transform(apply_batch(g, X, layout))) != pred))
    frac = changed / (len(group) * n)
    return CheckResult("classifier_argmax_invariance_S3", changed == 0, frac, 0.0)


def check_uv_gap(seed: int = 0, r_values=(5, 10, 50), n_pairs: int = 1000) -> CheckResult:
    """Worst ``|k_hat - k_tilde| * r`` over shared pools; bounded by one."""
    n_mat = 6
    layout = SymmetricMatrix(n_mat)
    C = coulomb_matrices(2 * n_pairs, n_mat, make_rng(seed, "check-uv")).reshape(2 * n_pairs, -1)
    base = GaussianKernel(median_distance(C))
    dist = UniformPermutation(n_mat)
    worst = 0.0
    for r in r_values:
        pool = dist.sample(r, make_rng(seed, "check-uv-pool", r))
        for i in range(n_pairs):
            x, y = C[i], C[n_pairs + i]
            v = pooled_eval(base, pool, pool, x, y, layout, V_STAT)
            u = pooled_eval(base, pool, pool, x, y, layout, U_STAT)
            worst = max(worst, abs(v - u) * r)
    return CheckResult("uv_gap_times_r", worst <= 1.0, worst, 1.0)


def check_spectral_moment(seed: int = 0, d: int = 16, sigma: float = 1.7, s: int = 100_000) -> CheckResult:
    """Relative error of the empirical ``E||w||^2`` against ``d / sigma^2``."""
    W = GaussianKernel(sigma).spectral_sample(d, s, make_rng(seed, "check-moment"))
    rel = abs(float(np.mean(np.sum(W**2, axis=1))) / (d / sigma**2) - 1.0)
    return CheckResult("spectral_moment", rel <= 0.02, rel, 0.02)


def check_nystrom_exact(seed: int = 0, n: int = 200, d: int = 5) -> CheckResult:
    """Max-abs Gram reconstruction error with every point used as a landmark."""
    X = make_rng(seed, "check-nys").normal(size=(n, d))
    base = GaussianKernel(math.sqrt(d))
    fmap = build_nys(base, DeltaIdentity(), 1, Vector(d), Z=X, seed=seed)
    F = fmap.transform(X)
    err = float(np.max(np.abs(F @ F.T - base.gram(X))))
    return CheckResult("nystrom_exactness", err <= 1e-6, err, 1e-6)


def check_permutation_unitarity(seed: int = 0, n_mat: int = 8, n: int = 50) -> CheckResult:
    """Worst inner-product change under joint permutations."""
    rng = make_rng(seed, "check-perm-unitary")
    layout = SymmetricMatrix(n_mat)
    X = rng.normal(size=(n, layout.size))
    G0 = X @ X.T
    worst = 0.0
    for g in UniformPermutation(n_mat).sample(10, rng):
        Xg = apply_batch(g, X, layout)
        worst = max(worst, float(np.max(np.abs(Xg @ Xg.T - G0))))
    return CheckResult("permutation_unitarity", worst <= 1e-12, worst, 1e-12)


def check_rotation_unitarity(seed: int = 0, size: int = 32, n_angles: int = 20) -> CheckResult:
    """Worst relative change of inner products of smooth images under rotation."""
    rng = make_rng(seed, "check-rot-unitary")
    layout = Image(size, size)
    X = np.stack([render_shape(k, rng.uniform(0, 2 * math.pi), size) for k in range(4)])
    G0 = X @ X.T
    worst = 0.0
    for theta in rng.uniform(0, 2 * math.pi, size=n_angles):
        Xg = apply_batch(Rotation2D(theta), X, layout)
        worst = max(worst, float(np.max(np.abs(Xg @ Xg.T - G0) / np.abs(G0).max())))
    return CheckResult("rotation_unitarity", worst <= 0.03, worst, 0.03)


def check_rf_oracle(seed: int = 0, n_mat: int = 5, n: int = 60, s: int = 2**15) -> CheckResult:
    """Frobenius error of exhaustive-pool RF features against the exhaustive S5 kernel."""
    layout = SymmetricMatrix(n_mat)
    X = coulomb_matrices(n, n_mat, make_rng(seed, "check-rf")).reshape(n, -1)
    base = GaussianKernel(median_distance(X))
    group = enumerate_permutations(n_mat)
    K = group_average_gram(base, group, X, layout)
    fmap = build_rf(base, UniformPermutation(n_mat), s, len(group), layout,
                    seed=derive_seed(seed, "check-rf-map"), pool=group)
    F = fmap.transform(X)
    err = float(np.linalg.norm(F @ F.T - K) / np.linalg.norm(K))
    return CheckResult("rf_exhaustive_oracle_frobenius", err <= 0.02, err, 0.02)


SELF_CHECKS = (
    check_exact_invariance,
    check_classifier_invariance,
    check_uv_gap,
    check_spectral_moment,
    check_nystrom_exact,
    check_permutation_unitarity,
    check_rotation_unitarity,
    check_rf_oracle,
)


def run_self_checks(seed: int = 0, threads: int = 1) -> list[CheckResult]:
    return run_jobs(lambda fn: fn(seed), list(SELF_CHECKS), threads)
