"""Command-line entry point.

Usage::

    orbitfeat {sweep,bench,features,probe,selfcheck} [--config PATH] [--seed N]
              [--out DIR] [--threads N] [--format {csv,json}]

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import experiments as ex
from .distributions import DeltaIdentity, distribution_from_dict
from .features import build_nys, build_rf, build_two_layer
from .groups import layout_from_dict
from .io import ResultTable, load_csv_dataset, save_feature_map, write_text
from .kernels import GaussianKernel, write_gram_csv
from .learn import CLASSIFICATION, REGRESSION, median_distance
from .seeding import derive_seed
from .tasks import AffineShapes, PermInvariantRegression, RotatedShapesClassification, generate_task

logger = logging.getLogger("orbitfeat")

COMMANDS = ("sweep", "bench", "features", "probe", "selfcheck")
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class ConfigError(Exception):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class KernelSpec(_Strict):
    sigma: Optional[float] = Field(None, gt=0)
    sigma_scale: float = Field(1.0, gt=0)  # used when sigma is unset: scale x median distance


class FeatureSpec(_Strict):
    method: Literal["rf", "nys"] = "rf"
    variant: Literal["real", "complex"] = "real"
    s: int = Field(1000, ge=1)
    r: int = Field(1, ge=1)
    transfer_mode: Literal["data", "template"] = "data"
    rank_tol: float = Field(1e-10, gt=0)
    unitary_normalize: bool = True
    symmetrize: bool = True
    layers: Literal[1, 2] = 1
    s2: int = Field(1000, ge=1)
    sigma2_scale: float = Field(1.0, gt=0)


class PermTaskSpec(_Strict):
    generator: Literal["perm_invariant_regression"]
    n_mat: int = Field(6, ge=2)
    noise: float = Field(0.05, ge=0)
    n_train: int = Field(400, ge=1)
    n_test: int = Field(400, ge=1)


class RotatedTaskSpec(_Strict):
    generator: Literal["rotated_shapes"]
    image_size: int = Field(16, ge=4)
    n_classes: int = Field(6, ge=2, le=8)
    angle_range: float = Field(2 * np.pi, ge=0)
    n_train: int = Field(120, ge=1)
    n_test: int = Field(400, ge=1)
    pixel_noise: float = Field(0.1, ge=0)


class AffineTaskSpec(_Strict):
    generator: Literal["affine_shapes"]
    image_size: int = Field(16, ge=4)
    n_classes: int = Field(4, ge=2, le=8)
    scale_range: tuple[float, float] = (0.8, 1.25)
    trans_range: float = Field(1.0, ge=0)
    rot_range: float = Field(2 * np.pi, ge=0)
    n_train: int = Field(300, ge=1)
    n_test: int = Field(400, ge=1)
    pixel_noise: float = Field(0.05, ge=0)


TaskSpec = Annotated[Union[PermTaskSpec, RotatedTaskSpec, AffineTaskSpec], Field(discriminator="generator")]


class DatasetSpec(_Strict):
    train: str
    test: Optional[str] = None
    header: bool = False
    layout: dict
    task: Literal["regression", "classification"] = "regression"

    @field_validator("layout")
    @classmethod
    def _layout(cls, v):
        layout_from_dict(v)
        return v


class CVSpec(_Strict):
    lambdas: list[float] = [1e-6, 1e-4, 1e-2, 1.0, 1e2]
    sigma_scales: list[float] = [0.5, 1.0, 2.0]
    widths: list[float] = [1.0]
    sigma2_scales: list[float] = [0.5, 1.0, 2.0]
    folds: int = Field(3, ge=2)

    @field_validator("lambdas", "sigma_scales", "widths", "sigma2_scales")
    @classmethod
    def _positive(cls, v):
        if not v or min(v) <= 0:
            raise ValueError("grid must be non-empty with positive entries")
        return v


class BenchSpec(_Strict):
    methods: list[Literal["VanillaRF", "VanillaNys", "LGIKA_RF", "LGIKA_Nys"]] = ["VanillaRF", "LGIKA_RF"]
    layers: list[Literal[1, 2]] = [1, 2]
    s: int = Field(1000, ge=1)
    r: int = Field(70, ge=1)
    s2: int = Field(1000, ge=1)

    @field_validator("methods", "layers")
    @classmethod
    def _non_empty(cls, v):
        if not v:
            raise ValueError("must be non-empty")
        return v


class SweepSpec(_Strict):
    n_mat: int = Field(20, ge=2)
    n_points: int = Field(200, ge=2)
    sigma_scale: float = Field(0.25, gt=0)
    oracle_r: int = Field(70, ge=1)
    r_values: list[int] = [20, 40, 70]
    s_values: list[int] = [2**k for k in range(7, 14)]
    template_reps: int = Field(3, ge=1)
    variant: Literal["real", "complex"] = "real"
    transfer_mode: Literal["data", "template"] = "data"

    @field_validator("r_values", "s_values")
    @classmethod
    def _sorted(cls, v):
        if not v or v != sorted(v) or min(v) < 1:
            raise ValueError("must be non-empty, positive and sorted ascending")
        return v


class ProbeSpec(_Strict):
    n_values: list[int] = [100, 200, 400]
    s_values: list[int] = [1, 64, 1024]
    r_values: list[int] = [1, 10, 70]
    seeds: int = Field(5, ge=1)
    lam: float = Field(1e-3, gt=0)
    sigma_scale: float = Field(1.0, gt=0)


class ExperimentConfig(_Strict):
    """Validated experiment document. Sections unused by a command are ignored."""

    command: Optional[Literal["sweep", "bench", "features", "probe", "selfcheck"]] = None
    seed: int = Field(0, ge=0)
    out: str = "results"
    kernel: KernelSpec = KernelSpec()
    distribution: dict = {"type": "delta_identity"}
    features: FeatureSpec = FeatureSpec()
    task: Optional[TaskSpec] = None
    dataset: Optional[DatasetSpec] = None
    cv: CVSpec = CVSpec()
    bench: BenchSpec = BenchSpec()
    sweep: SweepSpec = SweepSpec()
    probe: ProbeSpec = ProbeSpec()
    gram_rows: int = Field(200, ge=0)

    @field_validator("distribution")
    @classmethod
    def _distribution(cls, v):
        try:
            distribution_from_dict(v)
        except (TypeError, KeyError, ValueError) as err:
            raise ValueError(f"invalid distribution: {err}") from err
        return v

    @model_validator(mode="after")
    def _source(self):
        if self.task is not None and self.dataset is not None:
            raise ValueError("give either 'task' or 'dataset', not both")
        return self


def load_config(path: Optional[str], command: str, seed: Optional[int], out: Optional[str]) -> ExperimentConfig:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as err:
            raise ConfigError(f"cannot read config: {err}") from err
        except json.JSONDecodeError as err:
            raise ConfigError(f"config is not valid JSON: {err}") from err
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    if data.get("command") not in (None, command):
        raise ConfigError(f"config is for command {data['command']!r}, not {command!r}")
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(str(err)) from err
    updates = {"command": command}
    if seed is not None:
        updates["seed"] = seed
    if out is not None:
        updates["out"] = out
    return cfg.model_copy(update=updates)


def resolved_json(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _task_object(cfg: ExperimentConfig, default=None):
    spec = cfg.task
    if spec is None:
        return default
    params = spec.model_dump(exclude={"generator"})
    seed = derive_seed(cfg.seed, "task")
    if spec.generator == "perm_invariant_regression":
        return PermInvariantRegression(seed=seed, **params)
    if spec.generator == "rotated_shapes":
        return RotatedShapesClassification(seed=seed, **params)
    return AffineShapes(seed=seed, **params)


def _dataset_arrays(spec: DatasetSpec):
    Xtr, ytr = load_csv_dataset(spec.train, spec.header)
    if spec.test is not None:
        Xte, yte = load_csv_dataset(spec.test, spec.header)
    else:
        Xte, yte = Xtr[:0], ytr[:0]
    layout = layout_from_dict(spec.layout)
    if Xtr.shape[1] != layout.size:
        raise ConfigError(f"dataset has {Xtr.shape[1]} features but layout expects {layout.size}")
    return layout, (Xtr, ytr, Xte, yte)


class _DatasetTask:
    """Adapter giving a loaded dataset the attributes the benchmark runner reads."""

    def __init__(self, layout, task, dist):
        self.layout = layout
        self.task = task
        self.dist = dist


def _sweep(cfg: ExperimentConfig, threads: int) -> dict:
    sc = ex.SweepConfig(seed=cfg.seed, **cfg.sweep.model_dump())
    report = ex.approx_error_sweep(sc, threads)
    return {"sweep": report.table}


def _bench(cfg: ExperimentConfig, threads: int) -> dict:
    bc = ex.BenchConfig(
        methods=list(cfg.bench.methods), layers=list(cfg.bench.layers),
        s=cfg.bench.s, r=cfg.bench.r, s2=cfg.bench.s2,
        lambdas=list(cfg.cv.lambdas), sigma_scales=list(cfg.cv.sigma_scales), widths=list(cfg.cv.widths),
        sigma2_scales=list(cfg.cv.sigma2_scales), folds=cfg.cv.folds, seed=cfg.seed,
    )
    if cfg.dataset is not None:
        layout, data = _dataset_arrays(cfg.dataset)
        if data[2].shape[0] == 0:
            raise ConfigError("bench on a dataset needs a test file")
        task = _DatasetTask(layout, cfg.dataset.task, distribution_from_dict(cfg.distribution))
        return {"results": ex.run_benchmark(task, bc, threads, data=data)}
    task = _task_object(cfg, PermInvariantRegression(seed=derive_seed(cfg.seed, "task")))
    return {"results": ex.run_benchmark(task, bc, threads)}


def _features(cfg: ExperimentConfig, threads: int, out: Path) -> dict:
    if cfg.dataset is not None:
        layout, (X, _, _, _) = _dataset_arrays(cfg.dataset)
    else:
        task = _task_object(cfg, PermInvariantRegression(seed=derive_seed(cfg.seed, "task")))
        X = generate_task(task)[0]
        layout = task.layout
    fs = cfg.features
    sigma = cfg.kernel.sigma or cfg.kernel.sigma_scale * median_distance(X)
    base = GaussianKernel(sigma)
    dist = distribution_from_dict(cfg.distribution)
    r = 1 if isinstance(dist, DeltaIdentity) else fs.r
    seed = derive_seed(cfg.seed, "features")
    if fs.method == "rf":
        fmap = build_rf(base, dist, fs.s, r, layout, variant=fs.variant, transfer_mode=fs.transfer_mode,
                        seed=seed, unitary_normalize=fs.unitary_normalize, symmetrize=fs.symmetrize)
    else:
        fmap = build_nys(base, dist, r, layout, X=X, m=min(fs.s, X.shape[0]), transfer_mode=fs.transfer_mode,
                         rank_tol=fs.rank_tol, seed=seed, unitary_normalize=fs.unitary_normalize,
                         symmetrize=fs.symmetrize)
    if fs.layers == 2:
        H = fmap.transform(X, threads)
        fmap = build_two_layer(fmap, fs.sigma2_scale * median_distance(H), fs.s2, seed=derive_seed(seed, "layer2"))
    F = fmap.transform(X, threads)
    save_feature_map(out / "feature_map.bin", fmap)
    m = min(cfg.gram_rows, F.shape[0])
    if m:
        write_gram_csv(out / "gram.csv", F[:m] @ F[:m].T)
    summary = ResultTable(["quantity", "value"])
    for name, value in (("n", X.shape[0]), ("input_dim", X.shape[1]), ("feature_dim", F.shape[1]),
                        ("sigma", sigma), ("group_elements", r), ("mean_feature_norm_sq", float(np.mean(np.sum(F**2, axis=1))))):
        summary.append({"quantity": name, "value": value})
    feats = ResultTable([f"f{j}" for j in range(F.shape[1])])
    for row in F:
        feats.append({f"f{j}": float(v) for j, v in enumerate(row)})
    return {"features": feats, "summary": summary}


def _probe(cfg: ExperimentConfig, threads: int) -> dict:
    task = _task_object(cfg, PermInvariantRegression(seed=derive_seed(cfg.seed, "task")))
    if not isinstance(task, PermInvariantRegression):
        raise ConfigError("probe needs a perm_invariant_regression task")
    pc = ex.ProbeConfig(seed=cfg.seed, **cfg.probe.model_dump())
    return {"probe": ex.risk_gap_probe(task, pc, threads)}


def _selfcheck(cfg: ExperimentConfig, threads: int) -> dict:
    table = ResultTable(["check", "status", "value", "threshold"])
    for res in ex.run_self_checks(cfg.seed, threads):
        table.append({"check": res.name, "status": "PASS" if res.passed else "FAIL",
                      "value": res.value, "threshold": res.threshold})
    return {"selfcheck": table}


def execute(cfg: ExperimentConfig, threads: int, fmt: str) -> tuple[dict, bool]:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_text(out / "resolved_config.json", resolved_json(cfg))
    cmd = cfg.command
    if cmd == "sweep":
        tables = _sweep(cfg, threads)
    elif cmd == "bench":
        tables = _bench(cfg, threads)
    elif cmd == "features":
        tables = _features(cfg, threads, out)
    elif cmd == "probe":
        tables = _probe(cfg, threads)
    else:
        tables = _selfcheck(cfg, threads)
    ext = "json" if fmt == "json" else "csv"
    for name, table in tables.items():
        write_text(out / f"{name}.{ext}", table.render(fmt))
    ok = all(row["status"] == "PASS" for row in tables["selfcheck"].rows) if cmd == "selfcheck" else True
    return tables, ok


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="orbitfeat", description="Group-invariant kernel feature experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="experiment config JSON (required except for selfcheck)")
    p.add_argument("--seed", type=int, help="master seed, overrides the config")
    p.add_argument("--out", help="output directory, overrides the config")
    p.add_argument("--threads", type=int, default=1, help="worker threads (speed only)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return EXIT_OK if err.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config is None and args.command != "selfcheck":
            raise ConfigError(f"--config is required for {args.command}")
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg = load_config(args.config, args.command, args.seed, args.out)
    except ConfigError as err:
        logger.error("config error: %s", err)
        return EXIT_CONFIG
    logger.info("running %s with seed %d", cfg.command, cfg.seed)
    try:
        tables, ok = execute(cfg, args.threads, args.format)
    except ConfigError as err:
        logger.error("config error: %s", err)
        return EXIT_CONFIG
    except Exception as err:  # noqa: BLE001 - any failure maps to the runtime exit code
        logger.error("runtime error: %s", err, exc_info=args.verbose)
        return EXIT_RUNTIME
    if cfg.command == "selfcheck":
        for row in tables["selfcheck"].rows:
            print(f"{row['status']} {row['check']} value={row['value']:.9g} threshold={row['threshold']:.9g}")
    elif cfg.command != "features":
        for table in tables.values():
            sys.stdout.write(table.render(args.format))
    logger.info("outputs written to %s", cfg.out)
    return EXIT_OK if ok else EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
