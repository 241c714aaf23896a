"""Serialization: result tables, CSV data, and the binary container for maps and models.

Binary container layout (all little-endian)::

    magic      8 bytes   b"ORBFEAT\\0"
    version    uint32
    variant    uint32    1 rf-real, 2 rf-complex, 3 nystrom, 4 two-layer, 5 ridge model
    s, r, d    uint64 x3
    layout     uint32 shape code + uint64 x2 (dims)
    transfer   uint32    0 data side, 1 template side
    flags      uint32    bit 0: unitary normalization
    sigma      float64
    n_arrays   uint32
    arrays     per array: uint32 ndim, uint64 x ndim shape, float64 data (C order)

Group pools are stored as an ``r x P`` float64 array, one row per element:
kind code followed by the element's parameters, zero padded.
"""

from __future__ import annotations

import csv
import io as _io
import json
import struct
from pathlib import Path

import numpy as np

from .features import (
    COMPLEX,
    DATA_SIDE,
    REAL_COSINE,
    TEMPLATE_SIDE,
    NysFeatureMap,
    RFFeatureMap,
    TwoLayerMap,
)
from .groups import (
    Affine2D,
    GroupElement,
    Identity,
    Image,
    Permutation,
    Rotation2D,
    Scaling2D,
    SymmetricMatrix,
    Translation2D,
    Vector,
)
from .learn import RidgeModel

MAGIC = b"ORBFEAT\x00"
VERSION = 1
_HEADER = struct.Struct("<8sII3QIQQIId")

_VARIANT_CODES = {"rf-real": 1, "rf-complex": 2, "nys": 3, "two-layer": 4, "ridge": 5}
_KIND_CODES = {Identity: 0, Permutation: 1, Rotation2D: 2, Translation2D: 3, Scaling2D: 4, Affine2D: 5}


class ContainerError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return str(v)


class ResultTable:
    """Ordered rows with a fixed column schema."""

    def __init__(self, columns, rows=None):
        self.columns = list(columns)
        self.rows: list[dict] = []
        for row in rows or []:
            self.append(row)

    def append(self, row: dict) -> None:
        missing = set(self.columns) - set(row)
        if missing:
            raise ValueError(f"row is missing columns {sorted(missing)}")
        self.rows.append({c: row[c] for c in self.columns})

    def column(self, name) -> list:
        return [row[name] for row in self.rows]

    def __len__(self):
        return len(self.rows)

    def to_csv(self) -> str:
        buf = _io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([format_value(row[c]) for c in self.columns])
        return buf.getvalue()

    def to_json(self) -> str:
        rows = [{c: _json_value(row[c]) for c in self.columns} for row in self.rows]
        return json.dumps({"columns": self.columns, "rows": rows}, indent=2) + "\n"

    def render(self, fmt: str = "csv") -> str:
        return self.to_json() if fmt == "json" else self.to_csv()


def _json_value(v):
    if isinstance(v, (float, np.floating)):
        return float(f"{float(v):.9g}")
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def load_csv_dataset(path, header: bool = False):
    """Rows of features with the label or target in the last column."""
    data = np.loadtxt(path, delimiter=",", skiprows=1 if header else 0, ndmin=2)
    if data.shape[1] < 2:
        raise ValueError("dataset needs at least one feature column and a target column")
    return data[:, :-1], data[:, -1]


# ---------------------------------------------------------------------------
# Binary container
# ---------------------------------------------------------------------------


def _layout_code(layout):
    if isinstance(layout, Vector):
        return 0, layout.d, 0
    if isinstance(layout, Image):
        return 1, layout.height, layout.width
    if isinstance(layout, SymmetricMatrix):
        return 2, layout.n, 0
    raise ContainerError(f"unknown layout {layout!r}")


def _layout_from_code(code, a, b):
    return {0: lambda: Vector(a), 1: lambda: Image(a, b), 2: lambda: SymmetricMatrix(a)}[code]()


def encode_pool(pool) -> np.ndarray:
    rows = []
    for g in pool:
        code = _KIND_CODES[type(g)]
        if isinstance(g, Permutation):
            params = list(g.perm)
        elif isinstance(g, Rotation2D):
            params = [g.theta]
        elif isinstance(g, Translation2D):
            params = [g.dx, g.dy]
        elif isinstance(g, Scaling2D):
            params = [g.s]
        elif isinstance(g, Affine2D):
            params = [*g.A[0], *g.A[1], *g.b]
        else:
            params = []
        rows.append([float(code), float(len(params)), *map(float, params)])
    width = max(len(r) for r in rows)
    out = np.zeros((len(rows), width))
    for i, row in enumerate(rows):
        out[i, : len(row)] = row
    return out


def decode_pool(arr: np.ndarray) -> list[GroupElement]:
    pool = []
    for row in np.atleast_2d(arr):
        code, k = int(row[0]), int(row[1])
        p = row[2 : 2 + k]
        if code == 0:
            pool.append(Identity())
        elif code == 1:
            pool.append(Permutation(tuple(int(v) for v in p)))
        elif code == 2:
            pool.append(Rotation2D(p[0]))
        elif code == 3:
            pool.append(Translation2D(p[0], p[1]))
        elif code == 4:
            pool.append(Scaling2D(p[0]))
        elif code == 5:
            pool.append(Affine2D(((p[0], p[1]), (p[2], p[3])), (p[4], p[5])))
        else:
            raise ContainerError(f"unknown element code {code}")
    return pool


def _write(fh, variant, s, r, d, layout, transfer, unitary, sigma, arrays):
    lc, la, lb = _layout_code(layout)
    fh.write(
        _HEADER.pack(
            MAGIC, VERSION, _VARIANT_CODES[variant], s, r, d, lc, la, lb,
            1 if transfer == TEMPLATE_SIDE else 0, int(bool(unitary)), float(sigma),
        )
    )
    fh.write(struct.pack("<I", len(arrays)))
    for arr in arrays:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes(order="C"))


def _read(fh):
    raw = fh.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise ContainerError("truncated header")
    magic, version, variant, s, r, d, lc, la, lb, transfer, flags, sigma = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise ContainerError("bad magic")
    if version != VERSION:
        raise ContainerError(f"unsupported version {version}")
    (count,) = struct.unpack("<I", fh.read(4))
    arrays = []
    for _ in range(count):
        (ndim,) = struct.unpack("<I", fh.read(4))
        shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
        n = int(np.prod(shape)) if shape else 1
        arrays.append(np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape).astype(float))
    names = {v: k for k, v in _VARIANT_CODES.items()}
    header = {
        "variant": names[variant], "s": s, "r": r, "d": d,
        "layout": _layout_from_code(lc, la, lb),
        "transfer_mode": TEMPLATE_SIDE if transfer else DATA_SIDE,
        "unitary_normalize": bool(flags & 1), "sigma": sigma,
    }
    return header, arrays


def _dump_map(fh, fmap):
    if isinstance(fmap, RFFeatureMap):
        variant = "rf-real" if fmap.variant == REAL_COSINE else "rf-complex"
        phases = fmap.phases if fmap.phases is not None else np.zeros(0)
        arrays = [fmap.templates, phases, encode_pool(fmap.pool)]
        _write(fh, variant, fmap.s, fmap.r, fmap.d, fmap.layout, fmap.transfer_mode,
               fmap.unitary_normalize, fmap.sigma, arrays)
    elif isinstance(fmap, NysFeatureMap):
        arrays = [fmap.landmarks, fmap.factor, encode_pool(fmap.pool), np.array([fmap.rank_tol])]
        _write(fh, "nys", fmap.m, fmap.r, fmap.landmarks.shape[1], fmap.layout, fmap.transfer_mode,
               fmap.unitary_normalize, fmap.sigma, arrays)
    elif isinstance(fmap, TwoLayerMap):
        _write(fh, "two-layer", fmap.layer2.s, 1, fmap.layer2.d, fmap.layer1.layout, DATA_SIDE,
               True, fmap.layer2.sigma, [])
        _dump_map(fh, fmap.layer1)
        _dump_map(fh, fmap.layer2)
    else:
        raise ContainerError(f"cannot serialize {type(fmap).__name__}")


def _load_map(fh):
    header, arrays = _read(fh)
    variant = header["variant"]
    common = dict(
        pool=(), sigma=header["sigma"], layout=header["layout"],
        transfer_mode=header["transfer_mode"], unitary_normalize=header["unitary_normalize"],
    )
    if variant in ("rf-real", "rf-complex"):
        templates, phases, pool = arrays
        common["pool"] = decode_pool(pool)
        return RFFeatureMap(
            templates=templates,
            phases=phases if variant == "rf-real" else None,
            variant=REAL_COSINE if variant == "rf-real" else COMPLEX,
            **common,
        )
    if variant == "nys":
        landmarks, factor, pool, tol = arrays
        common["pool"] = decode_pool(pool)
        return NysFeatureMap(landmarks=landmarks, factor=factor, rank_tol=float(tol[0]), **common)
    if variant == "two-layer":
        return TwoLayerMap(_load_map(fh), _load_map(fh))
    raise ContainerError(f"not a feature map container: {variant}")


def save_feature_map(path, fmap) -> None:
    with open(path, "wb") as fh:
        _dump_map(fh, fmap)


def load_feature_map(path):
    with open(path, "rb") as fh:
        return _load_map(fh)


def save_model(path, model: RidgeModel) -> None:
    classes = model.classes if model.classes is not None else np.zeros(0)
    with open(path, "wb") as fh:
        _write(fh, "ridge", model.weights.shape[0], model.weights.shape[1], model.weights.shape[0],
               Vector(model.weights.shape[0]), DATA_SIDE, False, model.lam,
               [model.weights, model.intercepts, np.asarray(classes, dtype=float),
                np.array([1.0 if model.classes is not None else 0.0])])


def load_model(path) -> RidgeModel:
    with open(path, "rb") as fh:
        header, arrays = _read(fh)
    if header["variant"] != "ridge":
        raise ContainerError("not a model container")
    W, b, classes, has_classes = arrays
    return RidgeModel(W, b, header["sigma"], classes if has_classes[0] else None)


def write_text(path: Path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")
