"""Group elements acting on flat input vectors.

Two families are supported: permutations (acting on plain vectors or jointly
on the rows and columns of a symmetric matrix) and planar affine maps acting
on images. Images are resampled with bilinear interpolation about the image
center, reading out-of-bounds pixels as zero. The optional unitary
normalization multiplies intensities by ``|det J|**-0.5`` so that the action
preserves inner products in the continuum.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np
import scipy.sparse as sp

TWO_PI = 2.0 * math.pi


class GroupError(ValueError):
    """Raised for invalid group elements or incompatible actions."""


# ---------------------------------------------------------------------------
# Input layouts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Vector:
    d: int

    @property
    def size(self) -> int:
        return self.d


@dataclass(frozen=True)
class Image:
    height: int
    width: int

    @property
    def size(self) -> int:
        return self.height * self.width


@dataclass(frozen=True)
class SymmetricMatrix:
    n: int

    @property
    def size(self) -> int:
        return self.n * self.n


InputLayout = Union[Vector, Image, SymmetricMatrix]


def layout_to_dict(layout: InputLayout) -> dict:
    if isinstance(layout, Vector):
        return {"shape": "vector", "d": layout.d}
    if isinstance(layout, Image):
        return {"shape": "image", "height": layout.height, "width": layout.width}
    if isinstance(layout, SymmetricMatrix):
        return {"shape": "symmetric_matrix", "n": layout.n}
    raise TypeError(f"not a layout: {layout!r}")


def layout_from_dict(data: dict) -> InputLayout:
    shape = data.get("shape")
    if shape == "vector":
        return Vector(int(data["d"]))
    if shape == "image":
        return Image(int(data["height"]), int(data["width"]))
    if shape == "symmetric_matrix":
        return SymmetricMatrix(int(data["n"]))
    raise GroupError(f"unknown layout shape {shape!r}")


# ---------------------------------------------------------------------------
# Group elements
# ---------------------------------------------------------------------------


class GroupElement:
    """Base class; concrete elements are immutable dataclasses."""

    kind: str = ""

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Identity(GroupElement):
    """Identity element; acts trivially on every layout."""

    kind = "identity"

    def to_dict(self) -> dict:
        return {"kind": self.kind}


@dataclass(frozen=True)
class Permutation(GroupElement):
    """Permutation ``perm`` sending entry ``i`` to position ``perm[i]``."""

    perm: tuple[int, ...]
    kind = "permutation"

    def __post_init__(self):
        perm = tuple(int(p) for p in self.perm)
        if sorted(perm) != list(range(len(perm))):
            raise GroupError(f"not a bijection on 0..{len(perm) - 1}: {perm}")
        object.__setattr__(self, "perm", perm)

    @property
    def n(self) -> int:
        return len(self.perm)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "perm": list(self.perm)}


@dataclass(frozen=True)
class Rotation2D(GroupElement):
    theta: float
    kind = "rotation2d"

    def __post_init__(self):
        object.__setattr__(self, "theta", float(self.theta) % TWO_PI)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "theta": self.theta}


@dataclass(frozen=True)
class Translation2D(GroupElement):
    dx: float
    dy: float
    kind = "translation2d"

    def __post_init__(self):
        object.__setattr__(self, "dx", float(self.dx))
        object.__setattr__(self, "dy", float(self.dy))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dx": self.dx, "dy": self.dy}


@dataclass(frozen=True)
class Scaling2D(GroupElement):
    s: float
    kind = "scaling2d"

    def __post_init__(self):
        s = float(self.s)
        if not s > 0 or not math.isfinite(s):
            raise GroupError(f"scale must be positive and finite, got {s}")
        object.__setattr__(self, "s", s)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "s": self.s}


@dataclass(frozen=True)
class Affine2D(GroupElement):
    """Planar map ``p -> A p + b`` in image-centered coordinates (x right, y down)."""

    A: tuple[tuple[float, float], tuple[float, float]]
    b: tuple[float, float] = (0.0, 0.0)
    kind = "affine2d"

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float).reshape(2, 2)
        b = np.asarray(self.b, dtype=float).reshape(2)
        if abs(np.linalg.det(A)) <= 1e-12:
            raise GroupError("affine linear part is singular")
        object.__setattr__(self, "A", tuple(tuple(float(v) for v in row) for row in A))
        object.__setattr__(self, "b", tuple(float(v) for v in b))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "A": [list(r) for r in self.A], "b": list(self.b)}


GEOMETRIC = (Rotation2D, Translation2D, Scaling2D, Affine2D)


def element_from_dict(data: dict) -> GroupElement:
    kind = data.get("kind")
    if kind == "identity":
        return Identity()
    if kind == "permutation":
        return Permutation(tuple(data["perm"]))
    if kind == "rotation2d":
        return Rotation2D(data["theta"])
    if kind == "translation2d":
        return Translation2D(data["dx"], data["dy"])
    if kind == "scaling2d":
        return Scaling2D(data["s"])
    if kind == "affine2d":
        return Affine2D(tuple(map(tuple, data["A"])), tuple(data.get("b", (0.0, 0.0))))
    raise GroupError(f"unknown group element kind {kind!r}")


def affine_parts(g: GroupElement) -> tuple[np.ndarray, np.ndarray]:
    """Linear part and offset of a geometric element (or the identity)."""
    if isinstance(g, Identity):
        return np.eye(2), np.zeros(2)
    if isinstance(g, Rotation2D):
        c, s = math.cos(g.theta), math.sin(g.theta)
        return np.array([[c, -s], [s, c]]), np.zeros(2)
    if isinstance(g, Translation2D):
        return np.eye(2), np.array([g.dx, g.dy])
    if isinstance(g, Scaling2D):
        return g.s * np.eye(2), np.zeros(2)
    if isinstance(g, Affine2D):
        return np.array(g.A), np.array(g.b)
    raise GroupError(f"{type(g).__name__} is not a geometric element")


def identity_permutation(n: int) -> Permutation:
    return Permutation(tuple(range(n)))


def enumerate_permutations(n: int) -> list[Permutation]:
    """All ``n!`` permutations of ``0..n-1`` in lexicographic order."""
    return [Permutation(p) for p in itertools.permutations(range(n))]


# ---------------------------------------------------------------------------
# Algebra
# ---------------------------------------------------------------------------


def compose(g: GroupElement, h: GroupElement) -> GroupElement:
    """Return the element acting as ``g`` after ``h``."""
    if isinstance(g, Identity):
        return h
    if isinstance(h, Identity):
        return g
    if isinstance(g, Permutation) and isinstance(h, Permutation):
        if g.n != h.n:
            raise GroupError(f"permutation sizes differ: {g.n} vs {h.n}")
        gp = g.perm
        return Permutation(tuple(gp[i] for i in h.perm))
    if isinstance(g, GEOMETRIC) and isinstance(h, GEOMETRIC):
        if isinstance(g, Rotation2D) and isinstance(h, Rotation2D):
            return Rotation2D(g.theta + h.theta)
        if isinstance(g, Translation2D) and isinstance(h, Translation2D):
            return Translation2D(g.dx + h.dx, g.dy + h.dy)
        if isinstance(g, Scaling2D) and isinstance(h, Scaling2D):
            return Scaling2D(g.s * h.s)
        A1, b1 = affine_parts(g)
        A2, b2 = affine_parts(h)
        return Affine2D(A1 @ A2, A1 @ b2 + b1)
    raise GroupError(f"cannot compose {type(g).__name__} with {type(h).__name__}")


def invert(g: GroupElement) -> GroupElement:
    if isinstance(g, Identity):
        return g
    if isinstance(g, Permutation):
        inv = [0] * g.n
        for i, p in enumerate(g.perm):
            inv[p] = i
        return Permutation(tuple(inv))
    if isinstance(g, Rotation2D):
        return Rotation2D(-g.theta)
    if isinstance(g, Translation2D):
        return Translation2D(-g.dx, -g.dy)
    if isinstance(g, Scaling2D):
        return Scaling2D(1.0 / g.s)
    if isinstance(g, Affine2D):
        A, b = affine_parts(g)
        if abs(np.linalg.det(A)) <= 1e-12:
            raise GroupError("affine linear part is singular")
        Ainv = np.linalg.inv(A)
        return Affine2D(Ainv, -Ainv @ b)
    raise GroupError(f"cannot invert {g!r}")


def jacobian_det(g: GroupElement) -> float:
    """Absolute Jacobian determinant of the planar map (1 for permutations)."""
    if isinstance(g, (Identity, Permutation, Rotation2D, Translation2D)):
        return 1.0
    if isinstance(g, Scaling2D):
        return g.s * g.s
    if isinstance(g, Affine2D):
        (a, b), (c, d) = g.A
        return abs(a * d - b * c)
    raise GroupError(f"no Jacobian for {g!r}")


def is_identity(g: GroupElement) -> bool:
    if isinstance(g, Identity):
        return True
    if isinstance(g, Permutation):
        return g.perm == tuple(range(g.n))
    A, b = affine_parts(g)
    return bool(np.array_equal(A, np.eye(2)) and not b.any())


# ---------------------------------------------------------------------------
# Actions
# ---------------------------------------------------------------------------


def _check_compatible(g: GroupElement, layout: InputLayout) -> None:
    if isinstance(g, Identity):
        return
    if isinstance(g, Permutation):
        if isinstance(layout, Vector) and g.n == layout.d:
            return
        if isinstance(layout, SymmetricMatrix) and g.n == layout.n:
            return
        raise GroupError(f"permutation of size {g.n} cannot act on {layout}")
    if isinstance(g, GEOMETRIC):
        if isinstance(layout, Image):
            return
        raise GroupError(f"{type(g).__name__} acts on images only, got {layout}")
    raise GroupError(f"unknown element {g!r}")


@lru_cache(maxsize=8192)
def _permutation_index(g: Permutation, layout: InputLayout) -> np.ndarray:
    # out = x[idx]; out[perm[i]] = x[i]
    inv = np.empty(g.n, dtype=np.intp)
    inv[np.asarray(g.perm)] = np.arange(g.n)
    if isinstance(layout, SymmetricMatrix):
        idx = (inv[:, None] * layout.n + inv[None, :]).ravel()
    else:
        idx = inv
    idx.setflags(write=False)
    return idx


@lru_cache(maxsize=8192)
def _resampling_matrix(g: GroupElement, layout: Image) -> sp.csr_matrix:
    h, w = layout.height, layout.width
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    A, b = affine_parts(invert(g))
    rows, cols = np.mgrid[0:h, 0:w]
    px = cols.ravel() - cx
    py = rows.ravel() - cy
    qx = A[0, 0] * px + A[0, 1] * py + b[0] + cx
    qy = A[1, 0] * px + A[1, 1] * py + b[1] + cy
    x0 = np.floor(qx).astype(np.intp)
    y0 = np.floor(qy).astype(np.intp)
    fx = qx - x0
    fy = qy - y0
    out_idx = np.arange(h * w)
    data, ri, ci = [], [], []
    for dy, dx, wgt in (
        (0, 0, (1 - fx) * (1 - fy)),
        (0, 1, fx * (1 - fy)),
        (1, 0, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        xs, ys = x0 + dx, y0 + dy
        ok = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h) & (wgt != 0)
        data.append(wgt[ok])
        ri.append(out_idx[ok])
        ci.append(ys[ok] * w + xs[ok])
    M = sp.csr_matrix(
        (np.concatenate(data), (np.concatenate(ri), np.concatenate(ci))),
        shape=(h * w, h * w),
    )
    M.sum_duplicates()
    return M


def resampling_matrix(g: GroupElement, layout: Image, unitary_normalize: bool = True) -> sp.csr_matrix:
    """Sparse ``d x d`` matrix ``M`` with ``apply(g, x) == M @ x`` on images."""
    _check_compatible(g, layout)
    M = _resampling_matrix(g, layout)
    if unitary_normalize:
        M = M * jacobian_det(g) ** -0.5
    return M


def apply_batch(
    g: GroupElement,
    X: np.ndarray,
    layout: InputLayout,
    unitary_normalize: bool = True,
) -> np.ndarray:
    """Apply ``g`` to every row of ``X`` (shape ``n x d``)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != layout.size:
        raise GroupError(f"expected rows of length {layout.size}, got shape {X.shape}")
    _check_compatible(g, layout)
    if isinstance(g, Identity):
        return X.copy()
    if isinstance(g, Permutation):
        return X[:, _permutation_index(g, layout)]
    out = np.asarray((_resampling_matrix(g, layout) @ X.T).T)
    if unitary_normalize:
        out = out * jacobian_det(g) ** -0.5
    return out


def apply(
    g: GroupElement,
    x: np.ndarray,
    layout: InputLayout,
    unitary_normalize: bool = True,
) -> np.ndarray:
    """Return ``T_g(x)`` for a single flat vector ``x``."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise GroupError(f"expected a flat vector, got shape {x.shape}")
    return apply_batch(g, x[None, :], layout, unitary_normalize)[0]
