"""Synthetic datasets whose targets are invariant to a known group by construction."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .groups import Image, SymmetricMatrix
from .seeding import make_rng

# Three blobs per class (offsets in units of the pattern radius), so classes
# differ only in arrangement.
SHAPES = (
    ((0.0, 0.0), (0.5, 0.0), (1.0, 0.0)),       # ray from the center
    ((0.0, 0.0), (1.0, 0.0), (0.0, 1.0)),       # right-angle corner
    ((1.0, 0.0), (-0.5, 0.866), (-0.5, -0.866)),  # triangle
    ((0.0, 0.0), (1.0, 0.0), (-1.0, 0.0)),      # centered bar
    ((0.0, 0.0), (1.0, 0.0), (0.707, 0.707)),   # narrow wedge
    ((1.0, 0.0), (-1.0, 0.0), (0.0, 1.0)),      # tee
    ((0.0, 0.0), (1.0, 0.0), (-0.5, 0.866)),    # wide wedge
    ((0.5, 0.0), (1.0, 0.0), (0.0, 1.0)),       # hook
)


@dataclass(frozen=True)
class PermInvariantRegression:
    """Coulomb-like symmetric matrices of ``n_mat`` random atoms.

    The target is a smooth function of the sorted row norms, so it is
    exactly invariant to joint row/column permutations.
    """

    n_mat: int = 6
    noise: float = 0.05
    n_train: int = 400
    n_test: int = 400
    seed: int = 0

    @property
    def layout(self) -> SymmetricMatrix:
        return SymmetricMatrix(self.n_mat)

    task = "regression"


@dataclass(frozen=True)
class RotatedShapesClassification:
    """Blob patterns rendered at a uniformly random rotation; label is the pattern id."""

    image_size: int = 16
    n_classes: int = 6
    angle_range: float = 2 * math.pi
    n_train: int = 120
    n_test: int = 400
    pixel_noise: float = 0.1
    seed: int = 0

    @property
    def layout(self) -> Image:
        return Image(self.image_size, self.image_size)

    task = "classification"


@dataclass(frozen=True)
class AffineShapes:
    """Blob patterns under random rotation, isotropic scaling and translation."""

    image_size: int = 16
    n_classes: int = 4
    scale_range: tuple = (0.8, 1.25)
    trans_range: float = 1.0
    rot_range: float = 2 * math.pi
    n_train: int = 300
    n_test: int = 400
    pixel_noise: float = 0.05
    seed: int = 0

    @property
    def layout(self) -> Image:
        return Image(self.image_size, self.image_size)

    task = "classification"


def coulomb_matrices(n: int, n_atoms: int, rng: np.random.Generator) -> np.ndarray:
    charges = rng.uniform(0.5, 2.0, size=(n, n_atoms))
    pos = rng.normal(0.0, 1.0, size=(n, n_atoms, 3))
    dist = np.linalg.norm(pos[:, :, None, :] - pos[:, None, :, :], axis=-1)
    C = charges[:, :, None] * charges[:, None, :] / (1.0 + dist)
    idx = np.arange(n_atoms)
    C[:, idx, idx] = 0.5 * charges**2
    for i in range(n):  # arbitrary atom order
        p = rng.permutation(n_atoms)
        C[i] = C[i][np.ix_(p, p)]
    return C


def invariant_target(C: np.ndarray) -> np.ndarray:
    """Smooth function of the sorted row norms of each matrix."""
    # sorting each row first fixes the summation order, so the result is
    # bit-for-bit invariant rather than invariant up to rounding
    norms = np.sort(np.linalg.norm(np.sort(C, axis=2), axis=2), axis=1)[:, ::-1]
    # elementwise accumulation in a fixed order: a BLAS dot product may round
    # differently depending on memory layout
    t = np.tanh(norms - 2.0)
    out = 0.3 * np.sin(norms[:, 0])
    for i in range(C.shape[1]):
        out = out + t[:, i] / (i + 1)
    return out


def render_shape(
    shape: int, angle: float, size: int, scale: float = 1.0, shift=(0.0, 0.0), amp: float = 1.0
) -> np.ndarray:
    radius = 0.28 * size * scale
    width = 0.09 * size * scale
    c, s = math.cos(angle), math.sin(angle)
    center = (size - 1) / 2.0
    rows, cols = np.mgrid[0:size, 0:size]
    img = np.zeros((size, size))
    for ox, oy in SHAPES[shape]:
        px = radius * (c * ox - s * oy) + center + shift[0]
        py = radius * (s * ox + c * oy) + center + shift[1]
        img += np.exp(-((cols - px) ** 2 + (rows - py) ** 2) / (2.0 * width**2))
    return amp * img.ravel()


def _balanced_labels(n: int, k: int, rng) -> np.ndarray:
    return rng.permutation(np.arange(n) % k)


def _shapes_split(t, n: int, rng, affine: bool):
    labels = _balanced_labels(n, t.n_classes, rng)
    X = np.empty((n, t.image_size**2))
    for i, lab in enumerate(labels):
        amp = rng.uniform(0.8, 1.2)
        if affine:
            angle = rng.uniform(0.0, t.rot_range)
            scale = rng.uniform(*t.scale_range)
            shift = rng.uniform(-t.trans_range, t.trans_range, size=2)
        else:
            angle = rng.uniform(0.0, t.angle_range)
            scale = rng.uniform(0.9, 1.1)
            shift = rng.uniform(-0.5, 0.5, size=2)
        X[i] = render_shape(int(lab), angle, t.image_size, scale, shift, amp)
    X += rng.normal(0.0, t.pixel_noise, size=X.shape)
    return X, labels


def generate_task(t):
    """Return ``(X_train, Y_train, X_test, Y_test)`` for a synthetic task."""
    if isinstance(t, PermInvariantRegression):
        if t.n_mat < 2 or t.n_train < 1 or t.n_test < 1:
            raise ValueError("invalid task size")
        rng = make_rng(t.seed, "task", "perm")
        C = coulomb_matrices(t.n_train + t.n_test, t.n_mat, rng)
        y = invariant_target(C)
        y = y + rng.normal(0.0, t.noise, size=y.shape)
        X = C.reshape(C.shape[0], -1)
        return X[: t.n_train], y[: t.n_train], X[t.n_train :], y[t.n_train :]
    if isinstance(t, (RotatedShapesClassification, AffineShapes)):
        if not 2 <= t.n_classes <= len(SHAPES) or t.image_size < 4:
            raise ValueError("invalid shape task parameters")
        if t.n_train < 1 or t.n_test < 1:
            raise ValueError("invalid task size")
        rng = make_rng(t.seed, "task", "shapes")
        affine = isinstance(t, AffineShapes)
        Xtr, ytr = _shapes_split(t, t.n_train, rng, affine)
        Xte, yte = _shapes_split(t, t.n_test, rng, affine)
        return Xtr, ytr, Xte, yte
    raise TypeError(f"unknown task {t!r}")
