"""Locally group-invariant random feature maps.

Both maps average an ordinary kernel feature map over a pool of sampled
group elements, so that feature inner products estimate the orbit kernel:

* :class:`RFFeatureMap` averages random Fourier features,
  ``psi(x) = (1/r) sum_k z(g_k x)`` with ``z`` the cosine (or complex
  exponential) feature map of the Gaussian kernel.
* :class:`NysFeatureMap` averages Nystrom features,
  ``psi(x) = (1/r) L sum_k K(Z, g_k x)`` with ``L^T L = pinv(K(Z, Z))``.

The group action can be moved from the data onto the templates (or
landmarks) when the action is unitary and the pool is symmetric about the
identity. For image groups this is only approximate because of interpolation.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .distributions import DeltaIdentity, GroupDistribution, symmetrize_pool
from .groups import (
    GroupElement,
    Identity,
    Image,
    InputLayout,
    Vector,
    apply_batch,
    invert,
    jacobian_det,
)
from .kernels import GaussianKernel, squared_distances
from .seeding import make_rng

logger = logging.getLogger(__name__)

DATA_SIDE = "data"
TEMPLATE_SIDE = "template"
REAL_COSINE = "real"
COMPLEX = "complex"

# rows per block; fixed so results never depend on the thread count
CHUNK_ROWS = 256
# cache transferred templates only below this many float64 entries
_TRANSFER_CACHE_LIMIT = 2**25


def _map_chunks(fn, X: np.ndarray, threads: int = 1) -> np.ndarray:
    chunks = [X[i : i + CHUNK_ROWS] for i in range(0, X.shape[0], CHUNK_ROWS)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(fn, chunks))
    else:
        parts = [fn(c) for c in chunks]
    return np.concatenate(parts, axis=0)


def _check_input(X, layout: InputLayout) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != layout.size:
        raise ValueError(f"expected {layout.size} columns, got shape {X.shape}")
    return X


def _is_unitary(pool, layout: InputLayout, unitary_normalize: bool) -> bool:
    if unitary_normalize or not isinstance(layout, Image):
        return True
    return all(abs(jacobian_det(g) - 1.0) < 1e-12 for g in pool)


def _resolve_pool(pool, dist: GroupDistribution, transfer_mode: str, symmetrize: bool):
    if transfer_mode == DATA_SIDE:
        return pool
    if transfer_mode != TEMPLATE_SIDE:
        raise ValueError(f"unknown transfer mode {transfer_mode!r}")
    if dist is not None and not dist.is_symmetric():
        if not symmetrize:
            raise ValueError(
                "template-side transfer needs a distribution symmetric about the identity"
            )
        logger.warning("distribution is not symmetric; symmetrizing pool (r -> %d)", 2 * len(pool))
        return symmetrize_pool(pool)
    return pool


@dataclass
class RFFeatureMap:
    """Group-averaged random Fourier features (frozen after construction)."""

    templates: np.ndarray
    phases: np.ndarray | None
    pool: tuple
    sigma: float
    layout: InputLayout
    transfer_mode: str = DATA_SIDE
    variant: str = REAL_COSINE
    unitary_normalize: bool = True
    _transferred: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.templates = np.asarray(self.templates, dtype=float)
        self.pool = tuple(self.pool)
        if self.variant not in (REAL_COSINE, COMPLEX):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant == REAL_COSINE and self.phases is None:
            raise ValueError("real cosine features need phases")
        if self.templates.shape[1] != self.layout.size:
            raise ValueError("template length does not match layout")
        if self.transfer_mode == TEMPLATE_SIDE and self._transferred is None:
            if self.templates.size * len(self.pool) <= _TRANSFER_CACHE_LIMIT:
                self._transferred = np.stack([self._transfer(g) for g in self.pool])
        self.templates.setflags(write=False)

    @property
    def s(self) -> int:
        return self.templates.shape[0]

    @property
    def r(self) -> int:
        return len(self.pool)

    @property
    def d(self) -> int:
        return self.templates.shape[1]

    @property
    def dim(self) -> int:
        return self.s if self.variant == REAL_COSINE else 2 * self.s

    def _transfer(self, g: GroupElement) -> np.ndarray:
        # <w, g x> = <g^-1 w, x> for unitary actions
        return apply_batch(invert(g), self.templates, self.layout, self.unitary_normalize)

    def _projections(self, k: int, X: np.ndarray) -> np.ndarray:
        g = self.pool[k]
        if self.transfer_mode == DATA_SIDE:
            return apply_batch(g, X, self.layout, self.unitary_normalize) @ self.templates.T
        W = self._transferred[k] if self._transferred is not None else self._transfer(g)
        return X @ W.T

    def _transform_block(self, X: np.ndarray) -> np.ndarray:
        n, s, r = X.shape[0], self.s, self.r
        if self.variant == REAL_COSINE:
            acc = np.zeros((n, s))
            for k in range(r):
                acc += np.cos(self._projections(k, X) + self.phases)
            return acc * (math.sqrt(2.0) / (r * math.sqrt(s)))
        re = np.zeros((n, s))
        im = np.zeros((n, s))
        for k in range(r):
            P = self._projections(k, X)
            re += np.cos(P)
            im -= np.sin(P)
        out = np.empty((n, 2 * s))
        out[:, 0::2] = re
        out[:, 1::2] = im
        return out / (r * math.sqrt(s))

    def transform(self, X, threads: int = 1) -> np.ndarray:
        X = _check_input(X, self.layout)
        return _map_chunks(self._transform_block, X, threads)


def build_rf(
    base: GaussianKernel,
    dist: GroupDistribution,
    s: int,
    r: int,
    layout: InputLayout,
    variant: str = REAL_COSINE,
    transfer_mode: str = DATA_SIDE,
    seed: int = 0,
    unitary_normalize: bool = True,
    symmetrize: bool = True,
    pool: list[GroupElement] | None = None,
) -> RFFeatureMap:
    """Draw templates and a group pool and freeze them into a feature map.

    ``pool`` overrides sampling, e.g. with a fully enumerated finite group.
    """
    if s < 1 or r < 1:
        raise ValueError(f"s and r must be >= 1, got s={s}, r={r}")
    templates = base.spectral_sample(layout.size, s, make_rng(seed, "templates"))
    phases = None
    if variant == REAL_COSINE:
        phases = make_rng(seed, "phases").uniform(0.0, 2.0 * math.pi, size=s)
    sampled = pool is None
    if sampled:
        pool = dist.sample(r, make_rng(seed, "group"))
    pool = _resolve_pool(list(pool), dist if sampled else None, transfer_mode, symmetrize)
    if transfer_mode == TEMPLATE_SIDE and not _is_unitary(pool, layout, unitary_normalize):
        raise ValueError("template-side transfer needs a unitary group action")
    return RFFeatureMap(
        templates=templates,
        phases=phases,
        pool=tuple(pool),
        sigma=base.sigma,
        layout=layout,
        transfer_mode=transfer_mode,
        variant=variant,
        unitary_normalize=unitary_normalize,
    )


def transform_rf(m: RFFeatureMap, X, threads: int = 1) -> np.ndarray:
    return m.transform(X, threads)


@dataclass
class NysFeatureMap:
    """Group-averaged Nystrom features."""

    landmarks: np.ndarray
    factor: np.ndarray
    pool: tuple
    sigma: float
    layout: InputLayout
    transfer_mode: str = DATA_SIDE
    rank_tol: float = 1e-10
    unitary_normalize: bool = True
    _moved: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.pool = tuple(self.pool)
        self.base = GaussianKernel(self.sigma)
        if self.transfer_mode == TEMPLATE_SIDE and self._moved is None:
            # k(g x, z) = k(x, g^-1 z)
            self._moved = np.stack(
                [apply_batch(invert(g), self.landmarks, self.layout, self.unitary_normalize) for g in self.pool]
            )

    @property
    def m(self) -> int:
        return self.landmarks.shape[0]

    @property
    def r(self) -> int:
        return len(self.pool)

    @property
    def dim(self) -> int:
        return self.factor.shape[0]

    def landmark_average(self, X: np.ndarray) -> np.ndarray:
        """``(1/r) sum_k K(g_k x, Z)`` for every row, shape ``n x m``."""
        acc = np.zeros((X.shape[0], self.m))
        for k, g in enumerate(self.pool):
            if self.transfer_mode == DATA_SIDE:
                D = squared_distances(apply_batch(g, X, self.layout, self.unitary_normalize), self.landmarks)
            else:
                D = squared_distances(X, self._moved[k])
            acc += self.base.from_sqdist(D)
        return acc / self.r

    def _transform_block(self, X):
        return self.landmark_average(X) @ self.factor.T

    def transform(self, X, threads: int = 1) -> np.ndarray:
        X = _check_input(X, self.layout)
        return _map_chunks(self._transform_block, X, threads)


def nystrom_factor(K_zz: np.ndarray, rank_tol: float = 1e-10) -> np.ndarray:
    """``L`` with ``L^T L`` the pseudo-inverse of ``K_zz`` at relative cutoff ``rank_tol``."""
    if not rank_tol > 0:
        raise ValueError("rank_tol must be positive")
    evals, evecs = np.linalg.eigh((K_zz + K_zz.T) / 2.0)
    lam_max = evals[-1]
    keep = evals >= rank_tol * lam_max
    if lam_max <= 0 or not keep.any():
        raise ValueError("landmark kernel matrix is numerically zero (degenerate landmarks)")
    evals, evecs = evals[keep][::-1], evecs[:, keep][:, ::-1]
    return evecs.T / np.sqrt(evals)[:, None]


def build_nys(
    base: GaussianKernel,
    dist: GroupDistribution,
    r: int,
    layout: InputLayout,
    X=None,
    m: int | None = None,
    Z=None,
    transfer_mode: str = DATA_SIDE,
    rank_tol: float = 1e-10,
    seed: int = 0,
    unitary_normalize: bool = True,
    symmetrize: bool = True,
    pool: list[GroupElement] | None = None,
) -> NysFeatureMap:
    """Nystrom map with landmarks either given (``Z``) or sampled as ``m`` random rows of ``X``."""
    if Z is None:
        if X is None or m is None:
            raise ValueError("need explicit landmarks Z or data X with a landmark count m")
        X = _check_input(X, layout)
        if not 1 <= m <= X.shape[0]:
            raise ValueError(f"cannot pick {m} landmarks from {X.shape[0]} rows")
        idx = np.sort(make_rng(seed, "landmarks").choice(X.shape[0], size=m, replace=False))
        Z = X[idx]
    Z = _check_input(Z, layout).copy()
    L = nystrom_factor(base.gram(Z), rank_tol)
    sampled = pool is None
    if sampled:
        if r < 1:
            raise ValueError(f"r must be >= 1, got {r}")
        pool = dist.sample(r, make_rng(seed, "group"))
    pool = _resolve_pool(list(pool), dist if sampled else None, transfer_mode, symmetrize)
    if transfer_mode == TEMPLATE_SIDE and not _is_unitary(pool, layout, unitary_normalize):
        raise ValueError("landmark-side transfer needs a unitary group action")
    return NysFeatureMap(
        landmarks=Z,
        factor=L,
        pool=tuple(pool),
        sigma=base.sigma,
        layout=layout,
        transfer_mode=transfer_mode,
        rank_tol=rank_tol,
        unitary_normalize=unitary_normalize,
    )


def transform_nys(m: NysFeatureMap, X, threads: int = 1) -> np.ndarray:
    return m.transform(X, threads)


@dataclass
class TwoLayerMap:
    """A plain cosine random Fourier map stacked on a group-averaged first layer."""

    layer1: RFFeatureMap | NysFeatureMap
    layer2: RFFeatureMap

    @property
    def dim(self) -> int:
        return self.layer2.dim

    def transform(self, X, threads: int = 1) -> np.ndarray:
        return self.layer2.transform(self.layer1.transform(X, threads), threads)


def build_two_layer(layer1, sigma2: float, s2: int, seed: int = 0) -> TwoLayerMap:
    layer2 = build_rf(
        GaussianKernel(sigma2),
        DeltaIdentity(),
        s2,
        1,
        Vector(layer1.dim),
        variant=REAL_COSINE,
        seed=seed,
        pool=[Identity()],
    )
    return TwoLayerMap(layer1, layer2)


def transform_two_layer(m: TwoLayerMap, X, threads: int = 1) -> np.ndarray:
    return m.transform(X, threads)
