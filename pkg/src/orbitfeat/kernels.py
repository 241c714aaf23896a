"""Gaussian base kernel and Monte Carlo ground truth for the orbit kernel.

The orbit kernel is the expectation of the base kernel over independent
group draws for both arguments. :class:`OracleKernel` estimates it either by
sampling group elements or, for small finite groups, by enumerating the whole
group.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .distributions import GroupDistribution
from .groups import (
    GroupElement,
    InputLayout,
    Permutation,
    apply_batch,
    enumerate_permutations,
)
from .seeding import as_rng, make_rng

V_STAT = "v"
U_STAT = "u"


def squared_distances(X: np.ndarray, Y: np.ndarray | None = None) -> np.ndarray:
    """Pairwise squared Euclidean distances, clipped at zero."""
    X = np.asarray(X, dtype=float)
    xx = np.einsum("ij,ij->i", X, X)
    if Y is None:
        D = xx[:, None] + xx[None, :] - 2.0 * (X @ X.T)
        np.maximum(D, 0.0, out=D)
        np.fill_diagonal(D, 0.0)
        return D
    Y = np.asarray(Y, dtype=float)
    yy = np.einsum("ij,ij->i", Y, Y)
    D = xx[:, None] + yy[None, :] - 2.0 * (X @ Y.T)
    np.maximum(D, 0.0, out=D)
    return D


@dataclass(frozen=True)
class GaussianKernel:
    """``k(x, y) = exp(-||x - y||^2 / (2 sigma^2))``."""

    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    def __call__(self, x, y) -> float:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.shape != y.shape:
            raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
        diff = x - y
        return math.exp(-float(diff @ diff) / (2.0 * self.sigma**2))

    def from_sqdist(self, D: np.ndarray) -> np.ndarray:
        return np.exp(D * (-0.5 / self.sigma**2))

    def gram(self, X, Y=None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[0] == 0:
            raise ValueError("empty data matrix")
        if Y is None:
            K = self.from_sqdist(squared_distances(X))
            return np.triu(K) + np.triu(K, 1).T
        return self.from_sqdist(squared_distances(X, np.atleast_2d(Y)))

    def spectral_sample(self, d: int, s: int, rng) -> np.ndarray:
        """``s`` templates drawn from the kernel's spectral density N(0, I/sigma^2)."""
        if s < 1:
            raise ValueError(f"template count must be >= 1, got {s}")
        scale = 0.0 if math.isinf(self.sigma) else 1.0 / self.sigma
        return as_rng(rng).normal(0.0, 1.0, size=(s, d)) * scale


def base_eval(k: GaussianKernel, x, y) -> float:
    return k(x, y)


def pooled_eval(
    base: GaussianKernel,
    pool_x: list[GroupElement],
    pool_y: list[GroupElement],
    x,
    y,
    layout: InputLayout,
    statistic: str = V_STAT,
    unitary_normalize: bool = True,
) -> float:
    """Average of ``k(g x, h y)`` over pool pairs.

    The V-statistic averages every pair. The U-statistic requires
    ``pool_x is pool_y`` semantics (one shared pool) and skips the diagonal.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.shape != (layout.size,):
        raise ValueError(f"vectors must both have length {layout.size}")
    GX = np.stack([apply_batch(g, x[None], layout, unitary_normalize)[0] for g in pool_x])
    GY = np.stack([apply_batch(g, y[None], layout, unitary_normalize)[0] for g in pool_y])
    K = base.from_sqdist(squared_distances(GX, GY))
    if statistic == V_STAT:
        return float(K.mean())
    if statistic == U_STAT:
        r = len(pool_x)
        if r < 2 or len(pool_y) != r:
            raise ValueError("U-statistic needs one shared pool of at least 2 elements")
        return float((K.sum() - np.trace(K)) / (r * (r - 1)))
    raise ValueError(f"unknown statistic {statistic!r}")


def pooled_gram(
    base: GaussianKernel,
    pool: list[GroupElement],
    X,
    layout: InputLayout,
    statistic: str = V_STAT,
    unitary_normalize: bool = True,
    Y=None,
) -> np.ndarray:
    """Gram matrix of the pool-averaged kernel with one pool shared by all points.

    With the V-statistic this is the Gram matrix of the empirical mean
    embeddings and is therefore positive semidefinite.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("empty data matrix")
    r = len(pool)
    if statistic == U_STAT and r < 2:
        raise ValueError("U-statistic needs at least 2 group elements")
    symmetric = Y is None
    Y = X if symmetric else np.atleast_2d(np.asarray(Y, dtype=float))
    tx = [apply_batch(g, X, layout, unitary_normalize) for g in pool]
    ty = tx if symmetric else [apply_batch(g, Y, layout, unitary_normalize) for g in pool]
    n, m = X.shape[0], Y.shape[0]
    stacked = np.concatenate(ty, axis=0)  # (r*m, d), block l holds g_l Y
    total = np.zeros((n, m))
    diag = np.zeros((n, m))
    for k in range(r):
        Kk = base.from_sqdist(squared_distances(tx[k], stacked)).reshape(n, r, m)
        total += Kk.sum(axis=1)
        if statistic == U_STAT:
            diag += Kk[:, k, :]
    if statistic == V_STAT:
        K = total / (r * r)
    elif statistic == U_STAT:
        K = (total - diag) / (r * (r - 1))
    else:
        raise ValueError(f"unknown statistic {statistic!r}")
    if symmetric:
        K = np.triu(K) + np.triu(K, 1).T
    return K


def group_average_gram(base: GaussianKernel, group: list[Permutation], X, layout, Y=None) -> np.ndarray:
    """Haar kernel over a full finite permutation group.

    Uses ``k(g x, g' y) = k(x, g^-1 g' y)`` so one sum over the group suffices.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    symmetric = Y is None
    Y = X if symmetric else np.atleast_2d(np.asarray(Y, dtype=float))
    K = np.zeros((X.shape[0], Y.shape[0]))
    for h in group:
        K += base.from_sqdist(squared_distances(X, apply_batch(h, Y, layout)))
    K /= len(group)
    if symmetric:
        K = np.triu(K) + np.triu(K, 1).T
    return K


@dataclass(frozen=True)
class OracleKernel:
    """Monte Carlo (or exhaustive) estimate of the orbit kernel.

    ``exhaustive=True`` replaces sampling by the full permutation group
    (only for :class:`~orbitfeat.distributions.UniformPermutation`).
    """

    base: GaussianKernel
    dist: GroupDistribution
    r_oracle: int
    layout: InputLayout
    statistic: str = V_STAT
    exhaustive: bool = False
    unitary_normalize: bool = True

    def __post_init__(self):
        if self.statistic not in (V_STAT, U_STAT):
            raise ValueError(f"unknown statistic {self.statistic!r}")
        if self.statistic == U_STAT and self.r_oracle < 2 and not self.exhaustive:
            raise ValueError("U-statistic needs r_oracle >= 2")
        if self.exhaustive and not hasattr(self.dist, "n"):
            raise ValueError("exhaustive mode needs a finite permutation group")

    def full_group(self) -> list[Permutation]:
        return enumerate_permutations(self.dist.n)

    def pool(self, seed, tag="pool") -> list[GroupElement]:
        if self.exhaustive:
            return self.full_group()
        return self.dist.sample(self.r_oracle, make_rng(seed, "oracle", tag))

    def __call__(self, x, y, seed=0) -> float:
        return oracle_eval(self, x, y, seed)

    def gram(self, X, seed=0, Y=None) -> np.ndarray:
        if self.exhaustive and self.statistic == V_STAT:
            return group_average_gram(self.base, self.full_group(), X, self.layout, Y=Y)
        return pooled_gram(
            self.base, self.pool(seed), X, self.layout, self.statistic, self.unitary_normalize, Y=Y
        )


def oracle_eval(o: OracleKernel, x, y, seed=0) -> float:
    """Orbit kernel estimate for one pair.

    V-statistic: independent pools for ``x`` and ``y``. U-statistic: one
    shared pool, off-diagonal pairs only.
    """
    if o.statistic == U_STAT:
        pool = o.pool(seed, "shared")
        return pooled_eval(o.base, pool, pool, x, y, o.layout, U_STAT, o.unitary_normalize)
    return pooled_eval(
        o.base, o.pool(seed, "x"), o.pool(seed, "y"), x, y, o.layout, V_STAT, o.unitary_normalize
    )


def gram(kernel, X, seed=0) -> np.ndarray:
    """Gram matrix for either a base kernel or an oracle kernel."""
    if isinstance(kernel, OracleKernel):
        return kernel.gram(X, seed)
    return kernel.gram(X)


def write_gram_csv(path, K: np.ndarray) -> None:
    """Full matrix, row-major, 9 significant digits."""
    np.savetxt(path, np.asarray(K), delimiter=",", fmt="%.9g")
