"""Probability distributions over groups.

Each distribution draws i.i.d. group elements from a numpy ``Generator``.
Locality is controlled by the spread of the distribution: a delta at the
identity reproduces the base kernel, a uniform distribution over a compact
group gives full invariance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .groups import (
    TWO_PI,
    Affine2D,
    GroupElement,
    Identity,
    Permutation,
    Rotation2D,
    Scaling2D,
    Translation2D,
    compose,
    invert,
)
from .seeding import as_rng, make_rng


class GroupDistribution:
    """Base class for samplers of group elements."""

    type_name: str = ""

    def sample(self, r: int, rng) -> list[GroupElement]:
        raise NotImplementedError

    def is_symmetric(self) -> bool:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class DeltaIdentity(GroupDistribution):
    type_name = "delta_identity"

    def sample(self, r, rng):
        _check_count(r)
        return [Identity() for _ in range(r)]

    def is_symmetric(self):
        return True

    def to_dict(self):
        return {"type": self.type_name}


@dataclass(frozen=True)
class UniformPermutation(GroupDistribution):
    n: int
    type_name = "uniform_permutation"

    def sample(self, r, rng):
        _check_count(r)
        rng = as_rng(rng)
        return [Permutation(tuple(rng.permutation(self.n))) for _ in range(r)]

    def is_symmetric(self):
        return True

    def to_dict(self):
        return {"type": self.type_name, "n": self.n}


@dataclass(frozen=True)
class VonMisesRotation(GroupDistribution):
    """Rotation angles with density proportional to ``exp(kappa*cos(theta - mode))``."""

    kappa: float
    mode: float = 0.0
    type_name = "von_mises_rotation"

    def __post_init__(self):
        if not self.kappa >= 0:
            raise ValueError(f"kappa must be >= 0, got {self.kappa}")

    def sample(self, r, rng):
        _check_count(r)
        angles = von_mises_angles(self.kappa, self.mode, r, as_rng(rng))
        return [Rotation2D(a) for a in angles]

    def is_symmetric(self):
        return self.mode % TWO_PI == 0.0

    def to_dict(self):
        return {"type": self.type_name, "kappa": self.kappa, "mode": self.mode}


@dataclass(frozen=True)
class GaussianTranslation(GroupDistribution):
    sigma: float
    mean: tuple[float, float] = (0.0, 0.0)
    type_name = "gaussian_translation"

    def __post_init__(self):
        if not self.sigma >= 0 or len(self.mean) != 2:
            raise ValueError("translation needs sigma >= 0 and a 2-D mean")

    def sample(self, r, rng):
        _check_count(r)
        shifts = as_rng(rng).normal(self.mean, self.sigma, size=(r, 2))
        return [Translation2D(dx, dy) for dx, dy in shifts]

    def is_symmetric(self):
        return tuple(self.mean) == (0.0, 0.0)

    def to_dict(self):
        return {"type": self.type_name, "sigma": self.sigma, "mean": list(self.mean)}


@dataclass(frozen=True)
class LogNormalScaling(GroupDistribution):
    mu: float
    sigma: float
    type_name = "log_normal_scaling"

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"log-scale sigma must be >= 0, got {self.sigma}")

    def sample(self, r, rng):
        _check_count(r)
        scales = np.exp(as_rng(rng).normal(self.mu, self.sigma, size=r))
        return [Scaling2D(s) for s in scales]

    def is_symmetric(self):
        return self.mu == 0.0

    def to_dict(self):
        return {"type": self.type_name, "mu": self.mu, "sigma": self.sigma}


@dataclass(frozen=True)
class ProductAffine(GroupDistribution):
    """One independent draw per component, composed left to right into one affine map."""

    components: tuple[GroupDistribution, ...] = field(default_factory=tuple)
    type_name = "product_affine"

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if not self.components:
            raise ValueError("product distribution needs at least one component")

    def sample(self, r, rng):
        _check_count(r)
        rng = as_rng(rng)
        draws = [c.sample(r, rng) for c in self.components]
        out = []
        for parts in zip(*draws):
            g = parts[0]
            for h in parts[1:]:
                g = compose(g, h)
            out.append(g if isinstance(g, Identity) else _as_affine(g))
        return out

    def is_symmetric(self):
        return all(c.is_symmetric() for c in self.components)

    def to_dict(self):
        return {"type": self.type_name, "components": [c.to_dict() for c in self.components]}


def _as_affine(g: GroupElement) -> GroupElement:
    if isinstance(g, Affine2D):
        return g
    return compose(Affine2D(((1.0, 0.0), (0.0, 1.0))), g)


def _check_count(r: int) -> None:
    if r < 1:
        raise ValueError(f"sample count must be >= 1, got {r}")


def von_mises_angles(kappa: float, mode: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """Best-Fisher rejection sampler; returns angles in ``[0, 2*pi)``."""
    if kappa < 1e-8:
        return rng.uniform(0.0, TWO_PI, size=size)
    tau = 1.0 + math.sqrt(1.0 + 4.0 * kappa * kappa)
    rho = (tau - math.sqrt(2.0 * tau)) / (2.0 * kappa)
    rr = (1.0 + rho * rho) / (2.0 * rho)
    out = np.empty(size)
    filled = 0
    while filled < size:
        m = max(2 * (size - filled), 16)
        u1, u2, u3 = rng.uniform(size=(3, m))
        z = np.cos(math.pi * u1)
        f = (1.0 + rr * z) / (rr + z)
        c = kappa * (rr - f)
        with np.errstate(divide="ignore"):
            accept = (c * (2.0 - c) - u2 > 0) | (np.log(c / u2) + 1.0 - c >= 0)
        theta = np.sign(u3 - 0.5) * np.arccos(np.clip(f, -1.0, 1.0))
        theta = theta[accept][: size - filled]
        out[filled : filled + theta.size] = theta
        filled += theta.size
    return (out + mode) % TWO_PI


def symmetrize_pool(samples: list[GroupElement]) -> list[GroupElement]:
    """Append the inverse of every element, giving a pool symmetric about the identity."""
    return list(samples) + [invert(g) for g in samples]


def sample(dist: GroupDistribution, r: int, seed) -> list[GroupElement]:
    """Draw ``r`` elements from a fresh stream keyed by ``seed``."""
    return dist.sample(r, as_rng(seed))


class GroupSampler:
    """Stateful, single-consumer stream of group elements."""

    def __init__(self, dist: GroupDistribution, seed: int, *tags):
        self.dist = dist
        self.seed = seed
        self.tags = tags
        self._rng = make_rng(seed, "group", *tags)

    def draw(self, r: int) -> list[GroupElement]:
        return self.dist.sample(r, self._rng)

    def split(self, tag) -> "GroupSampler":
        return GroupSampler(self.dist, self.seed, *self.tags, tag)


_TYPES = {
    cls.type_name: cls
    for cls in (
        DeltaIdentity,
        UniformPermutation,
        VonMisesRotation,
        GaussianTranslation,
        LogNormalScaling,
        ProductAffine,
    )
}


def distribution_from_dict(data: dict) -> GroupDistribution:
    data = dict(data)
    kind = data.pop("type", None)
    if kind not in _TYPES:
        raise ValueError(f"unknown distribution type {kind!r}")
    if kind == "product_affine":
        return ProductAffine(tuple(distribution_from_dict(c) for c in data["components"]))
    if kind == "gaussian_translation" and "mean" in data:
        data["mean"] = tuple(float(v) for v in data["mean"])
    return _TYPES[kind](**data)
