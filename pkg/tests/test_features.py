import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orbitfeat.distributions import DeltaIdentity, UniformPermutation, VonMisesRotation
from orbitfeat.features import (
    COMPLEX,
    DATA_SIDE,
    REAL_COSINE,
    TEMPLATE_SIDE,
    build_nys,
    build_rf,
    build_two_layer,
    nystrom_factor,
    transform_nys,
    transform_rf,
    transform_two_layer,
)
from orbitfeat.groups import Image, SymmetricMatrix, Vector, apply_batch, enumerate_permutations
from orbitfeat.kernels import GaussianKernel, group_average_gram, pooled_gram
from orbitfeat.seeding import make_rng
from orbitfeat.tasks import coulomb_matrices, render_shape


def sym_data(n, n_mat, seed=0):
    return coulomb_matrices(n, n_mat, make_rng(seed)).reshape(n, -1)


def test_vanilla_rf_approximates_gaussian():
    # [DERIVED] oracle: exact Gaussian Gram matrix
    X = np.random.default_rng(0).normal(size=(40, 5))
    base = GaussianKernel(2.0)
    fmap = build_rf(base, DeltaIdentity(), 20000, 1, Vector(5), seed=1)
    F = fmap.transform(X)
    assert np.max(np.abs(F @ F.T - base.gram(X))) < 0.05


def test_rf_matches_explicit_formula():
    # [DERIVED] oracle: the feature formula written out with loops
    lay = SymmetricMatrix(3)
    X = sym_data(3, 3)
    fmap = build_rf(GaussianKernel(2.0), UniformPermutation(3), 5, 4, lay, seed=2)
    ref = np.zeros((3, 5))
    for i, x in enumerate(X):
        for g in fmap.pool:
            gx = apply_batch(g, x[None], lay)[0]
            ref[i] += math.sqrt(2.0) * np.cos(fmap.templates @ gx + fmap.phases)
    ref /= 4 * math.sqrt(5)
    np.testing.assert_allclose(fmap.transform(X), ref, atol=1e-13)


def test_complex_variant_inner_product():
    # [DERIVED] oracle: average of cos(<w, g x - h y>) over templates and pool pairs
    lay = SymmetricMatrix(3)
    X = sym_data(2, 3)
    fmap = build_rf(GaussianKernel(2.0), UniformPermutation(3), 50, 3, lay, variant=COMPLEX, seed=3)
    F = fmap.transform(X)
    assert F.shape == (2, 100)
    GX = [apply_batch(g, X[0][None], lay)[0] for g in fmap.pool]
    GY = [apply_batch(g, X[1][None], lay)[0] for g in fmap.pool]
    ref = np.mean([np.mean(np.cos(fmap.templates @ (a - b))) for a in GX for b in GY])
    assert F[0] @ F[1] == pytest.approx(ref, abs=1e-12)


def test_rf_converges_to_pooled_v_statistic():
    # [DERIVED] oracle: V-statistic over the map's own pool
    lay = SymmetricMatrix(5)
    X = sym_data(30, 5)
    base = GaussianKernel(5.0)
    fmap = build_rf(base, UniformPermutation(5), 20000, 6, lay, seed=4)
    F = fmap.transform(X)
    K = pooled_gram(base, list(fmap.pool), X, lay)
    assert np.linalg.norm(F @ F.T - K) / np.linalg.norm(K) < 0.02


def test_exhaustive_pool_features_invariant():
    lay = SymmetricMatrix(3)
    X = sym_data(10, 3)
    group = enumerate_permutations(3)
    fmap = build_rf(GaussianKernel(2.0), UniformPermutation(3), 64, 6, lay, seed=5, pool=group)
    F = fmap.transform(X)
    for g in group:
        np.testing.assert_allclose(fmap.transform(apply_batch(g, X, lay)), F, atol=1e-12)


def test_exhaustive_pool_converges_to_haar_kernel():
    # [DERIVED] oracle: exhaustive-group kernel, Frobenius error <= 0.02 at s = 2^15
    lay = SymmetricMatrix(4)
    X = sym_data(40, 4)
    base = GaussianKernel(3.0)
    group = enumerate_permutations(4)
    K = group_average_gram(base, group, X, lay)
    F = build_rf(base, UniformPermutation(4), 2**15, len(group), lay, seed=6, pool=group).transform(X)
    assert np.linalg.norm(F @ F.T - K) / np.linalg.norm(K) <= 0.02


def test_template_side_equals_data_side_for_permutations():
    lay = SymmetricMatrix(5)
    X = sym_data(8, 5)
    base = GaussianKernel(3.0)
    a = build_rf(base, UniformPermutation(5), 32, 5, lay, transfer_mode=DATA_SIDE, seed=7)
    b = build_rf(base, UniformPermutation(5), 32, 5, lay, transfer_mode=TEMPLATE_SIDE, seed=7)
    np.testing.assert_allclose(a.transform(X), b.transform(X), atol=1e-12)


def test_template_side_close_to_data_side_for_rotations():
    lay = Image(24, 24)
    X = np.stack([render_shape(k, 0.4 * k, 24) for k in range(4)])
    base = GaussianKernel(6.0)
    a = build_rf(base, VonMisesRotation(1.0), 256, 6, lay, transfer_mode=DATA_SIDE, seed=8)
    b = build_rf(base, VonMisesRotation(1.0), 256, 6, lay, transfer_mode=TEMPLATE_SIDE, seed=8)
    Ka, Kb = a.transform(X) @ a.transform(X).T, b.transform(X) @ b.transform(X).T
    assert np.max(np.abs(Ka - Kb)) < 0.05


def test_template_side_symmetrizes_or_rejects():
    lay = Image(8, 8)
    base = GaussianKernel(2.0)
    fmap = build_rf(base, VonMisesRotation(1.0, mode=0.5), 8, 3, lay, transfer_mode=TEMPLATE_SIDE, seed=0)
    assert fmap.r == 6
    with pytest.raises(ValueError):
        build_rf(base, VonMisesRotation(1.0, mode=0.5), 8, 3, lay, transfer_mode=TEMPLATE_SIDE, symmetrize=False)


def test_input_shape_checked():
    fmap = build_rf(GaussianKernel(1.0), DeltaIdentity(), 4, 1, Vector(3))
    with pytest.raises(ValueError):
        fmap.transform(np.zeros((2, 4)))
    with pytest.raises(ValueError):
        build_rf(GaussianKernel(1.0), DeltaIdentity(), 0, 1, Vector(3))


@given(st.integers(1, 4))
@settings(max_examples=4, deadline=None)
def test_transform_independent_of_threads(threads):
    X = sym_data(600, 4)
    fmap = build_rf(GaussianKernel(3.0), UniformPermutation(4), 16, 3, SymmetricMatrix(4), seed=9)
    np.testing.assert_array_equal(transform_rf(fmap, X, threads), fmap.transform(X, 1))


def test_feature_norm_bounded():
    # [TRIVIAL] |psi(x)|^2 <= 2 for real cosine features
    X = sym_data(50, 4)
    F = build_rf(GaussianKernel(1.0), UniformPermutation(4), 128, 5, SymmetricMatrix(4), seed=10).transform(X)
    assert np.max(np.sum(F**2, axis=1)) <= 2.0 + 1e-12


# --- Nystrom ----------------------------------------------------------------


def test_nystrom_exact_on_landmarks():
    # [PAPER] all points as landmarks reproduce the Gram matrix to 1e-6
    X = np.random.default_rng(0).normal(size=(200, 4))
    base = GaussianKernel(2.0)
    fmap = build_nys(base, DeltaIdentity(), 1, Vector(4), Z=X)
    F = transform_nys(fmap, X)
    assert np.max(np.abs(F @ F.T - base.gram(X))) <= 1e-6


def test_nystrom_group_average_matches_oracle_on_landmarks():
    # [DERIVED] oracle: K_xZ_avg K_ZZ^-1 K_Zy_avg computed directly
    lay = SymmetricMatrix(3)
    X = sym_data(8, 3)
    base = GaussianKernel(2.0)
    group = enumerate_permutations(3)
    Z = X[:5]
    fmap = build_nys(base, UniformPermutation(3), 6, lay, Z=Z, pool=group)
    C = np.mean([base.gram(apply_batch(g, X, lay), Z) for g in group], axis=0)
    ref = C @ np.linalg.pinv(base.gram(Z)) @ C.T
    F = fmap.transform(X)
    np.testing.assert_allclose(F @ F.T, ref, atol=1e-8)


def test_nystrom_factor_drops_null_directions():
    Z = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
    L = nystrom_factor(GaussianKernel(1.0).gram(Z))
    assert L.shape[0] == 2
    with pytest.raises(ValueError):
        nystrom_factor(np.zeros((2, 2)))


def test_nystrom_template_side_matches_data_side():
    lay = SymmetricMatrix(4)
    X = sym_data(20, 4)
    base = GaussianKernel(3.0)
    a = build_nys(base, UniformPermutation(4), 5, lay, X=X, m=10, seed=1)
    b = build_nys(base, UniformPermutation(4), 5, lay, X=X, m=10, seed=1, transfer_mode=TEMPLATE_SIDE)
    np.testing.assert_allclose(a.transform(X), b.transform(X), atol=1e-12)


def test_nystrom_needs_landmark_source():
    with pytest.raises(ValueError):
        build_nys(GaussianKernel(1.0), DeltaIdentity(), 1, Vector(2))


# --- two layers -------------------------------------------------------------


def test_two_layer_approximates_gaussian_of_embedding_distance():
    # [DERIVED] oracle: Gaussian kernel evaluated on the layer-1 outputs
    lay = SymmetricMatrix(4)
    X = sym_data(20, 4)
    layer1 = build_rf(GaussianKernel(3.0), UniformPermutation(4), 200, 5, lay, seed=2)
    tl = build_two_layer(layer1, 0.5, 20000, seed=3)
    H = layer1.transform(X)
    F = transform_two_layer(tl, X)
    assert F.shape == (20, 20000)
    assert np.max(np.abs(F @ F.T - GaussianKernel(0.5).gram(H))) < 0.05
    assert tl.layer2.variant == REAL_COSINE
