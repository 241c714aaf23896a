import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orbitfeat.distributions import UniformPermutation
from orbitfeat.groups import SymmetricMatrix, Vector
from orbitfeat.learn import (
    CVGrid,
    Pipeline,
    accuracy,
    build_pipeline_map,
    classify,
    cross_validate,
    fit_classifier,
    fit_pipeline,
    fit_ridge,
    fold_assignment,
    one_vs_rest_targets,
    predict,
    ridge_path,
    rmse,
)
from orbitfeat.tasks import PermInvariantRegression, generate_task


def dense_ridge(F, y, lam):
    # [DERIVED] oracle: augmented normal equations with an unpenalized intercept column
    A = np.hstack([F, np.ones((F.shape[0], 1))])
    P = np.eye(A.shape[1]) * lam
    P[-1, -1] = 0.0
    coef = np.linalg.inv(A.T @ A + P) @ A.T @ y
    return coef[:-1], coef[-1]


@pytest.mark.parametrize("shape", [(30, 5), (6, 20)])
def test_ridge_matches_dense_inverse(shape):
    rng = np.random.default_rng(0)
    F = rng.normal(size=shape)
    y = rng.normal(size=shape[0])
    w, b = dense_ridge(F, y, 0.3)
    model = fit_ridge(F, y, 0.3)
    np.testing.assert_allclose(model.weights[:, 0], w, atol=1e-10)
    assert model.intercepts[0] == pytest.approx(b, abs=1e-10)
    assert predict(model, F).shape == (shape[0],)


@given(st.lists(st.floats(1e-6, 1e3), min_size=1, max_size=5), st.sampled_from([(25, 4), (5, 12)]))
@settings(max_examples=25, deadline=None)
def test_ridge_path_matches_individual_fits(lams, shape):
    rng = np.random.default_rng(1)
    F = rng.normal(size=shape)
    Y = rng.normal(size=(shape[0], 2))
    for lam, m in zip(lams, ridge_path(F, Y, lams)):
        ref = fit_ridge(F, Y, lam)
        np.testing.assert_allclose(m.predict(F), ref.predict(F), atol=1e-7 * (1 + np.abs(ref.predict(F)).max()))


def test_ridge_rejects_bad_inputs():
    with pytest.raises(ValueError):
        fit_ridge(np.ones((3, 2)), np.ones(3), 0.0)
    with pytest.raises(ValueError):
        fit_ridge(np.ones((3, 2)), np.ones(4), 1.0)
    with pytest.raises(ValueError):
        fit_ridge(np.array([[np.nan, 1.0]]), np.ones(1), 1.0)
    with pytest.raises(ValueError):
        fit_ridge(np.ones((3, 2)), np.ones(3), 1.0).predict(np.ones((2, 3)))


def test_one_vs_rest_and_tie_break():
    classes, Y = one_vs_rest_targets(np.array([2, 0, 2, 1]))
    np.testing.assert_array_equal(classes, [0, 1, 2])
    np.testing.assert_array_equal(Y[0], [-1, -1, 1])
    model = fit_classifier(np.eye(3), [0, 1, 2], 1.0)
    model.weights[:] = 0.0
    model.intercepts[:] = 0.0
    np.testing.assert_array_equal(classify(model, np.ones((2, 3))), [0, 0])


def test_classifier_separable():
    rng = np.random.default_rng(2)
    X = np.vstack([rng.normal(-3, 0.5, size=(20, 2)), rng.normal(3, 0.5, size=(20, 2))])
    y = np.repeat([5, 7], 20)
    model = fit_classifier(X, y, 1e-3)
    assert accuracy(y, model.classify(X)) == 1.0
    with pytest.raises(ValueError):
        fit_ridge(X, y.astype(float), 1.0).classify(X)


def test_metrics():
    assert rmse([0, 0], [3, 4]) == pytest.approx(np.sqrt(12.5))
    assert accuracy([1, 2, 3], [1, 0, 3]) == pytest.approx(2 / 3)


def test_folds_partition_rows():
    folds = fold_assignment(23, 4, seed=3)
    allidx = np.concatenate(folds)
    np.testing.assert_array_equal(np.sort(allidx), np.arange(23))
    assert fold_assignment(23, 4, 3)[0].tolist() == folds[0].tolist()
    with pytest.raises(ValueError):
        fold_assignment(3, 4, 0)


def test_grid_validation():
    with pytest.raises(ValueError):
        CVGrid(lambdas=[])
    with pytest.raises(ValueError):
        CVGrid(folds=1)
    assert len(CVGrid(sigmas=[1, 2], widths=[0.1, 1], sigma2_scales=[1]).feature_configs()) == 4


def test_cross_validate_picks_reasonable_lambda_and_is_deterministic():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(60, 3))
    y = np.sin(X[:, 0]) + 0.05 * rng.normal(size=60)
    pipe = Pipeline(layout=Vector(3), s=200)
    grid = CVGrid(lambdas=[1e-4, 1e-2, 1e4], sigmas=[1.0, 2.0], folds=3, seed=5)
    a = cross_validate(X, y, grid, pipe)
    b = cross_validate(X, y, grid, pipe, threads=2)
    assert a.best == b.best and a.table == b.table
    assert a.best["lam"] != 1e4
    assert len(a.table) == 6


def test_pipeline_variants_build():
    task = PermInvariantRegression(n_mat=4, n_train=40, n_test=10)
    Xtr, ytr, Xte, yte = generate_task(task)
    for method in ("rf", "nys"):
        for layers in (1, 2):
            pipe = Pipeline(layout=SymmetricMatrix(4), method=method, s=30, r=3, layers=layers, s2=20,
                            dist_family=lambda w: UniformPermutation(4))
            fmap, model = fit_pipeline(Xtr, ytr, {"sigma": 3.0, "width": 1.0, "sigma2_scale": 1.0, "lam": 0.1}, pipe, 0)
            assert np.isfinite(model.predict(fmap.transform(Xte))).all()
    with pytest.raises(ValueError):
        build_pipeline_map(Pipeline(layout=Vector(2), method="bogus"), {"sigma": 1.0}, np.ones((3, 2)), 0)
