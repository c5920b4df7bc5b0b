import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcitraffic.errors import ArtifactMismatch, EmptyReferenceSet, EmptyTestSet, SingularCovariance
from dcitraffic.learn.nn import MlpModel
from dcitraffic.ood import (
    OOD,
    ClassReferenceSet,
    GaussianKernel,
    LinearKernel,
    OodDetector,
    build_detector,
    classify_with_ood,
    estimate_covariance,
    gaussian_kernel,
    ksd,
    load_detector,
    save_detector,
    spatial_depth,
    spatial_sign,
    sweep,
    threshold_from_depths,
    tune_threshold,
)


def depth_oracle(y, refs):
    """Literal definition with Python loops."""
    y = [float(v) for v in y]
    total = [0.0] * len(y)
    coincide = False
    for r in refs:
        d = [float(a) - b for a, b in zip(r, y)]
        n = math.sqrt(sum(v * v for v in d))
        if n == 0:
            coincide = True
            continue
        total = [t + v / n for t, v in zip(total, d)]
    denom = len(refs) - (1 if coincide else 0)
    if denom == 0:
        return 1.0
    return 1.0 - math.sqrt(sum(t * t for t in total)) / denom


class TestSpatialSign:
    def test_zero(self):
        assert np.array_equal(spatial_sign([0.0, 0.0]), [0.0, 0.0])

    def test_three_four(self):
        assert spatial_sign([3.0, 4.0]) == pytest.approx([0.6, 0.8])

    def test_unit_norm(self):
        y = np.random.default_rng(0).normal(size=6)
        assert abs(np.linalg.norm(spatial_sign(y)) - 1) < 1e-12


class TestSpatialDepth:
    def test_single_identical(self):
        assert spatial_depth([1.0, 2.0], [[1.0, 2.0]]) == 1.0

    def test_symmetric(self):
        assert spatial_depth([0.0, 0.0], [[1.0, 0.0], [-1.0, 0.0]]) == 1.0

    def test_far_point(self):
        assert spatial_depth([10.0, 0.0], [[0.0, 0.0], [1.0, 0.0]]) == 0.0

    def test_empty(self):
        with pytest.raises(EmptyReferenceSet):
            spatial_depth([0.0], np.zeros((0, 1)))

    def test_against_loop_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            refs = rng.normal(size=(rng.integers(1, 12), 3))
            y = refs[0] if rng.random() < 0.3 else rng.normal(size=3)
            assert spatial_depth(y, refs) == pytest.approx(depth_oracle(y, refs), abs=1e-12)

    def test_rotation_invariant(self):
        rng = np.random.default_rng(5)
        q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
        refs, y = rng.normal(size=(15, 4)), rng.normal(size=4)
        assert spatial_depth(y @ q.T, refs @ q.T) == pytest.approx(spatial_depth(y, refs), abs=1e-12)


class TestGaussianKernel:
    def test_self(self):
        assert gaussian_kernel([0.3, 0.7], [0.3, 0.7], np.eye(2)) == 1.0

    def test_unit_distance(self):
        assert gaussian_kernel([1.0, 0.0], [0.0, 0.0], np.eye(2)) == pytest.approx(math.exp(-1))

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(3, 3))
        cov = a @ a.T + np.eye(3)
        x, y = rng.normal(size=3), rng.normal(size=3)
        assert abs(gaussian_kernel(x, y, cov) - gaussian_kernel(y, x, cov)) <= 1e-15

    def test_mahalanobis(self):
        cov = np.diag([4.0, 1.0])
        assert gaussian_kernel([2.0, 0.0], [0.0, 0.0], cov) == pytest.approx(math.exp(-1))

    @pytest.mark.parametrize("cov", [np.zeros((2, 2)), np.array([[1.0, 2.0], [2.0, 1.0]]),
                                     np.array([[1.0, 0.5], [0.0, 1.0]])])
    def test_not_pd(self, cov):
        with pytest.raises(SingularCovariance):
            gaussian_kernel([0.0, 0.0], [1.0, 0.0], cov)


class TestKsd:
    def test_linear_matches_spatial_depth(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            k = int(rng.choice([3, 6]))
            refs = rng.dirichlet(np.ones(k), size=int(rng.integers(1, 31)))
            y = refs[rng.integers(len(refs))] if rng.random() < 0.2 else rng.dirichlet(np.ones(k))
            assert abs(ksd(y, refs, kernel=LinearKernel()) - spatial_depth(y, refs)) < 1e-10

    def test_self_is_one(self):
        assert ksd([0.2, 0.8], [[0.2, 0.8]], cov=np.eye(2)) == 1.0

    def test_far_below_centroid(self):
        refs = np.random.default_rng(2).normal(size=(20, 3)) * 0.1
        far = refs.mean(axis=0) + np.array([1e6, 0, 0])
        assert ksd(far, refs, cov=np.eye(3)) < ksd(refs.mean(axis=0), refs, cov=np.eye(3))

    def test_saturated_cluster_keeps_precision(self):
        # spreads far below the kernel bandwidth: the Gaussian feature map is
        # locally a scaled isometry, so KSD tends to the plain spatial depth
        rng = np.random.default_rng(8)
        base = np.array([1.0, 0.0, 0.0])
        refs = base + 1e-10 * rng.normal(size=(40, 3))
        cov = 1e-6 * np.eye(3)
        for _ in range(10):
            y = base + 1e-10 * rng.normal(size=3)
            assert abs(ksd(y, refs, cov=cov) - spatial_depth(y, refs)) < 1e-6

    def test_needs_cov_or_kernel(self):
        with pytest.raises(ValueError):
            ksd([0.0], [[1.0]])

    def test_bounds_fuzz(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            refs = rng.normal(size=(rng.integers(2, 15), 3)) * rng.uniform(0.01, 10)
            cov = estimate_covariance(refs)
            Y = rng.normal(size=(5, 3)) * rng.uniform(0.01, 10)
            d = ClassReferenceSet(refs, cov).depth(Y)
            assert np.all((d >= 0) & (d <= 1))


class TestCovariance:
    def test_identical(self):
        assert np.allclose(estimate_covariance(np.tile([0.2, 0.3, 0.5], (5, 1)), 1e-6),
                           1e-6 * np.eye(3), atol=0)

    def test_hand_example(self):
        cov = estimate_covariance([[1.0, 0.0], [0.0, 1.0]], 1e-6)
        assert np.allclose(cov, [[0.5 + 1e-6, -0.5], [-0.5, 0.5 + 1e-6]], atol=1e-15)

    def test_eigenvalues_at_least_ridge(self):
        V = np.random.default_rng(0).dirichlet(np.ones(3), size=40)
        assert np.linalg.eigvalsh(estimate_covariance(V, 1e-6)).min() >= 1e-6 * (1 - 1e-9)

    def test_too_few(self):
        with pytest.raises(EmptyReferenceSet):
            estimate_covariance([[1.0, 0.0]])


def toy_detector(seed=0, n=60):
    rng = np.random.default_rng(seed)
    probs = np.vstack([rng.dirichlet([20, 1, 1], n), rng.dirichlet([1, 20, 1], n),
                       rng.dirichlet([1, 1, 20], n)])
    labels = np.repeat([0, 1, 2], n)
    return build_detector(probs, labels, 3, seed=seed), probs, labels


class TestDetector:
    def test_threshold_range(self):
        det, _, _ = toy_detector()
        with pytest.raises(ValueError):
            det.with_threshold(1.5)

    def test_t_zero_never_rejects(self):
        det, probs, _ = toy_detector()
        assert np.array_equal(det.decide(probs, 0.0), probs.argmax(axis=1))

    def test_t_one_rejects_depth_below_one(self):
        det, probs, _ = toy_detector()
        _, d = det.depths(probs)
        dec = det.decide(probs, 1.0)
        assert np.all((dec == OOD) == (d < 1.0))
        assert np.all(dec == OOD)

    def test_monotone_selectivity(self):
        det, probs, _ = toy_detector()
        acc = [det.decide(probs, t) != OOD for t in np.linspace(0, 1, 21)]
        for a, b in zip(acc, acc[1:]):
            assert np.all(b <= a)

    def test_reference_cap(self):
        det, _, _ = toy_detector(n=40)
        assert all(len(r.vectors) == 40 for r in det.refs)
        capped = build_detector(*toy_detector(n=40)[1:], 3, max_refs=25)
        assert all(len(r.vectors) == 25 for r in capped.refs)

    def test_missing_class(self):
        with pytest.raises(EmptyReferenceSet):
            build_detector(np.full((4, 3), 1 / 3), np.array([0, 0, 1, 1]), 3)

    def test_json_round_trip(self, tmp_path):
        det, probs, _ = toy_detector()
        det = det.with_threshold(0.25)
        det.model_hash = "abc"
        save_detector(det, tmp_path / "d.json")
        back = load_detector(tmp_path / "d.json", model_hash="abc")
        assert back.threshold == 0.25
        assert np.array_equal(back.decide(probs), det.decide(probs))
        assert json.loads((tmp_path / "d.json").read_text())["model_hash"] == "abc"
        with pytest.raises(ArtifactMismatch):
            load_detector(tmp_path / "d.json", model_hash="other")

    def test_classify_with_ood(self):
        m = MlpModel(5, 3, seed=0)
        rng = np.random.default_rng(0)
        X = rng.random((30, 5, 2))
        det = build_detector(m.predict_proba(X), rng.integers(0, 3, 30), 3)
        for x in X[:5]:
            assert classify_with_ood(det, m, x) == int(m.predict(x[None])[0])


class TestTuning:
    def test_minimum(self):
        assert threshold_from_depths([0.6, 0.55, 0.48]) == 0.48
        assert threshold_from_depths([0.3]) == 0.3
        with pytest.raises(EmptyTestSet):
            threshold_from_depths([])

    def test_tune_accepts_all(self):
        det, probs, _ = toy_detector()
        t = tune_threshold(det, probs)
        assert t == det.depths(probs)[1].min()
        assert np.all(det.decide(probs, t) != OOD)
        with pytest.raises(EmptyTestSet):
            tune_threshold(det, np.zeros((0, 3)))

    def test_sweep_flat_then_drop(self):
        det, probs, labels = toy_detector(seed=1)
        test_probs = toy_detector(seed=2)[1]
        t = tune_threshold(det, test_probs)
        rows = sweep(det, test_probs, labels, [0.0, t / 2, t, t + 0.05])
        assert rows[0]["f_score"] == rows[1]["f_score"] == rows[2]["f_score"]
        assert rows[3]["f_score"] < rows[2]["f_score"]
        assert rows[2]["rejected"] == 0.0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 12), st.integers(1, 5))
def test_depth_bounds_and_translation(seed, n, k):
    rng = np.random.default_rng(seed)
    # dyadic grid values keep every sum and difference exact in floating point
    refs = rng.integers(-64, 64, (n, k)) / 8.0
    y = rng.integers(-64, 64, k) / 8.0
    c = rng.integers(-1000, 1000, k).astype(float)
    d = spatial_depth(y, refs)
    assert 0.0 <= d <= 1.0
    assert spatial_depth(y + c, refs + c) == d
    if n >= 2:
        kern = GaussianKernel(np.eye(k))
        g = ksd(y, refs, kernel=kern)
        assert 0.0 <= g <= 1.0
        assert ksd(y + c, refs + c, kernel=kern) == g
