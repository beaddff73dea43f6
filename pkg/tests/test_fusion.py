"""
Tests for balltrack.fusion

The pair search is checked against a brute-force enumeration of every pair
candidate, the two evaluation strategies are checked against each other, and the
failure modes and tie-breaks are exercised on small constructed scenes.
"""

import itertools

import numpy as np
import pytest

from balltrack.errors import DegenerateGeometryError, FusionInputError
from balltrack.fusion import (
    FailureReason,
    FusionConfig,
    fuse,
    fuse_all_kway,
    largest_consistent_subset,
    pair_with_cameras,
)
from balltrack.geometry import (
    DEFAULT_WORKSPACE,
    Pixel,
    PixelObservation,
    project,
    reprojection_errors,
    synthetic_rig,
    triangulate,
)


def observe(X, rig, outliers=None, noise=0.0, rng=None):
    """Observation set for X; cameras in ``outliers`` report the given pixel."""
    outliers = outliers or {}
    S = []
    for cam in rig:
        if cam.id in outliers:
            pixel = Pixel(*outliers[cam.id])
        else:
            pixel = project(X, cam)
            if noise:
                pixel = Pixel(*(np.array(pixel) + rng.normal(0, noise, 2)))
        S.append((PixelObservation(cam.id, pixel), cam))
    return S


def brute_force(S, epsilon):
    """Winning inlier set by plain enumeration of every pair candidate."""
    ordered = sorted(S, key=lambda item: item[0].camera_id)
    obs = [(o.pixel, cam) for o, cam in ordered]
    best = None
    for index, (a, b) in enumerate(itertools.combinations(range(len(obs)), 2)):
        try:
            X = triangulate([obs[a], obs[b]])
        except DegenerateGeometryError:
            continue
        errors = reprojection_errors(X, obs)
        members = errors < epsilon
        size = int(members.sum())
        mean = float(errors[members].mean()) if size else np.inf
        key = (-size, mean, index)
        if best is None or key < best[0]:
            best = (key, members)
    if best is None or best[0][0] == 0:
        return frozenset()
    return frozenset(ordered[k][0].camera_id for k in np.flatnonzero(best[1]))


class TestConfig:
    """FusionConfig validation."""

    def test_defaults(self):
        """Defaults are epsilon 5 px and two inliers."""
        cfg = FusionConfig()
        assert cfg.epsilon == 5.0
        assert cfg.min_inliers == 2
        assert cfg.strategy == "vectorized"

    @pytest.mark.parametrize(
        "kwargs",
        [{"epsilon": 0.0}, {"epsilon": -1.0}, {"min_inliers": 1}, {"strategy": "gpu"}],
    )
    def test_rejects_invalid(self, kwargs):
        """Non-positive epsilon, a single inlier or an unknown strategy fail."""
        with pytest.raises(ValueError):
            FusionConfig(**kwargs)


class TestLargestConsistentSubset:
    """The pair search."""

    def test_all_inliers(self, rig4):
        """Exact observations are all consistent."""
        S = observe(DEFAULT_WORKSPACE.center, rig4)
        best = largest_consistent_subset(S, FusionConfig())
        assert best.inlier_ids == frozenset({0, 1, 2, 3})
        assert best.candidates_evaluated == 6
        assert best.projections == 6 * 4

    def test_outlier_excluded(self, rig4):
        """A camera reporting a far-off pixel is left out."""
        S = observe(DEFAULT_WORKSPACE.center, rig4, outliers={2: (10.0, 10.0)})
        best = largest_consistent_subset(S, FusionConfig())
        assert best.inlier_ids == frozenset({0, 1, 3})

    def test_generators_are_members(self, rig4):
        """An exact pair candidate includes its own generating cameras."""
        S = observe(DEFAULT_WORKSPACE.center, rig4, outliers={2: (5.0, 5.0)})
        best = largest_consistent_subset(S, FusionConfig())
        assert set(best.pair) <= best.inlier_ids

    def test_requires_two_observations(self, rig4):
        """Fewer than two observations is an input error."""
        S = observe(DEFAULT_WORKSPACE.center, rig4[:1])
        with pytest.raises(FusionInputError):
            largest_consistent_subset(S, FusionConfig())

    def test_duplicate_camera(self, rig4):
        """Two observations from one camera are rejected."""
        S = observe(DEFAULT_WORKSPACE.center, rig4)
        S.append(S[0])
        with pytest.raises(FusionInputError, match="one observation per camera"):
            largest_consistent_subset(S, FusionConfig())

    def test_input_order_irrelevant(self, rig8, rng):
        """Shuffling the observation set changes nothing."""
        S = observe(
            DEFAULT_WORKSPACE.sample(rng),
            rig8,
            outliers={1: (100.0, 50.0), 6: (600.0, 400.0)},
            noise=1.0,
            rng=rng,
        )
        reference = largest_consistent_subset(S, FusionConfig())
        for _ in range(5):
            shuffled = [S[k] for k in rng.permutation(len(S))]
            best = largest_consistent_subset(shuffled, FusionConfig())
            assert best.inlier_ids == reference.inlier_ids
            assert best.pair == reference.pair

    def test_matches_brute_force(self):
        """1 000 random scenes with up to 8 cameras match the enumeration."""
        rng = np.random.default_rng(31)
        rigs = {c: synthetic_rig(c) for c in range(2, 9)}
        sequential = FusionConfig(strategy="sequential")
        vectorized = FusionConfig(strategy="vectorized")
        for _ in range(1000):
            rig = rigs[int(rng.integers(2, 9))]
            X = DEFAULT_WORKSPACE.sample(rng)
            outliers = {
                cam.id: (rng.uniform(0, 640), rng.uniform(0, 480))
                for cam in rig
                if rng.random() < 0.3
            }
            S = observe(X, rig, outliers, noise=1.3, rng=rng)
            expected = brute_force(S, 5.0)
            assert largest_consistent_subset(S, sequential).inlier_ids == expected
            assert largest_consistent_subset(S, vectorized).inlier_ids == expected

    def test_strategies_agree(self, rig8, rng):
        """Both strategies pick the same pair, set and candidate."""
        for _ in range(50):
            outliers = {3: (rng.uniform(0, 640), rng.uniform(0, 480))}
            S = observe(DEFAULT_WORKSPACE.sample(rng), rig8, outliers, 1.0, rng)
            a = largest_consistent_subset(S, FusionConfig(strategy="sequential"))
            b = largest_consistent_subset(S, FusionConfig(strategy="vectorized"))
            assert a.inlier_ids == b.inlier_ids
            assert a.pair == b.pair
            assert a.mean_error == pytest.approx(b.mean_error)
            np.testing.assert_allclose(a.candidate, b.candidate, atol=1e-9)

    def test_inlier_count_grows_with_epsilon(self, rig8, rng):
        """A looser threshold never shrinks the winning inlier set."""
        epsilons = [0.5, 1.0, 2.0, 5.0, 10.0, 20.0]
        for _ in range(30):
            X = DEFAULT_WORKSPACE.sample(rng)
            outliers = {
                int(cid): tuple(rng.uniform((0.0, 0.0), (640.0, 480.0)))
                for cid in rng.choice(8, size=2, replace=False)
            }
            S = observe(X, rig8, outliers=outliers, noise=1.3, rng=rng)
            sizes = [
                len(largest_consistent_subset(S, FusionConfig(epsilon=eps)).inlier_ids)
                for eps in epsilons
            ]
            assert sizes == sorted(sizes)


class TestFuse:
    """End-to-end fusion of one observation set."""

    def test_exact_position(self, rig4):
        """Exact observations give the true point and zero residuals."""
        X = np.array([0.5, -0.2, 1.1])
        result = fuse(observe(X, rig4), FusionConfig())
        assert result.ok
        np.testing.assert_allclose(result.position, X, atol=1e-8)
        assert result.inlier_ids == frozenset({0, 1, 2, 3})
        assert max(result.residuals.values()) < 1e-6

    def test_outlier_does_not_bias(self, rig8, rng):
        """The outlier-free estimate beats triangulating everything."""
        X = DEFAULT_WORKSPACE.center
        S = observe(X, rig8, outliers={0: (5.0, 5.0)}, noise=0.5, rng=rng)
        result = fuse(S, FusionConfig())
        baseline = fuse_all_kway(S, FusionConfig())
        assert 0 not in result.inlier_ids
        assert np.linalg.norm(result.position - X) < 0.05
        assert np.linalg.norm(result.position - X) < np.linalg.norm(
            baseline.position - X
        )
        assert set(result.residuals) == set(result.inlier_ids)

    def test_too_few_observations(self, rig4):
        """A single observation is a failure, not an exception."""
        result = fuse(observe(DEFAULT_WORKSPACE.center, rig4[:1]), FusionConfig())
        assert not result.ok
        assert result.reason is FailureReason.TOO_FEW_OBSERVATIONS
        assert result.position is None
        assert fuse([], FusionConfig()).reason is FailureReason.TOO_FEW_OBSERVATIONS

    def test_no_consistent_set(self, rig4):
        """With three required inliers, two agreeing cameras are not enough."""
        rig = rig4[:3]
        S = observe(DEFAULT_WORKSPACE.center, rig, outliers={2: (5.0, 5.0)})
        result = fuse(S, FusionConfig(min_inliers=3))
        assert result.reason is FailureReason.NO_CONSISTENT_SET
        assert result.reason.value == "no-consistent-set"

    def test_two_camera_scene(self, rig4):
        """Two consistent cameras are enough by default."""
        result = fuse(observe(DEFAULT_WORKSPACE.center, rig4[:2]), FusionConfig())
        assert result.ok
        assert result.inlier_ids == frozenset({0, 1})

    def test_random_pixel_pairs_rarely_agree(self, rig4, rng):
        """Two arbitrary pixels are accepted only when their rays nearly meet."""
        rig = rig4[:2]
        cfg = FusionConfig(epsilon=0.5)
        failures = 0
        for _ in range(200):
            S = [
                (PixelObservation(cam.id, Pixel(*rng.uniform((0, 0), (640, 480)))), cam)
                for cam in rig
            ]
            obs = [(o.pixel, cam) for o, cam in S]
            try:
                worst = float(np.max(reprojection_errors(triangulate(obs), obs)))
            except DegenerateGeometryError:
                worst = np.inf
            result = fuse(S, cfg)
            if worst > 0.6:
                assert not result.ok
            if worst < 0.4:
                assert result.ok
            failures += not result.ok
        assert failures >= 190


class TestHelpers:
    """Pairing observations with cameras and the all-camera baseline."""

    def test_pair_with_cameras(self, rig4):
        """Observations are matched to their calibrated camera."""
        cameras = {cam.id: cam for cam in rig4}
        obs = [PixelObservation(2, Pixel(1.0, 2.0)), PixelObservation(0, Pixel(3, 4))]
        paired = pair_with_cameras(obs, cameras)
        assert [cam.id for _, cam in paired] == [2, 0]

    def test_pair_with_unknown_camera(self, rig4):
        """An unknown camera id is an input error."""
        with pytest.raises(FusionInputError, match="unknown camera 9"):
            pair_with_cameras([PixelObservation(9, Pixel(1.0, 2.0))], {0: rig4[0]})

    def test_kway_uses_everything(self, rig4):
        """The baseline reports every camera as an inlier."""
        S = observe(DEFAULT_WORKSPACE.center, rig4, outliers={1: (5.0, 5.0)})
        result = fuse_all_kway(S, FusionConfig())
        assert result.inlier_ids == frozenset({0, 1, 2, 3})
        with pytest.raises(FusionInputError):
            fuse_all_kway(S[:1], FusionConfig())
