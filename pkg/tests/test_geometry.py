import numpy as np
import pytest

from maskpipe.geometry import (
    MatchSet,
    RansacConfig,
    estimate_homography_ransac,
    fit_homography,
    mutual_nearest_neighbors,
    project_points,
    symmetric_transfer_error,
)
from maskpipe.patch_features import DescriptorGrid


def random_unit_descriptors(rng, n, dim=128):
    vecs = rng.standard_normal((n, dim))
    return (vecs / np.linalg.norm(vecs, axis=1, keepdims=True)).astype(np.float32)


def make_grid(rng, gw, gh, descriptors=None, zero_cells=()):
    n = gw * gh
    if descriptors is None:
        descriptors = random_unit_descriptors(rng, n)
    descriptors = np.array(descriptors, dtype=np.float32)
    for k in zero_cells:
        descriptors[k] = 0.0
    k = np.arange(n)
    centers = np.stack([(k % gw) * 32 + 16, (k // gw) * 32 + 16], axis=1).astype(np.int32)
    return DescriptorGrid(gw, gh, descriptors.shape[1], descriptors, centers)


def mnn_oracle(live, ref):
    """Brute-force double-argmin over nonzero descriptors."""
    a = live.descriptors.astype(np.float64)
    b = ref.descriptors.astype(np.float64)
    pairs = set()
    valid_a = [i for i in range(len(a)) if a[i].any()]
    valid_b = [j for j in range(len(b)) if b[j].any()]
    if not valid_a or not valid_b:
        return pairs
    for i in valid_a:
        best_j = min(valid_b, key=lambda j: (np.linalg.norm(a[i] - b[j]), j))
        best_i = min(valid_a, key=lambda i2: (np.linalg.norm(a[i2] - b[best_j]), i2))
        if best_i == i:
            pairs.add((i, best_j))
    return pairs


def pairs_of(matches: MatchSet, live, ref):
    out = set()
    for (li, lj), (ri, rj) in zip(matches.live_cells, matches.ref_cells):
        out.add((int(li) * live.grid_w + int(lj), int(ri) * ref.grid_w + int(rj)))
    return out


class TestMutualNearestNeighbors:
    def test_self_match_is_identity(self, rng):
        grid = make_grid(rng, 5, 4)
        matches = mutual_nearest_neighbors(grid, grid)
        assert len(matches) == 20
        assert np.array_equal(matches.live_cells, matches.ref_cells)
        assert np.allclose(matches.distances, 0.0)

    def test_non_mutual_pair_excluded(self):
        # a's nearest is b, but b's nearest is c, so (a, b) must not appear.
        a = np.zeros(8)
        b = np.zeros(8)
        c = np.zeros(8)
        a[0] = 1.0
        b[:2] = [0.8, 0.6]
        c[:2] = [0.75, 0.661438]  # closer to b than a is
        live = make_grid(np.random.default_rng(0), 2, 1, descriptors=np.stack([a, c]))
        ref = make_grid(np.random.default_rng(0), 1, 1, descriptors=b[None, :])
        assert np.linalg.norm(a - b) < np.linalg.norm(a - c)
        assert np.linalg.norm(c - b) < np.linalg.norm(a - b)
        matches = mutual_nearest_neighbors(live, ref)
        got = pairs_of(matches, live, ref)
        assert got == {(1, 0)}  # only (c, b); (a, b) is not mutual

    def test_matches_brute_force_oracle(self, rng):
        for trial in range(5):
            live = make_grid(rng, 20, 15, zero_cells=(0, 7, 100))
            ref = make_grid(rng, 20, 15, zero_cells=(3, 250))
            got = pairs_of(mutual_nearest_neighbors(live, ref), live, ref)
            assert got == mnn_oracle(live, ref)

    def test_symmetric(self, rng):
        live = make_grid(rng, 6, 5)
        ref = make_grid(rng, 6, 5)
        fwd = pairs_of(mutual_nearest_neighbors(live, ref), live, ref)
        rev = pairs_of(mutual_nearest_neighbors(ref, live), ref, live)
        assert fwd == {(a, b) for b, a in rev}

    def test_zero_descriptors_excluded(self, rng):
        live = make_grid(rng, 3, 3, zero_cells=(4,))
        ref = make_grid(rng, 3, 3)
        got = pairs_of(mutual_nearest_neighbors(live, ref), live, ref)
        assert all(a != 4 for a, _ in got)

    def test_all_zero_grids_give_empty_matchset(self):
        live = make_grid(np.random.default_rng(0), 2, 2, zero_cells=range(4))
        ref = make_grid(np.random.default_rng(1), 2, 2)
        matches = mutual_nearest_neighbors(live, ref)
        assert len(matches) == 0

    def test_dim_mismatch_rejected(self, rng):
        live = make_grid(rng, 2, 2)
        ref = make_grid(rng, 2, 2, descriptors=random_unit_descriptors(rng, 4, dim=64))
        with pytest.raises(ValueError, match="dims"):
            mutual_nearest_neighbors(live, ref)


def planted_matches(rng, model, n_inliers, n_outliers, noise=0.0, width=640, height=480):
    """Correspondences live -> ref generated by a known homography, with
    uniform outliers appended. Returns (MatchSet, inlier_flags)."""
    live = np.column_stack(
        [rng.uniform(20, width - 20, n_inliers + n_outliers),
         rng.uniform(20, height - 20, n_inliers + n_outliers)]
    )
    ref = project_points(model, live)
    if noise > 0.0:
        angle = rng.uniform(0, 2 * np.pi, n_inliers)
        radius = rng.uniform(0, noise, n_inliers)
        ref[:n_inliers, 0] += radius * np.cos(angle)
        ref[:n_inliers, 1] += radius * np.sin(angle)
    ref[n_inliers:, 0] = rng.uniform(0, width, n_outliers)
    ref[n_inliers:, 1] = rng.uniform(0, height, n_outliers)
    n = n_inliers + n_outliers
    cells = np.zeros((n, 2), dtype=np.int32)
    matches = MatchSet(cells, cells.copy(), np.zeros(n), live, ref)
    flags = np.zeros(n, dtype=bool)
    flags[:n_inliers] = True
    return matches, flags


TEST_MODEL = np.array(
    [[0.999, -0.02, 6.0], [0.02, 0.999, -4.0], [1e-6, -2e-6, 1.0]]
)


class TestRansac:
    def test_recovers_planted_model_exactly(self, rng):
        matches, _ = planted_matches(rng, TEST_MODEL, 12, 0)
        result = estimate_homography_ransac(matches, RansacConfig(rng_seed=7))
        assert not result.degenerate
        assert len(result) == 12
        assert np.allclose(result.model, TEST_MODEL / TEST_MODEL[2, 2], atol=1e-6)

    def test_identity_correspondences(self, rng):
        pts = np.column_stack([rng.uniform(0, 640, 30), rng.uniform(0, 480, 30)])
        cells = np.zeros((30, 2), dtype=np.int32)
        matches = MatchSet(cells, cells.copy(), np.zeros(30), pts, pts.copy())
        result = estimate_homography_ransac(matches, RansacConfig(rng_seed=3))
        assert np.allclose(result.model, np.eye(3), atol=1e-9)
        assert len(result) == 30

    def test_planted_outlier_trial(self, rng):
        matches, flags = planted_matches(rng, TEST_MODEL, 140, 60, noise=1.0)
        result = estimate_homography_ransac(matches, RansacConfig(rng_seed=11))
        recovered = np.zeros(len(matches), dtype=bool)
        recovered[result.indices] = True
        assert recovered[flags].mean() >= 0.99
        assert recovered[~flags].mean() <= 0.01

    def test_inlier_error_bound_holds(self, rng):
        matches, _ = planted_matches(rng, TEST_MODEL, 100, 40, noise=2.0)
        cfg = RansacConfig(rng_seed=5)
        result = estimate_homography_ransac(matches, cfg)
        err = symmetric_transfer_error(result.model, result.live_points, result.ref_points)
        assert (err <= cfg.reproj_threshold + 1e-9).all()

    def test_reproducible_for_fixed_seed(self, rng):
        matches, _ = planted_matches(rng, TEST_MODEL, 80, 40, noise=1.0)
        a = estimate_homography_ransac(matches, RansacConfig(rng_seed=21))
        b = estimate_homography_ransac(matches, RansacConfig(rng_seed=21))
        assert np.array_equal(a.indices, b.indices)
        assert np.array_equal(a.model, b.model)

    def test_too_few_matches_degenerate(self, rng):
        matches, _ = planted_matches(rng, TEST_MODEL, 3, 0)
        result = estimate_homography_ransac(matches, RansacConfig(rng_seed=1))
        assert result.degenerate
        assert len(result) == 0
        assert np.array_equal(result.model, np.eye(3))

    def test_below_min_inliers_degenerate(self, rng):
        matches, _ = planted_matches(rng, TEST_MODEL, 6, 0)
        result = estimate_homography_ransac(matches, RansacConfig(min_inliers=8, rng_seed=1))
        assert result.degenerate

    def test_survives_collinear_candidates(self, rng):
        # Half the points sit on one line; collinear minimal samples must be
        # rejected while the model is still recovered from the rest.
        xs = np.linspace(50, 600, 20)
        line = np.column_stack([xs, 0.5 * xs + 10])
        general = np.column_stack([rng.uniform(20, 620, 20), rng.uniform(20, 460, 20)])
        live = np.vstack([line, general])
        ref = project_points(TEST_MODEL, live)
        cells = np.zeros((40, 2), dtype=np.int32)
        matches = MatchSet(cells, cells.copy(), np.zeros(40), live, ref)
        result = estimate_homography_ransac(matches, RansacConfig(rng_seed=9))
        assert not result.degenerate
        assert len(result) == 40

    def test_config_validation(self):
        with pytest.raises(ValueError):
            RansacConfig(reproj_threshold=0.0)
        with pytest.raises(ValueError):
            RansacConfig(confidence=1.0)


class TestHomographyHelpers:
    def test_fit_exact_four_points(self):
        src = np.array([[0.0, 0.0], [100.0, 0.0], [100.0, 100.0], [0.0, 100.0]])
        dst = project_points(TEST_MODEL, src)
        model = fit_homography(src, dst)
        assert np.allclose(model, TEST_MODEL / TEST_MODEL[2, 2], atol=1e-9)

    def test_fit_rejects_collinear(self):
        src = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
        assert fit_homography(src, src) is None

    def test_symmetric_transfer_error_zero_for_exact(self, rng):
        src = np.column_stack([rng.uniform(0, 640, 10), rng.uniform(0, 480, 10)])
        dst = project_points(TEST_MODEL, src)
        err = symmetric_transfer_error(TEST_MODEL, src, dst)
        assert np.allclose(err, 0.0, atol=1e-9)
