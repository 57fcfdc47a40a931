import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from returnmap.raster import (
    AugmentLimits,
    HENON_LIMITS,
    RasterSpec,
    augment,
    count_grid,
    rasterize,
    save_png,
)


def brute_force_counts(trajectories, spec):
    """Per-point double loop oracle with the same index arithmetic."""
    grid = np.zeros((spec.height, spec.width), dtype=np.int64)
    for traj in trajectories:
        for x, y in np.asarray(traj, dtype=float):
            if not (spec.x_min <= x <= spec.x_max and spec.y_min <= y <= spec.y_max):
                continue
            w = int(np.floor((x - spec.x_min) / (spec.x_max - spec.x_min) * spec.width))
            h = int(np.floor((spec.y_max - y) / (spec.y_max - spec.y_min) * spec.height))
            w = min(w, spec.width - 1)
            h = min(h, spec.height - 1)
            grid[h, w] += 1
    return grid


SPEC8 = RasterSpec(x_min=-4, x_max=4, y_min=-4, y_max=4, width=8, height=8)


class TestCountGrid:
    def test_empty_collection(self):
        assert count_grid([], SPEC8).sum() == 0

    def test_single_center_point(self):
        spec = RasterSpec(x_min=0, x_max=1, y_min=0, y_max=1, width=2, height=2)
        grid = count_grid([np.array([[0.5, 0.5]])], spec)
        assert grid.sum() == 1
        assert grid[1, 1] == 1  # boundary point lands in the lower-right cell

    def test_corner_and_edge_clamping(self):
        spec = RasterSpec(x_min=0, x_max=1, y_min=0, y_max=1, width=4, height=4)
        pts = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.0, 0.0]])
        grid = count_grid([pts], spec)
        assert grid[3, 3] == 1  # (x_max, y_min)
        assert grid[0, 0] == 1  # (x_min, y_max)
        assert grid[0, 3] == 1
        assert grid[3, 0] == 1

    def test_outside_points_ignored(self):
        pts = np.array([[5.0, 0.0], [0.0, -9.0], [math.inf, 0.0]])
        assert count_grid([pts], SPEC8).sum() == 0

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform(-5, 5, size=(1000, 2))
        grid = count_grid([pts], SPEC8)
        oracle = brute_force_counts([pts], SPEC8)
        np.testing.assert_array_equal(grid, oracle)
        inside = ((pts >= -4) & (pts <= 4)).all(axis=1).sum()
        assert grid.sum() == inside

    def test_merge_additivity(self):
        rng = np.random.default_rng(1)
        t1 = [rng.uniform(-4, 4, size=(50, 2)) for _ in range(3)]
        t2 = [rng.uniform(-4, 4, size=(30, 2)) for _ in range(2)]
        np.testing.assert_array_equal(
            count_grid(t1 + t2, SPEC8), count_grid(t1, SPEC8) + count_grid(t2, SPEC8)
        )


points_strategy = st.lists(
    st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=0, max_size=60
)


@settings(max_examples=60, deadline=None)
@given(points=points_strategy, split=st.integers(0, 60))
def test_grouping_invariance(points, split):
    # the raster depends only on the multiset of points
    pts = np.array(points, dtype=float).reshape(-1, 2)
    k = min(split, len(points))
    as_one = rasterize([pts], SPEC8)
    as_two = rasterize([pts[:k], pts[k:]], SPEC8)
    np.testing.assert_array_equal(as_one, as_two)
    perm = np.random.default_rng(0).permutation(len(points))
    np.testing.assert_array_equal(as_one, rasterize([pts[perm]], SPEC8))


class TestRasterize:
    def test_shading_law(self):
        spec = RasterSpec(x_min=0, x_max=1, y_min=0, y_max=1, width=1, height=1, alpha=0.7)
        assert rasterize([], spec)[0, 0] == 1.0
        one = rasterize([np.array([[0.5, 0.5]])], spec)
        assert one[0, 0] == pytest.approx(0.7, abs=0)
        three = rasterize([np.array([[0.5, 0.5]] * 3)], spec)
        assert three[0, 0] == pytest.approx(0.343, abs=1e-15)

    def test_monotone_and_bounded(self):
        rng = np.random.default_rng(2)
        pts = rng.uniform(-4, 4, size=(500, 2))
        img_half = rasterize([pts[:250]], SPEC8)
        img_full = rasterize([pts], SPEC8)
        assert np.all(img_full <= img_half)
        assert np.all(img_full > 0) and np.all(img_full <= 1)

    def test_matches_bruteforce_bit_for_bit(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            trajs = [rng.uniform(-4.5, 4.5, size=(rng.integers(1, 80), 2))
                     for _ in range(rng.integers(1, 6))]
            expect = SPEC8.alpha ** brute_force_counts(trajs, SPEC8).astype(float)
            np.testing.assert_array_equal(rasterize(trajs, SPEC8), expect)


class TestAugment:
    def make_collection(self, n=20, m=30):
        rng = np.random.default_rng(4)
        return [rng.normal(size=(m, 2)) for _ in range(n)]

    def test_degenerate_limits_identity(self):
        trajs = self.make_collection(n=12, m=25)
        limits = AugmentLimits(12, 12, 25, 25)
        out = augment(trajs, limits, np.random.default_rng(0))
        assert len(out) == 12
        key = lambda t: tuple(t[:, 0])
        got = sorted(out, key=key)
        want = sorted(trajs, key=key)
        for g, w in zip(got, want):
            np.testing.assert_array_equal(g, w)

    def test_outputs_are_prefixes(self):
        trajs = self.make_collection()
        rng = np.random.default_rng(1)
        out = augment(trajs, AugmentLimits(5, 15, 3, 20), rng)
        starts = {t[0].tobytes(): t for t in trajs}
        for o in out:
            src = starts[o[0].tobytes()]
            np.testing.assert_array_equal(o, src[: len(o)])

    def test_reproducible(self):
        trajs = self.make_collection()
        limits = AugmentLimits(5, 15, 3, 20)
        a = augment(trajs, limits, np.random.default_rng(99))
        b = augment(trajs, limits, np.random.default_rng(99))
        assert len(a) == len(b)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_count_clamped_to_available(self):
        trajs = self.make_collection(n=4)
        out = augment(trajs, HENON_LIMITS, np.random.default_rng(0))
        assert len(out) == 4

    def test_draw_span_henon_defaults(self):
        # 1000 seeded draws cover nearly the full [10, 225] count range
        trajs = [np.zeros((251, 2)) for _ in range(225)]
        rng = np.random.default_rng(123)
        counts = [len(augment(trajs, HENON_LIMITS, rng)) for _ in range(1000)]
        assert min(counts) <= 15 and max(counts) >= 220


def test_save_png_roundtrip(tmp_path):
    from PIL import Image

    spec = RasterSpec(x_min=0, x_max=1, y_min=0, y_max=1, width=4, height=4, alpha=0.7)
    img = rasterize([np.array([[0.1, 0.9], [0.6, 0.2], [0.6, 0.2]])], spec)
    path = tmp_path / "map.png"
    save_png(img, path)
    loaded = np.asarray(Image.open(path))
    assert loaded.shape == (4, 4) and loaded.dtype == np.uint8
    np.testing.assert_array_equal(loaded, np.round(255 * img).astype(np.uint8))


def test_invalid_specs_rejected():
    with pytest.raises(ValueError):
        RasterSpec(x_min=1, x_max=0, y_min=0, y_max=1)
    with pytest.raises(ValueError):
        RasterSpec(alpha=0.0)
    with pytest.raises(ValueError):
        AugmentLimits(5, 4, 1, 10)
    with pytest.raises(ValueError):
        augment([], HENON_LIMITS, np.random.default_rng(0))
