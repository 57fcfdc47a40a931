import json
import math

import numpy as np
import pytest

from returnmap.dataset import (
    DatasetFormatError,
    GenerationConfig,
    Sample,
    generate,
    generate_henon,
    generate_sam,
    henon_param_grid,
    load_dataset,
    load_manifest,
    load_sample,
    most_square_factors,
    sample_paths,
    save_sample,
    split_dataset,
)
from returnmap.dynamics import HenonParams, henon_step
from returnmap.integrate import IntegratorConfig


def make_sample(seed=0, d=2, n_traj=3):
    rng = np.random.default_rng(seed)
    trajs = [rng.normal(size=(rng.integers(1, 40), 2)) for _ in range(n_traj)]
    return Sample(theta=rng.uniform(size=d), trajectories=trajs)


class TestSampleIO:
    def test_roundtrip_f32(self, tmp_path):
        s = make_sample()
        path = tmp_path / "s.rmps"
        save_sample(s, path)
        loaded = load_sample(path)
        np.testing.assert_array_equal(loaded.theta, s.theta)
        assert len(loaded.trajectories) == len(s.trajectories)
        for got, want in zip(loaded.trajectories, s.trajectories):
            np.testing.assert_array_equal(got, want.astype(np.float32))

    def test_save_is_deterministic(self, tmp_path):
        s = make_sample(3)
        save_sample(s, tmp_path / "a.rmps")
        save_sample(s, tmp_path / "b.rmps")
        assert (tmp_path / "a.rmps").read_bytes() == (tmp_path / "b.rmps").read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.rmps"
        path.write_bytes(b"NOPE" + b"\x00" * 40)
        with pytest.raises(DatasetFormatError):
            load_sample(path)

    def test_truncated_file(self, tmp_path):
        s = make_sample()
        path = tmp_path / "s.rmps"
        save_sample(s, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 7])
        with pytest.raises(DatasetFormatError):
            load_sample(path)

    def test_trailing_garbage(self, tmp_path):
        s = make_sample()
        path = tmp_path / "s.rmps"
        save_sample(s, path)
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(DatasetFormatError):
            load_sample(path)

    def test_empty_collection_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            save_sample(Sample(theta=[0.1], trajectories=[]), tmp_path / "e.rmps")

    def test_empty_trajectory_rejected(self, tmp_path):
        s = Sample(theta=[0.1], trajectories=[np.empty((0, 2))])
        with pytest.raises(ValueError):
            save_sample(s, tmp_path / "e.rmps")


class TestParamGrids:
    def test_most_square(self):
        assert most_square_factors(4) == (2, 2)
        assert most_square_factors(512) == (16, 32)
        assert most_square_factors(7) == (1, 7)
        assert most_square_factors(225) == (15, 15)

    def test_corner_grid(self):
        grid = henon_param_grid(4, (0.05, 0.45), (-1.1, 1.1))
        expect = {(0.05, -1.1), (0.05, 1.1), (0.45, -1.1), (0.45, 1.1)}
        assert {tuple(row) for row in grid} == expect


class TestGenerateHenon:
    @pytest.fixture(scope="class")
    def dataset(self, tmp_path_factory):
        out = tmp_path_factory.mktemp("henon")
        cfg = GenerationConfig(system="henon", n_points=4, n_init=225, steps=250, seed=7)
        return generate_henon(cfg, out), cfg

    def test_shapes_and_bounds(self, dataset):
        root, cfg = dataset
        samples = load_dataset(root)
        assert len(samples) == 4
        for s in samples:
            assert len(s.trajectories) <= 225
            for t in s.trajectories:
                assert 1 <= len(t) <= 251
                assert np.all(np.isfinite(t))

    def test_map_equation_holds_in_f32(self, dataset):
        root, _ = dataset
        s = load_dataset(root)[0]
        p = HenonParams(*s.theta)
        traj64 = np.asarray(s.trajectories[100], dtype=np.float64)
        # stored points are f32-rounded, so re-iterating matches to f32 eps
        for i in range(min(5, len(traj64) - 1)):
            nxt = henon_step(traj64[i], p)
            assert np.abs(nxt - traj64[i + 1]).max() < 1e-4

    def test_manifest_keys(self, dataset):
        root, _ = dataset
        m = load_manifest(root)
        for key in ("system", "version", "seed", "param_grid", "n_init",
                    "horizon", "integrator", "created", "files"):
            assert key in m
        assert m["system"] == "henon"

    def test_regeneration_byte_identical(self, tmp_path, dataset):
        _, cfg = dataset
        a = generate(cfg, tmp_path / "a")
        b = generate(cfg, tmp_path / "b", workers=2)
        for pa, pb in zip(sample_paths(a), sample_paths(b)):
            assert pa.read_bytes() == pb.read_bytes()
        ma = {k: v for k, v in load_manifest(a).items() if k != "created"}
        mb = {k: v for k, v in load_manifest(b).items() if k != "created"}
        assert ma == mb


class TestGenerateSam:
    @pytest.fixture(scope="class")
    def dataset(self, tmp_path_factory):
        out = tmp_path_factory.mktemp("sam")
        cfg = GenerationConfig(
            system="sam", n_points=3, n_init=8, t_end=30.0, seed=1,
            integrator=IntegratorConfig(rtol=1e-9, atol=1e-9),
        )
        return generate_sam(cfg, out), cfg

    def test_mu_values_evenly_spaced(self, dataset):
        root, _ = dataset
        thetas = [load_sample(p).theta[0] for p in sample_paths(root)]
        np.testing.assert_allclose(thetas, [1.5, 8.25, 15.0], atol=1e-12)

    def test_points_inside_allowed_region(self, dataset):
        root, _ = dataset
        for s in load_dataset(root):
            mu = float(s.theta[0])
            p_max = math.sqrt(2.0 * (1.0 + mu))
            for t in s.trajectories:
                assert len(t) >= 1
                r, p_r = t[:, 0].astype(float), t[:, 1].astype(float)
                assert np.all(r * (mu - 1.0) <= 1.0 + 1e-6)
                assert np.all(np.abs(p_r) <= p_max + 1e-6)

    def test_trajectory_count(self, dataset):
        root, cfg = dataset
        for s in load_dataset(root):
            assert len(s.trajectories) == cfg.n_init


class TestSplit:
    def test_exact_fractions(self):
        thetas = np.linspace(0, 1, 100).reshape(-1, 1)
        idx = split_dataset(thetas, seed=0)
        assert len(idx.train) == 65 and len(idx.validation) == 15 and len(idx.test) == 20

    def test_disjoint_and_exhaustive(self):
        for n in (13, 20, 39, 100, 128):
            thetas = np.random.default_rng(n).uniform(size=(n, 2))
            idx = split_dataset(thetas, seed=3)
            union = idx.all_indices()
            assert len(union) == n
            assert len(idx.train) + len(idx.validation) + len(idx.test) == n

    def test_each_decile_feeds_all_splits(self):
        # 200 sorted samples: each decile is exactly one block of 20
        thetas = np.linspace(0, 1, 200).reshape(-1, 1)
        idx = split_dataset(thetas, seed=5)
        for d in range(10):
            decile = set(range(20 * d, 20 * (d + 1)))
            assert decile & set(idx.train)
            assert decile & set(idx.validation)
            assert decile & set(idx.test)

    def test_deterministic(self):
        thetas = np.random.default_rng(0).uniform(size=(80, 2))
        assert split_dataset(thetas, seed=9) == split_dataset(thetas, seed=9)
        assert split_dataset(thetas, seed=9) != split_dataset(thetas, seed=10)

    def test_small_dataset_proportional(self):
        idx = split_dataset(np.arange(10.0).reshape(-1, 1), seed=0)
        assert len(idx.train) + len(idx.validation) + len(idx.test) == 10
        assert len(idx.train) >= 6

    def test_sizes_near_fractions(self):
        for n in (21, 39, 55, 101):
            idx = split_dataset(np.arange(float(n)).reshape(-1, 1), seed=1)
            assert abs(len(idx.train) - 0.65 * n) <= 1.0
            assert abs(len(idx.validation) - 0.15 * n) <= 1.0
            assert abs(len(idx.test) - 0.20 * n) <= 1.0


def test_invalid_configs():
    with pytest.raises(ValueError):
        GenerationConfig(system="lorenz")
    with pytest.raises(ValueError):
        GenerationConfig(n_points=0)
