"""Dataset generation, persistence, splitting and loading.

A dataset is a directory holding a ``manifest.json`` plus one binary sample
file per parameter point under ``samples/``. Each sample pairs a parameter
vector with the trajectory collection it generated.

Sample file layout (little-endian):
    magic "RMPS" | u32 version | u32 d | d x f64 theta | u32 n_traj |
    per trajectory: u32 length, length x 2 x f32 (x, y)
"""

from __future__ import annotations

import json
import math
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import dynamics
from .dynamics import HenonParams, SamParams
from .integrate import IntegratorConfig, integrate_with_events

__all__ = [
    "Sample",
    "GenerationConfig",
    "SplitIndex",
    "DatasetFormatError",
    "save_sample",
    "load_sample",
    "generate",
    "generate_henon",
    "generate_sam",
    "load_dataset",
    "load_manifest",
    "split_dataset",
    "sample_paths",
    "henon_param_grid",
    "most_square_factors",
]

MAGIC = b"RMPS"
VERSION = 1

# blocks of 20 hand out 13/3/4 members, realizing 65/15/20 exactly
SPLIT_FRACTIONS = (0.65, 0.15, 0.20)
SPLIT_BLOCK = 20


class DatasetFormatError(RuntimeError):
    """Corrupt or truncated sample file."""


@dataclass
class Sample:
    """One parameter vector with the trajectory collection it generated."""

    theta: np.ndarray
    trajectories: list

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)


@dataclass
class GenerationConfig:
    """Everything that pins down a generated dataset.

    ``n_points`` is the number of parameter values; for the Hénon map they
    form the most-square 2-D grid over the parameter box, for the SAM they
    are evenly spaced mass ratios. ``n_init`` initial states feed each
    parameter value; discrete trajectories run ``steps`` iterations while
    flows are integrated for ``t_end`` time units.
    """

    system: str = "henon"
    n_points: int = 64
    n_init: int = 225
    steps: int = 250
    t_end: float = 1000.0
    seed: int = 0
    escape_radius: float = dynamics.DEFAULT_ESCAPE_RADIUS
    r_min: float = dynamics.DEFAULT_R_MIN
    henon_a_range: tuple = dynamics.HENON_A_RANGE
    henon_b_range: tuple = dynamics.HENON_B_RANGE
    sam_mu_range: tuple = dynamics.SAM_MU_RANGE
    init_grid_lo: float = -4.0
    init_grid_hi: float = 4.0
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)

    def __post_init__(self):
        if self.system not in ("henon", "sam"):
            raise ValueError(f"unknown system {self.system!r}")
        if self.n_points < 1 or self.n_init < 1:
            raise ValueError("n_points and n_init must be >= 1")


@dataclass(frozen=True)
class SplitIndex:
    train: tuple
    validation: tuple
    test: tuple

    def all_indices(self):
        return set(self.train) | set(self.validation) | set(self.test)


# ---------------------------------------------------------------------------
# Sample serialization


def save_sample(sample: Sample, path) -> None:
    """Write a sample; parameters keep full precision, points go to f32."""
    if len(sample.trajectories) == 0:
        raise ValueError("refusing to save a sample with no trajectories")
    parts = [MAGIC, struct.pack("<II", VERSION, sample.theta.size)]
    parts.append(sample.theta.astype("<f8").tobytes())
    parts.append(struct.pack("<I", len(sample.trajectories)))
    for traj in sample.trajectories:
        pts = np.asarray(traj, dtype="<f4").reshape(-1, 2)
        if pts.shape[0] == 0:
            raise ValueError("refusing to save an empty trajectory")
        parts.append(struct.pack("<I", pts.shape[0]))
        parts.append(np.ascontiguousarray(pts).tobytes())
    blob = b"".join(parts)
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def load_sample(path) -> Sample:
    """Read a sample file written by :func:`save_sample`."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {blob[:4]!r}")
    try:
        version, d = struct.unpack_from("<II", blob, 4)
        if version != VERSION:
            raise DatasetFormatError(f"{path}: unsupported version {version}")
        off = 12
        theta = np.frombuffer(blob, dtype="<f8", count=d, offset=off).astype(np.float64)
        off += 8 * d
        (n_traj,) = struct.unpack_from("<I", blob, off)
        off += 4
        trajectories = []
        for _ in range(n_traj):
            (length,) = struct.unpack_from("<I", blob, off)
            off += 4
            pts = np.frombuffer(blob, dtype="<f4", count=2 * length, offset=off)
            trajectories.append(pts.reshape(length, 2).astype(np.float32))
            off += 8 * length
    except (struct.error, ValueError) as exc:
        raise DatasetFormatError(f"{path}: truncated file") from exc
    if off != len(blob):
        raise DatasetFormatError(f"{path}: {len(blob) - off} trailing bytes")
    return Sample(theta=theta, trajectories=trajectories)


# ---------------------------------------------------------------------------
# Parameter grids


def most_square_factors(n: int) -> tuple[int, int]:
    """Factor ``n = small * large`` with the factors as close as possible."""
    small = 1
    for k in range(1, int(math.isqrt(n)) + 1):
        if n % k == 0:
            small = k
    return small, n // small


def henon_param_grid(n_points: int, a_range, b_range) -> np.ndarray:
    """Evenly spaced grid over the parameter box, most-square factorization.

    The smaller factor goes to the narrower ``a`` axis.
    """
    n_a, n_b = most_square_factors(n_points)
    a_vals = np.linspace(a_range[0], a_range[1], n_a)
    b_vals = np.linspace(b_range[0], b_range[1], n_b)
    ga, gb = np.meshgrid(a_vals, b_vals, indexing="ij")
    return np.column_stack([ga.ravel(), gb.ravel()])


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    # independent per-sample streams, stable under parallel generation
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


# ---------------------------------------------------------------------------
# Generation


def _generate_henon_sample(cfg: GenerationConfig, index: int, theta) -> Sample:
    params = HenonParams(a=float(theta[0]), b=float(theta[1]))
    per_axis = math.isqrt(cfg.n_init)
    if per_axis * per_axis != cfg.n_init:
        # denser evaluation sets use a finer grid, so counts stay squares
        raise ValueError("n_init must be a perfect square for the initial grid")
    inits = dynamics.henon_initial_grid(per_axis, cfg.init_grid_lo, cfg.init_grid_hi)
    trajectories = dynamics.henon_trajectories(
        inits, params, cfg.steps, cfg.escape_radius
    )
    return Sample(theta=np.asarray(theta, dtype=float), trajectories=trajectories)


def _generate_sam_sample(cfg: GenerationConfig, index: int, theta) -> Sample:
    params = SamParams(mu=float(theta[0]))
    rng = _sample_rng(cfg.seed, index)
    field_fn = dynamics.sam_field(params, cfg.r_min)
    section = dynamics.sam_section(params, cfg.r_min)
    trajectories = []
    for _ in range(cfg.n_init):
        state = dynamics.sample_section_state(params, rng)
        result = integrate_with_events(field_fn, section, state, cfg.t_end, cfg.integrator)
        # the start lies on the section, so it is the first return-map point
        pts = [(state[0], state[2])] + [c.point for c in result.crossings]
        trajectories.append(np.asarray(pts, dtype=float))
    return Sample(theta=np.asarray(theta, dtype=float), trajectories=trajectories)


def _thetas(cfg: GenerationConfig) -> np.ndarray:
    if cfg.system == "henon":
        return henon_param_grid(cfg.n_points, cfg.henon_a_range, cfg.henon_b_range)
    return np.linspace(cfg.sam_mu_range[0], cfg.sam_mu_range[1], cfg.n_points).reshape(-1, 1)


def generate_sample(cfg: GenerationConfig, index: int, theta) -> Sample:
    if cfg.system == "henon":
        return _generate_henon_sample(cfg, index, theta)
    return _generate_sam_sample(cfg, index, theta)


def _worker(args):
    cfg, index, theta, out_dir = args
    sample = generate_sample(cfg, index, theta)
    path = Path(out_dir) / "samples" / f"{index:06d}.rmps"
    save_sample(sample, path)
    return str(path)


def generate(cfg: GenerationConfig, out_dir, workers: int = 1) -> Path:
    """Generate and persist a dataset; returns the dataset directory.

    Per-sample seed streams make the output independent of ``workers``.
    """
    out_dir = Path(out_dir)
    (out_dir / "samples").mkdir(parents=True, exist_ok=True)
    thetas = _thetas(cfg)
    jobs = [(cfg, i, thetas[i], str(out_dir)) for i in range(len(thetas))]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            files = list(pool.map(_worker, jobs, chunksize=1))
    else:
        files = [_worker(job) for job in jobs]
    if cfg.system == "henon":
        bounds = {"a": list(cfg.henon_a_range), "b": list(cfg.henon_b_range)}
    else:
        bounds = {"mu": list(cfg.sam_mu_range)}
    manifest = {
        "system": cfg.system,
        "version": VERSION,
        "seed": cfg.seed,
        "param_grid": {"n_points": cfg.n_points, "bounds": bounds},
        "n_init": cfg.n_init,
        "horizon": cfg.steps if cfg.system == "henon" else cfg.t_end,
        "integrator": asdict(cfg.integrator),
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "files": [str(Path(f).relative_to(out_dir)) for f in files],
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return out_dir


def generate_henon(cfg: GenerationConfig, out_dir, workers: int = 1) -> Path:
    if cfg.system != "henon":
        raise ValueError("config is not for the henon system")
    return generate(cfg, out_dir, workers)


def generate_sam(cfg: GenerationConfig, out_dir, workers: int = 1) -> Path:
    if cfg.system != "sam":
        raise ValueError("config is not for the sam system")
    return generate(cfg, out_dir, workers)


# ---------------------------------------------------------------------------
# Loading and splitting


def load_manifest(dataset_dir) -> dict:
    return json.loads((Path(dataset_dir) / "manifest.json").read_text())


def sample_paths(dataset_dir) -> list[Path]:
    dataset_dir = Path(dataset_dir)
    manifest = load_manifest(dataset_dir)
    return [dataset_dir / rel for rel in manifest["files"]]


def load_dataset(dataset_dir) -> list[Sample]:
    return [load_sample(p) for p in sample_paths(dataset_dir)]


def _allocate(n: int, fractions) -> list[int]:
    """Largest-remainder allocation of n items to the given fractions."""
    raw = [f * n for f in fractions]
    counts = [int(math.floor(r)) for r in raw]
    remainder = n - sum(counts)
    order = sorted(range(len(fractions)), key=lambda i: raw[i] - counts[i], reverse=True)
    for i in order[:remainder]:
        counts[i] += 1
    return counts


def split_dataset(thetas: np.ndarray, seed: int, fractions=SPLIT_FRACTIONS) -> SplitIndex:
    """Stratified deterministic split over the sorted parameter axis.

    Samples are sorted by parameter vector (lexicographically), cut into
    contiguous blocks of 20 and each block hands 13/3/4 of its members to
    train/validation/test in seeded shuffled order, so every region of the
    parameter range feeds all three partitions. Datasets smaller than one
    block fall back to a proportional allocation.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    thetas = np.asarray(thetas)
    if thetas.ndim == 1:
        thetas = thetas.reshape(-1, 1)
    n = thetas.shape[0]
    order = np.lexsort(tuple(thetas[:, j] for j in reversed(range(thetas.shape[1]))))
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x5917,)))
    out: dict[int, list[int]] = {0: [], 1: [], 2: []}
    for start in range(0, n, SPLIT_BLOCK):
        block = order[start : start + SPLIT_BLOCK]
        counts = _allocate(len(block), fractions)
        labels = np.repeat(np.arange(3), counts)
        rng.shuffle(labels)
        for idx, lab in zip(block, labels):
            out[int(lab)].append(int(idx))
    return SplitIndex(
        train=tuple(sorted(out[0])),
        validation=tuple(sorted(out[1])),
        test=tuple(sorted(out[2])),
    )
