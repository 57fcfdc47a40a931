"""Training loop, evaluation, prediction and experiment sweeps.

Training minimizes the scaled parameter-regression loss over a generated
dataset. With augmentation on, every training sample is re-rendered each
epoch from a fresh random subsample (seed derived from master seed, sample
index and epoch); validation samples are augmented exactly once so the
validation loss is comparable across the run. The parameters with the lowest
validation loss are checkpointed and evaluated on the held-out test split.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import dataset as ds
from .nn import (
    Adam,
    ConvRegressor,
    HENON_LOSS,
    LossWeights,
    NetConfig,
    SAM_LOSS,
    load_checkpoint,
    save_checkpoint,
    weighted_mse,
)
from .raster import (
    AugmentLimits,
    HENON_LIMITS,
    HENON_WINDOW,
    RasterSpec,
    SAM_LIMITS,
    SAM_WINDOW,
    augment,
    rasterize,
)

__all__ = [
    "TrainConfig",
    "Metrics",
    "TrainingDiverged",
    "train",
    "evaluate",
    "predict",
    "sweep_dataset_size",
    "sweep_generalization",
    "system_setup",
    "training_image",
    "validation_image",
]

# spawn-key namespaces for independent seed streams
_ORDER_STREAM = 1 << 40
_EVAL_STREAM = 1 << 41


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class SystemSetup:
    """Raster window, augmentation bounds and loss scaling for one system."""

    system: str
    raster: RasterSpec
    limits: AugmentLimits
    loss: LossWeights
    param_names: tuple


def system_setup(system: str, image_size: int = 64,
                 raster: RasterSpec | None = None,
                 limits: AugmentLimits | None = None) -> SystemSetup:
    if system == "henon":
        window, default_limits = HENON_WINDOW, HENON_LIMITS
        loss, names = HENON_LOSS, ("a", "b")
    elif system == "sam":
        window, default_limits = SAM_WINDOW, SAM_LIMITS
        loss, names = SAM_LOSS, ("mu",)
    else:
        raise ValueError(f"unknown system {system!r}")
    if raster is None:
        raster = RasterSpec(x_min=window[0], x_max=window[1],
                            y_min=window[2], y_max=window[3],
                            width=image_size, height=image_size)
    return SystemSetup(system, raster, limits or default_limits, loss, names)


@dataclass
class TrainConfig:
    dataset: str
    out_dir: str = "runs/run"
    augment: bool = True
    image_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 32
    steps: int = 2000
    val_interval: int = 100
    split_seed: int = 0
    seed: int = 0
    eval_seed: int = 0
    raster: RasterSpec | None = None
    limits: AugmentLimits | None = None
    stem_channels: int = 16
    stages: tuple = ((2, 16, 2), (2, 32, 2), (2, 64, 2))

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be >= 1")


@dataclass
class Metrics:
    split: str
    loss: float
    rmse: tuple
    n_samples: int
    wall_s: float


def _augment_rng(master: int, index: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master, spawn_key=(index, epoch)))


def training_image(sample: ds.Sample, setup: SystemSetup, master: int,
                   index: int, epoch: int) -> np.ndarray:
    """Fresh augmented rendering of one training sample for one epoch."""
    rng = _augment_rng(master, index, epoch)
    return rasterize(augment(sample.trajectories, setup.limits, rng), setup.raster)


def validation_image(sample: ds.Sample, setup: SystemSetup, master: int,
                     index: int) -> np.ndarray:
    """Augmented rendering fixed for the whole run (epoch stream 0)."""
    rng = _augment_rng(master, index, 0)
    return rasterize(augment(sample.trajectories, setup.limits, rng), setup.raster)


def clean_image(sample: ds.Sample, setup: SystemSetup) -> np.ndarray:
    return rasterize(sample.trajectories, setup.raster)


def _forward_in_batches(net, images, thetas, loss_weights, batch_size):
    """Eval-mode loss and per-parameter squared errors over a whole split."""
    n = len(images)
    total_loss = 0.0
    sq_err = np.zeros(thetas.shape[1])
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        pred, _ = net.forward(np.asarray(images[lo:hi]), mode="eval")
        loss, _ = weighted_mse(pred, thetas[lo:hi], loss_weights)
        total_loss += loss * (hi - lo)
        sq_err += ((pred - thetas[lo:hi]) ** 2).sum(axis=0)
    return total_loss / n, tuple(np.sqrt(sq_err / n))


def run_training(samples, thetas, train_idx, val_idx, setup: SystemSetup,
                 cfg: TrainConfig, log_rows=None):
    """Core optimization loop; returns (net, opt, best, history).

    ``best`` holds the parameters snapshot (raw arrays) with the lowest
    validation loss, its step and loss. ``log_rows``, when given, receives
    metric rows (step, split, loss, rmse..., wall seconds).
    """
    net_cfg = NetConfig(
        height=setup.raster.height, width=setup.raster.width,
        stem_channels=cfg.stem_channels, stages=cfg.stages,
        out_dim=len(setup.param_names),
    )
    net = ConvRegressor(net_cfg, seed=cfg.seed)
    opt = Adam(net, lr=cfg.lr, weight_decay=cfg.weight_decay)

    if cfg.augment:
        val_images = [validation_image(samples[i], setup, cfg.seed, i) for i in val_idx]
    else:
        val_images = [clean_image(samples[i], setup) for i in val_idx]
    val_thetas = thetas[list(val_idx)]

    clean_cache: dict[int, np.ndarray] = {}

    def batch_image(i, epoch):
        if cfg.augment:
            return training_image(samples[i], setup, cfg.seed, i, epoch)
        img = clean_cache.get(i)
        if img is None:
            img = clean_cache.setdefault(i, clean_image(samples[i], setup))
        return img

    best = {"step": 0, "loss": math.inf, "params": None, "opt_state": None}

    def snapshot(step, loss):
        best.update(
            step=step, loss=loss,
            params=[p.copy() for p in net.params()],
            buffers=[b.copy() for b in net.buffers()],
            opt_state=([m.copy() for m in opt.m], [v.copy() for v in opt.v], opt.t),
        )

    def validate(step):
        vloss, vrmse = _forward_in_batches(net, val_images, val_thetas,
                                           setup.loss, cfg.batch_size)
        if log_rows is not None:
            log_rows(step, "val", vloss, vrmse, time.perf_counter() - t_start)
        if vloss < best["loss"]:
            snapshot(step, vloss)
        return vloss

    t_start = time.perf_counter()
    order: list[int] = []
    epoch = -1
    rng_order = None
    history = []
    for step in range(1, cfg.steps + 1):
        batch_idx = []
        while len(batch_idx) < cfg.batch_size:
            if not order:
                epoch += 1
                rng_order = np.random.default_rng(
                    np.random.SeedSequence(cfg.seed, spawn_key=(_ORDER_STREAM, epoch))
                )
                order = [int(i) for i in rng_order.permutation(list(train_idx))]
            batch_idx.append((order.pop(), epoch))
        images = np.asarray([batch_image(i, ep) for i, ep in batch_idx])
        targets = thetas[[i for i, _ in batch_idx]]
        pred, cache = net.forward(images, mode="train")
        loss, dpred = weighted_mse(pred, targets, setup.loss)
        if not math.isfinite(loss):
            raise TrainingDiverged(
                f"non-finite training loss at step {step} "
                f"(lr={cfg.lr}, batch={cfg.batch_size})"
            )
        grads = net.backward(cache, dpred)
        opt.step(cache, grads)
        history.append(loss)
        if log_rows is not None and (step % cfg.val_interval == 0 or step == 1):
            log_rows(step, "train", loss, None, time.perf_counter() - t_start)
        if step % cfg.val_interval == 0 or step == cfg.steps:
            validate(step)

    # restore the best parameters before returning
    if best["params"] is not None:
        for p, src in zip(net.params(), best["params"]):
            p[...] = src
        for b, src in zip(net.buffers(), best["buffers"]):
            b[...] = src
        m_state, v_state, t_state = best["opt_state"]
        for m, src in zip(opt.m, m_state):
            m[...] = src
        for v, src in zip(opt.v, v_state):
            v[...] = src
        opt.t = t_state
        net.version += 1
    return net, opt, best, history


def _eval_collection(sample, setup, mode, eval_seed, index, n_traj=None, n_steps=None):
    trajs = sample.trajectories
    rng = np.random.default_rng(
        np.random.SeedSequence(eval_seed, spawn_key=(_EVAL_STREAM, index))
    )
    if mode == "augmented":
        trajs = augment(trajs, setup.limits, rng)
    elif mode != "clean":
        raise ValueError(f"unknown evaluation mode {mode!r}")
    if n_traj is not None:
        k = min(int(n_traj), len(trajs))
        chosen = rng.choice(len(trajs), size=k, replace=False)
        trajs = [trajs[i] for i in chosen]
    if n_steps is not None:
        trajs = [t[: int(n_steps)] for t in trajs]
    return trajs


def _evaluate_loaded(net, samples, thetas, indices, setup, mode, eval_seed,
                     batch_size, n_traj=None, n_steps=None, split_name="test"):
    t0 = time.perf_counter()
    images = [
        rasterize(
            _eval_collection(samples[i], setup, mode, eval_seed, i, n_traj, n_steps),
            setup.raster,
        )
        for i in indices
    ]
    loss, rmse = _forward_in_batches(net, images, thetas[list(indices)],
                                     setup.loss, batch_size)
    return Metrics(split=split_name, loss=loss, rmse=rmse,
                   n_samples=len(indices), wall_s=time.perf_counter() - t0)


def _setup_from_meta(meta) -> SystemSetup:
    return SystemSetup(
        system=meta["system"],
        raster=RasterSpec(**meta["raster"]),
        limits=AugmentLimits(**meta["limits"]),
        loss=LossWeights(sigma=tuple(meta["loss"]["sigma"]), mid=tuple(meta["loss"]["mid"])),
        param_names=tuple(meta["param_names"]),
    )


def train(cfg: TrainConfig) -> dict:
    """Train on a persisted dataset; writes checkpoint + metrics CSV.

    Returns a summary dict with the best validation loss and the test losses
    under both clean and augmented inputs (``test`` itself is evaluated with
    inputs matching the training distribution).
    """
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = ds.load_manifest(cfg.dataset)
    setup = system_setup(manifest["system"], cfg.image_size, cfg.raster, cfg.limits)
    samples = ds.load_dataset(cfg.dataset)
    thetas = np.stack([s.theta for s in samples])
    split = ds.split_dataset(thetas, cfg.split_seed)

    metrics_path = out_dir / "metrics.csv"
    ckpt_path = out_dir / "best.rmck"
    rmse_cols = [f"rmse_{p}" for p in setup.param_names]
    csv_file = metrics_path.open("w", newline="")
    writer = csv.writer(csv_file)
    writer.writerow(["step", "split", "loss", *rmse_cols, "wall_s"])

    def log_rows(step, split_name, loss, rmse, wall_s):
        rmse_vals = ["" for _ in rmse_cols] if rmse is None else [f"{r:.9g}" for r in rmse]
        writer.writerow([step, split_name, f"{loss:.9g}", *rmse_vals, f"{wall_s:.3f}"])
        csv_file.flush()

    t0 = time.perf_counter()
    net, opt, best, _ = run_training(
        samples, thetas, split.train, split.validation, setup, cfg, log_rows
    )
    meta = {
        "system": setup.system,
        "raster": asdict(setup.raster),
        "limits": asdict(setup.limits),
        "loss": {"sigma": list(setup.loss.sigma), "mid": list(setup.loss.mid)},
        "param_names": list(setup.param_names),
        "dataset": str(cfg.dataset),
        "augment": cfg.augment,
        "split_seed": cfg.split_seed,
        "seed": cfg.seed,
        "steps": cfg.steps,
        "best_step": best["step"],
        "best_val_loss": best["loss"],
    }
    save_checkpoint(net, opt, ckpt_path, meta=meta)

    results = {}
    for mode in ("clean", "augmented"):
        m = _evaluate_loaded(net, samples, thetas, split.test, setup, mode,
                             cfg.eval_seed, cfg.batch_size,
                             split_name=f"test_{mode}")
        results[mode] = m
        log_rows(best["step"], m.split, m.loss, m.rmse, time.perf_counter() - t0)
    matched = results["augmented" if cfg.augment else "clean"]
    log_rows(best["step"], "test", matched.loss, matched.rmse, time.perf_counter() - t0)
    csv_file.close()

    return {
        "ckpt": str(ckpt_path),
        "metrics": str(metrics_path),
        "best_step": best["step"],
        "best_val_loss": best["loss"],
        "test_loss": matched.loss,
        "test_loss_clean": results["clean"].loss,
        "test_loss_augmented": results["augmented"].loss,
        "wall_s": time.perf_counter() - t0,
    }


def evaluate(ckpt_path, dataset_dir=None, split="test", mode="clean",
             n_traj=None, n_steps=None, eval_seed=0, batch_size=32) -> Metrics:
    """Evaluate a checkpoint on one split of a dataset.

    ``mode="augmented"`` applies the training-style random subsampling;
    ``n_traj``/``n_steps`` pin the trajectory count and length instead, for
    generalization grids.
    """
    net, _, meta = load_checkpoint(ckpt_path)
    setup = _setup_from_meta(meta)
    dataset_dir = dataset_dir or meta["dataset"]
    samples = ds.load_dataset(dataset_dir)
    thetas = np.stack([s.theta for s in samples])
    split_idx = ds.split_dataset(thetas, meta["split_seed"])
    indices = {
        "train": split_idx.train,
        "val": split_idx.validation,
        "validation": split_idx.validation,
        "test": split_idx.test,
        "all": tuple(range(len(samples))),
    }.get(split)
    if indices is None:
        raise ValueError(f"unknown split {split!r}")
    return _evaluate_loaded(net, samples, thetas, indices, setup, mode,
                            eval_seed, batch_size, n_traj, n_steps, split)


def predict(ckpt_path, trajectories) -> tuple[np.ndarray, float]:
    """Parameter estimate for a raw trajectory collection, plus wall time."""
    net, _, meta = load_checkpoint(ckpt_path)
    setup = _setup_from_meta(meta)
    t0 = time.perf_counter()
    image = rasterize(trajectories, setup.raster)
    pred, _ = net.forward(image[None], mode="eval")
    return pred[0], time.perf_counter() - t0


# ---------------------------------------------------------------------------
# Experiment sweeps


def _sweep_cell(args):
    cfg, size, mode, seed = args
    result = train(cfg)
    return {
        "size": size,
        "mode": mode,
        "seed": seed,
        "steps": cfg.steps,
        "test_loss": f"{result['test_loss']:.9g}",
        "test_loss_clean": f"{result['test_loss_clean']:.9g}",
        "test_loss_augmented": f"{result['test_loss_augmented']:.9g}",
        "best_val_loss": f"{result['best_val_loss']:.9g}",
        "wall_s": f"{result['wall_s']:.1f}",
    }


SWEEP_COLUMNS = ["size", "mode", "seed", "steps", "test_loss", "test_loss_clean",
                 "test_loss_augmented", "best_val_loss", "wall_s"]


def sweep_dataset_size(base_cfg: TrainConfig, sizes, data_root, out_csv,
                       modes=("clean", "augmented"), seeds=(0, 1, 2),
                       system="henon", gen_seed=0, workers=1,
                       gen_overrides=None) -> Path:
    """Train one model per (size, mode, seed) cell and log the test losses.

    Datasets are generated under ``data_root`` on first use. The CSV is
    written incrementally and existing rows are skipped, so an interrupted
    sweep resumes where it stopped.
    """
    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    done = set()
    if out_csv.exists():
        with out_csv.open() as fh:
            for row in csv.DictReader(fh):
                done.add((int(row["size"]), row["mode"], int(row["seed"])))
    data_root = Path(data_root)
    jobs = []
    for size in sizes:
        ds_dir = data_root / f"{system}-n{size}"
        if not (ds_dir / "manifest.json").exists():
            gen_cfg = ds.GenerationConfig(system=system, n_points=size, seed=gen_seed,
                                          **(gen_overrides or {}))
            ds.generate(gen_cfg, ds_dir, workers=workers)
        for mode in modes:
            for seed in seeds:
                if (size, mode, seed) in done:
                    continue
                cell_dir = Path(base_cfg.out_dir) / f"n{size}-{mode}-s{seed}"
                cfg = replace(base_cfg, dataset=str(ds_dir), out_dir=str(cell_dir),
                              augment=(mode == "augmented"), seed=seed)
                jobs.append((cfg, size, mode, seed))

    new_file = not out_csv.exists()
    with out_csv.open("a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        if new_file:
            writer.writeheader()
            fh.flush()
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(_sweep_cell, job) for job in jobs]
                for fut in as_completed(futures):
                    writer.writerow(fut.result())
                    fh.flush()
        else:
            for job in jobs:
                writer.writerow(_sweep_cell(job))
                fh.flush()
    return out_csv


def sweep_generalization(ckpt_path, lengths, counts, dataset_dir=None,
                         out_csv="generalization.csv", split="test",
                         eval_seed=0) -> Path:
    """Evaluate one checkpoint over a (trajectory length x count) grid."""
    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    with out_csv.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["length", "count", "loss"])
        for n_steps in lengths:
            for n_traj in counts:
                m = evaluate(ckpt_path, dataset_dir, split=split, mode="clean",
                             n_traj=n_traj, n_steps=n_steps, eval_seed=eval_seed)
                writer.writerow([n_steps, n_traj, f"{m.loss:.9g}"])
                fh.flush()
    return out_csv
