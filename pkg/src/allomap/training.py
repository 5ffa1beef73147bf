"""Training orchestration: optimizer, schedule, one-/two-stage pipelines,
and the storage/time resource accounting that separates them.

The one-stage pipeline backpropagates from the map loss through decoder,
memory, projection, and encoder in a single graph, never touching disk.
The two-stage pipeline freezes the encoder, writes every per-frame feature
map to disk (AFEAT1 files), and trains memory + decoder from the reloaded
features.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import (
    Tensor,
    backward,
    masked_cross_entropy,
    no_grad,
    reset_tape,
)
from .encoder import EncoderConfig
from .geometry import GridSpec, Intrinsics
from .mapio import SemanticMap
from .metrics import MetricsReport, mask_map
from .model import MappingModel
from .renderer import render_trajectory
from .worldgen import (
    VoxelScene,
    grid_for_scene,
    ground_truth_map,
    sample_trajectory,
)

AFEAT_MAGIC = b"AFEAT1"


# ---------------------------------------------------------------------------
# optimizer and schedule

class AdamW:
    """Decoupled weight decay, then Adam moment update with bias correction."""

    def __init__(self, named_params, lr: float = 6e-5, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01):
        self.params = [(n, t) for n, t in named_params if t.requires_grad]
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.steps = 0
        # moments are accumulators: keep them (and update math) in 64-bit,
        # rounding the stored parameter to f32 once per step
        self.m = [np.zeros(t.data.shape, np.float64) for _, t in self.params]
        self.v = [np.zeros(t.data.shape, np.float64) for _, t in self.params]

    def zero_grad(self) -> None:
        for _, t in self.params:
            t.grad = None

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        for _, t in self.params:
            if t.grad is not None and not np.isfinite(t.grad).all():
                name = next(n for n, p in self.params if p is t)
                raise ValueError(f"non-finite gradient for parameter {name!r}")
        self.steps += 1
        c1 = 1.0 - self.beta1 ** self.steps
        c2 = 1.0 - self.beta2 ** self.steps
        for k, (_, t) in enumerate(self.params):
            g = t.grad
            if g is None:
                continue
            g64 = g.astype(np.float64)
            p = t.data.astype(np.float64)
            p *= 1.0 - lr * self.weight_decay
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g64
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g64 * g64)
            mhat = self.m[k] / c1
            vhat = self.v[k] / c2
            p -= lr * mhat / (np.sqrt(vhat) + self.eps)
            t.data = p.astype(np.float32)


def lr_schedule(step: int, total_steps: int, base_lr: float,
                power: float = 0.9, kind: str = "poly") -> float:
    """Multiplicative-factor schedule; the default decay law is polynomial."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if kind == "constant":
        return base_lr
    if kind == "poly":
        return base_lr * (1.0 - step / total_steps) ** power
    raise ValueError(f"unknown schedule {kind!r}")


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class TrainConfig:
    lr: float = 6e-5
    weight_decay: float = 0.01
    epochs: int = 1
    n_points: int = 20
    pipeline: str = "one_stage"
    memory_variant: str = "bigru_convfusion"
    memory_channels: int = 16
    decoder_hidden: int = 16
    tie_directions: bool = False
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    schedule: str = "poly"
    schedule_power: float = 0.9
    frozen_encoder: bool = False
    model_seed: int = 0
    data_seed: int = 0
    image_size: int = 64
    hfov_deg: float = 90.0
    noise_sigma: float = 0.05
    resolution: float = 0.02
    margin: float = 0.5
    h_min: float = 0.05
    h_max: float = 2.0
    trajectories_per_scene: int = 1

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.n_points < 1:
            raise ValueError("trajectory length must be >= 1")
        if self.pipeline not in ("one_stage", "two_stage"):
            raise ValueError(f"unknown pipeline {self.pipeline!r}")

    def intrinsics(self) -> Intrinsics:
        return Intrinsics.from_hfov(self.image_size, self.image_size, self.hfov_deg)


@dataclass
class ResourceReport:
    pipeline: str
    feature_bytes: int = 0       # raw f32 feature payload written to disk
    file_bytes: int = 0          # payload + container headers
    write_seconds: float = 0.0
    read_seconds: float = 0.0
    train_seconds: float = 0.0
    param_count: int = 0
    epochs: int = 0

    @property
    def total_seconds(self) -> float:
        return self.write_seconds + self.read_seconds + self.train_seconds


@dataclass
class TrainResult:
    model: MappingModel
    checkpoint: dict[str, np.ndarray]
    losses: list[float]
    log_lines: list[str]
    resources: ResourceReport
    aborted: bool = False


# ---------------------------------------------------------------------------
# data preparation

@dataclass
class TrajectorySample:
    scene: VoxelScene
    frames: list
    grid: GridSpec
    gt: SemanticMap
    traj_seed: int


def prepare_samples(scenes, cfg: TrainConfig) -> list[TrajectorySample]:
    """Render every (scene, trajectory) pair once; training iterates over
    the cached observations."""
    intr = cfg.intrinsics()
    samples = []
    for s_idx, scene in enumerate(scenes):
        grid = grid_for_scene(scene, cfg.resolution, cfg.margin, cfg.h_min, cfg.h_max)
        gt = ground_truth_map(scene, grid)
        for t_idx in range(cfg.trajectories_per_scene):
            traj_seed = cfg.data_seed * 100003 + s_idx * 131 + t_idx
            traj = sample_trajectory(scene, cfg.n_points, seed=traj_seed)
            frames = render_trajectory(scene, traj, intr, seed=traj_seed,
                                       noise_sigma=cfg.noise_sigma)
            samples.append(TrajectorySample(scene, frames, grid, gt, traj_seed))
    return samples


def build_model(cfg: TrainConfig) -> MappingModel:
    return MappingModel(cfg.encoder, cfg.memory_variant, cfg.memory_channels,
                        cfg.decoder_hidden, cfg.model_seed, cfg.tie_directions)


# ---------------------------------------------------------------------------
# training drivers

def _loss_for(model, sample, frozen):
    logits, observed = model.forward(sample.frames, sample.grid,
                                     frozen_encoder=frozen)
    return masked_cross_entropy(logits, sample.gt.data), observed


def train_one_stage(cfg: TrainConfig, scenes,
                    samples: list[TrajectorySample] | None = None,
                    model: MappingModel | None = None,
                    max_steps: int | None = None) -> TrainResult:
    """Online pipeline: no intermediate features touch disk."""
    if samples is None:
        samples = prepare_samples(scenes, cfg)
    if model is None:
        model = build_model(cfg)
    if cfg.frozen_encoder:
        model.encoder.set_requires_grad(False)
        opt_params = model.head_parameters()
    else:
        opt_params = list(model.named_parameters())
    opt = AdamW(opt_params, lr=cfg.lr, weight_decay=cfg.weight_decay)

    total = cfg.epochs * len(samples) if max_steps is None else max_steps
    losses: list[float] = []
    logs: list[str] = []
    report = ResourceReport(pipeline="one_stage", param_count=model.param_count(),
                            epochs=cfg.epochs)
    t0 = time.perf_counter()
    step = 0
    aborted = False
    for epoch in range(cfg.epochs):
        for sample in samples:
            if step >= total:
                break
            lr = lr_schedule(step, max(total, 1), cfg.lr, cfg.schedule_power,
                             cfg.schedule)
            reset_tape()
            loss, _ = _loss_for(model, sample, cfg.frozen_encoder)
            value = loss.item()
            if not math.isfinite(value):
                logs.append(f"step={step} loss=nan lr={lr:.6g} ABORT divergence")
                aborted = True
                break
            opt.zero_grad()
            try:
                backward(loss)
                opt.step(lr)
            except ValueError as exc:
                logs.append(f"step={step} loss={value:.6f} lr={lr:.6g} ABORT {exc}")
                aborted = True
                break
            losses.append(value)
            logs.append(f"step={step} loss={value:.6f} lr={lr:.6g}")
            step += 1
        if aborted or step >= total:
            break
    report.train_seconds = time.perf_counter() - t0
    return TrainResult(model, model.state(), losses, logs, report, aborted)


def train_two_stage(cfg: TrainConfig, scenes, feature_dir,
                    samples: list[TrajectorySample] | None = None,
                    model: MappingModel | None = None) -> TrainResult:
    """Offline pipeline: frozen encoder, features staged on disk."""
    if samples is None:
        samples = prepare_samples(scenes, cfg)
    if model is None:
        model = build_model(cfg)
    model.encoder.set_requires_grad(False)
    feature_dir = Path(feature_dir)
    feature_dir.mkdir(parents=True, exist_ok=True)

    report = ResourceReport(pipeline="two_stage", param_count=model.param_count(),
                            epochs=cfg.epochs)
    paths = []
    try:
        # stage 1: extract and store every per-frame feature map; its wall
        # time (extraction + serialization + fsync) is the write cost
        for idx, sample in enumerate(samples):
            t0 = time.perf_counter()
            with no_grad():
                feats = model.encode_frames(sample.frames, frozen=True)
            path = feature_dir / f"traj_{idx:04d}.afeat"
            payload, total = write_features(path, idx, feats.data)
            report.write_seconds += time.perf_counter() - t0
            report.feature_bytes += payload
            report.file_bytes += total
            paths.append(path)
    except OSError:
        for p in paths:
            p.unlink(missing_ok=True)
        raise

    opt = AdamW(model.head_parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    total = cfg.epochs * len(samples)
    losses: list[float] = []
    logs: list[str] = []
    step = 0
    aborted = False
    for epoch in range(cfg.epochs):
        for sample, path in zip(samples, paths):
            lr = lr_schedule(step, max(total, 1), cfg.lr, cfg.schedule_power,
                             cfg.schedule)
            t0 = time.perf_counter()
            _, feats = read_features(path)
            report.read_seconds += time.perf_counter() - t0
            t0 = time.perf_counter()
            reset_tape()
            logits, _ = model.forward_with_features(Tensor(feats), sample.frames,
                                                    sample.grid)
            loss = masked_cross_entropy(logits, sample.gt.data)
            value = loss.item()
            if not math.isfinite(value):
                logs.append(f"step={step} loss=nan lr={lr:.6g} ABORT divergence")
                aborted = True
                break
            opt.zero_grad()
            backward(loss)
            opt.step(lr)
            report.train_seconds += time.perf_counter() - t0
            losses.append(value)
            logs.append(f"step={step} loss={value:.6f} lr={lr:.6g}")
            step += 1
        if aborted:
            break
    return TrainResult(model, model.state(), losses, logs, report, aborted)


# ---------------------------------------------------------------------------
# feature files (stage-1 output)

def write_features(path, traj_id: int, feats: np.ndarray) -> tuple[int, int]:
    """Write one trajectory's feature stack; returns (payload, file) bytes."""
    feats = np.ascontiguousarray(feats, dtype="<f4")
    n, h, w, c = feats.shape
    head = AFEAT_MAGIC + np.asarray([traj_id, n, h, w, c], "<u4").tobytes()
    payload = feats.tobytes()
    blob = head + payload
    with open(path, "wb") as fh:
        fh.write(blob)
        fh.flush()
        os.fsync(fh.fileno())
    return len(payload), len(blob)


def read_features(path) -> tuple[int, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:6] != AFEAT_MAGIC:
        raise ValueError(f"{path}: not a feature file (bad magic)")
    traj_id, n, h, w, c = (int(v) for v in np.frombuffer(blob, "<u4", 5, 6))
    feats = np.frombuffer(blob, "<f4", n * h * w * c, 26).reshape(n, h, w, c)
    return traj_id, feats.copy()


# ---------------------------------------------------------------------------
# evaluation

def predict_map(model: MappingModel, sample: TrajectorySample):
    from .decoder import predict_classes

    with no_grad():
        logits, observed = model.forward(sample.frames, sample.grid,
                                         frozen_encoder=True)
    return predict_classes(logits), observed


def evaluate_on_samples(model: MappingModel, samples,
                        observed_only: bool = True,
                        tolerance: int = 2) -> MetricsReport:
    """Pool predictions over samples into one report."""
    preds, gts = [], []
    for sample in samples:
        pred, observed = predict_map(model, sample)
        gt = sample.gt.data
        if observed_only:
            pred = mask_map(pred, observed)
            gt = mask_map(gt, observed)
        preds.append(pred)
        gts.append(gt)
    pred_all = np.concatenate([p.reshape(-1) for p in preds])
    gt_all = np.concatenate([g.reshape(-1) for g in gts])
    # boundary metrics need 2-D structure; evaluate per sample and average
    from .metrics import boundary_f1, confusion, summarize

    conf = confusion(pred_all[None, :], gt_all[None, :])
    s = summarize(conf)
    bf1s = []
    for p, g in zip(preds, gts):
        mbf1, _, present = boundary_f1(p, g, tolerance)
        if present.any():
            bf1s.append(mbf1)
    m_bf1 = float(np.mean(bf1s)) if bf1s else 0.0
    return MetricsReport(
        acc=s["acc"], m_recall=s["m_recall"], m_precision=s["m_precision"],
        m_iou=s["m_iou"], m_bf1=m_bf1, confusion=conf,
        per_class={"recall": s["recall"], "precision": s["precision"],
                   "iou": s["iou"], "present": s["present"],
                   "bf1": np.zeros_like(s["recall"]),
                   "bf1_present": np.zeros_like(s["present"])},
        degenerate=s["degenerate"],
    )
