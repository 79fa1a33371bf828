"""Three-stage split training and checkpoint management.

Stage 1 trains encoder + compressor + segmentation decoder with the
channel bypassed.  Stage 2 freezes those and trains the channel codec
through AWGN at uniformly sampled SNRs.  Stage 3 freezes everything and
trains the diffusion denoiser on (decoded condition, future ground truth)
pairs.  Every stage is a pure function of (config, dataset, prev, seed):
run it twice, get the same weights and the same metrics log.
"""

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .config import ExperimentConfig, validate_config
from .dataset_io import SceneDataset
from .diffusion import mask_to_diffusion
from .encoder import pillar_features
from .metrics import iou
from .pipeline import Pipeline, build_pipeline
from .rng import derive_seed, np_rng, torch_gen

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1
ARCH_SECTIONS = ("data", "encoder", "channel", "diffusion")


class CheckpointError(RuntimeError):
    pass


# --- data plumbing --------------------------------------------------------


@dataclass
class FrameTensors:
    """A split's frames as batched tensors, scene structure preserved."""

    views: torch.Tensor  # (N, K, 3, H, W)
    pillars: torch.Tensor  # (N, 3, G, G)
    masks: torch.Tensor  # (N, G, G) float 0/1
    scene_rows: dict  # scene_id -> (first_row, n_frames); rows contiguous
    ignored_radar_points: int

    def __len__(self):
        return self.views.shape[0]

    def scene_ids(self):
        return list(self.scene_rows)


def split_tensors(dataset: SceneDataset, split: str) -> FrameTensors:
    cache = getattr(dataset, "_tensor_cache", None)
    if cache is None:
        cache = {}
        dataset._tensor_cache = cache
    if split in cache:
        return cache[split]
    views, pillars, masks = [], [], []
    scene_rows = {}
    ignored = 0
    for seq in dataset.split(split):
        scene_rows[seq.scene_id] = (len(views), len(seq.frames))
        for frame in seq.frames:
            v = np.asarray(frame.camera_views, dtype=np.float32)
            views.append(v.transpose(0, 3, 1, 2))
            pillar, skipped = pillar_features(frame.radar_points, dataset.grid)
            ignored += skipped
            pillars.append(pillar)
            masks.append(np.asarray(frame.gt_mask, dtype=np.float32))
    if not views:
        raise ValueError(f"dataset has no sequences in split {split!r}")
    out = FrameTensors(
        views=torch.from_numpy(np.stack(views)),
        pillars=torch.from_numpy(np.stack(pillars)),
        masks=torch.from_numpy(np.stack(masks)),
        scene_rows=scene_rows,
        ignored_radar_points=ignored,
    )
    cache[split] = out
    return out


def _batches(n: int, batch_size: int, rng):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield torch.from_numpy(order[i:i + batch_size].copy())


def _set_trainable(pipeline: Pipeline, modules):
    for p in pipeline.parameters():
        p.requires_grad_(False)
    params = []
    for m in modules:
        for p in m.parameters():
            p.requires_grad_(True)
            params.append(p)
    return params


def _fused_all(pipeline: Pipeline, data: FrameTensors,
               batch_size: int = 8) -> torch.Tensor:
    """Precompute fused maps for every row (frozen encoder)."""
    outs = []
    with torch.no_grad():
        for i in range(0, len(data), batch_size):
            outs.append(pipeline.fuse_inputs(data.views[i:i + batch_size],
                                             data.pillars[i:i + batch_size]))
    return torch.cat(outs)


# --- checkpoints ----------------------------------------------------------


def arch_hash(config: ExperimentConfig) -> str:
    """Hash of the config sections that determine network shapes."""
    subset = {k: config[k] for k in ARCH_SECTIONS}
    canon = json.dumps(subset, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def checkpoint_dict(pipeline: Pipeline, stage: int, config: ExperimentConfig,
                    seed: int, metrics: dict) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "stage": stage,
        "config": config.as_dict(),
        "config_hash": config.hash(),
        "arch_hash": arch_hash(config),
        "seed": seed,
        "metrics": metrics,
        "state": pipeline.state_dict(),
        "side_tags": pipeline.side_tags(),
    }


def save_checkpoint(ckpt: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(ckpt, path)
    return path


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(ckpt, dict) or ckpt.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a recognized checkpoint")
    return ckpt


def restore_pipeline(ckpt: dict):
    """Rebuild the pipeline a checkpoint was saved from.

    Returns (pipeline, config).  Shape mismatches between the stored
    weights and the rebuilt architecture are reported as CheckpointError.
    """
    config = validate_config(ckpt["config"])
    pipeline = build_pipeline(config)
    try:
        pipeline.load_state_dict(ckpt["state"], strict=True)
    except RuntimeError as e:
        raise CheckpointError(f"checkpoint does not fit its config: {e}") from None
    pipeline.eval()
    return pipeline, config


def _check_prev(prev: dict, stage: int, config: ExperimentConfig):
    if prev is None:
        raise CheckpointError(
            f"stage {stage} requires a stage-{stage - 1} checkpoint")
    if prev.get("stage") != stage - 1:
        raise CheckpointError(
            f"stage {stage} requires a stage-{stage - 1} checkpoint, "
            f"got stage {prev.get('stage')}")
    if prev.get("arch_hash") != arch_hash(config):
        raise CheckpointError(
            "config describes different network shapes than the checkpoint "
            "it resumes from")


# --- the three stages -----------------------------------------------------


def train(stage: int, config: ExperimentConfig, dataset: SceneDataset,
          prev: dict = None, seed: int = 0):
    """Run one training stage; returns (pipeline, checkpoint dict)."""
    if stage not in (1, 2, 3):
        raise ValueError(f"stage must be 1, 2 or 3, got {stage}")
    torch.set_num_threads(config["train"]["threads"])
    train_data = split_tensors(dataset, "train")
    if train_data.ignored_radar_points:
        log.info("pillar scatter ignored %d out-of-extent radar points",
                 train_data.ignored_radar_points)

    if stage == 1:
        if prev is not None:
            raise CheckpointError("stage 1 does not resume from a checkpoint")
        with torch.random.fork_rng():
            torch.manual_seed(derive_seed(seed, "init"))
            pipeline = build_pipeline(config)
        metrics_all = {}
    else:
        _check_prev(prev, stage, config)
        pipeline, _ = restore_pipeline(prev)
        metrics_all = dict(prev["metrics"])

    trainer = {1: _train_stage1, 2: _train_stage2, 3: _train_stage3}[stage]
    stage_metrics = trainer(pipeline, config, dataset, train_data, seed)
    stage_metrics["ignored_radar_points"] = train_data.ignored_radar_points
    metrics_all[f"stage{stage}"] = stage_metrics
    pipeline.eval()
    return pipeline, checkpoint_dict(pipeline, stage, config, seed, metrics_all)


def _pos_weight(masks) -> torch.Tensor:
    """BCE positive-class weight; occupancy is a few percent of the grid."""
    pos = float(masks.sum())
    neg = float(masks.numel()) - pos
    if pos <= 0:
        return torch.tensor(1.0)
    return torch.tensor(min(max(neg / pos, 1.0), 50.0))


def _make_scheduler(opt, config, epochs: int):
    if config["train"]["lr_schedule"] == "constant":
        return torch.optim.lr_scheduler.ConstantLR(opt, factor=1.0,
                                                   total_iters=0)
    return torch.optim.lr_scheduler.CosineAnnealingLR(
        opt, T_max=epochs, eta_min=config["train"]["lr"] * 0.05)


def _train_stage1(pipeline, config, dataset, data, seed):
    tr = config["train"]
    params = _set_trainable(pipeline, pipeline.stage_modules(1))
    opt = torch.optim.Adam(params, lr=tr["lr"])
    sched = _make_scheduler(opt, config, tr["epochs_stage1"])
    pos_weight = _pos_weight(data.masks)
    epochs = []
    for epoch in range(tr["epochs_stage1"]):
        pipeline.train()
        rng = np_rng(seed, "order", 1, epoch)
        losses = []
        for idx in _batches(len(data), tr["batch_size"], rng):
            fused = pipeline.fuse_inputs(data.views[idx], data.pillars[idx])
            assert torch.isfinite(fused).all(), "non-finite encoder output"
            logits = pipeline.segmenter.logits(pipeline.compressor(fused))
            loss = F.binary_cross_entropy_with_logits(
                logits, data.masks[idx], pos_weight=pos_weight)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.detach().item())
        sched.step()
        pipeline.eval()
        val = evaluate_checkpoint(pipeline, dataset, snr_db=None,
                                  seed=derive_seed(seed, "val", 1))
        epochs.append({"epoch": epoch, "loss": float(np.mean(losses)),
                       "val_iou": val["mean"]})
    return {"epochs": epochs, "final_val_iou": epochs[-1]["val_iou"],
            "val_eval": {"snr_db": None, "use_diffusion": False, "horizon": 0,
                         "seed": derive_seed(seed, "val", 1)}}


def _train_stage2(pipeline, config, dataset, data, seed):
    tr = config["train"]
    snrs = config["channel"]["snr_db"]
    lo, hi = min(snrs), max(snrs)
    if config["train"]["finetune_all"]:
        modules = pipeline.stage_modules(1) + pipeline.stage_modules(2)
    else:
        modules = pipeline.stage_modules(2)
    params = _set_trainable(pipeline, modules)
    opt = torch.optim.Adam(params, lr=tr["lr"])
    sched = _make_scheduler(opt, config, tr["epochs_stage2"])
    frozen_encoder = not config["train"]["finetune_all"]
    if frozen_encoder:
        fused_bank = _fused_all(pipeline, data, tr["batch_size"])
    w = tr["feature_loss_weight"]
    pos_weight = _pos_weight(data.masks)
    val_seed = derive_seed(seed, "val", 2)
    epochs = []
    for epoch in range(tr["epochs_stage2"]):
        pipeline.train()
        rng = np_rng(seed, "order", 2, epoch)
        snr_rng = np_rng(seed, "snr", epoch)
        losses = []
        for step, idx in enumerate(_batches(len(data), tr["batch_size"], rng)):
            if frozen_encoder:
                fused = fused_bank[idx]
            else:
                fused = pipeline.fuse_inputs(data.views[idx],
                                             data.pillars[idx])
            snr = float(snr_rng.uniform(lo, hi))
            decoded = pipeline.transmit_analog(
                fused, snr, derive_seed(seed, "chan", epoch, step))
            assert torch.isfinite(decoded).all(), "non-finite codec output"
            logits = pipeline.segmenter.logits(pipeline.compressor(decoded))
            loss = F.binary_cross_entropy_with_logits(
                logits, data.masks[idx], pos_weight=pos_weight)
            if w > 0:
                rel = (decoded - fused).pow(2).sum() \
                    / fused.pow(2).sum().clamp(min=1e-12)
                loss = loss + w * rel
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.detach().item())
        sched.step()
        pipeline.eval()
        val = evaluate_checkpoint(pipeline, dataset,
                                  snr_db=tr["val_snr_db"], seed=val_seed)
        epochs.append({"epoch": epoch, "loss": float(np.mean(losses)),
                       "val_iou": val["mean"]})
    return {"epochs": epochs, "final_val_iou": epochs[-1]["val_iou"],
            "val_eval": {"snr_db": tr["val_snr_db"], "use_diffusion": False,
                         "horizon": 0, "seed": val_seed}}


def _condition_bank(pipeline, config, data, seed, draws: int = 12):
    """Decoded masks for every row at a few SNRs; stage-3 training input."""
    snrs = config["channel"]["snr_db"]
    lo, hi = min(snrs), max(snrs)
    rng = np_rng(seed, "bank")
    bank = torch.empty((len(data), draws, *data.masks.shape[1:]))
    fused = _fused_all(pipeline, data, config["train"]["batch_size"])
    with torch.no_grad():
        for d in range(draws):
            for i in range(0, len(data), 16):
                f = fused[i:i + 16]
                snr = float(rng.uniform(lo, hi))
                probs = pipeline.run_awgn(
                    f, snr, derive_seed(seed, "bankchan", d, i))
                bank[i:i + 16, d] = probs
    return bank


def _train_stage3(pipeline, config, dataset, data, seed):
    tr = config["train"]
    horizons = config["diffusion"]["horizons"]
    schedule = pipeline.schedule
    params = _set_trainable(pipeline, pipeline.stage_modules(3))
    opt = torch.optim.Adam(params, lr=tr["lr"])
    sched = _make_scheduler(opt, config, tr["epochs_stage3"])
    bank = _condition_bank(pipeline, config, data, seed)
    draws = bank.shape[1]

    # row -> horizons that stay inside the same scene
    valid_h = []
    for scene_id, (first, count) in data.scene_rows.items():
        for t in range(count):
            valid_h.append([h for h in horizons if t + h < count])
    epochs = []
    for epoch in range(tr["epochs_stage3"]):
        pipeline.train()
        rng = np_rng(seed, "order", 3, epoch)
        pick = np_rng(seed, "pick", epoch)
        losses = []
        for idx in _batches(len(data), tr["batch_size"], rng):
            rows = idx.tolist()
            hs, targets, conds = [], [], []
            for r in rows:
                opts = valid_h[r] or [0]
                h = int(opts[pick.integers(len(opts))])
                hs.append(h)
                targets.append(data.masks[r + h])
                conds.append(bank[r, pick.integers(draws)])
            hs_t = torch.tensor(hs, dtype=torch.long)
            x0 = mask_to_diffusion(torch.stack(targets)).unsqueeze(1)
            cond = mask_to_diffusion(torch.stack(conds)).unsqueeze(1)
            # Dihedral augmentation of (condition, target) pairs.  Rotations
            # are restricted to horizon-0 rows: a rotated pair at h > 0 would
            # teach a motion direction the scenes never contain.  The y-mirror
            # negates vy only, which the scene styles are symmetric under.
            for i, h in enumerate(hs):
                k = int(pick.integers(4)) if h == 0 else 0
                if k:
                    x0[i] = torch.rot90(x0[i], k, dims=(-2, -1))
                    cond[i] = torch.rot90(cond[i], k, dims=(-2, -1))
                if pick.integers(2):
                    x0[i] = torch.flip(x0[i], dims=(-2,))
                    cond[i] = torch.flip(cond[i], dims=(-2,))
            ts = torch.from_numpy(
                pick.integers(1, schedule.steps + 1, size=len(rows)))
            ab = torch.from_numpy(
                schedule.alpha_bars[ts.numpy() - 1]).float().view(-1, 1, 1, 1)
            gen = torch_gen(seed, "eps", epoch, int(rows[0]))
            eps = torch.empty_like(x0).normal_(0.0, 1.0, generator=gen)
            x_t = ab.sqrt() * x0 + (1 - ab).sqrt() * eps
            x0_hat = pipeline.denoiser(torch.cat([x_t, cond], dim=1),
                                       ts, hs_t)
            loss = F.mse_loss(x0_hat, x0)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.detach().item())
        sched.step()
        epochs.append({"epoch": epoch, "loss": float(np.mean(losses))})
    pipeline.eval()
    return {"epochs": epochs, "final_loss": epochs[-1]["loss"]}


# --- evaluation -----------------------------------------------------------


def evaluate_checkpoint(ckpt, dataset: SceneDataset, snr_db=None,
                        use_diffusion: bool = False, horizon: int = 0,
                        threshold: float = 0.5, seed: int = 0,
                        split: str = "test") -> dict:
    """Mean/variance IoU of the full pipeline over a dataset split.

    ckpt may be a checkpoint dict or an already-restored Pipeline.
    snr_db None (or "lossless") bypasses the channel.  With horizon h and
    no diffusion, the decoded current mask is scored against the ground
    truth h frames ahead.  Variance is the unbiased sample variance over
    frames.
    """
    if isinstance(ckpt, Pipeline):
        pipeline = ckpt
        stage = 3
    else:
        if use_diffusion and ckpt.get("stage", 0) < 3:
            raise CheckpointError(
                "diffusion evaluation needs a stage-3 checkpoint")
        pipeline, _ = restore_pipeline(ckpt)
        stage = ckpt["stage"]
    if stage < 3 and use_diffusion:
        raise CheckpointError("diffusion evaluation needs a stage-3 checkpoint")
    if snr_db == "lossless":
        snr_db = None
    if horizon not in (0, 1, 2, 3):
        raise ValueError(f"horizon must be in {{0..3}}, got {horizon}")

    data = split_tensors(dataset, split)
    pipeline.eval()
    per_scene = {}
    all_vals = []
    with torch.no_grad():
        for scene_id, (first, count) in data.scene_rows.items():
            n = count - horizon
            if n <= 0:
                continue
            rows = slice(first, first + n)
            fused = pipeline.fuse_inputs(data.views[rows], data.pillars[rows])
            if snr_db is None:
                probs = pipeline.run_lossless(fused)
            else:
                probs = pipeline.run_awgn(
                    fused, snr_db, derive_seed(seed, "eval", scene_id))
            if use_diffusion:
                probs = pipeline.refine(
                    probs, horizon, derive_seed(seed, "refine", scene_id))
            gt = data.masks[first + horizon:first + horizon + n]
            vals = [iou(probs[i].numpy(), gt[i].numpy(), threshold)
                    for i in range(n)]
            per_scene[scene_id] = {
                "mean": float(np.mean(vals)),
                "var": float(np.var(vals, ddof=1)) if len(vals) > 1 else 0.0,
                "frames": len(vals),
            }
            all_vals.extend(vals)
    if not all_vals:
        raise ValueError("no frames to evaluate at this horizon")
    return {
        "mean": float(np.mean(all_vals)),
        "var": float(np.var(all_vals, ddof=1)) if len(all_vals) > 1 else 0.0,
        "frames": len(all_vals),
        "per_scene": per_scene,
    }
