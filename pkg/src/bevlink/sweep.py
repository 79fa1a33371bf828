"""SNR sweep: every (scene, snr, variant, seed, horizon) cell, no gaps.

Each cell is a pure evaluation with its own derived seed, so cells can
run in any order or in parallel and the result is identical.  Records
are kept in canonical axis order; the CSV writer in `report` preserves
that order byte-for-byte.
"""

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from datetime import datetime, timezone

import numpy as np
import torch

from .dataset_io import SceneDataset
from .metrics import iou
from .pipeline import Pipeline
from .rng import derive_seed
from .training import restore_pipeline, split_tensors

VARIANTS = ("lossless", "awgn", "awgn+diffusion", "digital")


@dataclass
class SweepRecord:
    scene_id: str
    snr_db: float
    variant: str
    seed: int  # seed index within the sweep
    horizon: int
    iou: float
    frames: int
    outage: float  # fraction of outage frames (digital only; else 0)


@dataclass
class SweepResult:
    records: list
    metadata: dict

    def to_json(self) -> str:
        return json.dumps(
            {"records": [asdict(r) for r in self.records],
             "metadata": self.metadata},
            indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SweepResult":
        raw = json.loads(text)
        return cls(records=[SweepRecord(**r) for r in raw["records"]],
                   metadata=raw["metadata"])

    def select(self, **axes):
        """Records matching every given axis value (variant=..., snr_db=...)."""
        out = self.records
        for key, value in axes.items():
            out = [r for r in out if getattr(r, key) == value]
        return out


def _eval_cell(pipeline: Pipeline, fused: torch.Tensor, masks: torch.Tensor,
               variant: str, snr: float, horizon: int, cell_seed: int,
               threshold: float):
    """IoU over one scene's frames for one sweep cell."""
    n = fused.shape[0] - horizon
    with torch.no_grad():
        if variant == "lossless":
            probs = pipeline.run_lossless(fused[:n])
            outages = [False] * n
        elif variant == "awgn":
            probs = pipeline.run_awgn(fused[:n], snr, cell_seed)
            outages = [False] * n
        elif variant == "awgn+diffusion":
            probs = pipeline.run_awgn(fused[:n], snr, cell_seed)
            probs = pipeline.refine(probs, horizon,
                                    derive_seed(cell_seed, "refine"))
            outages = [False] * n
        elif variant == "digital":
            probs, outages = pipeline.run_digital(fused[:n], snr, cell_seed)
        else:
            raise ValueError(f"unknown variant {variant!r}")
    gt = masks[horizon:horizon + n]
    vals = []
    for i in range(n):
        if outages[i]:
            vals.append(0.0)
        else:
            vals.append(iou(probs[i].numpy(), gt[i].numpy(), threshold))
    return float(np.mean(vals)), n, float(np.mean(outages))


def snr_sweep(ckpt, dataset: SceneDataset, snr_list, variants=None,
              seeds: int = 1, horizons=(0,), base_seed: int = 99,
              threshold: float = 0.5, split: str = "test",
              jobs: int = 1, checkpoint_id: str = None) -> SweepResult:
    """Evaluate the full cross-product of the requested axes.

    ckpt is a checkpoint dict or a restored Pipeline (then assumed
    stage 3).  `seeds` is a repetition count; record seeds are indices
    0..seeds-1, each mapped to an independent derived RNG seed.
    """
    snr_list = [float(s) for s in snr_list]
    if not snr_list:
        raise ValueError("snr_list must not be empty")
    variants = list(variants) if variants is not None else ["lossless", "awgn"]
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}; choose from {VARIANTS}")
    horizons = list(horizons)
    for h in horizons:
        if h not in (0, 1, 2, 3):
            raise ValueError(f"horizon must be in {{0..3}}, got {h}")
    if isinstance(ckpt, Pipeline):
        pipeline, stage = ckpt, 3
    else:
        pipeline, _ = restore_pipeline(ckpt)
        stage = ckpt["stage"]
    if "awgn+diffusion" in variants and stage < 3:
        raise ValueError("awgn+diffusion needs a stage-3 checkpoint")
    pipeline.eval()

    data = split_tensors(dataset, split)
    if len(data) == 0:
        raise ValueError(f"dataset split {split!r} is empty")
    max_h = max(horizons)
    for scene_id, (_, count) in data.scene_rows.items():
        if count <= max_h:
            raise ValueError(
                f"scene {scene_id} has {count} frames, too few for "
                f"horizon {max_h}")

    fused_cache = {}
    with torch.no_grad():
        for scene_id, (first, count) in data.scene_rows.items():
            rows = slice(first, first + count)
            fused_cache[scene_id] = pipeline.fuse_inputs(
                data.views[rows], data.pillars[rows])

    cells = []
    for scene_id in data.scene_rows:
        for snr in snr_list:
            for variant in variants:
                for seed_idx in range(seeds):
                    for h in horizons:
                        cells.append((scene_id, snr, variant, seed_idx, h))

    def run(cell):
        scene_id, snr, variant, seed_idx, h = cell
        first, count = data.scene_rows[scene_id]
        cell_seed = derive_seed(base_seed, scene_id, f"{snr:g}", variant,
                                seed_idx, h)
        masks = data.masks[first:first + count]
        mean, frames, outage = _eval_cell(
            pipeline, fused_cache[scene_id], masks, variant, snr, h,
            cell_seed, threshold)
        return SweepRecord(scene_id=scene_id, snr_db=snr, variant=variant,
                           seed=seed_idx, horizon=h, iou=mean,
                           frames=frames, outage=outage)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(run, cells))
    else:
        records = [run(c) for c in cells]

    metadata = {
        "checkpoint_id": checkpoint_id,
        "config_hash": getattr(pipeline, "config_hash", None),
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "split": split,
        "threshold": threshold,
        "base_seed": base_seed,
        "axes": {
            "scenes": list(data.scene_rows),
            "snr_db": snr_list,
            "variants": variants,
            "seeds": seeds,
            "horizons": horizons,
        },
    }
    return SweepResult(records=records, metadata=metadata)
