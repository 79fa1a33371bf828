"""Command-line entry point.

Subcommands: dataset, train, eval, predict, report.  Every run writes its
artifacts into one output directory together with the fully defaulted
config snapshot and its hash; an existing non-empty directory is refused
unless --force is given (report is the exception: it adds derived views
to an existing sweep directory).  The default output root comes from
BEVLINK_OUT_ROOT when --out is omitted.
"""

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch

from .config import ConfigError, load_config
from .dataset_io import DatasetError, load_dataset, save_dataset
from .grid import BevGridSpec
from .rng import derive_seed
from .scenes import STYLE_PRESETS, SceneParams, generate_sequence

OUT_ROOT_ENV = "BEVLINK_OUT_ROOT"


class CliError(RuntimeError):
    pass


def _resolve_out(arg_out, command: str) -> Path:
    if arg_out:
        return Path(arg_out)
    root = os.environ.get(OUT_ROOT_ENV)
    if not root:
        raise CliError(
            f"no --out given and {OUT_ROOT_ENV} is not set")
    return Path(root) / command


def _prepare_out(path: Path, force: bool) -> Path:
    if path.exists() and any(path.iterdir()):
        if not force:
            raise CliError(
                f"output directory {path} is not empty; pass --force to reuse")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _snapshot_config(config, out: Path):
    (out / "config.yaml").write_text(config.to_yaml())
    (out / "config_hash.txt").write_text(config.hash() + "\n")


def _parse_num_list(text, cast=float):
    return [cast(tok) for tok in str(text).split(",") if tok.strip() != ""]


# --- dataset --------------------------------------------------------------


def _scene_plan(config, num_scenes, style):
    """(style, split) per scene to generate, deterministic order."""
    data = config["data"]
    if num_scenes is None and style is None:
        plan = []
        for name in sorted(data["train_scenes"]):
            plan += [(name, "train")] * data["train_scenes"][name]
        for name in sorted(data["test_scenes"]):
            plan += [(name, "test")] * data["test_scenes"][name]
        return plan
    n = num_scenes if num_scenes is not None else \
        sum(data["train_scenes"].values()) + sum(data["test_scenes"].values())
    if style is not None:
        styles = [style]
    else:
        styles = sorted(set(data["train_scenes"]) | set(data["test_scenes"]))
    n_train = max(1, round(0.6 * n)) if n > 1 else 1
    plan = []
    for i in range(n):
        plan.append((styles[i % len(styles)],
                     "train" if i < n_train else "test"))
    return plan


def _cmd_dataset(args) -> int:
    if args.dataset_cmd != "synth":
        raise CliError(f"unknown dataset subcommand {args.dataset_cmd!r}")
    config = load_config(args.config)
    data = config["data"]
    grid_size = args.grid_size or data["grid_size"]
    e = data["extent_m"]
    grid = BevGridSpec(extent_m=(-e, e, -e, e), resolution=grid_size)
    seed = args.seed if args.seed is not None else data["seed"]
    out = _prepare_out(_resolve_out(args.out, "dataset"), args.force)

    plan = _scene_plan(config, args.num_scenes, args.style)
    sequences, splits, styles, seeds = [], {}, {}, {}
    for i, (style, split) in enumerate(plan):
        scene_seed = derive_seed(seed, "scene", i)
        params = SceneParams.from_style(
            style, n_frames=data["n_frames"], num_views=data["num_views"],
            image_size=data["image_size"])
        seq = generate_sequence(scene_seed, params, grid)
        seq.scene_id = f"{style}-{i:03d}"
        sequences.append(seq)
        splits[seq.scene_id] = split
        styles[seq.scene_id] = style
        seeds[seq.scene_id] = scene_seed
    save_dataset(sequences, out, grid, splits=splits, styles=styles,
                 seeds=seeds)
    _snapshot_config(config, out)
    print(f"wrote {len(sequences)} sequences to {out}")
    return 0


# --- train ----------------------------------------------------------------


def _cmd_train(args) -> int:
    from .training import load_checkpoint, save_checkpoint, train

    config = load_config(args.config)
    if args.finetune_all:
        raw = config.as_dict()
        raw["train"]["finetune_all"] = True
        from .config import validate_config
        config = validate_config(raw)
    dataset = load_dataset(args.data)
    prev = load_checkpoint(args.resume) if args.resume else None
    out = _prepare_out(_resolve_out(args.out, f"train-stage{args.stage}"),
                       args.force)
    _, ckpt = train(args.stage, config, dataset, prev=prev, seed=args.seed)
    path = save_checkpoint(ckpt, out / f"stage{args.stage}.pt")
    (out / "metrics.json").write_text(
        json.dumps(ckpt["metrics"], indent=2, sort_keys=True) + "\n")
    _snapshot_config(config, out)
    print(f"stage {args.stage} checkpoint: {path}")
    return 0


# --- eval -----------------------------------------------------------------


def _checkpoint_id(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:12]


def _load_for_eval(ckpt_path, data_dir):
    from .training import load_checkpoint, restore_pipeline

    ckpt = load_checkpoint(ckpt_path)
    pipeline, config = restore_pipeline(ckpt)
    dataset = load_dataset(data_dir)
    if dataset.grid != pipeline.grid:
        raise CliError(
            f"dataset grid {dataset.grid} does not match the checkpoint's "
            f"grid {pipeline.grid}")
    return ckpt, pipeline, config, dataset


def _cmd_eval(args) -> int:
    from .report import emit_report, save_mask_panel
    from .sweep import snr_sweep

    if args.eval_cmd != "sweep":
        raise CliError(f"unknown eval subcommand {args.eval_cmd!r}")
    ckpt, pipeline, config, dataset = _load_for_eval(args.ckpt, args.data)
    torch.set_num_threads(config["train"]["threads"])
    ev = config["eval"]
    snr_list = _parse_num_list(args.snr) if args.snr else config["channel"]["snr_db"]
    variants = (args.variants.split(",") if args.variants else ev["variants"])
    seeds = args.seeds if args.seeds is not None else ev["seeds"]
    horizons = (_parse_num_list(args.horizons, int) if args.horizons
                else ev["horizons"])
    out = _prepare_out(_resolve_out(args.out, "sweep"), args.force)

    result = snr_sweep(
        ckpt, dataset, snr_list, variants=variants, seeds=seeds,
        horizons=horizons, base_seed=ev["base_seed"],
        threshold=ev["threshold"], jobs=args.jobs or ev["jobs"],
        checkpoint_id=_checkpoint_id(Path(args.ckpt)))
    (out / "records.json").write_text(result.to_json() + "\n")
    emit_report(result, out)
    _snapshot_config(config, out)

    if args.panels:
        panels = _build_panels(pipeline, dataset, min(snr_list),
                               base_seed=ev["base_seed"],
                               with_diffusion=ckpt["stage"] >= 3)
        save_mask_panel(panels, out / "panels.png")
    print(f"sweep: {len(result.records)} records -> {out}")
    return 0


def _build_panels(pipeline, dataset, snr_db, base_seed, with_diffusion,
                  max_scenes: int = 3):
    from .training import split_tensors

    data = split_tensors(dataset, "test")
    panels = []
    with torch.no_grad():
        for scene_id, (first, count) in list(data.scene_rows.items())[:max_scenes]:
            mid = first + count // 2
            fused = pipeline.fuse_inputs(data.views[mid:mid + 1],
                                         data.pillars[mid:mid + 1])
            probs = pipeline.run_awgn(
                fused, snr_db, derive_seed(base_seed, "panel", scene_id))
            refined = probs
            if with_diffusion:
                refined = pipeline.refine(
                    probs, 0, derive_seed(base_seed, "panelref", scene_id))
            panels.append((probs[0].numpy(), refined[0].numpy(),
                           data.masks[mid].numpy()))
    return panels


# --- predict --------------------------------------------------------------


def _cmd_predict(args) -> int:
    from .report import save_horizon_strip
    from .training import CheckpointError, split_tensors

    ckpt, pipeline, config, dataset = _load_for_eval(args.ckpt, args.data)
    torch.set_num_threads(config["train"]["threads"])
    if ckpt["stage"] < 3:
        raise CheckpointError("predict needs a stage-3 checkpoint")
    horizons = _parse_num_list(args.horizons, int)
    for h in horizons:
        if h not in (0, 1, 2, 3):
            raise CliError(f"horizon must be in {{0..3}}, got {h}")
    data = split_tensors(dataset, args.split)
    scene = args.scene or next(iter(data.scene_rows))
    if scene not in data.scene_rows:
        raise CliError(f"scene {scene!r} not in split {args.split!r}")
    first, count = data.scene_rows[scene]
    if not 0 <= args.frame < count:
        raise CliError(f"frame must be in [0, {count}), got {args.frame}")
    out = _prepare_out(_resolve_out(args.out, "predict"), args.force)

    row = first + args.frame
    with torch.no_grad():
        fused = pipeline.fuse_inputs(data.views[row:row + 1],
                                     data.pillars[row:row + 1])
        if args.snr is None:
            cond = pipeline.run_lossless(fused)[0]
        else:
            cond = pipeline.run_awgn(
                fused, args.snr, derive_seed(args.seed, "cond", scene))[0]
        preds, gts = {}, {}
        for h in horizons:
            preds[h] = pipeline.refine(
                cond, h, derive_seed(args.seed, "predict", scene, h)).numpy()
            if args.frame + h < count:
                gts[h] = data.masks[row + h].numpy()
            else:
                gts[h] = np.zeros_like(preds[h])
    save_horizon_strip([preds, gts], out / "horizons.png",
                       row_labels=["predicted", "truth"])
    np.savez(out / "predictions.npz",
             condition=cond.numpy(),
             **{f"pred_h{h}": preds[h] for h in horizons},
             **{f"gt_h{h}": gts[h] for h in horizons})
    _snapshot_config(config, out)
    print(f"prediction strip for {scene} frame {args.frame}: {out}")
    return 0


# --- report ---------------------------------------------------------------


def _cmd_report(args) -> int:
    from .report import emit_report
    from .sweep import SweepResult

    src = Path(args.sweep)
    records = src if src.is_file() else src / "records.json"
    if not records.is_file():
        raise CliError(f"no records.json under {src}")
    result = SweepResult.from_json(records.read_text())
    out = Path(args.out) if args.out else records.parent
    out.mkdir(parents=True, exist_ok=True)
    written = emit_report(result, out)
    print("report: " + ", ".join(str(p) for p in written.values()))
    return 0


# --- parser ---------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="bevlink",
        description="BEV semantic transmission testbed: synthetic scenes, "
                    "split training, SNR sweeps, diffusion refinement.")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("dataset", help="generate or manage datasets")
    dsub = d.add_subparsers(dest="dataset_cmd", required=True)
    synth = dsub.add_parser("synth", help="generate a synthetic dataset")
    synth.add_argument("--config")
    synth.add_argument("--seed", type=int)
    synth.add_argument("--num-scenes", type=int)
    synth.add_argument("--style", choices=sorted(STYLE_PRESETS))
    synth.add_argument("--grid-size", type=int)
    synth.add_argument("--out")
    synth.add_argument("--force", action="store_true")
    synth.set_defaults(func=_cmd_dataset)

    t = sub.add_parser("train", help="run one training stage")
    t.add_argument("--stage", type=int, required=True, choices=(1, 2, 3))
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--resume")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--finetune-all", action="store_true")
    t.add_argument("--out")
    t.add_argument("--force", action="store_true")
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    esub = e.add_subparsers(dest="eval_cmd", required=True)
    sw = esub.add_parser("sweep", help="IoU over the SNR grid")
    sw.add_argument("--ckpt", required=True)
    sw.add_argument("--data", required=True)
    sw.add_argument("--snr", help="comma-separated dB values")
    sw.add_argument("--variants", help="comma-separated variant names")
    sw.add_argument("--seeds", type=int)
    sw.add_argument("--horizons", help="comma-separated horizons")
    sw.add_argument("--jobs", type=int)
    sw.add_argument("--panels", action="store_true")
    sw.add_argument("--out")
    sw.add_argument("--force", action="store_true")
    sw.set_defaults(func=_cmd_eval)

    pr = sub.add_parser("predict", help="diffusion forecasts for one frame")
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--scene")
    pr.add_argument("--frame", type=int, default=0)
    pr.add_argument("--horizons", default="1,2,3")
    pr.add_argument("--snr", type=float)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--split", default="test")
    pr.add_argument("--out")
    pr.add_argument("--force", action="store_true")
    pr.set_defaults(func=_cmd_predict)

    r = sub.add_parser("report", help="CSV + plots from sweep records")
    r.add_argument("--sweep", required=True,
                   help="sweep output dir or records.json")
    r.add_argument("--out")
    r.set_defaults(func=_cmd_report)
    return p


def run_command(argv=None) -> int:
    """Dispatch one CLI invocation; returns the process exit status."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    from .training import CheckpointError

    try:
        return args.func(args)
    except (CliError, ConfigError, DatasetError, CheckpointError,
            NotImplementedError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command())
