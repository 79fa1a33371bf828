"""On-disk layout for scene datasets: one manifest, one npz per sequence.

The manifest is the source of truth for split membership and grid geometry;
the npz files hold the heavy arrays.  Variable-length per-frame data (radar
clouds, vehicle states) is stored flattened with offset tables.
"""

import json
from pathlib import Path

import numpy as np

from .grid import BevGridSpec
from .scenes import SceneFrame, SceneSequence, VehicleState

MANIFEST_NAME = "manifest.json"
FORMAT_VERSION = 1

# columns of the flattened vehicle-state array
_VEH_FIELDS = ("cx", "cy", "heading", "length", "width", "vx", "vy")


class DatasetError(Exception):
    pass


class SceneDataset:
    """Loaded dataset: sequences plus the geometry they were built on."""

    def __init__(self, grid: BevGridSpec, delta_t_s: float,
                 sequences, splits, styles):
        self.grid = grid
        self.delta_t_s = delta_t_s
        self.sequences = list(sequences)
        self._splits = dict(splits)  # scene_id -> split name
        self._styles = dict(styles)  # scene_id -> style name

    def split(self, name: str):
        return [s for s in self.sequences if self._splits.get(s.scene_id) == name]

    def split_of(self, scene_id: str) -> str:
        return self._splits[scene_id]

    def style_of(self, scene_id: str) -> str:
        return self._styles[scene_id]

    def __len__(self):
        return len(self.sequences)


def save_dataset(sequences, out_dir, grid: BevGridSpec,
                 splits=None, styles=None, seeds=None) -> Path:
    """Write sequences + manifest under out_dir; returns the manifest path.

    splits/styles/seeds map scene_id to a split name ("train"/"test"), a
    style label and the generation seed; missing entries default to
    "train" / "unknown" / None.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    splits = splits or {}
    styles = styles or {}
    seeds = seeds or {}
    entries = []
    delta = None
    for seq in sequences:
        if delta is None:
            delta = seq.delta_t_s
        elif delta != seq.delta_t_s:
            raise DatasetError("sequences disagree on frame spacing")
        fname = f"{seq.scene_id}.npz"
        _save_sequence(seq, out / fname)
        entries.append({
            "scene_id": seq.scene_id,
            "file": fname,
            "n_frames": len(seq.frames),
            "split": splits.get(seq.scene_id, "train"),
            "style": styles.get(seq.scene_id, "unknown"),
            "seed": seeds.get(seq.scene_id),
        })
    manifest = {
        "format": FORMAT_VERSION,
        "delta_t_s": delta if delta is not None else 1.0,
        "grid": {"extent_m": list(grid.extent_m), "resolution": grid.resolution},
        "sequences": entries,
    }
    path = out / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _save_sequence(seq: SceneSequence, path: Path):
    frames = seq.frames
    radar = [np.asarray(f.radar_points, dtype=np.float64).reshape(-1, 4)
             for f in frames]
    veh = [np.array([[getattr(s, k) for k in _VEH_FIELDS]
                     for s in f.vehicle_states], dtype=np.float64).reshape(-1, 7)
           for f in frames]
    np.savez(
        path,
        timestamps=np.array([f.timestamp_s for f in frames]),
        camera_views=np.stack([f.camera_views for f in frames]),
        gt_masks=np.stack([f.gt_mask for f in frames]),
        radar_flat=np.concatenate(radar) if radar else np.zeros((0, 4)),
        radar_offsets=np.cumsum([0] + [r.shape[0] for r in radar]),
        vehicles_flat=np.concatenate(veh) if veh else np.zeros((0, 7)),
        vehicle_offsets=np.cumsum([0] + [v.shape[0] for v in veh]),
    )


def _load_sequence(scene_id: str, path: Path, delta_t_s: float) -> SceneSequence:
    with np.load(path) as z:
        ts = z["timestamps"]
        views = z["camera_views"]
        masks = z["gt_masks"]
        radar_flat, r_off = z["radar_flat"], z["radar_offsets"]
        veh_flat, v_off = z["vehicles_flat"], z["vehicle_offsets"]
    frames = []
    for i in range(ts.shape[0]):
        states = [VehicleState(**dict(zip(_VEH_FIELDS, row)))
                  for row in veh_flat[v_off[i]:v_off[i + 1]]]
        frames.append(SceneFrame(
            frame_id=i,
            timestamp_s=float(ts[i]),
            camera_views=views[i],
            radar_points=radar_flat[r_off[i]:r_off[i + 1]],
            gt_mask=masks[i],
            vehicle_states=states,
        ))
    return SceneSequence(scene_id=scene_id, frames=frames, delta_t_s=delta_t_s)


def load_dataset(dataset_dir) -> SceneDataset:
    root = Path(dataset_dir)
    mpath = root / MANIFEST_NAME
    if not mpath.is_file():
        raise DatasetError(f"no {MANIFEST_NAME} in {root}")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"corrupt {MANIFEST_NAME} in {root}: {exc}") from exc
    if manifest.get("format") != FORMAT_VERSION:
        raise DatasetError(
            f"unsupported dataset format {manifest.get('format')!r}"
        )
    g = manifest["grid"]
    grid = BevGridSpec(extent_m=tuple(g["extent_m"]), resolution=g["resolution"])
    delta = float(manifest["delta_t_s"])
    seqs, splits, styles = [], {}, {}
    for entry in manifest["sequences"]:
        fpath = root / entry["file"]
        if not fpath.is_file():
            raise DatasetError(f"missing sequence file {fpath}")
        seq = _load_sequence(entry["scene_id"], fpath, delta)
        if len(seq.frames) != entry["n_frames"]:
            raise DatasetError(
                f"{entry['scene_id']}: manifest says {entry['n_frames']} "
                f"frames, file has {len(seq.frames)}"
            )
        seqs.append(seq)
        splits[seq.scene_id] = entry["split"]
        styles[seq.scene_id] = entry["style"]
    return SceneDataset(grid, delta, seqs, splits, styles)
