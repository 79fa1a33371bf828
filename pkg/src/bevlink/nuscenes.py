"""nuScenes-mini ingestion without the devkit.

Reads the metadata tables straight from their JSON files, parses the binary
radar PCD format, and converts everything into the same SceneSequence
structure the synthetic generator produces: per sample, 6 resized camera
images, one radar cloud in the ego frame, and a ground-truth mask rasterized
from the vehicle annotations.

The train split is the subset of scenes whose keyframe counts sum to exactly
162 (the remaining scenes, 242 keyframes, are the test split).  Scene names
are enumerated in sorted order so the subset choice is deterministic.
"""

import itertools
import json
import math
import warnings
from pathlib import Path

import numpy as np

from .grid import BevGridSpec
from .scenes import SceneFrame, SceneSequence, VehicleState, rasterize_vehicles

TABLE_DIR = "v1.0-mini"
TABLES = ("scene", "sample", "sample_data", "ego_pose", "calibrated_sensor",
          "sensor", "sample_annotation", "instance", "category")
CAMERA_CHANNELS = ("CAM_FRONT", "CAM_FRONT_RIGHT", "CAM_BACK_RIGHT",
                   "CAM_BACK", "CAM_BACK_LEFT", "CAM_FRONT_LEFT")
DEFAULT_RADAR = "RADAR_FRONT"
TRAIN_FRAME_TARGET = 162
KEYFRAME_DT_S = 0.5


class IngestionError(RuntimeError):
    pass


def _load_table(root: Path, name: str) -> list:
    path = root / TABLE_DIR / f"{name}.json"
    if not path.is_file():
        raise IngestionError(f"missing nuScenes table {name!r} (no {path})")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise IngestionError(f"malformed nuScenes table {name!r}: {e}") from e


def _load_tables(root) -> dict:
    root = Path(root)
    if not (root / TABLE_DIR).is_dir():
        raise IngestionError(
            f"no {TABLE_DIR}/ metadata directory under {root}")
    return {name: _load_table(root, name) for name in TABLES}


def quaternion_rotation(q) -> np.ndarray:
    """3x3 rotation matrix from a (w, x, y, z) quaternion."""
    w, x, y, z = (float(v) for v in q)
    n = math.sqrt(w * w + x * x + y * y + z * z)
    w, x, y, z = w / n, x / n, y / n, z / n
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quaternion_yaw(q) -> float:
    rot = quaternion_rotation(q)
    fwd = rot @ np.array([1.0, 0.0, 0.0])
    return math.atan2(fwd[1], fwd[0])


_PCD_DTYPES = {("F", 4): "<f4", ("F", 8): "<f8",
               ("I", 1): "<i1", ("I", 2): "<i2", ("I", 4): "<i4",
               ("U", 1): "<u1", ("U", 2): "<u2", ("U", 4): "<u4"}


def parse_radar_pcd(path) -> np.ndarray:
    """Structured array from a binary PCD file (one row per return)."""
    blob = Path(path).read_bytes()
    header_end = blob.find(b"DATA binary\n")
    if header_end < 0:
        raise IngestionError(f"{path}: not a binary PCD file")
    header = {}
    for line in blob[:header_end].decode("ascii", "replace").splitlines():
        if line.startswith("#") or " " not in line:
            continue
        key, _, rest = line.partition(" ")
        header[key] = rest.split()
    try:
        fields = header["FIELDS"]
        sizes = [int(s) for s in header["SIZE"]]
        types = header["TYPE"]
        count = int(header["POINTS"][0])
    except KeyError as e:
        raise IngestionError(f"{path}: PCD header lacks {e}") from e
    dtype = np.dtype([(f, _PCD_DTYPES[(t, s)])
                      for f, t, s in zip(fields, types, sizes)])
    payload = blob[header_end + len(b"DATA binary\n"):]
    return np.frombuffer(payload, dtype=dtype, count=count)


def _radar_to_ego(records, rotation, translation) -> np.ndarray:
    """(N, 4) x, y, z, radial velocity rows in the ego frame."""
    if len(records) == 0:
        return np.zeros((0, 4), dtype=np.float64)
    pts = np.stack([records["x"], records["y"], records["z"]], axis=1)
    pts = pts.astype(np.float64) @ rotation.T + translation
    vel = np.stack([records["vx_comp"], records["vy_comp"],
                    np.zeros(len(records))], axis=1) @ rotation.T
    rng_xy = np.hypot(pts[:, 0], pts[:, 1])
    rng_xy[rng_xy < 1e-9] = 1.0
    vr = (vel[:, 0] * pts[:, 0] + vel[:, 1] * pts[:, 1]) / rng_xy
    return np.concatenate([pts, vr[:, None]], axis=1)


def _index(rows, key="token") -> dict:
    return {r[key]: r for r in rows}


def _sample_data_index(tables) -> dict:
    """sample_token -> {channel: sample_data row}, keyframes only."""
    sensors = _index(tables["sensor"])
    calib = _index(tables["calibrated_sensor"])
    out = {}
    for sd in tables["sample_data"]:
        if not sd["is_key_frame"]:
            continue
        channel = sensors[calib[sd["calibrated_sensor_token"]]["sensor_token"]]["channel"]
        out.setdefault(sd["sample_token"], {})[channel] = sd
    return out


def scene_frame_counts(root) -> dict:
    """Keyframes per scene name, counted from the sample table."""
    tables = _load_tables(root)
    names = {s["token"]: s["name"] for s in tables["scene"]}
    counts = {name: 0 for name in names.values()}
    for sample in tables["sample"]:
        counts[names[sample["scene_token"]]] += 1
    return counts


def mini_split(root):
    """(train_scenes, test_scenes): train is the subset summing to 162 frames."""
    counts = scene_frame_counts(root)
    names = sorted(counts)
    for size in range(1, len(names)):
        for combo in itertools.combinations(names, size):
            if sum(counts[n] for n in combo) == TRAIN_FRAME_TARGET:
                train = list(combo)
                return train, [n for n in names if n not in combo]
    # No exact subset (non-standard data): put ~40% of frames in train.
    total = sum(counts.values())
    train, acc = [], 0
    for name in names:
        if acc >= 0.4 * total:
            break
        train.append(name)
        acc += counts[name]
    return train, [n for n in names if n not in train]


def split_counts(root) -> dict:
    """Frame totals {"total", "train", "test"} without reading sensor files."""
    counts = scene_frame_counts(root)
    train, test = mini_split(root)
    return {"total": sum(counts.values()),
            "train": sum(counts[n] for n in train),
            "test": sum(counts[n] for n in test)}


def _annotation_velocity(ann, anns_by_token) -> np.ndarray:
    """Finite-difference global velocity of one annotation, m/s."""
    prev = anns_by_token.get(ann["prev"]) if ann["prev"] else None
    nxt = anns_by_token.get(ann["next"]) if ann["next"] else None
    first, last = prev or ann, nxt or ann
    if first is last:
        return np.zeros(2)
    p0 = np.asarray(first["translation"][:2], dtype=np.float64)
    p1 = np.asarray(last["translation"][:2], dtype=np.float64)
    steps = (1 if first is ann or last is ann else 2)
    return (p1 - p0) / (steps * KEYFRAME_DT_S)


def _vehicles_in_ego(sample_token, tables, indexes, ego_rot_inv, ego_t,
                     ego_yaw) -> list:
    categories = indexes["category"]
    instances = indexes["instance"]
    vehicles = []
    for ann in indexes["anns_by_sample"].get(sample_token, ()):
        cat = categories[instances[ann["instance_token"]]["category_token"]]
        if not cat["name"].startswith("vehicle."):
            continue
        center = ego_rot_inv @ (np.asarray(ann["translation"]) - ego_t)
        width, length, _height = ann["size"]
        yaw = quaternion_yaw(ann["rotation"]) - ego_yaw
        v_global = _annotation_velocity(ann, indexes["anns_by_token"])
        v_ego = ego_rot_inv[:2, :2] @ v_global
        vehicles.append(VehicleState(
            cx=float(center[0]), cy=float(center[1]), heading=float(yaw),
            length=float(length), width=float(width),
            vx=float(v_ego[0]), vy=float(v_ego[1])))
    return vehicles


def _load_image(path, image_size: int) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        img = img.convert("RGB").resize((image_size, image_size),
                                        Image.BILINEAR)
        return np.asarray(img, dtype=np.float32) / 255.0


def load_nuscenes_mini(root, split: str, grid: BevGridSpec = None,
                       image_size: int = 128,
                       radar_channel: str = DEFAULT_RADAR,
                       scene_names=None) -> list:
    """SceneSequence list for one split of the mini set.

    `scene_names` restricts loading to those scenes (still within the split);
    samples whose image or radar files are missing are skipped, with one
    warning giving the count.
    """
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    root = Path(root)
    tables = _load_tables(root)
    grid = grid if grid is not None else BevGridSpec()

    by_channel = _sample_data_index(tables)
    ego_poses = _index(tables["ego_pose"])
    calib = _index(tables["calibrated_sensor"])
    anns_by_sample = {}
    for ann in tables["sample_annotation"]:
        anns_by_sample.setdefault(ann["sample_token"], []).append(ann)
    indexes = {
        "category": _index(tables["category"]),
        "instance": _index(tables["instance"]),
        "anns_by_sample": anns_by_sample,
        "anns_by_token": _index(tables["sample_annotation"]),
    }
    samples = _index(tables["sample"])

    train_scenes, test_scenes = mini_split(root)
    chosen = train_scenes if split == "train" else test_scenes
    if scene_names is not None:
        unknown = set(scene_names) - set(chosen)
        if unknown:
            raise ValueError(
                f"scenes {sorted(unknown)} are not in the {split} split")
        chosen = [n for n in chosen if n in set(scene_names)]

    sequences = []
    skipped = 0
    for scene in sorted(tables["scene"], key=lambda s: s["name"]):
        if scene["name"] not in chosen:
            continue
        frames = []
        t0 = None
        token = scene["first_sample_token"]
        frame_id = 0
        while token:
            sample = samples[token]
            token = sample["next"]
            channels = by_channel.get(sample["token"], {})
            needed = CAMERA_CHANNELS + (radar_channel,)
            if any(ch not in channels for ch in needed):
                skipped += 1
                continue
            paths = {ch: root / channels[ch]["filename"] for ch in needed}
            if any(not p.is_file() for p in paths.values()):
                skipped += 1
                continue

            radar_sd = channels[radar_channel]
            radar_calib = calib[radar_sd["calibrated_sensor_token"]]
            records = parse_radar_pcd(paths[radar_channel])
            radar = _radar_to_ego(
                records, quaternion_rotation(radar_calib["rotation"]),
                np.asarray(radar_calib["translation"], dtype=np.float64))
            in_grid = ((radar[:, 0] >= grid.extent_m[0])
                       & (radar[:, 0] <= grid.extent_m[1])
                       & (radar[:, 1] >= grid.extent_m[2])
                       & (radar[:, 1] <= grid.extent_m[3]))
            radar = radar[in_grid].astype(np.float64)

            pose = ego_poses[radar_sd["ego_pose_token"]]
            ego_rot_inv = quaternion_rotation(pose["rotation"]).T
            ego_t = np.asarray(pose["translation"], dtype=np.float64)
            ego_yaw = quaternion_yaw(pose["rotation"])
            vehicles = _vehicles_in_ego(sample["token"], tables, indexes,
                                        ego_rot_inv, ego_t, ego_yaw)

            views = np.stack([_load_image(paths[ch], image_size)
                              for ch in CAMERA_CHANNELS])
            if t0 is None:
                t0 = sample["timestamp"]
            frames.append(SceneFrame(
                frame_id=frame_id,
                timestamp_s=(sample["timestamp"] - t0) * 1e-6,
                camera_views=views,
                radar_points=radar,
                gt_mask=rasterize_vehicles(vehicles, grid),
                vehicle_states=vehicles))
            frame_id += 1
        if len(frames) >= 4:
            sequences.append(SceneSequence(
                scene_id=scene["name"], frames=frames,
                delta_t_s=KEYFRAME_DT_S))
    if skipped:
        warnings.warn(f"skipped {skipped} samples with missing sensor data")
    return sequences
