"""Ingestion tests built around a hand-crafted miniature table set.

A fake dataset root (two scenes, nine samples, synthetic PCD blobs and tiny
JPEGs) exercises the whole loading path without the real download.  Tests
against the actual nuScenes-mini run only when BEVLINK_NUSCENES_ROOT points
at one.
"""

import json
import math
import os
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from bevlink.nuscenes import (
    CAMERA_CHANNELS,
    IngestionError,
    _annotation_velocity,
    _radar_to_ego,
    load_nuscenes_mini,
    mini_split,
    parse_radar_pcd,
    quaternion_rotation,
    quaternion_yaw,
    scene_frame_counts,
    split_counts,
)

MINI_ROOT = os.environ.get("BEVLINK_NUSCENES_ROOT", "")
needs_mini = pytest.mark.skipif(
    not (MINI_ROOT and (Path(MINI_ROOT) / "v1.0-mini").is_dir()),
    reason="set BEVLINK_NUSCENES_ROOT to a nuScenes-mini root")

ALL_CHANNELS = CAMERA_CHANNELS + ("RADAR_FRONT",)
# 90 degrees about z, as (w, x, y, z)
Q_YAW90 = [math.cos(math.pi / 4), 0.0, 0.0, math.sin(math.pi / 4)]
Q_IDENT = [1.0, 0.0, 0.0, 0.0]

RADAR_FIELDS = [("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                ("vx_comp", "<f4"), ("vy_comp", "<f4")]


def radar_records(rows):
    return np.array([tuple(r) for r in rows], dtype=RADAR_FIELDS)


def write_pcd(path, rows):
    n = len(rows)
    header = ("# .PCD v0.7 - Point Cloud Data file format\n"
              "VERSION 0.7\n"
              "FIELDS x y z vx_comp vy_comp\n"
              "SIZE 4 4 4 4 4\n"
              "TYPE F F F F F\n"
              "COUNT 1 1 1 1 1\n"
              f"WIDTH {n}\n"
              "HEIGHT 1\n"
              "VIEWPOINT 0 0 0 1 0 0 0\n"
              f"POINTS {n}\n").encode("ascii")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header + b"DATA binary\n" + radar_records(rows).tobytes())


def write_tables(root, tables):
    meta = root / "v1.0-mini"
    meta.mkdir(parents=True, exist_ok=True)
    for name in ("scene", "sample", "sample_data", "ego_pose",
                 "calibrated_sensor", "sensor", "sample_annotation",
                 "instance", "category"):
        (meta / f"{name}.json").write_text(json.dumps(tables.get(name, [])))


def counts_only_root(tmp, sizes):
    """Root with just enough metadata for the split arithmetic."""
    scenes, samples = [], []
    for name in sizes:
        scenes.append({"token": f"sc-{name}", "name": name,
                       "first_sample_token": f"{name}-0"})
        for i in range(sizes[name]):
            samples.append({"token": f"{name}-{i}", "scene_token": f"sc-{name}",
                            "timestamp": i, "next": ""})
    write_tables(tmp, {"scene": scenes, "sample": samples})
    return tmp


def build_full_root(root):
    """Two scenes with sensor files: scene-a moves a car, scene-b is posed.

    scene-a (5 samples): identity ego pose, one car driving +x at 2 m/s plus
    a pedestrian that the vehicle filter must drop.  scene-b (4 samples):
    ego translated to (100, 50) and yawed 90 degrees, one static car placed
    so its ego-frame position is (5, 0).  Radar extrinsics are a 90-degree
    yaw with offset (1, 0, 0.5) for every sample.
    """
    scenes = [
        {"token": "sc-a", "name": "scene-a", "first_sample_token": "sa0"},
        {"token": "sc-b", "name": "scene-b", "first_sample_token": "sb0"},
    ]
    sample_names = {"sc-a": [f"sa{i}" for i in range(5)],
                    "sc-b": [f"sb{i}" for i in range(4)]}
    samples, sample_data, ego_poses, anns = [], [], [], []
    for sc_token, names in sample_names.items():
        for i, tok in enumerate(names):
            nxt = names[i + 1] if i + 1 < len(names) else ""
            samples.append({"token": tok, "scene_token": sc_token,
                            "timestamp": 1_000_000_000 + i * 500_000,
                            "next": nxt})
            if sc_token == "sc-a":
                pose = {"rotation": Q_IDENT, "translation": [0.0, 0.0, 0.0]}
            else:
                pose = {"rotation": Q_YAW90,
                        "translation": [100.0, 50.0, 0.0]}
            ego_poses.append({"token": f"ep-{tok}", **pose})
            for ch in ALL_CHANNELS:
                ext = "pcd" if ch == "RADAR_FRONT" else "jpg"
                sample_data.append({
                    "token": f"sd-{tok}-{ch}", "sample_token": tok,
                    "calibrated_sensor_token": f"cs-{ch}",
                    "ego_pose_token": f"ep-{tok}",
                    "filename": f"samples/{ch}/{tok}.{ext}",
                    "is_key_frame": True,
                })
    # decoy sweep: non-keyframes must be ignored, so the missing file is fine
    sample_data.append({"token": "sd-decoy", "sample_token": "sa0",
                        "calibrated_sensor_token": "cs-CAM_FRONT",
                        "ego_pose_token": "ep-sa0",
                        "filename": "sweeps/CAM_FRONT/missing.jpg",
                        "is_key_frame": False})

    car_a = [f"ann-a{i}" for i in range(5)]
    for i, tok in enumerate(car_a):
        anns.append({"token": tok, "sample_token": f"sa{i}",
                     "instance_token": "inst-car-a",
                     "translation": [5.0 + 1.0 * i, 0.0, 0.0],
                     "size": [2.0, 4.5, 1.5], "rotation": Q_IDENT,
                     "prev": car_a[i - 1] if i else "",
                     "next": car_a[i + 1] if i + 1 < len(car_a) else ""})
    anns.append({"token": "ann-ped", "sample_token": "sa0",
                 "instance_token": "inst-ped",
                 "translation": [1.0, 1.0, 0.0],
                 "size": [0.5, 0.5, 1.8], "rotation": Q_IDENT,
                 "prev": "", "next": ""})
    car_b = [f"ann-b{i}" for i in range(4)]
    for i, tok in enumerate(car_b):
        # global (100, 55) with global yaw 90deg -> ego (5, 0) heading 0
        anns.append({"token": tok, "sample_token": f"sb{i}",
                     "instance_token": "inst-car-b",
                     "translation": [100.0, 55.0, 0.0],
                     "size": [2.0, 4.0, 1.4], "rotation": Q_YAW90,
                     "prev": car_b[i - 1] if i else "",
                     "next": car_b[i + 1] if i + 1 < len(car_b) else ""})

    tables = {
        "scene": scenes,
        "sample": samples,
        "sample_data": sample_data,
        "ego_pose": ego_poses,
        "calibrated_sensor": [
            {"token": f"cs-{ch}", "sensor_token": f"sen-{ch}",
             "rotation": Q_YAW90 if ch == "RADAR_FRONT" else Q_IDENT,
             "translation": ([1.0, 0.0, 0.5] if ch == "RADAR_FRONT"
                             else [0.0, 0.0, 0.0])}
            for ch in ALL_CHANNELS],
        "sensor": [{"token": f"sen-{ch}", "channel": ch}
                   for ch in ALL_CHANNELS],
        "sample_annotation": anns,
        "instance": [
            {"token": "inst-car-a", "category_token": "cat-car"},
            {"token": "inst-car-b", "category_token": "cat-car"},
            {"token": "inst-ped", "category_token": "cat-ped"},
        ],
        "category": [
            {"token": "cat-car", "name": "vehicle.car"},
            {"token": "cat-ped", "name": "human.pedestrian.adult"},
        ],
    }
    write_tables(root, tables)

    for sc_token, names in sample_names.items():
        for tok in names:
            for ch in CAMERA_CHANNELS:
                p = root / "samples" / ch / f"{tok}.jpg"
                p.parent.mkdir(parents=True, exist_ok=True)
                Image.new("RGB", (8, 8), (255, 128, 0)).save(p)
            write_pcd(root / "samples" / "RADAR_FRONT" / f"{tok}.pcd",
                      [(1.0, 2.0, 0.5, 3.0, 4.0)])
    return root


@pytest.fixture(scope="module")
def fake_root(tmp_path_factory):
    return build_full_root(tmp_path_factory.mktemp("nusc"))


def test_quaternion_rotation_identity():
    np.testing.assert_allclose(quaternion_rotation(Q_IDENT), np.eye(3))
    # normalization: scaling the quaternion changes nothing
    np.testing.assert_allclose(quaternion_rotation([3.0, 0, 0, 0]), np.eye(3))


def test_quaternion_rotation_yaw90():
    rot = quaternion_rotation(Q_YAW90)
    np.testing.assert_allclose(rot @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0],
                               atol=1e-12)
    np.testing.assert_allclose(rot @ [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0],
                               atol=1e-12)


@pytest.mark.parametrize("theta", [0.0, 0.3, -1.2, 2.0])
def test_quaternion_yaw_roundtrip(theta):
    q = [math.cos(theta / 2), 0.0, 0.0, math.sin(theta / 2)]
    assert quaternion_yaw(q) == pytest.approx(theta, abs=1e-12)


def test_parse_radar_pcd_roundtrip(tmp_path):
    rows = [(1.5, -2.0, 0.25, 3.0, -4.0), (0.0, 7.0, 1.0, -1.0, 2.5)]
    path = tmp_path / "cloud.pcd"
    write_pcd(path, rows)
    rec = parse_radar_pcd(path)
    assert rec.dtype.names == ("x", "y", "z", "vx_comp", "vy_comp")
    assert len(rec) == 2
    np.testing.assert_allclose(rec["y"], [-2.0, 7.0])
    np.testing.assert_allclose(rec["vy_comp"], [-4.0, 2.5])


def test_parse_radar_pcd_mixed_types(tmp_path):
    """Integer columns honour the declared widths."""
    header = ("FIELDS x id flag\n"
              "SIZE 4 2 1\n"
              "TYPE F I U\n"
              "POINTS 2\n").encode("ascii")
    payload = np.array([(1.0, -7, 200), (2.5, 300, 5)],
                       dtype=[("x", "<f4"), ("id", "<i2"), ("flag", "<u1")])
    path = tmp_path / "mixed.pcd"
    path.write_bytes(header + b"DATA binary\n" + payload.tobytes())
    rec = parse_radar_pcd(path)
    assert rec["id"].dtype == np.int16
    assert list(rec["id"]) == [-7, 300]
    assert list(rec["flag"]) == [200, 5]


def test_parse_radar_pcd_rejects_ascii(tmp_path):
    path = tmp_path / "ascii.pcd"
    path.write_text("FIELDS x\nSIZE 4\nTYPE F\nPOINTS 1\nDATA ascii\n1.0\n")
    with pytest.raises(IngestionError, match="not a binary PCD"):
        parse_radar_pcd(path)


def test_parse_radar_pcd_missing_header_key(tmp_path):
    path = tmp_path / "short.pcd"
    path.write_bytes(b"FIELDS x\nSIZE 4\nTYPE F\nDATA binary\n" + b"\0" * 4)
    with pytest.raises(IngestionError, match="POINTS"):
        parse_radar_pcd(path)


def test_radar_to_ego_identity():
    rec = radar_records([(1.0, 2.0, 0.5, 3.0, 4.0)])
    out = _radar_to_ego(rec, np.eye(3), np.zeros(3))
    assert out.shape == (1, 4)
    np.testing.assert_allclose(out[0, :3], [1.0, 2.0, 0.5])
    expected_vr = (3.0 * 1.0 + 4.0 * 2.0) / math.hypot(1.0, 2.0)
    assert out[0, 3] == pytest.approx(expected_vr)


def test_radar_to_ego_rotated_mount():
    rec = radar_records([(1.0, 2.0, 0.5, 3.0, 4.0)])
    rot = quaternion_rotation(Q_YAW90)
    out = _radar_to_ego(rec, rot, np.array([1.0, 0.0, 0.5]))
    np.testing.assert_allclose(out[0, :3], [-1.0, 1.0, 1.0], atol=1e-6)
    # velocity rotates but does not translate
    expected_vr = ((-4.0) * (-1.0) + 3.0 * 1.0) / math.hypot(1.0, 1.0)
    assert out[0, 3] == pytest.approx(expected_vr, rel=1e-6)


def test_radar_to_ego_empty_and_origin():
    empty = _radar_to_ego(radar_records([]), np.eye(3), np.zeros(3))
    assert empty.shape == (0, 4)
    origin = radar_records([(0.0, 0.0, 1.0, 5.0, 5.0)])
    out = _radar_to_ego(origin, np.eye(3), np.zeros(3))
    assert out[0, 3] == 0.0  # degenerate range clamps instead of dividing by 0


def test_annotation_velocity_central_and_one_sided():
    a0 = {"token": "a0", "prev": "", "next": "a1",
          "translation": [0.0, 0.0, 0.0]}
    a1 = {"token": "a1", "prev": "a0", "next": "a2",
          "translation": [1.0, 0.5, 0.0]}
    a2 = {"token": "a2", "prev": "a1", "next": "",
          "translation": [2.0, 1.0, 0.0]}
    by_token = {r["token"]: r for r in (a0, a1, a2)}
    np.testing.assert_allclose(_annotation_velocity(a1, by_token), [2.0, 1.0])
    np.testing.assert_allclose(_annotation_velocity(a0, by_token), [2.0, 1.0])
    np.testing.assert_allclose(_annotation_velocity(a2, by_token), [2.0, 1.0])


def test_annotation_velocity_isolated():
    lone = {"token": "x", "prev": "", "next": "", "translation": [9.0, 9.0, 0]}
    np.testing.assert_allclose(_annotation_velocity(lone, {}), [0.0, 0.0])
    # a dangling link degrades to the one-sided estimate
    a = {"token": "a", "prev": "gone", "next": "b",
         "translation": [0.0, 0.0, 0.0]}
    b = {"token": "b", "prev": "a", "next": "",
         "translation": [0.5, 0.0, 0.0]}
    np.testing.assert_allclose(
        _annotation_velocity(a, {"a": a, "b": b}), [1.0, 0.0])


def test_missing_metadata_errors(tmp_path):
    with pytest.raises(IngestionError, match="v1.0-mini"):
        scene_frame_counts(tmp_path)
    root = counts_only_root(tmp_path, {"solo": 4})
    (root / "v1.0-mini" / "category.json").unlink()
    with pytest.raises(IngestionError, match="category"):
        scene_frame_counts(root)


def test_malformed_table(tmp_path):
    root = counts_only_root(tmp_path, {"solo": 4})
    (root / "v1.0-mini" / "sample.json").write_text("{nope")
    with pytest.raises(IngestionError, match="malformed"):
        scene_frame_counts(root)


def test_scene_frame_counts(fake_root):
    assert scene_frame_counts(fake_root) == {"scene-a": 5, "scene-b": 4}


def test_mini_split_exact_subset(tmp_path):
    """Train is the exact 162-frame subset when one exists."""
    root = counts_only_root(
        tmp_path, {"alpha": 100, "beta": 22, "gamma": 40, "delta": 242})
    train, test = mini_split(root)
    assert train == ["alpha", "beta", "gamma"]
    assert test == ["delta"]
    assert split_counts(root) == {"total": 404, "train": 162, "test": 242}


def test_mini_split_fallback(fake_root):
    # 9 frames cannot hit 162, so the 40% fallback applies
    train, test = mini_split(fake_root)
    assert train == ["scene-a"]
    assert test == ["scene-b"]
    assert split_counts(fake_root) == {"total": 9, "train": 5, "test": 4}


def test_load_rejects_unknown_split(fake_root):
    with pytest.raises(ValueError, match="split"):
        load_nuscenes_mini(fake_root, "val")


def test_load_train_scene(fake_root):
    seqs = load_nuscenes_mini(fake_root, "train", image_size=16)
    assert len(seqs) == 1
    seq = seqs[0]
    assert seq.scene_id == "scene-a"
    assert seq.delta_t_s == 0.5
    assert [f.timestamp_s for f in seq.frames] == [0.0, 0.5, 1.0, 1.5, 2.0]
    frame = seq.frames[0]
    assert frame.camera_views.shape == (6, 16, 16, 3)
    assert frame.camera_views.dtype == np.float32
    # solid (255, 128, 0) image, so red stays ~1 through JPEG and resize
    assert frame.camera_views[0, :, :, 0].mean() == pytest.approx(1.0,
                                                                  abs=0.02)
    assert frame.camera_views.min() >= 0.0
    assert frame.camera_views.max() <= 1.0


def test_load_train_radar_and_vehicles(fake_root):
    seq = load_nuscenes_mini(fake_root, "train", image_size=16)[0]
    for i, frame in enumerate(seq.frames):
        # sensor point (1, 2) through the yawed, offset radar mount
        np.testing.assert_allclose(frame.radar_points,
                                   [[-1.0, 1.0, 1.0, 7.0 / math.sqrt(2.0)]],
                                   atol=1e-6)
        assert len(frame.vehicle_states) == 1  # pedestrian filtered out
        car = frame.vehicle_states[0]
        assert car.cx == pytest.approx(5.0 + 1.0 * i)
        assert car.cy == pytest.approx(0.0)
        assert car.heading == pytest.approx(0.0, abs=1e-9)
        assert (car.length, car.width) == (4.5, 2.0)
        # linear motion: central and one-sided differences agree
        assert car.vx == pytest.approx(2.0)
        assert car.vy == pytest.approx(0.0)
        assert frame.gt_mask.dtype == np.uint8
        assert frame.gt_mask.shape == (64, 64)
        assert frame.gt_mask.any()


def test_load_test_scene_ego_frame(fake_root):
    """A posed ego: global pose (100, 50, yaw 90) maps the car to (5, 0)."""
    seq = load_nuscenes_mini(fake_root, "test", image_size=16)[0]
    assert seq.scene_id == "scene-b"
    assert len(seq.frames) == 4
    car = seq.frames[1].vehicle_states[0]
    assert car.cx == pytest.approx(5.0, abs=1e-9)
    assert car.cy == pytest.approx(0.0, abs=1e-9)
    assert car.heading == pytest.approx(0.0, abs=1e-9)
    assert car.vx == pytest.approx(0.0, abs=1e-12)
    assert seq.frames[1].gt_mask.any()


def test_load_scene_names_filter(fake_root):
    assert load_nuscenes_mini(fake_root, "train",
                              scene_names=["scene-a"], image_size=16)
    with pytest.raises(ValueError, match="not in the train split"):
        load_nuscenes_mini(fake_root, "train", scene_names=["scene-b"])


def test_load_skips_missing_sensor_files(tmp_path):
    root = build_full_root(tmp_path)
    (root / "samples" / "CAM_BACK" / "sa2.jpg").unlink()
    with pytest.warns(UserWarning, match="skipped 1 samples"):
        seqs = load_nuscenes_mini(root, "train", image_size=16)
    assert [f.timestamp_s for f in seqs[0].frames] == [0.0, 0.5, 1.5, 2.0]
    # a second loss drops the scene below the 4-frame minimum entirely
    (root / "samples" / "RADAR_FRONT" / "sa4.pcd").unlink()
    with pytest.warns(UserWarning, match="skipped 2 samples"):
        assert load_nuscenes_mini(root, "train", image_size=16) == []


@needs_mini
def test_real_mini_split_counts():
    assert split_counts(MINI_ROOT) == {"total": 404, "train": 162,
                                       "test": 242}


@needs_mini
def test_real_mini_sample_composition():
    _, test = mini_split(MINI_ROOT)
    seqs = load_nuscenes_mini(MINI_ROOT, "test", image_size=64,
                              scene_names=[test[0]])
    assert seqs
    frame = seqs[0].frames[0]
    assert frame.camera_views.shape == (6, 64, 64, 3)
    assert frame.radar_points.ndim == 2 and frame.radar_points.shape[1] == 4
    assert any(len(f.radar_points) for f in seqs[0].frames)
