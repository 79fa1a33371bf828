"""Shared fixtures: a tiny trained pipeline reused across test modules.

The tiny setup (32x32 grid, 32px images, two epochs) exists to exercise
contracts quickly.  The acceptance suite builds its own full-size
checkpoints and caches them under .cache/.
"""

import pytest

from bevlink.config import load_config, validate_config
from bevlink.dataset_io import SceneDataset
from bevlink.grid import BevGridSpec
from bevlink.scenes import DELTA_T_S, SceneParams, generate_sequence
from bevlink.training import train

TINY_GRID = BevGridSpec(extent_m=(-16.0, 16.0, -16.0, 16.0), resolution=32)


def tiny_raw():
    raw = load_config(None).as_dict()
    raw["data"].update({"grid_size": 32, "extent_m": 16.0, "image_size": 32,
                        "n_frames": 4,
                        "train_scenes": {"A": 1, "probe": 1},
                        "test_scenes": {"A": 1, "probe": 1}})
    raw["diffusion"].update({"steps": 25, "base": 8})
    raw["train"].update({"epochs_stage1": 2, "epochs_stage2": 2,
                         "epochs_stage3": 2, "batch_size": 4})
    return raw


@pytest.fixture(scope="session")
def tiny_config():
    return validate_config(tiny_raw())


@pytest.fixture(scope="session")
def dataset():
    seqs, splits, styles = [], {}, {}
    plan = [("A", "train"), ("probe", "train"), ("A", "test"),
            ("probe", "test")]
    for i, (style, split) in enumerate(plan):
        params = SceneParams.from_style(style, n_frames=4, image_size=32)
        seq = generate_sequence(100 + i, params, TINY_GRID)
        seq.scene_id = f"{style}-{i}"
        seqs.append(seq)
        splits[seq.scene_id] = split
        styles[seq.scene_id] = style
    return SceneDataset(TINY_GRID, DELTA_T_S, seqs, splits, styles)


@pytest.fixture(scope="session")
def ck1(tiny_config, dataset):
    _, ck = train(1, tiny_config, dataset, seed=0)
    return ck


@pytest.fixture(scope="session")
def ck2(tiny_config, dataset, ck1):
    _, ck = train(2, tiny_config, dataset, prev=ck1, seed=0)
    return ck


@pytest.fixture(scope="session")
def ck3(tiny_config, dataset, ck2):
    _, ck = train(3, tiny_config, dataset, prev=ck2, seed=0)
    return ck
