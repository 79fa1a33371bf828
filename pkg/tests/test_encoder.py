"""Feature extraction, BEV lifting and fusion."""

import numpy as np
import pytest
import torch
from scipy.ndimage import map_coordinates

from bevlink.bev_projection import (GroundPlaneProjector,
                                    build_sampling_tables,
                                    project_features_numpy)
from bevlink.cameras import default_rig
from bevlink.encoder import (BACKBONES, BevFeatureMap, FusionEncoder,
                             FusionStrategy, extract_image_features, fuse,
                             make_backbone, pillar_features)
from bevlink.grid import BevGridSpec

GRID16 = BevGridSpec(extent_m=(-16.0, 16.0, -16.0, 16.0), resolution=16)


@pytest.fixture(scope="module")
def rig():
    return default_rig(image_size=32)


@pytest.fixture(scope="module")
def tables(rig):
    return build_sampling_tables(rig, GRID16)


# --- projection -----------------------------------------------------------


@pytest.mark.parametrize("reduce", ["mean", "max"])
def test_projection_torch_matches_numpy(rig, reduce):
    torch.manual_seed(0)
    feats = torch.randn(2, rig.num_views, 5, 4, 4)
    proj = GroundPlaneProjector(rig, GRID16, reduce=reduce)
    with torch.no_grad():
        out_t = proj(feats).numpy()
    coords, visible = build_sampling_tables(rig, GRID16)
    for b in range(2):
        out_n = project_features_numpy(feats[b].numpy(), coords, visible,
                                       reduce=reduce)
        np.testing.assert_allclose(out_t[b], out_n, atol=1e-4)


def test_numpy_projection_matches_scipy_sampling(rig, tables):
    # independent check of the bilinear sampler itself, one view at a time
    coords, visible = tables
    rng = np.random.default_rng(1)
    feats = rng.normal(size=(rig.num_views, 3, 6, 6))
    hf = wf = 6
    acc = np.zeros((3, 16, 16))
    count = np.zeros((16, 16))
    for k in range(rig.num_views):
        fx = (coords[k, ..., 0] + 1.0) * 0.5 * (wf - 1)
        fy = (coords[k, ..., 1] + 1.0) * 0.5 * (hf - 1)
        sample = np.stack([
            map_coordinates(feats[k, c], [fy.ravel(), fx.ravel()],
                            order=1, mode="nearest").reshape(16, 16)
            for c in range(3)
        ])
        acc += sample * visible[k]
        count += visible[k]
    expect = acc / np.maximum(count, 1.0)
    got = project_features_numpy(feats, coords, visible, reduce="mean")
    np.testing.assert_allclose(got, expect, atol=1e-10)


def test_projection_constant_ones_recovers_visibility(rig, tables):
    # bilinear weights sum to 1, so constant input stays constant where
    # any camera sees the cell and exactly zero elsewhere
    coords, visible = tables
    feats = torch.ones(1, rig.num_views, 2, 4, 4)
    proj = GroundPlaneProjector(rig, GRID16, reduce="mean")
    with torch.no_grad():
        out = proj(feats)[0, 0].numpy()
    seen = visible.any(axis=0)
    np.testing.assert_allclose(out[seen], 1.0, atol=1e-6)
    assert (out[~seen] == 0.0).all()


def test_projection_rejects_view_count_mismatch(rig):
    proj = GroundPlaneProjector(rig, GRID16)
    with pytest.raises(ValueError, match="views"):
        proj(torch.zeros(1, rig.num_views + 1, 2, 4, 4))


def test_projector_rejects_bad_reduce(rig):
    with pytest.raises(ValueError):
        GroundPlaneProjector(rig, GRID16, reduce="sum")


def test_most_cells_visible_from_some_camera(tables):
    _, visible = tables
    assert visible.any(axis=0).mean() >= 0.95


# --- pillar features ------------------------------------------------------


def test_pillar_features_against_loop_oracle():
    rng = np.random.default_rng(7)
    pts = np.column_stack([
        rng.uniform(-20, 20, 200),  # some outside the 16 m extent
        rng.uniform(-20, 20, 200),
        rng.uniform(0, 2, 200),
        rng.normal(0, 5, 200),
    ])
    out, ignored = pillar_features(pts, GRID16)

    g = GRID16.resolution
    count = np.zeros((g, g))
    zsum = np.zeros((g, g))
    vsum = np.zeros((g, g))
    skipped = 0
    for x, y, z, vr in pts:
        col = int(np.floor((x - GRID16.x_min) / GRID16.cell_size_m))
        row = int(np.floor((y - GRID16.y_min) / GRID16.cell_size_m))
        if not (0 <= col < g and 0 <= row < g):
            skipped += 1
            continue
        count[row, col] += 1
        zsum[row, col] += z
        vsum[row, col] += vr
    assert ignored == skipped
    np.testing.assert_allclose(out[0], np.log1p(count), atol=1e-6)
    occ = count > 0
    np.testing.assert_allclose(out[1][occ], zsum[occ] / count[occ], atol=1e-6)
    np.testing.assert_allclose(out[2][occ], vsum[occ] / count[occ], atol=1e-6)
    assert (out[1][~occ] == 0).all() and (out[2][~occ] == 0).all()


def test_pillar_features_max_edge_belongs_to_last_cell():
    pts = np.array([[16.0, 0.0, 1.0, 2.0]])
    out, ignored = pillar_features(pts, GRID16)
    assert ignored == 0
    row = int((0.0 - GRID16.y_min) / GRID16.cell_size_m)
    assert out[0, row, GRID16.resolution - 1] == pytest.approx(np.log1p(1))


def test_pillar_features_empty():
    out, ignored = pillar_features(np.zeros((0, 4)), GRID16)
    assert out.shape == (3, 16, 16) and not out.any() and ignored == 0


# --- fusion algebra -------------------------------------------------------


def _fmap(vals):
    return BevFeatureMap(values=vals, grid=GRID16)


def test_fuse_addition_and_averaging():
    torch.manual_seed(2)
    a, b = torch.randn(4, 16, 16), torch.randn(4, 16, 16)
    add = fuse(_fmap(a), _fmap(b), "addition").values
    avg = fuse(_fmap(a), _fmap(b), "averaging").values
    torch.testing.assert_close(add, a + b)
    torch.testing.assert_close(avg, (a + b) / 2)


def test_fuse_concatenation_stacks_channels():
    a, b = torch.zeros(3, 16, 16), torch.ones(5, 16, 16)
    out = fuse(_fmap(a), _fmap(b), FusionStrategy.CONCATENATION)
    assert out.channels == 8
    assert (out.values[:3] == 0).all() and (out.values[3:] == 1).all()


def test_fuse_rejects_grid_mismatch():
    other = BevGridSpec(extent_m=(-8.0, 8.0, -8.0, 8.0), resolution=16)
    b = BevFeatureMap(values=torch.zeros(2, 16, 16), grid=other)
    with pytest.raises(ValueError, match="grid"):
        fuse(_fmap(torch.zeros(2, 16, 16)), b, "addition")


def test_fuse_addition_needs_equal_channels():
    with pytest.raises(ValueError, match="channel"):
        fuse(_fmap(torch.zeros(2, 16, 16)), _fmap(torch.zeros(3, 16, 16)),
             "addition")


def test_exotic_fusion_is_recognized_but_absent():
    a = _fmap(torch.zeros(2, 16, 16))
    for name in ("ensemble", "mixture-of-experts"):
        with pytest.raises(NotImplementedError):
            fuse(a, a, name)


def test_feature_map_validation():
    with pytest.raises(ValueError):
        BevFeatureMap(values=torch.zeros(2, 8, 16), grid=GRID16)
    with pytest.raises(ValueError):
        BevFeatureMap(values=torch.zeros(16, 16), grid=GRID16)
    bad = torch.zeros(1, 16, 16)
    bad[0, 0, 0] = torch.nan
    with pytest.raises(ValueError, match="finite"):
        BevFeatureMap(values=bad, grid=GRID16)


# --- backbones ------------------------------------------------------------


@pytest.mark.parametrize("name", sorted(BACKBONES))
def test_backbone_stride_and_channels(name):
    net = make_backbone(name, out_channels=12)
    with torch.no_grad():
        out = net(torch.zeros(2, 3, 32, 32))
    assert out.shape == (2, 12, 4, 4)


def test_make_backbone_unknown_name():
    with pytest.raises(ValueError, match="unknown backbone"):
        make_backbone("vit-g")


def test_extract_image_features_shapes(rig):
    net = make_backbone("small", 8)
    views = torch.zeros(2, rig.num_views, 3, 32, 32)
    with torch.no_grad():
        out = extract_image_features(views, net)
    assert out.shape == (2, rig.num_views, 8, 4, 4)
    with pytest.raises(ValueError):
        extract_image_features(torch.zeros(2, 3, 32, 32), net)
    with pytest.raises(ValueError, match="square"):
        extract_image_features(torch.zeros(1, 2, 3, 32, 16), net)


# --- full encoder ---------------------------------------------------------


def test_fusion_encoder_end_to_end(rig):
    torch.manual_seed(3)
    enc = FusionEncoder(rig, GRID16, backbone="small",
                        image_channels=32, radar_channels=16)
    assert enc.out_channels == 48
    views = torch.randn(2, rig.num_views, 3, 32, 32)
    pillars = torch.randn(2, 3, 16, 16)
    with torch.no_grad():
        out = enc(views, pillars)
    assert out.shape == (2, 48, 16, 16)
    assert torch.isfinite(out).all()


def test_fusion_encoder_rejects_exotic_strategy(rig):
    with pytest.raises(NotImplementedError):
        FusionEncoder(rig, GRID16, fusion="ensemble")


def test_fusion_encoder_addition_channel_constraint(rig):
    with pytest.raises(ValueError):
        FusionEncoder(rig, GRID16, fusion="addition",
                      image_channels=32, radar_channels=16)
    enc = FusionEncoder(rig, GRID16, fusion="addition",
                        image_channels=16, radar_channels=16)
    assert enc.out_channels == 16
