import numpy as np
import pytest
import torch

import oracles
from tristage.config import tiny_profile
from tristage.geometry import (BBox, binarize, compute_bbox, crop_resize, derive_boundary,
                               expand_box, normalize_minmax, restore)
from tristage.model import build_model


def test_boundary_zero_on_constant():
    for v in (0.0, 0.3, 1.0):
        assert torch.count_nonzero(derive_boundary(torch.full((1, 1, 7, 9), v))) == 0


def test_boundary_single_pixel_oracle():
    m = torch.zeros(1, 1, 5, 5, dtype=torch.float64)
    m[0, 0, 2, 2] = 1
    e = derive_boundary(m)[0, 0]
    assert e[2, 2].item() == pytest.approx(8 / 9, abs=1e-15)
    for i in (1, 2, 3):
        for j in (1, 2, 3):
            if (i, j) != (2, 2):
                assert e[i, j].item() == pytest.approx(1 / 9, abs=1e-15)
    assert e[0].abs().sum() == 0 and e[:, 4].abs().sum() == 0


def test_boundary_matches_window_oracle():
    rng = np.random.default_rng(0)
    m = rng.random((6, 7))
    np.testing.assert_allclose(derive_boundary(torch.from_numpy(m)).numpy(), oracles.boundary(m),
                               atol=1e-14)


def test_binarize_strict_and_idempotent():
    x = torch.tensor([0.0, 0.4999, 0.5, 0.5001, 1.0])
    assert binarize(x).tolist() == [0, 0, 0, 1, 1]
    assert torch.equal(binarize(binarize(x)), binarize(x))


def test_normalize_flags_degenerate():
    x = torch.stack([torch.full((4, 4), 0.3), torch.arange(16.0).view(4, 4)])[:, None]
    out, deg = normalize_minmax(x)
    assert deg.view(-1).tolist() == [True, False]
    assert out[0].abs().sum() == 0
    assert out[1].min() == 0 and out[1].max() == 1


def test_bbox_hand_cases():
    m = np.zeros((10, 10), bool)
    m[2:5, 3:6] = True  # rows 2..4, cols 3..5, extent 2
    b = compute_bbox(m, 1.2, (10, 10))
    assert b.initial == (3, 2, 5, 4)
    # centre (4, 3), half side 1.2 -> x 2.8..5.2, y 1.8..4.2
    assert b.as_tuple() == (2, 1, 6, 5)
    assert compute_bbox(m, 1.0, (10, 10)).as_tuple() == (3, 2, 5, 4)
    # clamped at the border
    m2 = np.zeros((10, 10), bool)
    m2[0:4, 0:2] = True
    assert compute_bbox(m2, 1.4, (10, 10)).as_tuple() == (0, 0, 3, 4)
    # several blobs give one joint box
    m3 = np.zeros((10, 10), bool)
    m3[1, 1] = m3[7, 8] = True
    assert compute_bbox(m3, 1.0, (10, 10)).initial == (1, 1, 8, 7)


def test_bbox_upsamples_nearest_to_grid():
    m = np.zeros((4, 4), bool)
    m[1, 2] = True
    b = compute_bbox(m, 1.0, (8, 8))
    assert b.initial == (4, 2, 5, 3)


def test_empty_mask_falls_back_to_full_grid():
    b = compute_bbox(np.zeros((5, 5), bool), 1.2, (20, 20))
    assert b.fallback and b.as_tuple() == (0, 0, 19, 19)


def test_bbox_properties_random_masks():
    rng = np.random.default_rng(0)
    grid = (24, 24)
    for _ in range(1000):
        m = np.zeros(grid, bool)
        for _ in range(rng.integers(1, 3)):
            y, x = rng.integers(0, 24, size=2)
            hh, ww = rng.integers(1, 9, size=2)
            m[y:y + hh, x:x + ww] = True
        boxes = [compute_bbox(m, r, grid) for r in (1.0, 1.2, 1.4)]
        x0, y0, x1, y1 = boxes[0].initial
        for b in boxes:
            assert 0 <= b.x_min <= b.x_max < grid[1] and 0 <= b.y_min <= b.y_max < grid[0]
            assert b.x_min <= x0 and b.y_min <= y0 and b.x_max >= x1 and b.y_max >= y1
        assert boxes[1].contains(boxes[0]) and boxes[2].contains(boxes[1])
        assert boxes[1].as_tuple() == oracles.bbox(m, 1.2)


def test_monotone_in_ratio_before_clamping():
    big = (10 ** 6, 10 ** 6)
    rng = np.random.default_rng(1)
    for _ in range(200):
        x0, y0 = rng.integers(1000, 2000, size=2)
        x1, y1 = x0 + rng.integers(0, 50), y0 + rng.integers(0, 50)
        prev = None
        for r in np.linspace(1.0, 2.0, 6):
            b = BBox(*expand_box(x0, y0, x1, y1, r, big))
            if prev is not None:
                assert b.contains(prev)
            prev = b


def test_restore_crop_identity_on_full_grid():
    f = torch.rand(1, 3, 12, 12, dtype=torch.float64)
    box = BBox.full((12, 12))
    back = restore(crop_resize(f[0], box, 12), box, (12, 12))
    assert (back - f).abs().max() <= 1e-6


def test_restore_zero_outside_box():
    box = BBox(3, 2, 8, 6)
    out = restore(torch.rand(1, 1, 8, 8) + 0.1, box, (12, 12))[0, 0]
    inside = torch.zeros(12, 12, dtype=torch.bool)
    inside[2:7, 3:9] = True
    assert torch.count_nonzero(out[~inside]) == 0
    assert (out[inside] > 0).all()


def test_model_side_maps_vanish_outside_box():
    model = build_model(tiny_profile(), seed=0).eval()
    with torch.no_grad():
        out = model(torch.randn(2, 3, 176, 176))
    for b, box in enumerate(out.boxes):
        inside = torch.zeros(out.m2.shape[-2:], dtype=torch.bool)
        inside[box.y_min:box.y_max + 1, box.x_min:box.x_max + 1] = True
        for maps in (out.side_mask, out.side_edge):
            for m in maps.values():
                assert torch.count_nonzero(m[b, 0][~inside]) == 0
