import numpy as np
import pytest
from PIL import Image

from tristage.data import (DataError, FolderDataset, SyntheticSpec, TrainView, augment,
                           check_split_size, clip_border, generate_synthetic, hflip,
                           list_pairs, load_sample, materialize_synthetic, rotate,
                           synthesize_pair)


def _write_pair(root, stem, size=(40, 30), mask_value=200):
    (root / "Imgs").mkdir(parents=True, exist_ok=True)
    (root / "GT").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(len(stem))
    Image.fromarray(rng.integers(0, 255, (size[1], size[0], 3), dtype=np.uint8)).save(root / "Imgs" / f"{stem}.jpg")
    m = np.zeros((size[1], size[0]), np.uint8)
    m[5:20, 10:30] = mask_value
    Image.fromarray(m).save(root / "GT" / f"{stem}.png")


def test_load_sample_resizes_and_binarizes(tmp_path):
    _write_pair(tmp_path, "a")
    s = load_sample(tmp_path / "Imgs/a.jpg", tmp_path / "GT/a.png", size=64)
    assert s.image.shape == (3, 64, 64) and s.mask.shape == (64, 64)
    assert set(np.unique(s.mask)) <= {0.0, 1.0}
    again = load_sample(tmp_path / "Imgs/a.jpg", tmp_path / "GT/a.png", size=64)
    assert np.array_equal(s.image, again.image) and np.array_equal(s.mask, again.mask)


def test_mask_threshold_is_127(tmp_path):
    _write_pair(tmp_path, "lo", mask_value=127)
    _write_pair(tmp_path, "hi", mask_value=128)
    lo = load_sample(tmp_path / "Imgs/lo.jpg", tmp_path / "GT/lo.png", 32)
    hi = load_sample(tmp_path / "Imgs/hi.jpg", tmp_path / "GT/hi.png", 32)
    assert lo.mask.sum() == 0 and hi.mask.sum() > 0


def test_unreadable_file_skip_or_raise(tmp_path):
    _write_pair(tmp_path, "a")
    (tmp_path / "Imgs/a.jpg").write_bytes(b"not an image")
    with pytest.raises(DataError):
        load_sample(tmp_path / "Imgs/a.jpg", tmp_path / "GT/a.png", 32)
    assert load_sample(tmp_path / "Imgs/a.jpg", tmp_path / "GT/a.png", 32, skip_errors=True) is None


def test_list_pairs_reports_missing_masks(tmp_path):
    _write_pair(tmp_path, "a")
    _write_pair(tmp_path, "b")
    (tmp_path / "GT/b.png").unlink()
    pairs, missing = list_pairs(tmp_path)
    assert [p[0].stem for p in pairs] == ["a"] and missing == ["b"]
    with pytest.raises(DataError):
        list_pairs(tmp_path / "nowhere")


def test_split_size_check():
    check_split_size("CAMO", "train", 1000)
    check_split_size("NC4K", "test", 4121)
    with pytest.raises(DataError, match="expected 2026"):
        check_split_size("COD10K", "test", 2000)


def _sample():
    return generate_synthetic(SyntheticSpec(count=1, size=48))[0]


def test_flip_twice_is_identity():
    s = _sample()
    t = hflip(hflip(s))
    assert np.array_equal(s.image, t.image) and np.array_equal(s.mask, t.mask)


def test_rotation_keeps_mask_binary_and_moves_jointly():
    s = _sample()
    r = rotate(s, 12.0)
    assert set(np.unique(r.mask)) <= {0.0, 1.0}
    assert rotate(s, 0.0) is s
    c = clip_border(s, 0.1, 0.05, 0.0, 0.1)
    assert c.mask.shape == s.mask.shape and set(np.unique(c.mask)) <= {0.0, 1.0}


def test_augment_is_seeded():
    s = _sample()
    a = augment(s, np.random.default_rng(7))
    b = augment(s, np.random.default_rng(7))
    assert np.array_equal(a.image, b.image) and np.array_equal(a.mask, b.mask)


def test_train_view_independent_of_access_order(tmp_path):
    materialize_synthetic(SyntheticSpec(count=3, size=32), tmp_path)
    view = TrainView(FolderDataset(tmp_path, 32), seed=1)
    a = [view[(0, i)].image for i in range(3)]
    b = [view[(0, i)].image for i in (2, 1, 0)][::-1]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(view[(0, 0)].image, view[(1, 0)].image)


def test_synthetic_count_fraction_and_reproducible():
    spec = SyntheticSpec(seed=3, count=16, size=64, fg_range=(0.05, 0.2))
    data = generate_synthetic(spec)
    assert len(data) == 16
    for s in data:
        assert 0.05 <= s.mask.mean() <= 0.2
    again = generate_synthetic(spec)
    assert all(np.array_equal(a.image, b.image) and np.array_equal(a.mask, b.mask)
               for a, b in zip(data, again))


def test_similarity_zero_is_intensity_disjoint():
    spec = SyntheticSpec(count=4, size=64, similarity=0.0)
    for i in range(4):
        rgb, m = synthesize_pair(spec, i)
        assert rgb[m].min() > rgb[~m].max()


def test_similarity_one_overlaps():
    rgb, m = synthesize_pair(SyntheticSpec(count=1, size=64, similarity=1.0), 0)
    assert rgb[m].min() <= rgb[~m].max()


def test_materialize_layout(tmp_path):
    spec = SyntheticSpec(count=2, size=32)
    materialize_synthetic(spec, tmp_path)
    ds = FolderDataset(tmp_path, 32)
    assert len(ds) == 2
    rgb, m = synthesize_pair(spec, 1)
    assert np.array_equal(ds[1].mask.astype(bool), m)


@pytest.mark.parametrize("bad", [dict(fg_range=(0.3, 0.1)), dict(similarity=1.5)])
def test_spec_validation(bad):
    with pytest.raises(ValueError):
        SyntheticSpec(**bad)
