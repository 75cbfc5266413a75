import time

import pytest
import torch

from gradcheck import relative_error
from tristage.backbone import BifurcatedBackbone, expected_sizes, load_resnet_weights
from tristage.checkpoint import (NAMESPACES, CheckpointError, load_model, read_checkpoint,
                                 save_checkpoint)
from tristage.config import (ABLATIONS, ConfigError, SizingError, full_profile, profile,
                             tiny_profile)
from tristage.loss import total_loss
from tristage.model import build_model, count_parameters


@pytest.fixture(scope="module")
def tiny():
    return build_model(tiny_profile(), seed=0).eval()


def test_expected_sizes_table():
    assert expected_sizes(704) == {"f2": (176, 176), "f3": (44, 44), "f4": (22, 22), "f5": (11, 11)}
    assert expected_sizes(352)["f5"] == (6, 6)
    assert expected_sizes(176) == {"f2": (44, 44), "f3": (11, 11), "f4": (6, 6), "f5": (3, 3)}


def test_tiny_shapes_and_six_maps(tiny):
    x = torch.randn(2, 3, 176, 176)
    with torch.no_grad():
        f2 = tiny.stem_forward(x)
        f3, f4, f5 = tiny.pool_then_leaf1(f2)
        out = tiny(x)
    assert f2.shape[-2:] == (44, 44)
    assert [t.shape[-1] for t in (f3, f4, f5)] == [11, 6, 3]
    assert {k: v.shape[-1] for k, v in out.crop_mask.items()} == {3: 20, 4: 10, 5: 5}
    assert out.m1.shape[-2:] == (11, 11) and out.m3.shape[-2:] == (44, 44)
    maps = out.emit()
    assert sorted(maps) == ["E1", "E2", "E3", "M1", "M2", "M3"]
    for m in maps.values():
        assert m.shape == (2, 1, 176, 176)
        assert m.min() >= 0 and m.max() <= 1
    assert out.prediction().shape == (2, 1, 176, 176)


def test_tiny_forward_under_two_seconds(tiny):
    x = torch.randn(1, 3, 176, 176)
    with torch.no_grad():
        tiny(x)
        t0 = time.perf_counter()
        tiny(x)
    assert time.perf_counter() - t0 < 2.0


def test_empty_detection_falls_back_to_full_box():
    model = build_model(tiny_profile(), seed=0).eval()
    with torch.no_grad():
        model.head1.weight.zero_()
        model.head1.bias.fill_(-3.0)
        out = model(torch.randn(2, 3, 176, 176))
    assert bool(out.empty.all())
    for b in out.boxes:
        assert b.fallback and b.as_tuple() == (0, 0, 43, 43)
    assert torch.isfinite(out.m3).all()


def test_sizing_errors_name_the_constraint(tiny):
    with pytest.raises(SizingError, match="multiple of 16"):
        tiny(torch.randn(1, 3, 100, 100))
    with pytest.raises(SizingError, match="input_size"):
        tiny_profile(input_size=100)
    with pytest.raises(SizingError, match="crop_size"):
        tiny_profile(crop_size=30)


def test_ablation_combinations_rejected():
    with pytest.raises(ConfigError, match="w/o MFEM"):
        tiny_profile(ablation="wo_mfem,wo_bem")
    with pytest.raises(ConfigError, match="unknown"):
        tiny_profile(ablation="nope")


def test_checkpoint_namespaces_and_round_trip(tmp_path, tiny):
    keys = list(tiny.state_dict())
    assert all(k.startswith(NAMESPACES) for k in keys)
    for ns in NAMESPACES:
        assert any(k.startswith(ns) for k in keys)
    assert any(k.startswith("mfem.dec1.5.non_local") for k in keys)
    assert any(k.startswith("bem.3.") for k in keys)
    path = save_checkpoint(tmp_path / "m.pt", tiny, step=7)
    blob = read_checkpoint(path)
    assert blob["schema"] == 1 and blob["step"] == 7
    again = load_model(path).eval()
    x = torch.randn(1, 3, 176, 176)
    with torch.no_grad():
        assert torch.equal(tiny(x).m3, again(x).m3)


def test_bad_checkpoint(tmp_path):
    p = tmp_path / "x.pt"
    torch.save({"foo": 1}, p)
    with pytest.raises(CheckpointError):
        read_checkpoint(p)
    torch.save({"schema": 99, "state_dict": {}}, p)
    with pytest.raises(CheckpointError, match="schema"):
        read_checkpoint(p)


def test_leaves_are_independent():
    bb = BifurcatedBackbone(tiny_profile().backbone, "group")
    a = dict(bb.leaf1.named_parameters())
    b = dict(bb.leaf2.named_parameters())
    assert a.keys() == b.keys()
    assert all(a[k].data_ptr() != b[k].data_ptr() for k in a)


def test_resnet50_state_dict_maps_by_prefix():
    tv = pytest.importorskip("torchvision")
    sd = tv.models.resnet50(weights=None).state_dict()
    bb = BifurcatedBackbone(full_profile().backbone)
    filled = load_resnet_weights(bb, sd, shared_leaf_init=True)
    assert any(k.startswith("leaf2.") for k in filled)
    assert torch.equal(bb.leaf1.layer3[0].conv1.weight, sd["layer3.0.conv1.weight"])
    assert torch.equal(bb.leaf2.layer3[0].conv1.weight, sd["layer3.0.conv1.weight"])
    assert torch.equal(bb.stem.conv1.weight, sd["conv1.weight"])
    bb2 = BifurcatedBackbone(full_profile().backbone)
    before = bb2.leaf2.layer2[0].conv1.weight.clone()
    load_resnet_weights(bb2, sd, shared_leaf_init=False)
    assert torch.equal(bb2.leaf2.layer2[0].conv1.weight, before)


def test_end_to_end_gradient_probe():
    cfg = tiny_profile(input_size=32, crop_size=8)
    model = build_model(cfg, seed=0).double()
    x = torch.randn(1, 3, 32, 32, dtype=torch.float64)
    g = torch.zeros(1, 1, 32, 32, dtype=torch.float64)
    g[..., 8:20, 10:24] = 1
    probes = [model.stem.conv1.weight, model.leaf1.layer2[0].conv2.weight,
              model.leaf2.layer2[0].conv2.weight, model.bem["4"].fuse[0].weight,
              model.mgfm.mask_head.weight, model.head1.bias]

    def loss():
        return total_loss(model(x), g)[0]
    assert relative_error(loss, probes, n_probe=6) < 1e-4


@pytest.mark.parametrize("name", sorted(ABLATIONS))
def test_each_ablation_builds_and_runs(name):
    model = build_model(profile("tiny", ablation=name), seed=0)
    x = torch.randn(1, 3, 176, 176)
    g = (torch.rand(1, 1, 176, 176) > 0.7).float()
    loss, _ = total_loss(model(x), g)
    loss.backward()
    assert torch.isfinite(loss)


def test_full_profile_parameter_count():
    n = count_parameters(build_model(full_profile(), seed=0))
    assert abs(n / 1e6 - 51.97) / 51.97 < 0.10
