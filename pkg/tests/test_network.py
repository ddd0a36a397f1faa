import numpy as np
import pytest
import torch

from focalseg.errors import InvalidPlacement, ShapeMismatch
from focalseg.network import (AttentionPlacement, NetworkConfig, all_ag_placements,
                              all_se_placements, build_unet, load_checkpoint,
                              prune_placements, save_checkpoint)


def small_config(placements=(), **kwargs):
    defaults = dict(in_channels=3, classes=2, base_channels=4, seed=0,
                    placements=placements)
    defaults.update(kwargs)
    return NetworkConfig(**defaults)


def param_count(model):
    return sum(p.numel() for p in model.parameters())


def test_placement_validation():
    with pytest.raises(InvalidPlacement):
        AttentionPlacement("SE", 10)
    with pytest.raises(InvalidPlacement):
        AttentionPlacement("AG", 0)
    with pytest.raises(InvalidPlacement):
        AttentionPlacement("XX", 1)
    with pytest.raises(InvalidPlacement):
        AttentionPlacement("SE", 1, focal="maybe")
    with pytest.raises(InvalidPlacement):
        NetworkConfig(placements=(AttentionPlacement("SE", 1),
                                  AttentionPlacement("SE", 1, focal="init1")))


def test_plain_unet_shapes_and_softmax():
    model = build_unet(small_config())
    x = torch.randn(2, 3, 32, 32)
    probs = model(x)
    assert probs.shape == (2, 2, 32, 32)
    sums = probs.sum(dim=1)
    assert float((sums - 1.0).abs().max()) < 1e-5
    assert len(model.attn) == 0


def test_input_must_be_divisible():
    model = build_unet(small_config())
    with pytest.raises(ShapeMismatch):
        model(torch.randn(1, 3, 40, 40))


def test_deterministic_rebuild():
    cfg = small_config(placements=all_se_placements("init1"))
    m1, m2 = build_unet(cfg), build_unet(cfg)
    s1, s2 = m1.state_dict(), m2.state_dict()
    assert list(s1) == list(s2)
    for k in s1:
        assert torch.equal(s1[k], s2[k]), k
    x = torch.randn(1, 3, 32, 32)
    assert torch.equal(m1(x), m2(x))


def test_seed_changes_parameters():
    m1 = build_unet(small_config(seed=0))
    m2 = build_unet(small_config(seed=1))
    diff = any(not torch.equal(a, b)
               for a, b in zip(m1.state_dict().values(), m2.state_dict().values()))
    assert diff


@pytest.mark.parametrize("placement", list(all_se_placements()) + list(all_ag_placements()))
def test_every_position_builds_and_runs(placement):
    model = build_unet(small_config(placements=(placement,)))
    assert placement.key in model.attn
    probs = model(torch.randn(1, 3, 32, 32))
    assert probs.shape == (1, 2, 32, 32)


def test_use_net_and_attention_unet_module_counts():
    use_net = build_unet(small_config(placements=all_se_placements()))
    assert len(use_net.attn) == 9
    att_unet = build_unet(small_config(placements=all_ag_placements("init1")))
    assert len(att_unet.attn) == 4
    assert set(att_unet.focal_values()) == {"AG1", "AG2", "AG3", "AG4"}


def test_focal_init_values_pinned():
    cfg = small_config(placements=(AttentionPlacement("SE", 3, "init0"),
                                   AttentionPlacement("AG", 2, "init1")))
    model = build_unet(cfg)
    assert model.focal_values() == {"AG2": 1.0, "SE3": 0.0}


def test_focal_init_zero_network_matches_plain():
    # all focal weights at 0 make every attention site a no-op
    torch.manual_seed(99)
    x = torch.randn(1, 3, 32, 32)
    plain = build_unet(small_config())
    focal = build_unet(small_config(
        placements=all_se_placements("init0") + all_ag_placements("init0")))
    state = focal.state_dict()
    for k, v in plain.state_dict().items():
        state[k] = v
    focal.load_state_dict(state)
    assert float((plain(x) - focal(x)).abs().max()) == 0.0


def test_prune_keep_all_is_identity():
    cfg = small_config(placements=all_se_placements("init1"))
    model = build_unet(cfg)
    pruned = prune_placements(model, cfg.placements)
    x = torch.randn(1, 3, 32, 32)
    assert float((model(x) - pruned(x)).abs().max()) == 0.0


def test_prune_zero_weight_modules_is_no_op():
    placements = (AttentionPlacement("SE", 2, "init0"),
                  AttentionPlacement("SE", 7, "init1"),
                  AttentionPlacement("AG", 1, "init0"))
    model = build_unet(small_config(placements=placements, seed=5))
    # leave SE7 trained away from 1 to prove unrelated weights are copied
    with torch.no_grad():
        model.attn["SE7"].focal.weight.fill_(0.83)
    keep = tuple(p for p in placements if p.position == 7)
    pruned = prune_placements(model, keep)
    assert set(pruned.attn.keys()) == {"SE7"}
    torch.manual_seed(11)
    for _ in range(10):
        x = torch.randn(1, 3, 32, 32)
        assert float((model(x) - pruned(x)).abs().max()) < 1e-6


def test_prune_rejects_foreign_placement():
    model = build_unet(small_config(placements=(AttentionPlacement("SE", 1),)))
    with pytest.raises(InvalidPlacement):
        prune_placements(model, (AttentionPlacement("SE", 2),))


def test_parameter_count_deterministic_and_monotone():
    base = param_count(build_unet(small_config()))
    with_se = param_count(build_unet(small_config(placements=all_se_placements())))
    assert param_count(build_unet(small_config())) == base
    assert with_se > base


def test_checkpoint_round_trip(tmp_path):
    cfg = small_config(placements=(AttentionPlacement("AG", 3, "init1"),
                                   AttentionPlacement("SE", 5, "init0")), seed=3)
    model = build_unet(cfg)
    with torch.no_grad():  # perturb away from the built state
        model.attn["SE5"].focal.weight.fill_(0.42)
        model.head.bias.add_(0.1)
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    restored = load_checkpoint(path)
    assert restored.config == cfg
    x = torch.randn(2, 3, 32, 32)
    assert torch.equal(model(x), restored(x))


def test_config_json_round_trip():
    cfg = small_config(placements=(AttentionPlacement("SE", 1, "init1"),
                                   AttentionPlacement("AG", 4)), seed=7)
    again = NetworkConfig.from_json_dict(cfg.to_json_dict())
    assert again == NetworkConfig(
        in_channels=cfg.in_channels, classes=cfg.classes,
        base_channels=cfg.base_channels, se_reduction=cfg.se_reduction,
        placements=tuple(sorted(cfg.placements)), seed=cfg.seed)
