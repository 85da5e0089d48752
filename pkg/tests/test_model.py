"""Config parsing, layer planning, cost accounting, and the assembled
network's forward contract."""

import json

import numpy as np
import pytest

from lgmpose.errors import ConfigError, ShapeError, TrainingDivergedError
from lgmpose.model import (ModelConfig, build_model, cost_table, count_flops,
                           count_params, forward_eval, init_weights,
                           load_config, plan_layers, reference_config,
                           toy_config)
from lgmpose.tensor import Tensor
from lgmpose.weights import serialize_model

# conv-family-only topology (no global-mixing stages), used where exact
# resolution scaling must hold
_CONV_ONLY = {
    "input_size": [256, 192],
    "keypoints": 17,
    "stem_channels": 8,
    "fusion": {"mode": "conv3x3"},
    "stages": [
        {"kind": "mnv2", "channels": 8, "stride": 1, "expansion": 1},
        {"kind": "mnv2", "channels": 8, "stride": 2, "expansion": 1},
        {"kind": "mnv2", "channels": 8, "stride": 1, "expansion": 1},
        {"kind": "sfusion", "channels": 32, "skip": 1},
        {"kind": "head"},
    ],
}


# ---------------------------------------------------------------------------
# config parsing


def test_config_roundtrip_and_digest():
    cfg = reference_config()
    again = ModelConfig.from_dict(cfg.to_dict())
    assert again == cfg
    assert again.digest() == cfg.digest()
    assert len(cfg.digest()) == 16


def test_builtin_config_digests_are_stable():
    assert reference_config().digest() == "4b5cc2d9c4d2ec25"
    assert toy_config().digest() == "f567e57ee22c8285"


def test_with_input_size_changes_only_size():
    cfg = reference_config().with_input_size(384, 288)
    assert cfg.input_size == (384, 288)
    assert cfg.stages == reference_config().stages
    assert cfg.digest() != reference_config().digest()


@pytest.mark.parametrize("mutation,fragment", [
    (lambda d: d.update(extra=1), "unknown keys"),
    (lambda d: d.update(stages=[]), "non-empty"),
    (lambda d: d.update(stages="head"), "non-empty"),
    (lambda d: d.update(keypoints=0), "integer"),
    (lambda d: d.update(input_size=[256]), "pair"),
    (lambda d: d.update(mean=[0.5, 0.5]), "three numbers"),
    (lambda d: d.update(fusion={"mode": "mystery"}), "fusion"),
    (lambda d: d["stages"].insert(0, {"kind": "pool"}), "kind"),
    (lambda d: d["stages"].insert(0, {"kind": "mnv2"}), "channels"),
    (lambda d: d["stages"].insert(0, {"kind": "mnv2", "channels": 4,
                                      "stride": 3}), "stride"),
    (lambda d: d["stages"][0].update(patch=[2, 2]), "unknown keys"),
])
def test_config_rejects_bad_input(mutation, fragment):
    d = reference_config().to_dict()
    mutation(d)
    with pytest.raises(ConfigError, match=fragment):
        ModelConfig.from_dict(d)


def test_load_config_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(toy_config().to_dict()))
    assert load_config(str(path)) == toy_config()
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(str(bad))


# ---------------------------------------------------------------------------
# planning


def test_reference_plan_shapes():
    plans = plan_layers(reference_config())
    assert plans[0].kind == "stem"
    assert (plans[0].h_out, plans[0].w_out) == (128, 96)
    assert (plans[-1].h_out, plans[-1].w_out) == (64, 48)
    assert plans[-1].c_out == 17
    # fusion stages must land on their skip's resolution
    for p in plans:
        if p.kind == "sfusion":
            src = plans[p.skip_layer]
            assert (src.h_out, src.w_out) == (p.h_out, p.w_out)


def test_plan_scales_with_input():
    plans = plan_layers(reference_config(), input_size=(384, 288))
    assert (plans[-1].h_out, plans[-1].w_out) == (96, 72)


def test_plan_rejects_broken_topologies():
    base = toy_config().to_dict()

    d = json.loads(json.dumps(base))
    d["stages"].pop()  # no head
    with pytest.raises(ConfigError, match="head"):
        plan_layers(ModelConfig.from_dict(d))

    d = json.loads(json.dumps(base))
    d["stages"].insert(3, {"kind": "head"})  # head not last
    with pytest.raises(ConfigError, match="final"):
        plan_layers(ModelConfig.from_dict(d))

    d = json.loads(json.dumps(base))
    d["stages"][-2]["skip"] = 13  # names itself
    with pytest.raises(ConfigError, match="earlier"):
        plan_layers(ModelConfig.from_dict(d))

    d = json.loads(json.dumps(base))
    d["stages"][-2]["skip"] = 0  # wrong resolution
    with pytest.raises(ConfigError, match="spatial"):
        plan_layers(ModelConfig.from_dict(d))

    d = json.loads(json.dumps(base))
    d["fusion"]["mode"] = "none"  # passthrough cannot change channels
    d["stages"][9]["channels"] = 20
    with pytest.raises(ConfigError, match="none"):
        plan_layers(ModelConfig.from_dict(d))

    with pytest.raises(ConfigError, match="smaller"):
        plan_layers(toy_config(), input_size=(2, 64))


def test_misaligned_decoder_is_rejected_at_plan_time():
    # widths not divisible by 32 break the deconv/skip agreement: at /16 the
    # width is odd, the stride-2 stage rounds up, and doubling back yields
    # a map one column wider than the skip wants
    with pytest.raises(ConfigError):
        plan_layers(reference_config(), input_size=(64, 48))


# ---------------------------------------------------------------------------
# cost accounting


def test_cost_hand_values_conv3x3_fusion():
    cfg = ModelConfig.from_dict(_CONV_ONLY)
    entries = cost_table(cfg)
    fuse = next(e for e in entries if e.kind == "fuse_conv3x3")
    # 3x3 conv, 16 -> 32 channels with bias, on a 64x48 map
    assert fuse.params == 9 * 16 * 32 + 32 == 4640
    assert fuse.macs == 9 * 16 * 32 * 64 * 48 == 14_155_776


def test_cost_table_params_match_live_model():
    for cfg in (toy_config(), reference_config(),
                ModelConfig.from_dict(_CONV_ONLY)):
        model = build_model(cfg)
        assert count_params(model) == sum(e.params for e in cost_table(cfg))


def test_cost_table_covers_fusion_modes():
    base = toy_config().to_dict()
    for mode in ("conv3x3", "dw_separable", "sfusion"):
        d = json.loads(json.dumps(base))
        d["fusion"]["mode"] = mode
        cfg = ModelConfig.from_dict(d)
        assert count_params(build_model(cfg)) == \
            sum(e.params for e in cost_table(cfg))


def test_reference_budget_frozen():
    cfg = reference_config()
    entries = cost_table(cfg)
    assert sum(e.params for e in entries) == 1_040_857
    assert sum(e.macs for e in entries) == 352_444_416


def test_conv_only_flops_scale_exactly_4x():
    cfg = ModelConfig.from_dict(_CONV_ONLY)
    model = build_model(cfg)
    assert count_flops(model, (512, 384)) == 4 * count_flops(model, (256, 192))


def test_count_flops_default_uses_built_size():
    model = build_model(toy_config())
    assert count_flops(model) == count_flops(model, toy_config().input_size)


# ---------------------------------------------------------------------------
# the assembled network


def test_forward_shapes_and_batching():
    cfg = toy_config()
    model = init_weights(build_model(cfg), seed=0)
    x = np.random.default_rng(1).standard_normal((3, 64, 64)).astype(np.float32)
    single = model.forward(Tensor(x))
    assert single.shape == (4, 16, 16)
    assert model.heatmap_size == (16, 16)
    pair = model.forward(Tensor(np.stack([x, x])))
    assert pair.shape == (2, 4, 16, 16)
    assert np.array_equal(pair.data[0], pair.data[1])
    assert np.array_equal(pair.data[0], single.data)


def test_forward_rejects_wrong_input():
    model = build_model(toy_config())
    with pytest.raises(ShapeError):
        model.forward(Tensor(np.zeros((3, 64, 60), dtype=np.float32)))
    with pytest.raises(ShapeError):
        model.forward(Tensor(np.zeros((1, 4, 64, 64), dtype=np.float32)))


def test_zero_head_means_zero_heatmaps():
    model = init_weights(build_model(toy_config()), seed=2)
    params = dict(model.named_params())
    head_keys = [k for k in params if k.endswith("head.w") or k.endswith("head.b")]
    assert len(head_keys) == 2
    for k in head_keys:
        params[k].assign_(np.zeros(params[k].shape))
    x = Tensor(np.random.default_rng(2).standard_normal((3, 64, 64))
               .astype(np.float32))
    assert (model.forward(x).data == 0).all()


def test_check_finite_names_the_layer():
    model = init_weights(build_model(toy_config()), seed=0)
    x = Tensor(np.full((3, 64, 64), np.nan, dtype=np.float32))
    with pytest.raises(TrainingDivergedError, match="stem"):
        model.forward(x, check_finite=True)


def test_init_is_deterministic_and_seed_sensitive():
    a = serialize_model(init_weights(build_model(toy_config()), seed=7))
    b = serialize_model(init_weights(build_model(toy_config()), seed=7))
    c = serialize_model(init_weights(build_model(toy_config()), seed=8))
    assert a == b
    assert a != c


def test_init_spread_follows_fan_in():
    model = init_weights(build_model(reference_config()), seed=0)
    params = dict(model.named_params())
    w = params["stages[3].mnv2.expand_w"].data  # (144, 24, 1, 1)
    assert w.size == 3456
    fan_in = 24
    want = (1.0 / np.sqrt(fan_in)) / np.sqrt(3.0)
    assert abs(w.std() - want) / want < 0.2
    assert abs(w.max()) <= 1.0 / np.sqrt(fan_in)


def test_forward_eval_thread_count_is_invisible():
    cfg = toy_config()
    model = init_weights(build_model(cfg), seed=4)
    x = Tensor(np.random.default_rng(4).standard_normal((3, 3, 64, 64))
               .astype(np.float32))
    a = forward_eval(model, x, threads=1)
    b = forward_eval(model, x, threads=3)
    assert np.array_equal(a.data, b.data)


def test_perturbation_reaches_far_corner():
    # global mixing: poking the top-left input pixel must move heatmap
    # values in the bottom-right quadrant
    cfg = toy_config()
    model = init_weights(build_model(cfg), seed=5)
    rng = np.random.default_rng(5)
    x = rng.standard_normal((3, 64, 64)).astype(np.float32)
    base = model.forward(Tensor(x)).data
    x2 = x.copy()
    x2[:, 0, 0] += 1.0
    moved = model.forward(Tensor(x2)).data
    hh, ww = base.shape[-2:]
    quadrant = np.abs(moved - base)[:, hh // 2:, ww // 2:]
    assert quadrant.max() > 1e-7
