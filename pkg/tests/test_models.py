from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from echolab import dsp, enhance
from echolab.errors import ConfigError
from echolab.models import (
    STAGES,
    ConvSpec,
    CrnConfig,
    CrnModel,
    _conv_costs,
    apply_ablation,
    build_model,
    complexity_table,
    count_flops,
    count_params,
    ggcrn16,
)

MICRO = dict(kernel_count=4, groups_layer1=4, groups_layer2=2)


def test_single_conv_closed_form():
    spec = ConvSpec("c", "conv", 3, 4, 40, 1, 264, 264)
    cost = _conv_costs(spec)[0]
    assert cost.params == 3 * 1 * 4 * 40 + 40 == 520
    assert cost.flops == 2 * 264 * 3 * 4 * 40


@pytest.mark.parametrize("stage", STAGES)
def test_shape_contract_every_stage(stage, rng):
    model = build_model(replace(apply_ablation(stage), **MICRO))
    frames = int(rng.integers(1, 5))
    out, state = model.forward(rng.standard_normal((2, frames, 264, 4)))
    assert out.shape == (2, frames, 264, 2)
    assert state


def test_bottleneck_resolution():
    cfg = apply_ablation("fcrn15")
    assert cfg.bottleneck_bins == 33
    assert build_model(cfg).plan.encoder[-1].out_len == 33


def test_ggcrn16_configuration():
    cfg = apply_ablation("m5")
    assert (cfg.kernel_count, cfg.kernel_size, cfg.bottleneck, cfg.groups_layer1) == (40, 3, "ggru1", 10)
    assert cfg.input_compression
    assert build_model(cfg).plan.bottleneck_channels == 120
    assert ggcrn16() == cfg


def test_each_stage_changes_one_documented_thing():
    diffs = []
    for a, b in zip(STAGES, STAGES[1:]):
        ca, cb = apply_ablation(a).to_dict(), apply_ablation(b).to_dict()
        diffs.append(sorted(k for k in ca if ca[k] != cb[k]))
    assert diffs == [
        ["bottleneck"],
        ["groups_layer1", "kernel_count"],
        ["kernel_size"],
        ["input_compression"],
        ["bottleneck"],
    ]
    fcrn = apply_ablation("fcrn15")
    assert (fcrn.bottleneck, fcrn.kernel_count, fcrn.kernel_size) == ("convlstm2", 32, 12)
    assert (apply_ablation("m1").groups_layer1, apply_ablation("m1").groups_layer2) == (8, 6)


def test_unknown_stage():
    with pytest.raises(ConfigError):
        apply_ablation("m9")


def test_divisibility_errors():
    with pytest.raises(ConfigError):
        build_model(replace(ggcrn16(), kernel_count=8))  # 264 features into 10 groups
    with pytest.raises(ConfigError):
        CrnConfig(feature_len=260)


@pytest.mark.parametrize("stage", STAGES)
def test_param_count_matches_tensors_and_breakdown(stage):
    model = build_model(apply_ablation(stage))
    report = count_flops(model)
    assert report.parameter_count == count_params(model)
    assert report.parameter_count == sum(l.params for l in report.layers)
    assert report.flops_per_frame == sum(l.flops for l in report.layers)
    assert report.flops_per_second == round(report.flops_per_frame * 16000 / 212)


def _conv_flops(stage):
    return {l.name: l.flops for l in count_flops(build_model(apply_ablation(stage))).layers
            if l.kind in ("conv", "deconv", "depthwise")}


def test_kernel_size_reduction_quarter_per_layer():
    m2, m3 = _conv_flops("m2"), _conv_flops("m3")
    affected = [k for k in m2 if not k.startswith("bn.")]
    assert affected
    for name in affected:
        assert m3[name] * 4 == m2[name], name


def test_compression_is_free():
    a = count_flops(build_model(apply_ablation("m3")))
    b = count_flops(build_model(apply_ablation("m4")))
    assert (a.parameter_count, a.flops_per_frame) == (b.parameter_count, b.flops_per_frame)


def test_parameter_monotonicity():
    p = {s: count_params(build_model(apply_ablation(s))) for s in STAGES}
    assert p["m5"] < p["m4"]
    assert p["m2"] > p["m1"]


@pytest.mark.parametrize("groups", [2, 5, 10])
def test_grouped_weight_matrices_divide_by_group_count(groups):
    def weights(g):
        m = build_model(replace(ggcrn16(), groups_layer1=g))
        return m.params["bn.gru1.w"].data.size + m.params["bn.gru1.u"].data.size

    assert weights(1) == groups * weights(groups)


def test_groups_one_is_single_gru():
    model = build_model(replace(ggcrn16(), **{**MICRO, "groups_layer1": 1}))
    assert model.params["bn.gru1.w"].shape[0] == 1
    out, _ = model.forward(np.zeros((1, 2, 264, 4)))
    assert out.shape == (1, 2, 264, 2)


def test_doubling_kernels_about_quadruples_conv_flops():
    a = _conv_flops("m3")
    b = {l.name: l.flops for l in count_flops(build_model(replace(apply_ablation("m3"), kernel_count=80, groups_layer1=10))).layers
         if l.kind == "conv"}
    inner = [k for k in b if k.startswith("enc") and k not in ("enc1",)]
    for name in inner:
        assert 3.5 < b[name] / a[name] <= 4.0


def test_state_carry_equals_full_forward(rng):
    model = build_model(replace(apply_ablation("m1"), **MICRO))
    feats = rng.standard_normal((1, 6, 264, 4))
    full, _ = model.forward(feats)
    a, st_ = model.forward(feats[:, :4])
    b, _ = model.forward(feats[:, 4:], st_)
    assert np.allclose(np.concatenate([a.data, b.data], axis=1), full.data, atol=1e-12)


def test_zero_output_layer_gives_silence(rng):
    model = build_model(replace(ggcrn16(), **MICRO))
    model.params["out.w"].data[...] = 0
    model.params["out.b"].data[...] = 0
    x, y = rng.standard_normal(3000), rng.standard_normal(3000)
    out = enhance.process(enhance.ModelSystem(model), x, y)
    assert not out["e"].any()


def test_forward_masking_frame_count_and_determinism(rng):
    model = build_model(replace(ggcrn16(), **MICRO))
    x, y = rng.standard_normal(5000), rng.standard_normal(5000)
    X, _ = enhance.analyze_padded(x)
    Y, _ = enhance.analyze_padded(y)
    G = enhance.ModelSystem(model).gains(X, Y)
    assert G.shape == Y.shape
    e1 = enhance.forward_masking(model, X, Y)
    e2 = enhance.forward_masking(model, X, Y)
    assert np.array_equal(e1, e2)
    assert e1.shape[-1] == dsp.DEFAULT_PARAMS.n_samples(Y.shape[0])


def test_chunked_system_matches_single_pass(rng):
    model = build_model(replace(ggcrn16(), **MICRO))
    X = rng.standard_normal((30, 257)) + 1j * rng.standard_normal((30, 257))
    Y = rng.standard_normal((30, 257)) + 1j * rng.standard_normal((30, 257))
    a = enhance.ModelSystem(model, chunk_frames=7).gains(X, Y)
    b = enhance.ModelSystem(model, chunk_frames=100).gains(X, Y)
    assert np.allclose(a, b, atol=1e-12)


def test_loading_parameters_checks_names_and_shapes():
    model = build_model(replace(ggcrn16(), **MICRO))
    arrays = model.state_arrays()
    clone = CrnModel(model.config, arrays)
    assert all(np.array_equal(clone.params[k].data, v) for k, v in arrays.items())
    with pytest.raises(ConfigError):
        CrnModel(model.config, {k: v for k, v in list(arrays.items())[1:]})


@settings(max_examples=10)
@given(seed=st.integers(0, 1000))
def test_initialisation_is_seeded(seed):
    a = build_model(replace(ggcrn16(), seed=seed, **MICRO)).state_arrays()
    b = build_model(replace(ggcrn16(), seed=seed, **MICRO)).state_arrays()
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_complexity_table_layout():
    rows = complexity_table()
    assert [r["stage"] for r in rows[:6]] == list(STAGES)
    assert rows[6]["model"].startswith("FCRN") and rows[6]["params"] == 3_700_000
    assert rows[6]["flops"] == 12_840_000_000
    assert rows[7]["model"].startswith("CRUSE")
    assert rows[0]["flops_vs_fcrn15"] == 1.0
