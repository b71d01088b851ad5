"""Model construction, forward contracts, and checkpoint round trips."""

import numpy as np
import pytest

from monosurf import autodiff as ad
from monosurf import gradcheck
from monosurf.errors import CheckpointError, ConfigError, DimensionError
from monosurf.network import (
    ModelConfig,
    build_model,
    load_checkpoint,
    save_checkpoint,
)


def test_desk_scale_shape_contract():
    cfg = ModelConfig(input_side=64, grid_side=17, widths=(16, 32, 64), seed=0)
    model = build_model(cfg)
    out = model.forward(np.zeros((1, 3, 64, 64)))
    assert out.shape == (1, 17, 17, 3)


def test_paper_scale_latent_shape():
    cfg = ModelConfig(input_side=224, grid_side=73, widths=(32, 64, 128), seed=0)
    assert cfg.latent_shape() == (128, 28, 28)
    model = build_model(cfg)
    summary = {name: shape for name, _, shape in model.layer_summary()}
    assert summary["latent"] == (128, 28, 28)
    assert summary["resample"] == (3, 73, 73)


@pytest.mark.slow
def test_paper_scale_forward_runs():
    cfg = ModelConfig(
        input_side=224, grid_side=73, widths=(32, 64, 128), seed=0, dtype="float32"
    )
    model = build_model(cfg)
    out = model.forward(np.random.default_rng(0).random((1, 3, 224, 224)))
    assert out.shape == (1, 73, 73, 3)
    assert np.isfinite(out.data).all()


def test_same_seed_identical_parameters():
    cfg = ModelConfig(seed=123)
    a, b = build_model(cfg), build_model(cfg)
    assert a.param_hash() == b.param_hash()
    c = build_model(ModelConfig(seed=124))
    assert c.param_hash() != a.param_hash()


def test_param_count_stable_and_reported():
    cfg = ModelConfig(input_side=224, grid_side=73, widths=(32, 64, 128), seed=0)
    counts = {build_model(cfg).param_count for _ in range(3)}
    assert len(counts) == 1
    assert counts.pop() > 0


def test_no_fully_connected_layers():
    model = build_model(ModelConfig())
    kinds = {kind for _, kind, _ in model.layer_summary()}
    assert kinds <= {
        "conv2d",
        "transposed_conv2d",
        "transposed_conv2d+skip_add",
        "activation",
        "bilinear_resize",
    }
    for name in model.params:
        assert model.params[name].ndim in (1, 4)  # kernels and biases only


def test_zero_image_zero_init_head_gives_bias_surface():
    cfg = ModelConfig(input_side=32, grid_side=9, widths=(4, 8), init="zeros", seed=0)
    model = build_model(cfg)
    bias = np.array([0.25, -0.5, 2.0])
    model.params["head.b"].data = bias.astype(model.cfg.np_dtype)
    out = model.forward(np.zeros((2, 3, 32, 32))).data
    np.testing.assert_allclose(out, np.broadcast_to(bias, out.shape), atol=1e-12)


def test_base_surface_added_to_offsets():
    cfg = ModelConfig(input_side=32, grid_side=9, widths=(4, 8), init="zeros", seed=0)
    base = np.random.default_rng(1).standard_normal((9, 9, 3))
    model = build_model(cfg, base)
    out = model.forward(np.zeros((1, 3, 32, 32))).data
    np.testing.assert_allclose(out[0], base, atol=1e-12)


def test_wrong_input_side_rejected():
    model = build_model(ModelConfig(input_side=64, grid_side=17))
    with pytest.raises(DimensionError):
        model.forward(np.zeros((1, 3, 32, 32)))


def test_network_end_to_end_gradcheck():
    res = gradcheck.run_check("network", trials=3, seed=0)
    assert res.passed, res.line()


def test_removing_skips_changes_output():
    rng = np.random.default_rng(2)
    x = rng.random((1, 3, 32, 32))
    with_skips = build_model(ModelConfig(input_side=32, grid_side=9, widths=(4, 8), seed=7))
    without = build_model(
        ModelConfig(input_side=32, grid_side=9, widths=(4, 8), seed=7, skips=())
    )
    assert not np.allclose(with_skips.forward(x).data, without.forward(x).data)


def test_invalid_skip_pairs_rejected():
    with pytest.raises(ConfigError, match="skip"):
        ModelConfig(widths=(8, 16, 32), skips=((0, 1),))
    with pytest.raises(ConfigError, match="skip"):
        ModelConfig(widths=(8, 16, 32), skips=((0, 3),))


def test_linearity_with_identity_activation_and_no_skips():
    cfg = ModelConfig(
        input_side=32, grid_side=9, widths=(4, 8), activation="identity",
        skips=(), seed=3,
    )
    model = build_model(cfg)
    rng = np.random.default_rng(4)
    x = rng.standard_normal((1, 3, 32, 32))
    fx = model.forward(x).data
    f0 = model.forward(np.zeros_like(x)).data
    for a in (2.0, -0.7):
        lhs = model.forward(a * x).data
        rhs = a * fx - (a - 1.0) * f0
        np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-11)


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(input_side=60)  # not divisible by 2^stages
    with pytest.raises(ConfigError):
        ModelConfig(input_side=16, grid_side=32)  # decoder smaller than grid
    with pytest.raises(ConfigError):
        ModelConfig(activation="gelu")


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    cfg = ModelConfig(input_side=32, grid_side=9, widths=(4, 8), seed=9)
    base = np.random.default_rng(5).standard_normal((9, 9, 3))
    model = build_model(cfg, base)
    x = np.random.default_rng(6).random((2, 3, 32, 32))
    before = model.forward(x).data.copy()
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path, step=42, optimizer_state={"m/w": np.ones(3)})
    loaded, step, optim = load_checkpoint(path)
    assert step == 42
    assert sorted(optim) == ["m/w"]
    np.testing.assert_array_equal(loaded.forward(x).data, before)
    np.testing.assert_array_equal(loaded.base_surface, model.base_surface)


def test_checkpoint_truncation_detected(tmp_path):
    model = build_model(ModelConfig(input_side=32, grid_side=9, widths=(4, 8)))
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 17])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_corruption_detected(tmp_path):
    model = build_model(ModelConfig(input_side=32, grid_side=9, widths=(4, 8)))
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_grid_mismatch(tmp_path):
    model = build_model(ModelConfig(input_side=32, grid_side=9, widths=(4, 8)))
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    with pytest.raises(CheckpointError, match="grid"):
        load_checkpoint(path, expect_grid_side=17)


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bogus.ckpt"
    path.write_bytes(b"NOPE" + b"\0" * 64)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_forward_accepts_prebuilt_tensor_and_matches_numpy_input():
    model = build_model(ModelConfig(input_side=32, grid_side=9, widths=(4, 8), seed=1))
    x = np.random.default_rng(7).random((1, 3, 32, 32))
    a = model.forward(x).data
    b = model.forward(ad.Tensor(x.astype(np.float64))).data
    np.testing.assert_array_equal(a, b)
