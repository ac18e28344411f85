"""Graph construction, shape fidelity, freezing, and forward-pass tests."""

import numpy as np
import pytest

from fundusdl import model as M
from fundusdl.errors import ConfigError, DimensionError
from fundusdl.tensor import Tensor

RNG = np.random.default_rng(7)


def conv_param_count(k, cin, cout):
    return (k * k * cin + 1) * cout


def vgg16_conv_oracle():
    """Independent arithmetic: sum (3*3*cin + 1)*cout over the 13 convs."""
    total = 0
    cin = 3
    for n_convs, cout in ((2, 64), (2, 128), (3, 256), (3, 512), (3, 512)):
        for _ in range(n_convs):
            total += conv_param_count(3, cin, cout)
            cin = cout
    return total


PUBLISHED_VGG_CHAIN = [
    ("block1_conv1", (224, 224, 64)),
    ("block1_conv2", (224, 224, 64)),
    ("block1_pool", (112, 112, 64)),
    ("block2_conv1", (112, 112, 128)),
    ("block2_conv2", (112, 112, 128)),
    ("block2_pool", (56, 56, 128)),
    ("block3_conv1", (56, 56, 256)),
    ("block3_conv2", (56, 56, 256)),
    ("block3_pool", (28, 28, 256)),
    ("block4_conv1", (28, 28, 512)),
    ("block4_conv2", (28, 28, 512)),
    ("block4_conv3", (28, 28, 512)),
    ("block4_pool", (14, 14, 512)),
    ("block5_conv1", (14, 14, 512)),
    ("block5_conv2", (14, 14, 512)),
    ("block5_conv3", (14, 14, 512)),
]


class TestVgg16Base:
    def test_layer_census(self):
        g = M.build_vgg16_base()
        kinds = [s.kind for s in g.layers]
        assert kinds.count("conv") == 13
        assert kinds.count("maxpool") == 5
        assert len(g.layers) == 19  # input + 13 conv + 5 pool

    def test_shape_chain_matches_published_table(self):
        g = M.build_vgg16_base()
        shapes = dict(M.infer_shapes(g))
        for name, want in PUBLISHED_VGG_CHAIN:
            assert shapes[name] == want, name
        assert shapes["block5_pool"] == (7, 7, 512)

    def test_conv_base_parameter_count(self):
        g = M.build_vgg16_base()
        assert M.parameter_count(g) == vgg16_conv_oracle() == 14_714_688


class TestHead:
    def test_head_adds_25089_trainable_params(self):
        base = M.build_vgg16_base()
        g = M.attach_head(base)
        assert M.parameter_count(g, names=["head_dense"]) == 25088 + 1
        assert dict(M.infer_shapes(g))["head_reshape"] == (25088,)

    def test_forward_yields_probability(self):
        g = M.attach_head(M.build_vgg16_base(input_shape=(32, 32, 3)))
        M.init_weights(g, np.random.default_rng(0))
        out = M.forward(g, RNG.random((32, 32, 3), dtype=np.float32), mode="infer")
        assert out.shape == (1,)
        assert 0.0 < out.data[0] < 1.0

    def test_inference_is_deterministic_dropout_identity(self):
        g = M.attach_head(M.build_vgg16_base(input_shape=(32, 32, 3)))
        M.init_weights(g, np.random.default_rng(0))
        x = RNG.random((32, 32, 3), dtype=np.float32)
        a = M.forward(g, x, mode="infer")
        b = M.forward(g, x, mode="infer")
        assert np.array_equal(a.data, b.data)

    def test_head_needs_feature_map(self):
        with pytest.raises(DimensionError):
            M.attach_head(M.build_sequential_v1((12, 14, 3)))


class TestFreeze:
    def test_default_policy_trainable_set(self):
        g = M.build_vgg16_transfer()
        assert g.trainable_parametric_names() == [
            "block5_conv1", "block5_conv2", "block5_conv3", "head_dense",
        ]

    def test_trainable_parameter_count_under_default_policy(self):
        g = M.build_vgg16_transfer()
        per_block5_conv = conv_param_count(3, 512, 512)
        assert M.parameter_count(g, trainable_only=True) == 3 * per_block5_conv + 25089
        assert M.parameter_count(g, trainable_only=True) == 7_104_513

    def test_first_n_zero_keeps_everything_trainable(self):
        g = M.build_vgg16_transfer(freeze=None)
        M.freeze_prefix(g, first_n=0)
        assert all(s.trainable for s in g.layers)

    def test_first_n_14_matches_prose_policy_on_parametric_layers(self):
        a = M.build_vgg16_transfer(freeze=None)
        M.freeze_prefix(a, first_n=14)
        b = M.build_vgg16_transfer(freeze="block4_pool")
        assert a.trainable_parametric_names() == b.trainable_parametric_names()

    def test_unknown_block_name(self):
        g = M.build_vgg16_transfer(freeze=None)
        with pytest.raises(ConfigError):
            M.freeze_prefix(g, until_block="block9_pool")

    def test_freeze_syncs_materialized_store(self):
        g = M.build_vgg16_transfer(freeze=None, input_shape=(32, 32, 3))
        M.init_weights(g, np.random.default_rng(0))
        M.freeze_prefix(g, until_block="block4_pool")
        assert g.store["block1_conv1"].trainable is False
        assert g.store["block1_conv1"].weights.requires_grad is False
        assert g.store["block5_conv1"].trainable is True


class TestSequentialV1:
    def test_default_input_shape_accepted(self):
        g = M.build_sequential_v1()
        assert g.input_shape == (605, 700, 3)

    def test_flatten_size_after_pool(self):
        shapes = dict(M.infer_shapes(M.build_sequential_v1()))
        assert shapes["pool1"] == (302, 350, 64)
        assert shapes["flatten"] == (302 * 350 * 64,)
        assert shapes["flatten"] == (6_764_800,)

    def test_output_is_probability(self):
        g = M.build_sequential_v1((12, 14, 3))
        M.init_weights(g, np.random.default_rng(1))
        out = M.forward(g, RNG.random((12, 14, 3), dtype=np.float32), mode="infer")
        assert 0.0 < out.data[0] < 1.0


class TestFunctionalV2:
    def test_lint_warnings_flag_dead_dropouts_and_identity_pools(self):
        g = M.build_functional_v2()
        text = " ".join(g.lint_warnings)
        assert "never consumed" in text
        assert "(1,1)" in text or "1x1" in text
        assert len(g.lint_warnings) == 2

    def test_dead_dropouts_not_in_effective_graph(self):
        g = M.build_functional_v2()
        drops = [s for s in g.layers if s.kind == "dropout"]
        assert [d.hyperparams["rate"] for d in drops] == [0.30, 0.50]

    def test_shape_chain(self):
        shapes = dict(M.infer_shapes(M.build_functional_v2()))
        assert shapes["conv1"] == (254, 254, 16)
        assert shapes["conv2"] == (252, 252, 32)
        assert shapes["pad1"] == (254, 254, 32)
        assert shapes["pool1"] == (127, 127, 32)
        assert shapes["pool2"] == (123, 123, 64)  # 1x1 pool is identity
        assert shapes["flatten"] == (120 * 120 * 128,)

    def test_parameter_count_matches_arithmetic_oracle(self):
        g = M.build_functional_v2()
        expected = (
            conv_param_count(3, 3, 16)
            + conv_param_count(3, 16, 32) + 2 * 32
            + conv_param_count(3, 32, 32)
            + conv_param_count(3, 32, 64) + 2 * 64
            + conv_param_count(3, 64, 128)
            + (2 * 2 * 128 + 1) * 128 + 2 * 128
            + (120 * 120 * 128 + 1) * 1
        )
        assert M.parameter_count(g) == expected

    def test_l2_settings_on_designated_convs(self):
        g = M.build_functional_v2()
        with_l2 = [s.name for s in g.layers if s.hyperparams.get("l2")]
        assert with_l2 == ["conv3", "conv4", "conv5"]
        assert all(g.layer(n).hyperparams["l2"] == 0.01 for n in with_l2)

    def test_forward_scalar_probability(self):
        g = M.build_functional_v2((24, 24, 3))
        M.init_weights(g, np.random.default_rng(2))
        out = M.forward(g, RNG.random((24, 24, 3), dtype=np.float32), mode="infer")
        assert 0.0 < out.data[0] < 1.0


class TestForward:
    def test_vgg16_224_forward_scalar(self):
        g = M.build_vgg16_transfer()
        M.init_weights(g, np.random.default_rng(3))
        out = M.forward(g, RNG.random((224, 224, 3), dtype=np.float32), mode="infer")
        assert out.shape == (1,)
        assert 0.0 < out.data[0] < 1.0

    def test_shape_mismatch_names_layer(self):
        g = M.build_functional_v2((24, 24, 3))
        M.init_weights(g, np.random.default_rng(0))
        with pytest.raises(DimensionError) as err:
            M.forward(g, np.zeros((10, 10, 3), dtype=np.float32))
        assert "input" in str(err.value)

    def test_forward_without_weights_is_helpful(self):
        g = M.build_functional_v2((24, 24, 3))
        with pytest.raises(ConfigError) as err:
            M.forward(g, np.zeros((24, 24, 3), dtype=np.float32))
        assert "init_weights" in str(err.value)

    def test_train_mode_needs_rng_for_dropout(self):
        g = M.build_functional_v2((24, 24, 3))
        M.init_weights(g, np.random.default_rng(0))
        with pytest.raises(ConfigError):
            M.forward(g, np.zeros((24, 24, 3), dtype=np.float32), mode="train")

    def test_batched_and_single_agree(self):
        g = M.build_functional_v2((24, 24, 3))
        M.init_weights(g, np.random.default_rng(0))
        x = RNG.random((2, 24, 24, 3), dtype=np.float32)
        yb = M.forward(g, x, mode="infer")
        y0 = M.forward(g, x[0], mode="infer")
        assert yb.shape == (2, 1)
        assert np.allclose(yb.data[0], y0.data, atol=1e-6)

    def test_duplicate_names_rejected(self):
        with pytest.raises(ConfigError):
            M.ModelGraph(layers=[
                M.LayerSpec("input", "input", {"shape": (4, 4, 3)}),
                M.LayerSpec("a", "flatten", {}),
                M.LayerSpec("a", "dense", {"units": 1}),
            ])

    def test_static_shape_check_fires_at_build_time(self):
        with pytest.raises(DimensionError):
            M.ModelGraph(layers=[
                M.LayerSpec("input", "input", {"shape": (4, 4, 3)}),
                M.LayerSpec("dense", "dense", {"units": 1}),  # needs flat input
            ])

    def test_regularization_loss_sums_designated_layers(self):
        g = M.build_functional_v2((24, 24, 3))
        M.init_weights(g, np.random.default_rng(0))
        reg = M.regularization_loss(g)
        oracle = sum(
            0.01 * float(np.sum(g.store[n].weights.data.astype(np.float64) ** 2))
            for n in ("conv3", "conv4", "conv5")
        )
        assert abs(reg.item() - oracle) < 1e-6
