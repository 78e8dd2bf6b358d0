import numpy as np
import pytest

from ssnet.ssn import SSNModel
from ssnet.tensor import DimensionError, Tensor
from ssnet.zoo import (
    ResidualBlock,
    TinyResidual,
    TinyResidualConfig,
    TinyViT,
    TinyViTConfig,
    build_model,
    model_config_from_dict,
)


class TestTinyResidual:
    def test_io_contract(self, rng):
        model = TinyResidual()
        assert model(Tensor(rng.random((2, 5, 64, 64)))).shape == (2, 12, 3)

    def test_zero_branch_is_identity(self, rng):
        block = ResidualBlock(4, seed=1)
        block.zero_branch()
        x = rng.standard_normal((1, 4, 5, 5))
        np.testing.assert_array_equal(block(Tensor(x)).data, x)

    def test_too_many_stages(self):
        with pytest.raises(ValueError):
            TinyResidual(TinyResidualConfig(channels=[4, 4, 4, 4, 4, 4], raster_size=32))


class TestTinyViT:
    def test_io_contract(self, rng):
        model = TinyViT()
        assert model(Tensor(rng.random((5, 64, 64)))).shape == (12, 3)

    def test_token_count(self, rng):
        model = TinyViT(TinyViTConfig(patch_size=16))
        assert model.tokens(Tensor(rng.random((1, 5, 64, 64)))).shape == (1, 16, 32)

    def test_ffn_hidden_width(self):
        model = TinyViT(TinyViTConfig(dim=24, mlp_ratio=4, heads=2))
        assert model.encoder[0].ffn.hidden_dim == 96

    def test_patch_must_divide_raster(self):
        with pytest.raises(DimensionError):
            TinyViT(TinyViTConfig(patch_size=7))

    def test_positional_embedding_breaks_permutation_symmetry(self, rng):
        model = TinyViT()
        x = rng.random((1, 5, 64, 64))
        flipped = x[:, :, ::-1, :].copy()
        assert not np.allclose(model(Tensor(x)).data, model(Tensor(flipped)).data)


class TestBuild:
    @pytest.mark.parametrize("kind,cls", [("ssn", SSNModel), ("tiny-residual", TinyResidual), ("tiny-vit", TinyViT)])
    def test_build_from_dict(self, kind, cls):
        model = build_model({"kind": kind})
        assert isinstance(model, cls)
        assert build_model(model.config.to_dict()).config == model.config

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown model kind"):
            model_config_from_dict({"kind": "resnet-152"})

    def test_unknown_field(self):
        with pytest.raises(TypeError):
            model_config_from_dict({"kind": "tiny-vit", "depthh": 3})

    def test_baselines_are_smaller_than_ssn(self):
        ssn = SSNModel().num_parameters()
        assert TinyResidual().num_parameters() < ssn
        assert TinyViT().num_parameters() < ssn
