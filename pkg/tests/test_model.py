import math

import numpy as np
import pytest
import torch

from hybridseg.checkpoint import (
    CheckpointError,
    config_from_dict,
    config_to_dict,
    load_checkpoint,
    save_checkpoint,
)
from hybridseg.checks import finite_difference_check, micro_model_config
from hybridseg.cnn import CnnConfig
from hybridseg.model import (
    HybridSegNet,
    ModelConfig,
    argmax_labels,
    predict_volume,
    segmentation_loss,
    soft_dice_loss,
)
from hybridseg.swin import SwinEncoderConfig
from hybridseg.volume import Volume


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)


def zero_transformer_path(model: HybridSegNet):
    with torch.no_grad():
        for p in model.swin.parameters():
            p.zero_()
        for p in model.fusion.parameters():
            p.zero_()


class TestModelConfig:
    def test_mode_validated(self):
        with pytest.raises(ValueError, match="mode"):
            ModelConfig(mode="both")

    def test_incompatible_depths_rejected(self):
        with pytest.raises(ValueError, match="deepest tap"):
            ModelConfig(cnn=CnnConfig(levels=4))

    def test_tap_levels(self):
        assert ModelConfig().tap_levels() == [1, 2, 3, 4]
        assert micro_model_config().tap_levels() == [1, 2]


class TestForward:
    def test_zeroed_transformer_equals_cnn_only(self):
        import dataclasses
        hybrid = HybridSegNet(micro_model_config())
        zero_transformer_path(hybrid)
        cnn_only = HybridSegNet(micro_model_config())
        cnn_only.load_state_dict(hybrid.state_dict())
        cnn_only.config = dataclasses.replace(hybrid.config, mode="cnn_only")
        x = torch.rand(1, 1, 8, 8, 8)
        with torch.no_grad():
            assert torch.equal(hybrid(x), cnn_only(x))

    def test_batch_shape_contract(self):
        model = HybridSegNet(micro_model_config(num_classes=3))
        logits = model(torch.rand(2, 1, 8, 8, 8))
        assert logits.shape == (2, 3, 8, 8, 8)

    def test_determinism(self):
        model = HybridSegNet(micro_model_config())
        x = torch.rand(1, 1, 8, 8, 8)
        with torch.no_grad():
            assert torch.equal(model(x), model(x))

    def test_swin_only_differs_but_same_shape(self):
        import dataclasses
        model = HybridSegNet(micro_model_config())
        x = torch.rand(1, 1, 8, 8, 8)
        with torch.no_grad():
            hybrid_out = model(x)
            model.config = dataclasses.replace(model.config, mode="swin_only")
            swin_out = model(x)
        assert swin_out.shape == hybrid_out.shape
        assert not torch.equal(swin_out, hybrid_out)


class TestLoss:
    def test_strong_onehot_small_loss(self):
        labels = torch.randint(0, 2, (1, 4, 4, 4))
        logits = torch.nn.functional.one_hot(labels, 2).movedim(-1, 1).float() * 50
        assert segmentation_loss(logits, labels).item() < 0.01

    def test_uniform_ce_is_ln2(self):
        logits = torch.zeros(1, 2, 2, 2, 2)
        labels = torch.tensor([0, 1, 0, 1, 1, 0, 1, 0]).reshape(1, 2, 2, 2)
        total = segmentation_loss(logits, labels)
        dice_part = soft_dice_loss(logits, labels)
        ce_part = 2 * total - dice_part
        assert abs(ce_part.item() - math.log(2)) < 1e-6

    def test_permutation_invariant_over_voxels(self):
        logits = torch.randn(1, 3, 2, 2, 2)
        labels = torch.randint(0, 3, (1, 2, 2, 2))
        flat_logits = logits.reshape(1, 3, 8)
        flat_labels = labels.reshape(1, 8)
        perm = torch.randperm(8)
        a = segmentation_loss(flat_logits.reshape(1, 3, 2, 2, 2), labels)
        b = segmentation_loss(flat_logits[:, :, perm].reshape(1, 3, 2, 2, 2),
                              flat_labels[:, perm].reshape(1, 2, 2, 2))
        assert abs(a.item() - b.item()) < 1e-6

    def test_label_out_of_range(self):
        logits = torch.randn(1, 2, 2, 2, 2)
        with pytest.raises(ValueError, match="labels"):
            segmentation_loss(logits, torch.full((1, 2, 2, 2), 5))

    def test_non_negative(self):
        logits = torch.randn(1, 2, 4, 4, 4)
        labels = torch.randint(0, 2, (1, 4, 4, 4))
        assert segmentation_loss(logits, labels).item() >= 0


class TestPredict:
    def test_margin_class(self):
        logits = np.zeros((3, 2, 2, 2))
        logits[1] = 5.0
        assert (argmax_labels(logits) == 1).all()

    def test_constant_shift_invariance(self):
        logits = np.random.default_rng(0).standard_normal((3, 4, 4, 4))
        assert np.array_equal(argmax_labels(logits), argmax_labels(logits + 7.25))

    def test_tie_breaks_to_lowest_class(self):
        logits = np.ones((4, 2, 2, 2))
        assert (argmax_labels(logits) == 0).all()

    def test_predict_volume_shape_and_spacing(self):
        model = HybridSegNet(micro_model_config(num_classes=3))
        vol = Volume(np.random.default_rng(0).random((8, 8, 8), dtype=np.float32),
                     spacing=(1.0, 1.0, 2.0))
        pred = predict_volume(model, vol)
        assert pred.shape == (8, 8, 8)
        assert pred.spacing == (1.0, 1.0, 2.0)
        assert pred.values.max() < 3


class TestCheckpoint:
    def test_roundtrip_bit_identical_forward(self, tmp_path):
        model = HybridSegNet(micro_model_config())
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model, step=42, seed=7, metadata={"note": "test"})
        loaded, header = load_checkpoint(path)
        assert header["step"] == 42
        assert header["seed"] == 7
        x = torch.rand(1, 1, 8, 8, 8)
        with torch.no_grad():
            assert torch.equal(model(x), loaded(x))

    def test_config_dict_roundtrip(self):
        cfg = ModelConfig(swin=SwinEncoderConfig(embed_dim=12, heads=(2, 4, 6, 12)),
                          cnn=CnnConfig(num_classes=4), mode="hybrid")
        assert config_from_dict(config_to_dict(cfg)) == cfg

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOTACKPTxxxx")
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_truncated(self, tmp_path):
        model = HybridSegNet(micro_model_config())
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model)
        raw = path.read_bytes()
        path.write_bytes(raw[:len(raw) - 100])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)


class TestGradients:
    def test_full_micro_model_matches_finite_differences(self):
        model = HybridSegNet(micro_model_config()).double()
        vol = torch.rand(1, 1, 8, 8, 8, dtype=torch.float64)
        labels = torch.randint(0, 2, (1, 8, 8, 8))
        params = [p for p in model.parameters() if p.requires_grad]
        err = finite_difference_check(
            params, lambda: segmentation_loss(model(vol), labels), num_samples=50)
        assert err < 1e-4
