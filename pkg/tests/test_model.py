import pytest
import torch

from changedet import AblationConfig, ChangeNet, ModelConfig, apply_ablation
from changedet.config import EncoderConfig
from changedet.validation import DimensionError, ShapeMismatchError


def small_model(**kwargs) -> ChangeNet:
    torch.manual_seed(0)
    cfg = ModelConfig(encoder=EncoderConfig(), **kwargs)
    return ChangeNet(cfg)


class TestForward:
    def test_prediction_set_shapes(self):
        model = small_model()
        preds = model(torch.randn(2, 3, 64, 64), torch.randn(2, 3, 64, 64))
        for p in preds:
            assert p.shape == (2, 1, 64, 64)

    def test_probabilities_in_unit_interval(self):
        model = small_model()
        with torch.no_grad():
            preds = model(torch.randn(1, 3, 64, 64), torch.randn(1, 3, 64, 64))
        for p in preds:
            assert float(p.min()) >= 0.0 and float(p.max()) <= 1.0

    def test_shape_mismatch_raises(self):
        model = small_model()
        with pytest.raises(ShapeMismatchError):
            model(torch.randn(1, 3, 64, 64), torch.randn(1, 3, 96, 96))

    def test_indivisible_size_raises(self):
        model = small_model()
        with pytest.raises(DimensionError, match="divisible"):
            model(torch.randn(1, 3, 100, 100), torch.randn(1, 3, 100, 100))


class TestSymmetry:
    def test_swapping_inputs_keeps_probabilities(self):
        model = small_model().eval()
        t1 = torch.randn(2, 3, 64, 64)
        t2 = torch.randn(2, 3, 64, 64)
        with torch.no_grad():
            ab = model(t1, t2)
            ba = model(t2, t1)
        for pa, pb in zip(ab, ba):
            assert torch.allclose(pa, pb, atol=1e-6)

    def test_identical_inputs_give_uniform_logit_map(self):
        """|a-b| collapses to zeros, so predictions depend only on biases and
        are spatially constant up to border effects of the convolutions."""
        model = small_model().eval()
        x = torch.randn(1, 3, 64, 64)
        with torch.no_grad():
            p1 = model(x, x.clone()).p1
        interior = p1[0, 0, 16:-16, 16:-16]
        assert float(interior.std()) < 1e-4


class TestWeightSharing:
    def test_both_temporal_passes_use_the_same_encoder(self):
        """The two inputs must go through one parameter set, also after a
        gradient update."""
        model = small_model()
        seen = []
        handle = model.encoder.register_forward_pre_hook(
            lambda module, args: seen.append(module))

        t1, t2 = torch.randn(1, 3, 64, 64), torch.randn(1, 3, 64, 64)
        preds = model(t1, t2)
        sum(p.sum() for p in preds).backward()
        opt = torch.optim.SGD(model.parameters(), lr=0.1)
        opt.step()
        model(t1, t2)
        handle.remove()

        assert len(seen) == 4  # two passes before the update, two after
        assert all(m is model.encoder for m in seen)


class TestPredict:
    def test_binary_uint8_output(self):
        model = small_model()
        out = model.predict(torch.randn(2, 3, 64, 64), torch.randn(2, 3, 64, 64))
        assert out.dtype == torch.uint8
        assert set(out.unique().tolist()) <= {0, 1}

    def test_threshold_is_respected(self):
        model = small_model()
        model.threshold = 1.0 - 1e-9  # nothing should clear this bar
        out = model.predict(torch.randn(1, 3, 64, 64), torch.randn(1, 3, 64, 64))
        assert not out.any()

    def test_predict_restores_training_mode(self):
        model = small_model()
        model.train()
        model.predict(torch.randn(1, 3, 64, 64), torch.randn(1, 3, 64, 64))
        assert model.training


class TestAblations:
    @pytest.mark.parametrize("toggle", ["use_csa", "use_msf", "use_esa"])
    def test_single_component_removal_runs(self, toggle):
        ablation = AblationConfig(**{toggle: False})
        cfg = apply_ablation(ModelConfig(), ablation)
        model = ChangeNet(cfg)
        preds = model(torch.randn(1, 3, 64, 64), torch.randn(1, 3, 64, 64))
        for p in preds:
            assert p.shape == (1, 1, 64, 64)

    def test_no_csa_drops_aggregation_module(self):
        cfg = apply_ablation(ModelConfig(), AblationConfig(use_csa=False))
        model = ChangeNet(cfg)
        assert model.aggregate is None
        full = ChangeNet(ModelConfig())
        assert full.aggregate is not None

    def test_all_off_is_plain_difference_decoder(self):
        cfg = apply_ablation(ModelConfig(), AblationConfig(
            use_csa=False, use_msf=False, use_esa=False))
        model = ChangeNet(cfg)
        assert model.aggregate is None
        assert not model.decoder.use_msf and not model.decoder.use_esa
        preds = model(torch.randn(1, 3, 64, 64), torch.randn(1, 3, 64, 64))
        assert preds.p1.shape == (1, 1, 64, 64)

    def test_removals_shrink_parameter_count(self):
        from changedet import count_parameters

        full = count_parameters(ChangeNet(ModelConfig()))
        for toggle in ("use_csa", "use_msf", "use_esa"):
            ablated = ChangeNet(apply_ablation(ModelConfig(),
                                               AblationConfig(**{toggle: False})))
            assert count_parameters(ablated) < full, toggle
