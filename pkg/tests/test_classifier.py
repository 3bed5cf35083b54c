import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from fedsim.models.dataset import Batch, DatasetView
from fedsim.models.params import ParamSet
from fedsim.schemas.dataset import DatasetManifest, ModalitySpec
from fedsim.schemas.experiment import EncoderConfig, FusionConfig, ModelConfig
from fedsim.services.classifier import (
    MultimodalClassifier,
    _attention_forward,
    build_model,
    build_unimodal,
    fuse_attention,
    fuse_concat,
    load_checkpoint,
    save_checkpoint,
)
from fedsim.services.datastore import generate_synthetic, make_batch
from fedsim.services.numerics import conv1d_forward, finite_diff_check, gru_forward, relu_forward
from fedsim.utils.exceptions import ConfigError, ContractError, DegenerateAttentionError, DimensionError

from .conftest import tiny_model_config, tiny_spec


def short_manifest(length: int = 3) -> DatasetManifest:
    return DatasetManifest(
        name="short",
        modalities=[
            ModalitySpec(name="audio", dim=2, max_len=length, modality_class="signal"),
            ModalitySpec(name="video", dim=3, max_len=length, modality_class="embedding"),
        ],
        num_classes=3,
    )


def random_batch(rng, size: int = 3, length: int = 3, video_available=None) -> Batch:
    video_available = np.ones(size, dtype=bool) if video_available is None else np.asarray(video_available)
    video = rng.standard_normal((size, length, 3)) * video_available[:, None, None]
    return Batch(
        inputs={"audio": rng.standard_normal((size, length, 2)), "video": video},
        lengths={"audio": np.full(size, length), "video": np.where(video_available, length, 0)},
        available={"audio": np.ones(size, dtype=bool), "video": video_available},
        labels=np.arange(size) % 3,
    )


def padded_batch(rng, size: int, max_len: int, min_audio: int) -> Batch:
    """Lote de longitudes variables con relleno de ceros al final."""
    audio_lengths = rng.integers(min_audio, max_len + 1, size)
    video_lengths = rng.integers(1, max_len + 1, size)
    video_available = rng.random(size) < 0.7
    audio = rng.standard_normal((size, max_len, 2)) * (np.arange(max_len)[None, :, None] < audio_lengths[:, None, None])
    video = rng.standard_normal((size, max_len, 3)) * (np.arange(max_len)[None, :, None] < video_lengths[:, None, None])
    video *= video_available[:, None, None]
    return Batch(
        inputs={"audio": audio, "video": video},
        lengths={"audio": audio_lengths, "video": np.where(video_available, video_lengths, 0)},
        available={"audio": np.ones(size, dtype=bool), "video": video_available},
        labels=rng.integers(0, 3, size),
    )


def attention_reference(h, W, b, c):
    outputs = []
    for k in range(c.shape[0]):
        u = np.tanh(h @ W.T + b)
        logits = u @ c[k]
        weights = np.exp(logits - logits.max())
        weights /= weights.sum()
        outputs.append(weights @ h)
    return np.concatenate(outputs)


class TestEncodeModality:
    def test_unavailable_is_masked_zero_step(self, tiny_manifest):
        model = MultimodalClassifier(tiny_manifest, tiny_model_config())
        rep, mask = model.encode_modality("audio", np.ones((6, 2)), available=False)
        assert_array_equal(rep, np.zeros((1, 4)))
        assert_array_equal(mask, [False])

    def test_rnn_only_zero_weights(self, tiny_manifest):
        model = MultimodalClassifier(tiny_manifest, tiny_model_config())
        model = model.with_params(model.params.zeros_like())
        rep, mask = model.encode_modality("video", np.ones((4, 3)))
        assert_array_equal(rep, 0.0)
        assert mask.all()

    def test_conv_rnn_matches_manual_composition(self, rng):
        manifest = short_manifest(length=12)
        config = ModelConfig(encoder=EncoderConfig(conv_filters=[3, 4, 2], kernel=3, hidden=4),
                             fusion=FusionConfig(scheme="concat"), classifier_hidden=5, dropout=0.0)
        model = MultimodalClassifier(manifest, config, seed=2)
        x = rng.standard_normal((12, 2))
        rep, mask = model.encode_modality("audio", x)

        params = model.params
        h = x
        for i in range(3):
            h = relu_forward(conv1d_forward(h, params[f"enc.audio.conv{i}.weight"], params[f"enc.audio.conv{i}.bias"]))
        expected = gru_forward(h, params.subset("enc.audio.gru."), np.zeros(4))
        assert rep.shape == (6, 4) and mask.all()
        assert_allclose(rep, expected, atol=1e-12)

    def test_unknown_modality(self, tiny_manifest):
        model = MultimodalClassifier(tiny_manifest, tiny_model_config())
        with pytest.raises(ConfigError):
            model.encode_modality("text", np.ones((3, 2)))


class TestFuseConcat:
    def test_mean_then_concat(self):
        fused = fuse_concat([np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[0.0, 0.0]])],
                            [np.array([True, True]), np.array([True])])
        assert_array_equal(fused, [2.0, 3.0, 0.0, 0.0])

    def test_single_modality(self, rng):
        rep = rng.standard_normal((5, 3))
        assert_allclose(fuse_concat([rep], [np.ones(5, dtype=bool)]), rep.mean(axis=0), atol=1e-12)

    def test_masked_modality_is_zero_block(self):
        fused = fuse_concat([np.array([[1.0, 1.0]]), np.array([[5.0, 7.0]])],
                            [np.array([True]), np.array([False])])
        assert_array_equal(fused, [1.0, 1.0, 0.0, 0.0])

    def test_masked_steps_ignored(self):
        fused = fuse_concat([np.array([[2.0], [4.0], [100.0]])], [np.array([True, True, False])])
        assert_array_equal(fused, [3.0])


class TestFuseAttention:
    def params(self, rng, hidden=4, heads=2):
        return {
            "W": rng.standard_normal((hidden, hidden)),
            "b": rng.standard_normal(hidden),
            "c": rng.standard_normal((heads, hidden)),
        }

    def test_zero_context_is_mean_of_unmasked(self, rng):
        params = self.params(rng)
        params["c"] = np.zeros((2, 4))
        reps = [rng.standard_normal((3, 4)), rng.standard_normal((2, 4))]
        masks = [np.array([True, False, True]), np.array([True, False])]
        expected = np.stack([reps[0][0], reps[0][2], reps[1][0]]).mean(axis=0)
        assert_allclose(fuse_attention(reps, masks, params, heads=2), np.tile(expected, 2), atol=1e-12)

    def test_single_unmasked_row(self, rng):
        params = self.params(rng)
        reps = [rng.standard_normal((3, 4)) * 50, rng.standard_normal((2, 4))]
        masks = [np.array([False, False, False]), np.array([False, True])]
        assert_allclose(fuse_attention(reps, masks, params, heads=2), np.tile(reps[1][1], 2), atol=1e-12)

    def test_matches_formula(self, rng):
        params = self.params(rng)
        h = rng.standard_normal((3, 4))
        fused = fuse_attention([h[:2], h[2:]], [np.ones(2, dtype=bool), np.ones(1, dtype=bool)], params, heads=2)
        expected = attention_reference(h, params["W"], params["b"], params["c"])
        assert_allclose(fused, expected, rtol=0, atol=1e-12)

    def test_invariant_to_masked_values(self, rng):
        params = self.params(rng)
        masks = [np.array([True, False, True]), np.array([False, True])]
        reps = [rng.standard_normal((3, 4)), rng.standard_normal((2, 4))]
        changed = [reps[0].copy(), reps[1].copy()]
        changed[0][1] = 1e6
        changed[1][0] = -3.0
        assert_array_equal(fuse_attention(reps, masks, params, 2), fuse_attention(changed, masks, params, 2))

    def test_weights_sum_to_one(self, rng):
        params = self.params(rng, heads=3)
        mask = np.array([[True, True, False, True, False]])
        _, cache = _attention_forward(rng.standard_normal((1, 5, 4)), mask, params["W"], params["b"], params["c"])
        weights = cache["a"][0]
        assert np.abs(weights.sum(axis=0) - 1.0).max() <= 1e-12
        assert_array_equal(weights[~mask[0]], 0.0)

    def test_all_masked(self, rng):
        with pytest.raises(DegenerateAttentionError):
            fuse_attention([np.ones((2, 4))], [np.zeros(2, dtype=bool)], self.params(rng), heads=2)

    def test_head_count_mismatch(self, rng):
        with pytest.raises(DimensionError):
            fuse_attention([np.ones((2, 4))], [np.ones(2, dtype=bool)], self.params(rng, heads=2), heads=3)


class TestForwardLoss:
    def test_untrained_loss_near_uniform(self):
        dataset = generate_synthetic(tiny_spec(num_classes=4))
        config = ModelConfig(encoder=EncoderConfig(conv_filters=[8], kernel=3, hidden=32),
                             fusion=FusionConfig(heads=2), classifier_hidden=64, dropout=0.0)
        model = MultimodalClassifier(dataset.manifest, config, seed=0)
        batch = make_batch(DatasetView.of(dataset), np.arange(32))
        loss, logits = model.forward_loss(batch)
        assert logits.shape == (32, 4)
        assert abs(loss - np.log(4)) < 0.2

    def test_eval_is_deterministic(self, tiny_manifest, tiny_view):
        model = MultimodalClassifier(tiny_manifest, tiny_model_config(dropout=0.5))
        batch = make_batch(tiny_view, np.arange(8))
        first = model.forward_loss(batch, mode="eval")
        second = model.forward_loss(batch, mode="eval")
        assert first[0] == second[0]
        assert_array_equal(first[1], second[1])

    def test_train_mode_is_seeded(self, tiny_manifest, tiny_view):
        model = MultimodalClassifier(tiny_manifest, tiny_model_config(dropout=0.5))
        batch = make_batch(tiny_view, np.arange(8))
        first, _ = model.forward_loss(batch, mode="train", rng=np.random.default_rng(3))
        second, _ = model.forward_loss(batch, mode="train", rng=np.random.default_rng(3))
        assert first == second

    def test_unlabeled_sample(self, tiny_manifest, tiny_view):
        model = MultimodalClassifier(tiny_manifest, tiny_model_config())
        batch = make_batch(tiny_view, np.arange(4))
        batch.labels[1] = -1
        with pytest.raises(ContractError):
            model.forward_loss(batch)

    def test_logit_scale(self, tiny_manifest, tiny_view):
        model = MultimodalClassifier(tiny_manifest, tiny_model_config())
        batch = make_batch(tiny_view, np.arange(4))
        _, logits = model.forward_loss(batch)
        _, scaled = model.forward_loss(batch, logit_scale=np.array([1.0, 0.5, 1.0]))
        assert_array_equal(scaled[:, 0], logits[:, 0])
        assert_allclose(scaled[:, 1], 0.5 * logits[:, 1])


class TestGradients:
    @pytest.mark.parametrize("scheme", ["concat", "attention"])
    def test_matches_finite_differences(self, rng, scheme):
        model = MultimodalClassifier(short_manifest(), tiny_model_config(scheme=scheme), seed=1)
        batch = random_batch(rng)
        _, _, grads = model.loss_and_grad(batch, train=False)
        error = finite_diff_check(lambda p: model.forward_loss(batch, params=p)[0], model.params, grads)
        assert error < 1e-4

    def test_masked_modality_with_attention(self, rng):
        model = MultimodalClassifier(short_manifest(), tiny_model_config(scheme="attention"), seed=4)
        batch = random_batch(rng, video_available=[True, False, True])
        _, _, grads = model.loss_and_grad(batch, train=False)
        error = finite_diff_check(lambda p: model.forward_loss(batch, params=p)[0], model.params, grads)
        assert error < 1e-4

    def test_gradient_names_match_params(self, tiny_manifest, tiny_view):
        model = MultimodalClassifier(tiny_manifest, tiny_model_config(dropout=0.3))
        _, _, grads = model.loss_and_grad(make_batch(tiny_view, np.arange(6)), rng=np.random.default_rng(0))
        assert grads.names() == model.params.names()
        assert grads.is_finite()


class TestGradientSweep:
    @pytest.mark.parametrize("case", range(20))
    def test_random_tiny_config(self, case):
        rng = np.random.default_rng(100 + case)
        filters = [2] if case % 2 == 0 else [2, 2]
        config = ModelConfig(
            encoder=EncoderConfig(conv_filters=filters, kernel=3, hidden=int(rng.integers(3, 5))),
            fusion=FusionConfig(scheme="attention" if case % 4 < 2 else "concat", heads=int(rng.integers(1, 3))),
            classifier_hidden=int(rng.integers(3, 6)),
            dropout=0.3 if case % 3 == 0 else 0.0,
        )
        model = MultimodalClassifier(short_manifest(length=6), config, seed=case)
        batch = padded_batch(rng, size=4, max_len=6, min_audio=2 * len(filters) + 1)
        train = config.dropout > 0

        # en entrenamiento el dropout se congela usando siempre el mismo flujo
        def loss(params):
            mode = "train" if train else "eval"
            return model.forward_loss(batch, mode=mode, rng=np.random.default_rng(case), params=params)[0]

        _, _, grads = model.loss_and_grad(batch, rng=np.random.default_rng(case), train=train)
        assert finite_diff_check(loss, model.params, grads) < 1e-4


class TestModelStructure:
    def test_parameter_names(self, tiny_manifest):
        model = MultimodalClassifier(tiny_manifest, tiny_model_config())
        names = model.params.names()
        assert names[0] == "enc.audio.conv0.weight"
        assert "enc.video.conv0.weight" not in names
        assert names[-4:] == ["cls.fc1.weight", "cls.fc1.bias", "cls.fc2.weight", "cls.fc2.bias"]
        assert model.params["fusion.c"].shape == (2, 4)

    def test_same_seed_same_init(self, tiny_manifest):
        first = MultimodalClassifier(tiny_manifest, tiny_model_config(), seed=7)
        second = MultimodalClassifier(tiny_manifest, tiny_model_config(), seed=7)
        assert_array_equal(first.params.flatten(), second.params.flatten())

    def test_wrong_params(self, tiny_manifest):
        model = MultimodalClassifier(tiny_manifest, tiny_model_config())
        with pytest.raises(DimensionError):
            MultimodalClassifier(tiny_manifest, tiny_model_config(scheme="concat"), params=model.params)


class TestUnimodal:
    def test_ignores_other_modalities(self, tiny_dataset, tiny_view, rng):
        model = build_unimodal(tiny_dataset.manifest, tiny_model_config(), "audio", seed=0)
        batch = make_batch(tiny_view, np.arange(6))
        changed = Batch(
            inputs={**batch.inputs, "video": rng.standard_normal(batch.inputs["video"].shape)},
            lengths=batch.lengths, available=batch.available, labels=batch.labels,
        )
        assert_array_equal(model.predict_logits(batch), model.predict_logits(changed))

    def test_fewer_parameters(self, tiny_dataset):
        config = tiny_model_config()
        unimodal = build_unimodal(tiny_dataset.manifest, config, "video")
        assert unimodal.num_parameters() < MultimodalClassifier(tiny_dataset.manifest, config).num_parameters()
        assert unimodal.scheme == "concat"

    def test_equals_masked_multimodal_concat(self, tiny_dataset, tiny_view):
        config = tiny_model_config(scheme="concat")
        unimodal = build_unimodal(tiny_dataset.manifest, config, "audio", seed=3)
        multimodal = MultimodalClassifier(tiny_dataset.manifest, config, seed=5)
        params = ParamSet()
        for name in multimodal.params.names():
            if name == "cls.fc1.weight":
                params[name] = np.concatenate(
                    [unimodal.params[name], multimodal.params[name][:, unimodal.hidden:]], axis=1)
            elif name in unimodal.params:
                params[name] = unimodal.params[name]
            else:
                params[name] = multimodal.params[name]
        available = tiny_view.available.copy()
        available[:, 1] = False
        batch = make_batch(tiny_view.replace(available=available), np.arange(8))
        assert_allclose(multimodal.with_params(params).predict_logits(batch),
                        unimodal.predict_logits(batch), atol=1e-12)

    def test_unknown_modality(self, tiny_dataset):
        with pytest.raises(ConfigError):
            build_unimodal(tiny_dataset.manifest, tiny_model_config(), "text")

    def test_build_model_dispatch(self, tiny_dataset):
        config = tiny_model_config().model_copy(update={"unimodal": "video"})
        assert build_model(tiny_dataset.manifest, config).modalities == ["video"]


class TestCheckpoint:
    def test_round_trip(self, tiny_manifest, tmp_path):
        params = MultimodalClassifier(tiny_manifest, tiny_model_config(), seed=9).params
        loaded = load_checkpoint(save_checkpoint(params, tmp_path / "model.npz"))
        assert loaded.names() == params.names()
        for name in params.names():
            assert_array_equal(loaded[name], params[name])
