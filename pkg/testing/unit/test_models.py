"""
Unit tests for the mask encoder, the generator and the discriminator pair.
"""

import numpy as np
import pytest

from src.models import (
    ContextEmbedding,
    DiscriminatorPair,
    DiscriminatorSpec,
    EventGanNetworks,
    Generator,
    GeneratorContext,
    GeneratorSpec,
    MaskEncoder,
    MaskEncoderSpec,
    NoiseSpec,
    PoolMode,
    embed_h,
    embed_m,
    encode_mask,
    generate,
    pool_context,
)
from src.nn import Tensor, check_gradients
from src.utils.common.exceptions import ConfigurationError, ShapeError

FRAME = (1, 8, 8)


def _encoder_spec(k=1, **overrides):
    values = dict(mask_channels=k, conv_channels=(4, 8), lstm_hidden=8, context_dim=6)
    values.update(overrides)
    return MaskEncoderSpec(**values)


def _generator_spec(context=GeneratorContext.LAST):
    return GeneratorSpec(
        noise=NoiseSpec(4), lstm_hidden=8, seed_channels=4, upsample_channels=(4,), context=context
    )


def _discriminator_spec(**overrides):
    values = dict(conv_channels=(4,), lstm_hidden=6, feature_dim=3)
    values.update(overrides)
    return DiscriminatorSpec(**values)


def _masks(rng, n=3, steps=4, k=1, h=8, w=8):
    return (rng.random((n, steps, k, h, w)) > 0.6).astype(np.uint8)


class TestMaskEncoder:
    """Test the mask encoder."""

    def setup_method(self):
        """Setup test fixtures."""
        self.rng = np.random.default_rng(0)
        self.encoder = MaskEncoder(_encoder_spec(k=2), np.random.default_rng(1))

    def test_output_shape(self):
        """Test N×T×d_c output on a small frame."""
        c = encode_mask(_masks(self.rng, k=2), self.encoder)
        assert isinstance(c, ContextEmbedding)
        assert c.values.shape == (3, 4, 6)
        assert (c.batch_size, c.steps, c.dim) == (3, 4, 6)

    def test_full_resolution_shape(self):
        """Test the default architecture on 128×196 frames with four classes."""
        encoder = MaskEncoder(MaskEncoderSpec(mask_channels=4), np.random.default_rng(2))
        masks = _masks(self.rng, n=2, steps=10, k=4, h=128, w=196)
        assert encoder(masks).values.shape == (2, 10, 64)

    def test_all_zero_mask_identical_across_batch(self):
        """Test that identical inputs give identical embeddings."""
        self.encoder.eval()
        c = self.encoder(np.zeros((3, 4, 2, 8, 8), dtype=np.uint8)).values.numpy()
        np.testing.assert_allclose(c[0], c[1], atol=1e-7)
        np.testing.assert_allclose(c[0], c[2], atol=1e-7)

    def test_batch_permutation_equivariance(self):
        """Test that permuting batch items permutes the output."""
        self.encoder.eval()
        masks = _masks(self.rng, k=2)
        order = np.array([2, 0, 1])
        direct = self.encoder(masks).values.numpy()
        permuted = self.encoder(masks[order]).values.numpy()
        np.testing.assert_allclose(permuted, direct[order], atol=1e-6)

    def test_encoder_is_causal_in_time(self):
        """Test that later masks do not change earlier context steps."""
        self.encoder.eval()
        masks = _masks(self.rng, k=2)
        changed = masks.copy()
        changed[:, 2:] = 1 - changed[:, 2:]

        base = self.encoder(masks).values.numpy()
        other = self.encoder(changed).values.numpy()
        np.testing.assert_array_equal(base[:, :2], other[:, :2])
        assert not np.allclose(base[:, 2:], other[:, 2:])

    def test_items_encode_independently_in_eval_mode(self):
        """Test that encoding a batch jointly matches encoding item by item."""
        self.encoder.eval()
        masks = _masks(self.rng, n=4, k=2)
        joint = self.encoder(masks).values.numpy()
        for i in range(masks.shape[0]):
            single = self.encoder(masks[i : i + 1]).values.numpy()
            np.testing.assert_allclose(single[0], joint[i], rtol=0, atol=1e-6)

    def test_training_mode_updates_running_statistics(self):
        """Test that a training forward pass moves the batch-norm buffers."""
        before = self.encoder.between_norm.buffer("running_mean").copy()
        self.encoder.train()
        self.encoder(_masks(self.rng, k=2))
        assert not np.array_equal(before, self.encoder.between_norm.buffer("running_mean"))

    def test_wrong_class_count(self):
        """Test that K must match the encoder."""
        with pytest.raises(ShapeError):
            self.encoder(_masks(self.rng, k=1))

    def test_frame_too_small_for_pool_grid(self):
        """Test that the pooling grid must fit the feature map."""
        spec = _encoder_spec(pool_grid=(2, 2), conv_channels=(4, 4, 4))
        with pytest.raises(ShapeError):
            spec.check_frame_size(4, 4)

    @pytest.mark.parametrize(
        "overrides,key",
        [
            ({"conv_channels": ()}, "encoder.conv_channels"),
            ({"leaky_slope": 1.0}, "encoder.leaky_slope"),
            ({"pool_grid": (0, 1)}, "encoder.pool_grid"),
            ({"context_dim": 0}, "encoder.context_dim"),
        ],
    )
    def test_invalid_spec(self, overrides, key):
        """Test encoder spec validation."""
        with pytest.raises(ConfigurationError) as exc_info:
            _encoder_spec(**overrides)
        assert exc_info.value.config_key == key

    def test_gradients_match_finite_differences(self):
        """Test the encoder backward pass in 64-bit."""
        spec = MaskEncoderSpec(mask_channels=1, conv_channels=(2,), lstm_hidden=3, context_dim=2)
        encoder = MaskEncoder(spec, np.random.default_rng(3)).astype(np.float64)
        masks = _masks(self.rng, n=2, steps=2, h=4, w=4).astype(np.float64)
        weights = Tensor(self.rng.normal(size=(2, 2, 2)))
        params = list(encoder.named_parameters())
        assert sum(p.size for _, p in params) <= 1000

        report = check_gradients(
            lambda: (encoder(masks).values * weights).sum(),
            params,
            step=1e-5,
            rtol=1e-3,
            max_coords_per_param=8,
        )
        assert report.fraction_within >= 0.95


class TestPoolContext:
    """Test reducing the context over time."""

    def test_single_step(self):
        """Test that T=1 returns the single slice in both modes."""
        c = ContextEmbedding(Tensor(np.array([[[1.0, 2.0]]])))
        np.testing.assert_array_equal(pool_context(c, PoolMode.LAST).numpy(), [[1.0, 2.0]])
        np.testing.assert_array_equal(pool_context(c, "mean").numpy(), [[1.0, 2.0]])

    def test_constant_context(self):
        """Test that mean equals last for a constant embedding."""
        c = ContextEmbedding(Tensor(np.tile([[0.5, -1.5]], (2, 3, 1))))
        np.testing.assert_allclose(pool_context(c, "mean").numpy(), pool_context(c, "last").numpy())

    def test_two_step_mean(self):
        """Test the elementwise average of two steps."""
        c = ContextEmbedding(Tensor(np.array([[[1.0, 4.0], [3.0, 0.0]]])))
        np.testing.assert_allclose(pool_context(c, "mean").numpy(), [[2.0, 2.0]])
        np.testing.assert_allclose(pool_context(c, "last").numpy(), [[3.0, 0.0]])

    def test_unknown_mode(self):
        """Test that an unknown pooling mode is refused."""
        c = ContextEmbedding(Tensor(np.zeros((1, 1, 2))))
        with pytest.raises(ValueError):
            pool_context(c, "max")


class TestGenerator:
    """Test the conditioned generator."""

    def setup_method(self):
        """Setup test fixtures."""
        self.rng = np.random.default_rng(4)

    def _context(self, n=2, steps=4):
        return ContextEmbedding(Tensor(self.rng.normal(size=(n, steps, 6)).astype(np.float32)))

    def test_output_shape_and_range(self):
        """Test N×T×C×H×W output bounded by the output scale."""
        generator = Generator(_generator_spec(), 6, FRAME, np.random.default_rng(5))
        z = NoiseSpec(4).sample(self.rng, 2, 4)
        out = generate(z, self._context(), generator)
        assert out.shape == (2, 4) + FRAME
        assert np.abs(out.numpy()).max() <= generator.spec.output_scale

    def test_odd_frame_cropped(self):
        """Test frames that are not multiples of the upsampling factor."""
        generator = Generator(_generator_spec(), 6, (2, 9, 11), np.random.default_rng(5))
        assert generator.seed_hw == (5, 6)
        out = generator(NoiseSpec(4).sample(self.rng, 2, 3), self._context(steps=3))
        assert out.shape == (2, 3, 2, 9, 11)

    def test_same_inputs_same_output(self):
        """Test determinism for identical noise and context."""
        generator = Generator(_generator_spec(), 6, FRAME, np.random.default_rng(5)).eval()
        z, c = NoiseSpec(4).sample(self.rng, 2, 4), self._context()
        np.testing.assert_array_equal(generator(z, c).numpy(), generator(z, c).numpy())

    def test_different_context_changes_output(self):
        """Test that the output depends on the conditioning."""
        generator = Generator(_generator_spec(), 6, FRAME, np.random.default_rng(5)).eval()
        z = NoiseSpec(4).sample(self.rng, 2, 4)
        first, second = generator(z, self._context()).numpy(), generator(z, self._context()).numpy()
        distances = np.sqrt(((first - second) ** 2).reshape(2, -1).sum(axis=1))
        assert np.all(distances > 0)

    def test_per_step_context_is_causal(self):
        """Test that frame t depends on noise and context up to t only."""
        spec = _generator_spec(GeneratorContext.PER_STEP)
        generator = Generator(spec, 6, FRAME, np.random.default_rng(5))
        generator.eval()
        z, c = NoiseSpec(4).sample(self.rng, 2, 4), self._context()
        z_changed, c_changed = z.numpy().copy(), c.values.numpy().copy()
        z_changed[:, 2:] += 1.0
        c_changed[:, 2:] -= 1.0

        base = generator(z, c).numpy()
        other = generator(Tensor(z_changed), ContextEmbedding(Tensor(c_changed))).numpy()
        np.testing.assert_array_equal(base[:, :2], other[:, :2])
        assert not np.allclose(base[:, 2:], other[:, 2:])

    def test_default_context_is_causal_in_noise(self):
        """Test that changing z from step t on leaves earlier frames untouched."""
        generator = Generator(_generator_spec(), 6, FRAME, np.random.default_rng(5)).eval()
        z, c = NoiseSpec(4).sample(self.rng, 2, 4), self._context()
        for t in range(1, 4):
            z_changed = z.numpy().copy()
            z_changed[:, t:] += 1.0

            base = generator(z, c).numpy()
            other = generator(Tensor(z_changed), c).numpy()
            np.testing.assert_array_equal(base[:, :t], other[:, :t])
            assert not np.allclose(base[:, t:], other[:, t:])

    def test_per_step_context_needs_matching_steps(self):
        """Test that per-step conditioning checks the step count."""
        spec = _generator_spec(GeneratorContext.PER_STEP)
        generator = Generator(spec, 6, FRAME, np.random.default_rng(5))
        with pytest.raises(ShapeError):
            generator(NoiseSpec(4).sample(self.rng, 2, 4), self._context(steps=3))

    def test_context_batch_mismatch(self):
        """Test that context and noise must share the batch size."""
        generator = Generator(_generator_spec(), 6, FRAME, np.random.default_rng(5))
        with pytest.raises(ShapeError):
            generator(NoiseSpec(4).sample(self.rng, 2, 4), self._context(n=3))

    def test_noise_width_mismatch(self):
        """Test that the noise width is checked."""
        generator = Generator(_generator_spec(), 6, FRAME, np.random.default_rng(5))
        with pytest.raises(ShapeError):
            generator(NoiseSpec(5).sample(self.rng, 2, 4), self._context())

    def test_upsampling_must_match_stride(self):
        """Test that kernel, padding and stride must scale exactly."""
        with pytest.raises(ConfigurationError) as exc_info:
            GeneratorSpec(kernel=3, stride=2, padding=1)
        assert exc_info.value.config_key == "generator.kernel"

    def test_context_mode_from_string(self):
        """Test that the context mode is read from configuration strings."""
        assert GeneratorSpec(context="per_step").context is GeneratorContext.PER_STEP


class TestDiscriminators:
    """Test the h and M networks."""

    def setup_method(self):
        """Setup test fixtures."""
        self.rng = np.random.default_rng(6)
        self.x = Tensor(self.rng.normal(size=(2, 4) + FRAME).astype(np.float32))
        self.c = ContextEmbedding(Tensor(self.rng.normal(size=(2, 4, 6)).astype(np.float32)))

    def test_feature_shapes(self):
        """Test N×T×J features from both networks."""
        pair = DiscriminatorPair(_discriminator_spec(), FRAME, 6, np.random.default_rng(7))
        assert embed_h(self.x, self.c, pair).shape == (2, 4, 3)
        assert embed_m(self.x, self.c, pair).shape == (2, 4, 3)

    def test_zero_parameters_give_zero_features(self):
        """Test that an all-zero network maps to zero."""
        pair = DiscriminatorPair(_discriminator_spec(), FRAME, 6, np.random.default_rng(7))
        for _, param in pair.named_parameters():
            param.data[...] = 0.0
        np.testing.assert_array_equal(embed_h(self.x, self.c, pair).numpy(), 0.0)
        np.testing.assert_array_equal(embed_m(self.x, self.c, pair).numpy(), 0.0)

    def test_networks_are_independent(self):
        """Test that h and M have separate parameters."""
        pair = DiscriminatorPair(_discriminator_spec(), FRAME, 6, np.random.default_rng(7))
        h_out, m_out = embed_h(self.x, self.c, pair), embed_m(self.x, self.c, pair)
        assert not np.allclose(h_out.numpy(), m_out.numpy())
        h_ids = {id(p) for p in pair.h.parameters()}
        assert not h_ids & {id(p) for p in pair.m.parameters()}

    def test_unconditioned_m_ignores_context(self):
        """Test that M without conditioning does not read the context."""
        spec = _discriminator_spec(condition_m=False)
        pair = DiscriminatorPair(spec, FRAME, 6, np.random.default_rng(7))
        other = ContextEmbedding(Tensor(self.rng.normal(size=(2, 4, 6)).astype(np.float32)))
        np.testing.assert_array_equal(
            embed_m(self.x, self.c, pair).numpy(), embed_m(self.x, other, pair).numpy()
        )

    @pytest.mark.parametrize("embed", [embed_h, embed_m], ids=["h", "m"])
    def test_features_are_causal_in_time(self, embed):
        """Test that future frames and contexts leave earlier features unchanged."""
        pair = DiscriminatorPair(_discriminator_spec(), FRAME, 6, np.random.default_rng(7))
        x_changed = self.x.numpy().copy()
        c_changed = self.c.values.numpy().copy()
        x_changed[:, 2:] += 1.0
        c_changed[:, 2:] -= 1.0

        base = embed(self.x, self.c, pair).numpy()
        other = embed(Tensor(x_changed), ContextEmbedding(Tensor(c_changed)), pair).numpy()
        np.testing.assert_array_equal(base[:, :2], other[:, :2])
        assert not np.allclose(base[:, 2:], other[:, 2:])

    def test_conditioned_h_needs_context(self):
        """Test that h refuses a missing context."""
        pair = DiscriminatorPair(_discriminator_spec(), FRAME, 6, np.random.default_rng(7))
        with pytest.raises(ShapeError):
            pair.h(self.x, None)

    def test_frame_mismatch(self):
        """Test that inputs must have the configured frame shape."""
        pair = DiscriminatorPair(_discriminator_spec(), FRAME, 6, np.random.default_rng(7))
        with pytest.raises(ShapeError):
            embed_h(Tensor(np.zeros((2, 4, 1, 6, 6))), self.c, pair)


class TestConditioning:
    """Test that the context reaches every conditioned network."""

    def test_zero_context_changes_every_network(self):
        """Test that replacing c by zeros changes the outputs of G, h and M."""
        rng = np.random.default_rng(8)
        generator = Generator(_generator_spec(), 6, FRAME, np.random.default_rng(5)).eval()
        pair = DiscriminatorPair(_discriminator_spec(), FRAME, 6, np.random.default_rng(7))
        x = Tensor(rng.normal(size=(2, 4) + FRAME).astype(np.float32))
        z = NoiseSpec(4).sample(rng, 2, 4)
        c = ContextEmbedding(Tensor(rng.normal(size=(2, 4, 6)).astype(np.float32)))
        zero = ContextEmbedding(Tensor(np.zeros((2, 4, 6), dtype=np.float32)))

        outputs = {
            "generator": lambda ctx: generator(z, ctx),
            "h": lambda ctx: embed_h(x, ctx, pair),
            "m": lambda ctx: embed_m(x, ctx, pair),
        }
        for name, network in outputs.items():
            assert not np.allclose(network(c).numpy(), network(zero).numpy()), name


class TestEventGanNetworks:
    """Test the network container."""

    def _networks(self, seed=0):
        return EventGanNetworks(
            _encoder_spec(), _generator_spec(), _discriminator_spec(), FRAME, seed
        )

    def test_same_seed_same_weights(self):
        """Test that initial weights are a function of the seed."""
        first = self._networks(0).state_dict()
        second = self._networks(0).state_dict()
        third = self._networks(1).state_dict()
        assert list(first) == list(second)
        for name in first:
            np.testing.assert_array_equal(first[name], second[name])
        assert any(not np.array_equal(first[name], third[name]) for name in first)

    def test_parameter_groups(self):
        """Test the generator and discriminator-side parameter groups."""
        networks = self._networks()
        g_names = [name for name, _ in networks.generator_parameters()]
        d_names = [name for name, _ in networks.discriminator_parameters()]

        assert all(name.startswith("generator.") for name in g_names)
        assert any(name.startswith("encoder.") for name in d_names)
        assert any(name.startswith("discriminators.h.") for name in d_names)
        assert any(name.startswith("discriminators.m.") for name in d_names)
        assert len(g_names) + len(d_names) == len(networks.parameters())

    def test_frame_too_small(self):
        """Test that the encoder must fit the frame."""
        with pytest.raises(ShapeError):
            EventGanNetworks(
                _encoder_spec(pool_grid=(4, 4)), _generator_spec(), _discriminator_spec(), FRAME, 0
            )
