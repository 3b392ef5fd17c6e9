"""
Unit tests for the causal optimal transport objective.
"""

import numpy as np
import pytest

from src.cot import (
    SequenceFeatures,
    SinkhornConfig,
    base_cost,
    causal_cost,
    discriminator_loss,
    generator_loss,
    martingale_penalty,
    mixed_sinkhorn_divergence,
    sequence_features,
    sinkhorn_plan,
    sinkhorn_value,
    transport_value,
)
from src.models import (
    ContextEmbedding,
    DiscriminatorPair,
    DiscriminatorSpec,
    EventGanNetworks,
    GeneratorSpec,
    MaskEncoderSpec,
    NoiseSpec,
    encode_mask,
    generate,
)
from src.nn import Parameter, Tensor, check_gradients
from src.utils.common.exceptions import ConfigurationError, NumericError, ShapeError


def _scaling_sinkhorn(cost, epsilon, iterations=20000):
    """Plain multiplicative Sinkhorn in float64, used as an independent reference."""
    rows, cols = cost.shape
    a, b = np.full(rows, 1.0 / rows), np.full(cols, 1.0 / cols)
    kernel = np.exp(-cost / epsilon)
    u, v = np.ones(rows), np.ones(cols)
    for _ in range(iterations):
        u = a / (kernel @ v)
        v = b / (kernel.T @ u)
    plan = u[:, None] * kernel * v[None, :]
    return float(np.sum(plan * cost))


class TestSequenceCosts:
    """Test the base and causal costs."""

    def test_identical_batches_have_zero_diagonal(self):
        """Test C[i, i] == 0 when x == y."""
        x = Tensor(np.random.default_rng(0).normal(size=(3, 4, 2, 2, 2)))
        cost = base_cost(x, x).numpy()
        np.testing.assert_array_equal(np.diag(cost), 0.0)
        assert cost.shape == (3, 3)

    def test_scalar_sequences(self):
        """Test the squared distance of two one-step scalar sequences."""
        cost = base_cost(Tensor(np.zeros((1, 1, 1))), Tensor(np.full((1, 1, 1), 3.0)))
        assert cost.item() == pytest.approx(9.0)

    def test_matches_double_loop(self):
        """Test a random 2×2 batch against explicit sums."""
        rng = np.random.default_rng(1)
        x, y = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 3, 4))
        expected = np.array([[np.sum((x[i] - y[j]) ** 2) for j in range(2)] for i in range(2)])
        np.testing.assert_allclose(base_cost(Tensor(x), Tensor(y)).numpy(), expected, rtol=1e-12)

    def test_mismatched_lengths(self):
        """Test that T and D must agree."""
        with pytest.raises(ShapeError):
            base_cost(Tensor(np.zeros((2, 3, 4))), Tensor(np.zeros((2, 4, 4))))

    def test_zero_weight_leaves_cost_unchanged(self):
        """Test that λ = 0 disables the regulariser."""
        cbase = Tensor(np.ones((2, 2)))
        out = causal_cost(cbase, Tensor(np.ones((2, 3, 1))), Tensor(np.ones((2, 2, 1))), 0.0)
        np.testing.assert_array_equal(out.numpy(), cbase.numpy())

    def test_constant_m_leaves_cost_unchanged(self):
        """Test that zero increments add nothing."""
        cbase = Tensor(np.random.default_rng(2).random((2, 2)))
        features = SequenceFeatures(Tensor(np.zeros((2, 3, 1))), m=Tensor(np.full((2, 3, 2), 4.0)))
        out = causal_cost(cbase, Tensor(np.ones((2, 3, 2))), features.increments, 1.0)
        np.testing.assert_array_equal(out.numpy(), cbase.numpy())

    def test_single_product_added(self):
        """Test a 1×1 batch with T=2 and J=1."""
        h_y = Tensor(np.array([[[2.0], [5.0]]]))
        m_x = SequenceFeatures(Tensor(np.zeros((1, 2, 1))), m=Tensor(np.array([[[1.0], [4.0]]])))
        out = causal_cost(Tensor(np.array([[0.5]])), h_y, m_x.increments, 0.5)
        # 0.5 + 0.5 · h_1 · (M_2 − M_1) = 0.5 + 0.5 · 2 · 3
        assert out.item() == pytest.approx(3.5)

    def test_feature_width_mismatch(self):
        """Test that h and ΔM must share J."""
        with pytest.raises(ShapeError):
            causal_cost(
                Tensor(np.zeros((1, 1))),
                Tensor(np.zeros((1, 3, 2))),
                Tensor(np.zeros((1, 2, 3))),
                1.0,
            )

    def test_single_step_has_no_increments(self):
        """Test that a one-step M has no increments."""
        features = SequenceFeatures(Tensor(np.zeros((2, 1, 1))), m=Tensor(np.zeros((2, 1, 3))))
        assert features.increments is None


class TestSinkhorn:
    """Test the log-domain Sinkhorn solver."""

    def test_single_coupling(self):
        """Test that a 1×1 cost is returned whatever ε is."""
        for epsilon in (0.01, 0.5, 10.0):
            cfg = SinkhornConfig(epsilon=epsilon, iterations=5)
            value = sinkhorn_value(Tensor(np.array([[2.75]])), cfg)
            assert value.item() == pytest.approx(2.75)

    def test_zero_cost(self):
        """Test that a zero cost matrix has zero value."""
        assert sinkhorn_value(Tensor(np.zeros((4, 4))), SinkhornConfig()).item() == 0.0

    def test_marginals_are_uniform(self):
        """Test the implied coupling after many iterations."""
        cost = Tensor(np.random.default_rng(3).random((8, 8)))
        plan = sinkhorn_plan(cost, SinkhornConfig(epsilon=0.5, iterations=1000))
        np.testing.assert_allclose(plan.sum(axis=1), 1.0 / 8, atol=1e-6)
        np.testing.assert_allclose(plan.sum(axis=0), 1.0 / 8, atol=1e-6)

    def test_rectangular_marginals(self):
        """Test uniform marginals on a non-square cost."""
        cost = Tensor(np.random.default_rng(4).random((3, 5)))
        plan = sinkhorn_plan(cost, SinkhornConfig(epsilon=0.5, iterations=500))
        np.testing.assert_allclose(plan.sum(axis=1), 1.0 / 3, atol=1e-6)
        np.testing.assert_allclose(plan.sum(axis=0), 1.0 / 5, atol=1e-6)

    def test_matches_scaling_reference(self):
        """Test a random 3×3 cost against multiplicative Sinkhorn."""
        cost = np.random.default_rng(5).random((3, 3))
        value = sinkhorn_value(Tensor(cost), SinkhornConfig(epsilon=0.5, iterations=1000)).item()
        assert value == pytest.approx(_scaling_sinkhorn(cost, 0.5), abs=1e-6)

    def test_small_epsilon_stays_finite(self):
        """Test that the log-domain updates survive a tiny ε."""
        cost = Tensor(np.random.default_rng(6).random((5, 5)) * 50.0)
        value = sinkhorn_value(cost, SinkhornConfig(epsilon=1e-3, iterations=50)).item()
        assert np.isfinite(value)

    def test_non_finite_cost(self):
        """Test that NaN costs are refused."""
        cost = np.ones((2, 2))
        cost[0, 1] = np.nan
        with pytest.raises(NumericError):
            sinkhorn_value(Tensor(cost), SinkhornConfig())

    def test_cost_must_be_matrix(self):
        """Test that a vector cost is refused."""
        with pytest.raises(ShapeError):
            sinkhorn_value(Tensor(np.ones(3)), SinkhornConfig())

    def test_gradient_through_unrolled_iterations(self):
        """Test the Sinkhorn backward pass against central differences."""
        cost = Parameter(np.random.default_rng(7).random((3, 4)), "cost", dtype=np.float64)
        cfg = SinkhornConfig(epsilon=0.5, iterations=25)
        report = check_gradients(
            lambda: sinkhorn_value(cost, cfg), [("cost", cost)], step=1e-6, rtol=1e-5
        )
        assert report.passed(min_fraction=1.0, max_error=1e-4), report.failures

    def test_gradient_with_few_iterations(self):
        """Test the backward pass when the potentials have not converged."""
        cost = Parameter(np.random.default_rng(8).random((4, 4)) * 3.0, "cost", dtype=np.float64)
        cfg = SinkhornConfig(epsilon=0.2, iterations=3)
        report = check_gradients(
            lambda: sinkhorn_value(cost, cfg), [("cost", cost)], step=1e-6, rtol=1e-5
        )
        assert report.passed(min_fraction=1.0, max_error=1e-4), report.failures

    @pytest.mark.parametrize(
        "overrides,key",
        [
            ({"epsilon": 0.0}, "sinkhorn.epsilon"),
            ({"iterations": 0}, "sinkhorn.iterations"),
            ({"causal_weight": -1.0}, "sinkhorn.causal_weight"),
        ],
    )
    def test_invalid_config(self, overrides, key):
        """Test Sinkhorn settings validation."""
        with pytest.raises(ConfigurationError) as exc_info:
            SinkhornConfig(**overrides)
        assert exc_info.value.config_key == key

    def test_without_causal_term(self):
        """Test that the evaluation copy only drops λ."""
        cfg = SinkhornConfig(epsilon=0.3, causal_weight=2.0)
        plain = cfg.without_causal_term()
        assert plain.causal_weight == 0.0
        assert plain.epsilon == 0.3
        assert cfg.causal_weight == 2.0


class TestMixedDivergence:
    """Test the four-batch divergence."""

    def setup_method(self):
        """Setup test fixtures."""
        self.rng = np.random.default_rng(9)
        self.cfg = SinkhornConfig(epsilon=0.5, iterations=50)

    def _batch(self, shift=0.0):
        return SequenceFeatures(Tensor(self.rng.normal(size=(4, 3, 5)) + shift))

    def test_batch_against_itself_is_zero(self):
        """Test exact cancellation when all four batches coincide."""
        x = self._batch()
        assert mixed_sinkhorn_divergence(x, x, x, x, self.cfg).item() == 0.0

    def test_one_by_one_closed_form(self):
        """Test the B=1, T=1, λ=0 reduction to squared distances."""
        cfg = SinkhornConfig(causal_weight=0.0, normalize_cost=False)
        x, x_p, y, y_p = (self.rng.normal(size=(1, 1, 3)) for _ in range(4))
        value = mixed_sinkhorn_divergence(
            SequenceFeatures(Tensor(x)),
            SequenceFeatures(Tensor(x_p)),
            SequenceFeatures(Tensor(y)),
            SequenceFeatures(Tensor(y_p)),
            cfg,
        ).item()
        expected = (
            np.sum((x - y) ** 2)
            + np.sum((x_p - y_p) ** 2)
            - np.sum((x - x_p) ** 2)
            - np.sum((y - y_p) ** 2)
        )
        assert value == pytest.approx(expected, rel=1e-10)

    def test_shifted_fakes_score_higher_than_real_copies(self):
        """Test that a generator copying the real batches beats a shifted one."""
        x, x_p = self._batch(), self._batch()
        cfg = SinkhornConfig(epsilon=1.0, iterations=300)
        copied = mixed_sinkhorn_divergence(x, x_p, x, x_p, cfg).item()
        shifted = mixed_sinkhorn_divergence(
            x,
            x_p,
            SequenceFeatures(x.values + 3.0),
            SequenceFeatures(x_p.values + 3.0),
            cfg,
        ).item()
        assert shifted > copied
        assert shifted - copied == pytest.approx(2 * 9.0, rel=1e-3)

    def test_cost_normalisation(self):
        """Test that normalisation divides the base cost by T·D."""
        x, y = self._batch(), self._batch(shift=1.0)
        raw = SinkhornConfig(epsilon=5.0, iterations=50, normalize_cost=False)
        scaled = SinkhornConfig(epsilon=5.0 / 15, iterations=50)
        expected = transport_value(x, y, raw).item() / 15
        assert transport_value(x, y, scaled).item() == pytest.approx(expected, rel=1e-8)

    def test_unequal_batches(self):
        """Test that all four batches must have the same size."""
        x = self._batch()
        small = SequenceFeatures(Tensor(np.zeros((2, 3, 5))))
        with pytest.raises(ShapeError):
            mixed_sinkhorn_divergence(x, x, x, small, self.cfg)


class TestMartingalePenalty:
    """Test the martingale penalty."""

    def test_constant_m(self):
        """Test that time-constant features are not penalised."""
        assert martingale_penalty(Tensor(np.full((3, 4, 2), 1.5))).item() == 0.0

    def test_antisymmetric_increments(self):
        """Test that opposite increments cancel in the batch mean."""
        m = np.array([[[0.0], [2.0]], [[0.0], [-2.0]]])
        assert martingale_penalty(Tensor(m)).item() == 0.0

    def test_hand_computed(self):
        """Test a batch of two with T=3, J=2."""
        m = np.array(
            [
                [[0.0, 1.0], [1.0, 1.0], [3.0, 0.0]],
                [[0.0, 0.0], [-3.0, 2.0], [-3.0, 2.0]],
            ]
        )
        # batch-mean increments: t=1 → (−1, 1), t=2 → (1, −0.5)
        assert martingale_penalty(Tensor(m)).item() == pytest.approx(1 + 1 + 1 + 0.5)

    def test_single_step_is_zero(self):
        """Test that T=1 has no increments."""
        assert martingale_penalty(Tensor(np.ones((2, 1, 3)))).item() == 0.0

    def test_batch_of_one(self):
        """Test that a single sequence is refused."""
        with pytest.raises(ShapeError):
            martingale_penalty(Tensor(np.ones((1, 3, 2))))


class TestGanLosses:
    """Test the generator and discriminator losses."""

    FRAME = (1, 4, 4)

    def setup_method(self):
        """Setup test fixtures."""
        self.rng = np.random.default_rng(10)
        spec = DiscriminatorSpec(conv_channels=(4,), lstm_hidden=4, feature_dim=3)
        pair = DiscriminatorPair(spec, self.FRAME, 2, np.random.default_rng(11))
        self.pair = pair.astype(np.float64)
        self.cfg = SinkhornConfig(epsilon=0.5, iterations=20, penalty_weight=0.7)
        shape = (2, 3) + self.FRAME
        self.real = Tensor(self.rng.normal(size=shape))
        self.real_p = Tensor(self.rng.normal(size=shape))
        self.fake = Tensor(self.rng.normal(size=shape) + 1.5)
        self.fake_p = Tensor(self.rng.normal(size=shape) + 1.5)
        self.c = ContextEmbedding(Tensor(self.rng.normal(size=(2, 3, 2))))
        self.c_p = ContextEmbedding(Tensor(self.rng.normal(size=(2, 3, 2))))

    def _args(self):
        return self.real, self.real_p, self.fake, self.fake_p, self.c, self.c_p, self.pair, self.cfg

    def test_zero_discriminators_reduce_to_base_cost(self):
        """Test that untrained zero networks leave the base-cost divergence."""
        for _, param in self.pair.named_parameters():
            param.data[...] = 0.0
        terms = generator_loss(*self._args())
        plain = mixed_sinkhorn_divergence(
            sequence_features(self.real, self.c, None),
            sequence_features(self.real_p, self.c_p, None),
            sequence_features(self.fake, self.c, None),
            sequence_features(self.fake_p, self.c_p, None),
            self.cfg,
        )
        assert terms.loss.item() == pytest.approx(plain.item(), rel=1e-12)
        assert terms.penalty.item() == 0.0

    def test_discriminator_loss_sign(self):
        """Test that the discriminator minimises −(divergence − w·penalty)."""
        g_terms = generator_loss(*self._args())
        d_terms = discriminator_loss(*self._args())
        assert d_terms.divergence.item() == pytest.approx(g_terms.divergence.item())
        expected = -(d_terms.divergence.item() - 0.7 * d_terms.penalty.item())
        assert d_terms.loss.item() == pytest.approx(expected)

    def test_copying_real_batches_lowers_generator_loss(self):
        """Test that fakes equal to the real batches score below random fakes."""
        random_fakes = generator_loss(*self._args()).loss.item()
        copied = generator_loss(
            self.real, self.real_p, self.real, self.real_p, self.c, self.c_p, self.pair, self.cfg
        ).loss.item()
        assert copied < random_fakes

    def test_discriminator_gradients(self):
        """Test the full loss backward pass into h and M."""
        params = list(self.pair.named_parameters())
        report = check_gradients(
            lambda: discriminator_loss(*self._args()).loss,
            params,
            step=1e-5,
            rtol=1e-3,
            max_coords_per_param=6,
        )
        assert report.fraction_within >= 0.95

    def test_generator_gradients(self):
        """Test the loss backward pass into the generated batches."""
        fake = Parameter(self.fake.numpy().copy(), "fake", dtype=np.float64)
        fake_p = Parameter(self.fake_p.numpy().copy(), "fake_p", dtype=np.float64)

        def loss():
            return generator_loss(
                self.real, self.real_p, fake, fake_p, self.c, self.c_p, self.pair, self.cfg
            ).loss

        report = check_gradients(
            loss,
            [("fake", fake), ("fake_p", fake_p)],
            step=1e-5,
            rtol=1e-3,
            max_coords_per_param=12,
        )
        assert report.fraction_within >= 0.95


class TestEndToEndGradients:
    """Test gradients from the losses back into the generator and the encoder."""

    FRAME = (1, 8, 8)

    def setup_method(self):
        """Setup test fixtures."""
        rng = np.random.default_rng(12)
        self.networks = EventGanNetworks(
            MaskEncoderSpec(conv_channels=(2,), lstm_hidden=3, context_dim=2),
            GeneratorSpec(
                noise=NoiseSpec(2), lstm_hidden=3, seed_channels=2, upsample_channels=(2,)
            ),
            DiscriminatorSpec(conv_channels=(2,), lstm_hidden=3, feature_dim=2),
            self.FRAME,
            seed=13,
        ).astype(np.float64)
        self.cfg = SinkhornConfig(epsilon=0.5, iterations=20, penalty_weight=0.7)
        shape = (2, 3) + self.FRAME
        self.real = Tensor(rng.normal(size=shape))
        self.real_p = Tensor(rng.normal(size=shape))
        self.masks = (rng.random((2, 3, 1, 8, 8)) > 0.5).astype(np.float64)
        self.masks_p = (rng.random((2, 3, 1, 8, 8)) > 0.5).astype(np.float64)
        self.z = Tensor(rng.standard_normal((2, 3, 2)))
        self.z_p = Tensor(rng.standard_normal((2, 3, 2)))

    def test_generator_parameters(self):
        """Test the generator loss backward pass through generate into every generator weight."""
        nets = self.networks
        c = encode_mask(self.masks, nets.encoder).detach()
        c_p = encode_mask(self.masks_p, nets.encoder).detach()
        params = nets.generator_parameters()

        def loss():
            fake = generate(self.z, c, nets.generator)
            fake_p = generate(self.z_p, c_p, nets.generator)
            return generator_loss(
                self.real, self.real_p, fake, fake_p, c, c_p, nets.discriminators, self.cfg
            ).loss

        report = check_gradients(loss, params, step=1e-5, rtol=1e-3, max_coords_per_param=4)
        assert {name.split(".")[1] for name, _ in params} >= {"lstm", "upsample", "head"}
        assert report.fraction_within >= 0.95, report.failures[:3]

    def test_encoder_parameters(self):
        """Test the discriminator loss backward pass through encode_mask into the encoder."""
        nets = self.networks
        fake = generate(self.z, encode_mask(self.masks, nets.encoder).detach(), nets.generator)
        fake_p = generate(
            self.z_p, encode_mask(self.masks_p, nets.encoder).detach(), nets.generator
        )
        fake, fake_p = Tensor(fake.numpy().copy()), Tensor(fake_p.numpy().copy())
        params = list(nets.encoder.named_parameters("encoder."))

        def loss():
            c = encode_mask(self.masks, nets.encoder)
            c_p = encode_mask(self.masks_p, nets.encoder)
            return discriminator_loss(
                self.real, self.real_p, fake, fake_p, c, c_p, nets.discriminators, self.cfg
            ).loss

        report = check_gradients(loss, params, step=1e-5, rtol=1e-3, max_coords_per_param=4)
        assert report.fraction_within >= 0.95, report.failures[:3]
