"""Conditioned generator and the dual sequence discriminators h and M."""

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from src.nn import (
    LSTM,
    BatchNorm,
    BatchNormSpec,
    Conv2d,
    Conv2dSpec,
    ConvTranspose2d,
    Linear,
    LSTMSpec,
    Module,
    Tensor,
    concat,
    leaky_relu,
)
from src.utils.common.config import enforce_rules
from src.utils.common.exceptions import ConfigurationError, ShapeError
from src.utils.common.validation import (
    validate_int_at_least,
    validate_positive_int,
    validate_positive_number,
    validate_unit_interval,
)

from .mask_encoder import ContextEmbedding, PoolMode, pool_context


class GeneratorContext(str, Enum):
    """How the generator consumes c: pooled over time or per step."""

    LAST = "last"
    MEAN = "mean"
    PER_STEP = "per_step"


@dataclass
class NoiseSpec:
    """Per-timestep i.i.d. standard normal noise of width ``dim``."""

    dim: int = 32

    def __post_init__(self) -> None:
        enforce_rules("generator.noise", asdict(self), {"dim": [validate_positive_int]})

    def sample(
        self, rng: np.random.Generator, batch: int, steps: int, dtype: type = np.float32
    ) -> Tensor:
        return Tensor(rng.standard_normal((batch, steps, self.dim)).astype(dtype))


@dataclass
class GeneratorSpec:
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    lstm_hidden: int = 64
    seed_channels: int = 32
    upsample_channels: Tuple[int, ...] = (32, 16)
    kernel: int = 4
    stride: int = 2
    padding: int = 1
    output_scale: float = 3.0
    context: GeneratorContext = GeneratorContext.LAST
    leaky_slope: float = 0.2
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self) -> None:
        self.upsample_channels = tuple(self.upsample_channels)
        self.context = GeneratorContext(self.context)
        values = asdict(self)
        values.pop("noise")
        enforce_rules(
            "generator",
            values,
            {
                "lstm_hidden": [validate_positive_int],
                "seed_channels": [validate_positive_int],
                "kernel": [validate_positive_int],
                "stride": [validate_int_at_least(2)],
                "padding": [validate_int_at_least(0)],
                "output_scale": [validate_positive_number],
                "leaky_slope": [validate_unit_interval()],
                "bn_momentum": [validate_unit_interval(open_low=False, open_high=False)],
                "bn_eps": [validate_positive_number],
            },
        )
        if min(self.upsample_channels, default=1) < 1:
            raise ConfigurationError(
                "generator.upsample_channels must be positive",
                config_key="generator.upsample_channels",
            )
        if self.kernel - 2 * self.padding != self.stride:
            raise ConfigurationError(
                "generator upsampling must scale exactly by the stride "
                "(kernel - 2*padding == stride)",
                config_key="generator.kernel",
            )

    def seed_shape(self, height: int, width: int) -> Tuple[int, int]:
        """Seed map size ceil(H / stride^stages) × ceil(W / stride^stages)."""
        factor = self.stride ** len(self.upsample_channels)
        return math.ceil(height / factor), math.ceil(width / factor)


@dataclass
class DiscriminatorSpec:
    """Architecture shared by h and M (parameters are independent)."""

    conv_channels: Tuple[int, ...] = (16, 32)
    kernel: int = 3
    stride: int = 2
    padding: int = 1
    lstm_hidden: int = 32
    feature_dim: int = 16
    condition_m: bool = True
    leaky_slope: float = 0.2

    def __post_init__(self) -> None:
        self.conv_channels = tuple(self.conv_channels)
        enforce_rules(
            "discriminator",
            asdict(self),
            {
                "kernel": [validate_positive_int],
                "stride": [validate_positive_int],
                "padding": [validate_int_at_least(0)],
                "lstm_hidden": [validate_positive_int],
                "feature_dim": [validate_positive_int],
                "leaky_slope": [validate_unit_interval()],
            },
        )
        if min(self.conv_channels, default=1) < 1:
            raise ConfigurationError(
                "discriminator.conv_channels must be positive",
                config_key="discriminator.conv_channels",
            )


def _check_sequence(x: Tensor, frame: Tuple[int, int, int], what: str) -> Tuple[int, int]:
    if x.ndim != 5 or tuple(x.shape[2:]) != tuple(frame):
        raise ShapeError(
            f"{what} must be N×T×C×H×W with frames {frame}", ("N", "T") + tuple(frame), x.shape
        )
    return x.shape[0], x.shape[1]


class Generator(Module):
    """LSTM rollout over (z_t, c) followed by a per-frame upsampling head."""

    def __init__(
        self,
        spec: GeneratorSpec,
        context_dim: int,
        frame: Tuple[int, int, int],
        rng: np.random.Generator,
    ):
        super().__init__()
        self.spec = spec
        self.context_dim = context_dim
        self.frame = tuple(frame)
        channels, height, width = self.frame
        self.seed_hw = spec.seed_shape(height, width)

        self.lstm = LSTM(LSTMSpec(spec.noise.dim + context_dim, spec.lstm_hidden), rng)
        seed_size = spec.seed_channels * self.seed_hw[0] * self.seed_hw[1]
        self.project = Linear(spec.lstm_hidden, seed_size, rng)

        self.upsample: List[ConvTranspose2d] = []
        self.upsample_norms: List[BatchNorm] = []
        in_ch = spec.seed_channels
        for out_ch in spec.upsample_channels:
            tspec = Conv2dSpec(in_ch, out_ch, (spec.kernel, spec.kernel), spec.stride, spec.padding)
            self.upsample.append(ConvTranspose2d(tspec, rng))
            norm_spec = BatchNormSpec(out_ch, spec.bn_momentum, spec.bn_eps)
            self.upsample_norms.append(BatchNorm(norm_spec))
            in_ch = out_ch
        self.head = Conv2d(Conv2dSpec(in_ch, channels, (1, 1)), rng)

    def _conditioning(self, c: ContextEmbedding, batch: int, steps: int) -> Tensor:
        if c.batch_size != batch or c.dim != self.context_dim:
            raise ShapeError(
                "Context does not match the noise batch",
                (batch, "T", self.context_dim),
                c.values.shape,
            )
        if self.spec.context is GeneratorContext.PER_STEP:
            if c.steps != steps:
                raise ShapeError("Per-step context needs one vector per noise step", steps, c.steps)
            return c.values
        pooled = pool_context(c, PoolMode(self.spec.context.value))
        pooled = pooled.reshape(batch, 1, self.context_dim)
        return pooled.broadcast_to((batch, steps, self.context_dim))

    def forward(self, z: Tensor, c: ContextEmbedding) -> Tensor:
        if z.ndim != 3 or z.shape[2] != self.spec.noise.dim:
            raise ShapeError("Noise must be N×T×d_z", ("N", "T", self.spec.noise.dim), z.shape)
        if z.dtype != self.lstm.weight.dtype:
            z = Tensor(z.data, dtype=self.lstm.weight.dtype)
        n, steps, _ = z.shape
        channels, height, width = self.frame

        inputs = concat([z, self._conditioning(c, n, steps)], axis=2)
        hidden = self.lstm(inputs).reshape(n * steps, self.spec.lstm_hidden)
        x = leaky_relu(self.project(hidden), self.spec.leaky_slope)
        x = x.reshape(n * steps, self.spec.seed_channels, self.seed_hw[0], self.seed_hw[1])
        for tconv, norm in zip(self.upsample, self.upsample_norms):
            x = leaky_relu(norm(tconv(x)), self.spec.leaky_slope)
        x = self.head(x).tanh() * self.spec.output_scale
        if x.shape[2] != height or x.shape[3] != width:
            x = x[:, :, :height, :width]
        return x.reshape(n, steps, channels, height, width)


class SequenceDiscriminator(Module):
    """Per-frame conv stack, LSTM over time, linear map to J features per step."""

    def __init__(
        self,
        spec: DiscriminatorSpec,
        frame: Tuple[int, int, int],
        context_dim: int,
        conditioned: bool,
        rng: np.random.Generator,
    ):
        super().__init__()
        self.spec = spec
        self.frame = tuple(frame)
        self.context_dim = context_dim
        self.conditioned = conditioned
        channels, height, width = self.frame

        in_ch = channels + (context_dim if conditioned else 0)
        self.convs: List[Conv2d] = []
        for out_ch in spec.conv_channels:
            cspec = Conv2dSpec(in_ch, out_ch, (spec.kernel, spec.kernel), spec.stride, spec.padding)
            height, width = cspec.output_shape(height, width)
            self.convs.append(Conv2d(cspec, rng))
            in_ch = out_ch
        self.flat_size = in_ch * height * width
        self.lstm = LSTM(LSTMSpec(self.flat_size, spec.lstm_hidden), rng)
        self.head = Linear(spec.lstm_hidden, spec.feature_dim, rng)

    def forward(self, x: Tensor, c: Optional[ContextEmbedding] = None) -> Tensor:
        n, steps = _check_sequence(x, self.frame, "Discriminator input")
        channels, height, width = self.frame
        frames = x.reshape(n * steps, channels, height, width)
        if frames.dtype != self.lstm.weight.dtype:
            frames = Tensor(frames.data, dtype=self.lstm.weight.dtype)

        if self.conditioned:
            if c is None:
                raise ShapeError("Conditioned discriminator needs a context", "context", None)
            if c.values.shape != (n, steps, self.context_dim):
                raise ShapeError(
                    "Context does not match the sequence batch",
                    (n, steps, self.context_dim),
                    c.values.shape,
                )
            cmap = c.values.reshape(n * steps, self.context_dim, 1, 1).broadcast_to(
                (n * steps, self.context_dim, height, width)
            )
            frames = concat([frames, cmap], axis=1)

        for conv in self.convs:
            frames = leaky_relu(conv(frames), self.spec.leaky_slope)
        hidden = self.lstm(frames.reshape(n, steps, self.flat_size))
        features = self.head(hidden.reshape(n * steps, self.spec.lstm_hidden))
        return features.reshape(n, steps, self.spec.feature_dim)


class DiscriminatorPair(Module):
    """The networks h (causal cost) and M (martingale test functions)."""

    def __init__(
        self,
        spec: DiscriminatorSpec,
        frame: Tuple[int, int, int],
        context_dim: int,
        rng: np.random.Generator,
    ):
        super().__init__()
        self.spec = spec
        self.h = SequenceDiscriminator(spec, frame, context_dim, True, rng)
        self.m = SequenceDiscriminator(spec, frame, context_dim, spec.condition_m, rng)


def generate(z: Tensor, c: ContextEmbedding, generator: Generator) -> Tensor:
    """Generate an N×T×C×H×W batch; frame t depends on z_1..z_t and c only."""
    return generator(z, c)


def embed_h(x: Tensor, c: ContextEmbedding, pair: DiscriminatorPair) -> Tensor:
    return pair.h(x, c)


def embed_m(x: Tensor, c: ContextEmbedding, pair: DiscriminatorPair) -> Tensor:
    return pair.m(x, c if pair.m.conditioned else None)
