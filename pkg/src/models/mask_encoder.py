"""Mask encoder: event segmentation sequences to the context embedding c."""

from dataclasses import asdict, dataclass
from enum import Enum
from typing import List, Tuple, Union

import numpy as np

from src.nn import (
    LSTM,
    BatchNorm,
    BatchNormSpec,
    Conv2d,
    Conv2dSpec,
    LSTMSpec,
    Module,
    Tensor,
    adaptive_avg_pool2d,
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


class PoolMode(str, Enum):
    LAST = "last"
    MEAN = "mean"


@dataclass
class MaskEncoderSpec:
    """Architecture of the mask encoder.

    Each conv stage is followed by batch norm and a leaky ReLU. The conv
    output is average pooled onto ``pool_grid`` (``(1, 1)`` is global average
    pooling), flattened and scanned by two LSTMs with batch norm over the
    N·T axis between them.
    """

    mask_channels: int = 1
    conv_channels: Tuple[int, ...] = (16, 32, 64)
    kernel: int = 3
    stride: int = 2
    padding: int = 1
    pool_grid: Tuple[int, int] = (1, 1)
    lstm_hidden: int = 64
    context_dim: int = 64
    leaky_slope: float = 0.2
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self) -> None:
        self.conv_channels = tuple(self.conv_channels)
        self.pool_grid = tuple(self.pool_grid)  # type: ignore[assignment]
        self.validate()

    def validate(self) -> None:
        enforce_rules(
            "encoder",
            asdict(self),
            {
                "mask_channels": [validate_positive_int],
                "kernel": [validate_positive_int],
                "stride": [validate_positive_int],
                "padding": [validate_int_at_least(0)],
                "lstm_hidden": [validate_positive_int],
                "context_dim": [validate_positive_int],
                "leaky_slope": [validate_unit_interval()],
                "bn_momentum": [validate_unit_interval(open_low=False, open_high=False)],
                "bn_eps": [validate_positive_number],
            },
        )
        if not self.conv_channels or min(self.conv_channels) < 1:
            raise ConfigurationError(
                "encoder.conv_channels must list at least one positive width",
                config_key="encoder.conv_channels",
            )
        if len(self.pool_grid) != 2 or min(self.pool_grid) < 1:
            raise ConfigurationError(
                "encoder.pool_grid must be two positive ints", config_key="encoder.pool_grid"
            )

    def conv_specs(self) -> List[Conv2dSpec]:
        specs = []
        in_ch = self.mask_channels
        for out_ch in self.conv_channels:
            specs.append(
                Conv2dSpec(in_ch, out_ch, (self.kernel, self.kernel), self.stride, self.padding)
            )
            in_ch = out_ch
        return specs

    @property
    def pooled_size(self) -> int:
        return self.conv_channels[-1] * self.pool_grid[0] * self.pool_grid[1]

    def feature_map_shape(self, height: int, width: int) -> Tuple[int, int]:
        """Spatial size after the conv stack; raises ShapeError if it vanishes."""
        for spec in self.conv_specs():
            height, width = spec.output_shape(height, width)
        return height, width

    def check_frame_size(self, height: int, width: int) -> None:
        fh, fw = self.feature_map_shape(height, width)
        if self.pool_grid[0] > fh or self.pool_grid[1] > fw:
            raise ShapeError(
                f"Pooling grid {self.pool_grid} exceeds the {fh}×{fw} encoder feature map "
                f"of {height}×{width} frames",
                (fh, fw),
                self.pool_grid,
            )


@dataclass
class ContextEmbedding:
    """Encoder output c, one d_c vector per sequence and time step."""

    values: Tensor

    @property
    def batch_size(self) -> int:
        return self.values.shape[0]

    @property
    def steps(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def detach(self) -> "ContextEmbedding":
        return ContextEmbedding(self.values.detach())


class MaskEncoder(Module):
    def __init__(self, spec: MaskEncoderSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        self.convs = [Conv2d(cs, rng) for cs in spec.conv_specs()]
        self.conv_norms = [
            BatchNorm(BatchNormSpec(ch, spec.bn_momentum, spec.bn_eps)) for ch in spec.conv_channels
        ]
        self.lstm1 = LSTM(LSTMSpec(spec.pooled_size, spec.lstm_hidden), rng)
        self.between_norm = BatchNorm(
            BatchNormSpec(spec.lstm_hidden, spec.bn_momentum, spec.bn_eps)
        )
        self.lstm2 = LSTM(LSTMSpec(spec.lstm_hidden, spec.context_dim), rng)

    def forward(self, mask: Union[Tensor, np.ndarray]) -> ContextEmbedding:
        if not isinstance(mask, Tensor):
            mask = Tensor(np.asarray(mask), dtype=self.lstm1.weight.dtype)
        elif mask.dtype != self.lstm1.weight.dtype:
            mask = Tensor(mask.data, dtype=self.lstm1.weight.dtype)
        if mask.ndim != 5 or mask.shape[2] != self.spec.mask_channels:
            raise ShapeError(
                "Mask batch must be N×T×K×H×W with K matching the encoder",
                ("N", "T", self.spec.mask_channels, "H", "W"),
                mask.shape,
            )
        n, steps, k, h, w = mask.shape
        self.spec.check_frame_size(h, w)

        x = mask.reshape(n * steps, k, h, w)
        for conv, norm in zip(self.convs, self.conv_norms):
            x = leaky_relu(norm(conv(x)), self.spec.leaky_slope)
        x = adaptive_avg_pool2d(x, self.spec.pool_grid).reshape(n, steps, self.spec.pooled_size)

        hidden = self.lstm1(x)
        hidden = self.between_norm(hidden.reshape(n * steps, self.spec.lstm_hidden))
        context = self.lstm2(hidden.reshape(n, steps, self.spec.lstm_hidden))
        return ContextEmbedding(context)


def encode_mask(mask: Union[Tensor, np.ndarray], encoder: MaskEncoder) -> ContextEmbedding:
    """Encode an N×T×K×H×W mask batch into an N×T×d_c context embedding."""
    return encoder(mask)


def pool_context(c: ContextEmbedding, mode: Union[PoolMode, str] = PoolMode.LAST) -> Tensor:
    """Reduce the context over time: the last step, or the mean over steps."""
    mode = PoolMode(mode)
    if mode is PoolMode.LAST:
        return c.values[:, c.steps - 1, :]
    return c.values.mean(axis=1)
