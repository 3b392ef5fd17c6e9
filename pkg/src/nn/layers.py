"""Layer containers: parameters, buffers, train/eval mode, state dicts."""

from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from src.utils.common.exceptions import ConfigurationError, ShapeError

from . import functional as F
from .init import ones, uniform_fan_in, zeros
from .tensor import Parameter, Tensor, stack


@dataclass(frozen=True)
class Conv2dSpec:
    """Hyperparameters of a 2-D convolution (or its transpose)."""

    in_channels: int
    out_channels: int
    kernel: Tuple[int, int] = (3, 3)
    stride: int = 1
    padding: int = 0

    def output_shape(self, height: int, width: int) -> Tuple[int, int]:
        ho = F.conv_output_size(height, self.kernel[0], self.stride, self.padding)
        wo = F.conv_output_size(width, self.kernel[1], self.stride, self.padding)
        if ho < 1 or wo < 1:
            raise ShapeError(
                f"Convolution {self} leaves no output on a {height}×{width} input",
                ">= 1",
                (ho, wo),
            )
        return ho, wo


@dataclass(frozen=True)
class LSTMSpec:
    input_size: int
    hidden_size: int


@dataclass(frozen=True)
class BatchNormSpec:
    features: int
    momentum: float = 0.1
    eps: float = 1e-5

    def __post_init__(self) -> None:
        if self.eps <= 0:
            raise ConfigurationError("batchnorm eps must be positive", config_key="eps")


class Module:
    """Base class for anything holding parameters or buffers.

    Parameters are discovered from instance attributes (``Parameter``, child
    ``Module`` and lists of modules) in assignment order, which fixes the
    order used by optimizers and checkpoints.
    """

    def __init__(self) -> None:
        self.training = True
        self._buffers: Dict[str, np.ndarray] = OrderedDict()

    def __call__(self, *args, **kwargs):  # type: ignore[no-untyped-def]
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # type: ignore[no-untyped-def]
        raise NotImplementedError

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value

    def buffer(self, name: str) -> np.ndarray:
        return self._buffers[name]

    def _children(self) -> Iterator[Tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, value in self._buffers.items():
            yield prefix + name, value
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, p in self.named_parameters():
            state[name] = p.data.copy()
        for name, buf in self.named_buffers():
            state[name] = buf.copy()
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        """Copy arrays into parameters and buffers, checking names and shapes."""
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())

        if strict:
            known = set(params) | set(buffers)
            missing = sorted(known - set(state))
            unexpected = sorted(set(state) - known)
            if missing or unexpected:
                raise ShapeError(
                    "State dict does not match the module",
                    expected=missing[:3] or None,
                    actual=unexpected[:3] or None,
                )

        for name, param in params.items():
            if name not in state:
                continue
            value = np.asarray(state[name])
            if value.shape != param.shape:
                raise ShapeError(f"Shape mismatch for '{name}'", param.shape, value.shape)
            param.data = value.astype(param.dtype).copy()
        for name, buf in buffers.items():
            if name not in state:
                continue
            value = np.asarray(state[name])
            if value.shape != buf.shape:
                raise ShapeError(f"Shape mismatch for '{name}'", buf.shape, value.shape)
            buf[...] = value

    def astype(self, dtype: type) -> "Module":
        """Cast parameters and buffers in place (64-bit for gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        self._cast_buffers(dtype)
        return self

    def _cast_buffers(self, dtype: type) -> None:
        for name in list(self._buffers):
            self._buffers[name] = self._buffers[name].astype(dtype)
        for _, child in self._children():
            child._cast_buffers(dtype)


class Conv2d(Module):
    def __init__(self, spec: Conv2dSpec, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.spec = spec
        kh, kw = spec.kernel
        fan_in = spec.in_channels * kh * kw
        self.weight = Parameter(
            uniform_fan_in(rng, (spec.out_channels, spec.in_channels, kh, kw), fan_in), "weight"
        )
        self.bias: Optional[Parameter] = (
            Parameter(uniform_fan_in(rng, (spec.out_channels,), fan_in), "bias") if bias else None
        )

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.spec.stride, self.spec.padding)


class ConvTranspose2d(Module):
    def __init__(self, spec: Conv2dSpec, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.spec = spec
        kh, kw = spec.kernel
        fan_in = spec.out_channels * kh * kw
        self.weight = Parameter(
            uniform_fan_in(rng, (spec.in_channels, spec.out_channels, kh, kw), fan_in), "weight"
        )
        self.bias: Optional[Parameter] = (
            Parameter(uniform_fan_in(rng, (spec.out_channels,), fan_in), "bias") if bias else None
        )

    def forward(self, x: Tensor) -> Tensor:
        return F.conv_transpose2d(x, self.weight, self.bias, self.spec.stride, self.spec.padding)


class BatchNorm(Module):
    """Batch normalisation over axis 1 of N×F or N×F×H×W input."""

    def __init__(self, spec: BatchNormSpec):
        super().__init__()
        self.spec = spec
        self.gamma = Parameter(ones((spec.features,)), "gamma")
        self.beta = Parameter(zeros((spec.features,)), "beta")
        self.register_buffer("running_mean", zeros((spec.features,)))
        self.register_buffer("running_var", ones((spec.features,)))

    def forward(self, x: Tensor) -> Tensor:
        return F.batchnorm(
            x,
            self.gamma,
            self.beta,
            self.buffer("running_mean"),
            self.buffer("running_var"),
            self.training,
            self.spec.momentum,
            self.spec.eps,
        )


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        super().__init__()
        weight = uniform_fan_in(rng, (in_features, out_features), in_features)
        self.weight = Parameter(weight, "weight")
        self.bias = Parameter(uniform_fan_in(rng, (out_features,), in_features), "bias")

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class LSTM(Module):
    """Single-layer LSTM with fused gate weights (input, forget, candidate, output)."""

    def __init__(self, spec: LSTMSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        fan_in = spec.input_size + spec.hidden_size
        weight = uniform_fan_in(rng, (fan_in, 4 * spec.hidden_size), fan_in)
        self.weight = Parameter(weight, "weight")
        self.bias = Parameter(uniform_fan_in(rng, (4 * spec.hidden_size,), fan_in), "bias")

    def initial_state(self, batch: int) -> F.LSTMState:
        dtype = self.weight.dtype
        shape = (batch, self.spec.hidden_size)
        return Tensor(np.zeros(shape, dtype=dtype)), Tensor(np.zeros(shape, dtype=dtype))

    def step(self, x_t: Tensor, state: F.LSTMState) -> Tuple[Tensor, F.LSTMState]:
        return F.lstm_step(x_t, state, self.weight, self.bias)

    def forward(self, sequence: Tensor, state: Optional[F.LSTMState] = None) -> Tensor:
        """Scan an N×T×I sequence and return the N×T×H hidden sequence."""
        if sequence.ndim != 3 or sequence.shape[2] != self.spec.input_size:
            raise ShapeError(
                "LSTM expects N×T×I input", ("N", "T", self.spec.input_size), sequence.shape
            )
        n, steps, _ = sequence.shape
        state = state or self.initial_state(n)
        outputs = []
        for t in range(steps):
            h, state = self.step(sequence[:, t, :], state)
            outputs.append(h)
        return stack(outputs, axis=1)
