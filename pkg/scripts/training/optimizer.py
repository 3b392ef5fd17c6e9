"""AdamW with decoupled weight decay."""

from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, Iterable, List, Tuple

import numpy as np

from src.nn import Parameter
from src.utils.common.exceptions import NumericError, ShapeError, ValidationError
from src.utils.common.logging import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class AdamWHyper:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4


@dataclass
class Moments:
    """First and second moment estimates of one parameter."""

    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros_like(cls, value: np.ndarray) -> "Moments":
        return cls(np.zeros_like(value), np.zeros_like(value))


def adamw_step(
    param: np.ndarray,
    grad: np.ndarray,
    moments: Moments,
    hyper: AdamWHyper,
    step: int,
    name: str = "",
) -> None:
    """One AdamW update of ``param`` in place.

    ``θ ← θ − lr·(m̂/(√v̂ + ε) + w·θ)``, with the decay term taken on the
    pre-update θ so a zero gradient scales θ by exactly ``1 − lr·w``.

    Args:
        param: Parameter values, updated in place
        grad: Gradient of the loss w.r.t. ``param``
        moments: Moment estimates, updated in place
        hyper: Learning rate, betas, epsilon and decay
        step: 1-based step counter used for bias correction
        name: Parameter name for diagnostics

    Raises:
        ValidationError: If ``step`` is below 1
        ShapeError: If gradient or moments do not match the parameter
        NumericError: If the gradient holds NaN or Inf
    """
    if step < 1:
        raise ValidationError("AdamW step counter must be at least 1", field="step", value=step)
    if grad.shape != param.shape or moments.m.shape != param.shape:
        raise ShapeError(f"AdamW shapes differ for '{name}'", param.shape, grad.shape)
    if not np.all(np.isfinite(grad)):
        raise NumericError(
            f"Non-finite gradient for parameter '{name}'", operation="adamw_step", step=step
        )

    b1, b2 = hyper.beta1, hyper.beta2
    moments.m *= b1
    moments.m += (1.0 - b1) * grad
    moments.v *= b2
    moments.v += (1.0 - b2) * grad * grad
    m_hat = moments.m / (1.0 - b1**step)
    v_hat = moments.v / (1.0 - b2**step)

    if hyper.weight_decay:
        param *= param.dtype.type(1.0 - hyper.lr * hyper.weight_decay)
    param -= (hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)).astype(param.dtype)


class AdamW:
    """AdamW over a fixed, named parameter list."""

    def __init__(self, named_params: Iterable[Tuple[str, Parameter]], hyper: AdamWHyper):
        self.params: "OrderedDict[str, Parameter]" = OrderedDict(named_params)
        self.hyper = hyper
        self.step_count = 0
        self.moments: Dict[str, Moments] = {
            name: Moments.zeros_like(p.data) for name, p in self.params.items()
        }

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        """Apply one update; parameters without a gradient see only the decay."""
        self.step_count += 1
        for name, p in self.params.items():
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            adamw_step(p.data, grad, self.moments[name], self.hyper, self.step_count, name)

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, mom in self.moments.items():
            state[f"{name}.m"] = mom.m
            state[f"{name}.v"] = mom.v
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray], step_count: int) -> None:
        missing: List[str] = [
            key for name in self.moments for key in (f"{name}.m", f"{name}.v") if key not in state
        ]
        if missing:
            raise ShapeError("Optimizer state is missing moment estimates", None, missing[0])
        for name, mom in self.moments.items():
            m, v = state[f"{name}.m"], state[f"{name}.v"]
            if m.shape != mom.m.shape or v.shape != mom.v.shape:
                raise ShapeError(f"Moment shape mismatch for '{name}'", mom.m.shape, m.shape)
            mom.m[...] = m
            mom.v[...] = v
        self.step_count = int(step_count)
        logger.debug("Restored AdamW state at step %d", self.step_count)
