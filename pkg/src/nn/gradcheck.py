"""Central finite-difference gradient checking."""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.utils.common.logging import get_logger

from .tensor import Parameter, Tensor

logger = get_logger(__name__)


@dataclass
class GradCheckReport:
    """Outcome of comparing analytic and numerical derivatives."""

    checked: int = 0
    within_tolerance: int = 0
    max_relative_error: float = 0.0
    failures: List[Tuple[str, Tuple[int, ...], float, float]] = field(default_factory=list)

    @property
    def fraction_within(self) -> float:
        return self.within_tolerance / self.checked if self.checked else 1.0

    def passed(self, min_fraction: float = 0.95, max_error: float = 1e-2) -> bool:
        return self.fraction_within >= min_fraction and self.max_relative_error <= max_error


def gradients(loss: Tensor, params: Sequence[Tuple[str, Parameter]]) -> Dict[str, np.ndarray]:
    """Reverse-mode derivatives of a scalar loss for every named parameter.

    Gradients are cleared first, so the result holds exactly this loss's
    contribution; parameters that do not influence the loss get zeros.
    """
    for _, p in params:
        p.zero_grad()
    loss.backward()
    return {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params
    }


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tuple[str, Parameter]],
    step: float = 1e-3,
    rtol: float = 1e-3,
    atol: float = 1e-7,
    max_coords_per_param: Optional[int] = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    ``loss_fn`` must rebuild the graph deterministically on every call; cast
    the modules and inputs to float64 beforehand so the re-evaluations are
    64-bit. A coordinate counts as within tolerance when its relative error
    is at most ``rtol`` or its absolute difference is at most ``atol``.

    Args:
        loss_fn: Zero-argument callable returning a scalar loss tensor
        params: Named parameters to check
        step: Finite-difference step
        rtol: Relative tolerance per coordinate
        atol: Absolute floor below which differences are ignored
        max_coords_per_param: Optional cap, coordinates sampled without replacement
        seed: Seed for coordinate sampling

    Returns:
        GradCheckReport
    """
    analytic = gradients(loss_fn(), params)
    rng = np.random.default_rng(seed)
    report = GradCheckReport()

    for name, p in params:
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords_per_param is not None and flat.size > max_coords_per_param:
            coords = np.sort(rng.choice(flat.size, size=max_coords_per_param, replace=False))
        grad_flat = analytic[name].reshape(-1)

        for k in coords:
            original = flat[k]
            flat[k] = original + step
            plus = loss_fn().item()
            flat[k] = original - step
            minus = loss_fn().item()
            flat[k] = original
            numeric = (plus - minus) / (2.0 * step)
            exact = float(grad_flat[k])
            diff = abs(exact - numeric)
            scale = max(abs(exact), abs(numeric), 1e-12)
            rel = diff / scale
            ok = rel <= rtol or diff <= atol
            report.checked += 1
            if ok:
                report.within_tolerance += 1
            else:
                report.failures.append((name, tuple(np.unravel_index(k, p.shape)), exact, numeric))
            if diff > atol:
                report.max_relative_error = max(report.max_relative_error, rel)

    logger.debug(
        "Gradient check: %d/%d coordinates within tolerance, max relative error %.3e",
        report.within_tolerance,
        report.checked,
        report.max_relative_error,
    )
    return report
