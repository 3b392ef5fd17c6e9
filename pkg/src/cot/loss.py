"""Causal optimal transport objective.

Sequence costs, log-domain Sinkhorn, the four-batch mixed divergence and the
martingale penalty, assembled into generator and discriminator losses. The
transport value between batches ``a`` and ``b`` uses the cost

    c(a_i, b_j) = Σ_t ‖a_i,t − b_j,t‖² / (T·D) + λ · Σ_t Σ_k h(b_j)_t,k · ΔM(a_i)_t,k

with ΔM the time increments of M. Gradients flow through every unrolled
Sinkhorn iteration.
"""

import math
from dataclasses import asdict, dataclass, replace
from typing import List, Optional, Tuple

import numpy as np

from src.models.gan_core import DiscriminatorPair, embed_h, embed_m
from src.models.mask_encoder import ContextEmbedding
from src.nn import Tensor
from src.utils.common.config import enforce_rules
from src.utils.common.exceptions import NumericError, ShapeError
from src.utils.common.validation import (
    validate_non_negative_number,
    validate_positive_int,
    validate_positive_number,
)


@dataclass
class SinkhornConfig:
    """Entropic OT settings shared by all terms of the divergence."""

    epsilon: float = 0.1
    iterations: int = 100
    causal_weight: float = 1.0
    penalty_weight: float = 1.0
    normalize_cost: bool = True

    def __post_init__(self) -> None:
        enforce_rules(
            "sinkhorn",
            asdict(self),
            {
                "epsilon": [validate_positive_number],
                "iterations": [validate_positive_int],
                "causal_weight": [validate_non_negative_number],
                "penalty_weight": [validate_non_negative_number],
            },
        )

    def without_causal_term(self) -> "SinkhornConfig":
        return replace(self, causal_weight=0.0)


@dataclass
class SequenceFeatures:
    """A batch as seen by the cost: flattened frames plus its h and M features."""

    values: Tensor
    h: Optional[Tensor] = None
    m: Optional[Tensor] = None

    @property
    def increments(self) -> Optional[Tensor]:
        if self.m is None or self.m.shape[1] < 2:
            return None
        steps = self.m.shape[1]
        return self.m[:, 1:steps, :] - self.m[:, 0 : steps - 1, :]


@dataclass
class LossTerms:
    loss: Tensor
    divergence: Tensor
    penalty: Tensor


def _as_sequences(x: Tensor) -> Tensor:
    if x.ndim < 3:
        raise ShapeError("Sequence batch must be at least B×T×D", ">= 3", x.ndim)
    if x.ndim == 3:
        return x
    return x.reshape(x.shape[0], x.shape[1], int(np.prod(x.shape[2:])))


def base_cost(x: Tensor, y: Tensor) -> Tensor:
    """Pairwise sequence cost ``C[i, j] = Σ_t ‖x_i,t − y_j,t‖²``.

    Frames beyond the time axis are flattened, so N×T×C×H×W batches are
    accepted directly. The difference form makes ``C[i, i] = 0`` exactly for
    ``x = y``.
    """
    x, y = _as_sequences(x), _as_sequences(y)
    if x.shape[1:] != y.shape[1:]:
        raise ShapeError("base_cost needs matching T and D", x.shape[1:], y.shape[1:])
    bx, by = x.shape[0], y.shape[0]
    width = x.shape[1] * x.shape[2]
    diff = x.reshape(bx, 1, width) - y.reshape(1, by, width)
    return (diff * diff).sum(axis=2)


def causal_cost(cbase: Tensor, h_y: Tensor, dm_x: Tensor, causal_weight: float) -> Tensor:
    """Add ``λ · Σ_t Σ_k h_y[j, t, k] · ΔM_x[i, t, k]`` over t < T to the base cost."""
    if causal_weight == 0.0:
        return cbase
    if h_y.ndim != 3 or dm_x.ndim != 3:
        raise ShapeError("causal_cost expects N×T×J features", 3, (h_y.ndim, dm_x.ndim))
    bx, increments, feats = dm_x.shape
    by, steps, feats_h = h_y.shape
    if feats != feats_h or increments != steps - 1:
        raise ShapeError(
            "h must be N×T×J and ΔM N×(T−1)×J with the same J",
            (by, steps - 1, feats_h),
            dm_x.shape,
        )
    if cbase.shape != (bx, by):
        raise ShapeError(
            "Base cost shape does not match the feature batches", (bx, by), cbase.shape
        )
    width = increments * feats
    h_part = h_y[:, 0:increments, :].reshape(by, width)
    coupling = dm_x.reshape(bx, width) @ h_part.transpose(1, 0)
    return cbase + coupling * causal_weight


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    peak = np.max(a, axis=axis, keepdims=True)
    return np.squeeze(peak + np.log(np.sum(np.exp(a - peak), axis=axis, keepdims=True)), axis=axis)


def _potentials(
    cost: np.ndarray, epsilon: float, iterations: int
) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Potentials after every round; ``g`` starts at zero."""
    rows, cols = cost.shape
    log_a, log_b = -math.log(rows), -math.log(cols)
    g = np.zeros(cols)
    fs, gs = [], []
    for _ in range(iterations):
        f = -epsilon * _logsumexp((g[None, :] - cost) / epsilon + log_b, axis=1)
        g = -epsilon * _logsumexp((f[:, None] - cost) / epsilon + log_a, axis=0)
        fs.append(f)
        gs.append(g)
    return fs, gs


def _plan(cost: np.ndarray, f: np.ndarray, g: np.ndarray, epsilon: float) -> np.ndarray:
    rows, cols = cost.shape
    return np.exp((f[:, None] + g[None, :] - cost) / epsilon - math.log(rows) - math.log(cols))


def sinkhorn_value(cost: Tensor, cfg: SinkhornConfig) -> Tensor:
    """Entropic OT value ⟨P, C⟩ with uniform marginals, log-domain updates.

    Alternates ``f = −ε·LSE_j((g_j − C_ij)/ε + log b_j)`` and
    ``g = −ε·LSE_i((f_i − C_ij)/ε + log a_i)`` for ``cfg.iterations`` rounds;
    the coupling is ``P_ij = a_i b_j exp((f_i + g_j − C_ij)/ε)``. Iterations
    run in float64 and the backward pass unrolls every round in reverse.
    """
    if cost.ndim != 2:
        raise ShapeError("Cost must be a matrix", 2, cost.ndim)
    if not np.all(np.isfinite(cost.data)):
        raise NumericError("Sinkhorn received a non-finite cost matrix", operation="sinkhorn_value")
    eps = float(cfg.epsilon)
    rows, cols = cost.shape
    log_a, log_b = -math.log(rows), -math.log(cols)
    c64 = cost.data.astype(np.float64)
    fs, gs = _potentials(c64, eps, cfg.iterations)
    plan = _plan(c64, fs[-1], gs[-1], eps)
    value = np.asarray(np.sum(plan * c64), dtype=cost.dtype)

    def backward(grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        scale = float(grad)
        weighted = plan * c64 * (scale / eps)
        c_bar = scale * plan - weighted
        f_bar = weighted.sum(axis=1)
        g_bar = weighted.sum(axis=0)
        for it in range(cfg.iterations - 1, -1, -1):
            f = fs[it]
            # g_it = -eps * LSE_i((f_it - C) / eps + log a)
            col_weights = np.exp((f[:, None] + gs[it][None, :] - c64) / eps + log_a)
            c_bar += col_weights * g_bar[None, :]
            f_bar = f_bar - col_weights @ g_bar
            # f_it = -eps * LSE_j((g_{it-1} - C) / eps + log b)
            g_prev = gs[it - 1] if it > 0 else np.zeros(cols)
            row_weights = np.exp((f[:, None] + g_prev[None, :] - c64) / eps + log_b)
            c_bar += row_weights * f_bar[:, None]
            g_bar = -(row_weights.T @ f_bar)
            f_bar = np.zeros(rows)
        return (c_bar,)

    return Tensor._make(value, (cost,), "sinkhorn_value", backward)


def sinkhorn_plan(cost: Tensor, cfg: SinkhornConfig) -> np.ndarray:
    """Coupling matrix implied by the potentials after ``cfg.iterations`` rounds."""
    c64 = cost.data.astype(np.float64)
    fs, gs = _potentials(c64, float(cfg.epsilon), cfg.iterations)
    return _plan(c64, fs[-1], gs[-1], float(cfg.epsilon))


def transport_value(a: SequenceFeatures, b: SequenceFeatures, cfg: SinkhornConfig) -> Tensor:
    """W(a, b) under the causal cost built from M(a) and h(b)."""
    cost = base_cost(a.values, b.values)
    if cfg.normalize_cost:
        steps, width = a.values.shape[1], int(np.prod(a.values.shape[2:]))
        cost = cost * (1.0 / (steps * width))
    dm_a = a.increments
    if cfg.causal_weight > 0.0 and dm_a is not None and b.h is not None:
        cost = causal_cost(cost, b.h, dm_a, cfg.causal_weight)
    return sinkhorn_value(cost, cfg)


def mixed_sinkhorn_divergence(
    x: SequenceFeatures,
    x_p: SequenceFeatures,
    y: SequenceFeatures,
    y_p: SequenceFeatures,
    cfg: SinkhornConfig,
) -> Tensor:
    """``W(x, y) + W(x', y') − W(x, x') − W(y, y')`` for real x, x' and generated y, y'."""
    sizes = {x.values.shape[0], x_p.values.shape[0], y.values.shape[0], y_p.values.shape[0]}
    if len(sizes) != 1:
        raise ShapeError("Mixed divergence needs four equally sized batches", 1, sorted(sizes))
    return (
        transport_value(x, y, cfg)
        + transport_value(x_p, y_p, cfg)
        - transport_value(x, x_p, cfg)
        - transport_value(y, y_p, cfg)
    )


def martingale_penalty(m_x: Tensor) -> Tensor:
    """``Σ_k Σ_t |mean over the batch of ΔM_x[·, t, k]|``; zero for time-constant M."""
    if m_x.ndim != 3:
        raise ShapeError("martingale_penalty expects N×T×J features", 3, m_x.ndim)
    if m_x.shape[0] < 2:
        raise ShapeError("martingale_penalty needs a batch of at least 2", ">= 2", m_x.shape[0])
    steps = m_x.shape[1]
    if steps < 2:
        return Tensor(np.zeros((), dtype=m_x.dtype))
    increments = m_x[:, 1:steps, :] - m_x[:, 0 : steps - 1, :]
    return increments.mean(axis=0).abs().sum()


def sequence_features(
    x: Tensor, c: ContextEmbedding, pair: Optional[DiscriminatorPair]
) -> SequenceFeatures:
    """Flatten a batch and attach its h and M features (none without a pair)."""
    values = _as_sequences(x)
    if pair is None:
        return SequenceFeatures(values)
    return SequenceFeatures(values, embed_h(x, c, pair), embed_m(x, c, pair))


def _divergence_and_penalty(
    real: Tensor,
    real_p: Tensor,
    fake: Tensor,
    fake_p: Tensor,
    c: ContextEmbedding,
    c_p: ContextEmbedding,
    pair: DiscriminatorPair,
    cfg: SinkhornConfig,
) -> LossTerms:
    x = sequence_features(real, c, pair)
    x_p = sequence_features(real_p, c_p, pair)
    y = sequence_features(fake, c, pair)
    y_p = sequence_features(fake_p, c_p, pair)
    divergence = mixed_sinkhorn_divergence(x, x_p, y, y_p, cfg)
    penalty = martingale_penalty(x.m)  # type: ignore[arg-type]
    return LossTerms(loss=divergence, divergence=divergence, penalty=penalty)


def discriminator_loss(
    real: Tensor,
    real_p: Tensor,
    fake: Tensor,
    fake_p: Tensor,
    c: ContextEmbedding,
    c_p: ContextEmbedding,
    pair: DiscriminatorPair,
    cfg: SinkhornConfig,
) -> LossTerms:
    """Loss minimised by the discriminator pair: ``−(divergence − w · penalty)``.

    ``c`` and ``c_p`` are the contexts of the two real batches' masks; they
    condition the real and the generated embeddings alike.
    """
    terms = _divergence_and_penalty(real, real_p, fake, fake_p, c, c_p, pair, cfg)
    terms.loss = -(terms.divergence - terms.penalty * cfg.penalty_weight)
    return terms


def generator_loss(
    real: Tensor,
    real_p: Tensor,
    fake: Tensor,
    fake_p: Tensor,
    c: ContextEmbedding,
    c_p: ContextEmbedding,
    pair: DiscriminatorPair,
    cfg: SinkhornConfig,
) -> LossTerms:
    """Loss minimised by the generator: the mixed divergence itself."""
    return _divergence_and_penalty(real, real_p, fake, fake_p, c, c_p, pair, cfg)
