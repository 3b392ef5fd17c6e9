"""Causal optimal transport losses."""

from .loss import (
    LossTerms,
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

__all__ = [
    "SinkhornConfig",
    "SequenceFeatures",
    "LossTerms",
    "base_cost",
    "causal_cost",
    "sinkhorn_value",
    "sinkhorn_plan",
    "transport_value",
    "mixed_sinkhorn_divergence",
    "martingale_penalty",
    "sequence_features",
    "discriminator_loss",
    "generator_loss",
]
