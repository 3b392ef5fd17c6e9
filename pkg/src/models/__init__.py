"""Mask encoder, conditioned generator and dual discriminators."""

from .gan_core import (
    DiscriminatorPair,
    DiscriminatorSpec,
    Generator,
    GeneratorContext,
    GeneratorSpec,
    NoiseSpec,
    SequenceDiscriminator,
    embed_h,
    embed_m,
    generate,
)
from .mask_encoder import (
    ContextEmbedding,
    MaskEncoder,
    MaskEncoderSpec,
    PoolMode,
    encode_mask,
    pool_context,
)
from .networks import EventGanNetworks

__all__ = [
    "MaskEncoderSpec",
    "MaskEncoder",
    "ContextEmbedding",
    "PoolMode",
    "encode_mask",
    "pool_context",
    "NoiseSpec",
    "GeneratorSpec",
    "GeneratorContext",
    "DiscriminatorSpec",
    "Generator",
    "SequenceDiscriminator",
    "DiscriminatorPair",
    "generate",
    "embed_h",
    "embed_m",
    "EventGanNetworks",
]
