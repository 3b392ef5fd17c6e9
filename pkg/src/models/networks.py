"""All trainable networks of the conditional COT-GAN in one container."""

from typing import List, Tuple

import numpy as np

from src.nn import Module, Parameter

from .gan_core import DiscriminatorPair, DiscriminatorSpec, Generator, GeneratorSpec
from .mask_encoder import MaskEncoder, MaskEncoderSpec


class EventGanNetworks(Module):
    """Mask encoder, generator and discriminator pair.

    Construction order is fixed (encoder, generator, h, M) and draws from a
    single generator seeded by the caller, so identical seeds give identical
    initial weights.

    The encoder is optimised together with the discriminators; the generator
    step reads a detached context.
    """

    def __init__(
        self,
        encoder_spec: MaskEncoderSpec,
        generator_spec: GeneratorSpec,
        discriminator_spec: DiscriminatorSpec,
        frame: Tuple[int, int, int],
        seed: int,
    ):
        super().__init__()
        rng = np.random.default_rng(seed)
        encoder_spec.check_frame_size(frame[1], frame[2])
        self.frame = tuple(frame)
        self.encoder = MaskEncoder(encoder_spec, rng)
        self.generator = Generator(generator_spec, encoder_spec.context_dim, self.frame, rng)
        self.discriminators = DiscriminatorPair(
            discriminator_spec, self.frame, encoder_spec.context_dim, rng
        )

    def generator_parameters(self) -> List[Tuple[str, Parameter]]:
        return list(self.generator.named_parameters("generator."))

    def discriminator_parameters(self) -> List[Tuple[str, Parameter]]:
        return list(self.encoder.named_parameters("encoder.")) + list(
            self.discriminators.named_parameters("discriminators.")
        )
