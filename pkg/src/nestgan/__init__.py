"""Text-to-image GAN with one generator emitting an image pyramid and a
discriminator attached to every side output."""

from .conditioning import (CASample, ConditioningAugmentation, TextEncoder, UnknownTokenError,
                           Vocabulary, conditioning_augment, interpolate_embeddings, kl_divergence)
from .data import (Dataset, DatasetError, DatasetSpec, color_oracle, generate_synthetic_dataset,
                   ingest_external, make_batch)
from .discriminators import DiscOutput, Discriminator, DiscriminatorConfig, build_discriminator, receptive_field
from .generator import Generator, GeneratorConfig, build_generator
from .objectives import (LossReport, ScaleOutputs, discriminator_loss, generator_loss,
                         l1_self_regularization, lsgan_fake, lsgan_real)
from .trainer import (CheckpointError, NonFiniteLossError, TrainConfig, TrainingState, evaluate_model,
                      init_state, interpolate, load_checkpoint, lr_at, run_ablation, sample,
                      save_checkpoint, synthesize, train, train_step)

__version__ = "0.1.0"
