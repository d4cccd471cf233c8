from .architectures import ArchitectureSpec, LayerSpec, MODEL_KINDS, build_architecture, canonical_kind
from .layers import MinibatchDiscrimination, SelfAttention, SpectralNorm, minibatch_discrimination, spectral_normalize
from .losses import (
    hinge_adversarial_loss,
    kld_diag_gaussian,
    masked_reconstruction_loss,
    reconstruction_loss,
    reparameterize,
    soften_labels,
)
from .networks import build_network
from .training import (
    REFERENCE_SEEDS,
    TrainConfig,
    TrainResult,
    desk_config,
    load_checkpoint,
    reference_config,
    save_checkpoint,
    train_model,
)
