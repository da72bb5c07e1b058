"""Block-cipher image scrambling + low-rank-adapted ViT fine-tuning on a numpy autodiff engine."""

from .codec import decrypt_image, derive_permutation, encrypt_image
from .config import load_config
from .lora import LoraConfig, inject, merge_model
from .trainer import TrainConfig, apply_policy, evaluate, train
from .vit import TOY_CONFIG, ViTConfig, build_vit

__version__ = "0.1.0"

__all__ = [
    "decrypt_image", "derive_permutation", "encrypt_image",
    "load_config",
    "LoraConfig", "inject", "merge_model",
    "TrainConfig", "apply_policy", "evaluate", "train",
    "TOY_CONFIG", "ViTConfig", "build_vit",
    "__version__",
]
