import numpy as np
import pytest

from cipher_vit import data
from cipher_vit.lora import LoraConfig, inject
from cipher_vit.vit import TOY_CONFIG, ViTConfig, build_vit

# the smallest shape that still has two blocks, two heads, and a real MLP
TINY = ViTConfig(image_size=16, patch_size=4, embed_dim=16, depth=2,
                 num_heads=2, mlp_dim=32, num_classes=10)


@pytest.fixture
def tiny_model():
    return build_vit(TINY, seed=11, dtype=np.float64)


@pytest.fixture
def tiny_model_lora():
    model = build_vit(TINY, seed=11, dtype=np.float64)
    inject(model, LoraConfig(rank=2, alpha=4.0), seed=12)
    return model


@pytest.fixture
def toy_model():
    return build_vit(TOY_CONFIG, seed=7, dtype=np.float32)


def make_two_class_set(n, seed, size=32):
    """Brightness-separated classes: learnable in a couple hundred steps."""
    rng = np.random.default_rng(seed)
    labels = (np.arange(n) % 2).astype(np.uint8)
    images = np.empty((n, 3, size, size), dtype=np.uint8)
    for i in range(n):
        base = 64 if labels[i] == 0 else 192
        images[i] = rng.normal(base, 24, size=(3, size, size)).clip(0, 255)
    return labels, images


@pytest.fixture
def cifar_dir(tmp_path):
    """A miniature on-disk dataset in the binary batch layout."""
    labels, images = make_two_class_set(64, seed=0)
    data.write_batch_file(tmp_path / "data_batch_1.bin", labels, images)
    tl, ti = make_two_class_set(32, seed=1)
    data.write_batch_file(tmp_path / "test_batch.bin", tl, ti)
    return tmp_path
