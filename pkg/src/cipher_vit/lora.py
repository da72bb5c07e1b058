"""Low-rank adapters on the query/value projections.

Each adapted projection gains a trainable side branch W_B @ W_A scaled by
alpha/rank; W_B starts at zero so injection leaves the model function
exactly unchanged. Adapter tensors register under the lora. prefix so
freeze policies can select them, and the base weight is never mutated —
merging is an explicit export step.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import DimensionError, ParameterError, StateError
from .vit import ViTModel


@dataclass(frozen=True)
class LoraConfig:
    rank: int = 8
    alpha: float = 4.0
    targets: tuple = ("q", "v")

    def __post_init__(self):
        if self.rank < 1:
            raise ParameterError(f"rank must be >= 1, got {self.rank}")
        if self.alpha <= 0:
            raise ParameterError(f"alpha must be > 0, got {self.alpha}")
        targets = tuple(self.targets)
        if not targets or any(t not in ("q", "v") for t in targets):
            raise ParameterError(f"targets must be a nonempty subset of ('q', 'v'), got {targets}")
        object.__setattr__(self, "targets", targets)

    @property
    def scaling(self):
        return self.alpha / self.rank


@dataclass
class LoraAdapter:
    w_a: Tensor  # (rank, d)
    w_b: Tensor  # (d, rank)
    owner: str   # registry path of the wrapped projection
    scaling: float


def adapter_param_count(config, lora_cfg):
    """depth * |targets| * 2 * d * r."""
    return config.depth * len(lora_cfg.targets) * 2 * config.embed_dim * lora_cfg.rank


def inject(model: ViTModel, cfg: LoraConfig, seed=0):
    """Attach one adapter per target projection per block.

    W_A is zero-mean Gaussian (std 0.02), W_B zero, so post-injection
    outputs equal pre-injection outputs until training moves W_B.
    """
    if model.adapters:
        raise StateError("model already has adapters injected")
    d = model.config.embed_dim
    if cfg.rank >= d:
        raise ParameterError(f"rank {cfg.rank} must be < embed_dim {d}")
    rng = np.random.default_rng(seed)
    dtype = model.dtype
    for i in range(model.config.depth):
        for target in cfg.targets:
            owner = f"blocks.{i}.attn.w_{target}"
            w_a = Tensor(rng.standard_normal((cfg.rank, d)) * 0.02,
                         requires_grad=True, dtype=dtype)
            w_b = Tensor(np.zeros((d, cfg.rank)), requires_grad=True, dtype=dtype)
            adapter = LoraAdapter(w_a, w_b, owner, cfg.scaling)
            prefix = f"lora.blocks.{i}.attn.{target}"
            model.registry[f"{prefix}.w_a"] = w_a
            model.registry[f"{prefix}.w_b"] = w_b
            model.adapters[owner] = adapter
    model.lora_config = cfg
    return model


def lora_forward(x, w, adapter, alpha, rank, bias=None):
    """w x + (alpha/rank) * W_B (W_A x) on row-per-token input."""
    from . import autodiff as ad

    d = w.data.shape[0]
    if adapter.w_a.data.shape != (rank, d) or adapter.w_b.data.shape != (d, rank):
        raise DimensionError(
            f"adapter shapes {adapter.w_a.data.shape}/{adapter.w_b.data.shape} "
            f"inconsistent with d={d}, rank={rank}")
    base = ad.linear(x, w, bias)
    branch = ad.linear(ad.linear(x, adapter.w_a), adapter.w_b)
    return ad.add(base, ad.scale(branch, alpha / rank))


def merge(w, adapter, alpha, rank):
    """w + (alpha/rank) * W_B @ W_A as a fresh tensor; the base stays untouched."""
    merged = w.data + (alpha / rank) * (adapter.w_b.data @ adapter.w_a.data)
    return Tensor(merged.astype(w.data.dtype), requires_grad=w.requires_grad,
                  dtype=w.data.dtype)


def merge_model(model: ViTModel):
    """Adapter-free copy whose projections carry the merged weights."""
    cfg = model.lora_config
    if cfg is None:
        raise StateError("model has no adapters to merge")
    registry = {}
    for name, t in model.registry.items():
        if name.startswith("lora."):
            continue
        if name in model.adapters:
            adapter = model.adapters[name]
            registry[name] = merge(t, adapter, cfg.alpha, cfg.rank)
        else:
            registry[name] = Tensor(t.data.copy(), requires_grad=t.requires_grad,
                                    dtype=t.data.dtype)
    return ViTModel(config=model.config, registry=registry)
