"""Vision transformer built on the autodiff engine.

Pre-norm encoder blocks, learnable class token and position embeddings,
weights held in a flat name -> Tensor registry (dot-separated paths such
as blocks.3.attn.w_q) so tuning policies can select parameters by pattern.
Tokens are stored row-per-token: (batch, tokens, dim).
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, ParameterError


@dataclass(frozen=True)
class ViTConfig:
    image_size: int = 224
    patch_size: int = 16
    embed_dim: int = 768
    depth: int = 12
    num_heads: int = 12
    mlp_dim: int = 3072
    num_classes: int = 10

    def __post_init__(self):
        for name in ("image_size", "patch_size", "embed_dim", "depth", "num_heads",
                     "mlp_dim", "num_classes"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.image_size % self.patch_size:
            raise ParameterError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.embed_dim % self.num_heads:
            raise ParameterError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")

    @property
    def num_patches(self):
        return (self.image_size // self.patch_size) ** 2

    @property
    def num_tokens(self):
        return self.num_patches + 1

    @property
    def head_dim(self):
        return self.embed_dim // self.num_heads

    @property
    def patch_vec_size(self):
        return 3 * self.patch_size ** 2


TOY_CONFIG = ViTConfig(image_size=32, patch_size=8, embed_dim=32, depth=2,
                       num_heads=4, mlp_dim=64, num_classes=10)


@dataclass
class ViTModel:
    config: ViTConfig
    registry: dict = field(default_factory=dict)  # name -> Tensor, insertion-ordered
    adapters: dict = field(default_factory=dict)  # owner path -> LoraAdapter
    lora_config: object = None

    def param(self, name):
        return self.registry[name]

    def named_params(self, trainable_only=False):
        for name, t in self.registry.items():
            if not trainable_only or t.requires_grad:
                yield name, t

    @property
    def dtype(self):
        return next(iter(self.registry.values())).data.dtype


def count_params(model, trainable_only=False):
    """Exact enumeration of registry element counts."""
    return sum(t.data.size for _, t in model.named_params(trainable_only))


# -------------------------------------------------------------------- init

def _trunc_normal(rng, shape, std, dtype):
    # resample tails beyond 2 std
    out = rng.standard_normal(shape) * std
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum())) * std
        bad = np.abs(out) > 2.0 * std
    return out.astype(dtype)


def _xavier_uniform(rng, shape, dtype):
    fan_out, fan_in = shape[0], shape[1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def build_vit(config, seed=0, dtype=np.float32, init="random"):
    """Fresh model. init="random": truncated-normal (std 0.02) embeddings/head,
    Xavier-uniform projections. init="zeros": fast path for parameter counting."""
    if init not in ("random", "zeros"):
        raise ParameterError(f"unknown init {init!r}")
    rng = np.random.default_rng(seed)
    d, mlp, classes = config.embed_dim, config.mlp_dim, config.num_classes

    def project(shape):
        if init == "zeros":
            return np.zeros(shape, dtype=dtype)
        return _xavier_uniform(rng, shape, dtype)

    def embed(shape):
        if init == "zeros":
            return np.zeros(shape, dtype=dtype)
        return _trunc_normal(rng, shape, 0.02, dtype)

    def zeros(shape):
        return np.zeros(shape, dtype=dtype)

    def ones(shape):
        return np.ones(shape, dtype=dtype)

    reg = {}
    reg["patch_embed.weight"] = embed((d, config.patch_vec_size))
    reg["patch_embed.bias"] = zeros((d,))
    reg["cls_token"] = embed((1, 1, d))
    reg["pos_embed"] = embed((1, config.num_tokens, d))
    for i in range(config.depth):
        p = f"blocks.{i}"
        reg[f"{p}.norm1.gamma"] = ones((d,))
        reg[f"{p}.norm1.beta"] = zeros((d,))
        for proj in ("q", "k", "v", "o"):
            reg[f"{p}.attn.w_{proj}"] = project((d, d))
            reg[f"{p}.attn.b_{proj}"] = zeros((d,))
        reg[f"{p}.norm2.gamma"] = ones((d,))
        reg[f"{p}.norm2.beta"] = zeros((d,))
        reg[f"{p}.mlp.w1"] = project((mlp, d))
        reg[f"{p}.mlp.b1"] = zeros((mlp,))
        reg[f"{p}.mlp.w2"] = project((d, mlp))
        reg[f"{p}.mlp.b2"] = zeros((d,))
    reg["norm.gamma"] = ones((d,))
    reg["norm.beta"] = zeros((d,))
    reg["head.weight"] = embed((classes, d))
    reg["head.bias"] = zeros((classes,))

    registry = {name: Tensor(arr, requires_grad=True, dtype=dtype) for name, arr in reg.items()}
    return ViTModel(config=config, registry=registry)


# ----------------------------------------------------------------- patching

def patchify(images, patch_size):
    """(B, 3, H, W) float -> (B, num_patches, 3*P*P); blocks row-major,
    values channel-major (c, y, x) within a block, matching the codec."""
    if images.ndim != 4 or images.shape[1] != 3:
        raise DimensionError(f"patchify expects (B, 3, H, W), got {images.shape}")
    b, _, h, w = images.shape
    p = patch_size
    if h % p or w % p:
        raise DimensionError(f"image {h}x{w} not divisible by patch size {p}")
    x = images.reshape(b, 3, h // p, p, w // p, p)
    x = x.transpose(0, 2, 4, 1, 3, 5)  # (B, by, bx, c, y, x)
    return np.ascontiguousarray(x.reshape(b, (h // p) * (w // p), 3 * p * p))


def patch_embed(images, weight, bias, patch_size):
    """Linearly embed each flattened patch; returns (B, num_patches, d) tokens."""
    if isinstance(images, Tensor):
        images = images.data
    d, pvec = weight.data.shape
    patches = patchify(np.asarray(images, dtype=weight.data.dtype), patch_size)
    if patches.shape[-1] != pvec:
        raise DimensionError(
            f"patch vector size {patches.shape[-1]} != embedding in-size {pvec}")
    return ad.linear(Tensor(patches, dtype=weight.data.dtype), weight, bias)


def permuted_weight_columns(weight, perm_forward):
    """Column-permuted copy of a patch-embedding matrix: out[:, k] = w[:, forward[k]].

    Composing this with scrambled patches reproduces plain-patch embeddings:
    it is exactly the correction a trainable patch embedding can learn."""
    w = weight.data if isinstance(weight, Tensor) else np.asarray(weight)
    return np.ascontiguousarray(w[:, perm_forward])


# ----------------------------------------------------------------- encoder

def _projection(x, model, path, target):
    """Base linear projection plus the low-rank side branch when attached."""
    w = model.param(f"{path}.w_{target}")
    b = model.param(f"{path}.b_{target}")
    adapter = model.adapters.get(f"{path}.w_{target}")
    y = ad.linear(x, w, b)
    if adapter is not None:
        branch = ad.linear(ad.linear(x, adapter.w_a), adapter.w_b)
        y = ad.add(y, ad.scale(branch, adapter.scaling))
    return y


def multi_head_attention(x, model, path, num_heads, return_attn=False):
    bsz, tokens, d = x.data.shape
    hd = d // num_heads
    q = _projection(x, model, path, "q")
    k = _projection(x, model, path, "k")
    v = _projection(x, model, path, "v")

    def heads(t):
        return ad.transpose(ad.reshape(t, (bsz, tokens, num_heads, hd)), (0, 2, 1, 3))

    qh, kh, vh = heads(q), heads(k), heads(v)
    scores = ad.scale(ad.matmul(qh, ad.transpose(kh, (0, 1, 3, 2))), 1.0 / np.sqrt(hd))
    attn = ad.softmax(scores, axis=-1)
    ctx = ad.matmul(attn, vh)  # (B, h, T, hd)
    merged = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (bsz, tokens, d))
    out = ad.linear(merged, model.param(f"{path}.w_o"), model.param(f"{path}.b_o"))
    if return_attn:
        return out, attn.data.copy()
    return out


def encoder_block(model, index, x):
    """Pre-norm block: LN -> MHA -> residual; LN -> MLP(GELU) -> residual."""
    cfg = model.config
    p = f"blocks.{index}"
    h = ad.layer_norm(x, model.param(f"{p}.norm1.gamma"), model.param(f"{p}.norm1.beta"))
    x = ad.add(x, multi_head_attention(h, model, f"{p}.attn", cfg.num_heads))
    h = ad.layer_norm(x, model.param(f"{p}.norm2.gamma"), model.param(f"{p}.norm2.beta"))
    mid = ad.gelu(ad.linear(h, model.param(f"{p}.mlp.w1"), model.param(f"{p}.mlp.b1")))
    return ad.add(x, ad.linear(mid, model.param(f"{p}.mlp.w2"), model.param(f"{p}.mlp.b2")))


def forward(model, images):
    """Preprocessed image(s) -> logits; (3,H,W) gives (classes,), batches give (B, classes)."""
    cfg = model.config
    arr = images.data if isinstance(images, Tensor) else np.asarray(images)
    single = arr.ndim == 3
    if single:
        arr = arr[None]
    if arr.shape[1:] != (3, cfg.image_size, cfg.image_size):
        raise DimensionError(
            f"forward expects (B, 3, {cfg.image_size}, {cfg.image_size}), got {arr.shape}")
    bsz = arr.shape[0]
    x = patch_embed(arr, model.param("patch_embed.weight"),
                    model.param("patch_embed.bias"), cfg.patch_size)
    cls = ad.expand(model.param("cls_token"), (bsz, 1, cfg.embed_dim))
    x = ad.concat([cls, x], axis=1)
    x = ad.add(x, model.param("pos_embed"))
    for i in range(cfg.depth):
        x = encoder_block(model, i, x)
    x = ad.layer_norm(x, model.param("norm.gamma"), model.param("norm.beta"))
    logits = ad.linear(x[:, 0, :], model.param("head.weight"), model.param("head.bias"))
    return logits[0] if single else logits


# ------------------------------------------------------------- closed forms

def closed_form_counts(config):
    """Per-component parameter counts derived from the config alone."""
    d, mlp, classes = config.embed_dim, config.mlp_dim, config.num_classes
    patch = d * config.patch_vec_size + d
    per_block = (2 * d                      # norm1
                 + 4 * (d * d + d)          # q, k, v, o projections
                 + 2 * d                    # norm2
                 + mlp * d + mlp + d * mlp + d)
    counts = {
        "patch_embed": patch,
        "cls_token": d,
        "pos_embed": config.num_tokens * d,
        "blocks": config.depth * per_block,
        "final_norm": 2 * d,
        "head": classes * d + classes,
    }
    counts["total"] = sum(counts.values())
    return counts
