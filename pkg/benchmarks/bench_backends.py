"""Compare the jit-compiled kernels against their plain numpy twins.

Times each hot kernel on realistic shapes plus one full optimizer step on the
toy model, under both backends. Run from the repo root:

    python3 benchmarks/bench_backends.py [--repeats N]

The first jit call compiles; a warmup pass keeps that out of the numbers.
"""

import argparse
import time

import numpy as np

from cipher_vit import backend, codec, kernels, vit
from cipher_vit import autodiff as ad
from cipher_vit.lora import LoraConfig, inject
from cipher_vit.trainer import TrainConfig, apply_policy, train
from cipher_vit.vit import TOY_CONFIG, build_vit


def timeit(fn, repeats):
    fn()  # warmup (jit compile, cache fill)
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def kernel_cases(rng):
    x = rng.standard_normal((256, 3072)).astype(np.float32)
    g = rng.standard_normal((256, 3072)).astype(np.float32)
    logits = rng.standard_normal((4096, 197)).astype(np.float32)
    gamma = rng.standard_normal(768).astype(np.float32)
    beta = rng.standard_normal(768).astype(np.float32)
    tokens = rng.standard_normal((4096, 768)).astype(np.float32)
    tg = rng.standard_normal((4096, 768)).astype(np.float32)
    param = rng.standard_normal((768, 768)).astype(np.float32)
    grad = rng.standard_normal((768, 768)).astype(np.float32)
    m = np.zeros_like(param)
    v = np.zeros_like(param)
    blocks = rng.integers(0, 256, size=(196, 768), dtype=np.uint8)
    perm = codec.derive_permutation(42, 16).forward
    img = rng.integers(0, 256, size=(3, 32, 32), dtype=np.uint8)

    sm = kernels.softmax_forward(logits)
    ln_out, xhat, inv_std = kernels.layer_norm_forward(tokens, gamma, beta, 1e-6)
    return {
        "gelu forward": lambda: kernels.gelu_forward(x),
        "gelu backward": lambda: kernels.gelu_backward(x, g),
        "softmax forward": lambda: kernels.softmax_forward(logits),
        "softmax backward": lambda: kernels.softmax_backward(sm, logits),
        "layer_norm forward": lambda: kernels.layer_norm_forward(tokens, gamma, beta, 1e-6),
        "layer_norm backward": lambda: kernels.layer_norm_backward(xhat, inv_std, gamma, tg),
        "adam update": lambda: kernels.adam_update(param, grad, m, v,
                                                   1e-4, 0.9, 0.999, 1e-8, 1),
        "permute columns": lambda: kernels.permute_columns(blocks, perm),
        "bilinear resize 32->224": lambda: kernels.bilinear_resize(img, 224),
    }


def train_step_case(rng):
    images = rng.standard_normal((32, 3, 32, 32)).astype(np.float32)
    labels = rng.integers(0, 10, size=32)

    def run():
        model = build_vit(TOY_CONFIG, seed=0, dtype=np.float32)
        inject(model, LoraConfig(rank=4), seed=1)
        policy = apply_policy(model, "ours")
        train(model, policy, (images, labels),
              TrainConfig(lr=1e-3, epochs=1, batch_size=32, max_steps=1))

    return run


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    cases = kernel_cases(rng)
    cases["train step (toy, batch 32)"] = train_step_case(rng)

    results = {}
    restore = backend.numba_enabled()
    for flag, label in ((False, "numpy"), (True, "numba")):
        if flag and not backend.HAVE_NUMBA:
            print("numba unavailable; skipping jit column")
            continue
        backend.set_numba_enabled(flag)
        for name, fn in cases.items():
            results.setdefault(name, {})[label] = timeit(fn, args.repeats)
    backend.set_numba_enabled(restore)

    width = max(len(n) for n in cases)
    print(f"{'kernel':<{width}}  {'numpy':>10}  {'numba':>10}  {'speedup':>8}")
    for name, times in results.items():
        base = times["numpy"]
        jit = times.get("numba")
        if jit is None:
            print(f"{name:<{width}}  {base * 1e3:>8.2f}ms")
            continue
        print(f"{name:<{width}}  {base * 1e3:>8.2f}ms  {jit * 1e3:>8.2f}ms  "
              f"{base / jit:>7.1f}x")


if __name__ == "__main__":
    main()
