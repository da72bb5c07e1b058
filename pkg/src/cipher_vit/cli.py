"""Command-line interface.

Only stdlib imports at module level: CIPHER_VIT_THREADS must cap the BLAS
and numba thread pools through the environment before numpy is imported,
so the heavy imports happen inside main() and the handlers.
"""

import argparse
import dataclasses
import json
import os
import sys

_THREAD_ENV_KEYS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "NUMBA_NUM_THREADS",
)


def _cap_threads():
    raw = os.environ.get("CIPHER_VIT_THREADS")
    if raw is None:
        return None
    try:
        count = int(raw)
    except ValueError:
        raise SystemExit(f"error[config]: CIPHER_VIT_THREADS must be an "
                         f"integer, got {raw!r}")
    if count < 0:
        raise SystemExit(f"error[config]: CIPHER_VIT_THREADS must be >= 0, got {count}")
    if count == 0:  # deterministic single-threaded mode
        count = 1
    for key in _THREAD_ENV_KEYS:
        os.environ[key] = str(count)
    return count


def _u64(text):
    return int(text, 0)


def _fmt(n):
    return f"{n:,}"


def _millions(n):
    # truncate, never round up: 155,146 reads as 0.15M
    return f"{int(n / 1e6 * 100) / 100:.2f}M"


# --------------------------------------------------------------- subcommands

def cmd_encrypt(args):
    from . import codec
    perm = codec.derive_permutation(args.key, args.patch_size)
    img = codec.read_ppm(getattr(args, "in"))
    transform = codec.encrypt_image if args.direction == "encrypt" else codec.decrypt_image
    codec.write_ppm(args.out, transform(img, perm))
    _, h, w = img.shape
    print(f"{args.direction}ed {w}x{h} image -> {args.out} "
          f"(patch {args.patch_size}, key space {codec.keyspace_bits(args.patch_size):.1f} bits)")
    return 0


def cmd_derive_perm(args):
    from . import codec
    perm = codec.derive_permutation(args.key, args.patch_size)
    codec.write_permutation(args.out, perm)
    print(f"wrote {perm.forward.size} positions -> {args.out} "
          f"(key space {codec.keyspace_bits(args.patch_size):.1f} bits)")
    return 0


def _load_run_config(args, toy=False):
    from .config import load_config
    return load_config(args.config, toy=toy)


def _resolved_preprocess(cfg, encrypt_key):
    """Preprocess spec matched to the model geometry, with the CLI key applied."""
    spec = cfg.preprocess
    changes = {}
    if spec.target_size != cfg.vit.image_size:
        changes["target_size"] = cfg.vit.image_size
    if encrypt_key is not None:
        changes["encrypt_key"] = encrypt_key
        changes["encrypt_patch"] = spec.encrypt_patch or cfg.vit.patch_size
    if changes:
        spec = dataclasses.replace(spec, **changes)
    return spec


def _load_split(directory, split, limit):
    from .data import load_cifar10
    return load_cifar10(directory, split=split, limit=limit)


def cmd_train(args):
    import numpy as np

    from . import codec, trainer, vit
    from .data import prepare
    from .lora import inject

    cfg = _load_run_config(args, toy=args.toy)
    if args.seed is not None:
        cfg = cfg.replace(train=dataclasses.replace(cfg.train, seed=args.seed))
    spec = _resolved_preprocess(cfg, args.encrypt_key)
    if spec.target_size != cfg.preprocess.target_size:
        print(f"note: resizing to the model input size {spec.target_size}x{spec.target_size}")

    train_labels, train_images = _load_split(args.data, "train", args.limit)
    try:
        eval_labels, eval_images = _load_split(args.data, "test", args.limit)
    except FileNotFoundError:
        print("note: no test batch found, evaluating on the training subset")
        eval_labels, eval_images = train_labels, train_images

    perm = None
    if spec.encrypted:
        perm = codec.derive_permutation(spec.encrypt_key, spec.encrypt_patch)
    dtype = cfg.train.dtype
    train_x = prepare(train_images, spec, dtype=dtype, perm=perm)
    eval_x = prepare(eval_images, spec, dtype=dtype, perm=perm)

    model = vit.build_vit(cfg.vit, seed=cfg.train.seed, dtype=dtype)
    mode = trainer.TuningMode(args.mode)
    if mode is not trainer.TuningMode.FULL:
        inject(model, cfg.lora, seed=cfg.train.seed)
    policy = trainer.apply_policy(model, mode)

    run_dir = args.out or os.path.join("runs", f"{mode.value}-seed{cfg.train.seed}")
    stored = cfg.to_dict()
    stored["preprocess"]["encrypt_key"] = None  # the key never reaches disk
    stored["mode"] = mode.value
    stored["encrypted"] = spec.encrypted

    report = trainer.train(
        model, policy, (train_x, np.asarray(train_labels, dtype=np.int64)),
        cfg.train, eval_data=(eval_x, np.asarray(eval_labels, dtype=np.int64)),
        run_dir=run_dir, runs_csv=args.runs_csv, encryption_key=spec.encrypt_key,
        extra_config=stored)

    print(f"mode: {report.mode}")
    print(f"trainable params: {_fmt(report.trainable_params)} "
          f"of {_fmt(report.total_params)}")
    print(f"epochs: {report.epochs}  steps: {report.steps}")
    print(f"final loss: {report.final_loss:.4f}")
    print(f"eval accuracy: {report.accuracy:.4f}")
    if report.encrypted:
        print(f"encrypted inputs: yes (key fingerprint {report.key_fingerprint})")
    else:
        print("encrypted inputs: no")
    print(f"run dir: {run_dir}")
    return 0


def cmd_eval(args):
    import numpy as np

    from . import codec, trainer, vit
    from .checkpoint import load_into_model
    from .config import config_from_dict
    from .data import prepare
    from .errors import FormatError
    from .lora import inject

    config_path = os.path.join(args.checkpoint, "config.json")
    if not os.path.exists(config_path):
        raise FormatError(f"checkpoint has no config.json: {args.checkpoint}")
    with open(config_path) as fh:
        payload = json.load(fh)
    mode = payload.pop("mode", "full")
    trained_encrypted = payload.pop("encrypted", False)
    cfg = config_from_dict(payload)

    dtype = cfg.train.dtype
    model = vit.build_vit(cfg.vit, seed=0, dtype=dtype, init="zeros")
    if trainer.TuningMode(mode) is not trainer.TuningMode.FULL:
        inject(model, cfg.lora, seed=0)
    load_into_model(model, args.checkpoint, strict=True)

    spec = _resolved_preprocess(cfg, args.encrypt_key)
    if trained_encrypted and not spec.encrypted:
        print("note: this model was trained on encrypted inputs; "
              "pass --encrypt-key to evaluate on matching ciphertexts")
    try:
        labels, images = _load_split(args.data, "test", None)
    except FileNotFoundError:
        labels, images = _load_split(args.data, "train", None)
    perm = None
    if spec.encrypted:
        perm = codec.derive_permutation(spec.encrypt_key, spec.encrypt_patch)
    prepared = prepare(images, spec, dtype=dtype, perm=perm)
    accuracy = trainer.evaluate(model, (prepared, np.asarray(labels, dtype=np.int64)))
    print(f"accuracy: {accuracy:.4f} ({images.shape[0]} images, mode {mode})")
    return 0


def cmd_count_params(args):
    from . import trainer, vit
    from .errors import ContractError
    from .lora import LoraConfig, adapter_param_count, inject

    cfg = _load_run_config(args)
    vit_cfg = cfg.vit
    rank = args.rank
    lora_cfg = LoraConfig(rank=rank, alpha=cfg.lora.alpha, targets=cfg.lora.targets)

    closed = vit.closed_form_counts(vit_cfg)
    adapters = {r: adapter_param_count(vit_cfg, dataclasses.replace(lora_cfg, rank=r))
                for r in sorted({4, 8, rank})}
    melo = {r: adapters[r] + closed["head"] for r in adapters}
    ours = {r: melo[r] + closed["patch_embed"] for r in adapters}
    by_mode = {"full": {r: closed["total"] for r in adapters}, "melo": melo, "ours": ours}

    model = vit.build_vit(vit_cfg, init="zeros")
    base_total = vit.count_params(model)
    reg_patch = sum(t.data.size for n, t in model.registry.items()
                    if n.startswith("patch_embed."))
    reg_head = sum(t.data.size for n, t in model.registry.items()
                   if n.startswith("head."))
    inject(model, lora_cfg)
    reg_adapters = sum(t.data.size for n, t in model.registry.items()
                       if n.startswith("lora."))
    trainer.apply_policy(model, args.mode)
    reg_trainable = vit.count_params(model, trainable_only=True)
    if args.mode == "full":
        # full tuning has no adapters in practice; registry view excludes them
        reg_trainable -= reg_adapters

    c = vit_cfg
    print(f"architecture: image {c.image_size} patch {c.patch_size} dim {c.embed_dim} "
          f"depth {c.depth} heads {c.num_heads} mlp {c.mlp_dim} classes {c.num_classes}")

    failures = []

    def line(label, closed_value, registry_value=None):
        text = f"{label:<22} {_fmt(closed_value):>12}  closed form"
        if registry_value is not None:
            ok = registry_value == closed_value
            text += f" | registry {_fmt(registry_value):>12} [{'ok' if ok else 'MISMATCH'}]"
            if not ok:
                failures.append(label)
        print(text)

    line("base total:", closed["total"], base_total)
    line("patch embedding:", closed["patch_embed"], reg_patch)
    line("classification head:", closed["head"], reg_head)
    for r in adapters:
        line(f"adapters r={r}:", adapters[r], reg_adapters if r == rank else None)
    for r in adapters:
        print(f"trainable melo r={r}:   {_fmt(melo[r]):>12}  ({_millions(melo[r])})")
    for r in adapters:
        print(f"trainable ours r={r}:   {_fmt(ours[r]):>12}  ({_millions(ours[r])})")
    selected = by_mode[args.mode][rank]
    ok = reg_trainable == selected
    print(f"selected {args.mode} r={rank}: trainable {_fmt(selected)} "
          f"| registry {_fmt(reg_trainable)} [{'ok' if ok else 'MISMATCH'}]")
    if not ok:
        failures.append("selected trainable")

    if args.report_paper_delta:
        print("reference figures (reported results for this architecture):")
        reported = {"full": 82_560_000, "melo": 150_000, "ours": 710_000}
        print(f"  full fine-tuning: {_millions(reported['full'])} reported | "
              f"base total {_fmt(closed['total'])} = {_millions(closed['total'])} "
              f"(delta {closed['total'] - reported['full']:+,})")
        print(f"  melo:             {_millions(reported['melo'])} reported | "
              f"r=4 {_fmt(melo[4])} = {_millions(melo[4])} "
              f"(delta {melo[4] - reported['melo']:+,})"
              + (" [figure matches at r=4]" if _millions(melo[4]) == _millions(reported["melo"]) else ""))
        print(f"  ours:             {_millions(reported['ours'])} reported | "
              f"r=8 {_fmt(ours[8])} = {_millions(ours[8])} "
              f"(delta {ours[8] - reported['ours']:+,}), "
              f"r=4 {_fmt(ours[4])} = {_millions(ours[4])} "
              f"(delta {ours[4] - reported['ours']:+,}); no rank reproduces the figure")

    if failures:
        raise ContractError(f"registry disagrees with closed forms: {failures}")
    return 0


def cmd_gradcheck(args):
    import numpy as np

    from . import gradcheck, vit
    from .lora import inject

    cfg = _load_run_config(args)
    model = vit.build_vit(cfg.vit, seed=args.seed, dtype=np.float64)
    inject(model, cfg.lora, seed=args.seed)
    gradcheck.randomize_lora_b(model, seed=args.seed + 1)

    rng = np.random.default_rng(args.seed + 2)
    size = cfg.vit.image_size
    images = rng.standard_normal((args.batch, 3, size, size))
    labels = rng.integers(0, cfg.vit.num_classes, size=args.batch)

    report = gradcheck.check_model(
        model, images, labels, probes_per_tensor=args.probes,
        tolerance=args.tolerance, seed=args.seed)
    tensors = len(report.per_tensor_max())
    print(f"probed {len(report.probes)} coordinates across {tensors} tensors "
          f"(f64, central differences)")
    worst = report.worst
    print(f"max relative error: {report.max_rel_error:.3e} "
          f"at {worst.name}{list(worst.index)}")
    print(f"tolerance {report.tolerance:g} -> {'PASS' if report.passed else 'FAIL'}")
    return 0 if report.passed else 1


# -------------------------------------------------------------------- parser

def _build_parser():
    parser = argparse.ArgumentParser(
        prog="cipher-vit",
        description="Block-scrambled image classification: keyed encryption, "
                    "transformer training with low-rank adapters, and the "
                    "bookkeeping around both.")
    sub = parser.add_subparsers(dest="command", required=True)

    for direction in ("encrypt", "decrypt"):
        p = sub.add_parser(direction, help=f"{direction} a PPM image block-wise")
        p.add_argument("--in", required=True, help="input PPM (P6)")
        p.add_argument("--out", required=True, help="output PPM (P6)")
        p.add_argument("--key", type=_u64, required=True, help="64-bit key seed")
        p.add_argument("--patch-size", type=int, required=True, help="block edge P")
        p.set_defaults(func=cmd_encrypt, direction=direction)

    p = sub.add_parser("derive-perm", help="write the in-block permutation for a key")
    p.add_argument("--key", type=_u64, required=True)
    p.add_argument("--patch-size", type=int, required=True)
    p.add_argument("--out", required=True, help="output text file, one index per line")
    p.set_defaults(func=cmd_derive_perm)

    p = sub.add_parser("train", help="train a model on CIFAR-10 binary batches")
    p.add_argument("--mode", required=True, choices=["full", "melo", "ours"])
    p.add_argument("--data", required=True, help="directory with CIFAR-10 .bin batches")
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--encrypt-key", type=_u64, default=None,
                   help="train on block-scrambled inputs with this key")
    p.add_argument("--limit", type=int, default=None, help="use only the first N records")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--toy", action="store_true",
                   help="swap in the small built-in architecture")
    p.add_argument("--out", default=None, help="run directory (default runs/<mode>-seed<S>)")
    p.add_argument("--runs-csv", default="runs.csv", help="summary CSV to append to")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("--data", required=True)
    p.add_argument("--encrypt-key", type=_u64, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("count-params", help="closed-form and registry parameter counts")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", required=True, choices=["full", "melo", "ours"])
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--report-paper-delta", action="store_true",
                   help="also print deltas against the reported reference figures")
    p.set_defaults(func=cmd_count_params)

    p = sub.add_parser("gradcheck", help="finite-difference check of the gradients")
    p.add_argument("--config", required=True)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--probes", type=int, default=8, help="coordinates per tensor")
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None):
    _cap_threads()
    parser = _build_parser()
    args = parser.parse_args(argv)
    from .errors import CipherVitError
    try:
        return args.func(args) or 0
    except CipherVitError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
