"""Freeze policies, the training loop, and evaluation.

Three tuning modes: full (everything trains), melo (adapters + head), ours
(adapters + head + patch embedding). A policy resolves to an exact set of
trainable registry names; everything outside that set keeps its bytes
through training, which the tests enforce by hashing.
"""

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field
from enum import Enum
from fnmatch import fnmatchcase
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import vit
from .checkpoint import save_checkpoint
from .errors import ParameterError, StateError, TrainingDiverged
from .optim import Adam

_DIVERGENCE_FACTOR = 10.0
_DIVERGENCE_PATIENCE = 50


class TuningMode(str, Enum):
    FULL = "full"
    MELO = "melo"
    OURS = "ours"


_POLICY_PATTERNS = {
    TuningMode.FULL: ("*",),
    TuningMode.MELO: ("lora.*", "head.*"),
    TuningMode.OURS: ("lora.*", "head.*", "patch_embed.*"),
}


@dataclass(frozen=True)
class TuningPolicy:
    mode: TuningMode
    patterns: tuple

    def matches(self, name):
        return any(fnmatchcase(name, pat) for pat in self.patterns)

    def resolve(self, registry):
        return {name for name in registry if self.matches(name)}


def apply_policy(model, mode):
    """Set requires_grad exactly per the mode's pattern set."""
    mode = TuningMode(mode)
    if mode in (TuningMode.MELO, TuningMode.OURS) and not model.adapters:
        raise StateError(f"{mode.value} tuning needs adapters injected first")
    policy = TuningPolicy(mode, _POLICY_PATTERNS[mode])
    for name, t in model.registry.items():
        t.requires_grad = policy.matches(name)
        t.grad = None
    return policy


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 5       # reference runs use 200
    batch_size: int = 32
    seed: int = 0
    precision: str = "f32"
    max_steps: int | None = None

    def __post_init__(self):
        if self.lr < 0:
            raise ParameterError(f"lr must be >= 0, got {self.lr}")
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.precision not in ("f32", "f64"):
            raise ParameterError(f"precision must be f32 or f64, got {self.precision}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64


@dataclass
class RunReport:
    mode: str
    epoch_losses: list
    final_loss: float
    accuracy: float
    trainable_params: int
    total_params: int
    epochs: int
    steps: int
    encrypted: bool
    key_fingerprint: str | None
    seed: int
    timestamp: float = field(default_factory=time.time)

    def to_dict(self):
        return {
            "mode": self.mode,
            "epoch_losses": self.epoch_losses,
            "final_loss": self.final_loss,
            "accuracy": self.accuracy,
            "trainable_params": self.trainable_params,
            "total_params": self.total_params,
            "epochs": self.epochs,
            "steps": self.steps,
            "encrypted": self.encrypted,
            "key_fingerprint": self.key_fingerprint,
            "seed": self.seed,
            "timestamp": self.timestamp,
        }

    def csv_row(self):
        return [self.mode, self.trainable_params, self.total_params, self.epochs,
                repr(self.final_loss), repr(self.accuracy), int(self.encrypted), self.seed]


CSV_COLUMNS = ["mode", "trainable_params", "total_params", "epochs",
               "final_loss", "accuracy", "encrypted_flag", "seed"]


def key_fingerprint(key_seed):
    """Stable hash of the encryption key; the key itself is never reported."""
    digest = hashlib.sha256(int(key_seed).to_bytes(8, "little")).hexdigest()
    return digest[:16]


def registry_hashes(model):
    """name -> sha256 of the tensor bytes; the freeze-soundness probe."""
    return {name: hashlib.sha256(np.ascontiguousarray(t.data).tobytes()).hexdigest()
            for name, t in model.registry.items()}


def _batches(count, batch_size, order):
    for start in range(0, count, batch_size):
        yield order[start:start + batch_size]


def train(model, policy, train_data, cfg, eval_data=None, run_dir=None,
          runs_csv=None, encryption_key=None, extra_config=None):
    """Run Adam + cross-entropy under the policy's freeze set.

    train_data / eval_data: (images float (N,3,H,W), labels int (N,)).
    Writes checkpoint + report.json under run_dir and appends one row to
    runs_csv when those paths are given.
    """
    images, labels = train_data
    n = images.shape[0]
    if n == 0:
        raise ParameterError("training set is empty")
    rng = np.random.default_rng(cfg.seed)
    trainables = [(name, t) for name, t in model.named_params(trainable_only=True)]
    opt = Adam(trainables, lr=cfg.lr)

    initial_loss = None
    runaway = 0
    step = 0
    epoch_losses = []
    epochs_run = 0
    done = False
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for idx in _batches(n, cfg.batch_size, order):
            step += 1
            logits = vit.forward(model, images[idx])
            loss = ad.cross_entropy(logits, labels[idx])
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(step, f"loss is not finite ({value})")
            if initial_loss is None:
                initial_loss = value
            if value > _DIVERGENCE_FACTOR * initial_loss:
                runaway += 1
                if runaway >= _DIVERGENCE_PATIENCE:
                    raise TrainingDiverged(
                        step, f"loss {value:.4g} above {_DIVERGENCE_FACTOR}x its "
                              f"initial value {initial_loss:.4g} for "
                              f"{_DIVERGENCE_PATIENCE} consecutive steps")
            else:
                runaway = 0
            ad.backward(loss)
            opt.step()
            opt.zero_grad()
            losses.append(value)
            if cfg.max_steps is not None and step >= cfg.max_steps:
                done = True
                break
        epoch_losses.append(float(np.mean(losses)))
        epochs_run += 1
        if done:
            break

    acc_images, acc_labels = eval_data if eval_data is not None else train_data
    accuracy = evaluate(model, (acc_images, acc_labels))

    report = RunReport(
        mode=policy.mode.value,
        epoch_losses=epoch_losses,
        final_loss=epoch_losses[-1],
        accuracy=accuracy,
        trainable_params=vit.count_params(model, trainable_only=True),
        total_params=vit.count_params(model),
        epochs=epochs_run,
        steps=step,
        encrypted=encryption_key is not None,
        key_fingerprint=None if encryption_key is None else key_fingerprint(encryption_key),
        seed=cfg.seed,
    )
    if run_dir is not None:
        _write_run_artifacts(model, report, run_dir, extra_config)
    if runs_csv is not None:
        append_runs_csv(runs_csv, report)
    return report


def _write_run_artifacts(model, report, run_dir, extra_config):
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(run_dir / "checkpoint", model.registry)
    if extra_config is not None:
        with open(run_dir / "checkpoint" / "config.json", "w") as fh:
            json.dump(extra_config, fh, indent=1)
            fh.write("\n")
    with open(run_dir / "report.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=1)
        fh.write("\n")


def append_runs_csv(path, report):
    path = Path(path)
    fresh = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(CSV_COLUMNS)
        writer.writerow(report.csv_row())


def evaluate(model, data, batch_size=64):
    """Fraction of argmax predictions matching labels; ties go to the lowest class."""
    images, labels = data
    if images.shape[0] == 0:
        raise ParameterError("evaluation dataset is empty")
    correct = 0
    with ad.no_grad():
        for start in range(0, images.shape[0], batch_size):
            chunk = images[start:start + batch_size]
            logits = vit.forward(model, chunk)
            predictions = np.argmax(logits.data, axis=-1)
            correct += int((predictions == labels[start:start + batch_size]).sum())
    return correct / images.shape[0]
