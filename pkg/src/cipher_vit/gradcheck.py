"""Central-difference verification of the reverse-mode gradients.

Probes random coordinates of selected parameter tensors on a real
forward/backward pass and compares against (L(w+h) - L(w-h)) / 2h.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import vit
from .errors import ContractError, ParameterError

# Relative error uses max(|analytic|, |numeric|, FLOOR) in the denominator;
# the floor keeps near-zero gradients from amplifying O(h^2) truncation noise.
REL_FLOOR = 1e-3


@dataclass
class ProbeResult:
    name: str
    index: tuple
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    probes: list = field(default_factory=list)
    tolerance: float = 1e-4

    @property
    def max_rel_error(self):
        return max((p.rel_error for p in self.probes), default=0.0)

    @property
    def passed(self):
        return self.max_rel_error <= self.tolerance

    @property
    def worst(self):
        return max(self.probes, key=lambda p: p.rel_error, default=None)

    def per_tensor_max(self):
        out = {}
        for p in self.probes:
            out[p.name] = max(out.get(p.name, 0.0), p.rel_error)
        return out


def relative_error(analytic, numeric, floor=REL_FLOOR):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def randomize_lora_b(model, seed=0, scale=0.02):
    """Give every zero-initialized up-projection a small random value.

    At a fresh injection the up-projections are exactly zero, which makes the
    down-projection gradients vanish identically; probing there would verify
    nothing. Randomizing first makes those gradients generic.
    """
    rng = np.random.default_rng(seed)
    for adapter in model.adapters.values():
        adapter.w_b.data[...] = rng.normal(0.0, scale, adapter.w_b.data.shape)


def check_model(model, images, labels, param_names=None, probes_per_tensor=8,
                step=1e-4, tolerance=1e-4, seed=0):
    """Probe the model loss gradient at random coordinates.

    Returns a GradCheckReport. The model must be float64: float32 rounding is
    the same order as the finite-difference truncation error.
    """
    if model.dtype != np.float64:
        raise ContractError("gradient checking requires a float64 model")
    if probes_per_tensor < 1:
        raise ParameterError("probes_per_tensor must be >= 1")

    def loss_value():
        logits = vit.forward(model, images)
        return ad.cross_entropy(logits, labels).data.item()

    # one analytic backward at the base point
    for t in model.registry.values():
        t.grad = None
    loss = ad.cross_entropy(vit.forward(model, images), labels)
    ad.backward(loss)

    if param_names is None:
        param_names = [n for n, t in model.registry.items() if t.requires_grad]
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance)
    for name in param_names:
        tensor = model.registry[name]
        if tensor.grad is None:
            raise ContractError(f"no gradient reached {name}")
        flat_size = tensor.data.size
        n_probes = min(probes_per_tensor, flat_size)
        coords = rng.choice(flat_size, size=n_probes, replace=False)
        for flat in coords:
            index = np.unravel_index(int(flat), tensor.data.shape)
            saved = tensor.data[index]
            tensor.data[index] = saved + step
            plus = loss_value()
            tensor.data[index] = saved - step
            minus = loss_value()
            tensor.data[index] = saved
            numeric = (plus - minus) / (2.0 * step)
            analytic = float(tensor.grad[index])
            report.probes.append(ProbeResult(
                name=name, index=tuple(int(i) for i in index),
                analytic=analytic, numeric=numeric,
                rel_error=relative_error(analytic, numeric)))
    return report
