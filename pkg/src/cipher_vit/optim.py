"""Adam with bias correction, state allocated per trainable tensor only."""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DimensionError


@dataclass
class AdamState:
    """Moment buffers for one parameter; step_count advances by 1 per step."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, param, lr=1e-4, beta1=0.9, beta2=0.999, epsilon=1e-8):
        return cls(np.zeros_like(param), np.zeros_like(param),
                   0, lr, beta1, beta2, epsilon)


def adam_step(param, grad, state):
    """One in-place bias-corrected Adam update on a raw float array."""
    if grad.shape != param.shape:
        raise DimensionError(f"adam_step: grad shape {grad.shape} != param shape {param.shape}")
    if state.first_moment.shape != param.shape:
        raise DimensionError(
            f"adam_step: state shape {state.first_moment.shape} != param shape {param.shape}")
    state.step_count += 1
    kernels.adam_update(param, grad, state.first_moment, state.second_moment,
                        state.lr, state.beta1, state.beta2, state.epsilon,
                        state.step_count)
    return param, state


@dataclass
class Adam:
    """Optimizer over (name, Tensor) pairs; skips tensors with no grad this step."""

    params: list
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    states: dict = field(init=False)

    def __post_init__(self):
        self.params = list(self.params)
        self.states = {
            name: AdamState.zeros_like(t.data, self.lr, self.beta1, self.beta2, self.epsilon)
            for name, t in self.params
        }

    def step(self):
        for name, t in self.params:
            if t.grad is None:
                continue
            adam_step(t.data, t.grad, self.states[name])

    def zero_grad(self):
        for _, t in self.params:
            t.grad = None
