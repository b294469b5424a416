"""Parameter grouping, decoupled-weight-decay Adam, and the linear LR schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError
from .tensor import Tensor


def snap32(arr: np.ndarray) -> np.ndarray:
    """Round float64 values onto the float32-representable grid.

    Parameters live on this grid so the float32 checkpoint payload is a
    lossless encoding of the in-memory model.
    """
    return arr.astype(np.float32).astype(np.float64)


@dataclass
class ParamGroup:
    """A named set of parameters updated (or skipped) together."""

    name: str
    tensors: list[Tensor]
    frozen: bool = False

    def l1_norm(self) -> float:
        return float(sum(np.abs(t.data).sum() for t in self.tensors))

    def num_params(self) -> int:
        return int(sum(t.size for t in self.tensors))


def linear_lr(initial_lr: float, step: int, total_steps: int) -> float:
    """Linear decay from `initial_lr` at step 0 to exactly 0 at the last step.

    Degenerate single-step runs keep the initial rate.
    """
    if total_steps < 1:
        raise ConfigError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= step < total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps})")
    if total_steps == 1:
        return initial_lr
    return initial_lr * (total_steps - 1 - step) / (total_steps - 1)


@dataclass
class _Slot:
    m: np.ndarray
    v: np.ndarray


class AdamW:
    """Adam with decoupled weight decay over a list of ParamGroups.

    Frozen groups are never touched. Trainable tensors must carry gradients
    when `step` is called; a missing gradient is a contract violation.
    """

    def __init__(
        self,
        groups: list[ParamGroup],
        lr: float = 5e-5,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        if lr < 0:
            raise ConfigError(f"lr must be non-negative, got {lr}")
        if not (0.0 <= betas[0] < 1.0 and 0.0 <= betas[1] < 1.0):
            raise ConfigError(f"betas must sit in [0, 1), got {betas}")
        if eps <= 0:
            raise ConfigError(f"eps must be positive, got {eps}")
        names = [g.name for g in groups]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate group names: {names}")
        self.groups = groups
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._slots: dict[int, _Slot] = {}

    def zero_grad(self) -> None:
        for group in self.groups:
            for t in group.tensors:
                t.grad = None

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - self.beta1**t
        bias2 = 1.0 - self.beta2**t
        for group in self.groups:
            if group.frozen:
                continue
            for p in group.tensors:
                if p.grad is None:
                    raise ContractError(
                        f"missing gradient on trainable tensor in group {group.name!r}"
                    )
                slot = self._slots.get(id(p))
                if slot is None:
                    slot = _Slot(np.zeros_like(p.data), np.zeros_like(p.data))
                    self._slots[id(p)] = slot
                g = p.grad
                slot.m = self.beta1 * slot.m + (1.0 - self.beta1) * g
                slot.v = self.beta2 * slot.v + (1.0 - self.beta2) * (g * g)
                m_hat = slot.m / bias1
                v_hat = slot.v / bias2
                if self.weight_decay:
                    p.data *= 1.0 - lr * self.weight_decay
                p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
                p.data = snap32(p.data)
