from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Tensor


class Optimizer:
    """First/second-moment adaptive optimizer with a plain-SGD mode.

    Parameters whose gradient is exactly zero are skipped for the step, so a
    step on all-zero gradients never moves anything.
    """

    def __init__(self, params: Sequence[Tensor], learning_rate: float = 5e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, mode: str = "adam"):
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if mode not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer mode {mode!r}")
        self.params = list(params)
        self.learning_rate = float(learning_rate)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.mode = mode
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = [0] * len(self.params)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ValueError(f"parameter {p.name or i} has no gradient")
        for i, p in enumerate(self.params):
            g = p.grad
            if not g.any():
                continue
            if self.mode == "sgd":
                p.data = p.data - self.learning_rate * g
                continue
            self.t[i] += 1
            t = self.t[i]
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            mhat = self.m[i] / (1 - self.beta1 ** t)
            vhat = self.v[i] / (1 - self.beta2 ** t)
            p.data = (p.data - self.learning_rate * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)
        self.step_count += 1
        self.zero_grad()

    def state(self, names: Sequence[str], prefix: str = "optim") -> dict[str, np.ndarray]:
        out = {}
        for name, m, v, t in zip(names, self.m, self.v, self.t):
            out[f"{prefix}.m.{name}"] = m
            out[f"{prefix}.v.{name}"] = v
            out[f"{prefix}.t.{name}"] = np.array([t], dtype=np.float32)
        out[f"{prefix}.step_count"] = np.array([self.step_count], dtype=np.float32)
        return out

    def load_state(self, names: Sequence[str], state: dict, prefix: str = "optim") -> None:
        for i, name in enumerate(names):
            if f"{prefix}.m.{name}" in state:
                self.m[i] = np.asarray(state[f"{prefix}.m.{name}"], dtype=self.m[i].dtype).reshape(self.m[i].shape)
                self.v[i] = np.asarray(state[f"{prefix}.v.{name}"], dtype=self.v[i].dtype).reshape(self.v[i].shape)
                self.t[i] = int(np.asarray(state[f"{prefix}.t.{name}"]).reshape(-1)[0])
        if f"{prefix}.step_count" in state:
            self.step_count = int(np.asarray(state[f"{prefix}.step_count"]).reshape(-1)[0])


def optimizer_step(params: Sequence[Tensor], opt: Optimizer) -> None:
    """Functional form: ``params`` must be the optimizer's own parameters."""
    if [id(p) for p in params] != [id(p) for p in opt.params]:
        raise ValueError("parameter list does not match the optimizer's")
    opt.step()
