"""Adam optimizer and deterministic mini-batch scheduling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ValidationError
from .tensor import Parameter


class Adam:
    """Adam with bias correction; epsilon is added after the square root.

    Moments are zero-initialized per parameter; the shared step counter
    increments exactly once per ``step``. Frozen parameters are never
    updated. Gradients are cleared after each step so batches never
    accumulate across iterations.
    """

    def __init__(self, params: list[Parameter], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if not params:
            raise ValidationError("Adam: empty parameter list")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for i, p in enumerate(self.params):
            if p.frozen:
                continue
            g = p.grad
            if g.shape != self.m[i].shape:
                raise DimensionError(
                    f"Adam: gradient shape {g.shape} does not match state {self.m[i].shape}"
                )
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            p.data -= self.lr * (self.m[i] / b1t) / (np.sqrt(self.v[i] / b2t) + self.eps)
        self.zero_grad()

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad_()


@dataclass(frozen=True)
class BatchPlan:
    """Deterministic shuffled batching; a pure function of (len, seed, epoch)."""

    epochs: int
    batch_size: int = 200
    seed: int = 0
    drop_last: bool = False


def batch_indices(plan: BatchPlan, dataset_len: int, epoch: int) -> list[np.ndarray]:
    """Index batches for one epoch: a fresh Fisher-Yates shuffle keyed by
    (seed, epoch), split into consecutive chunks."""
    if dataset_len <= 0:
        raise ValidationError("batch_indices: empty dataset")
    if plan.batch_size <= 0:
        raise ValidationError("batch_indices: batch size must be positive")
    if plan.drop_last and dataset_len < plan.batch_size:
        raise ValidationError(
            f"batch_indices: dataset ({dataset_len}) smaller than batch ({plan.batch_size}) "
            "with drop_last"
        )
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([plan.seed, epoch])))
    perm = rng.permutation(dataset_len)
    end = dataset_len - dataset_len % plan.batch_size if plan.drop_last else dataset_len
    return [perm[i : i + plan.batch_size] for i in range(0, end, plan.batch_size)]
