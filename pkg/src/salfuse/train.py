"""Toy training loop: SGD with momentum, weight decay, warm-up + linear
decay, seeded horizontal-flip augmentation. Deterministic end to end
for a fixed seed."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from salfuse.data import discover_triplets, load_triplet_arrays
from salfuse.fusion import build_model, resinres_forward
from salfuse.losses import LossBreakdown, total_loss
from salfuse.params import ParamStore
from salfuse.tensor import Tape, Tensor, backward
from salfuse.weightsfile import save_weights

BASE_LR = 1e-2
MOMENTUM = 0.9
WEIGHT_DECAY = 5e-4
BATCH_SIZE = 4
WARMUP_FRACTION = 0.1


def lr_at(step: int, total_steps: int, base: float = BASE_LR) -> float:
    """Linear warm-up over the first 10% of steps, then linear decay."""
    warm = max(1, round(WARMUP_FRACTION * total_steps))
    if step < warm:
        return base * (step + 1) / warm
    remaining = total_steps - warm
    if remaining <= 0:
        return base
    return base * (1.0 - (step - warm) / remaining)


class SGD:
    def __init__(self, store: ParamStore, momentum: float = MOMENTUM,
                 weight_decay: float = WEIGHT_DECAY):
        self.store = store
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: np.zeros_like(p.data)
                         for name, p in store.trainable()}

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        for name, p in self.store.trainable():
            g = grads[name] + self.weight_decay * p.data
            v = self.velocity[name]
            v *= self.momentum
            v += g
            p.data -= lr * v


@dataclass
class TrainResult:
    steps: int
    losses: list[LossBreakdown]
    store: ParamStore

    @property
    def final_loss(self) -> float:
        return self.losses[-1].total if self.losses else float("nan")


def train_toy(data_root, epochs: int, seed: int, out_path, *,
              base_lr: float = BASE_LR, batch_size: int = BATCH_SIZE,
              log: Callable[[str], None] | None = None) -> TrainResult:
    """Overfit the network on a small dataset and save the weights.

    epochs == 0 saves the seeded initialization untouched, so the output
    is bit-identical to a fresh ``build_model(seed)``.
    """
    if epochs < 0:
        raise ValueError(f"epochs must be >= 0, got {epochs}")
    store = build_model(seed)
    triplets = discover_triplets(data_root)
    samples = [load_triplet_arrays(t) for t in triplets]
    if epochs == 0:
        save_weights(out_path, store.arrays())
        return TrainResult(steps=0, losses=[], store=store)

    aug_rng = np.random.default_rng([seed, 1])
    batches = [samples[i:i + batch_size]
               for i in range(0, len(samples), batch_size)]
    total_steps = epochs * len(batches)
    opt = SGD(store)
    losses: list[LossBreakdown] = []
    step = 0
    for _ in range(epochs):
        for batch in batches:
            rgb_b, depth_b, gt_b = [], [], []
            for rgb, depth, gt in batch:
                if aug_rng.random() < 0.5:
                    rgb, depth, gt = (np.flip(rgb, axis=-1).copy(),
                                      np.flip(depth, axis=-1).copy(),
                                      np.flip(gt, axis=-1).copy())
                rgb_b.append(rgb)
                depth_b.append(depth)
                gt_b.append(gt)
            rgb_t = Tensor(np.stack(rgb_b))
            depth_t = Tensor(np.stack(depth_b))
            target = np.stack(gt_b)
            with Tape() as tape:
                out = resinres_forward(rgb_t, depth_t, store, training=True)
                loss, breakdown = total_loss(out.sal_r, out.sal_d, out.sal_f,
                                             target)
            grads = backward(tape, loss, store)
            opt.step(grads, lr_at(step, total_steps, base_lr))
            losses.append(breakdown)
            step += 1
            if log is not None:
                log(f"step {step}/{total_steps} lr {lr_at(step - 1, total_steps, base_lr):.5f} "
                    f"loss {breakdown.total:.4f}")
    save_weights(out_path, store.arrays())
    return TrainResult(steps=step, losses=losses, store=store)
