"""Soft rounding, Kumaraswamy noise, hard rounding and stage schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

STAGE2_TEMPERATURE = 1e-4


def _check_temperature(t):
    if not t > 0:
        raise ValueError(f"soft-rounding temperature must be positive, got {t}")


def soft_round(z, t: float):
    """Integer-preserving tanh soft rounding.

    ``s_T(z) = floor(z) + 1/2 + tanh(delta / T) / (2 tanh(1 / (2T)))`` with
    ``delta = z - floor(z) - 1/2``. Tends to hard rounding as ``T -> 0``.
    """
    _check_temperature(t)
    z = np.asarray(z)
    base = np.floor(z)
    delta = z - base - 0.5
    return base + 0.5 + 0.5 * np.tanh(delta / t) / math.tanh(0.5 / t)


def soft_round_grad(z, t: float):
    _check_temperature(t)
    z = np.asarray(z)
    delta = z - np.floor(z) - 0.5
    th = np.tanh(delta / t)
    return (0.5 / t) * (1.0 - th * th) / math.tanh(0.5 / t)


def kumaraswamy_b(a: float) -> float:
    """Second shape parameter placing the density mode at 0.5."""
    return ((a - 1.0) * 2.0 ** a + 1.0) / a


def kumaraswamy_noise(a: float, rng: np.random.Generator, size=None):
    """Kumaraswamy(a, b(a)) sample shifted to ``(-0.5, 0.5)``; ``a = 1`` is uniform."""
    if a < 1.0:
        raise ValueError(f"Kumaraswamy strength must be >= 1, got {a}")
    b = kumaraswamy_b(a)
    v = rng.random(size)
    t = (1.0 - (1.0 - v) ** (1.0 / b)) ** (1.0 / a)
    # Keep the open support when floating point lands on an endpoint.
    t = np.clip(t, 1e-7, 1.0 - 1e-7)
    return t - 0.5


def hard_round(z):
    """Round half away from zero."""
    z = np.asarray(z)
    return np.sign(z) * np.floor(np.abs(z) + 0.5)


def hard_round_surrogate_grad(z):
    return soft_round_grad(z, STAGE2_TEMPERATURE)


@dataclass(frozen=True)
class StageSchedule:
    """Per-stage hyper-parameters; defaults are the reference training settings."""

    stage: int
    steps: int
    lr_start: float
    lr_end: float = 0.0
    t_start: float = STAGE2_TEMPERATURE
    t_end: float = STAGE2_TEMPERATURE
    a_start: float = 1.0
    a_end: float = 1.0
    noise: bool = False
    patience: int = 40
    decay: float = 0.8
    lr_floor: float = 1e-8

    @classmethod
    def stage1(cls, steps: int = 100_000, lr: float = 1e-2):
        return cls(1, steps, lr, 0.0, 0.3, 0.1, 2.0, 1.0, noise=True)

    @classmethod
    def stage2(cls, steps: int = 10_000, lr: float = 1e-4):
        return cls(2, steps, lr, 1e-8)

    def _frac(self, step: int) -> float:
        if not 0 <= step < self.steps:
            raise ValueError(f"step {step} outside stage of length {self.steps}")
        return step / (self.steps - 1) if self.steps > 1 else 1.0

    def cosine(self, step: int, start: float, end: float = 0.0) -> float:
        c = 0.5 * (1.0 + math.cos(math.pi * self._frac(step)))
        return start * c + end * (1.0 - c)

    def linear(self, step: int, start: float, end: float) -> float:
        f = self._frac(step)
        return start * (1.0 - f) + end * f

    def at(self, step: int) -> tuple[float, float, float]:
        """``(lr, temperature, noise_strength)`` at ``step``.

        Stage II learning rates come from :class:`PlateauDecay`; this returns
        the starting value for them.
        """
        if self.stage == 1:
            return (
                self.cosine(step, self.lr_start, self.lr_end),
                self.linear(step, self.t_start, self.t_end),
                self.linear(step, self.a_start, self.a_end),
            )
        self._frac(step)
        return self.lr_start, self.t_start, 1.0


def schedule_at(sched: StageSchedule, step: int) -> tuple[float, float, float]:
    return sched.at(step)


class PlateauDecay:
    """Multiply the LR by ``decay`` after ``patience`` steps without a new best loss."""

    def __init__(self, lr: float, patience: int = 40, decay: float = 0.8, floor: float = 1e-8):
        self.lr = lr
        self.patience = patience
        self.decay = decay
        self.floor = floor
        self.best = math.inf
        self.bad_steps = 0
        self.n_decays = 0

    def step(self, loss: float) -> float:
        if loss < self.best:
            self.best = loss
            self.bad_steps = 0
        else:
            self.bad_steps += 1
            if self.bad_steps >= self.patience:
                self.lr = max(self.lr * self.decay, self.floor)
                self.bad_steps = 0
                self.n_decays += 1
        return self.lr
