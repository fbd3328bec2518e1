"""AdaMax with per-variable gradient clipping, gradient noise and LR decay.

Each variable's gradient is first clipped to a range proportional to that
variable's decayed maximum (the accumulator AdaMax keeps anyway), so no fixed
clipping threshold is needed and one noisy batch cannot inflate the running
scale.  Gaussian noise with standard deviation noise_scale * lr is added
after clipping.  The learning rate halts its slide only via the stall rule:
if the smoothed training error sets no new minimum for `patience` steps, lr
is multiplied by `decay`, never dropping below lr / 100 of its base value.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Parameter, UsageError


def lr_for_maps(maps: int, base_lr: float = 0.005, base_maps: int = 96) -> float:
    """Scale the reference learning rate inversely with the map count."""
    return base_lr * base_maps / maps


@dataclass
class OptimConfig:
    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_ratio: float = 1.0      # clip gradients to +- clip_ratio * decayed max
    noise_scale: float = 0.01    # noise stddev = noise_scale * lr
    patience: int = 600          # stalled steps before an lr decay
    decay: float = 0.7
    lr_floor_ratio: float = 0.01
    smoothing: float = 0.99      # exponential smoothing of the stall metric

    def __post_init__(self):
        if self.lr <= 0 or not (0 <= self.beta1 < 1) or not (0 <= self.beta2 < 1):
            raise ValueError(f"invalid optimizer config: {self}")
        if self.clip_ratio <= 0 or self.patience < 1:
            raise ValueError(f"invalid optimizer config: {self}")


class AdaMaxState:
    """Per-parameter first moment and decayed maximum, plus the step counter."""

    def __init__(self, params: list[Parameter]):
        self.m = {p.name: np.zeros_like(p.data) for p in params}
        self.u = {p.name: np.zeros_like(p.data) for p in params}
        self.t = 0

    def tensors(self) -> dict[str, np.ndarray]:
        out = {f"adamax_m.{k}": v for k, v in self.m.items()}
        out.update({f"adamax_u.{k}": v for k, v in self.u.items()})
        return out


def clip_by_decayed_max(grad: np.ndarray, u_prev: np.ndarray,
                        clip_ratio: float) -> np.ndarray:
    """Clip elementwise to +- clip_ratio * u_prev; passthrough where u_prev = 0."""
    limit = clip_ratio * u_prev
    return np.where(u_prev > 0, np.clip(grad, -limit, limit), grad)


def add_gradient_noise(grad: np.ndarray, lr: float, noise_scale: float,
                       rng: np.random.Generator) -> np.ndarray:
    """Add zero-mean Gaussian noise with stddev noise_scale * lr."""
    if noise_scale == 0.0:
        return grad
    draw_dtype = grad.dtype if grad.dtype in (np.float32, np.float64) else np.float64
    noise = rng.standard_normal(size=grad.shape, dtype=draw_dtype)
    noise *= noise_scale * lr
    return grad + noise.astype(grad.dtype, copy=False)


def adamax_apply(params: list[Parameter], state: AdaMaxState, config: OptimConfig,
                 lr: float, rng: np.random.Generator | None = None) -> None:
    """One optimizer step over all parameters; missing grads count as zero.

    Per element: clip to the previous decayed maximum, add noise, update the
    first moment and decayed maximum, then step by lr/(1-beta1^t) * m/(u+eps).
    The bound |delta| <= lr/(1-beta1^t) holds because |m| never exceeds u.
    Parameters with a clamp range are re-clamped after the update.
    """
    grads = {}
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise UsageError(f"non-finite gradient for parameter {p.name!r}; step aborted")
        grads[p.name] = g
    if config.noise_scale > 0.0 and rng is None:
        raise UsageError("gradient noise needs an rng stream")

    state.t += 1
    correction = 1.0 - config.beta1 ** state.t
    for p in params:
        g = clip_by_decayed_max(grads[p.name], state.u[p.name], config.clip_ratio)
        if config.noise_scale > 0.0:
            g = add_gradient_noise(g, lr, config.noise_scale, rng)
        m = state.m[p.name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        u = state.u[p.name]
        np.maximum(config.beta2 * u, np.abs(g), out=u)
        p.data -= (lr / correction) * m / (u + config.eps)
        if p.clamp is not None:
            np.clip(p.data, p.clamp[0], p.clamp[1], out=p.data)


@dataclass
class LrSchedule:
    """Stall-triggered decay over an exponentially smoothed training error."""

    config: OptimConfig
    lr: float = field(default=0.0)
    smoothed: float = field(default=np.inf)
    best: float = field(default=np.inf)
    best_step: int = field(default=0)

    def __post_init__(self):
        if self.lr == 0.0:
            self.lr = self.config.lr

    def update(self, error: float, step: int) -> float:
        """Record one step's training error; returns the (possibly decayed) lr."""
        if not np.isfinite(self.smoothed):
            # First observation is the baseline, not progress; the stall window
            # stays anchored at the run start so a flat error decays after
            # exactly `patience` steps.
            self.smoothed = self.best = error
            return self.lr
        a = self.config.smoothing
        self.smoothed = a * self.smoothed + (1.0 - a) * error
        if self.smoothed < self.best:
            self.best = self.smoothed
            self.best_step = step
        elif step - self.best_step >= self.config.patience:
            floor = self.config.lr * self.config.lr_floor_ratio
            self.lr = max(self.lr * self.config.decay, floor)
            self.best_step = step  # restart the stall window, keep the best value
        return self.lr

    def state_scalars(self) -> dict[str, float]:
        return {"lr_current": self.lr, "smoothed_error": self.smoothed,
                "best_smoothed": self.best, "best_step": float(self.best_step)}

    def load_scalars(self, scalars: dict[str, float]) -> None:
        self.lr = float(scalars["lr_current"])
        self.smoothed = float(scalars["smoothed_error"])
        self.best = float(scalars["best_smoothed"])
        self.best_step = int(scalars["best_step"])


def lr_schedule_update(schedule: LrSchedule, error: float, step: int) -> float:
    """Functional alias for LrSchedule.update."""
    return schedule.update(error, step)
