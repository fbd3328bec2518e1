"""Convolutional gated recurrent cells with diagonal gating.

Both step functions compute, from the previous state s of shape [n, m]
(optionally with a leading batch axis):

    u = gate(update_kernel * s + update_bias)
    r = gate(reset_kernel  * s + reset_bias)
    c = squash(cand_kernel * (r . s) + cand_bias), then recurrent dropout

where * is a same-padded sequence convolution and . is pointwise product.
The plain cell returns u . s + (1-u) . c; the diagonal cell gates a shifted
copy of the state instead, u . shift(s) + (1-u) . c, with per-map-group
shifts so state can flow to a neighbouring position each step.  In hard mode
gate() and squash() are the clamped piecewise-linear forms and every
pre-activation is charged a hinge penalty for leaving [-s_limit, s_limit].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, ShapeError, Tensor


@dataclass
class CellParams:
    """The six learned arrays of one cell: three kernel banks, three biases."""

    update_kernel: Parameter   # [width, m, m], drives the copy/overwrite gate u
    update_bias: Parameter     # [m]
    reset_kernel: Parameter    # [width, m, m], drives the reset gate r
    reset_bias: Parameter      # [m]
    cand_kernel: Parameter     # [width, m, m], drives the candidate c
    cand_bias: Parameter       # [m]

    def __post_init__(self):
        m = self.update_kernel.data.shape[2]
        for kern in (self.update_kernel, self.reset_kernel, self.cand_kernel):
            if kern.data.shape[1:] != (m, m):
                raise ShapeError(f"cell kernel {kern.name} has shape {kern.data.shape}, want [*, {m}, {m}]")
        for bias in (self.update_bias, self.reset_bias, self.cand_bias):
            if bias.data.shape != (m,):
                raise ShapeError(f"cell bias {bias.name} has shape {bias.data.shape}, want [{m}]")

    @property
    def maps(self) -> int:
        return self.update_kernel.data.shape[2]

    def tensors(self) -> list[Parameter]:
        return [self.update_kernel, self.update_bias, self.reset_kernel,
                self.reset_bias, self.cand_kernel, self.cand_bias]


@dataclass(frozen=True)
class DiagonalSplit:
    """Contiguous map-group sizes: stay first, then from-left, then from-right."""

    stay: int
    from_left: int
    from_right: int

    def __post_init__(self):
        if min(self.stay, self.from_left, self.from_right) < 0:
            raise ShapeError(f"negative group size in {self}")

    @property
    def maps(self) -> int:
        return self.stay + self.from_left + self.from_right

    def counts(self) -> tuple[int, int, int]:
        return (self.stay, self.from_left, self.from_right)

    @classmethod
    def even(cls, maps: int) -> "DiagonalSplit":
        """Even three-way split; remainder maps land in the stay group."""
        third = maps // 3
        return cls(maps - 2 * third, third, third)

    def group_of(self, map_index: int) -> str:
        if map_index < self.stay:
            return "stay"
        if map_index < self.stay + self.from_left:
            return "left"
        return "right"


@dataclass(frozen=True)
class DropoutSpec:
    """Recurrent dropout on the candidate vector only, fresh mask per step."""

    p: float

    def __post_init__(self):
        if not 0.0 <= self.p < 1.0:
            raise ShapeError(f"dropout probability must be in [0, 1), got {self.p}")


class SaturationAccumulator:
    """Collects hinge penalties charged on hard-nonlinearity pre-activations."""

    def __init__(self, s_limit: float = 0.9):
        if not 0.0 < s_limit < 1.0:
            raise ShapeError(f"s_limit must be in (0, 1), got {s_limit}")
        self.s_limit = s_limit
        self.reset()

    def reset(self) -> None:
        self._terms: list[Tensor] = []
        self.units = 0

    def charge(self, pre_activation: Tensor) -> None:
        self._terms.append(ad.sat_cost_sum(pre_activation, self.s_limit))
        self.units += pre_activation.size

    def total(self) -> Tensor | None:
        """Summed cost as a graph node, or None if nothing was charged."""
        if not self._terms:
            return None
        node = self._terms[0]
        for term in self._terms[1:]:
            node = ad.add(node, term)
        return node

    @property
    def value(self) -> float:
        node = self.total()
        return 0.0 if node is None else float(node.data)


def saturation_cost(pre_activation: float, s_limit: float = 0.9) -> float:
    """Hinge penalty max(0, |x| - s_limit) for one unit's pre-activation."""
    return max(0.0, abs(pre_activation) - s_limit)


def apply_recurrent_dropout(c: Tensor, spec: DropoutSpec | None, training: bool,
                            rng: np.random.Generator | None) -> Tensor:
    """Zero candidate entries with probability p and rescale survivors.

    Identity outside training or at p = 0.  The mask is drawn fresh on every
    call, i.e. per timestep.
    """
    if spec is None or spec.p == 0.0 or not training:
        return c
    if rng is None:
        raise ad.UsageError("training-mode dropout needs an rng stream")
    keep = 1.0 - spec.p
    draw_dtype = c.dtype if c.dtype in (np.float32, np.float64) else np.float64
    mask = (rng.random(c.shape, dtype=draw_dtype) < keep).astype(c.dtype)
    mask /= keep
    return ad.mul(c, Tensor(mask))


def _gate_and_candidate(s_prev, params, nonlinearity, dropout, sat_acc, training, rng):
    if nonlinearity == "hard":
        gate_fn, squash_fn = ad.hard_sigmoid, ad.hard_tanh
    elif nonlinearity == "soft":
        gate_fn, squash_fn = ad.sigmoid, ad.tanh
    else:
        raise ShapeError(f"unknown nonlinearity {nonlinearity!r}")

    width = params.update_kernel.data.shape[0]
    cols = ad.conv_columns(s_prev.data, width)
    u_pre = ad.conv1d_same(s_prev, params.update_kernel, params.update_bias, cols=cols)
    r_pre = ad.conv1d_same(s_prev, params.reset_kernel, params.reset_bias, cols=cols)
    if nonlinearity == "hard" and sat_acc is not None:
        sat_acc.charge(u_pre)
        sat_acc.charge(r_pre)
    u = gate_fn(u_pre)
    r = gate_fn(r_pre)

    c_pre = ad.conv1d_same(ad.mul(r, s_prev), params.cand_kernel, params.cand_bias)
    if nonlinearity == "hard" and sat_acc is not None:
        sat_acc.charge(c_pre)
    c = squash_fn(c_pre)
    c = apply_recurrent_dropout(c, dropout, training, rng)
    return u, c


def cgru_step(s_prev: Tensor, params: CellParams, nonlinearity: str = "hard",
              dropout: DropoutSpec | None = None,
              sat_acc: SaturationAccumulator | None = None,
              training: bool = False,
              rng: np.random.Generator | None = None) -> Tensor:
    """One plain cell step: u . s_prev + (1-u) . c."""
    u, c = _gate_and_candidate(s_prev, params, nonlinearity, dropout, sat_acc, training, rng)
    return ad.gate_mix(u, s_prev, c)


def dcgru_step(s_prev: Tensor, params: CellParams, split: DiagonalSplit,
               nonlinearity: str = "hard",
               dropout: DropoutSpec | None = None,
               sat_acc: SaturationAccumulator | None = None,
               training: bool = False,
               rng: np.random.Generator | None = None) -> Tensor:
    """One diagonal cell step: u . shift(s_prev) + (1-u) . c.

    Gates and candidate are computed from the unshifted state, exactly as in
    cgru_step; only the gated copy path goes through the per-group shift.
    """
    if split.maps != params.maps:
        raise ShapeError(f"split {split.counts()} does not cover {params.maps} maps")
    u, c = _gate_and_candidate(s_prev, params, nonlinearity, dropout, sat_acc, training, rng)
    shifted = ad.depthwise_shift(s_prev, split.counts())
    return ad.gate_mix(u, shifted, c)
