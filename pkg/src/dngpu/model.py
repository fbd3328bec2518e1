"""Full sequence model: embed, unroll one shared cell n times, project, loss.

The unroll count always equals the (padded) sequence length, so one
parameter set serves every bin and every evaluation length.  The training
loss sums per-bin batch means of the symbol cross-entropy and adds the
accumulated saturation cost with an adaptive weight chosen so the saturation
term contributes exactly 1/100 of the error loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import cells
from .autodiff import Parameter, ShapeError, Tensor
from .cells import CellParams, DiagonalSplit, DropoutSpec, SaturationAccumulator

SAT_WEIGHT_RATIO = 100.0   # saturation term is kept at error/100
SAT_EPS = 1e-6


@dataclass
class ModelConfig:
    maps: int
    vocab_in: int
    vocab_out: int
    bins: tuple[int, ...]
    cell: str = "dcgru"              # "dcgru" or "cgru"
    nonlinearity: str = "hard"       # "hard" or "soft"
    saturation: bool = True
    s_limit: float = 0.9
    dropout: float = 0.1
    kernel_width: int = 3
    precision: str = "float32"       # training dtype; tests use float64
    split: DiagonalSplit | None = None

    def __post_init__(self):
        if self.cell not in ("dcgru", "cgru"):
            raise ShapeError(f"unknown cell kind {self.cell!r}")
        if self.cell == "dcgru" and self.maps < 3:
            raise ShapeError("diagonal cell needs at least 3 maps")
        if self.kernel_width % 2 == 0:
            raise ShapeError("kernel width must be odd")
        bins = tuple(self.bins)
        if any(b <= 0 for b in bins) or any(a >= b for a, b in zip(bins, bins[1:])):
            raise ShapeError(f"bins must be strictly increasing and positive: {bins}")
        self.bins = bins
        if self.split is None:
            self.split = DiagonalSplit.even(self.maps)
        elif self.split.maps != self.maps:
            raise ShapeError(f"split {self.split.counts()} does not cover {self.maps} maps")

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64

    @property
    def dropout_spec(self) -> DropoutSpec | None:
        return DropoutSpec(self.dropout) if self.dropout > 0.0 else None


@dataclass
class ModelParams:
    embedding: Parameter          # [vocab_in, maps], rows clamped to [-1, 1]
    cell: CellParams
    out_weight: Parameter         # [maps, vocab_out]
    out_bias: Parameter           # [vocab_out]

    def all(self) -> list[Parameter]:
        ps = [self.embedding] + self.cell.tensors() + [self.out_weight, self.out_bias]
        names = [p.name for p in ps]
        if len(set(names)) != len(names):
            raise ShapeError(f"duplicate parameter names: {names}")
        return ps

    def by_name(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.all()}


@dataclass
class ForwardResult:
    logits: Tensor                      # [n, vocab_out] or [batch, n, vocab_out]
    saturation: Tensor | None           # graph node, None when nothing charged
    trace: list[np.ndarray] | None = None

    @property
    def saturation_sum(self) -> float:
        return 0.0 if self.saturation is None else float(self.saturation.data)


@dataclass
class LossMetrics:
    error: float
    sat: float
    sat_weight: float
    bit_acc: float
    per_bin_acc: dict[int, float] = field(default_factory=dict)
    per_bin_error: dict[int, float] = field(default_factory=dict)


def _glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
            fan_out: int, dtype) -> np.ndarray:
    r = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, size=shape).astype(dtype)


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Fresh parameters: uniform Glorot kernels, update-gate bias biased to copy."""
    m, w, dt = config.maps, config.kernel_width, config.dtype
    emb = np.clip(_glorot(rng, (config.vocab_in, m), config.vocab_in, m, dt), -1.0, 1.0)
    cell = CellParams(
        update_kernel=Parameter(_glorot(rng, (w, m, m), w * m, w * m, dt), "update_kernel"),
        update_bias=Parameter(np.full(m, 1.0, dtype=dt), "update_bias"),
        reset_kernel=Parameter(_glorot(rng, (w, m, m), w * m, w * m, dt), "reset_kernel"),
        reset_bias=Parameter(np.zeros(m, dtype=dt), "reset_bias"),
        cand_kernel=Parameter(_glorot(rng, (w, m, m), w * m, w * m, dt), "cand_kernel"),
        cand_bias=Parameter(np.zeros(m, dtype=dt), "cand_bias"),
    )
    return ModelParams(
        embedding=Parameter(emb, "embedding", clamp=(-1.0, 1.0)),
        cell=cell,
        out_weight=Parameter(_glorot(rng, (m, config.vocab_out), m, config.vocab_out, dt), "out_weight"),
        out_bias=Parameter(np.zeros(config.vocab_out, dtype=dt), "out_bias"),
    )


def embed(tokens: np.ndarray, embedding: Parameter) -> Tensor:
    """Each symbol independently becomes its embedding row."""
    return ad.embed_rows(embedding, np.asarray(tokens))


def forward(tokens: np.ndarray, params: ModelParams, config: ModelConfig,
            training: bool = False, want_trace: bool = False,
            rng: np.random.Generator | None = None) -> ForwardResult:
    """Embed, apply the cell once per input position, read logits off the end."""
    tokens = np.asarray(tokens)
    n = tokens.shape[-1]
    sat_acc = SaturationAccumulator(config.s_limit) \
        if config.saturation and config.nonlinearity == "hard" else None
    dropout = config.dropout_spec if training else None

    state = embed(tokens, params.embedding)
    trace = [state.data.copy()] if want_trace else None
    for _ in range(n):
        if config.cell == "dcgru":
            state = cells.dcgru_step(state, params.cell, config.split,
                                     nonlinearity=config.nonlinearity, dropout=dropout,
                                     sat_acc=sat_acc, training=training, rng=rng)
        else:
            state = cells.cgru_step(state, params.cell,
                                    nonlinearity=config.nonlinearity, dropout=dropout,
                                    sat_acc=sat_acc, training=training, rng=rng)
        if want_trace:
            trace.append(state.data.copy())

    logits = ad.affine_last(state, params.out_weight, params.out_bias)
    return ForwardResult(logits=logits,
                         saturation=None if sat_acc is None else sat_acc.total(),
                         trace=trace)


def total_loss(batches: dict[int, tuple[np.ndarray, np.ndarray]],
               params: ModelParams, config: ModelConfig,
               training: bool = True,
               rng: np.random.Generator | None = None,
               sat_weight: float | None = None) -> tuple[Tensor, LossMetrics]:
    """Sum per-bin batch-mean losses; weight saturation to error/100.

    batches maps bin length -> (inputs [batch, n], targets [batch, n]).  The
    saturation weight is computed from detached loss values and treated as a
    constant during differentiation, so the saturation term tracks the error
    loss at exactly 1:100 whenever the accumulated cost exceeds epsilon.
    Pass an explicit sat_weight to pin it across calls (finite-difference
    checks must differentiate the same fixed-weight objective).
    """
    items = [(n, b) for n, b in sorted(batches.items()) if b[0].shape[0] > 0]
    if not items:
        raise ad.UsageError("total_loss needs at least one nonempty bin batch")

    error_node = None
    sat_node = None
    per_bin_acc: dict[int, float] = {}
    per_bin_error: dict[int, float] = {}
    correct = total = 0
    for n, (inputs, targets) in items:
        if inputs.shape != targets.shape or inputs.shape[1] != n:
            raise ShapeError(f"bin {n}: inputs {inputs.shape} vs targets {targets.shape}")
        result = forward(inputs, params, config, training=training, rng=rng)
        xent, mask = ad.softmax_xent(result.logits, targets)
        error_node = xent if error_node is None else ad.add(error_node, xent)
        if result.saturation is not None:
            bin_sat = ad.scale(result.saturation, 1.0 / inputs.shape[0])
            sat_node = bin_sat if sat_node is None else ad.add(sat_node, bin_sat)
        per_bin_acc[n] = float(mask.mean())
        per_bin_error[n] = float(xent.data)
        correct += int(mask.sum())
        total += mask.size

    error = float(error_node.data)
    sat = 0.0 if sat_node is None else float(sat_node.data)
    weight = 0.0
    loss = error_node
    if sat_node is not None:
        weight = sat_weight if sat_weight is not None \
            else error / (SAT_WEIGHT_RATIO * max(sat, SAT_EPS))
        loss = ad.add(error_node, ad.scale(sat_node, weight))

    metrics = LossMetrics(error=error, sat=sat, sat_weight=weight,
                          bit_acc=correct / total, per_bin_acc=per_bin_acc,
                          per_bin_error=per_bin_error)
    return loss, metrics


def predict(tokens: np.ndarray, params: ModelParams, config: ModelConfig) -> np.ndarray:
    """Per-position argmax readout with dropout disabled; ties pick index 0 first."""
    with ad.no_grad():
        result = forward(tokens, params, config, training=False)
    return np.argmax(result.logits.data, axis=-1)
