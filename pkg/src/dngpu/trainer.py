"""Multi-bin training loop, long-input evaluation, metrics and checkpoints.

One optimizer drives the summed loss over all bins every step.  Evaluation
unrolls the model to exactly the requested input length (never binned or
truncated), reporting the fraction of correct output positions and the
number of outputs with at least one wrong position.

Checkpoint file layout (all little-endian):

    magic  b"DNGPU\\x01"
    u32    config length, then UTF-8 JSON run config
    u32    model tensor count, then per tensor:
           u16 name length + name, u8 rank, u32 per dim, f64 payload
    u32    optimizer tensor count, same framing (AdaMax moments plus the
           lr-schedule scalars as rank-0 tensors)
    u64    step
    u32    rng word count, then u64 words (PCG64 state of each named stream)

Values are stored as f64 regardless of run precision, so float32 runs
round-trip bit-exactly.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import UsageError, backward
from .model import ModelConfig, ModelParams, init_params, predict, total_loss
from .optimizer import AdaMaxState, LrSchedule, OptimConfig, adamax_apply, lr_for_maps
from .tasks import Example, TaskSpec, bin_and_pad, build_dataset, get_task

CHECKPOINT_MAGIC = b"DNGPU\x01"
STREAM_NAMES = ("init", "data", "dropout", "noise")


class CheckpointError(RuntimeError):
    """Checkpoint file is missing, truncated or from another format version."""


@dataclass
class RunConfig:
    """Complete description of one training run; the manifest snapshot."""

    task: str = "mul2"
    maps: int = 96
    bins: tuple[int, ...] = (9, 17, 25, 33, 41)
    kernel_width: int = 3
    cell: str = "dcgru"
    nonlinearity: str = "hard"
    saturation: bool = True
    s_limit: float = 0.9
    dropout: float = 0.1
    precision: str = "float32"
    lr: float | None = None          # None: 0.005 scaled by 96/maps
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_ratio: float = 1.0
    noise: float = 0.01
    patience: int = 600
    lr_decay: float = 0.7
    batch: int = 32                  # examples per bin per step
    steps: int = 4000
    max_seconds: float | None = None
    seed: int = 1
    per_length: int = 10000
    eval_length: int | None = None   # None: largest achievable <= 2 * max bin
    eval_count: int = 1024
    eval_interval: int = 100
    checkpoint_interval: int = 1000
    target_acc: float = 0.99
    timing: str = "none"             # "none" keeps the metrics log deterministic
    figures: bool = True

    def __post_init__(self):
        self.bins = tuple(int(b) for b in self.bins)
        if self.timing not in ("none", "wall"):
            raise UsageError(f"timing must be 'none' or 'wall', got {self.timing!r}")

    @property
    def resolved_lr(self) -> float:
        return self.lr if self.lr is not None else lr_for_maps(self.maps)

    @property
    def resolved_eval_length(self) -> int:
        if self.eval_length is not None:
            return self.eval_length
        spec = get_task(self.task)
        achievable = [n for n in spec.lengths(2 * max(self.bins)) if n > max(self.bins)]
        return achievable[-1] if achievable else max(self.bins)

    def model_config(self) -> ModelConfig:
        vocab = get_task(self.task).alphabet.size
        return ModelConfig(maps=self.maps, vocab_in=vocab, vocab_out=vocab,
                           bins=self.bins, cell=self.cell,
                           nonlinearity=self.nonlinearity, saturation=self.saturation,
                           s_limit=self.s_limit, dropout=self.dropout,
                           kernel_width=self.kernel_width, precision=self.precision)

    def optim_config(self) -> OptimConfig:
        return OptimConfig(lr=self.resolved_lr, beta1=self.beta1, beta2=self.beta2,
                           eps=self.eps, clip_ratio=self.clip_ratio,
                           noise_scale=self.noise, patience=self.patience,
                           decay=self.lr_decay)

    def to_json(self) -> str:
        d = asdict(self)
        d["bins"] = list(self.bins)
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        data = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise UsageError(f"unknown run config keys: {sorted(unknown)}")
        data["bins"] = tuple(data["bins"])
        return cls(**data)


class RngStreams:
    """Named, independently seeded PCG64 streams with exact (de)serialization."""

    def __init__(self, seed: int):
        self.seed = seed
        self.gens = {name: np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,)))
                     for i, name in enumerate(STREAM_NAMES)}

    def __getitem__(self, name: str) -> np.random.Generator:
        return self.gens[name]

    def state_words(self) -> list[int]:
        words = []
        for name in STREAM_NAMES:
            st = self.gens[name].bit_generator.state
            s, inc = st["state"]["state"], st["state"]["inc"]
            words += [s & (2**64 - 1), s >> 64, inc & (2**64 - 1), inc >> 64,
                      int(st["has_uint32"]), int(st["uinteger"])]
        return words

    def load_words(self, words: list[int]) -> None:
        if len(words) != 6 * len(STREAM_NAMES):
            raise CheckpointError(f"expected {6 * len(STREAM_NAMES)} rng words, got {len(words)}")
        for i, name in enumerate(STREAM_NAMES):
            w = words[6 * i:6 * i + 6]
            self.gens[name].bit_generator.state = {
                "bit_generator": "PCG64",
                "state": {"state": w[0] | (w[1] << 64), "inc": w[2] | (w[3] << 64)},
                "has_uint32": int(w[4]),
                "uinteger": int(w[5]),
            }


@dataclass
class TrainState:
    config: RunConfig
    params: ModelParams
    opt_state: AdaMaxState
    schedule: LrSchedule
    streams: RngStreams
    step: int = 0


def init_state(config: RunConfig) -> TrainState:
    streams = RngStreams(config.seed)
    params = init_params(config.model_config(), streams["init"])
    opt_state = AdaMaxState(params.all())
    schedule = LrSchedule(config.optim_config())
    return TrainState(config=config, params=params, opt_state=opt_state,
                      schedule=schedule, streams=streams)


# ---------------------------------------------------------------------------
# dataset binning
# ---------------------------------------------------------------------------

class BinnedDataset:
    """Training examples stacked per bin as token matrices."""

    def __init__(self, task: TaskSpec, bins: tuple[int, ...],
                 arrays: dict[int, tuple[np.ndarray, np.ndarray]]):
        self.task = task
        self.bins = bins
        self.arrays = arrays
        empty = [n for n in bins if n not in arrays or arrays[n][0].shape[0] == 0]
        if empty:
            raise UsageError(f"dataset does not cover bins {empty}")

    @classmethod
    def build(cls, task: TaskSpec, bins: tuple[int, ...], per_length: int,
              seed: int) -> "BinnedDataset":
        examples = build_dataset(task, max_length=max(bins), per_length=per_length, seed=seed)
        grouped: dict[int, list[Example]] = {n: [] for n in bins}
        for ex in examples:
            padded = bin_and_pad(ex, bins)
            grouped[padded.bin].append(padded)
        arrays = {n: (np.stack([e.input for e in exs]) if exs else np.zeros((0, n), np.int16),
                      np.stack([e.target for e in exs]) if exs else np.zeros((0, n), np.int16))
                  for n, exs in grouped.items()}
        return cls(task, bins, arrays)

    def sample_batch(self, bin_n: int, batch: int,
                     rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        inputs, targets = self.arrays[bin_n]
        idx = rng.integers(0, inputs.shape[0], size=batch)
        return inputs[idx], targets[idx]


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

METRICS_HEADER = ("step,seconds,lr,error_loss,sat_sum,sat_weight,"
                  "train_bit_acc,eval_bit_acc,eval_whole_errors")


@dataclass
class MetricsRecord:
    step: int
    seconds: float
    lr: float
    error_loss: float
    sat_sum: float
    sat_weight: float
    train_bit_acc: float
    eval_bit_acc: float
    eval_whole_errors: int

    def csv_row(self) -> str:
        def fmt(x: float) -> str:
            return f"{x:.6g}"
        return ",".join([str(self.step), fmt(self.seconds), fmt(self.lr),
                         fmt(self.error_loss), fmt(self.sat_sum), fmt(self.sat_weight),
                         fmt(self.train_bit_acc), fmt(self.eval_bit_acc),
                         str(self.eval_whole_errors)])


# ---------------------------------------------------------------------------
# training and evaluation
# ---------------------------------------------------------------------------

def train_step(state: TrainState, dataset: BinnedDataset):
    """Sample one batch per bin, take one optimizer step, advance the schedule."""
    cfg = state.config
    batches = {n: dataset.sample_batch(n, cfg.batch, state.streams["data"])
               for n in cfg.bins}
    for p in state.params.all():
        p.zero_grad()
    loss, metrics = total_loss(batches, state.params, cfg.model_config(),
                               training=True, rng=state.streams["dropout"])
    if not np.isfinite(loss.data):
        raise UsageError(f"non-finite loss at step {state.step + 1}; "
                         f"per-bin errors {metrics.per_bin_error}")
    backward(loss)
    adamax_apply(state.params.all(), state.opt_state, cfg.optim_config(),
                 lr=state.schedule.lr, rng=state.streams["noise"])
    state.step += 1
    state.schedule.update(metrics.error, state.step)
    return metrics


def _eval_chunk_size(length: int, maps: int) -> int:
    # keep the per-chunk window gather under ~200 MB
    return max(1, min(128, 16_000_000 // (length * maps)))


def evaluate(params: ModelParams, config: ModelConfig, task: TaskSpec | str,
             eval_length: int, count: int, rng: np.random.Generator | None = None,
             predict_fn=None) -> tuple[float, int]:
    """Bit accuracy and whole-output error count on fresh random examples.

    The model is unrolled to exactly eval_length steps.  An output counts as
    correct only if every position matches; predict_fn substitutes the model
    (for oracle checks).
    """
    if count < 1:
        raise UsageError("evaluation needs count >= 1")
    if eval_length < 1:
        raise UsageError("evaluation length must be positive")
    spec = task if isinstance(task, TaskSpec) else get_task(task)
    if rng is None:
        rng = np.random.default_rng(0)
    examples = [spec.sample(eval_length, rng) for _ in range(count)]
    inputs = np.stack([e.input for e in examples])
    targets = np.stack([e.target for e in examples])
    if predict_fn is None:
        predict_fn = lambda batch: predict(batch, params, config)

    chunk = _eval_chunk_size(eval_length, config.maps)
    correct = 0
    whole_errors = 0
    for start in range(0, count, chunk):
        pred = np.asarray(predict_fn(inputs[start:start + chunk]))
        eq = pred == targets[start:start + chunk]
        correct += int(eq.sum())
        whole_errors += int((~eq.all(axis=1)).sum())
    return correct / targets.size, whole_errors


def _eval_rng(seed: int, step: int) -> np.random.Generator:
    # deterministic per (run seed, step); independent of the training streams
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(100, step)))


def run_training(config: RunConfig, out_dir, resume: TrainState | None = None):
    """Full training run: manifest, metrics CSV, checkpoints, optional figures.

    Stops at the step budget, the wall-clock budget, or as soon as the
    monitored evaluation reaches target_acc.  Returns (state, records).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = resume if resume is not None else init_state(config)
    cfg = state.config
    model_cfg = cfg.model_config()
    task = get_task(cfg.task)
    eval_length = cfg.resolved_eval_length

    manifest = {
        "config": json.loads(cfg.to_json()),
        "seed": cfg.seed,
        "version": __version__,
        "outputs": {"metrics": "metrics.csv", "checkpoint": "ckpt_final.dngpu"},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n",
                                       encoding="utf-8")

    dataset = BinnedDataset.build(task, cfg.bins, cfg.per_length, cfg.seed)
    metrics_path = out / "metrics.csv"
    mode = "a" if resume is not None and metrics_path.exists() else "w"
    records: list[MetricsRecord] = []
    train_seconds = 0.0
    with open(metrics_path, mode, encoding="utf-8") as log:
        if mode == "w":
            log.write(METRICS_HEADER + "\n")
        while state.step < cfg.steps:
            t0 = time.perf_counter()
            metrics = train_step(state, dataset)
            if cfg.timing == "wall":
                train_seconds += time.perf_counter() - t0
            done = state.step >= cfg.steps
            if state.step % cfg.eval_interval == 0 or done:
                acc, errors = evaluate(state.params, model_cfg, task, eval_length,
                                       cfg.eval_count, rng=_eval_rng(cfg.seed, state.step))
                rec = MetricsRecord(step=state.step, seconds=train_seconds,
                                    lr=state.schedule.lr, error_loss=metrics.error,
                                    sat_sum=metrics.sat, sat_weight=metrics.sat_weight,
                                    train_bit_acc=metrics.bit_acc, eval_bit_acc=acc,
                                    eval_whole_errors=errors)
                records.append(rec)
                log.write(rec.csv_row() + "\n")
                log.flush()
                if acc >= cfg.target_acc:
                    break
            if state.step % cfg.checkpoint_interval == 0:
                save_checkpoint(state, out / f"ckpt_{state.step}.dngpu")
            if cfg.max_seconds is not None and train_seconds >= cfg.max_seconds:
                break
    save_checkpoint(state, out / "ckpt_final.dngpu")
    if cfg.figures and records:
        from . import figures
        figures.render_metrics(metrics_path, out / "metrics.png")
    return state, records


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _write_tensor(buf: bytearray, name: str, arr: np.ndarray) -> None:
    nb = name.encode("utf-8")
    buf += struct.pack("<H", len(nb)) + nb
    buf += struct.pack("<B", arr.ndim)
    for dim in arr.shape:
        buf += struct.pack("<I", dim)
    buf += np.ascontiguousarray(arr, dtype="<f8").tobytes()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]


def _read_tensor(r: _Reader) -> tuple[str, np.ndarray]:
    name = r.take(r.u16()).decode("utf-8")
    rank = r.u8()
    shape = tuple(r.u32() for _ in range(rank))
    n = int(np.prod(shape)) if shape else 1
    arr = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(shape)
    return name, arr


def save_checkpoint(state: TrainState, path) -> None:
    buf = bytearray(CHECKPOINT_MAGIC)
    cfg_bytes = state.config.to_json().encode("utf-8")
    buf += struct.pack("<I", len(cfg_bytes)) + cfg_bytes

    model_tensors = [(p.name, p.data) for p in state.params.all()]
    buf += struct.pack("<I", len(model_tensors))
    for name, arr in model_tensors:
        _write_tensor(buf, name, arr)

    opt_tensors = sorted(state.opt_state.tensors().items())
    sched = state.schedule.state_scalars()
    opt_tensors += [(k, np.asarray(v)) for k, v in sorted(sched.items())]
    buf += struct.pack("<I", len(opt_tensors))
    for name, arr in opt_tensors:
        _write_tensor(buf, name, arr)

    buf += struct.pack("<Q", state.step)
    words = state.streams.state_words()
    buf += struct.pack("<I", len(words))
    for w in words:
        buf += struct.pack("<Q", w)
    Path(path).write_bytes(bytes(buf))


def load_checkpoint(path) -> TrainState:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    r = _Reader(data)
    magic = r.take(len(CHECKPOINT_MAGIC))
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic or format version in {path}")
    config = RunConfig.from_json(r.take(r.u32()).decode("utf-8"))
    state = init_state(config)
    dtype = config.model_config().dtype

    by_name = state.params.by_name()
    for _ in range(r.u32()):
        name, arr = _read_tensor(r)
        if name not in by_name:
            raise CheckpointError(f"unknown model tensor {name!r}")
        if by_name[name].data.shape != arr.shape:
            raise CheckpointError(f"tensor {name!r} shape {arr.shape} mismatch")
        by_name[name].data = arr.astype(dtype)

    scalars: dict[str, float] = {}
    for _ in range(r.u32()):
        name, arr = _read_tensor(r)
        if name.startswith("adamax_m."):
            state.opt_state.m[name[len("adamax_m."):]] = arr.astype(dtype)
        elif name.startswith("adamax_u."):
            state.opt_state.u[name[len("adamax_u."):]] = arr.astype(dtype)
        else:
            scalars[name] = float(arr)
    state.schedule.load_scalars(scalars)

    state.step = r.u64()
    state.opt_state.t = state.step
    state.streams.load_words([r.u64() for _ in range(r.u32())])
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes in {path}")
    return state
