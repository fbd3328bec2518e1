"""Task data: alphabets, example generators, encodings, binning, file dump.

Conventions shared by every arithmetic task:

* digits are written least-significant first, so carries travel one fixed
  spatial direction;
* a two-operand input is `digits(a) ++ [operator] ++ digits(b)` with both
  operands the same digit count k, giving the odd total length 2k + 1 (the
  4-bit decimal encoding stretches this to 8k + 1);
* the target is the result's digits zero-extended to the full input length,
  so the model always emits one symbol per input position.

Token 0 is the pad symbol in every alphabet.  Glyph tables (one printable
character per token) live on the Alphabet and define the text dump format:
one example per line, `<task> TAB <input glyphs> TAB <target glyphs>`.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import DataError

PAD = 0


class DecodeError(DataError):
    """Token sequence does not follow the declared encoding."""


@dataclass(frozen=True)
class Alphabet:
    """Dense token space; index 0 is pad, each token has a printable glyph."""

    glyphs: tuple[str, ...]

    def __post_init__(self):
        if not self.glyphs or self.glyphs[0] != "_":
            raise DataError("alphabet must reserve glyph '_' for pad at index 0")
        if len(set(self.glyphs)) != len(self.glyphs):
            raise DataError(f"duplicate glyphs in {self.glyphs}")

    @property
    def size(self) -> int:
        return len(self.glyphs)

    def to_text(self, tokens) -> str:
        return "".join(self.glyphs[t] for t in tokens)

    def from_text(self, text: str) -> np.ndarray:
        index = {g: i for i, g in enumerate(self.glyphs)}
        try:
            return np.array([index[ch] for ch in text], dtype=np.int16)
        except KeyError as exc:
            raise DataError(f"glyph {exc.args[0]!r} not in alphabet {self.glyphs}") from None


@dataclass(frozen=True)
class Example:
    """One padded input/target pair; length is the pre-padding size."""

    task: str
    input: np.ndarray       # int16 [bin] (or [length] before binning)
    target: np.ndarray
    length: int
    bin: int

    def __post_init__(self):
        if self.input.shape != self.target.shape:
            raise DataError(f"input {self.input.shape} vs target {self.target.shape}")
        if self.length > self.input.shape[0]:
            raise DataError(f"example length {self.length} exceeds array size {self.input.shape[0]}")


def bin_and_pad(example: Example, bins: tuple[int, ...]) -> Example:
    """Pad into the smallest bin that fits; token 0 fills both sequences."""
    fitting = [b for b in bins if b >= example.length]
    if not fitting:
        raise DataError(f"example length {example.length} exceeds largest bin {max(bins)}")
    n = min(fitting)
    inp = np.zeros(n, dtype=np.int16)
    tgt = np.zeros(n, dtype=np.int16)
    inp[:example.length] = example.input[:example.length]
    tgt[:example.length] = example.target[:example.length]
    return replace(example, input=inp, target=tgt, bin=n)


# ---------------------------------------------------------------------------
# digit helpers (exact big-integer arithmetic is the ground truth throughout)
# ---------------------------------------------------------------------------

def digits_lsb(value: int, base: int, width: int) -> list[int]:
    """Least-significant-first digits, zero-extended to width."""
    out = []
    for _ in range(width):
        out.append(value % base)
        value //= base
    if value:
        raise DataError(f"value does not fit in {width} base-{base} digits")
    return out


def value_of_digits(digits, base: int) -> int:
    total = 0
    for d in reversed(list(digits)):
        total = total * base + int(d)
    return total


def _digit_tokens(digs) -> np.ndarray:
    return np.asarray(digs, dtype=np.int16) + 1  # digit d -> token d+1; 0 stays pad-free


def _pair_example(task: str, base: int, digs_a, digs_b, digs_out) -> Example:
    op = base + 1  # operator token sits right after the digit tokens
    inp = np.concatenate([_digit_tokens(digs_a), [op], _digit_tokens(digs_b)]).astype(np.int16)
    tgt = _digit_tokens(digs_out)
    if tgt.shape[0] != inp.shape[0]:
        raise DataError(f"target length {tgt.shape[0]} != input length {inp.shape[0]}")
    n = inp.shape[0]
    return Example(task=task, input=inp, target=tgt, length=n, bin=n)


def _random_digits(count: int, base: int, rng: np.random.Generator) -> list[int]:
    return [int(d) for d in rng.integers(0, base, size=count)]


def gen_binary_mul(bits_a: int, bits_b: int, rng: np.random.Generator) -> Example:
    """Multiply two random binary numbers, digits least-significant first."""
    da = _random_digits(bits_a, 2, rng)
    db = _random_digits(bits_b, 2, rng)
    prod = value_of_digits(da, 2) * value_of_digits(db, 2)
    return _pair_example("mul2", 2, da, db, digits_lsb(prod, 2, bits_a + bits_b + 1))


def gen_base4_mul(digits_a: int, digits_b: int, rng: np.random.Generator) -> Example:
    da = _random_digits(digits_a, 4, rng)
    db = _random_digits(digits_b, 4, rng)
    prod = value_of_digits(da, 4) * value_of_digits(db, 4)
    return _pair_example("mul4", 4, da, db, digits_lsb(prod, 4, digits_a + digits_b + 1))


def gen_addition(bits_a: int, bits_b: int, rng: np.random.Generator) -> Example:
    da = _random_digits(bits_a, 2, rng)
    db = _random_digits(bits_b, 2, rng)
    total = value_of_digits(da, 2) + value_of_digits(db, 2)
    return _pair_example("add", 2, da, db, digits_lsb(total, 2, bits_a + bits_b + 1))


def gen_copy(length: int, rng: np.random.Generator) -> Example:
    inp = rng.integers(1, 3, size=length).astype(np.int16)
    return Example(task="copy", input=inp, target=inp.copy(), length=length, bin=length)


def gen_reverse(length: int, rng: np.random.Generator) -> Example:
    inp = rng.integers(1, 3, size=length).astype(np.int16)
    return Example(task="reverse", input=inp, target=inp[::-1].copy(), length=length, bin=length)


def gen_sort(count: int, max_val: int, rng: np.random.Generator) -> Example:
    """Sort `count` values drawn from 0..max_val; tokens are value + 1."""
    vals = rng.integers(0, max_val + 1, size=count).astype(np.int16)
    return Example(task="sort", input=vals + 1, target=np.sort(vals) + 1,
                   length=count, bin=count)


# ---------------------------------------------------------------------------
# decimal digits packed as 4 bits with a marked first bit
# ---------------------------------------------------------------------------

# token ids in the decimal-binary alphabet ('_', '0', '1', 'O', 'I', '*'):
_DB_ZERO, _DB_ONE, _DB_ZERO_MARK, _DB_ONE_MARK, _DB_OP = 1, 2, 3, 4, 5


def encode_decimal_binary(decimal_digits) -> np.ndarray:
    """Each decimal digit becomes 4 bit tokens, LSB first, first bit marked.

    The marked variants O/I stand for bits 0/1 at the start of a digit group,
    so a reader can resynchronise digit boundaries from the tokens alone.
    """
    out = []
    for d in decimal_digits:
        d = int(d)
        if not 0 <= d <= 9:
            raise DataError(f"decimal digit out of range: {d}")
        bits = [(d >> k) & 1 for k in range(4)]
        out.append(_DB_ONE_MARK if bits[0] else _DB_ZERO_MARK)
        out.extend(_DB_ONE if b else _DB_ZERO for b in bits[1:])
    return np.asarray(out, dtype=np.int16)


def decode_decimal_binary(tokens) -> list[int]:
    """Strict inverse of encode_decimal_binary; rejects broken marker structure."""
    toks = [int(t) for t in tokens]
    if len(toks) % 4 != 0:
        raise DecodeError(f"token count {len(toks)} is not a multiple of 4")
    digits = []
    for pos, t in enumerate(toks):
        starred = t in (_DB_ZERO_MARK, _DB_ONE_MARK)
        if (pos % 4 == 0) != starred:
            raise DecodeError(f"marker structure broken at position {pos}")
        if t not in (_DB_ZERO, _DB_ONE, _DB_ZERO_MARK, _DB_ONE_MARK):
            raise DecodeError(f"unexpected token {t} at position {pos}")
    for g in range(0, len(toks), 4):
        bits = [1 if toks[g + k] in (_DB_ONE, _DB_ONE_MARK) else 0 for k in range(4)]
        value = sum(b << k for k, b in enumerate(bits))
        if value > 9:
            raise DecodeError(f"digit group at {g} decodes to {value} > 9")
        digits.append(value)
    return digits


def gen_decimal_mul(digits_a: int, digits_b: int, rng: np.random.Generator) -> Example:
    """Decimal multiplication through the 4-bit binary digit encoding.

    Input length is 4*(digits_a + digits_b) + 1.  The product is zero-extended
    to digits_a + digits_b decimal digits; the one position left over after
    whole 4-token groups is filled with a plain '0' bit token so input and
    target lengths match.
    """
    da = _random_digits(digits_a, 10, rng)
    db = _random_digits(digits_b, 10, rng)
    prod = value_of_digits(da, 10) * value_of_digits(db, 10)
    prod_digits = digits_lsb(prod, 10, digits_a + digits_b)
    inp = np.concatenate([encode_decimal_binary(da), [_DB_OP],
                          encode_decimal_binary(db)]).astype(np.int16)
    tgt = np.concatenate([encode_decimal_binary(prod_digits), [_DB_ZERO]]).astype(np.int16)
    n = inp.shape[0]
    return Example(task="mul10bin", input=inp, target=tgt, length=n, bin=n)


# ---------------------------------------------------------------------------
# task registry
# ---------------------------------------------------------------------------

SORT_MAX_VALUE = 5  # sorted values span 0..5; tokens are shifted past pad


@dataclass(frozen=True)
class TaskSpec:
    name: str
    alphabet: Alphabet
    groups_per_digit: int = 1   # tokens spent per operand digit (4 for mul10bin)
    paired: bool = True         # two equal-size operands plus an operator token

    def lengths(self, max_length: int) -> list[int]:
        """All achievable input lengths up to max_length."""
        if not self.paired:
            return list(range(1, max_length + 1))
        stride = 2 * self.groups_per_digit
        return [k * stride + 1 for k in range(1, (max_length - 1) // stride + 1)]

    def operand_size(self, length: int) -> int:
        """Digits per operand for a paired-task input of the given length."""
        stride = 2 * self.groups_per_digit
        if length < stride + 1 or (length - 1) % stride != 0:
            raise DataError(f"length {length} not achievable for task {self.name}")
        return (length - 1) // stride

    def sample(self, length: int, rng: np.random.Generator) -> Example:
        if self.paired:
            k = self.operand_size(length)
            return _GENERATORS[self.name](k, k, rng)
        return _GENERATORS[self.name](length, rng)


_BIN_PAIR_ALPHABET = lambda op: Alphabet(("_", "0", "1", op))

TASKS: dict[str, TaskSpec] = {
    "copy": TaskSpec("copy", Alphabet(("_", "0", "1")), paired=False),
    "reverse": TaskSpec("reverse", Alphabet(("_", "0", "1")), paired=False),
    "sort": TaskSpec("sort", Alphabet(("_", "0", "1", "2", "3", "4", "5")), paired=False),
    "add": TaskSpec("add", _BIN_PAIR_ALPHABET("+")),
    "mul2": TaskSpec("mul2", _BIN_PAIR_ALPHABET("*")),
    "mul4": TaskSpec("mul4", Alphabet(("_", "0", "1", "2", "3", "*"))),
    "mul10bin": TaskSpec("mul10bin", Alphabet(("_", "0", "1", "O", "I", "*")),
                         groups_per_digit=4),
}

_GENERATORS = {
    "copy": gen_copy,
    "reverse": gen_reverse,
    "sort": lambda length, rng: gen_sort(length, SORT_MAX_VALUE, rng),
    "add": gen_addition,
    "mul2": gen_binary_mul,
    "mul4": gen_base4_mul,
    "mul10bin": gen_decimal_mul,
}


def get_task(name: str) -> TaskSpec:
    try:
        return TASKS[name]
    except KeyError:
        raise DataError(f"unknown task {name!r}; choose from {sorted(TASKS)}") from None


def check_example(example: Example) -> bool:
    """Re-derive the target with exact arithmetic; True iff it matches."""
    task = get_task(example.task)
    inp = example.input[:example.length]
    tgt = example.target[:example.length]
    if example.task == "copy":
        return bool(np.array_equal(inp, tgt))
    if example.task == "reverse":
        return bool(np.array_equal(inp[::-1], tgt))
    if example.task == "sort":
        return bool(np.array_equal(np.sort(inp), tgt))
    if example.task == "mul10bin":
        op_positions = np.flatnonzero(inp == _DB_OP)
        if len(op_positions) != 1:
            return False
        cut = int(op_positions[0])
        a = value_of_digits(decode_decimal_binary(inp[:cut]), 10)
        b = value_of_digits(decode_decimal_binary(inp[cut + 1:]), 10)
        want_digits = digits_lsb(a * b, 10, (example.length - 1) // 4)
        want = np.concatenate([encode_decimal_binary(want_digits), [_DB_ZERO]])
        return bool(np.array_equal(want, tgt))
    base = {"add": 2, "mul2": 2, "mul4": 4}[example.task]
    op = base + 1
    op_positions = np.flatnonzero(inp == op)
    if len(op_positions) != 1:
        return False
    cut = int(op_positions[0])
    a = value_of_digits(inp[:cut] - 1, base)
    b = value_of_digits(inp[cut + 1:] - 1, base)
    result = a + b if example.task == "add" else a * b
    want = _digit_tokens(digits_lsb(result, base, example.length))
    return bool(np.array_equal(want, tgt))


def build_dataset(task: str | TaskSpec, max_length: int, per_length: int = 10000,
                  seed: int = 0) -> list[Example]:
    """per_length fresh examples at every achievable length up to max_length.

    Deterministic in the seed; short lengths may repeat instances since few
    distinct ones exist.
    """
    spec = task if isinstance(task, TaskSpec) else get_task(task)
    if per_length < 1:
        raise DataError("per_length must be at least 1")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(7,)))
    out = []
    for length in spec.lengths(max_length):
        for _ in range(per_length):
            out.append(spec.sample(length, rng))
    return out


def dump_examples(examples, path) -> None:
    """Line-oriented text dump: task, input glyphs, target glyphs."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            alpha = get_task(ex.task).alphabet
            fh.write(f"{ex.task}\t{alpha.to_text(ex.input)}\t{alpha.to_text(ex.target)}\n")


def load_examples(path) -> list[Example]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{line_no}: expected 3 tab-separated fields")
            task, in_text, out_text = parts
            alpha = get_task(task).alphabet
            inp = alpha.from_text(in_text)
            tgt = alpha.from_text(out_text)
            pad_from = len(in_text.rstrip("_"))
            out.append(Example(task=task, input=inp, target=tgt,
                               length=max(pad_from, len(out_text.rstrip("_"))),
                               bin=inp.shape[0]))
    return out
