"""Task generator and encoding tests against exact integer arithmetic."""

import numpy as np
import pytest

from dngpu.autodiff import DataError
from dngpu.tasks import (Example, bin_and_pad, build_dataset, check_example,
                         decode_decimal_binary, digits_lsb, dump_examples,
                         encode_decimal_binary, gen_addition, gen_base4_mul,
                         gen_binary_mul, gen_copy, gen_decimal_mul, gen_reverse,
                         gen_sort, get_task, load_examples, value_of_digits,
                         DecodeError)


def decode_pair_and_product(example, base):
    inp = example.input[:example.length]
    tgt = example.target[:example.length]
    cut = int(np.flatnonzero(inp == base + 1)[0])
    a = value_of_digits(inp[:cut] - 1, base)
    b = value_of_digits(inp[cut + 1:] - 1, base)
    return a, b, value_of_digits(tgt - 1, base)


class TestBinaryMul:
    def test_worked_example(self):
        # 101 (=5) times 11 (=3): LSB-first digits, product 15 = 111100 padded
        rng = np.random.default_rng(0)
        ex = gen_binary_mul(3, 2, rng)
        ex = Example(task="mul2",
                     input=np.array([2, 1, 2, 3, 2, 2], dtype=np.int16),
                     target=np.array([2, 2, 2, 2, 1, 1], dtype=np.int16),
                     length=6, bin=6)
        a, b, prod = decode_pair_and_product(ex, 2)
        assert (a, b, prod) == (5, 3, 15)
        assert check_example(ex)

    def test_zero_operand(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            ex = gen_binary_mul(4, 4, rng)
            a, b, prod = decode_pair_and_product(ex, 2)
            if a == 0 or b == 0:
                assert prod == 0

    def test_sweep_against_big_integer_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(2000):
            bits = int(rng.integers(1, 24))
            ex = gen_binary_mul(bits, bits, rng)
            a, b, prod = decode_pair_and_product(ex, 2)
            assert prod == a * b
            assert check_example(ex)

    def test_long_operands_use_big_integers(self):
        rng = np.random.default_rng(3)
        ex = gen_binary_mul(200, 200, rng)  # far beyond 64-bit range
        a, b, prod = decode_pair_and_product(ex, 2)
        assert prod == a * b and ex.length == 401


class TestBase4Mul:
    def test_three_times_three(self):
        # 3*3 = 9 = 21 base 4
        for _ in range(50):
            ex = gen_base4_mul(1, 1, np.random.default_rng(_))
            a, b, prod = decode_pair_and_product(ex, 4)
            assert prod == a * b

    def test_sweep(self):
        rng = np.random.default_rng(4)
        for _ in range(2000):
            d = int(rng.integers(1, 12))
            ex = gen_base4_mul(d, d, rng)
            a, b, prod = decode_pair_and_product(ex, 4)
            assert prod == a * b
            assert check_example(ex)


class TestAddition:
    def test_one_plus_one(self):
        # 1+1 = 10 binary = LSB-first "01"
        got = None
        rng = np.random.default_rng(5)
        for _ in range(200):
            ex = gen_addition(1, 1, rng)
            a, b, total = decode_pair_and_product(ex, 2)
            assert total == a + b
            if a == 1 and b == 1:
                got = ex
        assert got is not None
        np.testing.assert_array_equal(got.target, [1, 2, 1])  # digits 0,1,0

    def test_sweep(self):
        rng = np.random.default_rng(6)
        for _ in range(2000):
            bits = int(rng.integers(1, 40))
            ex = gen_addition(bits, bits, rng)
            a, b, total = decode_pair_and_product(ex, 2)
            assert total == a + b
            assert check_example(ex)


class TestSortCopyReverse:
    def test_sort_small(self):
        rng = np.random.default_rng(7)
        ex = gen_sort(3, 5, rng)
        np.testing.assert_array_equal(np.sort(ex.input), ex.target)

    def test_sort_sweep(self):
        rng = np.random.default_rng(8)
        for _ in range(500):
            ex = gen_sort(int(rng.integers(1, 100)), 5, rng)
            assert check_example(ex)
            assert sorted(ex.input.tolist()) == ex.target.tolist()

    def test_copy_and_reverse(self):
        rng = np.random.default_rng(9)
        ex = gen_copy(10, rng)
        np.testing.assert_array_equal(ex.input, ex.target)
        rex = gen_reverse(10, rng)
        np.testing.assert_array_equal(rex.input[::-1], rex.target)

    def test_reverse_of_palindrome(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            ex = gen_reverse(9, rng)
            if np.array_equal(ex.input, ex.input[::-1]):
                np.testing.assert_array_equal(ex.input, ex.target)


class TestDecimalBinaryEncoding:
    def test_digit_five(self):
        # 5 = 1010 LSB-first, first bit marked: tokens I,0,1,0
        np.testing.assert_array_equal(encode_decimal_binary([5]), [4, 1, 2, 1])

    def test_digit_zero(self):
        np.testing.assert_array_equal(encode_decimal_binary([0]), [3, 1, 1, 1])

    def test_round_trip_sweep(self):
        rng = np.random.default_rng(11)
        for _ in range(2000):
            value = int(rng.integers(0, 10**10))
            digits = digits_lsb(value, 10, 11)
            assert decode_decimal_binary(encode_decimal_binary(digits)) == digits

    def test_decode_rejects_misplaced_marker(self):
        good = encode_decimal_binary([3, 7])
        bad = good.copy()
        bad[1] = 3  # marked zero where a plain bit belongs
        with pytest.raises(DecodeError):
            decode_decimal_binary(bad)

    def test_decode_rejects_unmarked_group_start(self):
        good = encode_decimal_binary([3, 7])
        bad = good.copy()
        bad[4] = 1  # plain bit where a marker belongs
        with pytest.raises(DecodeError):
            decode_decimal_binary(bad)

    def test_decode_rejects_digit_over_nine(self):
        tokens = [4, 2, 2, 2]  # 1111 = 15
        with pytest.raises(DecodeError):
            decode_decimal_binary(tokens)

    def test_decode_rejects_partial_group(self):
        with pytest.raises(DecodeError):
            decode_decimal_binary([4, 1, 2])

    def test_single_token_corruptions_rejected_or_change_value(self):
        rng = np.random.default_rng(12)
        digits = digits_lsb(90817263, 10, 8)
        good = encode_decimal_binary(digits)
        for pos in range(good.size):
            for tok in (1, 2, 3, 4):
                if tok == good[pos]:
                    continue
                bad = good.copy()
                bad[pos] = tok
                marker_broken = (pos % 4 == 0) != (tok in (3, 4))
                if marker_broken:
                    with pytest.raises(DecodeError):
                        decode_decimal_binary(bad)


class TestDecimalMul:
    def test_five_digit_input_length(self):
        ex = gen_decimal_mul(5, 5, np.random.default_rng(13))
        assert ex.length == 41

    def test_products_verify_by_decode(self):
        rng = np.random.default_rng(14)
        for _ in range(300):
            ex = gen_decimal_mul(2, 2, rng)
            inp = ex.input
            cut = int(np.flatnonzero(inp == 5)[0])
            a = value_of_digits(decode_decimal_binary(inp[:cut]), 10)
            b = value_of_digits(decode_decimal_binary(inp[cut + 1:]), 10)
            prod = value_of_digits(decode_decimal_binary(ex.target[:-1]), 10)
            assert prod == a * b

    def test_99_squared_layout(self):
        # hand-built 99 * 99 input; the target must decode to 9801
        nines = encode_decimal_binary([9, 9])
        inp = np.concatenate([nines, [5], nines]).astype(np.int16)
        want = np.concatenate([encode_decimal_binary(digits_lsb(9801, 10, 4)),
                               [1]]).astype(np.int16)
        ex = Example(task="mul10bin", input=inp, target=want, length=17, bin=17)
        assert check_example(ex)
        assert value_of_digits(decode_decimal_binary(want[:-1]), 10) == 9801

    def test_sweep(self):
        rng = np.random.default_rng(15)
        for _ in range(1000):
            d = int(rng.integers(1, 8))
            ex = gen_decimal_mul(d, d, rng)
            assert check_example(ex)


class TestDatasetAndBinning:
    def test_mul2_achievable_lengths_are_odd(self):
        lengths = get_task("mul2").lengths(41)
        assert lengths == list(range(3, 42, 2))

    def test_decimal_lengths(self):
        assert get_task("mul10bin").lengths(41) == [9, 17, 25, 33, 41]

    def test_copy_lengths_dense(self):
        assert get_task("copy").lengths(5) == [1, 2, 3, 4, 5]

    def test_dataset_deterministic_under_seed(self):
        a = build_dataset("mul2", 11, per_length=5, seed=3)
        b = build_dataset("mul2", 11, per_length=5, seed=3)
        assert len(a) == len(b) == 5 * 5
        for ea, eb in zip(a, b):
            np.testing.assert_array_equal(ea.input, eb.input)
            np.testing.assert_array_equal(ea.target, eb.target)

    def test_dataset_one_per_length(self):
        data = build_dataset("add", 9, per_length=1, seed=0)
        assert sorted(e.length for e in data) == [3, 5, 7, 9]

    def test_bin_and_pad_smallest_fit(self):
        ex = Example(task="copy", input=np.ones(10, dtype=np.int16),
                     target=np.ones(10, dtype=np.int16), length=10, bin=10)
        padded = bin_and_pad(ex, (9, 17, 25, 33, 41))
        assert padded.bin == 17
        assert padded.input.shape == (17,)
        np.testing.assert_array_equal(padded.input[10:], np.zeros(7))

    def test_bin_exact_fit(self):
        ex = Example(task="copy", input=np.ones(41, dtype=np.int16),
                     target=np.ones(41, dtype=np.int16), length=41, bin=41)
        assert bin_and_pad(ex, (9, 17, 25, 33, 41)).bin == 41

    def test_too_long_rejected(self):
        ex = Example(task="copy", input=np.ones(42, dtype=np.int16),
                     target=np.ones(42, dtype=np.int16), length=42, bin=42)
        with pytest.raises(DataError):
            bin_and_pad(ex, (9, 17, 25, 33, 41))

    def test_input_and_target_lengths_always_equal(self):
        rng = np.random.default_rng(16)
        for task in ("mul2", "mul4", "add", "sort", "copy", "reverse", "mul10bin"):
            spec = get_task(task)
            for length in spec.lengths(33)[:4]:
                ex = spec.sample(length, rng)
                assert ex.input.shape == ex.target.shape


class TestDumpLoad:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(17)
        examples = [bin_and_pad(get_task("mul2").sample(7, rng), (9,)) for _ in range(5)]
        examples += [bin_and_pad(get_task("sort").sample(6, rng), (9,)) for _ in range(5)]
        path = tmp_path / "examples.tsv"
        dump_examples(examples, path)
        loaded = load_examples(path)
        assert len(loaded) == 10
        for orig, back in zip(examples, loaded):
            assert back.task == orig.task
            np.testing.assert_array_equal(back.input, orig.input)
            np.testing.assert_array_equal(back.target, orig.target)

    def test_glyph_text_format(self, tmp_path):
        ex = Example(task="add", input=np.array([2, 3, 2], dtype=np.int16),
                     target=np.array([1, 2, 1], dtype=np.int16), length=3, bin=3)
        path = tmp_path / "one.tsv"
        dump_examples([ex], path)
        assert path.read_text() == "add\t1+1\t010\n"
