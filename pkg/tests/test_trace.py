"""Trace image tests: pixel mapping, PGM format, layout arithmetic."""

import numpy as np

from dngpu import no_grad
from dngpu.cells import DiagonalSplit
from dngpu.model import ModelConfig, forward, init_params
from dngpu.trace import (gray_levels, read_pgm, trace_to_images, write_pgm,
                         write_trace_maps)


class TestGrayLevels:
    def test_endpoints_and_midpoint(self):
        out = gray_levels(np.array([-1.0, 0.0, 1.0]))
        np.testing.assert_array_equal(out, [0, 128, 255])

    def test_out_of_range_clamped(self):
        out = gray_levels(np.array([-5.0, 5.0]))
        np.testing.assert_array_equal(out, [0, 255])


class TestPgm:
    def test_header_and_payload(self, tmp_path):
        pixels = np.arange(6, dtype=np.uint8).reshape(2, 3)
        path = tmp_path / "img.pgm"
        write_pgm(path, pixels)
        blob = path.read_bytes()
        assert blob.startswith(b"P5\n3 2\n255\n")
        assert blob[len(b"P5\n3 2\n255\n"):] == pixels.tobytes()

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        pixels = rng.integers(0, 256, size=(7, 5)).astype(np.uint8)
        path = tmp_path / "img.pgm"
        write_pgm(path, pixels)
        np.testing.assert_array_equal(read_pgm(path), pixels)


class TestTraceLayout:
    def test_rows_and_columns(self, tmp_path):
        # n-position input gives per-map images of n+1 rows by n columns
        cfg = ModelConfig(maps=6, vocab_in=4, vocab_out=4, bins=(8,),
                          precision="float64", dropout=0.0)
        params = init_params(cfg, np.random.default_rng(1))
        tokens = np.array([1, 2, 3, 0, 1, 2, 3, 0])
        with no_grad():
            result = forward(tokens, params, cfg, want_trace=True)
        images = trace_to_images(result.trace)
        assert images.shape == (6, 9, 8)

    def test_top_row_is_embedded_input(self):
        cfg = ModelConfig(maps=4, vocab_in=3, vocab_out=3, bins=(4,),
                          precision="float64", dropout=0.0)
        params = init_params(cfg, np.random.default_rng(2))
        tokens = np.array([1, 2, 0, 1])
        with no_grad():
            result = forward(tokens, params, cfg, want_trace=True)
        images = trace_to_images(result.trace)
        want = gray_levels(params.embedding.data[tokens])  # [n, m]
        for j in range(4):
            np.testing.assert_array_equal(images[j, 0], want[:, j])

    def test_write_maps_and_index(self, tmp_path):
        cfg = ModelConfig(maps=6, vocab_in=3, vocab_out=3, bins=(5,),
                          precision="float64", dropout=0.0)
        params = init_params(cfg, np.random.default_rng(3))
        with no_grad():
            result = forward(np.array([1, 2, 1, 0, 2]), params, cfg, want_trace=True)
        names = write_trace_maps(result.trace, cfg.split, tmp_path)
        assert len(names) == 6
        index = (tmp_path / "maps.tsv").read_text().strip().splitlines()
        assert len(index) == 6
        groups = [line.split("\t")[1] for line in index]
        assert groups == ["stay", "stay", "left", "left", "right", "right"]

    def test_byte_identical_rerun(self, tmp_path):
        cfg = ModelConfig(maps=5, vocab_in=3, vocab_out=3, bins=(5,),
                          precision="float64", dropout=0.0)
        params = init_params(cfg, np.random.default_rng(4))
        tokens = np.array([1, 2, 1, 2, 0])
        blobs = []
        for sub in ("a", "b"):
            with no_grad():
                result = forward(tokens, params, cfg, want_trace=True)
            write_trace_maps(result.trace, cfg.split, tmp_path / sub)
            blobs.append(b"".join(sorted(
                (p.read_bytes() for p in (tmp_path / sub).glob("*.pgm")))))
        assert blobs[0] == blobs[1]

    def test_group_split_counts(self):
        split = DiagonalSplit.even(96)
        groups = [split.group_of(i) for i in range(96)]
        assert groups.count("stay") == 32
        assert groups.count("left") == 32
        assert groups.count("right") == 32

    def test_fifty_digit_multiplication_layout(self):
        # two 50-digit operands: 101 input positions, so 102 x 101 images
        from dngpu.tasks import get_task
        cfg = ModelConfig(maps=3, vocab_in=4, vocab_out=4, bins=(101,),
                          precision="float64", dropout=0.0)
        params = init_params(cfg, np.random.default_rng(5))
        ex = get_task("mul2").sample(101, np.random.default_rng(6))
        with no_grad():
            result = forward(ex.input, params, cfg, want_trace=True)
        images = trace_to_images(result.trace)
        assert images.shape == (3, 102, 101)
