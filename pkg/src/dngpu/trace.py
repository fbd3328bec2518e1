"""Execution-trace images: one grayscale picture per map of one forward run.

Each image has n+1 rows (the embedded input state on top, the final state,
where the answer is read, at the bottom) and n columns (sequence positions).
State values are clamped to [-1, 1] and mapped linearly to 8-bit gray.
Files are binary PGM (P5), which is bit-exact and viewer-agnostic.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .cells import DiagonalSplit


def gray_levels(values: np.ndarray) -> np.ndarray:
    """Map reals to uint8: -1 -> 0, 0 -> 128, +1 -> 255."""
    clamped = np.clip(values, -1.0, 1.0)
    return np.round(255.0 * (clamped + 1.0) / 2.0).astype(np.uint8)


def write_pgm(path, pixels: np.ndarray) -> None:
    """Binary PGM: 'P5\\n<w> <h>\\n255\\n' then h*w raw bytes."""
    if pixels.ndim != 2 or pixels.dtype != np.uint8:
        raise ValueError(f"need a 2-D uint8 array, got {pixels.dtype} {pixels.shape}")
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5" or parts[2] != b"255":
        raise ValueError(f"{path} is not a binary PGM written by this package")
    w, h = (int(x) for x in parts[1].split())
    pixels = np.frombuffer(parts[3], dtype=np.uint8)
    if pixels.size != w * h:
        raise ValueError(f"{path}: expected {w * h} pixels, found {pixels.size}")
    return pixels.reshape(h, w)


def trace_to_images(trace: list[np.ndarray]) -> np.ndarray:
    """Stack a forward trace into per-map pixel grids [m, n+1, n]."""
    stacked = np.stack(trace)            # [n+1, n, m]
    return gray_levels(stacked).transpose(2, 0, 1)


def write_trace_maps(trace: list[np.ndarray], split: DiagonalSplit, out_dir) -> list[str]:
    """One PGM per map plus an index file listing each map's gate group.

    Files are named map_<group>_<index>.pgm with the global map index, so the
    stay / from-left / from-right groups sort together.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    images = trace_to_images(trace)
    names = []
    index_lines = []
    for idx in range(images.shape[0]):
        group = split.group_of(idx)
        name = f"map_{group}_{idx:03d}.pgm"
        write_pgm(out / name, images[idx])
        names.append(name)
        index_lines.append(f"{idx}\t{group}\t{name}")
    (out / "maps.tsv").write_text("\n".join(index_lines) + "\n", encoding="utf-8")
    return names
