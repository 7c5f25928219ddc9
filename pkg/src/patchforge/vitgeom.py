"""Vision-transformer token-grid geometry.

A transformer's output sequence (class token excluded) can be retiled into
a spatial map, the reverse of the row-major flatten applied before patch
embedding. Positional-embedding tables are resized bicubically per channel
when the token grid changes; the class-token row passes through untouched.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidSchedule, NotDivisible, OutOfRange, ShapeMismatch
from .resample import resize_bicubic_array

_POSEMBED_MAGIC = b"PEMB"
_POSEMBED_VERSION = 1


@dataclass(frozen=True)
class TokenGrid:
    seq_len: int
    hidden: int
    grid_h: int
    grid_w: int
    has_cls: bool

    def __post_init__(self) -> None:
        expected = self.grid_h * self.grid_w + (1 if self.has_cls else 0)
        if self.seq_len != expected:
            raise ShapeMismatch(
                f"seq_len {self.seq_len} != {self.grid_h}x{self.grid_w}"
                f"{' + cls' if self.has_cls else ''} ({expected})"
            )
        if min(self.grid_h, self.grid_w, self.hidden) < 1:
            raise ShapeMismatch("grid dimensions and hidden size must be >= 1")


@dataclass(frozen=True)
class PosEmbed:
    table: np.ndarray   # (grid_h * grid_w + cls, hidden), cls row first
    grid_h: int
    grid_w: int
    has_cls: bool

    def __post_init__(self) -> None:
        rows = self.grid_h * self.grid_w + (1 if self.has_cls else 0)
        if self.table.ndim != 2 or self.table.shape[0] != rows:
            raise ShapeMismatch(
                f"table has {self.table.shape[0]} rows, grid needs {rows}"
            )

    @property
    def hidden(self) -> int:
        return self.table.shape[1]


def feature_map_size(input_px: int, patch_px: int) -> int:
    """Spatial side of the token map for an input_px image at patch_px."""
    if input_px < 1 or patch_px < 1:
        raise ValueError("sizes must be positive")
    if input_px % patch_px:
        raise NotDivisible(f"{input_px} px input is not a multiple of {patch_px} px patches")
    return input_px // patch_px


def retile(seq: np.ndarray, grid: TokenGrid) -> np.ndarray:
    """Sequence (seq_len, hidden) -> map (hidden, grid_h, grid_w), cls dropped.

    Token k (counted after the class token) lands on row k // grid_w,
    column k % grid_w; values are copied unchanged.
    """
    seq = np.asarray(seq)
    if seq.ndim != 2 or seq.shape != (grid.seq_len, grid.hidden):
        raise ShapeMismatch(
            f"sequence shape {seq.shape} does not match grid "
            f"({grid.seq_len}, {grid.hidden})"
        )
    tokens = seq[1:] if grid.has_cls else seq
    return np.ascontiguousarray(
        tokens.reshape(grid.grid_h, grid.grid_w, grid.hidden).transpose(2, 0, 1)
    )


def flatten_map(vit_map: np.ndarray) -> np.ndarray:
    """Map (hidden, grid_h, grid_w) -> tokens (grid_h * grid_w, hidden), row-major."""
    vit_map = np.asarray(vit_map)
    if vit_map.ndim != 3:
        raise ShapeMismatch(f"expected (hidden, h, w) map, got shape {vit_map.shape}")
    hidden = vit_map.shape[0]
    return np.ascontiguousarray(vit_map.transpose(1, 2, 0).reshape(-1, hidden))


def resize_pos_embed(pe: PosEmbed, new_grid_h: int, new_grid_w: int) -> PosEmbed:
    """Bicubic per-channel resize of the grid rows; the cls row is untouched."""
    if new_grid_h < 1 or new_grid_w < 1:
        raise ValueError("target grid must be >= 1 per axis")
    cls_rows = pe.table[:1] if pe.has_cls else pe.table[:0]
    grid_rows = pe.table[1:] if pe.has_cls else pe.table
    if new_grid_h == pe.grid_h and new_grid_w == pe.grid_w:
        return PosEmbed(pe.table.copy(), pe.grid_h, pe.grid_w, pe.has_cls)
    lattice = grid_rows.reshape(pe.grid_h, pe.grid_w, pe.hidden)
    resized = resize_bicubic_array(lattice, new_grid_h, new_grid_w)
    table = np.concatenate(
        [cls_rows.astype(np.float64), resized.reshape(-1, pe.hidden)], axis=0
    )
    return PosEmbed(table, new_grid_h, new_grid_w, pe.has_cls)


def zero_pos_embed(pe: PosEmbed) -> PosEmbed:
    """All-zero table with identical dimensions."""
    return PosEmbed(np.zeros_like(pe.table), pe.grid_h, pe.grid_w, pe.has_cls)


def validate_layer_tap(k: int | None, depth: int) -> int:
    """Layer whose output feeds the segmentation head; 1-based, default last."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if k is None:
        return depth
    if not 1 <= k <= depth:
        raise OutOfRange(f"layer {k} outside 1..{depth}")
    return k


def lr_at(
    step: int,
    total_steps: int,
    warmup_steps: int,
    base_lr: float,
    batch_size: int,
) -> float:
    """Linear-warmup cosine schedule; peak = base_lr * batch_size / 256.

    Ramps from 0 to the peak over warmup_steps, then decays to 0 by cosine
    annealing; continuous at the warmup boundary.
    """
    if total_steps < 1 or warmup_steps < 0 or warmup_steps >= total_steps:
        raise InvalidSchedule(f"warmup {warmup_steps} must lie in [0, total {total_steps})")
    if not 0 <= step <= total_steps:
        raise InvalidSchedule(f"step {step} outside [0, {total_steps}]")
    if base_lr <= 0 or batch_size < 1:
        raise InvalidSchedule("base_lr and batch_size must be positive")
    peak = base_lr * batch_size / 256
    if step < warmup_steps:
        return peak * step / warmup_steps
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return peak * 0.5 * (1.0 + math.cos(math.pi * progress))


def save_pos_embed(pe: PosEmbed, path: str | Path) -> None:
    """Write the table as little-endian float32 with a small binary header."""
    header = struct.pack(
        "<4sIIIBII",
        _POSEMBED_MAGIC,
        _POSEMBED_VERSION,
        pe.table.shape[0],
        pe.hidden,
        1 if pe.has_cls else 0,
        pe.grid_h,
        pe.grid_w,
    )
    body = np.ascontiguousarray(pe.table, dtype="<f4").tobytes()
    Path(path).write_bytes(header + body)


def load_pos_embed(path: str | Path) -> PosEmbed:
    blob = Path(path).read_bytes()
    head_size = struct.calcsize("<4sIIIBII")
    magic, version, rows, hidden, has_cls, grid_h, grid_w = struct.unpack(
        "<4sIIIBII", blob[:head_size]
    )
    if magic != _POSEMBED_MAGIC or version != _POSEMBED_VERSION:
        raise ValueError(f"{path} is not a positional-embedding table")
    table = np.frombuffer(blob[head_size:], dtype="<f4").reshape(rows, hidden)
    return PosEmbed(table.astype(np.float64), grid_h, grid_w, bool(has_cls))
