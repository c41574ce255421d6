"""Analog-bit codec: discrete class grids as continuous channels in {-1, +1}.

A grid over C classes becomes ceil(log2 C) channels so a diffusion model can
denoise labels jointly with RGB; decoding thresholds each channel at zero and
falls back to the nearest valid code when noise produces an out-of-range one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil, log2

import numpy as np


class ClassValueError(ValueError):
    """A grid holds a class value outside the alphabet."""


@dataclass(frozen=True)
class ClassAlphabet:
    """The class universe of a dataset: background (class 1) plus defects.

    ``num_classes`` counts background, so defect classes are 2..C in mask
    space; box class ids 1..C-1 map onto mask values via ``+1``.
    """

    num_classes: int
    class_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")
        if not self.class_names:
            names = ["background"] + [f"defect_{k}" for k in range(1, self.num_classes)]
            object.__setattr__(self, "class_names", tuple(names))
        if len(self.class_names) != self.num_classes:
            raise ValueError(
                f"{len(self.class_names)} names for {self.num_classes} classes"
            )

    @property
    def bit_width(self) -> int:
        return ceil(log2(self.num_classes))

    @property
    def num_defect_classes(self) -> int:
        return self.num_classes - 1

    def mask_value_for_box_class(self, class_id: int) -> int:
        """Defect class id (1-based, background excluded) -> mask class value."""
        return class_id + 1

    def box_class_for_mask_value(self, value: int) -> int:
        return value - 1

    def to_dict(self) -> dict:
        return {"num_classes": self.num_classes, "class_names": list(self.class_names)}

    @classmethod
    def from_dict(cls, d: dict) -> "ClassAlphabet":
        return cls(num_classes=int(d["num_classes"]), class_names=tuple(d["class_names"]))


def encode(class_grid: np.ndarray, alphabet: ClassAlphabet) -> np.ndarray:
    """Encode an H x W grid of classes in {1..C} as H x W x b values in {-1, +1}.

    Class c carries the big-endian binary expansion of c - 1; bit 0 maps to
    -1 and bit 1 to +1.
    """
    grid = np.asarray(class_grid)
    bad = (grid < 1) | (grid > alphabet.num_classes)
    if bad.any():
        idx = tuple(int(v) for v in np.argwhere(bad)[0])
        raise ClassValueError(
            f"class value {int(grid[idx])} at pixel {idx} outside 1..{alphabet.num_classes}"
        )
    codes = grid.astype(np.int64) - 1
    b = alphabet.bit_width
    shifts = np.arange(b - 1, -1, -1)
    bits = (codes[..., None] >> shifts) & 1
    return bits.astype(np.float64) * 2.0 - 1.0


def decode(bit_grid: np.ndarray, alphabet: ClassAlphabet) -> np.ndarray:
    """Decode H x W x b real channels back to classes in {1..C}.

    Channels threshold at zero. Codes >= C (possible once noise flips bits)
    resolve to the valid class whose code is nearest in Hamming distance,
    lowest class id on ties, so decoding is total and deterministic.
    """
    arr = np.asarray(bit_grid, dtype=np.float64)
    b = alphabet.bit_width
    if arr.shape[-1] != b:
        raise ValueError(f"expected {b} bit channels, got {arr.shape[-1]}")
    bits = (arr > 0).astype(np.int64)
    shifts = np.arange(b - 1, -1, -1)
    codes = (bits << shifts).sum(axis=-1)
    return np.take(_decode_table(alphabet), codes) + 1


def _decode_table(alphabet: ClassAlphabet) -> np.ndarray:
    """code -> class index (0-based) for every possible b-bit code."""
    b = alphabet.bit_width
    n_codes = 1 << b
    c = alphabet.num_classes
    table = np.empty(n_codes, dtype=np.int64)
    table[:c] = np.arange(c)
    for code in range(c, n_codes):
        dists = [bin(code ^ valid).count("1") for valid in range(c)]
        table[code] = int(np.argmin(dists))  # argmin takes the lowest id on ties
    return table
