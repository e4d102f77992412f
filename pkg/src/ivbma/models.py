"""Model space over selectable regressors.

A model is an inclusion mask over the K selectable columns; the intercept is
never part of the mask. Masks are encoded as integers whose binary expansion,
read left to right, matches the 0/1 string form (leftmost = first column), so
ascending integer order is ascending binary order of the strings.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

DEFAULT_ENUMERATION_CAP = 25


class EnumerationCapError(ValueError):
    """Raised when exhaustive enumeration is requested above the cap."""


@dataclass(frozen=True)
class InclusionMask:
    bits: tuple[bool, ...]

    @property
    def K(self) -> int:
        return len(self.bits)

    @property
    def size(self) -> int:
        return sum(self.bits)

    @property
    def code(self) -> int:
        return mask_to_code(self.bits)

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(i for i, b in enumerate(self.bits) if b)

    @classmethod
    def empty(cls, K: int) -> InclusionMask:
        return cls((False,) * K)

    @classmethod
    def from_code(cls, code: int, K: int) -> InclusionMask:
        return cls(code_to_bits(code, K))

    @classmethod
    def from_string(cls, text: str) -> InclusionMask:
        if any(c not in "01" for c in text):
            raise ValueError(f"mask string must contain only 0/1, got {text!r}")
        return cls(tuple(c == "1" for c in text))

    def to_string(self) -> str:
        return "".join("1" if b else "0" for b in self.bits)

    def flip(self, index: int) -> InclusionMask:
        bits = list(self.bits)
        bits[index] = not bits[index]
        return InclusionMask(tuple(bits))

    def as_array(self) -> np.ndarray:
        return np.array(self.bits, dtype=bool)

    def __str__(self) -> str:
        return self.to_string()


def bit_of(index: int, K: int) -> int:
    """Integer bit carrying column ``index`` of a K-column mask."""
    return 1 << (K - 1 - index)


def mask_to_code(bits) -> int:
    code = 0
    for b in bits:
        code = (code << 1) | int(bool(b))
    return code


def code_to_bits(code: int, K: int) -> tuple[bool, ...]:
    if code < 0 or code >= (1 << K):
        raise ValueError(f"code {code} out of range for K={K}")
    return tuple(bool((code >> (K - 1 - i)) & 1) for i in range(K))


def code_to_string(code: int, K: int) -> str:
    return format(code, f"0{K}b") if K else ""


def codes_to_matrix(codes: np.ndarray, K: int) -> np.ndarray:
    """Boolean (len(codes), K) inclusion matrix for an array of mask codes."""
    codes = np.asarray(codes, dtype=np.int64)
    shifts = np.arange(K - 1, -1, -1, dtype=np.int64)
    return ((codes[:, None] >> shifts[None, :]) & 1).astype(bool)


def uniform_log_prior(K: int) -> float:
    """Log prior mass of any single model under the uniform model prior."""
    if K < 0:
        raise ValueError("K must be non-negative")
    return -K * math.log(2.0)


def propose_flip(mask: InclusionMask, rng: np.random.Generator) -> InclusionMask:
    """Single-variable flip with the flipped index uniform over the K columns."""
    if mask.K < 1:
        raise ValueError("cannot propose a flip on an empty model space")
    return mask.flip(int(rng.integers(mask.K)))


def enumerate_all(K: int, cap: int = DEFAULT_ENUMERATION_CAP) -> Iterator[InclusionMask]:
    """All 2**K masks in ascending binary order."""
    check_enumeration_cap(K, cap)
    for code in range(1 << K):
        yield InclusionMask.from_code(code, K)


def check_enumeration_cap(K: int, cap: int = DEFAULT_ENUMERATION_CAP) -> None:
    if K < 0:
        raise ValueError("K must be non-negative")
    if K > cap:
        raise EnumerationCapError(
            f"exhaustive enumeration of 2^{K} models exceeds the cap K <= {cap}; "
            "use the MC3 sampler (method bma-mc3) instead"
        )


def is_rank_deficient(columns: np.ndarray) -> bool:
    """Rank rule shared by every likelihood path.

    Columns are centered first (the intercept absorbs the mean); a model is
    rank deficient when the centered block does not have full column rank.
    """
    columns = np.asarray(columns, dtype=float)
    if columns.ndim != 2 or columns.shape[1] == 0:
        return False
    centered = columns - columns.mean(axis=0)
    return np.linalg.matrix_rank(centered) < columns.shape[1]
