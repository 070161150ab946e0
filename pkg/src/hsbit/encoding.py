"""Bitfield labels for overlapping polymer flakes.

Each pixel carries one bit per primary polymer. Bit 0 is PP, bit 1 is PE,
bit 2 is PET; the all-zero field is background and a pixel where flakes
overlap has the bits of every constituent set. Printed codes put the
highest bit first, so PP+PE reads ``"011"``.

The same value read as an unsigned integer is the powerset category index
used by the eight-way softmax baseline.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .errors import UsageError

PRIMARY_CLASSES = ("PP", "PE", "PET")
K = len(PRIMARY_CLASSES)
N_CATEGORIES = 2**K
PP, PE, PET = 0, 1, 2
DEFAULT_THRESHOLD = 0.5


def category_name(index: int) -> str:
    """``0 -> "Background"``, ``3 -> "PP+PE"`` and so on."""
    bits = index_to_bitfield(index)
    names = [PRIMARY_CLASSES[i] for i in range(K) if bits[i]]
    return "+".join(names) if names else "Background"


def format_bitfield(bits) -> str:
    bits = np.asarray(bits, dtype=bool)
    return "".join("1" if b else "0" for b in bits[::-1])


def parse_bitfield(text: str) -> np.ndarray:
    if len(text) != K or set(text) - {"0", "1"}:
        raise UsageError(f"bitfield text must be {K} characters of 0/1, got {text!r}")
    return np.array([c == "1" for c in reversed(text)], dtype=bool)


def encode(classes: Iterable[int | str]) -> np.ndarray:
    """Bitfield with exactly the listed primary classes set."""
    bits = np.zeros(K, dtype=bool)
    for c in classes:
        if isinstance(c, str):
            if c not in PRIMARY_CLASSES:
                raise UsageError(f"unknown primary class {c!r}; expected one of {PRIMARY_CLASSES}")
            c = PRIMARY_CLASSES.index(c)
        if not 0 <= int(c) < K:
            raise UsageError(f"primary class id {c} outside [0, {K})")
        bits[int(c)] = True
    return bits


def decode(scores, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """Bit i is set iff ``scores[..., i] > threshold``.

    Works on a single score vector or on any array whose last axis is K.
    """
    return np.asarray(scores) > threshold


def bitfield_to_target(bits) -> np.ndarray:
    """+1 for active bits, -1 otherwise (last axis is K)."""
    return np.where(np.asarray(bits, dtype=bool), 1.0, -1.0).astype(np.float32)


_WEIGHTS = (1 << np.arange(K)).astype(np.uint8)


def powerset_to_index(bits) -> int | np.ndarray:
    bits = np.asarray(bits, dtype=bool)
    if bits.shape[-1:] != (K,):
        raise UsageError(f"bitfield needs a trailing axis of length {K}, got shape {bits.shape}")
    idx = (bits.astype(np.uint8) * _WEIGHTS).sum(axis=-1).astype(np.uint8)
    return int(idx) if idx.ndim == 0 else idx


def index_to_bitfield(index) -> np.ndarray:
    idx = np.asarray(index)
    if np.any(idx < 0) or np.any(idx >= N_CATEGORIES):
        raise UsageError(f"powerset index must lie in [0, {N_CATEGORIES})")
    return (idx[..., None].astype(np.int64) >> np.arange(K)) & 1 == 1


# raster conversions ---------------------------------------------------------------
# bitfield masks are (H, W, K) bool; powerset masks are (H, W) uint8.

def bitfield_mask_to_powerset(mask) -> np.ndarray:
    return powerset_to_index(mask)


def powerset_mask_to_bitfield(mask) -> np.ndarray:
    return index_to_bitfield(mask)


def powerset_mask_to_onehot(mask) -> np.ndarray:
    """(H, W) indices -> (N_CATEGORIES, H, W) float32 one-hot planes."""
    mask = np.asarray(mask)
    if mask.size and (mask.min() < 0 or mask.max() >= N_CATEGORIES):
        raise UsageError(f"powerset index must lie in [0, {N_CATEGORIES})")
    return (np.arange(N_CATEGORIES)[:, None, None] == mask[None]).astype(np.float32)


def onehot_to_powerset_mask(onehot) -> np.ndarray:
    return np.asarray(onehot).argmax(axis=0).astype(np.uint8)


def bitfield_mask_to_targets(mask) -> np.ndarray:
    """(H, W, K) bitfields -> (K, H, W) +-1 training targets."""
    return np.moveaxis(bitfield_to_target(mask), -1, 0)


def decode_scores(scores, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """(K, H, W) TanH scores -> (H, W) powerset mask."""
    return powerset_to_index(decode(np.moveaxis(np.asarray(scores), 0, -1), threshold))


def is_overlap(index) -> np.ndarray | bool:
    """True for categories with two or more active bits."""
    bits = index_to_bitfield(index)
    return bits.sum(axis=-1) >= 2
