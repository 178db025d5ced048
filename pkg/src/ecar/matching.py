"""Binary descriptor matching (256-bit Hamming) for frames vs map points."""

from __future__ import annotations

from typing import List, Sequence, Tuple

import numpy as np


def descriptor_bits(descriptors: Sequence[bytes]) -> np.ndarray:
    """(N, 256) float32 bit matrix from 32-byte descriptors."""
    if not descriptors:
        return np.zeros((0, 256), dtype=np.float32)
    raw = np.frombuffer(b"".join(descriptors), dtype=np.uint8).reshape(-1, 32)
    return np.unpackbits(raw, axis=1).astype(np.float32)


def hamming_matrix(a_bits: np.ndarray, b_bits: np.ndarray) -> np.ndarray:
    """Pairwise Hamming distances between two bit matrices."""
    ones_a = a_bits.sum(axis=1, keepdims=True)
    ones_b = b_bits.sum(axis=1, keepdims=True)
    return ones_a + ones_b.T - 2.0 * (a_bits @ b_bits.T)


class DescriptorIndex:
    """Incrementally built descriptor set with an exact-match fast path.

    Exact byte-equal hits resolve through a dict; the Hamming fallback only
    runs for queries without an exact twin, which keeps frame matching cheap
    at high quality where descriptors arrive unflipped.
    """

    def __init__(self):
        self._descs: List[bytes] = []
        self._exact = {}
        self._bits: np.ndarray = np.zeros((0, 256), dtype=np.float32)
        self._dirty: List[bytes] = []

    def __len__(self) -> int:
        return len(self._descs)

    def add(self, desc: bytes) -> int:
        idx = len(self._descs)
        self._descs.append(desc)
        self._exact.setdefault(desc, idx)
        self._dirty.append(desc)
        return idx

    def bits(self) -> np.ndarray:
        if self._dirty:
            self._bits = np.vstack([self._bits, descriptor_bits(self._dirty)])
            self._dirty.clear()
        return self._bits

    def match(self, query: Sequence[bytes], hamming_max: int = 50,
              ratio_max: float = 0.8) -> List[Tuple[int, int]]:
        """(query_index, index) pairs; exact hits first, Hamming for the rest."""
        if not query or not self._descs:
            return []
        matches = []
        rest_qi = []
        rest_desc = []
        for qi, desc in enumerate(query):
            hit = self._exact.get(desc)
            if hit is not None:
                matches.append((qi, hit))
            else:
                rest_qi.append(qi)
                rest_desc.append(desc)
        if rest_desc:
            for qi, ti in match_descriptors(rest_desc, self.bits(),
                                            hamming_max, ratio_max):
                matches.append((rest_qi[qi], ti))
        matches.sort()
        return matches


def match_descriptors(query: Sequence[bytes], train_bits: np.ndarray,
                      hamming_max: int = 50,
                      ratio_max: float = 0.8) -> List[Tuple[int, int]]:
    """Best-of-two ratio-tested matches.

    Returns (query_index, train_index) pairs with best distance <= hamming_max
    and best/second-best ratio < ratio_max. train_bits comes from
    descriptor_bits and may be cached by the caller.
    """
    if not query or train_bits.shape[0] == 0:
        return []
    dist = hamming_matrix(descriptor_bits(query), train_bits)
    best_idx = np.argmin(dist, axis=1)
    best = dist[np.arange(len(dist)), best_idx]
    matches = []
    if dist.shape[1] >= 2:
        part = np.partition(dist, 1, axis=1)
        second = part[:, 1]
    else:
        second = np.full(len(dist), np.inf)
    for qi in range(len(dist)):
        if best[qi] > hamming_max:
            continue
        if best[qi] / max(second[qi], 1e-9) >= ratio_max and best[qi] > 0:
            continue
        matches.append((qi, int(best_idx[qi])))
    return matches
