"""First-fit-decreasing sequence packing into fixed-length token rows."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ContractError
from .patching import MAX_PATCH_SIZE, FlattenedTokens

ROW_LEN = 512
PAD_ID = -1


@dataclass
class PackedBatch:
    patches: np.ndarray  # [rows, row_len, MAX_PATCH_SIZE]
    patch_size: np.ndarray  # [rows, row_len], 0 on padding
    time_id: np.ndarray
    variate_id: np.ndarray
    sample_id: np.ndarray  # PAD_ID on padding
    is_mask: np.ndarray
    loss_mask: np.ndarray  # [rows, row_len, MAX_PATCH_SIZE]
    row_len: int
    placements: list[tuple[int, int, int]] = field(default_factory=list)  # (row, start, end) per sample
    samples: list[FlattenedTokens] = field(default_factory=list)

    @property
    def num_rows(self) -> int:
        return self.patches.shape[0]

    @property
    def num_tokens(self) -> int:
        return int((self.sample_id != PAD_ID).sum())

    def attention_mask(self) -> np.ndarray:
        sid = self.sample_id
        return (sid[:, :, None] == sid[:, None, :]) & (sid[:, :, None] != PAD_ID)

    def sample_rows(self, index: int, values: np.ndarray) -> np.ndarray:
        """Slice per-token ``values`` ``[rows, row_len, ...]`` for one sample."""
        row, start, end = self.placements[index]
        return values[row, start:end]


def first_fit_decreasing(sizes, capacity: int) -> list[list[int]]:
    """Bin indices per row; ties keep input order so packing is deterministic."""
    order = sorted(range(len(sizes)), key=lambda i: (-sizes[i], i))
    rows: list[list[int]] = []
    free: list[int] = []
    for i in order:
        if sizes[i] > capacity:
            raise ContractError(f"sample {i} has {sizes[i]} tokens > row length {capacity}")
        for r, room in enumerate(free):
            if sizes[i] <= room:
                rows[r].append(i)
                free[r] -= sizes[i]
                break
        else:
            rows.append([i])
            free.append(capacity - sizes[i])
    return rows


def _assemble(samples: list[FlattenedTokens], rows: list[list[int]], row_len: int) -> PackedBatch:
    n = len(rows)
    patches = np.zeros((n, row_len, MAX_PATCH_SIZE))
    loss_mask = np.zeros((n, row_len, MAX_PATCH_SIZE), dtype=bool)
    patch_size = np.zeros((n, row_len), dtype=np.int64)
    time_id = np.full((n, row_len), PAD_ID, dtype=np.int64)
    variate_id = np.full((n, row_len), PAD_ID, dtype=np.int64)
    sample_id = np.full((n, row_len), PAD_ID, dtype=np.int64)
    is_mask = np.zeros((n, row_len), dtype=bool)
    placements: list = [None] * len(samples)
    for r, members in enumerate(rows):
        pos = 0
        for i in members:
            s = samples[i]
            end = pos + s.num_tokens
            p = s.patch_size
            patches[r, pos:end, :p] = s.patches
            loss_mask[r, pos:end, :p] = s.target
            patch_size[r, pos:end] = p
            time_id[r, pos:end] = s.time_id
            variate_id[r, pos:end] = s.variate_id
            sample_id[r, pos:end] = i
            is_mask[r, pos:end] = s.is_mask
            placements[i] = (r, pos, end)
            pos = end
    return PackedBatch(patches, patch_size, time_id, variate_id, sample_id, is_mask, loss_mask,
                       row_len, placements, list(samples))


def pack(samples: list[FlattenedTokens], row_len: int = ROW_LEN) -> PackedBatch:
    """Pack whole samples into rows of ``row_len`` tokens (FFD)."""
    sizes = [s.num_tokens for s in samples]
    return _assemble(samples, first_fit_decreasing(sizes, row_len), row_len)


def pack_unpacked(samples: list[FlattenedTokens], row_len: int = ROW_LEN) -> PackedBatch:
    """One sample per row, right-padded: the no-packing baseline."""
    for i, s in enumerate(samples):
        if s.num_tokens > row_len:
            raise ContractError(f"sample {i} has {s.num_tokens} tokens > row length {row_len}")
    return _assemble(samples, [[i] for i in range(len(samples))], row_len)


def single(sample: FlattenedTokens) -> PackedBatch:
    """A one-row batch holding exactly one sample with no padding."""
    return _assemble([sample], [[0]], sample.num_tokens)


def padding_fraction(batch: PackedBatch) -> float:
    """Padded tokens over total row tokens; rows without samples are ignored."""
    used = batch.sample_id != PAD_ID
    live = used.any(axis=1)
    total = int(live.sum()) * batch.row_len
    if total == 0:
        return 0.0
    return float(total - used[live].sum()) / total


def padding_fraction_of_sizes(rows: list[list[int]], sizes, row_len: int) -> float:
    total = len(rows) * row_len
    return 0.0 if total == 0 else 1.0 - sum(sizes[i] for r in rows for i in r) / total
