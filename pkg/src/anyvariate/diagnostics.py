"""Packing statistics and inference-setting search."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .archive import Archive
from .encoder import Model
from .forecast import forecast
from .metrics import MetricConfig, crps, validation_window
from .packing import ROW_LEN, first_fit_decreasing, padding_fraction_of_sizes
from .patching import TimeSeries, admissible_patch_sizes
from .sampler import SamplingConfig, TaskSampler


@dataclass
class PackReport:
    iterations: int
    samples_per_iteration: int
    packed_padding: float
    unpacked_padding: float
    mean_tokens: float
    histogram_edges: list[int]
    histogram_counts: list[int]

    def to_dict(self) -> dict:
        return asdict(self)


def pack_stats(archive: Archive, sampling: SamplingConfig | None = None, iterations: int = 1000,
               samples_per_iteration: int = 256, seed: int = 0, row_len: int = ROW_LEN,
               bin_width: int = 32) -> PackReport:
    """Padding of FFD packing vs one-sample-per-row over sampler iterations.

    Each iteration draws ``samples_per_iteration`` samples (one batch) and
    packs them; padding fractions are pooled over all iterations.
    """
    sampler = TaskSampler(archive, sampling, seed=seed)
    packed_rows = 0
    sizes_all = []
    for _ in range(iterations):
        sizes = [sampler.sample().num_tokens for _ in range(samples_per_iteration)]
        packed_rows += len(first_fit_decreasing(sizes, row_len))
        sizes_all.extend(sizes)
    total = float(sum(sizes_all))
    edges = list(range(0, row_len + bin_width, bin_width))
    counts, _ = np.histogram(sizes_all, bins=edges)
    return PackReport(
        iterations=iterations,
        samples_per_iteration=samples_per_iteration,
        packed_padding=1.0 - total / (packed_rows * row_len),
        unpacked_padding=1.0 - total / (len(sizes_all) * row_len),
        mean_tokens=total / len(sizes_all),
        histogram_edges=edges,
        histogram_counts=[int(c) for c in counts],
    )


CONTEXT_GRID = (1000, 2000, 3000, 4000, 5000)


def tune(model: Model, archive: Archive, protocol: dict, contexts=CONTEXT_GRID, n_samples: int = 100,
         seed: int = 0) -> dict:
    """Pick context length and patch size per sub-dataset by validation CRPS.

    The validation window is the last horizon before the test region; the
    grid is ``contexts`` x the admissible patch sizes the model supports.
    """
    cfg = MetricConfig()
    chosen = {}
    for sd in archive.sub_datasets:
        h, r = protocol[sd.id] if sd.id in protocol else protocol[sd.frequency]
        scores = {}
        patches = [p for p in admissible_patch_sizes(sd.frequency) if p in model.cfg.patch_sizes]
        for ctx in contexts:
            for p in patches:
                quants, actual = [], []
                for s in sd.series:
                    start = validation_window(s.num_steps, h, r)
                    hist = TimeSeries(s.values[:, :start], s.roles, s.frequency, s.id, s.multiplier, s.names)
                    fc = forecast(model, hist, h, min(ctx, start), p, n_samples, seed)
                    quants.append(fc.quantiles.reshape(len(cfg.levels), -1))
                    actual.append(s.values[fc.targets, start : start + h].reshape(-1))
                scores[(ctx, p)] = crps(np.concatenate(quants, axis=1), np.concatenate(actual), cfg.levels)
        (ctx, p), best = min(scores.items(), key=lambda kv: (kv[1], kv[0]))
        chosen[sd.id] = {
            "context_length": ctx, "patch_size": p, "validation_crps": best,
            "grid": [{"context_length": c, "patch_size": q, "crps": v} for (c, q), v in sorted(scores.items())],
        }
    return chosen


def histogram_total(report: PackReport) -> int:
    return int(sum(report.histogram_counts))
