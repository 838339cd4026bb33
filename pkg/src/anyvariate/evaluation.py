"""Archive-level evaluation of a forecaster against seasonal naive."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .archive import Archive
from .metrics import (
    EvalResult,
    Forecaster,
    MetricConfig,
    aggregate_normalized_mae,
    forecast_windows,
    score_windows,
    seasonal_naive,
    seasonality,
)
from .patching import Frequency

# (prediction length, rolling windows) per frequency
DEFAULT_PROTOCOL = {
    Frequency.HOURLY: (24, 7),
    Frequency.DAILY: (14, 4),
    Frequency.MONTHLY: (12, 2),
    Frequency.WEEKLY: (8, 2),
    Frequency.QUARTERLY: (8, 1),
    Frequency.YEARLY: (6, 1),
    Frequency.MINUTE: (60, 4),
    Frequency.SECOND: (60, 4),
}


@dataclass
class ArchiveReport:
    model: dict[str, EvalResult]
    naive: dict[str, EvalResult]
    normalized_mae: float
    plot_rows: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "datasets": {
                k: {"model": self.model[k].to_dict(), "seasonal_naive": self.naive[k].to_dict()} for k in self.model
            },
            "aggregate": {
                "normalized_mae": self.normalized_mae,
                "mean_crps_model": float(np.mean([r.CRPS for r in self.model.values()])),
                "mean_crps_naive": float(np.mean([r.CRPS for r in self.naive.values()])),
            },
        }

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=2))
        if self.plot_rows:
            with open(out / "plot_data.csv", "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=list(self.plot_rows[0]))
                w.writeheader()
                w.writerows(self.plot_rows)
        return out / "report.json"


def protocol_for(frequency, protocol=None) -> tuple[int, int]:
    table = dict(DEFAULT_PROTOCOL)
    table.update(protocol or {})
    return table[Frequency(frequency)]


def evaluate_archive(forecaster: Forecaster, archive: Archive, protocol=None, min_context: int = 1,
                     config: MetricConfig | None = None) -> ArchiveReport:
    model_res, naive_res, rows = {}, {}, []
    for sd in archive.sub_datasets:
        h, r = protocol_for(sd.frequency, protocol)
        first = sd.series[0]
        m = seasonality(first.frequency, first.multiplier)
        ctx = max(min_context, m)
        wins = forecast_windows(forecaster, sd.series, h, r, ctx, config)
        model_res[sd.id] = score_windows(wins, sd.series, h, r, m, sd.id, config)
        naive_wins = forecast_windows(seasonal_naive(m), sd.series, h, r, ctx, config)
        naive_res[sd.id] = score_windows(naive_wins, sd.series, h, r, m, sd.id, config)
        for w in wins:
            for i in range(len(w.actual)):
                rows.append({
                    "dataset": sd.id, "series": w.series_id, "variate": w.variate, "step": w.start + i,
                    "actual": float(w.actual[i]), "median": float(w.median[i]),
                    "lower": float(w.lower[i]), "upper": float(w.upper[i]),
                })
    agg = aggregate_normalized_mae([model_res[k].MAE for k in model_res], [naive_res[k].MAE for k in model_res])
    return ArchiveReport(model_res, naive_res, agg, rows)
