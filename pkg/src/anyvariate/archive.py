"""Archive of sub-datasets, plus the CSV/manifest on-disk layout.

Layout::

    <archive>/<sub_dataset_id>/manifest.json
    <archive>/<sub_dataset_id>/<series_id>.csv

Each CSV has a header ``timestamp,<variate1>,<variate2>,...`` with ISO-8601
timestamps; an empty cell is a missing value. ``manifest.json`` holds
``{"id", "frequency", "multiplier", "total_obs", "series": [...]}`` where each
series entry is ``{"id", "file", "frequency", "multiplier", "start", "roles":
{name: role}, "num_steps"}``. Files written here use ISO timestamps with a
time part and ``repr`` floats, so ingest -> export reproduces such files
byte for byte.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .patching import ConfigError, DataError, Frequency, Role, TimeSeries, parse_frequency


@dataclass
class SubDataset:
    id: str
    series: list[TimeSeries]
    total_obs: int = field(default=-1)

    def __post_init__(self):
        actual = sum(s.num_steps for s in self.series)
        if self.total_obs < 0:
            self.total_obs = actual

    def audit(self) -> None:
        actual = sum(s.num_steps for s in self.series)
        if actual != self.total_obs:
            raise DataError(f"{self.id}: recorded total_obs {self.total_obs} != recomputed {actual}")

    @property
    def is_univariate(self) -> bool:
        return all(s.num_variates == 1 for s in self.series)

    @property
    def frequency(self) -> Frequency:
        return self.series[0].frequency


@dataclass
class Archive:
    sub_datasets: list[SubDataset]

    def audit(self) -> None:
        seen: dict[int, str] = {}
        for sd in self.sub_datasets:
            sd.audit()
            for s in sd.series:
                if id(s) in seen:
                    raise DataError(f"series {s.id} belongs to both {seen[id(s)]} and {sd.id}")
                seen[id(s)] = sd.id

    @property
    def sizes(self) -> np.ndarray:
        return np.array([sd.total_obs for sd in self.sub_datasets], dtype=np.float64)

    def __len__(self) -> int:
        return len(self.sub_datasets)


# ---------------------------------------------------------------------------
# timestamps

_FIXED_STEP = {
    Frequency.WEEKLY: dt.timedelta(weeks=1),
    Frequency.DAILY: dt.timedelta(days=1),
    Frequency.HOURLY: dt.timedelta(hours=1),
    Frequency.MINUTE: dt.timedelta(minutes=1),
    Frequency.SECOND: dt.timedelta(seconds=1),
}
_MONTH_STEP = {Frequency.YEARLY: 12, Frequency.QUARTERLY: 3, Frequency.MONTHLY: 1}


def _add_months(t: dt.datetime, months: int) -> dt.datetime:
    m = t.month - 1 + months
    return t.replace(year=t.year + m // 12, month=m % 12 + 1)


def timestamps(start: dt.datetime, n: int, frequency, multiplier: int = 1) -> list[dt.datetime]:
    freq = parse_frequency(frequency)
    if freq in _MONTH_STEP:
        return [_add_months(start, i * _MONTH_STEP[freq] * multiplier) for i in range(n)]
    step = _FIXED_STEP[freq] * multiplier
    return [start + i * step for i in range(n)]


def _check_spacing(stamps: list[dt.datetime], freq: Frequency, multiplier: int, path) -> None:
    for i in range(1, len(stamps)):
        prev, cur = stamps[i - 1], stamps[i]
        if cur == prev:
            raise DataError(f"{path}: duplicate timestamp {cur.isoformat()} (data row {i + 1})")
        if cur < prev:
            raise DataError(f"{path}: timestamps not increasing at data row {i + 1}")
        if freq in _MONTH_STEP:
            months = (cur.year - prev.year) * 12 + cur.month - prev.month
            ok = months == _MONTH_STEP[freq] * multiplier
        else:
            ok = cur - prev == _FIXED_STEP[freq] * multiplier
        if not ok:
            raise DataError(f"{path}: irregular spacing between data rows {i} and {i + 1}")


# ---------------------------------------------------------------------------
# CSV


def read_csv(path, frequency, multiplier: int = 1):
    """Parse a wide CSV into ``(names, timestamps, values[num_variates, T])``."""
    path = Path(path)
    freq = parse_frequency(frequency)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = rows[0]
    if len(header) < 2 or header[0].strip().lower() != "timestamp":
        raise DataError(f"{path}:1: header must be 'timestamp,<variate>,...'")
    names = [h.strip() for h in header[1:]]
    if len(set(names)) != len(names):
        raise DataError(f"{path}:1: duplicate variate names")
    if len(rows) == 1:
        raise DataError(f"{path}: no data rows")
    stamps, values = [], np.empty((len(rows) - 1, len(names)))
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            stamps.append(dt.datetime.fromisoformat(row[0].strip()))
        except ValueError:
            raise DataError(f"{path}:{lineno}: bad timestamp {row[0]!r}") from None
        for j, cell in enumerate(row[1:]):
            cell = cell.strip()
            if cell == "":
                values[lineno - 2, j] = np.nan
                continue
            try:
                values[lineno - 2, j] = float(cell)
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad value {cell!r} in column {names[j]!r}") from None
    _check_spacing(stamps, freq, multiplier, path)
    return names, stamps, values.T.copy()


def write_csv(path, names, stamps, values) -> None:
    values = np.atleast_2d(values)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", *names])
        for i, t in enumerate(stamps):
            w.writerow([t.isoformat()] + ["" if math.isnan(v) else repr(float(v)) for v in values[:, i]])


# ---------------------------------------------------------------------------
# archive directories

DEFAULT_START = dt.datetime(2000, 1, 1)


def _start(s: TimeSeries) -> dt.datetime:
    return dt.datetime.fromisoformat(s.start) if s.start else DEFAULT_START


def save_subdataset(root, sd: SubDataset) -> Path:
    folder = Path(root) / sd.id
    folder.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, s in enumerate(sd.series):
        sid = s.id or f"series_{i}"
        names = s.names or [f"v{j}" for j in range(s.num_variates)]
        fname = f"{sid}.csv"
        write_csv(folder / fname, names, timestamps(_start(s), s.num_steps, s.frequency, s.multiplier), s.values)
        entries.append({
            "id": sid, "file": fname, "frequency": s.frequency.value, "multiplier": s.multiplier,
            "start": _start(s).isoformat(),
            "roles": {n: r.value for n, r in zip(names, s.roles)}, "num_steps": s.num_steps,
        })
    manifest = {
        "id": sd.id, "frequency": sd.frequency.value, "multiplier": sd.series[0].multiplier,
        "total_obs": sd.total_obs, "series": entries,
    }
    (folder / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return folder


def load_subdataset(folder) -> SubDataset:
    folder = Path(folder)
    mpath = folder / "manifest.json"
    if not mpath.exists():
        raise DataError(f"{folder}: missing manifest.json")
    manifest = json.loads(mpath.read_text())
    series = []
    for entry in manifest["series"]:
        names, stamps, values = read_csv(folder / entry["file"], entry["frequency"], entry.get("multiplier", 1))
        roles_map = entry["roles"]
        if set(roles_map) != set(names):
            raise DataError(f"{folder / entry['file']}: manifest roles {sorted(roles_map)} != columns {names}")
        if values.shape[1] != entry["num_steps"]:
            raise DataError(f"{folder / entry['file']}: {values.shape[1]} steps, manifest says {entry['num_steps']}")
        series.append(TimeSeries(values, [roles_map[n] for n in names], entry["frequency"], entry["id"],
                                 entry.get("multiplier", 1), names, stamps[0].isoformat()))
    sd = SubDataset(manifest["id"], series, manifest.get("total_obs", -1))
    sd.audit()
    return sd


def load_archive(root) -> Archive:
    root = Path(root)
    if not root.is_dir():
        raise ConfigError(f"archive directory {root} does not exist")
    folders = sorted(p for p in root.iterdir() if (p / "manifest.json").exists())
    if not folders:
        raise ConfigError(f"{root}: no sub-datasets found")
    archive = Archive([load_subdataset(f) for f in folders])
    archive.audit()
    return archive


def save_archive(root, archive: Archive) -> Path:
    root = Path(root)
    for sd in archive.sub_datasets:
        save_subdataset(root, sd)
    return root


def ingest(csv_paths, out_root, dataset_id: str, frequency, roles=None, multiplier: int = 1) -> SubDataset:
    """Validate CSVs and write them as one sub-dataset (all or nothing).

    ``roles`` maps column names to roles; unnamed columns default to target.
    """
    freq = parse_frequency(frequency)
    roles = {k: Role(v) for k, v in (roles or {}).items()}
    series = []
    for path in csv_paths:
        path = Path(path)
        names, stamps, values = read_csv(path, freq, multiplier)
        unknown = set(roles) - set(names)
        if unknown and len(csv_paths) == 1:
            raise ConfigError(f"{path}: roles given for unknown columns {sorted(unknown)}")
        series.append(TimeSeries(values, [roles.get(n, Role.TARGET) for n in names], freq, path.stem,
                                 multiplier, names, stamps[0].isoformat()))
    if not series:
        raise ConfigError("no input files")
    sd = SubDataset(dataset_id, series)
    save_subdataset(out_root, sd)
    return sd


def export(sd: SubDataset, out_dir) -> list[Path]:
    """Write every series of ``sd`` back out as CSV files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, s in enumerate(sd.series):
        names = s.names or [f"v{j}" for j in range(s.num_variates)]
        p = out_dir / f"{s.id or f'series_{i}'}.csv"
        write_csv(p, names, timestamps(_start(s), s.num_steps, s.frequency, s.multiplier), s.values)
        paths.append(p)
    return paths
