"""Waypoint and observation ingestion, track segmentation, and rasterization
of patrol effort (km) and observation counts onto a cell x bin grid.

Coordinates are planar meters. Cells are half-open squares
``[lo, hi)`` on both axes; cell ``(col, row)`` has flat index
``row * n_cols + col``.
"""

from __future__ import annotations

import csv
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Iterable, Sequence

import numpy as np

BIN_LENGTHS = {"1mo": 30, "3mo": 91, "year": 365}

CATEGORIES = ("snare", "cartridge", "traditional_weapon", "poacher_encounter", "other")

WAYPOINT_HEADER = ("patrol_id", "timestamp", "x_m", "y_m")
OBSERVATION_HEADER = ("timestamp", "x_m", "y_m", "category")
RASTER_HEADER = ("cell_col", "cell_row", "bin_index", "value")


@dataclass(frozen=True)
class GridSpec:
    origin_x: float
    origin_y: float
    n_cols: int
    n_rows: int
    cell_size: float = 1000.0

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValueError("cell_size must be > 0")
        if self.n_cols < 1 or self.n_rows < 1:
            raise ValueError("n_cols and n_rows must be >= 1")

    @property
    def n_cells(self) -> int:
        return self.n_cols * self.n_rows

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        s = self.cell_size
        return (self.origin_x, self.origin_y,
                self.origin_x + self.n_cols * s, self.origin_y + self.n_rows * s)

    def cell_of(self, x: float, y: float) -> tuple[int, int] | None:
        """Cell containing a point under the half-open convention, or None."""
        c = math.floor((x - self.origin_x) / self.cell_size)
        r = math.floor((y - self.origin_y) / self.cell_size)
        if 0 <= c < self.n_cols and 0 <= r < self.n_rows:
            return c, r
        return None

    def flat(self, col: int, row: int) -> int:
        return row * self.n_cols + col

    def unflat(self, cell: int) -> tuple[int, int]:
        return cell % self.n_cols, cell // self.n_cols


@dataclass(frozen=True)
class TimeBinning:
    epoch: datetime
    bin_length: int  # days
    n_bins: int

    def __post_init__(self):
        if self.bin_length not in BIN_LENGTHS.values():
            raise ValueError(f"bin_length must be one of {sorted(BIN_LENGTHS.values())} days")
        if self.n_bins < 1:
            raise ValueError("n_bins must be >= 1")
        if self.epoch.tzinfo is None:
            object.__setattr__(self, "epoch", self.epoch.replace(tzinfo=timezone.utc))

    def bin_of(self, ts: datetime) -> int | None:
        b = (ts - self.epoch) // timedelta(days=self.bin_length)
        return b if 0 <= b < self.n_bins else None

    def bin_start(self, b: int) -> datetime:
        return self.epoch + timedelta(days=self.bin_length * b)


@dataclass(frozen=True)
class Waypoint:
    patrol_id: str
    timestamp: datetime
    x: float
    y: float


@dataclass(frozen=True)
class PatrolTrack:
    patrol_id: str
    waypoints: tuple[Waypoint, ...]


@dataclass(frozen=True)
class ObservationRecord:
    timestamp: datetime
    x: float
    y: float
    category: str = "snare"

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown observation category {self.category!r}")


@dataclass
class IngestReport:
    """Counts of records kept and dropped, keyed by stage and reason."""

    kept: Counter = field(default_factory=Counter)
    dropped: Counter = field(default_factory=Counter)

    def drop(self, reason: str, n: int = 1) -> None:
        self.dropped[reason] += n

    def keep(self, what: str, n: int = 1) -> None:
        self.kept[what] += n

    def to_text(self) -> str:
        lines = ["ingest report", "kept:"]
        lines += [f"  {k}: {v}" for k, v in sorted(self.kept.items())] or ["  (none)"]
        lines.append("dropped:")
        lines += [f"  {k}: {v}" for k, v in sorted(self.dropped.items())] or ["  (none)"]
        return "\n".join(lines) + "\n"


@dataclass
class _Raster:
    grid: GridSpec
    binning: TimeBinning
    values: np.ndarray  # (n_cells, n_bins)

    def __post_init__(self):
        shape = (self.grid.n_cells, self.binning.n_bins)
        if self.values.shape != shape:
            raise ValueError(f"raster values have shape {self.values.shape}, expected {shape}")
        if np.any(self.values < 0):
            raise ValueError("raster values must be nonnegative")

    def as_grid(self) -> np.ndarray:
        """View as (n_rows, n_cols, n_bins)."""
        return self.values.reshape(self.grid.n_rows, self.grid.n_cols, self.binning.n_bins)

    @property
    def total(self):
        return self.values.sum()


class EffortRaster(_Raster):
    """Kilometers patrolled per (cell, bin)."""


class ObservationRaster(_Raster):
    """Counts of illegal-activity observations per (cell, bin)."""


# --------------------------------------------------------------------------
# parsing


def parse_timestamp(text: str) -> datetime:
    """Parse an ISO-8601 timestamp; naive values are taken as UTC."""
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _finite_float(text: str) -> float:
    v = float(text)
    if not math.isfinite(v):
        raise ValueError("non-finite")
    return v


def _check_header(reader, expected, path):
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != expected:
        raise ValueError(f"{path}: expected header {','.join(expected)}, got {header}")


def read_waypoints(path, report: IngestReport | None = None) -> list[Waypoint]:
    report = report if report is not None else IngestReport()
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        _check_header(reader, WAYPOINT_HEADER, path)
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4 or not row[0].strip():
                report.drop("waypoint: malformed row")
                continue
            try:
                ts = parse_timestamp(row[1])
            except ValueError:
                report.drop("waypoint: malformed timestamp")
                continue
            try:
                x, y = _finite_float(row[2]), _finite_float(row[3])
            except ValueError:
                report.drop("waypoint: non-finite coordinate")
                continue
            out.append(Waypoint(row[0].strip(), ts, x, y))
    report.keep("waypoints read", len(out))
    return out


def read_observations(path, report: IngestReport | None = None) -> list[ObservationRecord]:
    report = report if report is not None else IngestReport()
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        _check_header(reader, OBSERVATION_HEADER, path)
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                report.drop("observation: malformed row")
                continue
            try:
                ts = parse_timestamp(row[0])
            except ValueError:
                report.drop("observation: malformed timestamp")
                continue
            try:
                x, y = _finite_float(row[1]), _finite_float(row[2])
            except ValueError:
                report.drop("observation: non-finite coordinate")
                continue
            cat = row[3].strip()
            if cat not in CATEGORIES:
                report.drop("observation: unknown category")
                continue
            out.append(ObservationRecord(ts, x, y, cat))
    report.keep("observations read", len(out))
    return out


def write_waypoints(path, waypoints: Iterable[Waypoint]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(WAYPOINT_HEADER)
        for p in waypoints:
            w.writerow([p.patrol_id, format_timestamp(p.timestamp), repr(p.x), repr(p.y)])


def write_observations(path, observations: Iterable[ObservationRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OBSERVATION_HEADER)
        for o in observations:
            w.writerow([format_timestamp(o.timestamp), repr(o.x), repr(o.y), o.category])


# --------------------------------------------------------------------------
# tracks


def segment_tracks(
    waypoints: Sequence[Waypoint],
    max_time_gap: timedelta = timedelta(minutes=30),
    max_dist_gap: float = 5000.0,
    report: IngestReport | None = None,
) -> list[PatrolTrack]:
    """Group waypoints by patrol, sort by time and split on gap violations.

    Records with non-finite coordinates are rejected into ``report``.
    Groups left with a single waypoint carry no segments and are not emitted.
    Tracks come back in canonical order (patrol_id, start time).
    """
    report = report if report is not None else IngestReport()
    groups: dict[str, list[Waypoint]] = defaultdict(list)
    for p in waypoints:
        if not (isinstance(p.timestamp, datetime) and math.isfinite(p.x) and math.isfinite(p.y)):
            report.drop("waypoint: rejected record")
            continue
        groups[p.patrol_id].append(p)

    tracks = []
    for pid in sorted(groups):
        pts = sorted(groups[pid], key=lambda p: (p.timestamp, p.x, p.y))
        current = [pts[0]]
        for prev, nxt in zip(pts, pts[1:]):
            dt = nxt.timestamp - prev.timestamp
            dist = math.hypot(nxt.x - prev.x, nxt.y - prev.y)
            if dt > max_time_gap or dist > max_dist_gap:
                tracks.append(current)
                current = [nxt]
            else:
                current.append(nxt)
        tracks.append(current)

    out = []
    for pts in tracks:
        if len(pts) >= 2:
            out.append(PatrolTrack(pts[0].patrol_id, tuple(pts)))
            report.keep("waypoints in tracks", len(pts))
        else:
            report.drop("waypoint: isolated (no segment)")
    report.keep("tracks", len(out))
    return out


# --------------------------------------------------------------------------
# clipping and rasterization


def clip_segment_to_cells(p0, p1, grid: GridSpec) -> list[tuple[tuple[int, int], float]]:
    """Split segment ``p0 -> p1`` into per-cell lengths (meters).

    The segment is parametrized as ``p0 + t (p1 - p0)``; every crossing of a
    grid line inside the grid box is a breakpoint, and the piece between two
    breakpoints belongs to the cell containing its midpoint. Pieces outside
    the grid are discarded.
    """
    x0, y0 = float(p0[0]), float(p0[1])
    x1, y1 = float(p1[0]), float(p1[1])
    dx, dy = x1 - x0, y1 - y0
    length = math.hypot(dx, dy)
    if length == 0.0:
        return []
    xmin, ymin, xmax, ymax = grid.bounds

    # Liang-Barsky against the closed grid box
    t_lo, t_hi = 0.0, 1.0
    for p, q in ((-dx, x0 - xmin), (dx, xmax - x0), (-dy, y0 - ymin), (dy, ymax - y0)):
        if p == 0.0:
            if q < 0.0:
                return []
        else:
            r = q / p
            if p < 0.0:
                t_lo = max(t_lo, r)
            else:
                t_hi = min(t_hi, r)
    if t_lo >= t_hi:
        return []

    s = grid.cell_size
    ts = [t_lo, t_hi]
    for d, a0, lo in ((dx, x0, xmin), (dy, y0, ymin)):
        if d == 0.0:
            continue
        ta, tb = sorted(((a0 + t_lo * d - lo) / s, (a0 + t_hi * d - lo) / s))
        for k in range(math.ceil(ta), math.floor(tb) + 1):
            t = (lo + k * s - a0) / d
            if t_lo < t < t_hi:
                ts.append(t)
    ts.sort()

    pieces: list[tuple[tuple[int, int], float]] = []
    for ta, tb in zip(ts, ts[1:]):
        if tb <= ta:
            continue
        tm = 0.5 * (ta + tb)
        cell = grid.cell_of(x0 + tm * dx, y0 + tm * dy)
        if cell is None:
            continue
        piece = (tb - ta) * length
        if pieces and pieces[-1][0] == cell:
            pieces[-1] = (cell, pieces[-1][1] + piece)
        else:
            pieces.append((cell, piece))
    return pieces


def rasterize_effort(
    tracks: Sequence[PatrolTrack],
    grid: GridSpec,
    binning: TimeBinning,
    report: IngestReport | None = None,
) -> EffortRaster:
    """Accumulate clipped segment lengths (km) into the start timestamp's bin."""
    report = report if report is not None else IngestReport()
    values = np.zeros((grid.n_cells, binning.n_bins))
    ordered = sorted(tracks, key=lambda t: (t.patrol_id, t.waypoints[0].timestamp))
    for track in ordered:
        for a, b in zip(track.waypoints, track.waypoints[1:]):
            bin_ = binning.bin_of(a.timestamp)
            if bin_ is None:
                report.drop("segment: start outside time range")
                continue
            pieces = clip_segment_to_cells((a.x, a.y), (b.x, b.y), grid)
            if not pieces:
                if (a.x, a.y) != (b.x, b.y):
                    report.drop("segment: outside grid")
                continue
            for (c, r), meters in pieces:
                values[grid.flat(c, r), bin_] += meters / 1000.0
            report.keep("segments rasterized")
    return EffortRaster(grid, binning, values)


def bin_observations(
    obs: Sequence[ObservationRecord],
    grid: GridSpec,
    binning: TimeBinning,
    report: IngestReport | None = None,
) -> ObservationRaster:
    report = report if report is not None else IngestReport()
    values = np.zeros((grid.n_cells, binning.n_bins), dtype=np.int64)
    for o in obs:
        cell = grid.cell_of(o.x, o.y)
        if cell is None:
            report.drop("observation: outside grid")
            continue
        bin_ = binning.bin_of(o.timestamp)
        if bin_ is None:
            report.drop("observation: outside time range")
            continue
        values[grid.flat(*cell), bin_] += 1
        report.keep("observations binned")
    return ObservationRaster(grid, binning, values)


# --------------------------------------------------------------------------
# raster files


def write_raster(path, raster: _Raster) -> None:
    """One row per nonzero entry, ordered by (cell_row, cell_col, bin)."""
    integer = np.issubdtype(raster.values.dtype, np.integer)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RASTER_HEADER)
        for cell, b in zip(*np.nonzero(raster.values)):
            c, r = raster.grid.unflat(int(cell))
            v = raster.values[cell, b]
            w.writerow([c, r, int(b), int(v) if integer else repr(float(v))])


def read_raster(path, grid: GridSpec, binning: TimeBinning, kind=EffortRaster) -> _Raster:
    dtype = np.int64 if kind is ObservationRaster else float
    values = np.zeros((grid.n_cells, binning.n_bins), dtype=dtype)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        _check_header(reader, RASTER_HEADER, path)
        for row in reader:
            if not row:
                continue
            c, r, b = int(row[0]), int(row[1]), int(row[2])
            if not (0 <= c < grid.n_cols and 0 <= r < grid.n_rows and 0 <= b < binning.n_bins):
                raise ValueError(f"{path}: entry ({c}, {r}, {b}) outside the grid")
            values[grid.flat(c, r), b] = int(row[3]) if dtype is np.int64 else float(row[3])
    return kind(grid, binning, values)


def grid_to_dict(grid: GridSpec, binning: TimeBinning) -> dict:
    return {
        "origin_x": grid.origin_x,
        "origin_y": grid.origin_y,
        "cell_size": grid.cell_size,
        "n_cols": grid.n_cols,
        "n_rows": grid.n_rows,
        "epoch": format_timestamp(binning.epoch),
        "bin_length_days": binning.bin_length,
        "n_bins": binning.n_bins,
    }


def grid_from_dict(d: dict) -> tuple[GridSpec, TimeBinning]:
    grid = GridSpec(float(d["origin_x"]), float(d["origin_y"]), int(d["n_cols"]),
                    int(d["n_rows"]), float(d.get("cell_size", 1000.0)))
    binning = TimeBinning(parse_timestamp(d["epoch"]), int(d["bin_length_days"]), int(d["n_bins"]))
    return grid, binning

