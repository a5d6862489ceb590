"""Regression rows from rasters: binary targets, lagged covariates,
neighbor-window sums and z-scoring."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .geogrid import BIN_LENGTHS, EffortRaster, ObservationRaster

COVARIATES = ("curr_effort", "past_effort", "past_illegal", "past_neighbors")
PANEL_HEADER = ("cell_col", "cell_row", "bin_index", "y") + COVARIATES

# past-window / current-bin pairings and their lag multiple k
PAIRINGS = {
    "1mo/1mo": ("1mo", 1),
    "3mo/3mo": ("3mo", 1),
    "year/1mo": ("1mo", 12),
    "year/3mo": ("3mo", 4),
    "year/year": ("year", 1),
}


class PanelError(ValueError):
    pass


@dataclass(frozen=True)
class LagSpec:
    current_bin_length: int  # days
    past_window_length: int  # days

    def __post_init__(self):
        if self.current_bin_length <= 0:
            raise ValueError("current_bin_length must be > 0")
        if (self.past_window_length < self.current_bin_length
                or self.past_window_length % self.current_bin_length):
            raise ValueError("past_window_length must be a positive integer multiple "
                             "of current_bin_length")

    @property
    def k(self) -> int:
        return self.past_window_length // self.current_bin_length

    @classmethod
    def from_pairing(cls, label: str) -> "LagSpec":
        """``"year/3mo"`` and friends; a year of history is 12 months or 4 quarters."""
        try:
            current, k = PAIRINGS[label]
        except KeyError:
            raise ValueError(f"unknown pairing {label!r}; choose from {', '.join(PAIRINGS)}")
        days = BIN_LENGTHS[current]
        return cls(days, days * k)


@dataclass(frozen=True)
class NeighborSpec:
    window: int = 3

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError("neighbor window must be odd and >= 3")

    @property
    def label(self) -> str:
        return f"{self.window}x{self.window}"


@dataclass(frozen=True)
class PanelRow:
    cell: int
    bin: int
    y: int
    curr_effort: float
    past_effort: float
    past_illegal: float
    past_neighbors: float = 0.0


@dataclass
class NormalizationStats:
    mean: dict[str, float] = field(default_factory=dict)
    std: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {name: {"mean": self.mean[name], "std": self.std[name]} for name in self.mean}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls({k: float(v["mean"]) for k, v in d.items()},
                   {k: float(v["std"]) for k, v in d.items()})


@dataclass
class Panel:
    """Flat table of (cell, bin) rows; covariate columns are standardized.

    ``past_neighbors`` is all zeros when no neighbor window was requested;
    ``has_neighbors`` tells the two cases apart.
    """

    cell: np.ndarray
    bin: np.ndarray
    y: np.ndarray
    curr_effort: np.ndarray
    past_effort: np.ndarray
    past_illegal: np.ndarray
    past_neighbors: np.ndarray
    n_cells: int
    n_cols: int = 0
    has_neighbors: bool = False

    def __len__(self) -> int:
        return len(self.y)

    def row(self, i: int) -> PanelRow:
        return PanelRow(int(self.cell[i]), int(self.bin[i]), int(self.y[i]),
                        float(self.curr_effort[i]), float(self.past_effort[i]),
                        float(self.past_illegal[i]), float(self.past_neighbors[i]))

    def rows(self):
        for i in range(len(self)):
            yield self.row(i)

    def column(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def subset(self, mask) -> "Panel":
        return Panel(self.cell[mask], self.bin[mask], self.y[mask], self.curr_effort[mask],
                     self.past_effort[mask], self.past_illegal[mask], self.past_neighbors[mask],
                     self.n_cells, self.n_cols, self.has_neighbors)

    @classmethod
    def from_rows(cls, rows, n_cells: int, n_cols: int = 0, has_neighbors: bool = True) -> "Panel":
        rows = list(rows)
        col = lambda name, dt=float: np.array([getattr(r, name) for r in rows], dtype=dt)
        return cls(col("cell", np.int64), col("bin", np.int64), col("y", np.int64),
                   col("curr_effort"), col("past_effort"), col("past_illegal"),
                   col("past_neighbors"), n_cells, n_cols, has_neighbors)


def neighbor_sum(raster, spec: NeighborSpec) -> np.ndarray:
    """Window sums excluding the center cell, per bin; off-grid cells count 0.

    Accepts a raster object or a ``(n_rows, n_cols, n_bins)`` array and
    returns a float array of the same layout as the input values.
    """
    if hasattr(raster, "as_grid"):
        g = raster.as_grid().astype(float)
        flat = True
    else:
        g = np.asarray(raster, dtype=float)
        flat = False
    n_rows, n_cols = g.shape[:2]
    h = spec.window // 2
    padded = np.zeros((n_rows + 2 * h, n_cols + 2 * h) + g.shape[2:])
    padded[h:h + n_rows, h:h + n_cols] = g
    # 2-D inclusive prefix sums give each window total in O(1)
    cs = np.zeros((n_rows + 2 * h + 1, n_cols + 2 * h + 1) + g.shape[2:])
    cs[1:, 1:] = padded.cumsum(0).cumsum(1)
    w = spec.window
    total = cs[w:w + n_rows, w:w + n_cols] - cs[:n_rows, w:w + n_cols] \
        - cs[w:w + n_rows, :n_cols] + cs[:n_rows, :n_cols]
    out = total - g
    if flat:
        return out.reshape(n_rows * n_cols, -1)
    return out


def _lag_sum(values: np.ndarray, k: int) -> np.ndarray:
    """``out[:, t] = sum_{j=1..k} values[:, t-j]`` for t >= k (columns < k are 0)."""
    n = values.shape[1]
    out = np.zeros(values.shape)
    for j in range(1, k + 1):
        out[:, k:] += values[:, k - j:n - j]
    return out


def assemble_panel(
    effort: EffortRaster,
    obs: ObservationRaster,
    lags: LagSpec,
    neighbors: NeighborSpec | None = None,
    neighbor_source: str = "illegal",
) -> tuple[Panel, NormalizationStats]:
    """Build standardized regression rows for every cell and every bin t >= k.

    ``neighbor_source="effort"`` swaps the neighbor covariate to past patrol
    effort on neighboring cells instead of past observations.
    """
    if effort.grid != obs.grid or effort.binning != obs.binning:
        raise PanelError("effort and observation rasters must share grid and binning")
    if effort.binning.bin_length != lags.current_bin_length:
        raise PanelError(f"raster bin length {effort.binning.bin_length} d does not match "
                         f"the current bin length {lags.current_bin_length} d")
    if neighbor_source not in ("illegal", "effort"):
        raise PanelError(f"unknown neighbor source {neighbor_source!r}")
    k = lags.k
    n_cells, n_bins = effort.values.shape
    if k >= n_bins:
        raise PanelError(f"lag of {k} bins needs more than the {n_bins} bins available")

    e = effort.values.astype(float)
    o = obs.values.astype(float)
    raw = {
        "curr_effort": e,
        "past_effort": _lag_sum(e, k),
        "past_illegal": _lag_sum(o, k),
    }
    if neighbors is not None:
        src = obs if neighbor_source == "illegal" else effort
        raw["past_neighbors"] = _lag_sum(neighbor_sum(src, neighbors), k)

    # cell-major row order: (cell 0, bins k..), (cell 1, bins k..), ...
    sl = np.s_[:, k:]
    n_t = n_bins - k
    cell = np.repeat(np.arange(n_cells), n_t)
    bins = np.tile(np.arange(k, n_bins), n_cells)
    y = (obs.values[sl] >= 1).astype(np.int64).ravel()

    stats = NormalizationStats()
    cols = {}
    for name, arr in raw.items():
        x = arr[sl].ravel()
        mu = float(x.mean())
        sd = float(x.std())
        if not sd > 0:
            raise PanelError(f"covariate {name} has zero variance; cannot standardize")
        stats.mean[name] = mu
        stats.std[name] = sd
        cols[name] = (x - mu) / sd

    panel = Panel(
        cell=cell, bin=bins, y=y,
        curr_effort=cols["curr_effort"],
        past_effort=cols["past_effort"],
        past_illegal=cols["past_illegal"],
        past_neighbors=cols.get("past_neighbors", np.zeros(len(y))),
        n_cells=n_cells, n_cols=effort.grid.n_cols,
        has_neighbors=neighbors is not None,
    )
    return panel, stats


def destandardize(panel: Panel, stats: NormalizationStats) -> dict[str, np.ndarray]:
    """Raw covariate columns recovered from the standardized panel."""
    return {name: panel.column(name) * stats.std[name] + stats.mean[name] for name in stats.mean}


def write_panel(path, panel: Panel) -> None:
    n_cols = panel.n_cols or panel.n_cells
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PANEL_HEADER)
        for i in range(len(panel)):
            cell = int(panel.cell[i])
            nb = repr(float(panel.past_neighbors[i])) if panel.has_neighbors else ""
            w.writerow([cell % n_cols, cell // n_cols, int(panel.bin[i]), int(panel.y[i]),
                        repr(float(panel.curr_effort[i])), repr(float(panel.past_effort[i])),
                        repr(float(panel.past_illegal[i])), nb])


def read_panel(path, n_cols: int, n_cells: int) -> Panel:
    rows = []
    has_nb = True
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != PANEL_HEADER:
            raise PanelError(f"{path}: unexpected panel header {header}")
        for rec in reader:
            c, r, b, y = (int(v) for v in rec[:4])
            has_nb = has_nb and rec[7] != ""
            rows.append(PanelRow(r * n_cols + c, b, y, float(rec[4]), float(rec[5]),
                                 float(rec[6]), float(rec[7]) if rec[7] else 0.0))
    return Panel.from_rows(rows, n_cells, n_cols, has_neighbors=has_nb and bool(rows))


def write_stats(path, stats: NormalizationStats) -> None:
    with open(path, "w") as fh:
        json.dump(stats.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_stats(path) -> NormalizationStats:
    with open(path) as fh:
        return NormalizationStats.from_dict(json.load(fh))
