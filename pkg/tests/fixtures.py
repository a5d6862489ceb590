"""Fixed coefficient sets for the report-table golden files."""

import numpy as np

from deterrence.model import FitResult, ModelParams, ModelVariant

ROWS = {
    ModelVariant.PAST_EFFORT: [
        ("1mo/1mo", -9.285, 1.074, -0.165),
        ("3mo/3mo", -10.624, 0.685, -0.077),
        ("year/1mo", -9.287, 1.061, -0.217),
        ("year/3mo", -10.629, 0.676, -0.042),
        ("year/year", -8.559, 2.159, -0.306),
    ],
    ModelVariant.PAST_ILLEGAL: [
        ("1mo/1mo", -9.285, 1.066, -0.135),
        ("3mo/3mo", -10.632, 0.688, -0.097),
        ("year/1mo", -9.312, 1.085, -0.307),
        ("year/3mo", -10.647, 0.693, -0.186),
        ("year/year", -8.614, 2.291, -0.516),
    ],
    ModelVariant.PAST_ILLEGAL_NEIGHBORS: [
        ("3x3", -10.627, 0.687, -0.098, 0.399),
        ("5x5", -10.634, 0.689, -0.096, 0.383),
        ("7x7", -10.632, 0.689, -0.096, 0.562),
    ],
}

GOLDEN_NAMES = {
    ModelVariant.PAST_EFFORT: "table_past_effort",
    ModelVariant.PAST_ILLEGAL: "table_past_illegal",
    ModelVariant.PAST_ILLEGAL_NEIGHBORS: "table_neighbors",
}


def fixture_results(variant):
    out = []
    for label, mean_a, *coefs in ROWS[variant]:
        a = mean_a + np.array([-4.5, 4.5, 0.0])
        params = ModelParams(a, **dict(zip(variant.coefficients, coefs)))
        out.append(FitResult(params, variant, mean_a, float(a.std(ddof=1)), 0.0, [0.0], 0, {}, label))
    return out


def sim_to_records(sim, pass_km=0.8):
    """Waypoints and observations whose ingestion reproduces a simulated raster.

    Each cell-bin's effort becomes horizontal passes of at most ``pass_km``
    inside the cell, one patrol id per pass; each detection becomes one
    observation at the cell center.
    """
    from datetime import timedelta

    from deterrence.geogrid import ObservationRecord, Waypoint

    grid, binning = sim.effort.grid, sim.effort.binning
    size = grid.cell_size
    waypoints, observations = [], []
    for cell, t in zip(*np.nonzero(sim.effort.values)):
        c, r = grid.unflat(int(cell))
        start = binning.bin_start(int(t)) + timedelta(days=1)
        remaining = float(sim.effort.values[cell, t]) * 1000.0
        j = 0
        while remaining > 0:
            length = min(pass_km * 1000.0, remaining)
            x0 = grid.origin_x + c * size + 0.1 * size
            y = grid.origin_y + r * size + 0.05 * size + (j % 18) * 0.05 * size
            pid = f"c{cell}-b{t}-p{j}"
            waypoints.append(Waypoint(pid, start + timedelta(minutes=j), x0, y))
            waypoints.append(Waypoint(pid, start + timedelta(minutes=j, seconds=30), x0 + length, y))
            remaining -= length
            j += 1
    for cell, t in zip(*np.nonzero(sim.observations.values)):
        c, r = grid.unflat(int(cell))
        when = binning.bin_start(int(t)) + timedelta(days=2)
        for _ in range(int(sim.observations.values[cell, t])):
            observations.append(ObservationRecord(when, grid.origin_x + (c + 0.5) * size,
                                                  grid.origin_y + (r + 0.5) * size))
    return waypoints, observations
