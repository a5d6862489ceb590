"""Synthetic parks with known ground truth.

Bins are rolled forward one at a time: patrol effort comes from a policy
that may react to earlier detections, realized effort jitters around the
plan, and detections are Bernoulli draws from the variant's logistic model
with covariates standardized against declared means/stds.

Random streams
--------------
Every draw comes from ``numpy.random.Generator(PCG64(SeedSequence(seed,
spawn_key=(stream, bin))))``. Within a bin each stream yields one value per
cell in a single vectorized call, element ``i`` belonging to cell ``i``, so
results depend only on (seed, stream, bin, cell) and never on evaluation
order. Stream ids are fixed:

    0  attractiveness (bin key 0)
    1  patrol plan (RANDOM policy)
    2  effort jitter
    3  detection uniforms
    4  synthetic features (bin key 0)
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone

import numpy as np
from scipy.special import expit, roots_genlaguerre, softmax

from .geogrid import EffortRaster, GridSpec, ObservationRaster, TimeBinning
from .model import ModelVariant
from .panel import NeighborSpec, neighbor_sum

STREAM_ATTRACTIVENESS = 0
STREAM_PLAN = 1
STREAM_JITTER = 2
STREAM_DETECTION = 3
STREAM_FEATURES = 4

DEFAULT_EPOCH = datetime(2010, 1, 1, tzinfo=timezone.utc)


class PatrolPolicy(str, enum.Enum):
    UNIFORM = "uniform"
    RANDOM = "random"
    REACTIVE = "reactive"


def stream(seed: int, stream_id: int, bin_: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream_id, bin_))))


@dataclass(frozen=True)
class SimConfig:
    n_cols: int = 20
    n_rows: int = 20
    n_bins: int = 48
    bin_length: int = 91
    past_bins: int = 1
    mean_a: float = -5.0
    std_a: float = 1.0
    beta: float = 1.0
    gamma: float = -0.2
    rho: float = 0.0
    eta: float = 0.0
    variant: ModelVariant = ModelVariant.PAST_EFFORT
    policy: PatrolPolicy = PatrolPolicy.UNIFORM
    effort_scale: float = 2.0
    # coefficient of variation of realized effort around the plan (gamma noise)
    effort_cv: float = 1.0
    neighbor_window: int = 3
    seed: int = 0
    # declared covariate means/stds; None derives them from the config
    covariate_stats: dict | None = None

    def __post_init__(self):
        object.__setattr__(self, "variant", ModelVariant.parse(self.variant))
        object.__setattr__(self, "policy", PatrolPolicy(str(getattr(self.policy, "value", self.policy)).lower()))
        if min(self.n_cols, self.n_rows, self.n_bins, self.past_bins) < 1:
            raise ValueError("grid dims, n_bins and past_bins must be positive")
        if self.std_a < 0:
            raise ValueError("std_a must be >= 0")
        if self.effort_scale < 0:
            raise ValueError("effort_scale must be >= 0")
        if self.effort_cv < 0:
            raise ValueError("effort_cv must be >= 0")
        NeighborSpec(self.neighbor_window)
        active = set(self.variant.coefficients)
        for name in ("gamma", "rho", "eta"):
            if name not in active and getattr(self, name) != 0.0:
                raise ValueError(f"variant {self.variant.value} has no {name} term "
                                 f"but {name} = {getattr(self, name)}")

    @property
    def n_cells(self) -> int:
        return self.n_cols * self.n_rows

    def grid(self) -> GridSpec:
        return GridSpec(0.0, 0.0, self.n_cols, self.n_rows)

    def binning(self) -> TimeBinning:
        return TimeBinning(DEFAULT_EPOCH, self.bin_length, self.n_bins)

    def declared_stats(self) -> dict:
        if self.covariate_stats is not None:
            return {k: dict(v) for k, v in self.covariate_stats.items()}
        return default_covariate_stats(self)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        d["policy"] = self.policy.value
        d["covariate_stats"] = self.declared_stats()
        return d

    @classmethod
    def from_mapping(cls, m: dict) -> "SimConfig":
        """Build from string or typed values, ignoring unknown keys."""
        kw = {}
        for f in fields(cls):
            if f.name not in m or m[f.name] is None:
                continue
            v = m[f.name]
            if f.name in ("variant", "policy", "covariate_stats"):
                kw[f.name] = json.loads(v) if f.name == "covariate_stats" and isinstance(v, str) else v
            elif f.type in ("int",):
                kw[f.name] = int(v)
            else:
                kw[f.name] = float(v)
        return cls(**kw)


def _expected_neighbor_count(n_cols: int, n_rows: int, window: int) -> float:
    h = window // 2

    def span(n):
        idx = np.arange(n)
        return np.minimum(idx + h, n - 1) - np.maximum(idx - h, 0) + 1

    return float(np.outer(span(n_rows), span(n_cols)).mean() - 1.0)


def _effort_nodes(cfg: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature nodes/weights for realized effort in units of effort_scale."""
    cv = cfg.effort_cv
    if cv > 0:
        shape = 1.0 / cv ** 2
        x, w = roots_genlaguerre(48, shape - 1.0)
        g, wg = x / shape, w / w.sum()
    else:
        g, wg = np.ones(1), np.ones(1)
    if cfg.policy is PatrolPolicy.RANDOM:
        x, w = roots_genlaguerre(48, 0.0)
        g, wg = np.outer(x, g).ravel(), np.outer(w / w.sum(), wg).ravel()
    return g, wg


def _mean_detection_rate(cfg: SimConfig, e_sd: float) -> float:
    """E[logistic(linear predictor)] at the stationary covariate law.

    Attractiveness and the past terms are treated as normal; current effort
    keeps its skewed (gamma, or exponential times gamma) law, which matters
    once beta is of order one.
    """
    var = cfg.std_a ** 2 + cfg.gamma ** 2 + cfg.rho ** 2 + cfg.eta ** 2
    h, wh = np.polynomial.hermite_e.hermegauss(64)
    wh = wh / wh.sum()
    g, wg = _effort_nodes(cfg)
    z_e = (cfg.effort_scale * g - cfg.effort_scale) / e_sd if e_sd > 0 else np.zeros_like(g)
    logit = cfg.mean_a + math.sqrt(var) * h[:, None] + cfg.beta * z_e[None, :]
    return float(wh @ expit(logit) @ wg)


def default_covariate_stats(cfg: SimConfig) -> dict:
    """Analytic covariate moments implied by the policy and jitter.

    REACTIVE plans average ``effort_scale`` per cell and are treated like
    UNIFORM here; observation moments assume independent Bernoulli draws at
    the mean detection rate.
    """
    s, cv, k = cfg.effort_scale, cfg.effort_cv, cfg.past_bins
    if cfg.policy is PatrolPolicy.RANDOM:
        # plan ~ Exp(s) times jitter with E=1, Var=cv^2
        e_sd = s * math.sqrt(1.0 + 2.0 * cv * cv)
    else:
        e_sd = s * cv
    p = _mean_detection_rate(cfg, e_sd)
    m = _expected_neighbor_count(cfg.n_cols, cfg.n_rows, cfg.neighbor_window)
    return {
        "curr_effort": {"mean": s, "std": e_sd},
        "past_effort": {"mean": k * s, "std": math.sqrt(k) * e_sd},
        "past_illegal": {"mean": k * p, "std": math.sqrt(k * p * (1 - p))},
        "past_neighbors": {"mean": k * m * p, "std": math.sqrt(k * m * p * (1 - p))},
    }


def patrol_policy_effort(history, policy: PatrolPolicy, effort_scale: float,
                         rng: np.random.Generator | None = None, n_cells: int | None = None) -> np.ndarray:
    """Planned km per cell for the next bin.

    ``history`` is an (n_cells, n_past_bins) array of detection counts; only
    its last column matters, and only to the REACTIVE policy.
    """
    policy = PatrolPolicy(getattr(policy, "value", policy))
    history = np.asarray(history, dtype=float)
    if n_cells is None:
        n_cells = history.shape[0]
    if policy is PatrolPolicy.UNIFORM:
        return np.full(n_cells, float(effort_scale))
    if policy is PatrolPolicy.RANDOM:
        if rng is None:
            raise ValueError("the RANDOM policy needs an rng")
        return rng.exponential(effort_scale, size=n_cells)
    last = history[:, -1] if history.ndim == 2 and history.shape[1] else np.zeros(n_cells)
    return n_cells * effort_scale * softmax(last)


@dataclass
class SimOutput:
    config: SimConfig
    effort: EffortRaster
    observations: ObservationRaster
    attractiveness: np.ndarray
    # standardized values used by the generator, each (n_cells, n_bins)
    covariates: dict = field(default_factory=dict)
    covariate_stats: dict = field(default_factory=dict)

    def ground_truth(self) -> dict:
        cfg = self.config
        return {
            "config": cfg.to_dict(),
            "coefficients": {c: getattr(cfg, c) for c in cfg.variant.coefficients},
            "attractiveness": [float(v) for v in self.attractiveness],
            "mean_a": float(self.attractiveness.mean()),
            "std_a": float(self.attractiveness.std(ddof=1)) if len(self.attractiveness) > 1 else 0.0,
            "covariate_stats": self.covariate_stats,
            "detection_rate": float((self.observations.values >= 1).mean()),
        }


def simulate(config: SimConfig) -> SimOutput:
    cfg = config
    n, T, k = cfg.n_cells, cfg.n_bins, cfg.past_bins
    stats = cfg.declared_stats()
    needed = {"curr_effort"} | {
        {"gamma": "past_effort", "rho": "past_illegal", "eta": "past_neighbors"}[c]
        for c in cfg.variant.coefficients if c != "beta"}
    for name in needed:
        if name not in stats or not stats[name]["std"] > 0:
            raise ValueError(f"declared std for {name} must be > 0")

    a = cfg.mean_a + cfg.std_a * stream(cfg.seed, STREAM_ATTRACTIVENESS).standard_normal(n)
    effort = np.zeros((n, T))
    obs = np.zeros((n, T), dtype=np.int64)
    z = {name: np.zeros((n, T)) for name in ("curr_effort", "past_effort", "past_illegal", "past_neighbors")}
    nb_spec = NeighborSpec(cfg.neighbor_window)
    grid_shape = (cfg.n_rows, cfg.n_cols)

    def standardize(name, raw):
        return (raw - stats[name]["mean"]) / stats[name]["std"]

    for t in range(T):
        plan = patrol_policy_effort(obs[:, :t], cfg.policy, cfg.effort_scale,
                                    stream(cfg.seed, STREAM_PLAN, t), n_cells=n)
        if cfg.effort_cv > 0:
            shape = 1.0 / cfg.effort_cv ** 2
            jitter = stream(cfg.seed, STREAM_JITTER, t).gamma(shape, 1.0 / shape, size=n)
        else:
            jitter = np.ones(n)
        effort[:, t] = plan * jitter

        logit = a + cfg.beta * standardize("curr_effort", effort[:, t])
        z["curr_effort"][:, t] = standardize("curr_effort", effort[:, t])
        if t >= k:
            window = np.s_[:, t - k:t]
            if "past_effort" in needed:
                z["past_effort"][:, t] = standardize("past_effort", effort[window].sum(axis=1))
            if "past_illegal" in needed:
                z["past_illegal"][:, t] = standardize("past_illegal", obs[window].sum(axis=1))
            if "past_neighbors" in needed:
                past = obs[window].reshape(grid_shape + (k,))
                nb = neighbor_sum(past, nb_spec).reshape(n, k).sum(axis=1)
                z["past_neighbors"][:, t] = standardize("past_neighbors", nb)
        # before k bins of history exist the past terms sit at their means (z = 0)
        logit = logit + cfg.gamma * z["past_effort"][:, t] + cfg.rho * z["past_illegal"][:, t] \
            + cfg.eta * z["past_neighbors"][:, t]
        u = stream(cfg.seed, STREAM_DETECTION, t).random(n)
        obs[:, t] = (u < expit(logit)).astype(np.int64)

    grid, binning = cfg.grid(), cfg.binning()
    return SimOutput(
        config=cfg,
        effort=EffortRaster(grid, binning, effort),
        observations=ObservationRaster(grid, binning, obs),
        attractiveness=a,
        covariates={name: z[name] for name in sorted(needed)},
        covariate_stats=stats,
    )


FEATURE_NAMES = ("dist_boundary", "dist_road", "dist_village", "dist_patrol_post", "slope", "npp")


def simulate_features(sim: SimOutput, noise: float = 0.5) -> dict[str, np.ndarray]:
    """Static per-cell features loosely tied to the true attractiveness.

    dist_boundary and dist_village fall with attractiveness, dist_road rises
    with it, dist_patrol_post has a hump, slope and npp are pure noise.
    """
    rng = stream(sim.config.seed, STREAM_FEATURES)
    a = sim.attractiveness
    sa = (a - a.mean()) / (a.std() if a.std() > 0 else 1.0)
    eps = rng.standard_normal((len(FEATURE_NAMES), len(a))) * noise
    return {
        "dist_boundary": np.exp(0.5 * (-sa + eps[0])),
        "dist_road": np.exp(0.5 * (sa + eps[1])),
        "dist_village": np.exp(0.5 * (-sa + eps[2])),
        "dist_patrol_post": np.abs(sa + eps[3]) * 2.0,
        "slope": np.abs(eps[4]) * 10.0,
        "npp": 1.0 + eps[5],
    }


def write_ground_truth(path, sim: SimOutput) -> None:
    with open(path, "w") as fh:
        json.dump(sim.ground_truth(), fh, indent=2, sort_keys=True)
        fh.write("\n")
