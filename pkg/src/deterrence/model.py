"""Nested logistic deterrence models with one attractiveness per cell.

The linear predictor for row (cell i, bin t) is::

    a_i + beta*curr_effort + gamma*past_effort + rho*past_illegal + eta*past_neighbors

where the variant decides which of gamma, rho, eta are active (the rest are
held at 0). Covariates are the standardized panel columns, so every
coefficient is the logit change per standard deviation.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .optimizer import AdamConfig, OptimizationError, minimize
from .panel import Panel


class ModelVariant(str, enum.Enum):
    PAST_EFFORT = "past_effort"
    PAST_ILLEGAL = "past_illegal"
    PAST_ILLEGAL_NEIGHBORS = "past_illegal_neighbors"

    @property
    def coefficients(self) -> tuple[str, ...]:
        """Active scalar coefficients in table order."""
        return {
            ModelVariant.PAST_EFFORT: ("beta", "gamma"),
            ModelVariant.PAST_ILLEGAL: ("beta", "rho"),
            ModelVariant.PAST_ILLEGAL_NEIGHBORS: ("beta", "rho", "eta"),
        }[self]

    @classmethod
    def parse(cls, text) -> "ModelVariant":
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower().replace("-", "_")
        aliases = {"effort": "past_effort", "illegal": "past_illegal",
                   "neighbors": "past_illegal_neighbors"}
        key = aliases.get(key, key)
        for v in cls:
            if v.value == key or v.name.lower() == key:
                return v
        raise ValueError(f"unknown model variant {text!r}")


# coefficient name -> panel column it multiplies
COVARIATE_OF = {
    "beta": "curr_effort",
    "gamma": "past_effort",
    "rho": "past_illegal",
    "eta": "past_neighbors",
}


@dataclass(frozen=True)
class ModelParams:
    a: np.ndarray
    beta: float = 0.0
    gamma: float = 0.0
    rho: float = 0.0
    eta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float))

    @property
    def n_cells(self) -> int:
        return len(self.a)

    def to_vector(self, variant: ModelVariant) -> np.ndarray:
        return np.concatenate([self.a, [getattr(self, c) for c in variant.coefficients]])

    @classmethod
    def from_vector(cls, x, variant: ModelVariant, n_cells: int) -> "ModelParams":
        x = np.asarray(x, dtype=float)
        expected = n_cells + len(variant.coefficients)
        if len(x) != expected:
            raise ValueError(f"parameter vector has length {len(x)}, expected {expected}")
        coefs = {c: float(v) for c, v in zip(variant.coefficients, x[n_cells:])}
        return cls(a=x[:n_cells].copy(), **coefs)

    def restricted(self, variant: ModelVariant) -> "ModelParams":
        """Copy with coefficients outside ``variant`` zeroed."""
        active = set(variant.coefficients)
        return replace(self, **{c: 0.0 for c in COVARIATE_OF if c not in active and c != "beta"})


def n_active_params(variant: ModelVariant, n_cells: int) -> int:
    return n_cells + len(variant.coefficients)


def linear_predictor(params: ModelParams, rows):
    """Logit for a :class:`PanelRow` (scalar) or a whole :class:`Panel` (array)."""
    return (params.a[rows.cell]
            + params.beta * rows.curr_effort
            + params.gamma * rows.past_effort
            + params.rho * rows.past_illegal
            + params.eta * rows.past_neighbors)


def predict_prob(params: ModelParams, rows):
    return expit(linear_predictor(params, rows))


def _penalty(a: np.ndarray, l2: float) -> float:
    d = a - a.mean()
    return l2 * float(d @ d)


def nll(params: ModelParams, panel: Panel, l2: float = 0.0) -> float:
    """Mean Bernoulli negative log-likelihood plus ``l2 * ||a - mean(a)||^2``."""
    if len(panel) == 0:
        raise ValueError("panel is empty")
    z = linear_predictor(params, panel)
    # -[y log p + (1-y) log(1-p)] = log(1 + e^z) - y z
    per_row = np.logaddexp(0.0, z) - panel.y * z
    return float(per_row.mean()) + _penalty(params.a, l2)


def nll_grad(params: ModelParams, panel: Panel, l2: float = 0.0,
             variant: ModelVariant = ModelVariant.PAST_EFFORT) -> np.ndarray:
    """Gradient of :func:`nll` over the variant's active parameters.

    Layout matches :meth:`ModelParams.to_vector`: the N attractiveness
    entries first, then the scalar coefficients in table order.
    """
    if len(panel) == 0:
        raise ValueError("panel is empty")
    n = len(panel)
    r = (predict_prob(params, panel) - panel.y) / n
    g_a = np.bincount(panel.cell, weights=r, minlength=params.n_cells)
    g_a += 2.0 * l2 * (params.a - params.a.mean())
    g_c = [float(r @ panel.column(COVARIATE_OF[c])) for c in variant.coefficients]
    return np.concatenate([g_a, g_c])


@dataclass(frozen=True)
class FitConfig:
    adam: AdamConfig = field(default_factory=AdamConfig)
    l2_attractiveness: float = 1e-5
    seed: int = 0
    # clamp for the intercept-only initialization of every a_i
    init_bounds: tuple[float, float] = (-12.0, -1.0)

    def __post_init__(self):
        if self.l2_attractiveness < 0:
            raise ValueError("l2_attractiveness must be >= 0")

    @property
    def max_iterations(self) -> int:
        return self.adam.max_iterations

    @property
    def tolerance(self) -> float:
        return self.adam.tolerance

    def to_dict(self) -> dict:
        a = self.adam
        return {
            "learning_rate": a.learning_rate, "beta1": a.beta1, "beta2": a.beta2,
            "epsilon": a.epsilon, "max_iterations": a.max_iterations,
            "tolerance": a.tolerance, "window": a.window,
            "l2_attractiveness": self.l2_attractiveness, "seed": self.seed,
        }


@dataclass(frozen=True)
class FitResult:
    params: ModelParams
    variant: ModelVariant
    mean_a: float
    std_a: float
    final_nll: float
    loss_trace: list
    iterations: int
    config: dict = field(default_factory=dict)
    label: str = ""

    def coefficient(self, name: str) -> float:
        return float(getattr(self.params, name))

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "variant": self.variant.value,
            "coefficients": {c: self.coefficient(c) for c in self.variant.coefficients},
            "mean_a": self.mean_a,
            "std_a": self.std_a,
            "final_nll": self.final_nll,
            "iterations": self.iterations,
            "attractiveness": [float(v) for v in self.params.a],
            "config": self.config,
            "loss_trace": [float(v) for v in self.loss_trace],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        variant = ModelVariant.parse(d["variant"])
        params = ModelParams(np.array(d["attractiveness"], dtype=float), **d["coefficients"])
        return cls(params, variant, float(d["mean_a"]), float(d["std_a"]),
                   float(d["final_nll"]), list(d["loss_trace"]), int(d["iterations"]),
                   dict(d.get("config", {})), d.get("label", ""))


def check_panel(panel: Panel, variant: ModelVariant) -> None:
    if len(panel) == 0:
        raise ValueError("panel is empty")
    if variant is ModelVariant.PAST_ILLEGAL_NEIGHBORS and not panel.has_neighbors:
        raise ValueError("variant past_illegal_neighbors needs a panel built with a neighbor window")
    if np.any(panel.cell < 0) or np.any(panel.cell >= panel.n_cells):
        raise ValueError("panel cell index outside [0, n_cells)")


def initial_params(panel: Panel, config: FitConfig) -> ModelParams:
    """Every a_i at the clamped logit of the global detection rate; slopes 0."""
    rate = float(np.mean(panel.y))
    lo, hi = config.init_bounds
    if rate <= 0.0:
        a0 = lo
    elif rate >= 1.0:
        a0 = hi
    else:
        a0 = min(max(math.log(rate / (1.0 - rate)), lo), hi)
    return ModelParams(np.full(panel.n_cells, a0))


def fit(panel: Panel, variant: ModelVariant, config: FitConfig | None = None,
        label: str = "", init: ModelParams | None = None) -> FitResult:
    """Full-batch Adam on the mean penalized NLL.

    Raises :class:`OptimizationError` naming the iteration if the loss goes
    non-finite.
    """
    config = config or FitConfig()
    variant = ModelVariant.parse(variant)
    check_panel(panel, variant)
    n_cells = panel.n_cells
    l2 = config.l2_attractiveness
    x0 = (init or initial_params(panel, config)).to_vector(variant)

    # design for the active scalar coefficients, plus a one-slot cache so
    # minimize's loss/grad pair shares a single pass over the rows
    X = np.column_stack([panel.column(COVARIATE_OF[c]) for c in variant.coefficients])
    cell, y, n = panel.cell, panel.y.astype(float), len(panel)
    cache = {}

    def evaluate(x):
        key = x.tobytes()
        if cache.get("key") != key:
            a = x[:n_cells]
            z = a[cell] + X @ x[n_cells:]
            d = a - a.mean()
            loss = float(np.mean(np.logaddexp(0.0, z) - y * z)) + l2 * float(d @ d)
            r = (expit(z) - y) / n
            g = np.concatenate([np.bincount(cell, weights=r, minlength=n_cells) + 2.0 * l2 * d,
                                r @ X])
            cache.update(key=key, loss=loss, grad=g)
        return cache["loss"], cache["grad"]

    try:
        x, trace = minimize(lambda x: evaluate(x)[0], lambda x: evaluate(x)[1], x0, config.adam)
    except OptimizationError as exc:
        raise OptimizationError(f"deterrence fit ({variant.value}) failed: {exc}",
                                iteration=exc.iteration) from exc

    params = ModelParams.from_vector(x, variant, n_cells)
    return FitResult(
        params=params,
        variant=variant,
        mean_a=float(params.a.mean()),
        std_a=float(params.a.std(ddof=1)) if n_cells > 1 else 0.0,
        final_nll=trace[-1],
        loss_trace=trace,
        iterations=len(trace) - 1,
        config=config.to_dict(),
        label=label,
    )


# --------------------------------------------------------------------------
# report tables

TABLE_TITLES = {
    ModelVariant.PAST_EFFORT: "Learned coefficients, gamma = past patrol effort",
    ModelVariant.PAST_ILLEGAL: "Learned coefficients, rho = past illegal activity",
    ModelVariant.PAST_ILLEGAL_NEIGHBORS: "Learned coefficients, with neighbors included",
}


def table_columns(variant: ModelVariant) -> tuple[str, ...]:
    return ("mean_a",) + variant.coefficients


def summarize(results, variant: ModelVariant | None = None) -> list[tuple[str, ...]]:
    """Rows of (label, mean_a, coefficients...) as 3-decimal strings."""
    if isinstance(results, FitResult):
        results = [results]
    variant = ModelVariant.parse(variant or results[0].variant)
    rows = []
    for res in results:
        if res.variant is not variant:
            raise ValueError(f"cannot tabulate a {res.variant.value} fit in a "
                             f"{variant.value} table")
        vals = [res.mean_a] + [res.coefficient(c) for c in variant.coefficients]
        rows.append((res.label,) + tuple(_fmt(v) for v in vals))
    return rows


def _fmt(v: float) -> str:
    s = f"{v:.3f}"
    return "0.000" if s == "-0.000" else s


def format_table(rows, variant: ModelVariant) -> str:
    """Aligned plain-text table with a title line."""
    variant = ModelVariant.parse(variant)
    header = ("pairing",) + table_columns(variant)
    body = [header] + [tuple(r) for r in rows]
    widths = [max(len(r[i]) for r in body) for i in range(len(header))]
    lines = [TABLE_TITLES[variant]]
    for j, r in enumerate(body):
        cells = [r[0].rjust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
        lines.append(cells[0] + " | " + "  ".join(cells[1:]))
        if j == 0:
            lines.append("-" * len(lines[-1]))
    return "\n".join(lines) + "\n"


def format_table_csv(rows, variant: ModelVariant) -> str:
    variant = ModelVariant.parse(variant)
    lines = [",".join(("pairing",) + table_columns(variant))]
    lines += [",".join(r) for r in rows]
    return "\n".join(lines) + "\n"


def parse_table_csv(text: str) -> tuple[ModelVariant, list[dict]]:
    """Inverse of :func:`format_table_csv`."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = lines[0].split(",")
    coefs = tuple(header[2:])
    variant = next(v for v in ModelVariant if v.coefficients == coefs)
    out = []
    for ln in lines[1:]:
        parts = ln.split(",")
        out.append({"label": parts[0], **{h: float(p) for h, p in zip(header[1:], parts[1:])}})
    return variant, out
