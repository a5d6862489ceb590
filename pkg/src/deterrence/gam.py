"""Binomial GAM with one penalized cubic B-spline smooth per feature.

Each smooth uses K quantile-placed interior knots and a second-difference
penalty taken with respect to the Greville abscissae of the basis, so the
penalty's null space is exactly the linear functions of the feature (for
evenly spaced knots it reduces to the usual P-spline penalty). Smooths carry
a sum-to-zero constraint over the training rows, which keeps every component
centered and the intercept identifiable. There are no interaction terms.

The penalized objective is

    -loglik + sum_f lam_f * ||D_f theta_f||^2

and is minimized with the package's Adam. Inside the optimizer each smooth
is rewritten in the penalty's eigenbasis with the penalized directions scaled
to unit curvature, which keeps Adam well conditioned even for very large lam.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.interpolate import BSpline
from scipy.special import expit

from .optimizer import AdamConfig, OptimizationError, minimize

DEGREE = 3
N_KNOTS = 10
APPROXIMATE = "APPROXIMATE"


class GamError(ValueError):
    pass


@dataclass
class FeatureTable:
    """Static per-cell features; column arrays indexed by flat cell id."""

    n_cols: int
    n_rows: int
    columns: dict[str, np.ndarray]

    def __post_init__(self):
        n = self.n_cols * self.n_rows
        for name, col in self.columns.items():
            col = np.asarray(col, dtype=float)
            if col.shape != (n,):
                raise GamError(f"feature {name} has {col.shape[0]} rows, expected one per cell ({n})")
            if not np.all(np.isfinite(col)):
                raise GamError(f"feature {name} has non-finite values")
            self.columns[name] = col

    @property
    def names(self) -> list[str]:
        return list(self.columns)


def read_feature_table(path, n_cols: int, n_rows: int) -> FeatureTable:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or tuple(header[:2]) != ("cell_col", "cell_row") or len(header) < 3:
            raise GamError(f"{path}: header must be cell_col,cell_row,<feature columns>")
        names = header[2:]
        cols = {name: np.full(n_cols * n_rows, np.nan) for name in names}
        for rec in reader:
            if not rec:
                continue
            c, r = int(rec[0]), int(rec[1])
            if not (0 <= c < n_cols and 0 <= r < n_rows):
                raise GamError(f"{path}: cell ({c}, {r}) outside the grid")
            for name, v in zip(names, rec[2:]):
                cols[name][r * n_cols + c] = float(v)
    for name, col in cols.items():
        if np.isnan(col).any():
            raise GamError(f"{path}: feature {name} is missing for some cells")
    return FeatureTable(n_cols, n_rows, cols)


def write_feature_table(path, table: FeatureTable) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_col", "cell_row"] + table.names)
        for cell in range(table.n_cols * table.n_rows):
            w.writerow([cell % table.n_cols, cell // table.n_cols]
                       + [repr(float(table.columns[n][cell])) for n in table.names])


def join_features(panel, table: FeatureTable | None = None, norm_stats=None,
                  effort_columns=("curr_effort", "past_effort")) -> dict[str, np.ndarray]:
    """Per-row design columns: static features looked up by cell, plus effort.

    With ``norm_stats`` the effort columns are returned in raw km.
    """
    out = {}
    if table is not None:
        for name in table.names:
            out[name] = table.columns[name][panel.cell]
    for name in effort_columns:
        col = panel.column(name)
        if norm_stats is not None:
            col = col * norm_stats.std[name] + norm_stats.mean[name]
        out[name] = col
    return out


# --------------------------------------------------------------------------
# basis


@dataclass
class SplineBasis:
    feature: str
    knots: np.ndarray  # full clamped knot vector
    lo: float
    hi: float
    penalty: np.ndarray  # K x K, second differences w.r.t. Greville abscissae

    @property
    def n_basis(self) -> int:
        return len(self.knots) - DEGREE - 1

    def evaluate(self, x) -> np.ndarray:
        """Dense design matrix; points outside [lo, hi] are clamped."""
        x = np.clip(np.asarray(x, dtype=float), self.lo, self.hi)
        return BSpline.design_matrix(x, self.knots, DEGREE, extrapolate=True).toarray()

    def greville(self) -> np.ndarray:
        t = self.knots
        return np.array([t[j + 1:j + DEGREE + 1].mean() for j in range(self.n_basis)])


def make_basis(feature: str, x, n_knots: int = N_KNOTS) -> SplineBasis:
    x = np.asarray(x, dtype=float)
    lo, hi = float(x.min()), float(x.max())
    if not hi > lo:
        raise GamError(f"feature {feature} is constant; cannot build a smooth")
    interior = np.quantile(x, np.linspace(0, 1, n_knots + 2)[1:-1])
    interior = np.unique(interior[(interior > lo) & (interior < hi)])
    knots = np.concatenate([[lo] * (DEGREE + 1), interior, [hi] * (DEGREE + 1)])
    basis = SplineBasis(feature, knots, lo, hi, np.zeros((0, 0)))
    g = (basis.greville() - lo) / (hi - lo)
    h = np.diff(g)
    D = np.zeros((basis.n_basis - 2, basis.n_basis))
    hbar = h.mean()
    for j in range(basis.n_basis - 2):
        D[j, j] = hbar / h[j]
        D[j, j + 1] = -hbar / h[j] - hbar / h[j + 1]
        D[j, j + 2] = hbar / h[j + 1]
    basis.penalty = D.T @ D
    return basis


@dataclass
class _Smooth:
    basis: SplineBasis
    Z: np.ndarray  # K x (K-1) null space of the sum-to-zero constraint
    lam: float
    S: np.ndarray  # constrained penalty, (K-1) x (K-1)
    T: np.ndarray  # optimizer coords -> constrained coefficients
    n_null: int  # leading optimizer coords that are unpenalized

    def constrained_design(self, x) -> np.ndarray:
        return self.basis.evaluate(x) @ self.Z


def _build_smooth(name, x, lam, n_knots) -> _Smooth:
    if lam < 0:
        raise GamError(f"smoothing parameter for {name} must be >= 0")
    basis = make_basis(name, x, n_knots)
    B = basis.evaluate(x)
    c = B.sum(axis=0)[:, None]
    q, _ = np.linalg.qr(c, mode="complete")
    Z = q[:, 1:]
    S = Z.T @ basis.penalty @ Z
    S = 0.5 * (S + S.T)
    d, U = np.linalg.eigh(S)
    null = d <= 1e-10 * d.max()
    order = np.concatenate([np.flatnonzero(null), np.flatnonzero(~null)])
    d, U = d[order], U[:, order]
    n_null = int(null.sum())
    scale = np.ones_like(d)
    if lam > 0:
        scale[n_null:] = 1.0 / np.sqrt(lam * d[n_null:])
    else:
        scale[n_null:] = 1.0 / np.sqrt(d[n_null:])
    return _Smooth(basis, Z, float(lam), S, U * scale, n_null)


@dataclass
class GamFit:
    features: list[str]
    intercept: float
    coefficients: dict[str, np.ndarray]  # per feature, on the raw B-spline basis
    lam: dict[str, float]
    penalized_loglik: float
    loglik: float
    covariance: np.ndarray  # over [intercept, constrained blocks...]
    edf: dict[str, float]
    shifts: dict[str, float]
    n_obs: int
    loss_trace: list = field(default_factory=list)
    _smooths: dict = field(default_factory=dict, repr=False)
    _x: dict = field(default_factory=dict, repr=False)
    _y: np.ndarray | None = field(default=None, repr=False)
    _config: AdamConfig | None = field(default=None, repr=False)
    _n_knots: int = N_KNOTS

    def block(self, feature: str) -> slice:
        start = 1
        for f in self.features:
            width = self._smooths[f].Z.shape[1]
            if f == feature:
                return slice(start, start + width)
            start += width
        raise KeyError(feature)

    def component(self, feature: str, x) -> np.ndarray:
        """Centered component values at ``x``."""
        sm = self._smooths[feature]
        theta = self.coefficients[feature]
        return sm.basis.evaluate(x) @ theta - self.shifts[feature]

    def component_se(self, feature: str, x) -> np.ndarray:
        sm = self._smooths[feature]
        C = sm.constrained_design(x)
        V = self.covariance[self.block(feature), self.block(feature)]
        return np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", C, V, C), 0.0))

    def linear_predictor(self, x: dict | None = None) -> np.ndarray:
        x = self._x if x is None else x
        eta = np.full(len(next(iter(x.values()))), self.intercept)
        for f in self.features:
            eta = eta + self.component(f, x[f])
        return eta


def _penalized_objective(smooths, X, y):
    n = len(y)

    def evaluate(w):
        eta = X @ w
        ll = float(y @ eta - np.logaddexp(0.0, eta).sum())
        pen = 0.0
        grad_pen = np.zeros_like(w)
        start = 1
        for sm in smooths:
            width = sm.T.shape[1]
            e = w[start + sm.n_null:start + width]
            if sm.lam > 0:
                pen += float(e @ e)
                grad_pen[start + sm.n_null:start + width] = 2.0 * e
            start += width
        loss = (pen - ll) / n
        grad = (X.T @ (expit(eta) - y) + grad_pen) / n
        return loss, grad, ll, pen

    return evaluate


def fit_gam(x: dict, y, lam: float | dict = 1.0, config: AdamConfig | None = None,
            n_knots: int = N_KNOTS) -> GamFit:
    """Fit the additive logistic model ``logit p = c + sum_f s_f(x_f)``.

    Parameters
    ----------
    x : dict of name -> 1-D array
        One column per feature, all the same length.
    y : array of {0, 1}
    lam : float or dict
        Smoothing parameter, shared or per feature.
    """
    if not x:
        raise GamError("need at least one feature")
    y = np.asarray(y, dtype=float)
    if not np.all((y == 0) | (y == 1)):
        raise GamError("target must be binary")
    names = list(x)
    lams = {f: float(lam[f] if isinstance(lam, dict) else lam) for f in names}
    cols = {f: np.asarray(x[f], dtype=float) for f in names}
    for f, col in cols.items():
        if col.shape != y.shape:
            raise GamError(f"feature {f} has {len(col)} rows, target has {len(y)}")
        if not np.all(np.isfinite(col)):
            raise GamError(f"feature {f} has non-finite values")
    smooths = [_build_smooth(f, cols[f], lams[f], n_knots) for f in names]
    config = config or AdamConfig(learning_rate=0.01, max_iterations=20_000, tolerance=1e-10)

    Cs = [sm.constrained_design(cols[sm.basis.feature]) for sm in smooths]
    X = np.column_stack([np.ones(len(y))] + [C @ sm.T for C, sm in zip(Cs, smooths)])
    evaluate = _penalized_objective(smooths, X, y)
    rate = min(max(y.mean(), 1e-6), 1 - 1e-6)
    w0 = np.zeros(X.shape[1])
    w0[0] = math.log(rate / (1 - rate))
    cache = {}

    def cached(w):
        key = w.tobytes()
        if cache.get("key") != key:
            cache.update(key=key, out=evaluate(w))
        return cache["out"]

    try:
        w, trace = minimize(lambda w: cached(w)[0], lambda w: cached(w)[1], w0, config)
    except OptimizationError as exc:
        raise GamError(f"GAM fit failed: {exc}") from exc
    _, _, ll, pen = cached(w)

    # back to constrained coefficients, then the raw basis
    theta_c = [w[:1]]
    start = 1
    for sm in smooths:
        width = sm.T.shape[1]
        theta_c.append(sm.T @ w[start:start + width])
        start += width
    beta = np.concatenate(theta_c)

    Xc = np.column_stack([np.ones(len(y))] + Cs)
    p = expit(Xc @ beta)
    H = Xc.T @ (Xc * (p * (1 - p))[:, None])
    P = np.zeros_like(H)
    start = 1
    for sm in smooths:
        width = sm.S.shape[0]
        P[start:start + width, start:start + width] = 2.0 * sm.lam * sm.S
        start += width
    V = np.linalg.pinv(H + P, hermitian=True)
    F = V @ H
    edf = {}
    coefs = {}
    shifts = {}
    intercept = float(beta[0])
    start = 1
    for sm, C in zip(smooths, Cs):
        width = sm.S.shape[0]
        name = sm.basis.feature
        edf[name] = float(np.trace(F[start:start + width, start:start + width]))
        coefs[name] = sm.Z @ beta[start:start + width]
        start += width
    fit = GamFit(names, intercept, coefs, lams, ll - pen, ll, V, edf,
                 {f: 0.0 for f in names}, len(y), trace,
                 {sm.basis.feature: sm for sm in smooths}, cols, y, config, n_knots)
    # the constraint already centers each component; absorb any residual drift
    for f in names:
        shift = float(np.mean(fit.component(f, cols[f])))
        fit.shifts[f] = shift
        fit.intercept += shift
    return fit


@dataclass
class ComponentCurve:
    feature: str
    x: np.ndarray
    estimate: np.ndarray
    se: np.ndarray

    @property
    def lower(self) -> np.ndarray:
        return self.estimate - 2.0 * self.se

    @property
    def upper(self) -> np.ndarray:
        return self.estimate + 2.0 * self.se


def component_curve(fit: GamFit, feature: str, n_grid: int = 200) -> ComponentCurve:
    if feature not in fit.features:
        raise KeyError(f"feature {feature} is not in the fit")
    sm = fit._smooths[feature]
    grid = np.linspace(sm.basis.lo, sm.basis.hi, n_grid)
    return ComponentCurve(feature, grid, fit.component(feature, grid), fit.component_se(feature, grid))


def linear_slope(fit: GamFit, feature: str) -> float:
    """Least-squares slope of the in-sample component against the feature."""
    x = fit._x[feature]
    f = fit.component(feature, x)
    xc = x - x.mean()
    return float(xc @ f / (xc @ xc))


@dataclass(frozen=True)
class TermTest:
    feature: str
    edf: float
    statistic: float | None
    p_value: float | None
    label: str = APPROXIMATE

    @property
    def available(self) -> bool:
        return self.p_value is not None


def term_significance(fit: GamFit, feature: str) -> TermTest:
    """Approximate test for dropping one smooth.

    Refits without the term and refers twice the drop in penalized
    log-likelihood to a chi-square on the term's effective degrees of freedom.
    """
    edf = fit.edf[feature]
    others = [f for f in fit.features if f != feature]
    try:
        if others:
            reduced = fit_gam({f: fit._x[f] for f in others}, fit._y,
                              {f: fit.lam[f] for f in others}, fit._config, fit._n_knots)
            pll_reduced = reduced.penalized_loglik
        else:
            rate = float(fit._y.mean())
            if rate in (0.0, 1.0):
                pll_reduced = 0.0
            else:
                pll_reduced = float(fit.n_obs * (rate * math.log(rate) + (1 - rate) * math.log(1 - rate)))
    except (GamError, OptimizationError, np.linalg.LinAlgError):
        return TermTest(feature, edf, None, None)
    stat = max(2.0 * (fit.penalized_loglik - pll_reduced), 0.0)
    p = float(stats.chi2.sf(stat, max(edf, 1e-8)))
    return TermTest(feature, edf, stat, p)


def format_significance(tests) -> str:
    lines = [f"smooth-term significance ({APPROXIMATE}: penalized deviance difference vs chi-square at edf)",
             f"{'feature':<20} {'edf':>7} {'stat':>12} {'p-value':>12}"]
    for t in tests:
        if not t.available:
            lines.append(f"{t.feature:<20} {t.edf:7.2f} {'n/a':>12} {'unavailable':>12}")
            continue
        p = "< 2e-16" if t.p_value < 2e-16 else f"{t.p_value:.3g}"
        lines.append(f"{t.feature:<20} {t.edf:7.2f} {t.statistic:12.3f} {p:>12}")
    return "\n".join(lines) + "\n"


def write_curve(path, curve: ComponentCurve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "x", "estimate", "se"])
        for xv, ev, sv in zip(curve.x, curve.estimate, curve.se):
            w.writerow([curve.feature, repr(float(xv)), repr(float(ev)), repr(float(sv))])
