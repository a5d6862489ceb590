import numpy as np
import pytest
from scipy.special import expit

from oracles import newton_logistic, secant_deviation, sim_panel
from deterrence.gam import (
    APPROXIMATE,
    FeatureTable,
    GamError,
    component_curve,
    fit_gam,
    format_significance,
    join_features,
    linear_slope,
    make_basis,
    read_feature_table,
    term_significance,
    write_curve,
    write_feature_table,
)
from deterrence.optimizer import AdamConfig
from deterrence.simulator import SimConfig, simulate


def linear_data(seed, n=4000, slope=2.0, c=-0.5):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2, 2, n)
    y = (rng.random(n) < expit(c + slope * x)).astype(float)
    return x, y


def null_data(seed, n=500, k=1):
    rng = np.random.default_rng(seed)
    x = {f"x{j}": rng.normal(size=n) for j in range(k)}
    y = (rng.random(n) < 0.3).astype(float)
    return x, y


# ---------------------------------------------------------------- basis

def test_basis_partition_of_unity_and_penalty():
    rng = np.random.default_rng(0)
    x = rng.gamma(2.0, 1.0, 500)
    b = make_basis("x", x)
    B = b.evaluate(x)
    np.testing.assert_allclose(B.sum(axis=1), 1.0, atol=1e-12)
    assert b.n_basis == 14
    eig = np.linalg.eigvalsh(b.penalty)
    assert eig.min() > -1e-10
    assert np.sum(eig < 1e-10 * eig.max()) == 2
    # coefficients at the Greville abscissae reproduce linear functions exactly,
    # and those are the penalty's null space
    g = b.greville()
    for theta in (np.ones_like(g), g, 3 - 2 * g):
        assert np.abs(b.penalty @ theta).max() < 1e-8 * max(1, np.abs(theta).max())
    np.testing.assert_allclose(B @ g, x, atol=1e-10)


def test_degenerate_feature_rejected_by_name():
    with pytest.raises(GamError, match="flat_thing"):
        fit_gam({"flat_thing": np.ones(50)}, np.r_[np.zeros(25), np.ones(25)])
    with pytest.raises(GamError):
        fit_gam({}, np.zeros(3))
    with pytest.raises(GamError, match="binary"):
        fit_gam({"x": np.arange(4.0)}, np.array([0, 1, 2, 0.0]))
    with pytest.raises(GamError):
        fit_gam({"x": np.arange(4.0)}, np.zeros(3))


# ---------------------------------------------------------------- fitting

@pytest.fixture(scope="module")
def linear_fit():
    x, y = linear_data(0)
    return fit_gam({"x": x}, y, lam=1.0), x, y


def test_linear_truth_slope(linear_fit):
    fit, _, _ = linear_fit
    assert abs(linear_slope(fit, "x") - 2.0) < 0.2


def test_centering_and_in_sample(linear_fit):
    fit, x, _ = linear_fit
    vals = fit.component("x", x)
    assert abs(vals.mean()) < 1e-8
    for i in (0, 17, 999):
        assert fit.component("x", x[i:i + 1])[0] == pytest.approx(vals[i], rel=1e-14, abs=1e-14)
    np.testing.assert_allclose(fit.linear_predictor(), fit.intercept + vals, rtol=0, atol=1e-12)


def test_curve_grid_and_band(linear_fit):
    fit, x, _ = linear_fit
    curve = component_curve(fit, "x")
    assert len(curve.x) == 200
    assert curve.x[0] == x.min() and curve.x[-1] == x.max()
    assert np.all(curve.upper - curve.lower >= 0)
    assert np.all(curve.se > 0)
    with pytest.raises(KeyError):
        component_curve(fit, "nope")


def test_huge_lambda_is_linear_and_matches_glm():
    x, y = linear_data(1, n=2000)
    rng = np.random.default_rng(101)
    x2 = rng.uniform(0, 5, len(x))
    y = (rng.random(len(x)) < expit(-0.5 + 1.5 * x - 0.4 * x2)).astype(float)
    cfg = AdamConfig(max_iterations=50_000, tolerance=1e-13)
    fit = fit_gam({"x": x, "x2": x2}, y, lam=1e8, config=cfg)
    for f in ("x", "x2"):
        curve = component_curve(fit, f)
        assert secant_deviation(curve.x, curve.estimate) < 1e-3
        assert fit.edf[f] == pytest.approx(1.0, abs=1e-3)
    w = newton_logistic(np.column_stack([np.ones(len(x)), x, x2]), y)
    assert linear_slope(fit, "x") == pytest.approx(w[1], abs=1e-4)
    assert linear_slope(fit, "x2") == pytest.approx(w[2], abs=1e-4)
    assert fit.intercept == pytest.approx(w[0] + w[1] * x.mean() + w[2] * x2.mean(), abs=1e-4)


def test_null_component_inside_three_se():
    for seed in range(5):
        x, y = null_data(seed, n=1000)
        fit = fit_gam(x, y)
        curve = component_curve(fit, "x0")
        assert np.all(np.abs(curve.estimate) < 3 * curve.se)


def test_two_cluster_gap_widens_band():
    rng = np.random.default_rng(4)
    x = np.r_[rng.uniform(0, 1, 600), rng.uniform(2, 3, 600)]
    y = (rng.random(len(x)) < expit(-0.5 + 0.5 * x)).astype(float)
    fit = fit_gam({"x": x}, y)
    se = fit.component_se("x", np.array([0.5, 1.5, 2.5]))
    assert se[1] > se[0] and se[1] > se[2]


def test_fit_deterministic():
    x, y = null_data(9, n=300, k=2)
    a, b = fit_gam(x, y), fit_gam(x, y)
    assert a.intercept == b.intercept
    for f in x:
        assert np.array_equal(a.coefficients[f], b.coefficients[f])


# ---------------------------------------------------------------- significance

def test_null_calibration():
    hits = 0
    for seed in range(100):
        x, y = null_data(1000 + seed)
        t = term_significance(fit_gam(x, y), "x0")
        assert t.available and t.label == APPROXIMATE
        hits += t.p_value < 0.05
    assert 0.01 <= hits / 100 <= 0.15


def test_power_on_strong_signal():
    for seed in range(5):
        x, y = linear_data(seed, n=500)
        rng = np.random.default_rng(seed + 500)
        fit = fit_gam({"x": x, "noise": rng.normal(size=len(x))}, y)
        assert term_significance(fit, "x").p_value < 1e-3


def test_zero_term_gives_p_near_one():
    # y depends on x1 only, and every x2 value sees the same y pattern,
    # so the x2 smooth has a zero score at zero
    rng = np.random.default_rng(2)
    x1 = rng.uniform(-1, 1, 40)
    y1 = (rng.random(40) < expit(2 * x1)).astype(float)
    levels = np.linspace(0, 1, 12)
    x = {"x1": np.tile(x1, len(levels)), "x2": np.repeat(levels, len(x1))}
    y = np.tile(y1, len(levels))
    cfg = AdamConfig(max_iterations=50_000, tolerance=1e-14)
    fit = fit_gam(x, y, config=cfg)
    assert np.abs(fit.component("x2", levels)).max() < 1e-4
    t = term_significance(fit, "x2")
    assert t.statistic < 1e-6
    assert t.p_value > 0.99


def test_significance_text():
    x, y = linear_data(3, n=400)
    fit = fit_gam({"x": x}, y)
    text = format_significance([term_significance(fit, "x")])
    assert APPROXIMATE in text.splitlines()[0]
    assert "x" in text.splitlines()[2]


# ---------------------------------------------------------------- files and panels

def test_feature_table_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    table = FeatureTable(3, 2, {"a": rng.normal(size=6), "b": rng.normal(size=6)})
    write_feature_table(tmp_path / "f.csv", table)
    back = read_feature_table(tmp_path / "f.csv", 3, 2)
    assert back.names == ["a", "b"]
    for n in ("a", "b"):
        assert np.array_equal(back.columns[n], table.columns[n])
    lines = (tmp_path / "f.csv").read_text().splitlines()
    lines.pop(3)
    (tmp_path / "g.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(GamError, match="missing"):
        read_feature_table(tmp_path / "g.csv", 3, 2)
    with pytest.raises(GamError):
        FeatureTable(2, 2, {"a": np.array([1.0, np.inf, 0, 0])})


def test_write_curve(tmp_path, linear_fit):
    fit, _, _ = linear_fit
    write_curve(tmp_path / "c.csv", component_curve(fit, "x", n_grid=5))
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "feature,x,estimate,se" and len(lines) == 6


def test_simulated_past_effort_slope_negative():
    sim = simulate(SimConfig(seed=0))
    panel, stats = sim_panel(sim)
    table = FeatureTable(20, 20, {"dist_road": np.exp(0.5 * sim.attractiveness)})
    x = join_features(panel, table, stats)
    np.testing.assert_allclose(x["past_effort"][:5], sim.effort.values[0, :5], rtol=1e-12)
    fit = fit_gam({k: x[k] for k in ("curr_effort", "past_effort")}, panel.y)
    assert linear_slope(fit, "past_effort") < 0
    assert linear_slope(fit, "curr_effort") > 0
