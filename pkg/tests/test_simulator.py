import json

import numpy as np
import pytest
from scipy.special import expit

from oracles import sim_panel
from deterrence.model import ModelVariant, fit
from deterrence.simulator import (
    FEATURE_NAMES,
    PatrolPolicy,
    SimConfig,
    default_covariate_stats,
    patrol_policy_effort,
    simulate,
    simulate_features,
    stream,
    write_ground_truth,
)

SMALL = dict(n_cols=8, n_rows=8, n_bins=16)


def test_uniform_policy():
    out = patrol_policy_effort(np.zeros((5, 0)), PatrolPolicy.UNIFORM, 2.0)
    assert np.array_equal(out, np.full(5, 2.0))


def test_random_policy_exponential_mean():
    out = patrol_policy_effort(np.zeros((20000, 1)), "random", 3.0, stream(0, 1, 0))
    assert out.min() >= 0
    assert out.mean() == pytest.approx(3.0, abs=4 * 3.0 / np.sqrt(20000))
    with pytest.raises(ValueError):
        patrol_policy_effort(np.zeros((3, 1)), "random", 1.0)


def test_reactive_policy():
    zero = patrol_policy_effort(np.zeros((6, 3)), "reactive", 2.0)
    np.testing.assert_allclose(zero, 2.0, rtol=1e-15)
    rng = np.random.default_rng(0)
    for _ in range(50):
        hist = rng.integers(0, 4, (30, 2))
        out = patrol_policy_effort(hist, "reactive", 1.5)
        assert abs(out.sum() - 30 * 1.5) < 1e-9
        order = np.argsort(hist[:, -1], kind="stable")
        assert np.all(np.diff(out[order]) >= -1e-12)
    assert np.array_equal(patrol_policy_effort(np.zeros((4, 0)), "reactive", 1.0), np.ones(4))


def test_config_validation():
    with pytest.raises(ValueError, match="rho"):
        SimConfig(variant=ModelVariant.PAST_EFFORT, rho=0.3)
    with pytest.raises(ValueError, match="gamma"):
        SimConfig(variant=ModelVariant.PAST_ILLEGAL, gamma=-0.2)
    with pytest.raises(ValueError):
        SimConfig(std_a=-1)
    with pytest.raises(ValueError):
        SimConfig(effort_scale=-1)
    with pytest.raises(ValueError):
        SimConfig(n_bins=0)
    with pytest.raises(ValueError):
        SimConfig(neighbor_window=4)
    with pytest.raises(ValueError):
        SimConfig(variant="bogus")


def test_zero_declared_std_rejected():
    stats = default_covariate_stats(SimConfig())
    stats["curr_effort"]["std"] = 0.0
    with pytest.raises(ValueError, match="curr_effort"):
        simulate(SimConfig(covariate_stats=stats, **SMALL))


def test_from_mapping_round_trip():
    cfg = SimConfig(n_cols=7, mean_a=-3.5, variant="neighbors", gamma=0.0, rho=-0.1, eta=0.4,
                    policy="reactive", seed=9)
    strings = {k: (json.dumps(v) if isinstance(v, dict) else str(v)) for k, v in cfg.to_dict().items()}
    assert SimConfig.from_mapping(strings).to_dict() == cfg.to_dict()


def test_deterministic():
    for policy in PatrolPolicy:
        cfg = SimConfig(policy=policy, seed=5, **SMALL)
        a, b = simulate(cfg), simulate(cfg)
        assert a.effort.values.tobytes() == b.effort.values.tobytes()
        assert a.observations.values.tobytes() == b.observations.values.tobytes()
        assert a.attractiveness.tobytes() == b.attractiveness.tobytes()
    c = simulate(SimConfig(seed=6, **SMALL))
    assert not np.array_equal(c.attractiveness, a.attractiveness)


def test_draws_keyed_by_cell_not_grid_size():
    small = simulate(SimConfig(n_cols=10, n_rows=10, n_bins=6, seed=3,
                               covariate_stats=default_covariate_stats(SimConfig())))
    big = simulate(SimConfig(n_cols=10, n_rows=12, n_bins=6, seed=3,
                             covariate_stats=default_covariate_stats(SimConfig())))
    np.testing.assert_array_equal(small.attractiveness, big.attractiveness[:100])
    np.testing.assert_array_equal(small.effort.values, big.effort.values[:100])
    np.testing.assert_array_equal(small.observations.values, big.observations.values[:100])


def test_outputs_binary_and_consistent():
    sim = simulate(SimConfig(variant="neighbors", gamma=0.0, rho=-0.1, eta=0.4, **SMALL))
    assert set(np.unique(sim.observations.values)) <= {0, 1}
    assert sim.effort.values.shape == (64, 16)
    assert sim.effort.grid == sim.observations.grid
    assert set(sim.covariates) == {"curr_effort", "past_illegal", "past_neighbors"}
    gt = sim.ground_truth()
    assert gt["coefficients"] == {"beta": 1.0, "rho": -0.1, "eta": 0.4}
    assert len(gt["attractiveness"]) == 64


def test_generating_covariates_match_declared_standardization():
    sim = simulate(SimConfig(**SMALL))
    st = sim.covariate_stats
    e = sim.effort.values
    np.testing.assert_allclose(sim.covariates["curr_effort"],
                               (e - st["curr_effort"]["mean"]) / st["curr_effort"]["std"])
    past = (e[:, :-1] - st["past_effort"]["mean"]) / st["past_effort"]["std"]
    np.testing.assert_allclose(sim.covariates["past_effort"][:, 1:], past)
    assert not sim.covariates["past_effort"][:, 0].any()


def test_binomial_concentration():
    cfg = SimConfig(std_a=0.0, beta=0.0, gamma=0.0, mean_a=-3.0, seed=2)
    y = simulate(cfg).observations.values
    p = expit(-3.0)
    se = np.sqrt(p * (1 - p) / y.size)
    assert abs(y.mean() - p) < 3 * se


def test_default_detection_is_rare():
    for seed in range(3):
        rate = (simulate(SimConfig(seed=seed)).observations.values >= 1).mean()
        assert 0.001 <= rate <= 0.05


def test_strong_deterrence_paired_seed():
    base = simulate(SimConfig(gamma=0.0, seed=4))
    strong = simulate(SimConfig(gamma=-10.0, seed=4))
    # rows whose previous-bin effort was above average
    patrolled = base.covariates["past_effort"][:, 1:] > 0
    assert np.array_equal(patrolled, strong.covariates["past_effort"][:, 1:] > 0)
    rate_base = base.observations.values[:, 1:][patrolled].mean()
    rate_strong = strong.observations.values[:, 1:][patrolled].mean()
    assert rate_strong < rate_base


def test_declared_stats_close_to_empirical():
    for policy in (PatrolPolicy.UNIFORM, PatrolPolicy.RANDOM):
        sim = simulate(SimConfig(policy=policy, seed=1))
        st = sim.covariate_stats
        e = sim.effort.values
        assert e.mean() == pytest.approx(st["curr_effort"]["mean"], rel=0.05)
        assert e.std() == pytest.approx(st["curr_effort"]["std"], rel=0.1)
        y = sim.observations.values
        p = st["past_illegal"]["mean"]
        assert y.mean() == pytest.approx(p, rel=0.15)


def test_recovery_single_seed():
    sim = simulate(SimConfig(seed=1))
    res = fit(sim_panel(sim)[0], ModelVariant.PAST_EFFORT)
    assert res.params.beta == pytest.approx(1.0, abs=0.1)
    assert res.params.gamma == pytest.approx(-0.2, abs=0.15)
    assert res.mean_a == pytest.approx(sim.attractiveness.mean(), abs=0.3)


def test_features_and_ground_truth_file(tmp_path):
    sim = simulate(SimConfig(**SMALL))
    f1, f2 = simulate_features(sim), simulate_features(sim)
    assert list(f1) == list(FEATURE_NAMES)
    for name in FEATURE_NAMES:
        assert f1[name].shape == (64,)
        assert np.array_equal(f1[name], f2[name])
        assert np.all(np.isfinite(f1[name])) and f1[name].std() > 0
    assert np.corrcoef(f1["dist_road"], sim.attractiveness)[0, 1] > 0.5
    write_ground_truth(tmp_path / "gt.json", sim)
    gt = json.loads((tmp_path / "gt.json").read_text())
    assert gt["config"]["variant"] == "past_effort"
    assert gt["mean_a"] == pytest.approx(sim.attractiveness.mean())
