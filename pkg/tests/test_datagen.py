import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rankbias.datagen import (
    Affine,
    Bernoulli,
    ConfigError,
    Constant,
    DgpConfig,
    Identity,
    Product,
    Step,
    Uniform,
    expr_from_dict,
    generate,
    make_bias_stress_dgp,
    make_homoskedastic_dgp,
    paper_dgp,
    population_moments,
    read_csv,
    write_csv,
)


def test_paper_dgp_outcome_rate():
    # E[y] = E[x] = 0.5 under the benchmark DGP; pool 500 data sets of 2002 rows
    total = 0
    n = 0
    for r in range(500):
        d = generate(paper_dgp(seed=r))
        total += int(d.outcome.sum())
        n += d.n
    assert n == 1_001_000
    assert abs(total / n - 0.5) <= 0.002


def test_zero_probability_gives_zero_outcomes():
    cfg = DgpConfig(1000, 0.5, Constant(0.0), Constant(0.0), seed=4)
    assert generate(cfg).outcome.sum() == 0


def test_same_seed_bit_identical():
    a = generate(paper_dgp(seed=11))
    b = generate(paper_dgp(seed=11))
    for field in ("features", "treatment", "outcome", "mu", "tau"):
        np.testing.assert_array_equal(getattr(a, field), getattr(b, field))
    assert not np.array_equal(a.features, generate(paper_dgp(seed=12)).features)


def test_generate_rejects_tiny_n():
    with pytest.raises(ConfigError):
        generate(DgpConfig(1, 0.5, Identity(0), Constant(0.0)))


@pytest.mark.parametrize(
    "mu, tau",
    [
        (Identity(0), Constant(0.2)),  # mu + tau reaches 1.2
        (Affine((1.0,), -0.5), Constant(0.0)),  # mu goes negative
    ],
)
def test_config_rejects_out_of_range_probabilities(mu, tau):
    with pytest.raises(ConfigError):
        DgpConfig(100, 0.5, mu, tau)


def test_tiny_float_excess_is_clamped():
    cfg = DgpConfig(100, 0.5, Constant(1.0 + 1e-13), Constant(0.0))
    assert generate(cfg).outcome.all()


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1])
def test_config_rejects_bad_treatment_probability(p):
    with pytest.raises(ConfigError):
        DgpConfig(100, p, Identity(0), Constant(0.0))


def test_expression_references_missing_feature():
    with pytest.raises(ConfigError):
        DgpConfig(100, 0.5, Identity(1), Constant(0.0), n_features=1)


def test_expressions_evaluate():
    X = np.array([[0.2, 0.5], [0.95, 0.1]])
    np.testing.assert_allclose(Affine((0.5, 1.0), 0.1).evaluate(X), [0.7, 0.675])
    np.testing.assert_array_equal(Step(0, 0.9, Constant(0.0), Constant(1.0)).evaluate(X), [0.0, 1.0])
    np.testing.assert_allclose(Product((Identity(0), Identity(1))).evaluate(X), [0.1, 0.095])


def test_step_threshold_goes_above():
    X = np.array([[0.9]])
    assert Step(0, 0.9, Constant(0.0), Constant(1.0)).evaluate(X)[0] == 1.0


def test_config_json_round_trip():
    cfg = DgpConfig(
        500,
        0.3,
        Step(0, 0.5, Product((Constant(0.5), Identity(1))), Constant(0.4)),
        Affine((0.0, 0.1), 0.05),
        n_features=2,
        feature_distribution=(Uniform(0.0, 1.0), Bernoulli(0.3)),
        seed=9,
    )
    again = DgpConfig.from_json(cfg.to_json())
    assert again == cfg
    assert json.loads(again.to_json()) == json.loads(cfg.to_json())
    np.testing.assert_array_equal(generate(again).outcome, generate(cfg).outcome)


def test_unknown_expression_type():
    with pytest.raises(ConfigError):
        expr_from_dict({"type": "sine", "feature": 0})


def test_bias_stress_population_ate():
    m = population_moments(make_bias_stress_dgp(0.05, 0.30, seed=3))
    assert abs(m["mean_tau"] - 0.03) <= 0.001


def test_bias_stress_tiny_effect():
    m = population_moments(make_bias_stress_dgp(0.05, 1e-9, seed=3), n=100_000)
    assert 0.0 < m["mean_tau"] < 1e-9


def test_bias_stress_noise_higher_where_effect_is():
    d = generate(make_bias_stress_dgp(0.05, 0.30, seed=1, n_observations=1_000_000))
    noise = d.mu * (1 - d.mu)
    assert noise[d.tau > 0].mean() > noise[d.tau == 0].mean()


@pytest.mark.parametrize(
    "base, effect",
    [(0.0, 0.3), (0.5, 0.3), (0.05, 0.0), (0.05, -0.1), (0.3, 0.8)],
)
def test_bias_stress_rejects_bad_parameters(base, effect):
    with pytest.raises(ValueError):
        make_bias_stress_dgp(base, effect, seed=0)


def test_homoskedastic_dgp_constant_mu():
    d = generate(make_homoskedastic_dgp(seed=0, n_observations=1000))
    assert np.all(d.mu == 0.3)
    np.testing.assert_allclose(d.tau, 0.1 * d.features[:, 0])


@pytest.mark.parametrize(
    "cfg",
    [
        paper_dgp(seed=5),
        DgpConfig(1, 0.3, Affine((0.2, 0.1), 0.1), Product((Identity(0), Constant(0.3))), 2),
        make_bias_stress_dgp(0.05, 0.3, seed=5),
    ],
    ids=["paper", "affine", "stress"],
)
def test_population_convergence(cfg):
    cfg = DgpConfig.from_dict({**cfg.to_dict(), "n_observations": 1_000_000, "seed": 77})
    d = generate(cfg)
    m = population_moments(cfg, n=2_000_000, seed=5)
    ctrl = d.outcome[d.treatment == 0]
    se = math.sqrt(m["mean_mu"] * (1 - m["mean_mu"]) / ctrl.size)
    assert abs(ctrl.mean() - m["mean_mu"]) <= 3 * se
    t = d.outcome[d.treatment == 1]
    se_ate = math.sqrt(t.var() / t.size + ctrl.var() / ctrl.size)
    assert abs(d.difference_in_means() - m["mean_tau"]) <= 3 * se_ate


def test_noise_matches_bernoulli_variance_in_stratum():
    d = generate(DgpConfig.from_dict({**paper_dgp().to_dict(), "n_observations": 1_000_000, "seed": 8}))
    ctrl = d.treatment == 0
    stratum = ctrl & (d.mu > 0.29) & (d.mu < 0.31)
    y = d.outcome[stratum].astype(float)
    target = float(np.mean(d.mu[stratum] * (1 - d.mu[stratum])))
    # var of a sample variance of Bernoulli draws is about (m4 - s^4)/n, bounded by 0.25^2/n
    se = math.sqrt(0.0625 / y.size)
    assert abs(y.var() - target) <= 3 * se


def test_csv_round_trip(tmp_path):
    d = generate(DgpConfig(300, 0.4, Affine((0.3, 0.2), 0.1), Constant(0.05), 2, seed=2))
    path = tmp_path / "d.csv"
    write_csv(d, path)
    header = path.read_text().splitlines()[0]
    assert header == "f0,f1,treatment,outcome,mu,tau"
    back = read_csv(path, treatment_probability=0.4)
    np.testing.assert_array_equal(back.features, d.features)
    np.testing.assert_array_equal(back.treatment, d.treatment)
    np.testing.assert_array_equal(back.outcome, d.outcome)
    np.testing.assert_array_equal(back.mu, d.mu)
    np.testing.assert_array_equal(back.tau, d.tau)


def test_csv_without_ground_truth(tmp_path):
    d = generate(paper_dgp(seed=1))
    path = tmp_path / "d.csv"
    write_csv(d, path, ground_truth=False)
    assert path.read_text().splitlines()[0] == "f0,treatment,outcome"


def test_dataset_is_read_only():
    d = generate(paper_dgp(seed=1))
    with pytest.raises(ValueError):
        d.outcome[0] = 1


@settings(max_examples=30, deadline=None)
@given(
    a=st.floats(0.0, 0.5),
    b=st.floats(0.0, 0.5),
    t=st.floats(-0.2, 0.2),
    seed=st.integers(0, 2**64 - 1),
)
def test_generated_rows_respect_model(a, b, t, seed):
    # mu = a + b*x stays in [0, 1]; tau shifted so mu + tau stays in range too
    tau = max(-a, min(t, 1 - a - b))
    cfg = DgpConfig(200, 0.5, Affine((b,), a), Constant(tau), seed=seed)
    d = generate(cfg)
    assert set(np.unique(d.outcome)) <= {0, 1}
    prob = d.mu + d.treatment * d.tau
    # a row can only succeed where its probability is positive, and only fail where it is below one
    assert np.all(prob[d.outcome == 1] > 0)
    assert np.all(prob[d.outcome == 0] < 1)
