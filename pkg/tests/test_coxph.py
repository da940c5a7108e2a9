import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_records
from survfusion import coxph, nn, synthetic
from survfusion.core import records_to_arrays
from survfusion.errors import ConvergenceError, InputError


def loop_nll(beta, X, time, event):
    """Breslow partial likelihood written patient by patient."""
    total = 0.0
    for i in range(len(time)):
        if event[i]:
            at_risk = time >= time[i]
            total -= X[i] @ beta - math.log(np.sum(np.exp(X[at_risk] @ beta)))
    return total


def random_case(seed, n=8, d=2, ties=True):
    r = np.random.default_rng(seed)
    time = r.integers(1, 5, n).astype(float) if ties else r.exponential(5, n) + 0.1
    event = r.random(n) < 0.7
    event[0] = True
    return r.standard_normal(d), r.standard_normal((n, d)), time, event


def test_value_at_zero_is_log_risk_set_sizes():
    time = np.array([1.0, 2.0, 2.0, 3.0, 5.0])
    event = np.array([1, 1, 0, 1, 0], dtype=bool)
    value, _, _ = coxph.neg_log_partial_likelihood(np.zeros(1), np.ones((5, 1)), time, event)
    assert value == pytest.approx(math.log(5) + math.log(4) + math.log(2), abs=1e-12)


def test_two_patient_hand_expansion():
    X = np.array([[1.0], [0.0]])
    time, event = np.array([1.0, 2.0]), np.array([True, True])
    for b in (0.0, 0.7, -1.2):
        value, _, _ = coxph.neg_log_partial_likelihood(np.array([b]), X, time, event)
        assert value == pytest.approx(math.log1p(math.exp(-b)), abs=1e-12)
    assert coxph.neg_log_partial_likelihood(np.zeros(1), X, time, event)[0] == pytest.approx(
        math.log(2))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.booleans())
def test_value_matches_loop_oracle(seed, ties):
    beta, X, time, event = random_case(seed, ties=ties)
    value = coxph.neg_log_partial_likelihood(beta, X, time, event)[0]
    assert value == pytest.approx(loop_nll(beta, X, time, event), rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("seed", range(8))
def test_gradient_and_hessian_match_finite_differences(seed):
    beta, X, time, event = random_case(seed, n=6 + seed % 5)
    _, grad, hess = coxph.neg_log_partial_likelihood(beta, X, time, event)
    h = 1e-5
    num_g = np.zeros_like(beta)
    num_h = np.zeros((beta.size, beta.size))
    for j in range(beta.size):
        e = np.zeros_like(beta)
        e[j] = h
        up = coxph.neg_log_partial_likelihood(beta + e, X, time, event)
        down = coxph.neg_log_partial_likelihood(beta - e, X, time, event)
        num_g[j] = (up[0] - down[0]) / (2 * h)
        num_h[:, j] = (up[1] - down[1]) / (2 * h)
    assert nn.rel_error(grad, num_g).max() < 1e-6
    assert nn.rel_error(hess, num_h).max() < 1e-6


def test_zero_events_rejected():
    with pytest.raises(InputError):
        coxph.neg_log_partial_likelihood(np.zeros(1), np.ones((2, 1)), np.array([1.0, 2.0]),
                                         np.array([False, False]))


def cohort(n, seed=0, beta=(1.0, -0.5, 0.0), censoring=0.3):
    spec = synthetic.SyntheticSpec(n=n, d=len(beta), beta_true=beta, seed=seed)
    spec.c_max = synthetic.c_max_for_censoring(spec, censoring)
    return synthetic.generate_tabular(spec)[0]


def test_recovers_true_beta():
    model = coxph.fit_cox(cohort(2000))
    assert np.all(np.abs(model.beta - np.array([1.0, -0.5, 0.0])) < 0.15)
    assert model.converged


def test_converges_quickly_on_moderate_cohort():
    model = coxph.fit_cox(cohort(200, seed=3))
    assert model.iterations <= 10
    assert model.grad_norm < 1e-8
    assert model.trace[0]["iter"] == 0 and len(model.trace) == model.iterations + 1


def separated():
    x = np.array([1, 1, 1, 1, 0, 0, 0, 0], dtype=float)[:, None]
    return make_records([1, 2, 3, 4, 5, 6, 7, 8], [1] * 8, x)


def test_separation_detected_and_ridge_rescues():
    with pytest.raises(ConvergenceError, match="ridge"):
        coxph.fit_cox(separated())
    model = coxph.fit_cox(separated(), coxph.CoxConfig(ridge=0.1))
    assert np.isfinite(model.beta[0]) and model.beta[0] > 0


def test_input_errors():
    with pytest.raises(InputError):
        coxph.fit_cox(make_records([1, 2, 3], [1, 0, 0], np.arange(3.0)[:, None]))
    X = np.column_stack([np.arange(5.0), np.ones(5)])
    with pytest.raises(InputError, match="constant"):
        coxph.fit_cox(make_records([1, 2, 3, 4, 5], [1] * 5, X))


def test_predict_risk_examples():
    model = coxph.fit_cox(cohort(100, seed=1, beta=(1.0, -1.0)))
    model.beta = np.array([1.0, -1.0])
    assert coxph.linear_predictor(model, [[0.0, 0.0]])[0] == 0.0
    assert coxph.linear_predictor(model, [[2.0, 1.0]])[0] == 1.0
    with pytest.raises(InputError):
        coxph.linear_predictor(model, [[1.0, 2.0, 3.0]])
    risks = coxph.predict_risk(model, make_records([1.0], [1], [[2.0, 1.0]]))
    assert risks[0].patient_id == "p0" and risks[0].value == 1.0


def shifted(records, shift=None, time_map=None):
    X, t, e = records_to_arrays(records)
    X = X + (shift if shift is not None else 0.0)
    t = time_map(t) if time_map else t
    return make_records(t, e, X)


def test_invariances():
    recs = cohort(300, seed=5)
    base = coxph.fit_cox(recs)
    moved = coxph.fit_cox(shifted(recs, shift=np.array([3.0, -7.0, 0.5])))
    np.testing.assert_allclose(moved.beta, base.beta, atol=1e-6)
    X, _, _ = records_to_arrays(recs)
    assert np.array_equal(np.argsort(coxph.linear_predictor(base, X)),
                          np.argsort(coxph.linear_predictor(moved, X + [3.0, -7.0, 0.5])))
    centered = coxph.fit_cox(shifted(recs, shift=-X.mean(axis=0)))
    np.testing.assert_allclose(centered.beta, base.beta, atol=1e-6)
    warped = coxph.fit_cox(shifted(recs, time_map=lambda t: t ** 3 + np.sqrt(t)))
    np.testing.assert_allclose(warped.beta, base.beta, atol=1e-8)


def test_baseline_properties():
    recs = cohort(200, seed=7)
    model = coxph.fit_cox(recs)
    assert np.all(np.diff(model.baseline_cumhaz) >= 0) and model.baseline_cumhaz[0] > 0
    s0 = model.baseline_survival()
    assert s0.probabilities[0] == 1 and s0.probabilities.min() >= 0
    assert s0(0.0) == 1.0


def test_breslow_at_zero_beta_is_nelson_aalen():
    time = np.array([1.0, 2.0, 2.0, 3.0, 5.0, 6.0])
    event = np.array([1, 1, 1, 0, 1, 0], dtype=bool)
    X = np.random.default_rng(0).standard_normal((6, 2))
    t, H = coxph.breslow_baseline(np.zeros(2), X, time, event, X.mean(axis=0))
    assert t.tolist() == [1.0, 2.0, 5.0]
    np.testing.assert_allclose(H, np.cumsum([1 / 6, 2 / 5, 1 / 2]), atol=1e-15)


def test_partial_effects():
    recs = cohort(300, seed=9)
    model = coxph.fit_cox(recs, feature_names=["x1", "x2", "x3"])
    X, _, _ = records_to_arrays(recs)
    mean_curve = coxph.partial_effect_curves(model, recs, "x1", [X[:, 0].mean()])[0]
    assert np.array_equal(mean_curve.probabilities, model.baseline_survival().probabilities)
    low, high = coxph.partial_effect_curves(model, recs, "x1", [-1.0, 1.0])
    assert model.beta[0] > 0
    assert np.all(high.probabilities <= low.probabilities)
    with pytest.raises(InputError, match="unknown covariate"):
        coxph.partial_effect_curves(model, recs, "Age", [0.0])


def test_metastasis_levels_order_survival():
    r = np.random.default_rng(4)
    n = 400
    m_stage = r.integers(0, 2, n).astype(float)  # ordinal M0=0, M1=1
    age = r.standard_normal(n)
    t = r.exponential(1.0 / (0.01 * np.exp(1.2 * m_stage + 0.3 * age)))
    c = r.uniform(0, 300, n)
    recs = make_records(np.minimum(t, c), t <= c, np.column_stack([m_stage, age]))
    model = coxph.fit_cox(recs, feature_names=["M-stage", "Age"])
    m0, m1 = coxph.partial_effect_curves(model, recs, "M-stage", [0.0, 1.0])
    assert np.all(m1.probabilities <= m0.probabilities)
    assert np.any(m1.probabilities < m0.probabilities)


def test_json_round_trip():
    model = coxph.fit_cox(cohort(100, seed=2), feature_names=["a", "b", "c"])
    again = coxph.CoxModel.from_dict(model.to_dict())
    assert np.array_equal(again.beta, model.beta)
    assert np.array_equal(again.baseline_cumhaz, model.baseline_cumhaz)
    assert model.to_dict()["beta"]["b"] == model.beta[1]
