"""Ensemble recursions, weighted estimators, ESS, resampling."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neqsmc import kernels, models, smc


def run_linear_protocol(model, kernel, theta0, theta1, n_walkers, n_steps,
                        seed, tau=None):
    ens = smc.init_ensemble(model, theta0, n_walkers, np.random.default_rng(seed))
    for k in range(n_steps):
        th_k = theta0 + (k / n_steps) * (theta1 - theta0)
        th_k1 = theta0 + ((k + 1) / n_steps) * (theta1 - theta0)
        ens = smc.advance(ens, kernel, th_k, th_k1,
                          np.random.default_rng([seed, 1 + k]))
        if tau is not None and smc.ess(ens) < tau * n_walkers:
            ens = smc.systematic_resample(ens, np.random.default_rng([seed, 10**6 + k]))
    return ens


# ---------------------------------------------------------------------------
# log_mean_exp
# ---------------------------------------------------------------------------


def test_log_mean_exp_values():
    assert smc.log_mean_exp([0.0, 0.0]) == 0.0
    assert smc.log_mean_exp([3.7]) == 3.7
    assert smc.log_mean_exp([1000.0, 1000.0]) == 1000.0
    assert smc.log_mean_exp([-np.inf, -np.inf]) == -np.inf
    got = smc.log_mean_exp([np.log(1.0), np.log(3.0)])
    assert got == pytest.approx(np.log(2.0), abs=1e-14)
    with pytest.raises(ValueError, match="empty"):
        smc.log_mean_exp([])


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-50, 50), min_size=1, max_size=30),
    st.floats(-100, 100),
)
def test_property_log_mean_exp_shift(values, c):
    got = smc.log_mean_exp([v + c for v in values])
    want = smc.log_mean_exp(values) + c
    assert got == pytest.approx(want, abs=1e-9)


# ---------------------------------------------------------------------------
# init
# ---------------------------------------------------------------------------


def test_init_ensemble_weights_and_log_z():
    m = models.make_model("bernoulli-rbm", d_v=4, d_h=3)
    theta = np.zeros(m.n_params)
    ens = smc.init_ensemble(m, theta, 5000, np.random.default_rng(0))
    assert ens.n_walkers == 5000
    np.testing.assert_array_equal(ens.log_weights, 0.0)
    assert smc.ess(ens) == pytest.approx(5000.0, abs=1e-9)
    assert smc.estimate_log_z(ens) == ens.log_z_ref
    assert ens.log_z_ref == pytest.approx(m.log_z_reference(theta), abs=1e-14)
    v = ens.states[0]
    se = 0.5 / np.sqrt(5000)
    assert np.all(np.abs(v.mean(axis=0) - 0.5) < 3 * se)


def test_init_ensemble_validation():
    m = models.make_model("gaussian", d=2)
    with pytest.raises(ValueError, match="walkers"):
        smc.init_ensemble(m, np.zeros(4), 1, np.random.default_rng(0))
    rbm = models.make_model("bernoulli-rbm", d_v=2, d_h=2)
    coupled = rbm.pack(W=[[0.2, 0], [0, 0]], b=[0, 0], c=[0, 0])
    with pytest.raises(ValueError, match="W = 0"):
        smc.init_ensemble(rbm, coupled, 10, np.random.default_rng(0))


def test_walker_view():
    m = models.make_model("gaussian", d=2)
    ens = smc.init_ensemble(m, np.zeros(4), 3, np.random.default_rng(1))
    ws = ens.walkers
    assert len(ws) == 3
    assert all(w.a == 0.0 for w in ws)
    np.testing.assert_array_equal(ws[1].x, ens.states[1])


# ---------------------------------------------------------------------------
# advance
# ---------------------------------------------------------------------------


def test_advance_constant_theta_gibbs_keeps_weights():
    m = models.make_model("bernoulli-rbm", d_v=4, d_h=3)
    theta = m.pack(W=np.zeros((4, 3)), b=0.3 * np.ones(4), c=np.zeros(3))
    ker = kernels.GibbsKernel(model=m)
    ens = smc.init_ensemble(m, theta, 200, np.random.default_rng(2))
    # wander off the factorized point while keeping theta fixed
    theta_run = m.pack(W=0.6 * np.random.default_rng(3).standard_normal((4, 3)),
                       b=np.zeros(4), c=np.zeros(3))
    for k in range(100):
        ens = smc.advance(ens, ker, theta_run, theta_run,
                          np.random.default_rng([4, k]))
    assert float(np.max(np.abs(ens.log_weights))) < 1e-10
    assert ens.step_count == 100


def test_advance_constant_theta_ula_unit_mean_weight():
    m = models.make_model("gaussian", d=2)
    theta = np.zeros(4)
    ker = kernels.UlaKernel(model=m, h=0.01)
    ens = smc.init_ensemble(m, theta, 10**4, np.random.default_rng(5))
    for k in range(50):
        ens = smc.advance(ens, ker, theta, theta, np.random.default_rng([6, k]))
    w = np.exp(ens.log_weights)
    se = float(np.std(w, ddof=1) / np.sqrt(w.size))
    assert abs(float(w.mean()) - 1.0) < 3 * se


def test_advance_scale_protocol_log_z():
    m = models.make_model("gaussian", d=2)
    theta0 = m.pack(mean=[0.0, 0.0], log_scale=[0.0, 0.0])
    theta1 = m.pack(mean=[0.0, 0.0], log_scale=[np.log(0.5)] * 2)
    ker = kernels.UlaKernel(model=m, h=1e-3)
    ens = run_linear_protocol(m, ker, theta0, theta1, 10**4, 200, seed=7)
    want = 2 * np.log(0.5)
    got = smc.estimate_log_z(ens) - ens.log_z_ref
    se = smc.estimate_log_z_std_error(ens)
    assert abs(got - want) < 3 * se


def test_advance_mean_shift_protocol_log_z_constant():
    m = models.make_model("gaussian", d=1)
    theta0 = m.pack(mean=[0.0], log_scale=[0.0])
    theta1 = m.pack(mean=[2.0], log_scale=[0.0])
    ker = kernels.UlaKernel(model=m, h=1e-3)
    ens = run_linear_protocol(m, ker, theta0, theta1, 5000, 200, seed=8)
    got = smc.estimate_log_z(ens) - ens.log_z_ref
    se = smc.estimate_log_z_std_error(ens)
    assert abs(got - 0.0) < 3 * se
    # the weights genuinely fluctuated along the way
    assert float(np.std(ens.log_weights)) > 1e-4


class _PoisonKernel:
    """Wraps a kernel and corrupts one walker's increment."""

    def __init__(self, inner, bad_index):
        self.inner = inner
        self.bad_index = bad_index

    def move(self, theta_k, theta_k1, states, rng):
        new, incr = self.inner.move(theta_k, theta_k1, states, rng)
        incr = np.asarray(incr, dtype=float).copy()
        incr[self.bad_index] = np.nan
        return new, incr


def test_advance_reports_nonfinite_walker():
    m = models.make_model("gaussian", d=1)
    ker = _PoisonKernel(kernels.UlaKernel(model=m, h=0.01), bad_index=3)
    ens = smc.init_ensemble(m, np.zeros(2), 10, np.random.default_rng(9))
    with pytest.raises(ValueError, match="walker 3 at step 0"):
        smc.advance(ens, ker, np.zeros(2), np.zeros(2), np.random.default_rng(10))


def test_advance_leaves_input_ensemble_unchanged():
    m = models.make_model("gaussian", d=1)
    ker = kernels.UlaKernel(model=m, h=0.01)
    ens = smc.init_ensemble(m, np.zeros(2), 10, np.random.default_rng(11))
    before = ens.states.copy()
    smc.advance(ens, ker, np.zeros(2), np.zeros(2), np.random.default_rng(12))
    np.testing.assert_array_equal(ens.states, before)
    np.testing.assert_array_equal(ens.log_weights, 0.0)


# ---------------------------------------------------------------------------
# reweighted expectation
# ---------------------------------------------------------------------------


def test_reweighted_expectation_self_normalizes():
    m = models.make_model("gaussian", d=1)
    ens = smc.init_ensemble(m, np.zeros(2), 100, np.random.default_rng(13))
    ens.log_weights = 10 * np.random.default_rng(14).standard_normal(100)
    est = smc.reweighted_expectation(ens, lambda s: np.ones(100))
    assert est.value == 1.0
    assert est.std_error == 0.0
    assert 1.0 <= est.ess <= 100.0
    assert est.n_effective_fraction == pytest.approx(est.ess / 100.0)


def test_reweighted_expectation_equal_weights_plain_mean():
    m = models.make_model("gaussian", d=1)
    ens = smc.init_ensemble(m, np.zeros(2), 500, np.random.default_rng(15))
    est = smc.reweighted_expectation(ens, lambda s: s[:, 0])
    assert est.value == pytest.approx(float(ens.states.mean()), abs=1e-12)


def test_reweighted_expectation_hand_computed():
    m = models.make_model("gaussian", d=1)
    ens = smc.init_ensemble(m, np.zeros(2), 3, np.random.default_rng(16))
    ens.states = np.array([[1.0], [2.0], [4.0]])
    ens.log_weights = np.log([0.2, 0.3, 0.5])
    est = smc.reweighted_expectation(ens, lambda s: s[:, 0])
    want = 0.2 * 1 + 0.3 * 2 + 0.5 * 4
    assert est.value == pytest.approx(want, abs=1e-12)
    se_want = np.sqrt(
        (0.2 * (1 - want)) ** 2 + (0.3 * (2 - want)) ** 2 + (0.5 * (4 - want)) ** 2
    )
    assert est.std_error == pytest.approx(se_want, abs=1e-12)


def test_reweighted_expectation_vector_observable():
    m = models.make_model("gaussian", d=2)
    ens = smc.init_ensemble(m, np.zeros(4), 50, np.random.default_rng(17))
    est = smc.reweighted_expectation(ens, lambda s: np.stack([s[:, 0], s[:, 1] ** 2], axis=1))
    assert est.value.shape == (2,)
    assert est.std_error.shape == (2,)
    with pytest.raises(ValueError, match="one row per walker"):
        smc.reweighted_expectation(ens, lambda s: np.ones(7))


def test_reweighted_expectation_matches_oracle_after_protocol():
    m = models.make_model("bernoulli-rbm", d_v=6, d_h=4)
    rng = np.random.default_rng(18)
    theta0 = m.pack(W=np.zeros((6, 4)), b=rng.standard_normal(6),
                    c=rng.standard_normal(4))
    theta1 = 0.5 * rng.standard_normal(m.n_params)
    ker = kernels.GibbsKernel(model=m)
    ens = run_linear_protocol(m, ker, theta0, theta1, 4000, 60, seed=19)
    want = np.asarray(
        models.enumerate_oracle(m, theta1, ["grad_theta_energy"]).expectations[
            "grad_theta_energy"
        ]
    ).ravel()
    est = smc.reweighted_expectation(ens, lambda s: m.grad_theta(theta1, s))
    assert np.all(np.abs(est.value - want) <= 3 * np.maximum(est.std_error, 1e-12))


def test_degenerate_weights_error():
    m = models.make_model("gaussian", d=1)
    ens = smc.init_ensemble(m, np.zeros(2), 10, np.random.default_rng(20))
    ens.log_weights = np.full(10, -np.inf)
    with pytest.raises(smc.DegenerateWeightsError):
        smc.reweighted_expectation(ens, lambda s: s[:, 0])
    with pytest.raises(smc.DegenerateWeightsError):
        smc.estimate_log_z(ens)


# ---------------------------------------------------------------------------
# ess
# ---------------------------------------------------------------------------


def test_ess_uniform_and_domination():
    m = models.make_model("gaussian", d=1)
    ens = smc.init_ensemble(m, np.zeros(2), 1000, np.random.default_rng(21))
    assert smc.ess(ens) == pytest.approx(1000.0, abs=1e-9)
    ens.log_weights = np.zeros(1000)
    ens.log_weights[0] = 100.0
    assert smc.ess(ens) == pytest.approx(1.0, abs=1e-6)


def test_ess_half_double_weight():
    # half the walkers at weight 2, half at weight 1: ESS = 0.9 N
    m = models.make_model("gaussian", d=1)
    n = 400
    ens = smc.init_ensemble(m, np.zeros(2), n, np.random.default_rng(22))
    ens.log_weights = np.concatenate([np.full(n // 2, np.log(2.0)), np.zeros(n // 2)])
    assert smc.ess(ens) == pytest.approx(0.9 * n, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=2, max_size=50))
def test_property_ess_bounds(log_weights):
    got = smc._ess_logw(np.asarray(log_weights))
    n = len(log_weights)
    assert 1.0 - 1e-9 <= got <= n + 1e-9


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------


def test_resample_log_z_bit_identical():
    m = models.make_model("gaussian", d=1)
    ens = smc.init_ensemble(m, np.zeros(2), 777, np.random.default_rng(23))
    ens.log_weights = 0.7 * np.random.default_rng(24).standard_normal(777)
    before = smc.estimate_log_z(ens)
    res = smc.systematic_resample(ens, np.random.default_rng(25))
    assert smc.estimate_log_z(res) == before
    assert res.n_resamples == 1
    assert smc.ess(res) == pytest.approx(777.0, abs=1e-9)
    np.testing.assert_array_equal(res.log_weights, 0.0)
    # chain a second event: still bit-identical
    res.log_weights = 0.5 * np.random.default_rng(26).standard_normal(777)
    before2 = smc.estimate_log_z(res)
    res2 = smc.systematic_resample(res, np.random.default_rng(27))
    assert smc.estimate_log_z(res2) == before2
    assert res2.n_resamples == 2
    assert res2.log_z_var_acc > res.log_z_var_acc


def test_resample_uniform_weights_identity():
    m = models.make_model("gaussian", d=1)
    ens = smc.init_ensemble(m, np.zeros(2), 100, np.random.default_rng(28))
    res = smc.systematic_resample(ens, np.random.default_rng(29))
    # equal weights: the comb hits each slot exactly once
    np.testing.assert_array_equal(res.states, ens.states)
    assert smc.estimate_log_z(res) == smc.estimate_log_z(ens)


def test_resample_offspring_unbiased():
    # averaged over independent comb offsets, offspring counts are
    # proportional to the weights
    m = models.make_model("gaussian", d=1)
    n = 1000
    ens = smc.init_ensemble(m, np.zeros(2), n, np.random.default_rng(30))
    ens.states = np.arange(n, dtype=float)[:, None] % 4
    w = np.array([0.4, 0.3, 0.2, 0.1])
    per = np.log(w[(np.arange(n) % 4)])
    ens.log_weights = per
    group_w = np.exp(per).reshape(-1, 4).sum(axis=0)
    want = n * group_w / group_w.sum()
    reps = 200
    all_counts = np.zeros((reps, 4))
    for r in range(reps):
        res = smc.systematic_resample(ens, np.random.default_rng([31, r]))
        all_counts[r] = np.bincount(res.states[:, 0].astype(int), minlength=4)
        assert all_counts[r].sum() == n
    mean = all_counts.mean(axis=0)
    se = all_counts.std(axis=0, ddof=1) / np.sqrt(reps)
    assert np.all(np.abs(mean - want) < 3.5 * np.maximum(se, 0.05))


def test_resample_tuple_states_stay_aligned():
    rbm = models.make_model("bernoulli-rbm", d_v=2, d_h=2)
    ens2 = smc.init_ensemble(rbm, np.zeros(rbm.n_params), 50,
                             np.random.default_rng(32))
    ens2.log_weights = np.random.default_rng(33).standard_normal(50)
    joined = np.concatenate(ens2.states, axis=1)
    res2 = smc.systematic_resample(ens2, np.random.default_rng(34))
    joined_res = np.concatenate(res2.states, axis=1)
    # every offspring row is one of the parent rows
    parent_rows = {tuple(r) for r in joined}
    assert all(tuple(r) in parent_rows for r in joined_res)


def test_resample_per_walker_offspring_within_one():
    m = models.make_model("gaussian", d=1)
    n = 1000
    ens = smc.init_ensemble(m, np.zeros(2), n, np.random.default_rng(35))
    ens.states = np.arange(n, dtype=float)[:, None]
    ens.log_weights = 0.8 * np.random.default_rng(36).standard_normal(n)
    wbar = np.exp(ens.log_weights - ens.log_weights.max())
    wbar = wbar / wbar.sum()
    res = smc.systematic_resample(ens, np.random.default_rng(37))
    counts = np.bincount(res.states[:, 0].astype(int), minlength=n)
    assert np.all(np.abs(counts - n * wbar) < 1.0 + 1e-9)


def test_resample_degenerate_aborts():
    m = models.make_model("gaussian", d=1)
    ens = smc.init_ensemble(m, np.zeros(2), 100, np.random.default_rng(38))
    ens.log_weights = np.full(100, -2000.0)
    ens.log_weights[0] = 0.0
    with pytest.raises(smc.DegenerateWeightsError, match="aggressive"):
        smc.systematic_resample(ens, np.random.default_rng(39))


def test_resampled_and_plain_runs_both_match_oracle():
    m = models.make_model("bernoulli-rbm", d_v=5, d_h=3)
    rng = np.random.default_rng(40)
    theta0 = m.pack(W=np.zeros((5, 3)), b=rng.standard_normal(5),
                    c=rng.standard_normal(3))
    theta1 = 1.2 * rng.standard_normal(m.n_params)
    ker = kernels.GibbsKernel(model=m)
    want = models.enumerate_oracle(m, theta1).log_z
    plain = run_linear_protocol(m, ker, theta0, theta1, 4000, 50, seed=41)
    resam = run_linear_protocol(m, ker, theta0, theta1, 4000, 50, seed=41,
                                tau=0.95)
    assert resam.n_resamples > 0
    for ens in (plain, resam):
        se = smc.estimate_log_z_std_error(ens)
        assert abs(smc.estimate_log_z(ens) - want) < 3 * se


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def test_ensemble_to_csv(tmp_path):
    m = models.make_model("bernoulli-rbm", d_v=2, d_h=2)
    ens = smc.init_ensemble(m, np.zeros(m.n_params), 5, np.random.default_rng(42))
    path = tmp_path / "ens.csv"
    smc.ensemble_to_csv(path, ens, columns=["v0", "v1", "h0", "h1"])
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "walker,v0,v1,h0,h1,a"
    assert len(lines) == 6
    with pytest.raises(ValueError, match="column names"):
        smc.ensemble_to_csv(path, ens, columns=["only", "two"])
    # same ensemble writes identical bytes
    path2 = tmp_path / "ens2.csv"
    smc.ensemble_to_csv(path2, ens, columns=["v0", "v1", "h0", "h1"])
    assert path.read_bytes() == path2.read_bytes()


def test_ensemble_summary_keys():
    m = models.make_model("gaussian", d=1)
    ens = smc.init_ensemble(m, np.zeros(2), 10, np.random.default_rng(43))
    summ = smc.ensemble_summary(ens)
    assert summ == {
        "k": 0,
        "n_walkers": 10,
        "ess": pytest.approx(10.0),
        "log_z": pytest.approx(ens.log_z_ref),
        "log_z_std_error": pytest.approx(0.0),
        "n_resamples": 0,
    }
