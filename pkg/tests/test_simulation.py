import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssq.core import initial_fit, psi
from ssq.errors import ConfigError
from ssq.rng import derive_seed, make_rng
from ssq.simulation import (SUPERVISED, DgpSpec, MethodResult, aggregate, fit_methods,
                            gen_dataset, mean_function, oracle_constants, run_replication,
                            run_study, summarize)
from ssq.nuisance.registry import make_strategy


# ---- data-generating models -------------------------------------------------

def test_mean_function_examples():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((7, 6))
    assert np.all(mean_function("a", x, 4) == 0)
    assert mean_function("b", np.ones(6), 4) == 4
    assert mean_function("e", np.zeros(6), 6) == 0


def test_mean_function_formulas():
    x = np.array([1.0, -2.0, 0.5, 3.0, 7.0])
    q = 4
    s = 2.5
    assert mean_function("c", x, q) == pytest.approx(s + s * s / q)
    # last ceil(q/2) = 2 coordinates of x_q enter the second index
    assert mean_function("d", x, q) == pytest.approx(s * (1 + 2 * (0.5 + 3.0) / q))
    assert mean_function("e", x, q) == pytest.approx(s + (1 + 4 + 0.25 + 9) / 3)
    x3 = np.array([1.0, 2.0, 4.0])
    assert mean_function("d", x3, 3) == pytest.approx(7 * (1 + 2 * 6 / 3))


def test_mean_function_errors():
    with pytest.raises(ConfigError):
        mean_function("f", np.zeros(3), 2)
    with pytest.raises(ConfigError):
        mean_function("b", np.zeros(3), 4)
    with pytest.raises(ConfigError):
        DgpSpec("b", p=3, n=10, N=0, q=4)


def test_gen_dataset_examples():
    spec = DgpSpec("a", p=10, n=1000, N=3000)
    d = gen_dataset(spec, np.random.default_rng(1))
    assert (d.n, d.N, d.p) == (1000, 3000, 10)
    assert abs(d.labeled_y.mean()) < 0.1
    allx = np.vstack([d.labeled_x, d.unlabeled_x])
    assert np.all(np.abs(allx.mean(axis=0)) < 4 / math.sqrt(4000))
    again = gen_dataset(spec, np.random.default_rng(1))
    assert np.array_equal(d.labeled_y, again.labeled_y)
    assert np.array_equal(d.unlabeled_x, again.unlabeled_x)


def test_gen_dataset_conditional_law():
    spec = DgpSpec("c", p=3, n=20000, N=0)
    d = gen_dataset(spec, np.random.default_rng(2))
    resid = d.labeled_y - mean_function("c", d.labeled_x, 3)
    assert abs(resid.mean()) < 0.05 and abs(resid.var() - 1) < 0.05


# ---- oracle constants -------------------------------------------------------

def test_oracle_null_model():
    oc = oracle_constants(DgpSpec("a", p=10, n=500, N=5000), rng=np.random.default_rng(3))
    assert abs(oc.theta0) < 0.02
    assert oc.ore == pytest.approx(1.0, abs=1e-12)
    assert oc.sigma2_sup == 0.25


def test_oracle_linear_model_center():
    oc = oracle_constants(DgpSpec("b", p=20, n=500, N=5000), rng=np.random.default_rng(4))
    assert abs(oc.theta0) < 0.03
    assert oc.ore > 1


def test_oracle_closed_form_linear():
    # model b: m(X) ~ N(0, q), Y ~ N(0, q + 1), so var{Phi(-m(X))} is known in closed form
    from scipy.stats import multivariate_normal
    q = 4
    spec = DgpSpec("b", p=q, n=500, N=5000)
    oc = oracle_constants(spec, m_oracle=400_000, rng=np.random.default_rng(5))
    # E Phi(-M)^2 = P(Z1 < -M, Z2 < -M) = bivariate normal orthant with correlation q/(q+1)
    rho = q / (q + 1)
    second = multivariate_normal([0, 0], [[1, rho], [rho, 1]]).cdf([0, 0])
    var_cond = second - 0.25
    nu = spec.nu
    expected = 0.25 / ((1 - nu) * (0.25 - var_cond) + nu * 0.25)
    assert oc.ore == pytest.approx(expected, rel=0.02)


@pytest.mark.property
@settings(max_examples=20, deadline=None)
@given(st.sampled_from("abcde"), st.integers(1, 8), st.integers(0, 5000),
       st.floats(0.1, 0.9), st.integers(0, 2**31))
def test_efficient_variance_never_exceeds_supervised(model, p, N, tau, seed):
    spec = DgpSpec(model, p=p, n=100, N=N, tau=tau)
    oc = oracle_constants(spec, m_oracle=2000, rng=np.random.default_rng(seed))
    assert 0 <= oc.sigma2_eff <= oc.sigma2_sup
    assert oc.ore >= 1


def test_oracle_variance_ordering_across_models():
    ores = {m: oracle_constants(DgpSpec(m, p=10, n=500, N=5000), m_oracle=50_000,
                                rng=np.random.default_rng(6)).ore for m in "abcde"}
    assert ores["a"] == pytest.approx(1.0)
    assert all(ores[m] > 1.5 for m in "bcde")


# ---- replications -----------------------------------------------------------

def test_zero_strategy_without_unlabeled_is_newton_refined_supervised():
    spec = DgpSpec("b", p=3, n=200, N=0)
    seed = 17
    rep = run_replication(spec, ["zero"], K=5, seed=seed)
    data = gen_dataset(spec, make_rng(seed, 0))
    init = initial_fit(data, 0.5, 5, derive_seed(seed, 1))
    expected = init.theta_init - psi(data.labeled_y, init.theta_init, 0.5).mean() / init.f_hat.value
    assert rep.supervised.theta == init.theta_init
    assert rep.methods["zero"].theta == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_replication_is_deterministic():
    spec = DgpSpec("c", p=4, n=150, N=600)
    a = run_replication(spec, ["ks_ols", "logistic"], K=5, seed=3)
    b = run_replication(spec, ["ks_ols", "logistic"], K=5, seed=3)
    assert a == b


def test_method_results_do_not_depend_on_companions():
    spec = DgpSpec("b", p=4, n=150, N=600)
    alone = run_replication(spec, ["ks_ols"], K=5, seed=4)
    joint = run_replication(spec, ["logistic", "ks_ols"], K=5, seed=4)
    assert alone.methods["ks_ols"] == joint.methods["ks_ols"]
    assert alone.supervised == joint.supervised


def test_failed_method_is_recorded():
    spec = DgpSpec("b", p=2, n=40, N=100)
    data = gen_dataset(spec, np.random.default_rng(7))

    def make(token):
        if token == "broken":
            return make_strategy("oracle:none", 0.5)
        return make_strategy(token, 0.5)

    with pytest.raises(ConfigError):
        make("broken")
    sup, results = fit_methods(data, 0.5, ["zero", "forest"], make, K=2, seed=1)
    assert results["zero"].ok and results["forest"].ok

    # forest needs 2 * min_leaf rows per fold: 20-row folds with min_leaf 15 fail
    sup, results = fit_methods(data, 0.5, ["forest"],
                               lambda t: make_strategy(t, 0.5, min_leaf=15), K=2, seed=1)
    assert not results["forest"].ok and "DataError" in results["forest"].error
    assert sup.ok


@pytest.mark.slow
def test_ks_ols_beats_supervised_in_most_seeds():
    spec = DgpSpec("b", p=10, n=500, N=5000)
    oc = oracle_constants(spec, rng=np.random.default_rng(8))
    wins = 0
    for seed in range(100):
        rep = run_replication(spec, ["ks_ols"], seed=derive_seed(99, seed))
        wins += abs(rep.methods["ks_ols"].theta - oc.theta0) < abs(rep.supervised.theta - oc.theta0)
    assert wins >= 60


@pytest.mark.property
def test_study_identical_across_worker_counts():
    spec = DgpSpec("b", p=3, n=120, N=400)
    kw = dict(K=4, replications=6, master_seed=5, m_oracle=2000)
    one = run_study(spec, ["ks_ols", "zero"], workers=1, **kw)
    many = run_study(spec, ["ks_ols", "zero"], workers=4, **kw)
    assert one.as_dicts() == many.as_dicts()
    assert one.oracle == many.oracle


# ---- metrics ------------------------------------------------------------------

def _fake(theta, se=0.1, error=None):
    return MethodResult(theta, se, (theta - 2 * se, theta + 2 * se), error)


def test_summarize_hand_example():
    sup = [_fake(t) for t in (0.3, -0.1, 0.2, -0.4)]
    ss = [_fake(t, 0.05) for t in (0.1, 0.0, 0.05, -0.2)]
    out = summarize(ss, sup, 0.0)
    assert out["re"] == pytest.approx(np.mean([0.09, 0.01, 0.04, 0.16]) /
                                      np.mean([0.01, 0.0, 0.0025, 0.04]))
    assert out["ese"] == pytest.approx(np.std([0.1, 0.0, 0.05, -0.2], ddof=1))
    assert out["ase"] == pytest.approx(0.05)
    assert out["bias"] == pytest.approx(-0.0125)
    assert out["cr"] == 0.75          # 0.1 +- 0.1 and 0.05 +- 0.1 cover, -0.2 +- 0.1 misses
    assert out["replications"] == 4 and out["failures"] == 0


def test_summarize_excludes_failures_from_both_arms():
    sup = [_fake(t) for t in (1.0, 0.1, -0.1)]
    ss = [_fake(math.nan, error="NumericalError: boom"), _fake(0.05), _fake(-0.05)]
    out = summarize(ss, sup, 0.0)
    assert out["failures"] == 1 and out["replications"] == 2
    assert out["re"] == pytest.approx(0.01 / 0.0025)


def test_summarize_all_failed():
    out = summarize([_fake(math.nan, error="x")] * 3, [_fake(0.0)] * 3, 0.0)
    assert out["replications"] == 0 and math.isnan(out["re"])


def test_supervised_re_is_one_and_order_invariance():
    spec = DgpSpec("b", p=3, n=100, N=300)
    reps = [run_replication(spec, ["ks_ols"], K=4, seed=derive_seed(2, i), index=i)
            for i in range(8)]
    oc = oracle_constants(spec, m_oracle=2000, rng=np.random.default_rng(0))
    rows = aggregate(spec, ["ks_ols"], reps, oc)
    assert rows[0].method == SUPERVISED and rows[0].re == 1.0
    shuffled = reps[:]
    random.Random(1).shuffle(shuffled)
    assert aggregate(spec, ["ks_ols"], shuffled, oc) == rows


def test_positive_standard_errors():
    spec = DgpSpec("c", p=3, n=200, N=1000)
    table = run_study(spec, ["ks_ols", "logistic"], K=5, replications=30, master_seed=3,
                      m_oracle=5000)
    for r in table.rows:
        assert r.ese > 0 and r.ase > 0 and 0 <= r.cr <= 1 and r.re > 0


@pytest.mark.slow
def test_zero_strategy_relative_efficiency_near_one():
    table = run_study(DgpSpec("b", p=2, n=500, N=5000), ["zero"], replications=1000,
                      master_seed=11, m_oracle=20_000)
    assert abs(table.row("zero").re - 1) < 0.1


def test_run_study_rejects_bad_input():
    spec = DgpSpec("a", p=2, n=50, N=10)
    with pytest.raises(ConfigError):
        run_study(spec, ["zero"], replications=1)
    with pytest.raises(ConfigError):
        run_study(spec, [SUPERVISED], replications=3)


@pytest.mark.slow
def test_linear_model_p20_efficiency_band():
    table = run_study(DgpSpec("b", p=20, n=500, N=5000), ["ks_ols"], replications=500,
                      master_seed=2024)
    print(f"\nmodel b p=20 n=500 ks_ols RE={table.row('ks_ols').re:.3f} "
          f"ORE={table.oracle.ore:.3f}")
    assert 3.0 <= table.row("ks_ols").re <= 5.0
