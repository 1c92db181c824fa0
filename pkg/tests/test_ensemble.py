import math

import numpy as np
import pytest

from multiscale_crn.ensemble import (EnsembleError, EnsembleSummary, GridMismatchError, MethodConfig, RunningStats,
                                     absorption_probability, compare_report, means_within_se, run_ensemble,
                                     wilson_interval)


def mm_config(model, builtin, method="ssa", t_end=2.0, n=11, **kw):
    net, spec, _ = builtin("michaelis-menten")
    return MethodConfig(method, net, spec, t_end, grid=np.linspace(0, t_end, n), model=model("michaelis-menten"), **kw)


def test_running_stats_match_two_pass():
    rng = np.random.default_rng(1)
    x = rng.normal(1e3, 2.0, (57, 4, 3))
    st = RunningStats((4, 3))
    for row in x:
        st.push(row)
    np.testing.assert_allclose(st.mean, x.mean(axis=0), rtol=1e-12)
    np.testing.assert_allclose(st.var, x.var(axis=0, ddof=1), rtol=1e-10)


def test_running_stats_merge_equals_single_pass():
    rng = np.random.default_rng(2)
    x = rng.exponential(3.0, (40, 5))
    whole, a, b = RunningStats(5), RunningStats(5), RunningStats(5)
    for i, row in enumerate(x):
        whole.push(row)
        (a if i < 13 else b).push(row)
    a.merge(b)
    assert a.n == 40
    np.testing.assert_allclose(a.mean, whole.mean, rtol=1e-12)
    np.testing.assert_allclose(a.var, whole.var, rtol=1e-10)
    assert RunningStats(5).merge(whole).n == 40


def test_wilson_coverage_on_bernoulli_oracle():
    rng = np.random.default_rng(2024)
    hits = 0
    for _ in range(100):
        k = int((rng.random(5000) < 0.25).sum())
        lo, hi = wilson_interval(k, 5000)
        hits += lo <= 0.25 <= hi
    assert hits >= 93


def test_wilson_interval_edges():
    assert wilson_interval(0, 0) == (0.0, 1.0)
    lo, hi = wilson_interval(0, 100)
    assert lo == 0.0 and 0 < hi < 0.05
    lo, hi = wilson_interval(100, 100)
    assert hi == 1.0 and lo > 0.95


def test_ode_ensemble_has_zero_std(model, builtin):
    cfg = mm_config(model, builtin, "ode")
    s = run_ensemble(cfg, 7)
    assert np.all(s.std == 0) and np.all(s.se == 0)
    m = model("michaelis-menten")
    path = m.slow_ode(m.initial_slow(), 2.0, grid=cfg.grid).states * m.count_factor
    np.testing.assert_array_equal(s.mean, path)


def test_identical_seeds_identical_summaries(model, builtin):
    a = run_ensemble(mm_config(model, builtin), 30, seed=5)
    b = run_ensemble(mm_config(model, builtin), 30, seed=5)
    assert a.to_csv() == b.to_csv()
    c = run_ensemble(mm_config(model, builtin), 30, seed=6)
    assert c.to_csv() != a.to_csv()


def test_schedule_independence(model, builtin):
    a = run_ensemble(mm_config(model, builtin), 60, seed=3, threads=1, chunk=10)
    b = run_ensemble(mm_config(model, builtin), 60, seed=3, threads=4, chunk=10)
    assert a.to_csv() == b.to_csv()
    # a different chunking reorders the reduction only
    c = run_ensemble(mm_config(model, builtin), 60, seed=3, chunk=7)
    np.testing.assert_allclose(c.mean, a.mean, rtol=1e-12)
    np.testing.assert_allclose(c.std, a.std, rtol=1e-9, atol=1e-12)


def test_summary_invariants(model, builtin):
    s = run_ensemble(mm_config(model, builtin), 25, seed=1)
    assert s.runs == 25 and np.all(s.std >= 0)
    np.testing.assert_allclose(s.se, s.std / 5.0)
    # molecule counts: substrate starts at 50
    assert s.mean[0, 0] == 50.0 and s.std[0, 0] == 0.0
    assert s.to_csv().splitlines()[0] == "t,mean_S,std_S,se_S,mean_P,std_P,se_P"


def test_normalized_units(model, builtin):
    s = run_ensemble(mm_config(model, builtin, "ode", normalized=True), 1)
    assert s.mean[0, 0] == pytest.approx(0.5)


def test_runs_must_be_positive(model, builtin):
    with pytest.raises(ValueError):
        run_ensemble(mm_config(model, builtin), 0)


def test_failures_above_one_percent_abort(model, builtin):
    with pytest.raises(EnsembleError, match="failed"):
        run_ensemble(mm_config(model, builtin, max_events=1), 10, seed=1)


def test_lna_summary_carries_analytic_band(model, builtin):
    s = run_ensemble(mm_config(model, builtin, "lna"), 20, seed=2)
    assert set(s.extra) == {"analytic_std", "ode_mean"}
    assert s.extra["analytic_std"].shape == s.mean.shape
    assert np.all(s.extra["analytic_std"][0] == 0)


def test_start_at_zero_is_absorbed(model, builtin):
    net, spec, _ = builtin("viral")
    for method in ("ssa", "diffusion"):
        cfg = MethodConfig(method, net, spec, 1.0, model=model("viral"))
        res = absorption_probability(cfg, 0, 20, seed=1)
        assert res.estimate == 1.0 and res.lower == 20 and res.censored == 0


def test_absorption_record_fields(model, builtin):
    net, spec, _ = builtin("viral")
    cfg = MethodConfig("ssa", net, spec, 1.0, model=model("viral"), aggregate="S")
    res = absorption_probability(cfg, 1, 50, seed=2)
    rec = res.record()
    assert rec["absorbed"] + rec["reached_threshold"] + rec["censored"] == 50
    assert rec["ci_low"] <= rec["estimate"] <= rec["ci_high"]


def test_absorption_rejects_other_methods(model, builtin):
    net, spec, _ = builtin("viral")
    with pytest.raises(ValueError):
        absorption_probability(MethodConfig("lna", net, spec, 1.0, model=model("viral")), 1, 5)


def summary(method, times, mean, std, runs=10, names=("A",)):
    return EnsembleSummary(method, runs, np.asarray(times, float), names, np.asarray(mean, float),
                           np.asarray(std, float))


def test_compare_identical_summaries_zero_deviation(model, builtin):
    a = run_ensemble(mm_config(model, builtin), 20, seed=9)
    b = run_ensemble(mm_config(model, builtin), 20, seed=9)
    b.method = "ssa-again"
    tab = compare_report([a, b])
    assert tab.reference == "ssa"
    assert np.all(tab.deviations["ssa-again"]["mean"] == 0) and np.all(tab.deviations["ssa-again"]["std"] == 0)


def test_compare_single_summary_degenerates():
    s = summary("ssa", [0, 1], [[1.0], [2.0]], [[0.0], [0.5]])
    tab = compare_report([s])
    assert tab.deviations == {}
    assert tab.to_csv() == "t,mean_A_ssa,std_A_ssa\n0.0,1.0,0.0\n1.0,2.0,0.5\n"


def test_compare_four_tiers(model, builtin):
    sums = [run_ensemble(mm_config(model, builtin, meth), 1 if meth == "ode" else 20, seed=4)
            for meth in ("ssa", "ode", "lna", "diffusion")]
    tab = compare_report(sums)
    assert set(tab.deviations) == {"ode", "lna", "diffusion"}
    header = tab.to_csv().splitlines()[0].split(",")
    assert len(header) == 1 + 4 * 2 * 2
    assert len(tab.deviation_csv().splitlines()) == 1 + 3 * 2


def test_compare_grid_mismatch():
    a = summary("ssa", [0, 1], [[1.0], [2.0]], [[0.0], [0.5]])
    b = summary("ode", [0, 2], [[1.0], [2.0]], [[0.0], [0.0]])
    with pytest.raises(GridMismatchError):
        compare_report([a, b])
    c = summary("ode", [0, 1], [[1.0], [2.0]], [[0.0], [0.0]], names=("B",))
    with pytest.raises(GridMismatchError):
        compare_report([a, c])


def test_means_within_se():
    a = summary("a", [0, 1], [[1.0], [2.0]], [[1.0], [1.0]], runs=100)
    b = summary("b", [0, 1], [[1.2], [2.5]], [[1.0], [1.0]], runs=100)
    se = math.sqrt(2) * 0.1
    assert means_within_se(a, b).ravel().tolist() == [0.2 <= 3 * se, 0.5 <= 3 * se]
