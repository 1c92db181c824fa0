import dataclasses

import numpy as np
import pytest

import oracles as orc
from multiscale_crn import parse_network
from multiscale_crn.deterministic import ode_solve, variance_ode
from multiscale_crn.fastsim import fast_subnetwork_simulate
from multiscale_crn.scales import limit_generator
from multiscale_crn.sde import Boundary, diffusion_simulate, lna_simulate
from multiscale_crn.ssa import ssa_segments, ssa_simulate
from multiscale_crn.trajectory import SdeSpec

DEATH = "network death\nspecies A alpha 0 init 1000\nreaction R1 : A -> 0 kappa 1 beta 0\nN 10\ngamma 0\n"
BIRTH_DEATH = ("network bd\nspecies A alpha 0 init 0\nreaction R1 : 0 -> A kappa 20 beta 0\n"
               "reaction R2 : A -> 0 kappa 1 beta 0\nN 10\ngamma 0\n")


# --- SSA -----------------------------------------------------------------------

def test_ssa_absorbing_start_is_constant(builtin):
    net, spec, _ = builtin("michaelis-menten")
    tr = ssa_simulate(net, spec, x0=np.zeros(4, dtype=int), t_end=5.0, seed=1)
    assert np.all(tr.states == 0) and tr.meta["events"] == 0


def test_ssa_pure_death_mean():
    net, spec, _ = parse_network(DEATH)
    finals = np.array([ssa_simulate(net, spec, t_end=1.0, seed=[7, i], n_out=2).states[-1, 0]
                       for i in range(1000)])
    se = finals.std(ddof=1) / np.sqrt(len(finals))
    assert abs(finals.mean() - 1000 * np.exp(-1)) < 3 * se


def test_ssa_birth_death_mean_and_variance():
    net, spec, _ = parse_network(BIRTH_DEATH)
    n = 10_000
    finals = np.array([ssa_simulate(net, spec, t_end=1.0, seed=[8, i], n_out=2).states[-1, 0]
                       for i in range(n)], dtype=float)
    # Poisson law with mean 20 (1 - e^-1) at t = 1
    mu = 20 * (1 - np.exp(-1))
    var = finals.var(ddof=1)
    assert abs(finals.mean() - mu) < 3 * np.sqrt(var / n)
    assert abs(var - mu) < 3 * mu * np.sqrt(2 / (n - 1))


def test_ssa_seed_determinism(builtin):
    net, spec, _ = builtin("viral")
    a = ssa_simulate(net, spec, t_end=0.3, seed=[4, 2])
    b = ssa_simulate(net, spec, t_end=0.3, seed=[4, 2])
    assert a.to_csv() == b.to_csv() and a.meta["events"] == b.meta["events"] > 0
    c = ssa_simulate(net, spec, t_end=0.3, seed=[4, 3])
    assert c.to_csv() != a.to_csv()


def test_ssa_conserves_invariants_exactly(builtin):
    net, spec, _ = builtin("michaelis-menten")
    tr = ssa_simulate(net, spec, t_end=20.0, seed=3, n_out=500)
    x = tr.states
    assert np.all(x[:, 0] + x[:, 2] == 5)
    assert np.all(x[:, 1] + x[:, 2] + x[:, 3] == x[0, 1] + x[0, 2] + x[0, 3])


def test_ssa_aggregate_matches_direct_in_distribution(builtin):
    net, spec, _ = builtin("viral")
    n = 400
    d = np.array([ssa_simulate(net, spec, t_end=0.25, seed=[9, i], n_out=2).states[-1, 1] for i in range(n)])
    a = np.array([ssa_simulate(net, spec, t_end=0.25, seed=[10, i], n_out=2, aggregate="S").states[-1, 1]
                  for i in range(n)])
    se = np.sqrt(d.var(ddof=1) / n + a.var(ddof=1) / n)
    assert abs(d.mean() - a.mean()) < 3 * se


def test_ssa_segments_integrals(builtin):
    net, spec, _ = builtin("michaelis-menten")
    seg = ssa_segments(net, spec, ["S", "P"], t_end=2.0, seed=5)
    assert seg["duration"].sum() == pytest.approx(2.0, rel=1e-12)
    m = seg["int_x"] / seg["duration"][:, None]
    np.testing.assert_allclose(m[:, 0] + m[:, 2], 5.0, rtol=1e-12)


# --- ODE ------------------------------------------------------------------------

def test_ode_viral_fixed_point(model):
    m = model("viral")
    tr = m.slow_ode([2.0], 2.0)
    np.testing.assert_allclose(tr.states[:, 0], 2.0, atol=1e-12)


def test_ode_viral_logistic(model):
    m = model("viral")
    tr = m.slow_ode([0.01], 2.0, n_out=401)
    assert np.abs(tr.states[:, 0] - orc.viral_logistic(0.01, tr.times)).max() < 1e-6


def test_ode_zero_drift_constant():
    tr = ode_solve(lambda v: np.zeros_like(v), [1.5, -0.2], 3.0)
    np.testing.assert_array_equal(tr.states, np.broadcast_to([1.5, -0.2], tr.states.shape))


def test_ode_conserves_slow_total(model):
    m = model("michaelis-menten")
    tr = m.slow_ode([0.5, 0.0], 20.0)
    assert np.abs(tr.states.sum(axis=1) - 0.5).max() < 1e-9


# --- SDE ------------------------------------------------------------------------

def linear_sde(a, s, scale=1.0):
    return SdeSpec(drift=lambda x, v: a * x, noise=lambda x, v: np.full((len(x), 1, 1), s),
                   scale=scale, dim=1, noise_dim=1)


def test_zero_noise_lna_stays_zero():
    sde = SdeSpec(drift=lambda u, v: -u, noise=lambda u, v: np.zeros((len(u), 1, 1)), scale=1.0, dim=1,
                  noise_dim=1)
    pb = lna_simulate(sde, [0.0], 1.0, seed=1, n_paths=5)
    assert np.all(pb.states == 0)


def test_ou_stationary_variance():
    pb = diffusion_simulate(linear_sde(-2.0, 1.5), [0.0], 5.0, dt=1e-3, seed=2, n_paths=10_000,
                            grid=[0.0, 5.0], boundary=Boundary(clamp=False))
    target = 1.5 ** 2 / 4.0
    assert pb.states[:, -1, 0].var() == pytest.approx(target, rel=0.05)


def test_brownian_scaling():
    r = 10.0
    pb = diffusion_simulate(linear_sde(0.0, 2.0, scale=1 / r), [0.0], 3.0, seed=3, n_paths=10_000,
                            grid=[0.0, 1.5, 3.0], boundary=Boundary(clamp=False))
    var = pb.states[:, :, 0].var(axis=0)
    np.testing.assert_allclose(var[1:], 4.0 * np.array([1.5, 3.0]) / r ** 2, rtol=0.05)


def test_seed_determinism_sde(model):
    m = model("viral")
    a = lna_simulate(m.lna_spec([0.1]), [0.0], 1.0, seed=[3, 0], n_paths=4)
    b = lna_simulate(m.lna_spec([0.1]), [0.0], 1.0, seed=[3, 0], n_paths=4)
    assert a.states.tobytes() == b.states.tobytes()


def test_zero_noise_diffusion_follows_ode(model):
    m = model("viral")
    sde = dataclasses.replace(m.diffusion_spec(), scale=1e-6)
    grid = np.linspace(0, 1, 51)
    pb = diffusion_simulate(sde, [0.1], 1.0, dt=1e-4, seed=4, n_paths=3, grid=grid)
    ode = m.slow_ode([0.1], 1.0, grid=grid)
    assert np.abs(pb.states[:, :, 0] - ode.states[None, :, 0]).max() < 1e-3


@pytest.fixture(scope="module")
def viral_lna_paths(model):
    m = model("viral")
    grid = np.linspace(0, 1, 11)
    pb = lna_simulate(m.lna_spec([0.1]), [0.0], 1.0, seed=5, n_paths=10_000, grid=grid)
    cp = m.variance([0.1], 1.0, grid=grid)
    return pb, cp


def test_viral_lna_variance_matches_variance_ode(viral_lna_paths):
    pb, cp = viral_lna_paths
    mc = pb.states[:, :, 0].var(axis=0)
    sig = cp.sigma[:, 0, 0]
    for t in (5, 10):  # t = 0.5, 1.0
        assert mc[t] == pytest.approx(sig[t], rel=0.05)


def test_viral_variance_ode_five_time_points(viral_lna_paths):
    pb, cp = viral_lna_paths
    mc = pb.states[:, :, 0].var(axis=0)
    for t in (2, 4, 6, 8, 10):
        assert cp.sigma[t, 0, 0] == pytest.approx(mc[t], rel=0.05)


def test_diffusion_halving_dt_within_mc_error(model):
    m = model("michaelis-menten")
    v0 = m.initial_slow()
    grid = [0.0, 1.0, 2.0]
    runs = 10_000
    a = diffusion_simulate(m.diffusion_spec(), v0, 2.0, dt=2.0 / 200, seed=6, n_paths=runs, grid=grid)
    b = diffusion_simulate(m.diffusion_spec(), v0, 2.0, dt=2.0 / 400, seed=7, n_paths=runs, grid=grid)
    sa, sb = a.states[:, -1, 0], b.states[:, -1, 0]
    err = np.sqrt(sa.var() / runs + sb.var() / runs)
    assert abs(sa.mean() - sb.mean()) < 3 * err


# --- variance ODE ---------------------------------------------------------------

def test_variance_ode_zero_source():
    cp = variance_ode(lambda v: np.array([[-1.0]]), lambda v: np.zeros((1, 1)), lambda v: np.zeros(1), [0.0], 2.0)
    assert np.all(cp.sigma == 0)


def test_variance_ode_scalar_closed_form():
    a, g = -0.7, 2.3
    cp = variance_ode(lambda v: np.array([[a]]), lambda v: np.array([[g]]), lambda v: np.zeros(1), [0.0], 3.0)
    expected = g * (np.exp(2 * a * cp.times) - 1) / (2 * a)
    np.testing.assert_allclose(cp.sigma[:, 0, 0], expected, rtol=1e-8, atol=1e-12)


@pytest.mark.parametrize("name", ["viral", "michaelis-menten", "enzyme3"])
def test_variance_path_symmetric_psd(model, name):
    m = model(name)
    cp = m.variance(m.initial_slow(), 1.0)
    assert np.abs(cp.sigma - np.swapaxes(cp.sigma, 1, 2)).max() < 1e-12
    assert np.linalg.eigvalsh(cp.sigma).min() > -1e-10


# --- fast-subnetwork simulation ---------------------------------------------------

def test_fast_viral_time_averages(model):
    m = model("viral")
    gen = limit_generator(m.dec.level(1), m.net)
    tr = fast_subnetwork_simulate(gen, [0, 1.0, 0], m.net, 200.0, seed=11)
    avg = tr.meta["time_average"]
    assert avg[0] == pytest.approx(10.0, rel=0.02)
    assert avg[2] == pytest.approx(5.0, rel=0.02)


def test_fast_viral_time_averages_one_percent(model):
    m = model("viral")
    gen = limit_generator(m.dec.level(1), m.net)
    avg = fast_subnetwork_simulate(gen, [0, 1.0, 0], m.net, 200.0, seed=11).meta["time_average"]
    assert avg[0] == pytest.approx(10.0, rel=0.01)
    assert avg[2] == pytest.approx(5.0, rel=0.01)


def test_fast_mm_occupation_matches_binomial(model):
    m = model("michaelis-menten")
    gen = limit_generator(m.dec.level(1), m.net)
    tr = fast_subnetwork_simulate(gen, [5, 10.0, 0, 0], m.net, 1e4, seed=12)
    occ = tr.meta["occupation"]
    pmf = orc.binomial_pmf(5, 6 / 7)
    emp = np.zeros(6)
    for state, frac in occ.items():
        emp[int(round(state[0]))] += frac
    assert 0.5 * np.abs(emp - pmf).sum() < 0.02


def test_fast_zero_rates_constant(model):
    m = model("michaelis-menten")
    gen = limit_generator(m.dec.level(1), m.net)
    tr = fast_subnetwork_simulate(gen, [0, 10.0, 0, 0], m.net, 5.0, seed=13)
    np.testing.assert_array_equal(tr.states, np.broadcast_to([0, 10.0, 0, 0], tr.states.shape))
