import numpy as np
import pytest

import oracles as orc
from multiscale_crn.averaging import (AveragingError, averaged_propensity, fast_stationary_finite,
                                      fast_stationary_moments)
from multiscale_crn.scales import limit_generator

Z_VIRAL = np.linspace(0.1, 2.0, 20)
Z_MM = np.linspace(0.5, 50.0, 20)
V_ENZ = np.linspace(0.05, 0.5, 10)


def gen_of(model, name, level):
    m = model(name)
    return limit_generator(m.dec.level(level), m.net), m


def test_mm_fast_chain_is_binomial(model):
    gen, m = gen_of(model, "michaelis-menten", 1)
    eq = fast_stationary_finite(gen, [5, 10, 0, 0], m.net)
    assert eq.kind == "finite" and len(eq.probs) == 6
    E = np.rint(eq.states[:, 0]).astype(int)
    pmf = orc.binomial_pmf(5, 6 / 7)
    tv = 0.5 * np.abs(eq.probs - pmf[E]).sum()
    assert tv < 1e-10
    assert eq.mean[0] == pytest.approx(30 / 7, rel=1e-12)
    assert abs(eq.probs.sum() - 1) < 1e-12 and eq.residual < 1e-12
    np.testing.assert_allclose(eq.states[:, 0] + eq.states[:, 2], 5)


@pytest.mark.parametrize("z", [0.5, 3.0, 10.0, 40.0])
def test_mm_binomial_across_substrate_levels(model, z):
    gen, m = gen_of(model, "michaelis-menten", 1)
    eq = fast_stationary_finite(gen, [5, z, 0, 0], m.net)
    E = np.rint(eq.states[:, 0]).astype(int)
    pmf = orc.binomial_pmf(5, orc.mm_free_fraction(z))
    assert 0.5 * np.abs(eq.probs - pmf[E]).sum() < 1e-10


def test_single_state_chain_is_point_mass(model):
    gen, m = gen_of(model, "michaelis-menten", 1)
    eq = fast_stationary_finite(gen, [0, 10, 0, 0], m.net)
    assert len(eq.probs) == 1 and eq.probs[0] == 1.0


def test_enzyme_level2_chain_binomial(model):
    gen, m = gen_of(model, "enzyme3", 2)
    eq = fast_stationary_finite(gen, [3, 0.4, 1, 0.1, 0], m.net)
    F = np.rint(eq.states[:, 4]).astype(int)
    pmf = orc.binomial_pmf(3, 0.5)
    assert 0.5 * np.abs(eq.probs - pmf[F]).sum() < 1e-10
    assert eq.mean[4] == pytest.approx(orc.enzyme_rho0(3.0), rel=1e-12)


def test_finite_strategy_rejects_pdmp(model):
    gen, m = gen_of(model, "viral", 1)
    with pytest.raises(AveragingError):
        fast_stationary_finite(gen, [0, 1.0, 0], m.net)


@pytest.mark.parametrize("z2", [0.1, 1.0, 1.7])
def test_viral_pdmp_moments(model, z2):
    gen, m = gen_of(model, "viral", 1)
    eq = fast_stationary_moments(gen, [0, z2, 0], m.net)
    assert eq.mean_state[0] == pytest.approx(10 * z2, rel=1e-12)
    assert eq.mean_state[2] == pytest.approx(5 * z2, rel=1e-12)
    assert eq.residual < 1e-10


def test_enzyme_rho1_moment(model):
    m = model("enzyme3")
    ms = m.avg.mean_state(V_ENZ[:, None] * [1, 0] + [0, 0.2])
    rho1 = orc.enzyme_rho1(V_ENZ)
    np.testing.assert_allclose(ms[:, 0] + ms[:, 4], rho1, rtol=1e-8)
    np.testing.assert_allclose(ms[:, 4], orc.enzyme_rho0(rho1), rtol=1e-8)


def test_zero_rate_generator_reports_singularity(model):
    gen, m = gen_of(model, "viral", 1)
    with pytest.raises(AveragingError, match="singular"):
        fast_stationary_moments(gen, [0, 1.0, 0], m.net, rates=lambda z: np.zeros((len(z), m.net.n_reactions)))


def test_moment_and_finite_strategies_agree(model):
    gen, m = gen_of(model, "michaelis-menten", 1)
    for z in (0.5, 10.0, 45.0):
        fin = fast_stationary_finite(gen, [5, z, 0, 0], m.net)
        mom = fast_stationary_moments(gen, [5, z, 0, 0], m.net)
        np.testing.assert_allclose(mom.mean_state, fin.mean, rtol=1e-10, atol=1e-12)
    gen, m = gen_of(model, "enzyme3", 2)
    fin = fast_stationary_finite(gen, [2, 0.3, 1, 0.0, 2], m.net)
    mom = fast_stationary_moments(gen, [2, 0.3, 1, 0.0, 2], m.net)
    np.testing.assert_allclose(mom.mean_state, fin.mean, rtol=1e-10, atol=1e-12)


def test_mm_averaged_propensity(model):
    m = model("michaelis-menten")
    v0 = np.c_[Z_MM, np.full_like(Z_MM, 0.3)]
    lam = m.avg.lambda_bar(v0)
    np.testing.assert_allclose(lam[:, 0], 0.1 * Z_MM * 5 * orc.mm_free_fraction(Z_MM), rtol=1e-10)
    gen, _ = gen_of(model, "michaelis-menten", 1)
    eq = fast_stationary_finite(gen, [5, 10, 0, 0], m.net)
    assert averaged_propensity(0, eq, m.net) == pytest.approx(0.1 * 10 * 30 / 7, rel=1e-12)


def test_viral_averaged_propensity(model):
    m = model("viral")
    lam = m.avg.lambda_bar(Z_VIRAL[:, None])
    np.testing.assert_allclose(lam[:, 5], 3.75 * Z_VIRAL ** 2, rtol=1e-12)
    # reaction 1 does not touch the fast species
    np.testing.assert_allclose(lam[:, 0], 1.0 * 10 * Z_VIRAL, rtol=1e-12)


def test_viral_averaged_drift(model):
    m = model("viral")
    np.testing.assert_allclose(m.F(Z_VIRAL[:, None])[:, 0], orc.viral_F(Z_VIRAL), rtol=1e-8)
    assert m.F(np.array([[1.0]]))[0, 0] == pytest.approx(3.75)
    assert m.F(np.array([[2.0]]))[0, 0] == pytest.approx(0.0, abs=1e-12)


def test_mm_averaged_drift(model):
    m = model("michaelis-menten")
    F = m.F(np.c_[Z_MM, np.zeros_like(Z_MM)])
    np.testing.assert_allclose(F[:, 0], orc.mm_F_S(Z_MM), rtol=1e-8)
    np.testing.assert_allclose(F[:, 1], -orc.mm_F_S(Z_MM), rtol=1e-8)
    np.testing.assert_allclose(orc.mm_F_S(Z_MM), -0.5 * Z_MM / (6 + 0.1 * Z_MM), rtol=1e-14)


def test_enzyme_averaged_drift(model):
    m = model("enzyme3")
    F = m.F(np.c_[V_ENZ, np.zeros_like(V_ENZ)])
    np.testing.assert_allclose(F[:, 0], orc.enzyme_F(V_ENZ), rtol=1e-8)
    np.testing.assert_allclose(F[:, 1], -orc.enzyme_F(V_ENZ), rtol=1e-8)


def test_jacobians_match_closed_forms(model):
    J = np.array([model("viral").jacobian([z]).ravel()[0] for z in Z_VIRAL])
    np.testing.assert_allclose(J, orc.viral_dF(Z_VIRAL), rtol=1e-6, atol=1e-9)
    m = model("michaelis-menten")
    for z in Z_MM:
        J = m.jacobian([z, 0.2])
        c = orc.mm_dF_S(z)
        np.testing.assert_allclose(J[0], [[c, 0], [-c, 0]], rtol=1e-6, atol=1e-9)
    m = model("enzyme3")
    ez = orc.EZ
    B, C = ez["k1"] * ez["k4"], (ez["k4"] + ez["k5"]) * (ez["k2"] + ez["k3"])
    A = ez["M"] * ez["k1"] * ez["k3"] * ez["k4"]
    for v in np.linspace(0.05, 0.5, 20):
        c = -A * C / (B * v + C) ** 2
        np.testing.assert_allclose(m.jacobian([v, 0.1])[0], [[c, 0], [-c, 0]], rtol=1e-6, atol=1e-9)


def test_constant_drift_has_zero_jacobian():
    from multiscale_crn.averaging import drift_jacobian

    J = drift_jacobian(lambda v: np.full((np.atleast_2d(v).shape[0], 2), 3.0))(np.array([0.4, 1.2]))
    np.testing.assert_allclose(J, 0, atol=1e-12)


def test_centering_identity_enzyme_fast_level(model):
    """Sum of pi (F(v) - F1_bar) over the exact level-2 law vanishes."""
    m = model("enzyme3")
    gen, _ = gen_of(model, "enzyme3", 2)
    frozen = np.array([2, 0.35, 1, 0.1, 2], dtype=float)
    eq = fast_stationary_finite(gen, frozen, m.net)
    T = m.avg.T
    v_states = eq.states @ T.T
    y = (frozen @ T.T)[None, :4]
    resid = eq.probs @ m.avg.F(v_states) - m.avg.F1_bar(y)[0]
    assert np.abs(resid).max() < 1e-10


def test_centering_identity_mm(model):
    m = model("michaelis-menten")
    gen, _ = gen_of(model, "michaelis-menten", 1)
    for z in (1.0, 20.0):
        eq = fast_stationary_finite(gen, [5, z, 0, 0.4], m.net)
        v_states = eq.states @ m.avg.T.T
        resid = eq.probs @ m.avg.F(v_states) - m.F(np.array([[z, 0.4]]))[0]
        assert np.abs(resid).max() < 1e-10
