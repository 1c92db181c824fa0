from fractions import Fraction

import numpy as np
import pytest

from multiscale_crn import ScalingSpec, find_conservation_laws, parse_network
from multiscale_crn.scales import (PipelineError, choose_gamma, classify_level, level_exponent, limit_generator,
                                   reaction_exponents)
from multiscale_crn.subspace import HomogeneousBasis, decompose, homogeneous_null_basis, stoichiometric_subspace

F = Fraction
BUILTINS = ("viral", "michaelis-menten", "enzyme3")


def spec_with(spec, gamma):
    return ScalingSpec(N=spec.N, gamma=F(gamma))


def test_viral_rho_table(builtin):
    net, spec, _ = builtin("viral")
    assert reaction_exponents(net, spec_with(spec, 0)) == (0, 0, 1, 0, 1, 0)
    g = F(2, 3)
    assert reaction_exponents(net, spec) == tuple(r + g for r in (0, 0, 1, 0, 1, 0))


def test_enzyme_rho(builtin):
    net, spec, _ = builtin("enzyme3")
    assert reaction_exponents(net, spec) == (1, 1, 1, 2, 2)


def test_viral_full_space_exponent(builtin):
    net, spec, _ = builtin("viral")
    assert level_exponent(net, spec, HomogeneousBasis.standard(net.alphas)) == F(2, 3)


def test_enzyme_level_exponents(builtin):
    net, spec, _ = builtin("enzyme3")
    dec = decompose(net, spec)
    assert [dec.level(i).m for i in (2, 1, 0)] == [2, 1, 0]


def test_all_zero_exponents_give_m_zero():
    net, spec, _ = parse_network("network z\nspecies A alpha 0 init 1\nspecies B alpha 0 init 0\n"
                                 "reaction R1 : A -> B kappa 1 beta 0\nN 10\ngamma 0\n")
    assert level_exponent(net, spec, HomogeneousBasis.standard(net.alphas)) == 0


def test_enzyme_fastest_level_classes(builtin):
    net, spec, _ = builtin("enzyme3")
    lev = decompose(net, spec).level(2)
    assert lev.jump_class == (3, 4) and lev.drift_class == ()
    assert lev.limiting_vectors[3] == (1, 0, 0, 0, -1)
    assert lev.limiting_vectors[4] == (-1, 0, 0, 0, 1)


def test_viral_level1_classes(builtin):
    net, spec, _ = builtin("viral")
    lev = decompose(net, spec).level(1)
    assert lev.m == F(2, 3)
    assert lev.jump_class == (1, 3) and lev.drift_class == (2, 4)
    assert lev.limiting_vectors[1] == (1, 0, 0)
    assert lev.limiting_vectors[2] == (0, 0, 1)
    assert 0 not in lev.limiting_vectors and 5 not in lev.limiting_vectors


def test_annihilated_level_is_empty(builtin):
    net, spec, _ = builtin("michaelis-menten")
    # total enzyme E + SE is conserved, so no reaction acts on it
    cons = HomogeneousBasis.from_vectors([(F(1), F(0), F(1), F(0))], net.alphas)
    assert level_exponent(net, spec, cons) is None
    lev = classify_level(net, spec, cons, None)
    assert lev.empty and lev.jump_class == () and lev.drift_class == ()


def test_limit_generator_kinds(builtin):
    net, spec, _ = builtin("viral")
    gen = limit_generator(decompose(net, spec).level(1), net)
    assert gen.kind == "pdmp"
    assert [k for k, _ in gen.jump_terms] == [1, 3]
    assert [k for k, _ in gen.drift_terms] == [2, 4]
    net, spec, _ = builtin("enzyme3")
    gen = limit_generator(decompose(net, spec).level(2), net)
    assert gen.kind == "markov-chain"
    assert [v for _, v in gen.jump_terms] == [(1, 0, 0, 0, -1), (-1, 0, 0, 0, 1)]


def test_drift_only_level_is_ode():
    net, spec, _ = parse_network("network d\nspecies A alpha 1 init 1\nreaction R1 : A -> 0 kappa 1 beta 0\n"
                                 "N 10\ngamma 0\n")
    gen = limit_generator(decompose(net, spec).level(0), net)
    assert gen.kind == "ode"


def test_choose_gamma(builtin):
    net, spec, _ = builtin("viral")
    assert choose_gamma(net, spec_with(spec, 0)) == F(2, 3)
    assert choose_gamma(net, spec) == F(2, 3)
    net, spec, _ = builtin("michaelis-menten")
    assert choose_gamma(net, spec) == 0


def test_wrong_gamma_is_rejected_with_hint(builtin):
    net, spec, _ = builtin("viral")
    with pytest.raises(PipelineError, match="2/3"):
        decompose(net, spec_with(spec, 0))


@pytest.mark.parametrize("name", BUILTINS)
def test_hierarchy_and_exponent_consistency(builtin, name):
    net, spec, _ = builtin(name)
    dec = decompose(net, spec)
    ms = [dec.level(i).m for i in sorted(dec.levels)]
    assert ms == sorted(ms) and len(set(ms)) == len(ms)
    for lev in dec.levels.values():
        for k, vec in lev.limiting_vectors.items():
            for i, c in enumerate(vec):
                if c != 0:
                    assert dec.rho[k] - net.alphas[i] == lev.m


@pytest.mark.parametrize("name", BUILTINS)
def test_limiting_vectors_are_filtered_projections(builtin, name):
    """N^(rho_k - m) Lambda_N Theta zeta_k converges to the stored limiting vector."""
    net, spec, _ = builtin(name)
    dec = decompose(net, spec)
    for lev in dec.levels.values():
        V = lev.basis.float_vectors(net.n_species)
        a = np.array([float(x) for x in lev.basis.alphas])
        for k, vec in lev.limiting_vectors.items():
            target = V @ np.array([float(x) for x in vec])
            expo = float(dec.rho[k] - lev.m)

            def approx(N):
                return N ** expo * N ** (-a) * (V @ net.zeta[k])

            e3, e6 = np.abs(approx(1e3) - target).max(), np.abs(approx(1e6) - target).max()
            assert e6 <= e3 + 1e-12
            assert np.abs(approx(1e30) - target).max() < 1e-9


@pytest.mark.parametrize("name", BUILTINS)
def test_projection_identities(builtin, name):
    net, spec, _ = builtin(name)
    dec = decompose(net, spec)
    P = [dec.Pi0, dec.Pi1, dec.Pi2]
    for Pi in P:
        np.testing.assert_allclose(Pi @ Pi, Pi, atol=1e-12)
        np.testing.assert_allclose(Pi, Pi.T, atol=1e-12)
    for i in range(3):
        for j in range(i + 1, 3):
            np.testing.assert_allclose(P[i] @ P[j], 0, atol=1e-12)
    np.testing.assert_allclose(sum(P), np.eye(net.n_species), atol=1e-12)
    np.testing.assert_allclose(dec.T @ np.linalg.inv(dec.T), np.eye(net.n_species), atol=1e-12)


@pytest.mark.parametrize("name", BUILTINS)
def test_bases_orthonormal_and_homogeneous(builtin, name):
    net, spec, _ = builtin(name)
    dec = decompose(net, spec)
    np.testing.assert_allclose(dec.T @ dec.T.T, np.eye(net.n_species), atol=1e-12)
    for v, a in zip(dec.row_rational, dec.row_alphas):
        assert {net.alphas[i] for i, x in enumerate(v) if x != 0} == {a}
        first = next(x for x in v if x != 0)
        assert first > 0


@pytest.mark.parametrize("name", ["michaelis-menten", "enzyme3"])
def test_conservation_laws_are_slow_or_constant(builtin, name):
    """The leading-abundance part of every conservation law lies in the slow or constant span."""
    net, spec, _ = builtin(name)
    dec = decompose(net, spec)
    laws = find_conservation_laws(net)
    assert laws
    for law in laws:
        top = max(net.alphas[i] for i, x in enumerate(law) if x != 0)
        th = np.array([float(x) if net.alphas[i] == top else 0.0 for i, x in enumerate(law)])
        np.testing.assert_allclose(dec.Pi0 @ th, th, atol=1e-12)


def test_enzyme_null_space_of_fastest_level(builtin):
    net, spec, _ = builtin("enzyme3")
    dec = decompose(net, spec)
    rng, null = stoichiometric_subspace([dec.level(2).limiting_vectors[k] for k in (3, 4)], 5)
    assert len(rng) == 1 and len(null) == 4
    # span of slower rows equals span{e_S, e_P, e_SE, e_E + e_F}
    slower = dec.T[:4]
    target = np.array([[0, 1, 0, 0, 0], [0, 0, 0, 1, 0], [0, 0, 1, 0, 0], [1, 0, 0, 0, 1]], float)
    assert np.linalg.matrix_rank(np.vstack([slower, target])) == 4
    assert dec.row_alphas[:2] == (1, 1)


def test_empty_vector_list_subspaces():
    rng, null = stoichiometric_subspace([], 3)
    assert rng == [] and len(null) == 3


def test_viral_slow_space(builtin):
    net, spec, _ = builtin("viral")
    dec = decompose(net, spec)
    rng, null = stoichiometric_subspace([(1, 0, 0), (-1, 0, 0), (0, 0, 1), (0, 0, -1)], 3)
    assert null == [(0, 1, 0)]
    np.testing.assert_allclose(dec.Pi0, np.diag([0, 1, 0]), atol=1e-15)
    assert dec.slow_basis.alphas == (F(2, 3),)
    assert dec.dims == (1, 2, 0)


def test_michaelis_menten_two_levels(builtin):
    net, spec, _ = builtin("michaelis-menten")
    dec = decompose(net, spec)
    assert dec.d0 == 2 and dec.s1 == 1 and dec.s2 == 0
    assert 2 not in dec.levels
    slow = dec.T[:2]
    np.testing.assert_allclose(np.abs(slow), [[0, 1, 0, 0], [0, 0, 0, 1]], atol=1e-15)


def test_full_space_equal_alphas_identity_basis():
    b = HomogeneousBasis.standard((F(0), F(0), F(0)))
    np.testing.assert_array_equal(b.float_vectors(3), np.eye(3))


def test_slow_jump_reaction_rejected_with_name():
    net, spec, _ = parse_network("network j\nspecies A alpha 0 init 3\nreaction Rslow : A -> 0 kappa 1 beta 0\n"
                                 "N 10\ngamma 0\n")
    with pytest.raises(PipelineError, match="Rslow"):
        decompose(net, spec)


def test_nonhomogeneous_span_rejected():
    # span{(1, 1)} with alphas (0, 1) cannot be written with single-alpha vectors
    with pytest.raises(PipelineError, match="witness"):
        homogeneous_null_basis([(1, 1)], (F(0), F(1)))
