"""Randomized structural properties, 200 cases each."""

from fractions import Fraction

import numpy as np
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from multiscale_crn import find_conservation_laws, parse_network
from multiscale_crn.network import count_scale, normalized_propensities, propensities, serialize_network
from multiscale_crn.scales import PipelineError
from multiscale_crn.ssa import ssa_simulate
from multiscale_crn.subspace import decompose

CASES = settings(max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
ALPHAS = ("0", "1/3", "1/2", "1")
BETAS = ("0", "1", "-1", "1/2", "2/3", "-2/3")
BOUNDS = {"viral": [(0.01, 2.5)], "michaelis-menten": [(0.01, 50.0), (0.0, 50.0)], "enzyme3": [(0.01, 0.5), (0.0, 0.5)]}


def side(counts, names):
    return " + ".join(n if c == 1 else f"{c} {n}" for c, n in zip(counts, names) if c) or "0"


@st.composite
def network_texts(draw):
    S = draw(st.integers(1, 4))
    names = [f"X{i}" for i in range(S)]
    lines = ["network r"]
    for n in names:
        lines.append(f"species {n} alpha {draw(st.sampled_from(ALPHAS))} init {draw(st.integers(0, 30))}")
    K = draw(st.integers(1, 5))
    for k in range(K):
        a = draw(st.lists(st.integers(0, 2), min_size=S, max_size=S).filter(lambda v: sum(v) <= 2))
        b = draw(st.lists(st.integers(0, 2), min_size=S, max_size=S).filter(lambda v, a=a: v != a))
        kappa = draw(st.floats(0.05, 5.0, allow_nan=False))
        lines.append(f"reaction R{k + 1} : {side(a, names)} -> {side(b, names)} kappa {kappa!r} "
                     f"beta {draw(st.sampled_from(BETAS))}")
    lines += [f"N {draw(st.integers(2, 10_000))}", f"gamma {draw(st.sampled_from(('0', '1/3', '2/3')))}"]
    return "\n".join(lines) + "\n"


@CASES
@given(network_texts())
def test_parse_round_trip(text):
    net, spec, defaults = parse_network(text)
    again = parse_network(serialize_network(net, spec, defaults))
    assert again == (net, spec, defaults)


@CASES
@given(network_texts())
def test_conservation_laws_exact(text):
    net, _, _ = parse_network(text)
    for law in find_conservation_laws(net):
        assert all(isinstance(c, Fraction) for c in law) and any(law)
        for r in net.reactions:
            change = {n: 0 for n in net.index}
            for n, c in r.outputs:
                change[n] += c
            for n, c in r.inputs:
                change[n] -= c
            assert sum(law[net.index[n]] * change[n] for n in change) == 0


@CASES
@given(network_texts())
def test_projection_identities_random_networks(text):
    net, spec, _ = parse_network(text)
    try:
        dec = decompose(net, spec, strict=False)
    except PipelineError:
        assume(False)
    P = [dec.Pi0, dec.Pi1, dec.Pi2]
    n = net.n_species
    for Pi in P:
        assert np.abs(Pi @ Pi - Pi).max() < 1e-12 and np.abs(Pi - Pi.T).max() < 1e-12
    for i in range(3):
        for j in range(i + 1, 3):
            assert np.abs(P[i] @ P[j]).max() < 1e-12
    # Pi0 covers the slow and the constant directions
    assert np.abs(sum(P) - np.eye(n)).max() < 1e-12
    assert np.abs(dec.T @ np.linalg.inv(dec.T) - np.eye(n)).max() < 1e-12


@CASES
@given(network_texts(), st.data())
def test_propensity_scaling_identity(text, data):
    net, spec, _ = parse_network(text)
    x = np.array(data.draw(st.lists(st.integers(0, 60), min_size=net.n_species, max_size=net.n_species)), float)
    raw = propensities(net, x, spec)
    z = x / count_scale(net, spec)
    expo = np.array([float(sum(c * net.alphas[net.index[s]] for s, c in r.inputs) + r.beta) for r in net.reactions])
    scaled = float(spec.N) ** expo * normalized_propensities(net, z[None], spec)[0]
    np.testing.assert_allclose(raw, scaled, rtol=1e-12, atol=1e-300)


def slow_point(data, name):
    return np.array([data.draw(st.floats(lo, hi, allow_nan=False)) for lo, hi in BOUNDS[name]])


@CASES
@given(st.sampled_from(sorted(BOUNDS)), st.data())
def test_poisson_residuals_random(model, name, data):
    m = model(name)
    v0 = slow_point(data, name)[None]
    res = m.corr.residuals(v0, n_random=3, seed=data.draw(st.integers(0, 2 ** 31)))
    assert res and max(res.values()) < 1e-10


@CASES
@given(st.sampled_from(sorted(BOUNDS)), st.data())
def test_Gbar_symmetric_psd_random(model, name, data):
    m = model(name)
    v0 = slow_point(data, name)[None]
    G = m.G(v0)[0]
    assert np.abs(G - G.T).max() < 1e-12
    assert np.linalg.eigvalsh(G).min() >= -1e-10
    s = m.sigma(v0)[0]
    assert np.abs(s @ s.T - G).max() < 1e-8 * max(1.0, np.abs(G).max())


@CASES
@given(st.integers(0, 2 ** 63 - 1), st.integers(0, 1000))
def test_ssa_seed_determinism(builtin, seed, index):
    net, spec, _ = builtin("michaelis-menten")
    a = ssa_simulate(net, spec, t_end=0.05, seed=[seed, index], n_out=5)
    b = ssa_simulate(net, spec, t_end=0.05, seed=[seed, index], n_out=5)
    assert a.states.tobytes() == b.states.tobytes() and a.meta["events"] == b.meta["events"]
