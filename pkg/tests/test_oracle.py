import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codedqueue import (
    InvalidConfig,
    ShapeMismatch,
    StationaryDistribution,
    SystemConfig,
    bos_stationary,
    compare_distributions,
    mmr_stationary,
)
from codedqueue.oracle import (
    birth_death_generator,
    build_generator,
    generator_residual,
    solve_bos_direct,
    solve_stationary_direct,
)
from codedqueue.states import Good, Kind, Low, Odd, Perfect

from conftest import at_load


def test_smallest_generator():
    gen = build_generator(SystemConfig(2, 1.0), 1)
    assert gen.states == (Low(0), Low(1), Low(2), Low(3), Perfect(0), Good(0), Odd(0))
    assert gen.rate(Odd(0), Perfect(0)) == 3.0
    assert gen.rate(Odd(0), Good(0)) == 1.0
    Q = gen.dense()
    row = Q[gen.states.index(Odd(0))]
    assert np.count_nonzero(row) == 3  # two services plus the diagonal; the arrival is dropped


@settings(max_examples=30, deadline=None)
@given(r=st.integers(2, 6), lam=st.floats(0.0, 10.0), mu=st.floats(0.1, 5.0), levels=st.integers(1, 12))
def test_generator_shape(r, lam, mu, levels):
    gen = build_generator(SystemConfig(r, lam, mu), levels)
    Q = gen.dense()
    assert gen.size == 2 * r + 3 * levels
    np.testing.assert_allclose(Q.sum(axis=1), 0.0, atol=1e-12)
    off = Q - np.diag(np.diag(Q))
    assert (off >= 0).all()


def test_transition_structure():
    r, lam, mu = 3, 0.7, 1.3
    gen = build_generator(SystemConfig(r, lam, mu), 4)
    for l in range(1, 6):
        assert gen.rate(Low(l), Low(l - 1)) == pytest.approx(l * mu)
    assert gen.rate(Low(3), Low(5)) == lam
    assert gen.rate(Low(4), Perfect(0)) == lam
    assert gen.rate(Low(5), Odd(0)) == lam
    for m in range(4):
        down = Odd(m - 1) if m else Low(5)
        assert gen.rate(Perfect(m), down) == pytest.approx(6 * mu)
        assert gen.rate(Good(m), down) == pytest.approx(5 * mu)
        assert gen.rate(Odd(m), Perfect(m)) == pytest.approx(5 * mu)
        assert gen.rate(Odd(m), Good(m)) == pytest.approx(mu)
        if m < 3:
            for s, t in ((Perfect(m), Perfect(m + 1)), (Good(m), Good(m + 1)), (Odd(m), Odd(m + 1))):
                assert gen.rate(s, t) == lam


def test_odd_states_have_two_service_exits():
    r, mu = 4, 1.0
    gen = build_generator(SystemConfig(r, 2.0, mu), 6)
    for m in range(6):
        exits = {t: gen.rate(Odd(m), t) for s, t in gen.edges() if s == Odd(m) and t.kind != Kind.ODD}
        assert exits == {Perfect(m): (2 * r - 1) * mu, Good(m): mu}


def test_low_block_matches_multiserver_service():
    # below 2r every packet is in service: same departure rates as M/M/2r
    r, lam, mu = 3, 2.0, 1.5
    gen = build_generator(SystemConfig(r, lam, mu), 2)
    bd = birth_death_generator(2 * r, lam, mu, 2 * r)
    for l in range(1, 2 * r):
        assert gen.rate(Low(l), Low(l - 1)) == bd.rate(Low(l), Low(l - 1))


def test_golden_pi0():
    direct = solve_bos_direct(SystemConfig(2, 1.0), 40)
    assert direct[Low(0)] == pytest.approx(23 / 113, abs=1e-10)


def test_single_state():
    gen = birth_death_generator(1, 1.0, 1.0, 1)
    assert solve_stationary_direct(gen).probs.tolist() == [1.0]


@pytest.mark.parametrize("r,rho", [(2, 0.5), (3, 0.8), (5, 0.95)])
def test_birth_death_matches_closed_form(r, rho):
    dist = mmr_stationary(SystemConfig(r, rho * r))
    size = dist.truncation_index + 500
    direct = solve_stationary_direct(birth_death_generator(r, rho * r, 1.0, size))
    M = dist.truncation_index
    np.testing.assert_allclose(direct.probs[: M + 1], dist.probs, atol=1e-10, rtol=0)


def test_converged_oracle_matches_iteration():
    cfg = SystemConfig(2, 1.8)
    levels, prev = 50, None
    while True:
        pi0 = solve_bos_direct(cfg, levels)[Low(0)]
        if prev is not None and abs(pi0 - prev) < 1e-13:
            break
        prev, levels = pi0, levels * 2
    direct = solve_bos_direct(cfg, levels)
    gap, _ = compare_distributions(bos_stationary(cfg).to_stationary(levels), direct)
    assert gap < 1e-8


@pytest.mark.parametrize("r,frac", [(2, 0.5), (3, 0.9), (4, 0.95)])
def test_truncation_convergence(r, frac):
    cfg = at_load(r, frac)
    a = solve_bos_direct(cfg, 400)[Low(0)]
    b = solve_bos_direct(cfg, 800)[Low(0)]
    assert abs(a - b) < 1e-10


def test_sparse_matches_dense():
    cfg = SystemConfig(3, 2.0)
    dense = solve_stationary_direct(build_generator(cfg, 60, sparse=False))
    sparse = solve_stationary_direct(build_generator(cfg, 60, sparse=True))
    np.testing.assert_allclose(dense.probs, sparse.probs, atol=1e-13)


def test_large_chain_goes_sparse():
    cfg = at_load(2, 0.99)
    gen = build_generator(cfg, 2500)
    assert gen.is_sparse
    direct = solve_stationary_direct(gen)
    assert generator_residual(gen, direct.probs) < 1e-10


def test_compare_distributions():
    cfg = SystemConfig(2, 1.0)
    x = solve_bos_direct(cfg, 10)
    assert compare_distributions(x, x) == (0.0, x.states[0])
    bumped = x.probs.copy()
    bumped[7] += 1e-6
    gap, where = compare_distributions(x, StationaryDistribution.from_pairs(x.states, bumped))
    assert gap == pytest.approx(1e-6)
    assert where == x.states[7]
    with pytest.raises(ShapeMismatch):
        compare_distributions(x, solve_bos_direct(cfg, 11))


def test_invalid_levels():
    with pytest.raises(InvalidConfig):
        build_generator(SystemConfig(2, 1.0), 0)
