import itertools

import numpy as np
import pytest

from poolscreen.bias import (
    CanonicalPotential,
    as_canonical,
    b_tensor_closed,
    b_tensor_direct,
    bias_correction,
    bias_upper_bound,
    bound_constants,
    canonical_from_table,
    design_bias_bound,
    e_product,
    group_test_potential,
    ldpc_potential,
    pair_bias,
)
from poolscreen.bp import bp_solve
from poolscreen.design import PoolingDesign, catalog_bibd, dualize
from poolscreen.exact import exact_marginals
from poolscreen.model import PoolPotential

from _oracles import random_pair


def _corners(k):
    return ((np.arange(1 << k)[:, None] >> np.arange(k)) & 1).astype(float)


def _random_canonical(rng, pool, family):
    if family == "group-test":
        c0, c1 = rng.normal(0, 1.5, 2)
        return group_test_potential(pool, c0, c1)
    if family == "ldpc":
        return ldpc_potential(pool, rng.normal(0, 1.0), rng.normal())
    return canonical_from_table(pool, rng.normal(0, 1.0, 1 << len(pool)))


# ---------------------------------------------------------------------------
# canonical forms


@pytest.mark.parametrize("k", [1, 2, 3, 5])
def test_group_test_form_pointwise(k):
    pool = tuple(range(k))
    pot = canonical_from_table(pool, (-0.7, 1.3))
    assert pot.n_terms == 1 and pot.const == 1.3
    assert pot.coefs[0] == pytest.approx(-2.0 * (-1.0) ** k)
    assert np.all(pot.anchors == 1)
    x = _corners(k)
    want = np.where(x.max(axis=1) > 0, 1.3, -0.7)
    np.testing.assert_allclose(pot.evaluate(x), want, atol=1e-12)


@pytest.mark.parametrize("k", [1, 2, 4])
def test_ldpc_form_pointwise(k):
    pot = ldpc_potential(tuple(range(k)), 0.8)
    assert pot.coefs[0] == pytest.approx(0.8 * (-2.0) ** k)
    assert np.all(pot.anchors == 0.5)
    x = _corners(k)
    np.testing.assert_allclose(pot.evaluate(x), 0.8 * np.prod(1 - 2 * x, axis=1), atol=1e-12)
    # the same function given as a table is recognized
    table = 0.8 * np.prod(1 - 2 * x, axis=1)
    again = canonical_from_table(tuple(range(k)), table)
    # a single clone's parity is also a group test
    assert again.family == ("group-test" if k == 1 else "ldpc") and again.n_terms == 1
    np.testing.assert_allclose(again.evaluate(x), table, atol=1e-12)


def test_general_and_constant_tables():
    rng = np.random.default_rng(0)
    for k in range(1, 6):
        table = rng.normal(size=1 << k)
        pot = canonical_from_table(tuple(range(10, 10 + k)), table)
        np.testing.assert_allclose(pot.evaluate(_corners(k)), table, atol=1e-12)
    const = canonical_from_table((0, 1, 2), np.full(8, 2.5))
    assert const.n_terms == 0 and const.const == 2.5
    with pytest.raises(ValueError):
        canonical_from_table((0, 1), np.zeros(3))
    with pytest.raises(ValueError):
        CanonicalPotential((0,), 0.0, [1.0], [[1.5]])


def test_as_canonical_from_pool_potential():
    pot = as_canonical(PoolPotential(-1.0, 0.5), (3, 4))
    assert pot.family == "group-test" and pot.rho == 1.5


def test_e_product_examples():
    xbar = np.full(5, 0.1)
    anchor = {i: 1.0 for i in range(5)}
    assert e_product((), xbar, anchor) == 1.0
    assert e_product((0, 2, 3), xbar, anchor) == pytest.approx((-0.9) ** 3)
    anchor[2] = 0.1
    assert e_product((0, 2, 3), xbar, anchor) == 0.0


# ---------------------------------------------------------------------------
# B tensor


def test_zero_when_overlap_at_most_one():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n_union = int(rng.integers(2, 10))
        r, s = random_pair(rng, n_union, 0, 1)
        fam = rng.choice(["group-test", "ldpc", "general"])
        pr, ps = _random_canonical(rng, r, fam), _random_canonical(rng, s, fam)
        xbar = rng.uniform(0.02, 0.98, n_union)
        for i in set(r) | set(s):
            assert b_tensor_closed(i, xbar, pr, ps) == 0.0
            assert abs(b_tensor_direct(i, xbar, pr, ps)) < 1e-12


def test_outside_support_is_zero():
    pr = group_test_potential((0, 1, 2), -1, 1)
    ps = group_test_potential((1, 2, 3), -1, 1)
    xbar = np.full(6, 0.3)
    assert b_tensor_closed(5, xbar, pr, ps) == 0.0
    assert abs(b_tensor_direct(5, xbar, pr, ps)) < 1e-14


@pytest.mark.parametrize("family", ["group-test", "ldpc", "general"])
def test_closed_matches_direct(family):
    rng = np.random.default_rng({"group-test": 2, "ldpc": 3, "general": 4}[family])
    for _ in range(40):
        n_union = int(rng.integers(3, 9))
        r, s = random_pair(rng, n_union, 2, 4)
        pr, ps = _random_canonical(rng, r, family), _random_canonical(rng, s, family)
        xbar = rng.uniform(0.05, 0.95, n_union)
        for i in range(n_union):
            assert b_tensor_closed(i, xbar, pr, ps) == pytest.approx(
                b_tensor_direct(i, xbar, pr, ps), abs=1e-10)
        clones, vals = pair_bias(xbar, pr, ps)
        want = [b_tensor_closed(int(i), xbar, pr, ps) for i in clones]
        np.testing.assert_allclose(vals, want, atol=1e-12)


def test_direct_rejects_degenerate_means():
    pr = group_test_potential((0, 1), -1, 1)
    with pytest.raises(ValueError):
        b_tensor_direct(0, np.array([0.0, 0.5]), pr, pr)
    with pytest.raises(ValueError):
        b_tensor_closed(0, np.array([0.5, 1.0]), pr, pr)


@pytest.mark.parametrize("sizes, lam", [((4, 5), 2), ((6, 6), 3), ((8, 8), 2), ((4, 7), 3)])
def test_group_test_example_formula(sizes, lam):
    """For i in r - s with uniform means:
    |B| = |rho_r rho_s| x (1-x) (1-x)^(|r|+|s|-1) [(1+t)^lam - 1 - lam t], t = x/(1-x)."""
    nr, ns = sizes
    r = tuple(range(nr))
    s = tuple(range(nr - lam, nr - lam + ns))
    n = max(r[-1], s[-1]) + 1
    rho_r, rho_s = 1.7, -0.6
    pr = group_test_potential(r, 0.2, 0.2 + rho_r)
    ps = group_test_potential(s, -1.0, -1.0 + rho_s)
    for x in (0.05, 0.1, 0.3, 0.6):
        t = x / (1 - x)
        mag = abs(rho_r * rho_s) * x * (1 - x) * (1 - x) ** (nr + ns - 1) * (
            (1 + t) ** lam - 1 - lam * t)
        b = b_tensor_closed(0, np.full(n, x), pr, ps)
        assert abs(b) == pytest.approx(mag, rel=1e-10, abs=1e-300)
        # sign: B carries the sign of rho_r rho_s for clones outside the overlap
        assert np.sign(b) == np.sign(rho_r * rho_s)


@pytest.mark.parametrize("sizes, lam", [((4, 5), 2), ((5, 5), 3)])
def test_ldpc_example_formula(sizes, lam):
    """|B| = 2|rho_r rho_s| x (1-x) |2x-1|^(|r|+|s|-1) [(1+u)^lam - 1 - lam u],
    u = x (1-x) / (x - 1/2)^2, for i in r - s."""
    nr, ns = sizes
    r = tuple(range(nr))
    s = tuple(range(nr - lam, nr - lam + ns))
    n = max(r[-1], s[-1]) + 1
    rho_r, rho_s = 0.9, 1.3
    pr, ps = ldpc_potential(r, rho_r), ldpc_potential(s, rho_s)
    for x in (0.1, 0.3, 0.8):
        u = x * (1 - x) / (x - 0.5) ** 2
        mag = 2 * abs(rho_r * rho_s) * x * (1 - x) * abs(2 * x - 1) ** (nr + ns - 1) * (
            (1 + u) ** lam - 1 - lam * u)
        b = b_tensor_closed(0, np.full(n, x), pr, ps)
        assert abs(b) == pytest.approx(mag, rel=1e-10)


def test_bilinearity_and_symmetry():
    rng = np.random.default_rng(5)
    for _ in range(20):
        r, s = random_pair(rng, 8, 2, 3)
        pr = _random_canonical(rng, r, "general")
        ps = _random_canonical(rng, s, "group-test")
        xbar = rng.uniform(0.05, 0.95, 8)
        a, b = rng.normal(size=2)
        for i in set(r) | set(s):
            base = b_tensor_closed(i, xbar, pr, ps)
            assert b_tensor_closed(i, xbar, pr.scaled(a), ps) == pytest.approx(a * base, abs=1e-12)
            assert b_tensor_closed(i, xbar, pr.scaled(a), ps.scaled(b)) == pytest.approx(
                a * b * base, abs=1e-12)
            assert b_tensor_closed(i, xbar, ps, pr) == pytest.approx(base, abs=1e-14)
            assert b_tensor_direct(i, xbar, ps, pr) == pytest.approx(
                b_tensor_direct(i, xbar, pr, ps), abs=1e-12)


def test_constant_shift_does_not_change_b():
    rng = np.random.default_rng(6)
    r, s = (0, 1, 2, 3), (1, 2, 3, 4)
    pr = group_test_potential(r, -0.5, 1.0)
    ps = group_test_potential(s, 0.0, 2.0)
    shifted = group_test_potential(s, 10.0, 12.0)
    xbar = rng.uniform(0.1, 0.9, 5)
    for i in range(5):
        assert b_tensor_closed(i, xbar, pr, ps) == pytest.approx(
            b_tensor_closed(i, xbar, pr, shifted), abs=1e-14)


# ---------------------------------------------------------------------------
# correction


def test_packing_and_single_pool_designs_have_no_correction():
    blocks, _ = catalog_bibd("9-4-12-3-1")
    d = dualize(blocks)
    rng = np.random.default_rng(7)
    xbar = rng.uniform(0.05, 0.5, d.n)
    pots = [PoolPotential(*rng.normal(size=2)) for _ in range(d.m)]
    rep = bias_correction(d, xbar, pots)
    assert np.all(rep.delta == 0) and np.array_equal(rep.corrected, xbar)
    single = PoolingDesign(5, ((0, 1, 2, 3, 4),))
    rep = bias_correction(single, np.full(5, 0.2), [PoolPotential(0, 1)])
    assert np.all(rep.delta == 0)


def test_correction_is_half_ordered_sum():
    rng = np.random.default_rng(8)
    d = PoolingDesign(9, ((0, 1, 2, 3), (2, 3, 4, 5), (3, 4, 6, 7), (0, 5, 7, 8)))
    xbar = rng.uniform(0.05, 0.6, d.n)
    pots = [PoolPotential(*rng.normal(0, 1.5, 2)) for _ in range(d.m)]
    canon = [as_canonical(p, pool) for p, pool in zip(pots, d.pools)]
    want = np.zeros(d.n)
    for r, s in itertools.permutations(range(d.m), 2):
        for i in range(d.n):
            want[i] += b_tensor_closed(i, xbar, canon[r], canon[s])
    rep = bias_correction(d, xbar, pots, keep_contributions=True)
    np.testing.assert_allclose(rep.delta, -0.5 * want, atol=1e-14)
    assert set(rep.contributions) == {(0, 1), (1, 2)}


def test_clamping():
    d = PoolingDesign(4, ((0, 1, 2), (0, 1, 3)))
    xbar = np.array([1e-9, 1e-9, 0.5, 0.5])
    pots = [PoolPotential(-5.0, 5.0), PoolPotential(-5.0, 5.0)]
    rep = bias_correction(d, xbar, pots, clamp=1e-12)
    assert np.all((rep.corrected >= 1e-12) & (rep.corrected <= 1 - 1e-12))
    np.testing.assert_array_equal(rep.corrected_raw, xbar + rep.delta)
    with pytest.raises(ValueError):
        bias_correction(d, np.full(3, 0.5), pots)


def test_weak_coupling_sign():
    """As pool strengths shrink, the correction tracks the true BP error."""
    d = PoolingDesign(6, ((0, 1, 2, 3), (1, 2, 3, 4), (0, 4, 5)))
    h = np.array([-1.0, -0.5, 0.2, -1.5, 0.4, -0.8])
    base = [PoolPotential(0.0, 1.0), PoolPotential(0.5, -0.7), PoolPotential(0.0, 0.8)]
    for eps in (0.1, 0.05):
        pots = [PoolPotential(eps * c0, eps * c1) for c0, c1 in base]
        _, q, st = bp_solve(d, h, pots)
        assert st.converged
        exact = exact_marginals(d, h, pots).q
        err = exact - q.q
        rep = bias_correction(d, q.q, pots)
        i = int(np.argmax(np.abs(err)))
        assert np.sign(rep.delta[i]) == np.sign(err[i])
        assert rep.delta[i] / err[i] == pytest.approx(1.0, abs=0.25)


# ---------------------------------------------------------------------------
# bounds


def test_bound_examples():
    r, s = (0, 1, 2, 3), (2, 3, 4, 5)
    assert bias_upper_bound(r, s, 2.0, 0.5) == pytest.approx(2.0 * 0.5 ** 6 / 2 * 2.0 ** 2)
    vals = [bias_upper_bound(r, s, 1.0, dlt) for dlt in np.arange(1, 10) / 10]
    assert np.all(np.diff(vals) > 0)
    with pytest.raises(ValueError):
        bias_upper_bound(r, s, 1.0, 1.0)
    with pytest.raises(ValueError):
        bias_upper_bound(r, s, 1.0, 0.0)


def test_bound_holds_on_random_group_tests():
    rng = np.random.default_rng(9)
    for _ in range(300):
        n_union = int(rng.integers(3, 12))
        r, s = random_pair(rng, n_union, 0, 4)
        pr = group_test_potential(r, *rng.normal(0, 2, 2))
        ps = group_test_potential(s, *rng.normal(0, 2, 2))
        xbar = rng.uniform(0.01, 0.99, n_union)
        C, delta = bound_constants(xbar, pr, ps)
        bound = bias_upper_bound(r, s, C, delta)
        for i in set(r) | set(s):
            assert abs(b_tensor_closed(i, xbar, pr, ps)) <= bound * (1 + 1e-12)


def test_bound_constants():
    pr = group_test_potential((0, 1), 0.0, 2.0)
    ps = group_test_potential((1, 2), 0.0, -0.5)
    C, delta = bound_constants(np.array([0.1, 0.3, 0.2]), pr, ps)
    assert C == pytest.approx(1.0) and delta == pytest.approx(0.9)
    with pytest.raises(ValueError):
        bound_constants(np.array([0.1, 0.3, 0.2]), group_test_potential((0,), 1, 1),
                        group_test_potential((1,), 2, 2))


def test_design_bound():
    blocks, _ = catalog_bibd("9-4-12-3-1")
    packing = dualize(blocks)
    assert design_bias_bound(packing, 1.0, 0.9) > 0
    two = PoolingDesign(6, ((0, 1, 2), (1, 2, 3), (3, 4, 5)))
    assert design_bias_bound(two, 1.0, 0.9) == pytest.approx(
        1.0 * 3 * 0.9 ** 4 * (1 + 1 / (4 * 0.81)) ** 2)
    a = PoolingDesign(8, ((0, 1, 2, 3), (0, 1, 4, 5), (4, 5, 6, 7)))
    b = PoolingDesign(8, ((0, 1, 2, 3), (0, 1, 2, 4), (4, 5, 6, 7)))
    assert design_bias_bound(b, 1.0, 0.9) > design_bias_bound(a, 1.0, 0.9)
    with pytest.raises(ValueError):
        design_bias_bound(PoolingDesign(3, ((0,), (1, 2))), 1.0, 0.5)
