"""Field sampling tests.

Oracles: closed-form scalar/pair Gaussian moments for EXACT_LOG, and an
independent dyadic ancestor counter (test-side reimplementation from raw
positions) for DYADIC_BRW covariance structure.
"""

import numpy as np
import pytest

from ldperc.field import (
    DYADIC_BRW,
    EXACT_LOG,
    Field,
    Kernel,
    brw_common_ancestors,
    brw_root_square,
    load_field,
    sample_field,
    sample_field_brw,
    sample_field_cholesky,
    save_field,
)
from ldperc.lattice import Rect, build_lattice
from ldperc.rng import derive_seed

LN2 = np.log(2.0)


def count_ancestors_oracle(pa, pb, x0, y0, side, depth):
    """Common dyadic squares of two points, by direct floor comparison.

    Mirrors the documented convention: half-open cells, global top/right
    edge clamped into the last cell.
    """

    def cell_of(u, c, ncells):
        return min(int(np.floor(u / c)), ncells - 1)

    n = 0
    for k in range(depth + 1):
        ncells = 2**k
        c = side / ncells
        if cell_of(pa[0] - x0, c, ncells) == cell_of(pb[0] - x0, c, ncells) and cell_of(
            pa[1] - y0, c, ncells
        ) == cell_of(pb[1] - y0, c, ncells):
            n += 1
    return n


def test_single_site_variance():
    lat = build_lattice(1.0, Rect(0, 0, 0.5, 0.5))  # one site at origin
    assert lat.n_sites == 1
    kern = Kernel(EXACT_LOG, length_scale=2.0, ridge=1e-8)
    target = np.log(2.0 / 0.5) + 1e-8
    f = sample_field_cholesky(lat, kern, seed=1)
    assert abs(f.variance[0] - target) < 1e-12
    draws = np.array(
        [sample_field_cholesky(lat, kern, seed=derive_seed(7, r)).values[0] for r in range(20000)]
    )
    se = np.sqrt(2.0 / len(draws)) * target  # Var of variance estimator
    assert abs(draws.var() - target) < 4 * se


def test_two_site_covariance_monte_carlo():
    eta = 0.25
    lat = build_lattice(eta, Rect(0, 0, 0.3, 0.1))
    assert lat.n_sites == 2
    kern = Kernel(EXACT_LOG, length_scale=1.0)
    target = np.log(1.0 / eta)
    n = 10**6
    # Sample in one shot: Cov(h1,h2) estimated from n replicas.
    from ldperc.field import _cholesky_factor

    factor, _ = _cholesky_factor(lat, kern)
    from ldperc.rng import generator

    z = generator(11).standard_normal((n, 2))
    h = z @ factor.T
    emp = np.mean(h[:, 0] * h[:, 1])
    se = np.std(h[:, 0] * h[:, 1]) / np.sqrt(n)
    assert abs(emp - target) < 3 * se


def test_cholesky_determinism_and_mean_zero():
    lat = build_lattice(0.2, Rect(0, 0, 1, 1))
    kern = Kernel(EXACT_LOG)
    a = sample_field_cholesky(lat, kern, seed=42)
    b = sample_field_cholesky(lat, kern, seed=42)
    assert np.array_equal(a.values, b.values)
    c = sample_field_cholesky(lat, kern, seed=43)
    assert not np.array_equal(a.values, c.values)

    reps = np.array(
        [sample_field_cholesky(lat, kern, seed=derive_seed(5, r)).values for r in range(3000)]
    )
    mean = reps.mean(axis=0)
    se = reps.std(axis=0) / np.sqrt(len(reps))
    assert np.all(np.abs(mean) < 4 * se + 1e-12)


def test_cholesky_empirical_covariance_100_sites():
    lat = build_lattice(0.1, Rect(0, 0, 0.9, 0.85))
    assert lat.n_sites <= 100
    kern = Kernel(EXACT_LOG)
    from ldperc.field import _cholesky_factor
    from ldperc.rng import generator

    factor, _ = _cholesky_factor(lat, kern)
    K = factor @ factor.T
    n = 10**4
    z = generator(3).standard_normal((n, lat.n_sites))
    h = z @ factor.T
    emp = (h.T @ h) / n
    # SE of covariance estimator: sqrt((K_ii K_jj + K_ij^2)/n)
    se = np.sqrt((np.outer(np.diag(K), np.diag(K)) + K**2) / n)
    frac_ok = np.mean(np.abs(emp - K) <= 4 * se)
    assert frac_ok >= 0.99, f"only {frac_ok:.3f} of entries within 4 SE"


def test_cholesky_site_cap():
    lat = build_lattice(1 / 128, Rect(0, 0, 1, 1))
    with pytest.raises(ValueError, match="DYADIC_BRW"):
        sample_field_cholesky(lat, Kernel(EXACT_LOG), seed=0)


def test_brw_self_and_halves():
    lat = build_lattice(1 / 8, Rect(0, 0, 1, 1))
    kern = Kernel(DYADIC_BRW, brw_depth=6)
    x0, y0, side, depth = brw_root_square(lat, kern)
    assert depth == 6
    i = 0
    assert brw_common_ancestors(lat, kern, i, i) == depth + 1
    # Two sites in different halves of the root square share only the root.
    left = np.argmin(lat.sites[:, 0])
    right = np.argmax(lat.sites[:, 0])
    assert lat.sites[left, 0] < side / 2 <= lat.sites[right, 0]
    assert brw_common_ancestors(lat, kern, int(left), int(right)) == 1


def test_brw_ancestor_example_scale_minus5():
    # Pairs at distance exactly 2^-5 inside a generic level-4 square: 5
    # or 6 common ancestors depending on level-5 alignment.
    lat = build_lattice(2**-5 / np.sqrt(3), Rect(0, 0, 1, 1))
    kern = Kernel(DYADIC_BRW, brw_depth=10)
    x0, y0, side, depth = brw_root_square(lat, kern)
    assert side == 1.0
    pos = lat.sites
    base = np.array([5.3 / 16, 5.3 / 16])  # interior of a level-4 cell
    a = int(np.argmin(np.linalg.norm(pos - base, axis=1)))
    nbrs = np.nonzero(
        np.abs(np.linalg.norm(pos - pos[a], axis=1) - 2**-5) < 2**-5 * 0.10
    )[0]
    nbrs = [b for b in nbrs if b != a]
    assert nbrs
    for b in nbrs:
        oracle = count_ancestors_oracle(pos[a], pos[b], x0, y0, side, depth)
        assert brw_common_ancestors(lat, kern, a, int(b)) == oracle
    same_level4 = [
        b
        for b in nbrs
        if np.all(np.floor(pos[a] * 16) == np.floor(pos[b] * 16))
    ]
    assert same_level4
    counts = {brw_common_ancestors(lat, kern, a, int(b)) for b in same_level4}
    assert counts <= {5, 6} and counts, counts


def test_brw_covariance_bound_exhaustive():
    # |Cov(x,y) - log(1/|x-y|)| <= fitted C0 < 3 log 2, all pairs, no sampling.
    lat = build_lattice(1 / 8, Rect(0, 0, 1, 1))
    kern = Kernel(DYADIC_BRW, brw_depth=8)
    x0, y0, side, depth = brw_root_square(lat, kern)
    worst = 0.0
    for a in range(lat.n_sites):
        for b in range(a + 1, lat.n_sites):
            cov = LN2 * count_ancestors_oracle(
                lat.sites[a], lat.sites[b], x0, y0, side, depth
            )
            d = np.linalg.norm(lat.sites[a] - lat.sites[b])
            worst = max(worst, abs(cov - np.log(1.0 / d)))
    assert worst < 3 * LN2, f"fitted C0 = {worst:.4f}"


def test_brw_empirical_covariance_matches_ancestors():
    lat = build_lattice(0.25, Rect(0, 0, 1, 1))
    kern = Kernel(DYADIC_BRW, brw_depth=4)
    n = 20000
    reps = np.array(
        [sample_field_brw(lat, kern, seed=derive_seed(9, r)).values for r in range(n)]
    )
    emp = reps.T @ reps / n
    x0, y0, side, depth = brw_root_square(lat, kern)
    for a in range(lat.n_sites):
        for b in range(lat.n_sites):
            target = LN2 * count_ancestors_oracle(
                lat.sites[a], lat.sites[b], x0, y0, side, depth
            )
            se = np.sqrt((emp[a, a] * emp[b, b] + emp[a, b] ** 2) / n)
            assert abs(emp[a, b] - target) < 5 * se


def test_brw_variance_and_determinism():
    lat = build_lattice(1 / 16, Rect(0, 0, 1, 1))
    kern = Kernel(DYADIC_BRW, brw_depth=5)
    f = sample_field_brw(lat, kern, seed=123)
    assert np.allclose(f.variance, 6 * LN2)
    g = sample_field_brw(lat, kern, seed=123)
    assert np.array_equal(f.values, g.values)


def test_brw_depth_validation():
    lat = build_lattice(1 / 16, Rect(0, 0, 1, 1))
    with pytest.raises(ValueError, match="positive"):
        sample_field_brw(lat, Kernel(DYADIC_BRW, brw_depth=0), seed=0)
    with pytest.raises(ValueError, match="shallow"):
        sample_field_brw(lat, Kernel(DYADIC_BRW, brw_depth=2), seed=0)
    f = sample_field_brw(lat, Kernel(DYADIC_BRW), seed=0)  # default depth
    assert f.variance[0] == pytest.approx(5 * LN2)


def test_kernel_validation():
    with pytest.raises(ValueError):
        Kernel("fourier")
    with pytest.raises(ValueError):
        Kernel(EXACT_LOG, length_scale=-1.0)
    with pytest.raises(ValueError):
        Kernel(EXACT_LOG, ridge=-1e-9)


def test_snapshot_roundtrip(tmp_path):
    lat = build_lattice(0.2, Rect(0, 0, 1, 1))
    for kern in (Kernel(EXACT_LOG), Kernel(DYADIC_BRW, brw_depth=4)):
        f = sample_field(lat, kern, seed=77)
        p = tmp_path / "field.bin"
        save_field(f, p)
        g = load_field(p, lat)
        assert isinstance(g, Field)
        assert np.array_equal(f.values, g.values)
        assert np.allclose(f.variance, g.variance)
        assert g.seed == 77
        assert g.kernel.kind == kern.kind


def test_snapshot_mismatch_rejected(tmp_path):
    lat = build_lattice(0.2, Rect(0, 0, 1, 1))
    f = sample_field(lat, Kernel(DYADIC_BRW), seed=1)
    p = tmp_path / "field.bin"
    save_field(f, p)
    other = build_lattice(0.25, Rect(0, 0, 1, 1))
    with pytest.raises(ValueError):
        load_field(p, other)
