import numpy as np
import pytest
from numpy.testing import assert_allclose

from dvfkit import (
    Alternating,
    AnalyticDvfSpec,
    AppendixRadial,
    Constant,
    GridGeometry,
    InfeasibleControl,
    LinearMap,
    ScalarField,
    SpatiallyVariant,
    alternating_from_percentiles,
    build_mu_map,
    characterize,
    feasible_range,
    generate,
    midrange_mu,
    neighborhood_gamma,
    optimal_mu,
    origin_neighborhood,
)
from dvfkit.spectral import eigenvalues


def spectral_radius_q(lam, mu):
    """rho(Q(mu)) = max_j |1 - (1 - mu) lambda_j|, the brute-force side."""
    return np.abs(1.0 - (1.0 - mu) * np.asarray(lam)).max()


def random_controllable(rng, dim, n):
    out = []
    while len(out) < n:
        m = np.eye(dim) + rng.normal(scale=0.6, size=(dim, dim))
        lam = np.array(eigenvalues(m))
        if np.abs(lam).min() < 1e-6:
            continue
        if np.min((1.0 / lam).real) > 0.02:
            out.append(lam)
    return out


class TestFeasibleRange:
    def test_gamma_one(self):
        r = feasible_range(1.0)
        assert r.lower == -1.0 and r.upper == 1.0

    def test_gamma_quarter(self):
        r = feasible_range(0.25)
        assert r.lower == pytest.approx(0.5)
        assert r.contains(0.75) and not r.contains(0.5)

    def test_gamma_zero_infeasible(self):
        with pytest.raises(InfeasibleControl):
            feasible_range(0.0)

    def test_soundness_on_randoms(self, rng):
        # every mu strictly inside the range contracts; just below it does not
        for lam in random_controllable(rng, 3, 60):
            gamma = np.min((1.0 / lam).real)
            r = feasible_range(gamma)
            for t in (0.05, 0.5, 0.95):
                mu = r.lower + t * (r.upper - r.lower)
                if r.contains(mu):
                    assert spectral_radius_q(lam, mu) < 1.0
            below = 1.0 - 2.0 * gamma - 0.05
            if below > -1.0:
                assert spectral_radius_q(lam, below) >= 1.0 - 1e-6


class TestMidrange:
    def test_paper_anchor_values(self):
        assert midrange_mu(1.0) == pytest.approx(0.0)
        assert midrange_mu(0.5) == pytest.approx(0.5)

    def test_wide_range_midpoint(self):
        # gamma >= 1 leaves the full (-1, 1); its midpoint is 0
        assert midrange_mu(1.5) == pytest.approx(0.0)

    def test_infeasible(self):
        with pytest.raises(InfeasibleControl):
            midrange_mu(-0.1)

    def test_inside_feasible_range(self, rng):
        for g in rng.uniform(0.01, 3.0, size=50):
            assert feasible_range(g).contains(midrange_mu(g))


class TestNeighborhoodGamma:
    def test_radius_zero_identity(self, rng):
        g = GridGeometry((5, 5), (1.0, 1.0), (0.0, 0.0))
        f = ScalarField(g, rng.uniform(0.1, 2.0, size=(5, 5)))
        out = neighborhood_gamma(f, 0.0)
        assert_allclose(out.values, f.values)

    def test_constant_map(self):
        g = GridGeometry((6, 6), (1.0, 1.0), (0.0, 0.0))
        f = ScalarField(g, np.full((6, 6), 0.7))
        assert_allclose(neighborhood_gamma(f, 2.5).values, 0.7)

    def test_row_profile(self):
        # profile {1.0, 0.4, 0.8} along x, radius one sample -> all 0.4
        g = GridGeometry((3, 3), (1.0, 1.0), (0.0, 0.0))
        vals = np.repeat(np.array([[1.0], [0.4], [0.8]]), 3, axis=1)
        out = neighborhood_gamma(ScalarField(g, vals), 1.0)
        assert_allclose(out.values, 0.4)

    def test_brute_force_window(self, rng):
        g = GridGeometry((9, 7), (0.5, 0.5), (0.0, 0.0))
        vals = rng.uniform(0.1, 2.0, size=(9, 7))
        valid = rng.uniform(size=(9, 7)) > 0.2
        f = ScalarField(g, vals, valid)
        out = neighborhood_gamma(f, 1.0)  # 2-sample half-window
        k = 2
        for i in range(9):
            for j in range(7):
                w = vals[max(0, i - k) : i + k + 1, max(0, j - k) : j + k + 1]
                wv = valid[max(0, i - k) : i + k + 1, max(0, j - k) : j + k + 1]
                if wv.any():
                    assert out.values[i, j] == pytest.approx(w[wv].min())
                    assert out.validity[i, j]
                else:
                    assert not out.validity[i, j]


class TestOptimalMu:
    def test_identity_spectrum(self):
        res = optimal_mu([1.0, 1.0, 1.0])
        assert res.mu == pytest.approx(0.0)
        assert res.rho == pytest.approx(0.0)
        assert res.case == "R"

    def test_real_pair(self):
        res = optimal_mu([0.5, 2.0])
        assert res.mu == pytest.approx(1.0 - 2.0 / 2.5)
        assert res.rho == pytest.approx(1.5 / 2.5)
        assert res.case == "R"

    def test_rotation_case_c1(self):
        th = np.pi / 3
        res = optimal_mu([np.exp(1j * th), np.exp(-1j * th), 1.0])
        assert res.case == "C1"
        assert res.mu == pytest.approx(0.5)
        assert res.rho == pytest.approx(np.sin(th))

    def test_infeasible(self):
        with pytest.raises(InfeasibleControl):
            optimal_mu([-1.0, 1.0, 1.0])

    def test_clamped_flag(self):
        # tiny positive eigenvalues push the formula below -1
        res = optimal_mu([0.1, 0.2])
        assert res.clamped and res.mu == pytest.approx(-1.0)
        assert res.rho == pytest.approx(spectral_radius_q([0.1, 0.2], res.mu), abs=1e-12)

    def test_brute_force_optimality(self, rng):
        grid = -1.0 + 2.0 * (np.arange(1, 2002)) / 2002.0
        for dim in (2, 3):
            for lam in random_controllable(rng, dim, 40):
                res = optimal_mu(lam)
                brute = min(spectral_radius_q(lam, mu) for mu in grid)
                assert res.rho <= brute + 1e-9
                attained = spectral_radius_q(lam, res.mu)
                assert abs(attained - res.rho) <= 1e-9

    def test_cases_exhaustive_exclusive(self, rng):
        seen = set()
        for lam in random_controllable(rng, 3, 200):
            res = optimal_mu(lam)
            has_pair = np.any(np.asarray(lam).imag != 0)
            assert res.case in (("C1", "C2") if has_pair else ("R",))
            seen.add(res.case)
        assert {"C1", "C2"} <= seen


class TestMuMap:
    def test_translation_all_zero(self, translation_pair):
        maps = characterize(translation_pair.forward)
        mu_map = build_mu_map(translation_pair.forward, maps)
        assert_allclose(mu_map.values, 0.0, atol=1e-12)
        assert mu_map.validity.all()

    def test_uniform_scaling(self):
        # u = x: lambda = 2 (double), mu* = 1 - 2/4 = 1/2, rho* = 0
        g = GridGeometry((8, 8), (1.0, 1.0), (0.0, 0.0))
        pair = generate(AnalyticDvfSpec(LinearMap(np.eye(2)), g))
        maps = characterize(pair.forward)
        mu_map = build_mu_map(pair.forward, maps)
        assert_allclose(mu_map.values, 0.5, atol=1e-9)

    def test_radial_matches_closed_form(self):
        # the radial family's optimum is -b cos(m theta)
        geom = GridGeometry((321, 321), (0.05, 0.05), (-8.0, -8.0))
        pair = generate(AnalyticDvfSpec(AppendixRadial(b=0.8, m=8), geom))
        maps = characterize(pair.forward)
        mu_map = build_mu_map(pair.forward, maps, degenerate=origin_neighborhood(geom, 5))
        mesh = geom.meshgrid()
        theta = np.arctan2(mesh[1], mesh[0])
        expected = -0.8 * np.cos(8 * theta)
        r = np.hypot(mesh[0], mesh[1])
        sel = mu_map.validity & (r > 2.0)
        diff = np.abs(mu_map.values - expected)[sel]
        # the defective double eigenvalue splits under FD noise like the
        # square root of the stencil error, so the tail is looser than the bulk
        assert np.median(diff) < 2e-3
        assert np.quantile(diff, 0.98) < 0.05

    def test_eightfold_symmetry(self):
        geom = GridGeometry((161, 161), (0.1, 0.1), (-8.0, -8.0))
        pair = generate(AnalyticDvfSpec(AppendixRadial(b=0.8, m=8), geom))
        maps = characterize(pair.forward)
        mu_map = build_mu_map(pair.forward, maps, degenerate=origin_neighborhood(geom, 5))
        # quarter-turn rotation (= 2 periods of cos 8theta) maps the grid
        # onto itself and must leave the map unchanged
        rot = np.rot90(mu_map.values)
        sel = mu_map.validity & np.rot90(mu_map.validity)
        assert np.abs(mu_map.values - rot)[sel].max() < 1e-9

    def test_fallback_recorded(self):
        geom = GridGeometry((41, 41), (0.1, 0.1), (-2.0, -2.0))
        pair = generate(AnalyticDvfSpec(AppendixRadial(b=0.5, m=4), geom))
        maps = characterize(pair.forward)
        degen = origin_neighborhood(geom, 3)
        mu_map = build_mu_map(pair.forward, maps, degenerate=degen)
        assert not mu_map.validity[degen.inside].any()
        inside_fallback = mu_map.values[degen.inside]
        assert np.all((inside_fallback > -1.0) & (inside_fallback < 1.0))


class TestAlternating:
    def test_constant_gamma(self):
        g = GridGeometry((10, 10), (1.0, 1.0), (0.0, 0.0))
        f = ScalarField(g, np.full((10, 10), 0.5))
        assert alternating_from_percentiles(f) == (pytest.approx(0.5), pytest.approx(0.5))

    def test_copd4_like_distribution(self):
        # control-index median -0.7 and 98th percentile 0.3
        # -> mid-range values (0.15, 0.65)
        g = GridGeometry((10, 10), (1.0, 1.0), (0.0, 0.0))
        index = np.concatenate([
            np.full(60, -0.7),
            np.full(36, -0.2),
            np.full(4, 0.3),
        ])
        gamma = (1.0 - index) / 2.0
        f = ScalarField(g, gamma.reshape(10, 10))
        mu_o, mu_e = alternating_from_percentiles(f)
        assert mu_o == pytest.approx(0.15)
        assert mu_e == pytest.approx(0.65)

    def test_all_uncontrollable_infeasible(self):
        g = GridGeometry((4, 4), (1.0, 1.0), (0.0, 0.0))
        f = ScalarField(g, np.ones((4, 4)), np.zeros((4, 4), dtype=bool))
        with pytest.raises(InfeasibleControl):
            alternating_from_percentiles(f)

    def test_scheme_phase(self):
        s = Alternating(0.1, 0.7)
        assert [s.mu_at(k) for k in range(4)] == [0.1, 0.7, 0.1, 0.7]
        s2 = Alternating(0.1, 0.7, lead="even")
        assert [s2.mu_at(k) for k in range(4)] == [0.7, 0.1, 0.7, 0.1]


class TestSchemeValidation:
    def test_constant_range(self):
        with pytest.raises(InfeasibleControl):
            Constant(1.5)
        with pytest.raises(InfeasibleControl):
            Constant(-1.0)

    def test_variant_map_range(self):
        g = GridGeometry((3, 3), (1.0, 1.0), (0.0, 0.0))
        bad = ScalarField(g, np.full((3, 3), 1.0))
        with pytest.raises(InfeasibleControl):
            SpatiallyVariant(bad)
