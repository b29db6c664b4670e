import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from dvfkit import (
    AnalyticDvfSpec,
    AppendixRadial,
    DomainMask,
    EmptyDomain,
    GridGeometry,
    OutOfBounds,
    Translation,
    VectorField,
    generate,
    sample_vector,
    sample_vector_many,
    valid_domain,
)
from conftest import random_vector_field


class TestGeometry:
    def test_validation(self):
        with pytest.raises(ValueError):
            GridGeometry((5,), (1.0,), (0.0,))
        with pytest.raises(ValueError):
            GridGeometry((5, 1), (1.0, 1.0), (0.0, 0.0))
        with pytest.raises(ValueError):
            GridGeometry((5, 5), (1.0, 0.0), (0.0, 0.0))
        with pytest.raises(ValueError):
            GridGeometry((5, 5, 5, 5), (1.0,) * 4, (0.0,) * 4)

    def test_bounds_and_axes(self):
        g = GridGeometry((3, 5), (0.5, 2.0), (-1.0, 4.0))
        assert g.bounds_lo == (-1.0, 4.0)
        assert g.bounds_hi == (0.0, 12.0)
        assert_allclose(g.axes()[0], [-1.0, -0.5, 0.0])
        assert g.num_points == 15


class TestSampling:
    def test_grid_points_bit_exact(self, rng):
        g = GridGeometry((7, 6, 5), (0.3, 0.7, 1.1), (-2.0, 0.0, 5.0))
        f = random_vector_field(rng, g)
        pts = g.grid_points()
        vals, _ = sample_vector_many(f, pts)
        stored = f.components.reshape(3, -1).T
        assert_array_equal(vals, stored)

    def test_constant_field(self, rng):
        g = GridGeometry((6, 6), (1.0, 1.0), (0.0, 0.0))
        c = np.array([1.5, -2.25])
        f = VectorField(g, np.stack([np.full(g.extent, c[0]), np.full(g.extent, c[1])]))
        for pt in [(0.0, 0.0), (2.3, 4.9), (5.0, 5.0)]:
            assert_array_equal(sample_vector(f, pt), c)

    def test_affine_reproduction(self, rng):
        # multilinear interpolation is exact on affine fields
        a = np.array([[0.3, -0.2, 0.05], [0.1, 0.4, -0.3], [0.0, 0.2, -0.1]])
        g = GridGeometry((5, 6, 7), (0.5, 0.4, 0.6), (-1.0, 2.0, 0.0))
        f = VectorField.from_function(g, lambda pts: pts @ a.T)
        pts = np.random.default_rng(7).uniform(0.05, 0.95, size=(40, 3))
        lo = np.array(g.bounds_lo)
        hi = np.array(g.bounds_hi)
        pts = lo + pts * (hi - lo)
        vals, _ = sample_vector_many(f, pts)
        assert_allclose(vals, pts @ a.T, rtol=0, atol=1e-12)

    def test_radial_field_within_h2_bound(self, radial_pair):
        # off-grid samples against the closed form, bounded by curvature * h^2
        f = radial_pair.forward
        g = f.geometry
        h = g.spacing[0]
        rng = np.random.default_rng(3)
        pts = rng.uniform(1.2, 3.8, size=(200, 2))
        vals, _ = sample_vector_many(f, pts)
        exact = radial_pair.displacement(pts)
        err = np.abs(vals - exact).max()
        # curvature estimate from second differences of the sampled field
        curv = 0.0
        for comp in f.components:
            for ax in (0, 1):
                curv = max(curv, np.abs(np.diff(comp, n=2, axis=ax)).max() / h**2)
        bound = 2.0 * (h**2 / 8.0) * curv * 2  # two axes, safety factor 2
        assert err < bound
        assert err < h**2 * curv  # the h^2-scaled bound itself

    def test_continuity(self, radial_pair):
        g = radial_pair.forward.geometry
        rng = np.random.default_rng(11)
        p = rng.uniform(1.5, 3.5, size=(100, 2))
        delta = rng.uniform(-0.4, 0.4, size=(100, 2)) * g.spacing[0]
        v1, _ = sample_vector_many(radial_pair.forward, p)
        v2, _ = sample_vector_many(radial_pair.forward, p + delta)
        # local oscillation: largest neighbor jump of the sampled field
        osc = max(
            np.abs(np.diff(c, axis=ax)).max()
            for c in radial_pair.forward.components
            for ax in (0, 1)
        )
        assert np.abs(v1 - v2).max() <= 2 * osc

    def test_out_of_bounds(self):
        g = GridGeometry((4, 4), (1.0, 1.0), (0.0, 0.0))
        f = VectorField.zeros(g)
        with pytest.raises(OutOfBounds):
            sample_vector(f, (3.0001, 1.0))
        # faces are inclusive
        assert_array_equal(sample_vector(f, (3.0, 3.0)), [0.0, 0.0])
        vals, inside = sample_vector_many(f, np.array([[5.0, 1.0]]), oob="mask")
        assert not inside[0]
        with pytest.raises(OutOfBounds):
            sample_vector_many(f, np.array([[5.0, 1.0]]), oob="raise")


class TestValidDomain:
    def test_zero_field_full(self):
        g = GridGeometry((8, 9), (1.0, 1.0), (0.0, 0.0))
        mask = valid_domain(VectorField.zeros(g))
        assert mask.inside.all()

    def test_translation_strips(self):
        # shift +k samples along x: the last k columns map outside (out-mapped),
        # the first k columns receive no image (uncovered)
        g = GridGeometry((10, 6), (1.0, 1.0), (0.0, 0.0))
        k = 3
        comp = np.zeros((2, *g.extent))
        comp[0] = float(k)
        mask = valid_domain(VectorField(g, comp))
        expected = np.zeros(g.extent, dtype=bool)
        expected[:-k, :] = True  # not out-mapped
        expected[:k, :] = False  # not covered
        assert_array_equal(mask.inside, expected)

    def test_translation_monotone(self):
        g = GridGeometry((12, 6), (1.0, 1.0), (0.0, 0.0))

        def mask_for(k):
            comp = np.zeros((2, *g.extent))
            comp[0] = float(k)
            return valid_domain(VectorField(g, comp)).inside

        small, big = mask_for(2), mask_for(5)
        assert np.all(big <= small)  # shrinking displacement only grows the domain

    def test_empty_domain(self):
        g = GridGeometry((4, 4), (1.0, 1.0), (0.0, 0.0))
        comp = np.full((2, 4, 4), 100.0)
        with pytest.raises(EmptyDomain):
            valid_domain(VectorField(g, comp))

    def test_radial_refined_contains_subgrid(self):
        # b=0.5 stretches by at most 2x, so the transform keeps [-17,17]^2
        # inside the carrier box; refined coverage closes rasterization holes
        geom = GridGeometry((681, 681), (0.1, 0.1), (-34.0, -34.0))
        pair = generate(AnalyticDvfSpec(AppendixRadial(b=0.5, m=8), geom))
        mask = valid_domain(pair.forward, coverage="refined")
        sub = DomainMask.from_box(geom, (-17.0, -17.0), (17.0, 17.0))
        assert mask.inside[sub.inside].all()

    def test_node_coverage_is_spec_default(self, translation_pair):
        # same result for integer translations under both coverage modes
        m1 = valid_domain(translation_pair.forward, coverage="nodes")
        m2 = valid_domain(translation_pair.forward, coverage="refined")
        assert_array_equal(m1.inside, m2.inside)


class TestFieldTypes:
    def test_vector_field_validation(self):
        g = GridGeometry((4, 4), (1.0, 1.0), (0.0, 0.0))
        with pytest.raises(ValueError):
            VectorField(g, np.zeros((2, 3, 4)))
        bad = np.zeros((2, 4, 4))
        bad[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            VectorField(g, bad)

    def test_scalar_field_validity(self):
        from dvfkit import ScalarField

        g = GridGeometry((3, 3), (1.0, 1.0), (0.0, 0.0))
        vals = np.zeros((3, 3))
        vals[0, 0] = np.inf
        with pytest.raises(ValueError):
            ScalarField(g, vals)
        valid = np.ones((3, 3), dtype=bool)
        valid[0, 0] = False
        f = ScalarField(g, vals, valid)
        assert f.valid_values.size == 8
        assert f.invalid_fraction == pytest.approx(1 / 9)

    def test_immutability(self):
        g = GridGeometry((3, 3), (1.0, 1.0), (0.0, 0.0))
        f = VectorField.zeros(g)
        with pytest.raises(ValueError):
            f.components[0, 0, 0] = 1.0
