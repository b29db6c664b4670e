import numpy as np
import pytest

from dvfkit import (
    AnalyticDvfSpec,
    AppendixRadial,
    GridGeometry,
    Translation,
    VectorField,
    generate,
)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260810)


@pytest.fixture(scope="session")
def small_geometry():
    # [1, 4]^2 at h = 0.05: away from the radial field's origin singularity
    return GridGeometry(extent=(61, 61), spacing=(0.05, 0.05), origin=(1.0, 1.0))


@pytest.fixture(scope="session")
def radial_pair(small_geometry):
    return generate(AnalyticDvfSpec(AppendixRadial(b=0.5, m=8), small_geometry))


@pytest.fixture(scope="session")
def translation_pair():
    geom = GridGeometry(extent=(12, 10), spacing=(1.0, 1.0), origin=(0.0, 0.0))
    return generate(AnalyticDvfSpec(Translation((2.0, -1.0)), geom))


def random_vector_field(rng, geometry, scale=1.0, dtype=np.float64) -> VectorField:
    comp = rng.normal(0.0, scale, size=(geometry.dimension, *geometry.extent))
    return VectorField(geometry, comp.astype(dtype))
