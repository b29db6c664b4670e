import numpy as np
import pytest
from numpy.testing import assert_array_equal

from dvfkit import (
    AnalyticDvfSpec,
    AppendixRadial,
    Constant,
    DomainMask,
    GridGeometry,
    HeaderMismatch,
    IndexOutOfRange,
    InversionConfig,
    ScalarField,
    TruncatedPayload,
    UnsupportedSampleType,
    VectorField,
    characterize,
    export_slice,
    generate,
    invert,
    read_field,
    read_report,
    write_field,
    write_report,
)
from conftest import random_vector_field


def roundtrip(field, tmp_path, name="f.dvf", semantic=None):
    p = str(tmp_path / name)
    write_field(field, p, semantic=semantic)
    return read_field(p)


class TestRoundTrip:
    def test_vector_bit_exact(self, tmp_path, rng):
        g = GridGeometry((7, 5, 6), (0.3, 1.0, 2.5), (-1.0, 0.0, 3.0))
        f = random_vector_field(rng, g)
        back = roundtrip(f, tmp_path)
        assert back.geometry == g
        assert_array_equal(back.components, f.components)

    def test_vector_float32(self, tmp_path, rng):
        g = GridGeometry((6, 6), (1.0, 1.0), (0.0, 0.0))
        f = random_vector_field(rng, g, dtype=np.float32)
        back = roundtrip(f, tmp_path, semantic="inverse-dvf")
        assert back.components.dtype == np.float32
        assert_array_equal(back.components, f.components)

    def test_scalar_with_validity(self, tmp_path, rng):
        g = GridGeometry((8, 9), (0.5, 0.5), (2.0, -2.0))
        valid = rng.uniform(size=g.extent) > 0.3
        vals = rng.normal(size=g.extent)
        f = ScalarField(g, np.where(valid, vals, 0.0), valid)
        back = roundtrip(f, tmp_path)
        assert_array_equal(back.validity, valid)
        assert_array_equal(back.values[valid], f.values[valid])

    def test_mask(self, tmp_path, rng):
        g = GridGeometry((10, 4), (1.0, 1.0), (0.0, 0.0))
        m = DomainMask(g, rng.uniform(size=g.extent) > 0.5)
        back = roundtrip(m, tmp_path)
        assert_array_equal(back.inside, m.inside)

    def test_payload_size(self, tmp_path):
        g = GridGeometry((4, 4, 4), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0))
        comp = np.zeros((3, 4, 4, 4), dtype=np.float32)
        p = str(tmp_path / "v.dvf")
        write_field(VectorField(g, comp), p)
        assert (tmp_path / "v.dvf.raw").stat().st_size == 4 * 4 * 4 * 3 * 4  # 768


def _mutate_header(tmp_path, key, value):
    g = GridGeometry((4, 5), (1.0, 1.0), (0.0, 0.0))
    p = str(tmp_path / "h.dvf")
    write_field(VectorField.zeros(g), p)
    lines = open(p).read().splitlines()
    out = []
    for line in lines:
        if line.startswith(key + ":"):
            if value is not None:
                out.append(f"{key}: {value}")
        else:
            out.append(line)
    with open(p, "w") as f:
        f.write("\n".join(out) + "\n")
    return p


class TestHeaderValidation:
    def test_bad_magic(self, tmp_path):
        p = _mutate_header(tmp_path, "container", "acme/9")
        with pytest.raises(HeaderMismatch):
            read_field(p)

    def test_missing_field(self, tmp_path):
        p = _mutate_header(tmp_path, "extent", None)
        with pytest.raises(HeaderMismatch):
            read_field(p)

    def test_bad_dimension(self, tmp_path):
        p = _mutate_header(tmp_path, "dimension", "4")
        with pytest.raises(HeaderMismatch):
            read_field(p)

    def test_small_extent(self, tmp_path):
        p = _mutate_header(tmp_path, "extent", "1 5")
        with pytest.raises(HeaderMismatch):
            read_field(p)

    def test_bad_spacing(self, tmp_path):
        p = _mutate_header(tmp_path, "spacing", "-1.0 1.0")
        with pytest.raises(HeaderMismatch):
            read_field(p)

    def test_unsupported_sample_type(self, tmp_path):
        p = _mutate_header(tmp_path, "sample_type", "float16")
        with pytest.raises(UnsupportedSampleType):
            read_field(p)

    def test_big_endian_rejected(self, tmp_path):
        p = _mutate_header(tmp_path, "byte_order", "big")
        with pytest.raises(HeaderMismatch):
            read_field(p)

    def test_wrong_layout(self, tmp_path):
        p = _mutate_header(tmp_path, "layout", "row-major")
        with pytest.raises(HeaderMismatch):
            read_field(p)

    def test_component_count_mismatch(self, tmp_path):
        p = _mutate_header(tmp_path, "components", "3")
        with pytest.raises(HeaderMismatch):
            read_field(p)

    def test_unknown_semantic(self, tmp_path):
        p = _mutate_header(tmp_path, "semantic", "texture")
        with pytest.raises(HeaderMismatch):
            read_field(p)

    def test_truncated_payload(self, tmp_path):
        g = GridGeometry((4, 5), (1.0, 1.0), (0.0, 0.0))
        p = str(tmp_path / "t.dvf")
        write_field(VectorField.zeros(g), p)
        raw = tmp_path / "t.dvf.raw"
        raw.write_bytes(raw.read_bytes()[:-8])
        with pytest.raises(TruncatedPayload):
            read_field(p)

    def test_oversized_payload(self, tmp_path):
        g = GridGeometry((4, 5), (1.0, 1.0), (0.0, 0.0))
        p = str(tmp_path / "o.dvf")
        write_field(VectorField.zeros(g), p)
        raw = tmp_path / "o.dvf.raw"
        raw.write_bytes(raw.read_bytes() + b"\x00" * 4)
        with pytest.raises(HeaderMismatch):
            read_field(p)

    def test_missing_payload(self, tmp_path):
        g = GridGeometry((4, 5), (1.0, 1.0), (0.0, 0.0))
        p = str(tmp_path / "m.dvf")
        write_field(VectorField.zeros(g), p)
        (tmp_path / "m.dvf.raw").unlink()
        with pytest.raises(TruncatedPayload):
            read_field(p)


def _read_pgm(path):
    with open(path, "rb") as f:
        assert f.readline().strip() == b"P5"
        w, h = map(int, f.readline().split())
        assert f.readline().strip() == b"255"
        return np.frombuffer(f.read(), dtype=np.uint8).reshape(h, w)


class TestSliceExport:
    def test_constant_uniform(self, tmp_path):
        g = GridGeometry((6, 8), (1.0, 1.0), (0.0, 0.0))
        f = ScalarField(g, np.full((6, 8), 2.0))
        p = str(tmp_path / "c.pgm")
        export_slice(f, p, vmin=0.0, vmax=4.0)
        img = _read_pgm(p)
        assert img.shape == (6, 8)
        assert len(np.unique(img)) == 1

    def test_mask_black_white(self, tmp_path):
        g = GridGeometry((6, 6), (1.0, 1.0), (0.0, 0.0))
        inside = np.zeros((6, 6), dtype=bool)
        inside[2:, :] = True
        p = str(tmp_path / "m.pgm")
        export_slice(DomainMask(g, inside), p)
        img = _read_pgm(p)
        assert set(np.unique(img)) == {0, 254}

    def test_invalid_rendered_white(self, tmp_path):
        g = GridGeometry((5, 5), (1.0, 1.0), (0.0, 0.0))
        valid = np.ones((5, 5), dtype=bool)
        valid[0, 0] = False
        f = ScalarField(g, np.zeros((5, 5)), valid)
        p = str(tmp_path / "w.pgm")
        export_slice(f, p, vmin=0.0, vmax=1.0)
        img = _read_pgm(p)
        assert img[0, 0] == 255
        assert img[1, 1] == 0

    def test_ridges_visible(self, tmp_path):
        geom = GridGeometry((81, 81), (0.2, 0.2), (-8.0, -8.0))
        pair = generate(AnalyticDvfSpec(AppendixRadial(b=0.8, m=8), geom))
        maps = characterize(pair.forward)
        p = str(tmp_path / "rho.pgm")
        export_slice(maps.rho_ju, p, vmin=0.0, vmax=1.0)
        img = _read_pgm(p)
        # count bright bands along a circle of radius 6
        ang = np.linspace(0, 2 * np.pi, 1440, endpoint=False)
        ii = np.round((6.0 * np.cos(ang) + 8.0) / 0.2).astype(int)
        jj = np.round((6.0 * np.sin(ang) + 8.0) / 0.2).astype(int)
        ring = (img[ii, jj] >= 250).astype(int)
        assert np.sum((np.roll(ring, 1) == 0) & (ring == 1)) == 8

    def test_3d_slice_and_range(self, tmp_path, rng):
        g = GridGeometry((5, 6, 7), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0))
        f = ScalarField(g, rng.uniform(size=g.extent))
        p = str(tmp_path / "s.pgm")
        export_slice(f, p, axis=2, index=3)
        assert _read_pgm(p).shape == (5, 6)
        with pytest.raises(IndexOutOfRange):
            export_slice(f, p, axis=2, index=7)
        with pytest.raises(IndexOutOfRange):
            export_slice(f, p)

    def test_heat_ppm(self, tmp_path):
        g = GridGeometry((4, 4), (1.0, 1.0), (0.0, 0.0))
        f = ScalarField(g, np.linspace(0, 1, 16).reshape(4, 4))
        p = str(tmp_path / "h.ppm")
        export_slice(f, p, cmap="heat")
        data = open(p, "rb").read()
        assert data.startswith(b"P6\n4 4\n255\n")
        assert len(data) == len(b"P6\n4 4\n255\n") + 4 * 4 * 3


class TestReport:
    def _run(self, steps=10):
        g = GridGeometry((20, 20), (1.0, 1.0), (0.0, 0.0))
        comp = np.zeros((2, 20, 20))
        comp[0] = 1.5
        u = VectorField(g, comp)
        config = InversionConfig(scheme=Constant(0.0), max_steps=steps, initialization="zero")
        return invert(u, config)

    def test_step_entries(self, tmp_path):
        run = self._run(10)
        p = str(tmp_path / "r.json")
        write_report(run, p, table_path=str(tmp_path / "r.csv"))
        doc = read_report(p)
        assert len(doc["steps"]) == 10
        assert doc["config"]["scheme"]["kind"] == "constant"
        assert doc["domain_voxels"] == run.domain.count

    def test_roundtrip_identical_numbers(self, tmp_path):
        run = self._run(3)
        p = str(tmp_path / "r.json")
        write_report(run, p)
        doc = read_report(p)
        for rec, entry in zip(run.step_log, doc["steps"]):
            for lv, val in rec.residual_percentiles.items():
                assert entry["residual_percentiles"][str(lv)] == val

    def test_table_schema(self, tmp_path):
        import csv

        run = self._run(4)
        tp = tmp_path / "r.csv"
        write_report(run, str(tmp_path / "r.json"), table_path=str(tp))
        rows = list(csv.reader(open(tp)))
        assert rows[0] == ["step", "percentile", "residual"]
        assert len(rows) - 1 == 4 * 6  # steps x levels
        # residual column is numeric and parseable
        floats = [float(r[2]) for r in rows[1:]]
        assert all(np.isfinite(floats))
