import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from riccatilab.projective import (
    INF,
    ProjectiveMap,
    SpherePoint,
    apply_pairs,
    chordal_dist,
    chordal_distortion,
    classify,
    from_xyz,
    pairs_from_complex,
    sphere_apply,
    to_xyz,
)

cfloats = st.floats(-3, 3, allow_nan=False)
cnums = st.builds(complex, cfloats, cfloats)


@st.composite
def maps(draw):
    m = np.array([[draw(cnums), draw(cnums)], [draw(cnums), draw(cnums)]])
    if abs(np.linalg.det(m)) < 0.05:
        m = m + np.eye(2) * 3
    return ProjectiveMap(m)


points = st.builds(SpherePoint, cnums, cnums).filter(lambda p: True) if False else st.builds(
    lambda a, b: SpherePoint(a, b + 0.01), cnums, cnums
)


def chord_oracle(p: SpherePoint, q: SpherePoint) -> float:
    """Half the Euclidean chord between the points on the unit sphere, from the
    complex coordinates through the usual stereographic formula."""

    def lift(z):
        if not np.isfinite(z):
            return np.array([0.0, 0.0, 1.0])
        r2 = abs(z) ** 2
        return np.array([2 * z.real, 2 * z.imag, r2 - 1]) / (r2 + 1)

    return float(np.linalg.norm(lift(p.to_complex()) - lift(q.to_complex())) / 2)


class TestSphereApply:
    def test_identity(self):
        p = SpherePoint.from_complex(0.3 - 2j)
        assert sphere_apply(ProjectiveMap.identity(), p) == p

    def test_scaling(self):
        m = ProjectiveMap(np.diag([2.0, 0.5]))
        assert sphere_apply(m, SpherePoint(1, 1)).to_complex() == pytest.approx(4.0)

    @given(maps(), points)
    def test_inverse(self, m, p):
        q = sphere_apply(m, sphere_apply(m.inverse(), p))
        assert chordal_dist(p, q) <= 1e-10

    def test_unit_norm(self):
        p = SpherePoint(3 + 4j, 12)
        assert abs(p.w1) ** 2 + abs(p.w2) ** 2 == pytest.approx(1.0, abs=1e-12)

    def test_degenerate(self):
        with pytest.raises(ValueError):
            SpherePoint(0, 0)


class TestChordal:
    def test_examples(self):
        zero = SpherePoint(0, 1)
        assert chordal_dist(zero, INF) == 1
        assert chordal_dist(zero, zero) == 0
        assert chordal_dist(zero, SpherePoint(1, 1)) == pytest.approx(1 / math.sqrt(2), abs=1e-12)

    @given(points, points)
    def test_matches_stereographic_chord(self, p, q):
        assert chordal_dist(p, q) == pytest.approx(chord_oracle(p, q), abs=1e-12)

    @given(points, points)
    def test_symmetric_and_bounded(self, p, q):
        d = chordal_dist(p, q)
        assert d == pytest.approx(chordal_dist(q, p), abs=1e-15)
        assert 0 <= d <= 1 + 1e-15

    @given(points, st.floats(0, 2 * math.pi))
    def test_projective_equality(self, p, phase):
        u = np.exp(1j * phase)
        assert chordal_dist(p, SpherePoint(u * p.w1, u * p.w2)) <= 1e-15

    @given(points)
    def test_xyz_roundtrip(self, p):
        w = from_xyz(to_xyz(p.vector))
        assert chordal_dist(p, SpherePoint.from_vector(w)) <= 1e-12
        assert np.linalg.norm(to_xyz(p.vector)) == pytest.approx(1.0, abs=1e-12)


class TestLedger:
    def test_long_product_does_not_overflow(self):
        g = ProjectiveMap(np.array([[2.0, 1.0], [1.0, 1.0]]))
        m = ProjectiveMap.identity()
        for _ in range(3000):
            m = g @ m
        lam = math.log((3 + math.sqrt(5)) / 2)
        assert math.isfinite(m.log_norm())
        assert m.log_norm() / 3000 == pytest.approx(lam, rel=1e-9)

    def test_det_and_trace(self):
        m = ProjectiveMap(np.array([[4.0, 2.0], [0.0, 1.0]]))
        assert m.det == pytest.approx(1.0)
        assert m.trace == pytest.approx(5 / 2)


class TestClassify:
    def test_translation(self):
        c = classify(ProjectiveMap(np.array([[1, 1], [0, 1]])))
        assert c.kind == "parabolic"
        assert c.fixed_points[0] == INF

    def test_scaling(self):
        c = classify(ProjectiveMap(np.diag([2.0, 0.5])))
        assert c.kind == "loxodromic"
        assert c.attracting == INF
        assert c.repelling == SpherePoint(0, 1)

    def test_product(self):
        m = np.array([[1, 2], [0, 1]]) @ np.array([[1, 0], [-2, 1]])
        np.testing.assert_array_equal(m, [[-3, 2], [-2, 1]])
        assert classify(ProjectiveMap(m)).kind == "parabolic"

    def test_elliptic_and_identity(self):
        th = 0.7
        assert classify(ProjectiveMap(np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]]))).kind == "elliptic"
        assert classify(ProjectiveMap.identity()).kind == "identity"

    def test_near_parabolic_flagged(self):
        c = classify(ProjectiveMap(np.array([[1 + 1e-5, 1], [0, 1 / (1 + 1e-5)]])))
        assert c.kind == "parabolic" and c.within_tolerance

    @given(maps(), maps())
    def test_conjugation_invariant(self, m, g):
        a = classify(m)
        b = classify(g @ m @ g.inverse())
        if abs(a.trace_squared - 4) < 1e-6 or abs(a.trace_squared.imag) < 1e-6:
            return  # too close to a type boundary for rounding to be irrelevant
        assert a.kind == b.kind

    @given(maps())
    def test_fixed_points_are_fixed(self, m):
        c = classify(m)
        for fp in c.fixed_points:
            if fp is not None:
                assert chordal_dist(sphere_apply(m, fp), fp) <= 1e-9 * chordal_distortion(m)


class TestDistortion:
    @given(maps())
    def test_bounded_by_singular_values(self, m):
        rng = np.random.default_rng(0)
        g = rng.normal(size=(2000, 4))
        w = g[:, :2] + 1j * g[:, 2:]
        u = w + 1e-6 * (rng.normal(size=(2000, 2)) + 1j * rng.normal(size=(2000, 2)))
        M = np.asarray(m.matrix)
        from riccatilab.projective import chordal_pairs

        ratio = chordal_pairs(apply_pairs(M, w), apply_pairs(M, u)) / chordal_pairs(w, u)
        s = np.linalg.svd(M, compute_uv=False)
        op_sq = (s[0] / np.sqrt(s[0] * s[1])) ** 2  # squared operator norm of the det-1 matrix
        assert chordal_distortion(m) == pytest.approx(op_sq, rel=1e-9)
        assert ratio.max() <= op_sq * (1 + 1e-5)

    def test_sup_is_attained(self):
        m = ProjectiveMap(np.diag([3.0, 1 / 3]))
        p, q = SpherePoint(1e-7, 1), SpherePoint(0, 1)  # near the most expanded point 0
        ratio = chordal_dist(sphere_apply(m, p), sphere_apply(m, q)) / chordal_dist(p, q)
        assert ratio == pytest.approx(chordal_distortion(m), rel=1e-6)
        assert chordal_distortion(m) == pytest.approx(9.0)

    def test_pairs_helpers(self):
        z = np.array([0, 1j, np.inf])
        w = pairs_from_complex(z)
        np.testing.assert_allclose(np.abs(w[2]), [1, 0])
