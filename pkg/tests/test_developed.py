import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from riccatilab.developed import (
    GlobalSection,
    developed_ray,
    developed_rays,
    ray_limit,
    ray_limits,
    section_independence,
    singularity_sample,
    tail_oscillation,
)
from riccatilab.hyperbolic import frames_from_point_angle, unit_tangent_from_frame
from riccatilab.lyapunov import sigma_minus_frames, sigma_plus_frames
from riccatilab.measures import cauchy_reference, total_variation
from riccatilab.projective import SpherePoint, apply_pairs, chordal_pairs, normalize_pairs, pairs_from_complex
from riccatilab.surface import sample_liouville_frames


def _forward_endpoints(frames):
    return np.array([normalize_pairs(np.asarray(unit_tangent_from_frame(F).xi_plus.vector, complex)) for F in frames])


class TestSections:
    def test_identity_glues_for_fuchsian(self, fuchsian_rep, sphere):
        assert GlobalSection.identity().gluing_mismatch(fuchsian_rep, sphere) < 1e-12

    def test_conjugated_identity_glues_for_family(self, family_rep):
        sec = GlobalSection.for_representation(family_rep)
        assert sec.gluing_mismatch(family_rep, family_rep.model) < 1e-10
        assert GlobalSection.identity().gluing_mismatch(family_rep, family_rep.model) > 1e-3

    def test_constant_does_not_glue(self, fuchsian_rep, sphere):
        assert GlobalSection.constant(0.3 + 0.7j).gluing_mismatch(fuchsian_rep, sphere) > 1e-2

    def test_evaluate_shapes(self, sphere):
        z = np.array([[1j, 0.2 + 2j], [0.1 + 1j, -0.3 + 0.9j]])
        for sec in (
            GlobalSection.identity(),
            GlobalSection.constant(2.0),
            GlobalSection.from_callable(lambda w: w * w),
        ):
            out = sec.evaluate(z, sphere)
            assert out.shape == (2, 2, 2)
            assert np.allclose(np.linalg.norm(out, axis=-1), 1.0)

    def test_callable_matches_identity(self, sphere):
        z = np.array([1j, 0.4 + 3j])
        a = GlobalSection.from_callable(lambda w: w).evaluate(z, sphere)
        b = GlobalSection.identity().evaluate(z, sphere)
        assert np.max(chordal_pairs(a, b)) < 1e-15

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            GlobalSection("table").evaluate(np.array([1j]))


class TestFuchsianRays:
    def test_rays_converge_to_forward_endpoint(self, fuchsian_rep, sphere, rng):
        # 10^3 fibre directions at the centre of the polygon, T = 30
        theta = rng.uniform(0, 2 * np.pi, 1000)
        F = frames_from_point_angle(np.full(1000, 1j), theta)
        tr = developed_rays(fuchsian_rep, sphere, GlobalSection.identity(), F, 30.0, dt=1.0)
        err = chordal_pairs(tr.final, _forward_endpoints(F))
        assert np.mean(err < 1e-3) >= 0.95

    def test_sigma_minus_matches_endpoint(self, fuchsian_rep, sphere, rng):
        F = sample_liouville_frames(sphere, 200, rng)
        sm = sigma_minus_frames(fuchsian_rep, sphere, F, tol=1e-8).points
        assert np.max(chordal_pairs(sm, _forward_endpoints(F))) < 1e-6

    def test_developed_point_is_lift(self, fuchsian_rep, sphere, rng):
        # identity section: the developed point is the lifted base point of g_t v
        F = sample_liouville_frames(sphere, 20, rng)
        tr = developed_rays(fuchsian_rep, sphere, GlobalSection.identity(), F, 5.0, dt=1.0)
        direct = np.einsum("nij,jk->nik", F, np.diag([np.exp(2.5), np.exp(-2.5)]))
        z = (direct[:, 0, 0] * 1j + direct[:, 0, 1]) / (direct[:, 1, 0] * 1j + direct[:, 1, 1])
        assert np.max(chordal_pairs(tr.final, pairs_from_complex(z))) < 1e-10

    def test_frames_outside_polygon(self, fuchsian_rep, sphere, rng):
        F = sample_liouville_frames(sphere, 10, rng)
        shift = np.array([[1.0, 2.0], [0.0, 1.0]])
        G = shift @ F @ np.eye(2)
        tr = developed_rays(fuchsian_rep, sphere, GlobalSection.identity(), G, 30.0, dt=1.0)
        assert np.max(chordal_pairs(tr.final, _forward_endpoints(G))) < 1e-3

    def test_single_ray_and_limit(self, fuchsian_rep, sphere, rng):
        F = sample_liouville_frames(sphere, 1, rng)
        v = unit_tangent_from_frame(F[0])
        tr = developed_ray(fuchsian_rep, sphere, GlobalSection.identity(), v, 40.0)
        p, ok = ray_limit(tr, tol=1e-4)
        assert isinstance(p, SpherePoint) and ok
        assert tr.points.shape == (len(tr.times), 2)

    def test_time_grid_must_increase(self, fuchsian_rep, sphere, rng):
        F = sample_liouville_frames(sphere, 2, rng)
        with pytest.raises(ValueError):
            developed_rays(fuchsian_rep, sphere, GlobalSection.identity(), F, 5.0, times=[1.0, 1.0, 2.0])


@pytest.fixture(scope="module")
def batch(family_rep):
    rng = np.random.default_rng(11)
    m = family_rep.model
    F = sample_liouville_frames(m, 400, rng)
    return F, ray_limits(family_rep, m, GlobalSection.for_representation(family_rep), F, T=60.0)


class TestFamilyRays:
    def test_converged_fraction(self, batch):
        _, (_, conv, osc) = batch
        assert conv.mean() >= 0.95
        assert np.all(osc >= 0)

    def test_limits_match_sigma_minus(self, family_rep, batch):
        F, (lim, conv, _) = batch
        sm = sigma_minus_frames(family_rep, family_rep.model, F, tol=1e-10).points
        err = chordal_pairs(lim, sm)
        assert np.mean(err[conv] < 1e-3) >= 0.99

    def test_section_independence(self, family_rep, rng):
        m = family_rep.model
        F = sample_liouville_frames(m, 200, rng)
        secs = [GlobalSection.for_representation(family_rep), GlobalSection.constant(0.3 + 0.7j),
                GlobalSection.constant(-2.0 + 0.1j)]
        rep_ = section_independence(family_rep, m, F, secs)
        assert rep_.pass_fraction >= 0.95
        js = rep_.to_json()
        assert js["sections"][0] == "identity" and js["tol"] == 1e-4

    def test_pinned_section_is_flagged(self, family_rep, rng):
        m = family_rep.model
        F = sample_liouville_frames(m, 5, rng)
        sp = sigma_plus_frames(family_rep, m, F[:1], tol=1e-10).points[0]
        pinned = GlobalSection.constant(complex(sp[0] / sp[1]), name="pinned")
        rep_ = section_independence(family_rep, m, F, [GlobalSection.for_representation(family_rep), pinned], T=30.0)
        assert rep_.degenerate[1, 0]
        assert not rep_.degenerate[0, 0]

    def test_independence_needs_two_sections(self, family_rep, rng):
        F = sample_liouville_frames(family_rep.model, 2, rng)
        with pytest.raises(ValueError):
            section_independence(family_rep, family_rep.model, F, [GlobalSection.identity()])


def test_fuchsian_identity_and_constant_agree(fuchsian_rep, sphere, rng):
    F = sample_liouville_frames(sphere, 200, rng)
    secs = [GlobalSection.identity(), GlobalSection.constant(0.3 + 0.7j)]
    assert section_independence(fuchsian_rep, sphere, F, secs).pass_fraction >= 0.95


@pytest.mark.parametrize("which", ["fuchsian", "family"])
def test_limit_unchanged_under_dt_halving(which, fuchsian_rep, family_rep, rng):
    rep = fuchsian_rep if which == "fuchsian" else family_rep
    sec = GlobalSection.for_representation(rep)
    F = sample_liouville_frames(rep.model, 100, rng)
    a = developed_rays(rep, rep.model, sec, F, 40.0, dt=0.5)
    b = developed_rays(rep, rep.model, sec, F, 40.0, dt=0.25)
    ok = (a.tail_oscillation < 1e-4) & (b.tail_oscillation < 1e-4)
    assert ok.mean() >= 0.9
    assert np.max(chordal_pairs(a.final[ok], b.final[ok])) < 1e-4


@pytest.mark.parametrize("which", ["fuchsian", "family"])
def test_limits_are_equivariant(which, fuchsian_rep, family_rep, rng):
    # directions at p and the same directions transported to gamma p
    rep = fuchsian_rep if which == "fuchsian" else family_rep
    m, tol = rep.model, 1e-4
    sec = GlobalSection.for_representation(rep)
    F = frames_from_point_angle(np.full(200, 1j), rng.uniform(0, 2 * np.pi, 200))
    lim, conv, _ = ray_limits(rep, m, sec, F, T=60.0, tol=tol)
    for g, gen in enumerate(m.generators):
        lg, cg, _ = ray_limits(rep, m, sec, gen.matrix @ F, T=60.0, tol=tol)
        ok = conv & cg
        assert ok.mean() >= 0.9
        pushed = apply_pairs(rep.images[g], lim[ok])
        assert np.max(chordal_pairs(pushed, lg[ok])) < 10 * tol


class TestSingularity:
    def test_fuchsian_singularity_law_is_poisson(self, fuchsian_rep, sphere, rng):
        s = singularity_sample(fuchsian_rep, sphere, 1j, 4000, 30.0, rng, bins=64)
        ref = cauchy_reference(64, 1j)
        assert s.converged_fraction >= 0.95
        assert total_variation(s.measure, ref) < 0.05

    def test_base_point_must_be_in_polygon(self, fuchsian_rep, sphere, rng):
        with pytest.raises(ValueError):
            singularity_sample(fuchsian_rep, sphere, 5 + 0.1j, 10, 5.0, rng)


@given(st.integers(2, 6), st.floats(0.0, 1.0))
def test_tail_oscillation_of_constant_is_zero(m, x):
    pts = np.broadcast_to(normalize_pairs(np.array([x + 0.5j, 1.0])), (m, 2))
    assert tail_oscillation(pts) < 1e-15
