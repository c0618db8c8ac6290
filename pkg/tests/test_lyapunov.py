import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from riccatilab.developed import GlobalSection
from riccatilab.hyperbolic import FLIP, dist_h_array, endpoints, frames_point, mobius
from riccatilab.lyapunov import (
    NoConvergence,
    attraction_slope,
    check_north_south,
    estimate_top_exponent,
    log_norms,
    pushed_distance,
    section_sample,
    sigma_minus_frames,
    sigma_plus_frames,
    subexponential_check,
)
from riccatilab.projective import apply_pairs, chordal_pairs, normalize_pairs
from riccatilab.riccati import HypothesisError, fuchsian, parabolic_family, upper_triangular
from riccatilab.surface import flow_frames, flow_horocycle, sample_liouville_frames, unit_tangent_from_frame


def _pairs(bp):
    return normalize_pairs(np.asarray(bp.vector, dtype=complex))


def _endpoint_pairs(frames):
    lo, hi = [], []
    for F in frames:
        m, p = endpoints(unit_tangent_from_frame(F))
        lo.append(_pairs(m))
        hi.append(_pairs(p))
    return np.array(lo), np.array(hi)


class TestExponent:
    def test_fuchsian_exponent_is_one_half(self, fuchsian_rep, rng):
        est = estimate_top_exponent(fuchsian_rep, fuchsian_rep.model, 2000.0, 100, rng)
        assert 0.45 <= est.lambda_plus <= 0.55
        assert est.stderr < 0.02
        assert est.series.shape == (100, 40)

    def test_log_norm_matches_displacement(self, fuchsian_rep, sphere, rng):
        # oracle: for real det-1 W, log||W|| = d_hyp(i, W i) / 2; a short
        # horizon keeps W i free of cancellation (ad - bc is formed from entries ~ ||W||^2)
        F = sample_liouville_frames(sphere, 50, rng)
        tr = flow_frames(sphere, F, 6.0, side_maps=fuchsian_rep.side_maps(sphere))
        W = tr.cocycle * np.exp(tr.ledger)[:, None, None]
        assert np.max(np.abs(W.imag)) < 1e-6 * np.max(np.abs(W))
        Wi = mobius(W.real, np.full(len(W), 1j))
        oracle = dist_h_array(np.full(len(W), 1j), Wi) / 2
        assert np.allclose(log_norms(tr.cocycle, tr.ledger), oracle, rtol=1e-8, atol=1e-8)

    def test_upper_triangular_has_zero_exponent(self, sphere, rng):
        rep = upper_triangular(sphere)
        with pytest.raises(HypothesisError):
            estimate_top_exponent(rep, sphere, 200.0, 10, rng)
        est = estimate_top_exponent(rep, sphere, 2000.0, 50, rng, force=True)
        assert abs(est.lambda_plus) <= 0.02

    def test_family_exponent_positive(self, family_rep, rng):
        est = estimate_top_exponent(family_rep, family_rep.model, 1000.0, 60, rng)
        assert est.lambda_plus > 3 * est.stderr
        assert est.lambda_plus > 0.1

    def test_two_seeds_agree(self, family_rep):
        a = estimate_top_exponent(family_rep, family_rep.model, 500.0, 60, np.random.default_rng(1))
        b = estimate_top_exponent(family_rep, family_rep.model, 500.0, 60, np.random.default_rng(2))
        assert abs(a.lambda_plus - b.lambda_plus) <= 3 * math.hypot(a.stderr, b.stderr)

    def test_summary_keys(self, fuchsian_rep, rng):
        est = estimate_top_exponent(fuchsian_rep, fuchsian_rep.model, 50.0, 5, rng, n_series=5)
        assert set(est.summary()) == {"lambda_plus", "stderr", "horizon", "ensemble"}


class TestSections:
    def test_fuchsian_sections_are_endpoints(self, fuchsian_rep, sphere, rng):
        F = sample_liouville_frames(sphere, 100, rng)
        lo, hi = _endpoint_pairs(F)
        sm = sigma_minus_frames(fuchsian_rep, sphere, F, tol=1e-8)
        sp = sigma_plus_frames(fuchsian_rep, sphere, F, tol=1e-8)
        assert sm.converged.all() and sp.converged.all()
        assert np.max(chordal_pairs(sm.points, hi)) < 1e-7
        assert np.max(chordal_pairs(sp.points, lo)) < 1e-7

    def test_certificate_reached(self, family_rep, rng):
        m = family_rep.model
        F = sample_liouville_frames(m, 200, rng)
        sm = sigma_minus_frames(family_rep, m, F, tol=1e-6, strict=False)
        ok = sm.converged & (sm.horizon <= 200) & (sm.certificate > math.log(1e6))
        assert ok.mean() >= 0.99

    def test_strict_raises(self, family_rep, rng):
        m = family_rep.model
        F = sample_liouville_frames(m, 5, rng)
        with pytest.raises(NoConvergence):
            sigma_minus_frames(family_rep, m, F, tol=1e-300, T_cap=20.0)

    @pytest.mark.parametrize("which", ["fuchsian", "family"])
    def test_flow_equivariance(self, which, rng):
        rep = fuchsian() if which == "fuchsian" else parabolic_family(2 + 0.4j)
        m = rep.model
        tol = 1e-8
        F = sample_liouville_frames(m, 60, rng)
        sm = sigma_minus_frames(rep, m, F, tol=tol).points
        for t in (1.0, 3.0):
            tr = flow_frames(m, F, t, side_maps=rep.side_maps(m))
            moved = sigma_minus_frames(rep, m, tr.frames, tol=tol).points
            pushed = apply_pairs(tr.cocycle, sm)
            assert np.median(chordal_pairs(moved, pushed)) < 10 * tol
            assert np.quantile(chordal_pairs(moved, pushed), 0.95) < 1e-5

    def test_unstable_horocycle_invariance(self, family_rep, rng):
        m = family_rep.model
        tol = 1e-8
        F = sample_liouville_frames(m, 60, rng)
        sp = sigma_plus_frames(family_rep, m, F, tol=tol).points
        tr = flow_horocycle(m, F, 0.3, kind="unstable", side_maps=family_rep.side_maps(m))
        moved = sigma_plus_frames(family_rep, m, tr.frames, tol=tol).points
        pushed = apply_pairs(tr.cocycle, sp)
        assert np.median(chordal_pairs(moved, pushed)) < 10 * tol

    def test_time_reversal(self, family_rep, rng):
        m = family_rep.model
        F = sample_liouville_frames(m, 40, rng)
        sp = sigma_plus_frames(family_rep, m, F, tol=1e-10).points
        sm_rev = sigma_minus_frames(family_rep, m, F @ FLIP, tol=1e-10).points
        assert np.max(chordal_pairs(sp, sm_rev)) <= 1e-9

    def test_sections_separated(self, family_rep, rng):
        m = family_rep.model
        F = sample_liouville_frames(m, 200, rng)
        sm = sigma_minus_frames(family_rep, m, F, tol=1e-6).points
        sp = sigma_plus_frames(family_rep, m, F, tol=1e-6).points
        assert (chordal_pairs(sm, sp) > 1e-3).mean() >= 0.99

    def test_section_sample_single_vector(self, family_rep, rng):
        m = family_rep.model
        v = unit_tangent_from_frame(sample_liouville_frames(m, 1, rng)[0])
        s = section_sample(family_rep, m, v)
        assert s.certificate > math.log(1e6)
        assert 0 < s.separation <= 1


class TestRates:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_north_south(self, family_rep, seed):
        m = family_rep.model
        rng = np.random.default_rng(seed)
        F = sample_liouville_frames(m, 1, rng)
        rep_ = check_north_south(family_rep, m, F[0], lam1=0.3, lam2=0.4,
                                 T_grid=np.arange(10.0, 61.0, 10.0), rng=rng)
        assert rep_.T0 is not None
        assert rep_.violations_after_T0 == 0

    def test_north_south_rejects_bad_rates(self, family_rep, rng):
        F = sample_liouville_frames(family_rep.model, 1, rng)
        with pytest.raises(ValueError):
            check_north_south(family_rep, family_rep.model, F[0], lam1=0.5, lam2=0.4)

    @pytest.mark.parametrize("which", ["fuchsian", "family"])
    def test_attraction_slope(self, which, rng):
        rep = fuchsian() if which == "fuchsian" else parabolic_family(2 + 0.4j)
        m = rep.model
        lam = estimate_top_exponent(rep, m, 1000.0, 100, rng).lambda_plus
        F = sample_liouville_frames(m, 200, rng)
        fit = attraction_slope(rep, m, F, 20.0, 200.0, rng)
        assert abs(fit.slope - (-2 * lam)) <= 0.15 * 2 * lam

    def test_sigma_minus_not_attracted(self, family_rep, rng):
        m = family_rep.model
        F = sample_liouville_frames(m, 50, rng)
        sm = sigma_minus_frames(family_rep, m, F, tol=1e-12).points
        fit = attraction_slope(family_rep, m, F, 2.0, 10.0, rng, w=sm)
        generic = attraction_slope(family_rep, m, F, 2.0, 10.0, rng)
        assert fit.mean_log_distance[0] > generic.mean_log_distance[-1]
        assert fit.slope > generic.slope / 4

    def test_pushed_distance_identity(self, rng):
        g = rng.normal(size=(20, 2, 4))
        w = normalize_pairs(g[:, 0, :2] + 1j * g[:, 0, 2:])
        u = normalize_pairs(g[:, 1, :2] + 1j * g[:, 1, 2:])
        Q = np.tile(np.eye(2, dtype=complex), (20, 1, 1))
        assert np.allclose(np.exp(pushed_distance(Q, np.zeros(20), w, u)), chordal_pairs(w, u))

    @given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.1, 3))
    def test_pushed_distance_matches_direct(self, a, b, c):
        M = np.array([[c, a + 1j * b], [0, 1 / c]], dtype=complex)
        w = normalize_pairs(np.array([0.3 + 0.1j, 1.0]))
        u = normalize_pairs(np.array([1.0, -0.7j]))
        direct = chordal_pairs(apply_pairs(M, w), apply_pairs(M, u))
        assert math.isclose(math.exp(pushed_distance(M, 0.0, w, u)), float(direct), rel_tol=1e-9)


@pytest.fixture(scope="module")
def subexp_runs():
    out = {}
    rng = np.random.default_rng(7)
    grid = np.linspace(20, 2000, 100)
    for name, rep in [("fuchsian", fuchsian()), ("family", parabolic_family(2 + 0.4j))]:
        m = rep.model
        F = sample_liouville_frames(m, 100, rng)
        for sec in (GlobalSection.for_representation(rep), GlobalSection.constant(0.3 + 0.7j)):
            for fibre in ("pulled_back", "local"):
                out[name, sec.name, fibre] = (rep, F, subexponential_check(rep, m, sec, F, grid, fibre=fibre))
    return out


class TestSubexponential:
    def test_tail_small(self, subexp_runs):
        for key, (_, _, s) in subexp_runs.items():
            assert s.events == 0, key
            assert s.tail_max().mean() <= 0.05, key

    def test_excursion_spikes_bounded_by_depth(self, subexp_runs):
        for key, (_, _, s) in subexp_runs.items():
            ld = np.abs(np.log(s.distance))
            assert np.all(ld <= 2 * s.depth + 10), key

    def test_local_spikes_follow_cusp_visits(self, subexp_runs):
        _, _, s = subexp_runs["fuchsian", "identity", "local"]
        ld = np.abs(np.log(s.distance))
        deep = s.depth > 3
        assert deep.any()
        assert np.median(ld[deep]) > np.median(ld[s.depth == 0]) + 1

    def test_fuchsian_pulled_back_limit(self, subexp_runs):
        rep, F, s = subexp_runs["fuchsian", "identity", "pulled_back"]
        lo, hi = _endpoint_pairs(F)
        target = chordal_pairs(lo, hi)
        assert np.max(np.abs(s.distance[:, -1] - target)) < 1e-6

    def test_bad_fibre(self, fuchsian_rep, sphere, rng):
        F = sample_liouville_frames(sphere, 2, rng)
        with pytest.raises(ValueError):
            subexponential_check(fuchsian_rep, sphere, GlobalSection.identity(), F, [1.0], fibre="other")
