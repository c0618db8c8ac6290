import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from riccatilab.brownian import (
    bm_step,
    cesaro_limit,
    developed_brownian,
    disc_angle_uniformity,
    e_distribution,
    exit_law,
    exit_law_halving,
    ks_bootstrap_sigma,
    mean_distance,
    replay_cocycles,
    simulate_bm,
)
from riccatilab.developed import GlobalSection
from riccatilab.hyperbolic import mobius
from riccatilab.measures import cauchy_reference, total_variation
from riccatilab.projective import chordal_pairs, normalize_pairs, pairs_from_complex
from riccatilab.riccati import trivial
from riccatilab.surface import reduce_points


def levy_exit_oracle(n, eps, rng):
    """Exact exit points of planar Brownian motion from i at height eps.

    The hitting time of level eps by a 1-d Brownian motion from 1 has the
    law ((1 - eps) / N)^2; the horizontal coordinate is then sqrt(tau) N'.
    Conformal invariance makes this the exit law of hyperbolic Brownian motion.
    """
    tau = ((1 - eps) / rng.standard_normal(n)) ** 2
    return np.sqrt(tau) * rng.standard_normal(n)


class TestSteps:
    @given(st.floats(0.01, 0.5))
    def test_log_scheme_stays_in_half_plane(self, h):
        rng = np.random.default_rng(0)
        z = np.full(500, 1j)
        for _ in range(20):
            z, r = bm_step(z, h, rng)
            assert r == 0
        assert np.all(z.imag > 0)

    def test_euler_rejection_rate(self, rng):
        z = np.full(2000, 1j)
        total = 0
        for _ in range(500):
            z, r = bm_step(z, 1e-3, rng, "euler")
            total += r
        assert np.all(z.imag > 0)
        assert total < 1e-6 * 2000 * 500 + 1

    def test_unknown_scheme(self, rng):
        with pytest.raises(ValueError):
            bm_step(np.array([1j]), 0.1, rng, "milstein")

    def test_step_halving_consistency(self, rng):
        a, sa = mean_distance(1j, 5.0, 0.01, rng, 4000)
        b, sb = mean_distance(1j, 5.0, 0.005, rng, 4000)
        assert abs(a - b) <= 2 * math.hypot(sa, sb) + 1e-12


@pytest.fixture(scope="module")
def law():
    return exit_law(1j, 1e-4, 1e-3, np.random.default_rng(5), 4000)


@pytest.fixture(scope="module")
def paths(sphere):
    return simulate_bm(sphere, 0.1 + 1.2j, 20.0, 0.01, np.random.default_rng(9), 20, sample_dt=0.5)


class TestExitLaw:
    def test_cauchy(self, law):
        assert law.ks_pvalue > 0.001
        assert law.ks < 0.03
        assert np.all(np.isfinite(law.exit_x))

    def test_disc_angle_uniform(self, law):
        assert disc_angle_uniformity(law.exit_x) > 0.01

    def test_against_exact_scheme(self, law, rng):
        oracle = levy_exit_oracle(4000, 1e-4, rng)
        assert stats.ks_2samp(law.exit_x, oracle).pvalue > 0.001

    def test_euler_scheme(self):
        alt = exit_law(1j, 1e-4, 1e-3, np.random.default_rng(6), 2000, scheme="euler")
        assert alt.ks_pvalue > 0.001
        assert alt.rejections <= 1e-6 * alt.steps * 2000 + 1


    def test_bootstrap_sigma_scale(self, rng):
        # for exact Cauchy samples the KS statistic fluctuates on the 1/sqrt(n) scale
        sig = ks_bootstrap_sigma(rng.standard_cauchy(4000), rng=rng)
        assert 0.2 / math.sqrt(4000) < sig < 1.0 / math.sqrt(4000)

    def test_step_halving_stability(self):
        chk = exit_law_halving(1j, 1e-4, 2e-3, np.random.default_rng(8), 3000)
        assert chk.ok, chk
        assert max(chk.ks) < 0.04


class TestPaths:
    def test_shapes(self, paths):
        assert paths.positions.shape == (20, 40)
        assert np.allclose(paths.times, np.arange(1, 41) * 0.5)
        assert np.all(paths.positions.imag > 0)

    def test_positions_in_polygon(self, sphere, paths):
        assert np.all(sphere.contains(paths.positions.ravel(), 1e-9))

    def test_word_coherence(self, sphere, paths):
        # the lifted position reduces back to the same point with the same group element
        for i in range(paths.n_paths):
            for j in (0, 13, 39):
                W = paths.word_matrix(sphere, i, j)
                lift = complex(mobius(W, paths.positions[i, j]))
                zr, words = reduce_points(sphere, np.array([lift]))
                assert abs(zr[0] - paths.positions[i, j]) < 1e-7 * max(1, abs(zr[0])) ** 2
                V = sphere.evaluate(sphere.word_from_sides(words[0])).matrix
                assert min(np.abs(V - W).max(), np.abs(V + W).max()) <= 1e-6 * np.abs(W).max()

    def test_word_lengths_monotone(self, sphere, paths):
        wl = paths.word_lengths(sphere)
        assert wl.shape == paths.positions.shape
        assert np.all(np.diff(wl, axis=1) >= 0)
        assert wl[:, -1].sum() >= paths.n_events

    def test_fuchsian_development_is_lift(self, fuchsian_rep, sphere, paths):
        x = developed_brownian(fuchsian_rep, sphere, GlobalSection.identity(), paths)
        for i in (0, 7):
            for j in (5, 39):
                lift = complex(mobius(paths.word_matrix(sphere, i, j), paths.positions[i, j]))
                assert chordal_pairs(x[i, j], pairs_from_complex(lift)) < 1e-9

    def test_trivial_rep(self, sphere, paths):
        sec = GlobalSection.identity()
        x = developed_brownian(trivial(sphere), sphere, sec, paths)
        assert np.max(chordal_pairs(x, sec.evaluate(paths.positions, sphere))) < 1e-14

    def test_replay_ledger_finite(self, family_rep, sphere, paths):
        Q, L = replay_cocycles(paths, sphere, family_rep.side_maps(sphere))
        assert np.all(np.isfinite(L)) and np.all(np.isfinite(Q))
        assert np.all(np.abs(Q).max(axis=(-1, -2)) <= 1 + 1e-12)

    def test_start_must_be_in_polygon(self, sphere, rng):
        with pytest.raises(ValueError):
            simulate_bm(sphere, 5 + 0.1j, 1.0, 0.01, rng)
        with pytest.raises(ValueError):
            simulate_bm(sphere, 1j, 1.0, -0.01, rng)


class TestCesaro:
    def test_constant_path(self):
        q = normalize_pairs(np.array([0.3 - 0.2j, 1.0]))
        res = cesaro_limit(np.broadcast_to(q, (100, 2)), window=10)
        assert chordal_pairs(res.e, q) < 1e-12
        assert res.concentration[0] == 1.0
        assert res.valid.all()

    def test_short_path_rejected(self):
        with pytest.raises(ValueError):
            cesaro_limit(np.ones((50, 2), dtype=complex), window=10)

    def test_fuchsian_cesaro_is_limit(self, fuchsian_rep, sphere):
        path = simulate_bm(sphere, 1j, 60.0, 0.01, np.random.default_rng(3), 100, sample_dt=0.25)
        x = developed_brownian(fuchsian_rep, sphere, GlobalSection.identity(), path)
        res = cesaro_limit(x, window=x.shape[1] // 10)
        d = chordal_pairs(res.e, x[:, -1])
        assert np.mean(res.valid) >= 0.9
        assert np.median(d[res.valid]) < 0.05

    def test_family_concentrates(self, family_rep):
        m = family_rep.model
        sec = GlobalSection.for_representation(family_rep)
        path = simulate_bm(m, 1j, 200.0, 0.02, np.random.default_rng(4), 200, sample_dt=0.5)
        x = developed_brownian(family_rep, m, sec, path)
        res = cesaro_limit(x, window=x.shape[1] // 10)
        assert np.mean(res.concentration > 0.9) >= 0.9


def test_fuchsian_e_distribution_is_cauchy(fuchsian_rep, sphere):
    ed = e_distribution(fuchsian_rep, sphere, GlobalSection.identity(), 1j, 3000, 60.0, 0.02,
                        np.random.default_rng(12), bins=64)
    assert ed.invalid_fraction < 0.1
    assert total_variation(ed.measure, cauchy_reference(64, 1j)) < 0.05
