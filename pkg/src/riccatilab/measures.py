"""Empirical measures on the Riemann sphere and the measure-comparison machinery.

Measures live on a shared Fibonacci lattice of bin centres on the unit sphere
(stereographic lift, inf at the north pole). Points are binned to their
nearest centre. Distances between measures use the chordal kernel, which on
the unit sphere is half the Euclidean chord.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.spatial import cKDTree

from .hyperbolic import frames_toward, poisson_kernel_array
from .projective import apply_pairs, chordal_pairs, from_xyz, normalize_pairs, pairs_from_complex, to_xyz


@lru_cache(maxsize=16)
def fibonacci_lattice(K: int) -> np.ndarray:
    """K nearly equal-area points on the unit sphere (golden-angle spiral)."""
    if K < 64:
        raise ValueError("at least 64 bins are required")
    i = np.arange(K) + 0.5
    z = 1 - 2 * i / K
    r = np.sqrt(1 - z * z)
    phi = math.pi * (3 - math.sqrt(5)) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], -1)


@lru_cache(maxsize=16)
def _tree(K: int) -> cKDTree:
    return cKDTree(fibonacci_lattice(K))


@lru_cache(maxsize=16)
def _kernel(K: int) -> np.ndarray:
    c = fibonacci_lattice(K)
    return 0.5 * np.linalg.norm(c[:, None, :] - c[None, :, :], axis=-1)


def assign_bins(xyz, K: int) -> np.ndarray:
    return _tree(K).query(np.asarray(xyz, dtype=float))[1]


@dataclass
class EmpiricalSphereMeasure:
    """Weights on the K-point lattice; raw samples are kept for refinement and resampling."""

    bins: int
    weights: np.ndarray
    n_samples: int
    samples: np.ndarray | None = field(default=None, repr=False)  # (n, 3)
    sample_weights: np.ndarray | None = field(default=None, repr=False)
    label: str = ""
    exact: bool = False  # quadrature of a known law, no sampling noise

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0):
            raise ValueError("negative bin weight")
        s = w.sum()
        if s <= 0:
            raise ValueError("empty measure")
        self.weights = w / s

    @classmethod
    def from_xyz(cls, xyz, bins=256, weights=None, label="") -> "EmpiricalSphereMeasure":
        xyz = np.asarray(xyz, dtype=float).reshape(-1, 3)
        idx = assign_bins(xyz, bins)
        w = np.ones(len(xyz)) if weights is None else np.asarray(weights, dtype=float)
        hist = np.bincount(idx, weights=w, minlength=bins)
        return cls(bins, hist, len(xyz), xyz, None if weights is None else w, label)

    @classmethod
    def from_pairs(cls, pairs, bins=256, weights=None, label=""):
        return cls.from_xyz(to_xyz(pairs), bins, weights, label)

    @classmethod
    def from_complex(cls, z, bins=256, weights=None, label=""):
        return cls.from_pairs(pairs_from_complex(z), bins, weights, label)

    @property
    def centers(self) -> np.ndarray:
        return fibonacci_lattice(self.bins)

    def rebin(self, bins: int) -> "EmpiricalSphereMeasure":
        if self.samples is None:
            raise ValueError("raw samples were not kept")
        return EmpiricalSphereMeasure.from_xyz(self.samples, bins, self.sample_weights, self.label)

    def push(self, matrix) -> "EmpiricalSphereMeasure":
        """Image under a Moebius map (needs the raw samples)."""
        if self.samples is None:
            raise ValueError("raw samples were not kept")
        w = from_xyz(self.samples) @ np.asarray(matrix, dtype=complex).T
        return EmpiricalSphereMeasure.from_pairs(w, self.bins, self.sample_weights, self.label)

    @property
    def max_bin_mass(self) -> float:
        return float(self.weights.max())

    @property
    def occupied_bins(self) -> int:
        return int(np.count_nonzero(self.weights))

    def mass_near(self, cloud_xyz, radius) -> float:
        """Fraction of sample mass within chordal `radius` of a point cloud."""
        if self.samples is None:
            raise ValueError("raw samples were not kept")
        d, _ = cKDTree(np.asarray(cloud_xyz)).query(self.samples)
        near = 0.5 * d <= radius
        w = np.ones(len(near)) if self.sample_weights is None else self.sample_weights
        return float(w[near].sum() / w.sum())

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "bins": self.bins,
            "n_samples": self.n_samples,
            "centers": self.centers.round(12).tolist(),
            "weights": self.weights.round(15).tolist(),
        }


def _check_lattice(m1, m2):
    if m1.bins != m2.bins:
        raise ValueError(f"bin lattices differ ({m1.bins} vs {m2.bins})")


def energy_distance(m1: EmpiricalSphereMeasure, m2: EmpiricalSphereMeasure) -> float:
    """2 E d(X,Y) - E d(X,X') - E d(Y,Y') with the chordal kernel on the bin atoms."""
    _check_lattice(m1, m2)
    diff = m1.weights - m2.weights
    return float(max(-diff @ _kernel(m1.bins) @ diff, 0.0))


def total_variation(m1, m2) -> float:
    _check_lattice(m1, m2)
    return float(0.5 * np.abs(m1.weights - m2.weights).sum())


def bootstrap_threshold(m1, m2, rng, n_boot=500, level=0.99, n1=None, n2=None) -> float:
    """Null quantile of the energy distance under the pooled bin law (multinomial resampling)."""
    _check_lattice(m1, m2)
    if m1.exact and m2.exact:
        return 0.0
    if m1.exact:
        return bootstrap_threshold(m2, m1, rng, n_boot, level, n2, n1)
    n1 = n1 or m1.n_samples
    n2 = n2 or m2.n_samples
    if m2.exact:
        # a sample against a known law: the null is sampling from that law
        pooled = m2.weights
    else:
        pooled = (n1 * m1.weights + n2 * m2.weights) / (n1 + n2)
    D = _kernel(m1.bins)
    a = rng.multinomial(n1, pooled, size=n_boot) / n1
    b = np.broadcast_to(pooled, a.shape) if m2.exact else rng.multinomial(n2, pooled, size=n_boot) / n2
    diff = a - b
    stats = -np.einsum("bi,ij,bj->b", diff, D, diff)
    return float(np.quantile(stats, level))


@dataclass(frozen=True)
class Comparison:
    label: str
    energy: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.energy <= self.threshold

    def to_json(self):
        return {"pair": self.label, "energy_distance": self.energy, "threshold": self.threshold, "pass": self.passed}


def compare(m1, m2, rng, n_boot=500, level=0.99) -> Comparison:
    return Comparison(
        f"{m1.label} vs {m2.label}", energy_distance(m1, m2), bootstrap_threshold(m1, m2, rng, n_boot, level)
    )


def cauchy_reference(bins=256, z=1j, n_quad=400_000, label="poisson") -> EmpiricalSphereMeasure:
    """Binned Poisson law of z on the real circle, via deterministic quantiles."""
    z = complex(z)
    u = (np.arange(n_quad) + 0.5) / n_quad
    xi = z.real + z.imag * np.tan(np.pi * (u - 0.5))
    m = EmpiricalSphereMeasure.from_complex(xi, bins, label=label)
    m.samples = None
    m.exact = True
    return m


def conjugate_reference(conjugator, bins=256, z=1j, n_quad=400_000, label="closed_form"):
    """Exact law when rho = M g M^-1: the Poisson law of z pushed by M."""
    z = complex(z)
    u = (np.arange(n_quad) + 0.5) / n_quad
    xi = z.real + z.imag * np.tan(np.pi * (u - 0.5))
    w = apply_pairs(np.asarray(conjugator, dtype=complex), pairs_from_complex(xi))
    m = EmpiricalSphereMeasure.from_pairs(w, bins, label=label)
    m.samples = None
    m.exact = True
    return m


def scaled_occupancy(measure: EmpiricalSphereMeasure, per_sample=4) -> int:
    """Occupied bins on a lattice of per_sample * n bins.

    On a fixed lattice the count saturates once the support is covered, so the
    lattice grows with n; a law with finitely many atoms stays bounded.
    """
    return measure.rebin(max(64, per_sample * measure.n_samples)).occupied_bins


def nonatomicity(measure: EmpiricalSphereMeasure, bins=1024, refine=4) -> dict:
    """Max bin mass against 5/sqrt(n) on a `bins` lattice, and its drop under refinement.

    A law carried by a curve puts mass of order 1/sqrt(bins) in its heaviest bin,
    so the bound is only meaningful when the lattice is fine enough for n.
    """
    base = measure if measure.bins == bins else measure.rebin(bins)
    fine = base.rebin(bins * refine)
    bound = 5 / math.sqrt(measure.n_samples)
    return {
        "bins": bins,
        "max_bin_mass": base.max_bin_mass,
        "max_bin_mass_refined": fine.max_bin_mass,
        "bound": bound,
        "ok": base.max_bin_mass <= bound and fine.max_bin_mass < base.max_bin_mass,
    }


# ---------------------------------------------------------------------------
# boundary map and harmonic measures


@dataclass
class BoundaryMapTable:
    """s^-(xi) on a grid xi = tan(theta/2), theta uniform (disc-boundary angle)."""

    theta: np.ndarray
    xi: np.ndarray
    values: np.ndarray  # (n, 2) pairs
    certificates: np.ndarray
    converged: np.ndarray
    base: complex

    @property
    def failure_rate(self) -> float:
        return float(1 - self.converged.mean())


def angle_grid(n):
    theta = -np.pi + (np.arange(n) + 0.5) * (2 * np.pi / n)
    return theta, np.tan(theta / 2)


def boundary_map_estimate(rep, model, grid_size=2048, tol=1e-6, base=None, xi=None) -> BoundaryMapTable:
    """sigma^- of the vectors at `base` (in P) pointing to each grid endpoint xi."""
    from .lyapunov import sigma_minus_frames

    base = complex(model.center.z if base is None else base)
    if not model.contains(base):
        raise ValueError("base point must lie in the fundamental polygon")
    if xi is None:
        theta, xi = angle_grid(grid_size)
    else:
        xi = np.asarray(xi, dtype=float)
        theta = 2 * np.arctan(xi)
    F = frames_toward(np.full(xi.shape, base), xi)
    sec = sigma_minus_frames(rep, model, F, tol=tol, strict=False)
    return BoundaryMapTable(theta, xi, sec.points, sec.certificate, sec.converged, base)


def harmonic_measure(table: BoundaryMapTable, z, bins=256, label="harmonic") -> EmpiricalSphereMeasure:
    """Push of the Poisson density of z, k(z, xi) dxi / pi, through the table."""
    z = complex(z)
    jac = (1 + table.xi**2) / 2  # dxi/dtheta
    w = poisson_kernel_array(np.full(table.xi.shape, z), table.xi) * jac / np.pi
    ok = table.converged
    m = EmpiricalSphereMeasure.from_pairs(table.values[ok], bins, w[ok], label)
    m.exact = True
    return m


# ---------------------------------------------------------------------------
# limit set


def _fixed_pairs(M):
    """Fixed points (as pairs) of stacked det-1 matrices; two per matrix (equal if parabolic)."""
    a, b, c, d = M[:, 0, 0], M[:, 0, 1], M[:, 1, 0], M[:, 1, 1]
    tr = a + d
    d2 = tr * tr - 4 + 0j
    # parabolic up to roundoff: a double fixed point
    d2 = np.where(np.abs(d2) <= 1e-9 * np.maximum(1.0, np.abs(tr) ** 2), 0.0, d2)
    disc = np.sqrt(d2)
    out = []
    for lam in ((tr + disc) / 2, (tr - disc) / 2):
        v1 = np.stack([b, lam - a], -1)
        v2 = np.stack([lam - d, c], -1)
        use1 = np.linalg.norm(v1, axis=-1) >= np.linalg.norm(v2, axis=-1)
        out.append(np.where(use1[:, None], v1, v2))
    return out, tr


def reduced_word_matrices(rep, max_length):
    """det-1 images of all nontrivial reduced words up to max_length, built level by level."""
    letters = list(rep.letter_matrices.items())
    inverse_of = {i: next(j for j, (l2, _) in enumerate(letters) if l2 == (l[0], -l[1])) for i, (l, _) in enumerate(letters)}
    gm = np.stack([m for _, m in letters])
    mats = gm.copy()
    last = np.arange(len(letters))
    out = [mats]
    for _ in range(max_length - 1):
        nm, nl = [], []
        for i in range(len(letters)):
            keep = last != inverse_of[i]
            nm.append(mats[keep] @ gm[i])
            nl.append(np.full(int(keep.sum()), i))
        mats = np.concatenate(nm)
        mats /= np.abs(mats).max(axis=(1, 2), keepdims=True)
        mats /= np.sqrt(np.linalg.det(mats))[:, None, None]
        last = np.concatenate(nl)
        out.append(mats)
    return np.concatenate(out)


def dedup_cloud(xyz, radius=1e-4):
    """One representative per cube of diagonal 2*radius (chordal radius)."""
    cell = 2 * radius / math.sqrt(3)
    _, first = np.unique(np.floor(xyz / cell).astype(np.int64), axis=0, return_index=True)
    return xyz[np.sort(first)]


def _word_matrix(rep, word):
    m = np.eye(2, dtype=complex)
    for letter in word:
        m = m @ rep.letter_matrices[letter]
    return m / np.sqrt(np.linalg.det(m))


def limit_set_estimate(rep, max_word_length=10, cusp_powers=64, cusp_tail_length=4, dedup=1e-4) -> np.ndarray:
    """Fixed points of loxodromic and parabolic reduced words, as unit 3-vectors.

    Besides all reduced words up to max_word_length, words P^k w with P a
    peripheral element, |k| <= cusp_powers and |w| <= cusp_tail_length are
    included: plain length caps leave chordal gaps of size ~1/length at the
    cusps, which these long but simple words fill.
    """
    M = reduced_word_matrices(rep, max_word_length)
    if cusp_powers and rep.model.cusps:
        tails = np.concatenate([np.eye(2, dtype=complex)[None], reduced_word_matrices(rep, cusp_tail_length)])
        extra = []
        for cusp in rep.model.cusps:
            P = _word_matrix(rep, cusp.word)
            for base in (P, np.linalg.inv(P)):
                Pk = np.eye(2, dtype=complex)
                for _ in range(cusp_powers):
                    Pk = Pk @ base
                    extra.append(Pk @ tails)
        M = np.concatenate([M] + extra)
    (f1, f2), tr = _fixed_pairs(M)
    tr2 = tr * tr
    elliptic = (np.abs(tr2.imag) <= 1e-9) & (tr2.real < 4 - 1e-9)
    ident = np.all(np.abs(M - np.eye(2) * M[:, :1, :1]) < 1e-12 * np.abs(M).max(axis=(1, 2))[:, None, None], axis=(1, 2))
    keep = ~elliptic & ~ident
    pts = np.concatenate([f1[keep], f2[keep]])
    pts = pts[np.linalg.norm(pts, axis=-1) > 0]
    return dedup_cloud(to_xyz(pts), dedup)


def distance_to_cloud(xyz, cloud) -> np.ndarray:
    d, _ = cKDTree(np.asarray(cloud)).query(np.asarray(xyz))
    return 0.5 * d


# ---------------------------------------------------------------------------
# cross-validation of the four routes to the harmonic law at a point


class SuiteError(RuntimeError):
    """A route failed; `partial` holds whatever was computed before."""

    def __init__(self, msg, partial):
        super().__init__(msg)
        self.partial = partial


@dataclass
class SuiteBudgets:
    n_rays: int = 10_000
    ray_T: float = 60.0
    n_paths: int = 10_000
    bm_T: float = 200.0
    bm_h: float = 0.02
    grid_size: int = 2048
    n_sigma: int = 10_000
    bins: int = 256
    n_boot: int = 500
    level: float = 0.99
    limit_word_length: int = 8
    support_radius: float = 1e-2
    sigma_tol: float = 1e-6
    tv_bins: int = 256
    tv_bound: float = 0.05


@dataclass
class SuiteReport:
    base: complex
    budgets: SuiteBudgets
    measures: dict
    comparisons: list
    checks: dict
    extras: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.comparisons) and all(v["ok"] for v in self.checks.values())

    def to_json(self):
        return {
            "base": [self.base.real, self.base.imag],
            "budgets": self.budgets.__dict__,
            "comparisons": [c.to_json() for c in self.comparisons],
            "checks": self.checks,
            "extras": self.extras,
            "pass": self.passed,
        }


ROUTE_PAIRS = [
    ("geodesic_limits", "brownian_cesaro"),
    ("geodesic_limits", "harmonic"),
    ("geodesic_limits", "srb_sigma_plus"),
    ("brownian_cesaro", "harmonic"),
    ("brownian_cesaro", "srb_sigma_plus"),
    ("harmonic", "srb_sigma_plus"),
]


def theorem_c_suite(rep, model, p, budgets: SuiteBudgets | None = None, rng=None, force=False, section=None) -> SuiteReport:
    """Four estimates of the harmonic law at p, compared pairwise.

    Routes: limits of developed geodesic rays from p, Cesaro limits of
    developed Brownian paths from p, the Poisson density at p pushed through
    the boundary map, and the sigma^+ / sigma^- laws over uniform directions
    at p. The stationary-measure route of random walks on the group has no
    computable description here and is represented only by the harmonic
    and equivariance tests of harmonic_measure.
    """
    from .brownian import e_distribution
    from .developed import GlobalSection, singularity_sample
    from .hyperbolic import frames_from_point_angle
    from .lyapunov import sigma_minus_frames, sigma_plus_frames

    b = budgets or SuiteBudgets()
    rng = rng if rng is not None else np.random.default_rng(0)
    p = complex(getattr(p, "z", p))
    rep.require_hypotheses(force)
    section = section or GlobalSection.for_representation(rep)
    measures, extras = {}, {}
    partial = {"measures": measures, "extras": extras}

    def run(name, fn):
        try:
            return fn()
        except Exception as exc:  # keep what we have
            raise SuiteError(f"route {name} failed: {exc}", partial) from exc

    s = run("geodesic_limits", lambda: singularity_sample(rep, model, p, b.n_rays, b.ray_T, rng, section, b.bins))
    measures["geodesic_limits"] = s.measure
    extras["geodesic_converged_fraction"] = s.converged_fraction

    e = run(
        "brownian_cesaro",
        lambda: e_distribution(rep, model, section, p, b.n_paths, b.bm_T, b.bm_h, rng, bins=b.bins),
    )
    e.measure.label = "brownian_cesaro"
    measures["brownian_cesaro"] = e.measure
    extras["brownian_invalid_fraction"] = e.invalid_fraction

    table = run("harmonic", lambda: boundary_map_estimate(rep, model, b.grid_size, b.sigma_tol, base=p))
    measures["harmonic"] = harmonic_measure(table, p, b.bins)
    extras["boundary_map_failure_rate"] = table.failure_rate

    def srb(kind, fn):
        theta = rng.uniform(0, 2 * np.pi, b.n_sigma)
        F = frames_from_point_angle(np.full(b.n_sigma, p), theta)
        sec = fn(rep, model, F, tol=b.sigma_tol, strict=False)
        extras[f"{kind}_converged_fraction"] = float(sec.converged.mean())
        return EmpiricalSphereMeasure.from_pairs(sec.points[sec.converged], b.bins, label=kind)

    measures["srb_sigma_plus"] = run("srb_sigma_plus", lambda: srb("srb_sigma_plus", sigma_plus_frames))
    measures["srb_sigma_minus"] = run("srb_sigma_minus", lambda: srb("srb_sigma_minus", sigma_minus_frames))

    comps = []
    for a_, b_ in ROUTE_PAIRS + [("srb_sigma_plus", "srb_sigma_minus")]:
        m1, m2 = measures[a_], measures[b_]
        comps.append(
            Comparison(f"{a_} vs {b_}", energy_distance(m1, m2), bootstrap_threshold(m1, m2, rng, b.n_boot, b.level))
        )

    cloud = limit_set_estimate(rep, b.limit_word_length)
    checks = {}
    for name, m in measures.items():
        sup = m.mass_near(cloud, b.support_radius)
        checks[f"{name}_support"] = {"mass_near_limit_set": sup, "ok": sup >= 0.99}
        if not m.exact:
            checks[f"{name}_nonatomic"] = nonatomicity(m)
    if rep.conjugator is not None:
        # the deck group up to conjugacy: every route must reproduce the pushed Poisson law
        ref = conjugate_reference(rep.conjugator, b.tv_bins, p)
        for name, m in measures.items():
            if m.samples is None:
                continue
            tv = total_variation(m.rebin(b.tv_bins), ref)
            checks[f"{name}_closed_form_tv"] = {"tv": tv, "bins": b.tv_bins, "bound": b.tv_bound, "ok": tv < b.tv_bound}
    checks["brownian_invalid_fraction"] = {"value": e.invalid_fraction, "ok": e.invalid_fraction < 0.1}
    return SuiteReport(p, b, measures, comps, checks, extras)

