"""Cusp analysis in the model case where the developing map is the inclusion.

Coordinates (z, xi) with xi the backward endpoint. The developed segment is
G_t(z, xi), t in [0, 1]: the point at distance t from z on the geodesic
leaving xi through z. The function studied is

    psi(z, xi) = sup_t |log chordal(s_plus(xi), D(G_t(z, xi)))|

on the strip [-1/2, 1/2] x [y0, inf), integrated against the Poisson
kernel times hyperbolic area.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .projective import chordal_pairs, normalize_pairs, pairs_from_complex


@dataclass(frozen=True)
class ModelCuspConfig:
    y0: float = 10.0
    resolution: int = 64  # t-grid points for the sup over [0, 1]
    x_range: tuple = (-0.5, 0.5)

    def __post_init__(self):
        if self.y0 < 1:
            raise ValueError("cusp threshold y0 must be >= 1")
        if self.resolution < 32:
            raise ValueError("t-grid resolution must be >= 32")

    def refined(self, factor=2) -> "ModelCuspConfig":
        return ModelCuspConfig(self.y0, self.resolution * factor, self.x_range)


class InfiniteEvent(ArithmeticError):
    """s_plus lies on the developed segment: the log distance is infinite."""


def developed_segment(z, xi, t) -> np.ndarray:
    """G_t(z, xi) for broadcastable z (complex), xi (real) and t, in closed form.

    w = 1/(xi - z) sends xi to infinity, where the geodesic is vertical and
    arclength t scales the height by e^{-t}; no special case for x = xi.
    """
    z, xi, t = np.broadcast_arrays(np.asarray(z, complex), np.asarray(xi, float), np.asarray(t, float))
    w = 1.0 / (xi - z)
    wt = w.real + 1j * w.imag * np.exp(-t)
    return np.where(t == 0, z, xi - 1.0 / wt)


def inclusion(z) -> np.ndarray:
    return pairs_from_complex(z)


def log_puncture_model(z) -> np.ndarray:
    """z + exp(-2 pi i z): the inclusion plus 1/q in the puncture coordinate q = exp(2 pi i z)."""
    z = np.asarray(z, complex)
    q = np.exp(2j * np.pi * z)
    return normalize_pairs(np.stack([z * q + 1, q], axis=-1))


def _neg_log_dist(s_plus, pts, develop):
    d = chordal_pairs(np.asarray(s_plus)[..., None, :], develop(pts))
    with np.errstate(divide="ignore"):
        return -np.log(d)


def psi_model(x, y, xi, s_plus, cfg: ModelCuspConfig, develop=inclusion, raise_infinite=False, refine_iters=48):
    """sup over t in [0, 1] of |log chordal(s_plus, D(G_t(x + iy, xi)))|.

    x, y, xi broadcast; s_plus is a pair array (..., 2) or complex. The sup
    uses the t-grid plus a golden-section refinement around the discrete argmax. Infinite
    events come back as inf (or raise with raise_infinite).
    """
    z = np.asarray(x, float) + 1j * np.asarray(y, float)
    xi = np.asarray(xi, float)
    z, xi = np.broadcast_arrays(z, xi)
    sp = np.asarray(s_plus)
    sp = normalize_pairs(sp) if sp.shape[-1:] == (2,) and not np.iscomplexobj(sp) or sp.ndim == z.ndim + 1 else pairs_from_complex(sp)
    sp = np.broadcast_to(sp, z.shape + (2,))
    n = cfg.resolution
    t = np.linspace(0.0, 1.0, n)
    pts = developed_segment(z[..., None], xi[..., None], t)
    f = _neg_log_dist(sp, pts, develop)  # (..., n); chordal <= 1 so |log| = -log
    k = np.argmax(f, axis=-1)
    best = np.take_along_axis(f, k[..., None], -1)[..., 0]
    # golden-section search on the bracket around the discrete argmax: the
    # distance well can be far narrower than the grid spacing
    lo = t[np.clip(k - 1, 0, n - 1)]
    hi = t[np.clip(k + 1, 0, n - 1)]

    def val(tt):
        return _neg_log_dist(sp, developed_segment(z, xi, tt)[..., None], develop)[..., 0]

    r = (math.sqrt(5) - 1) / 2
    a_, b_ = hi - r * (hi - lo), lo + r * (hi - lo)
    fa, fb = val(a_), val(b_)
    for _ in range(refine_iters):
        left = fa > fb  # maximum lies in [lo, b_]
        hi = np.where(left, b_, hi)
        lo = np.where(left, lo, a_)
        b_new = np.where(left, a_, lo + r * (hi - lo))
        a_new = np.where(left, hi - r * (hi - lo), b_)
        fb_new = np.where(left, fa, np.nan)
        fa_new = np.where(left, np.nan, fb)
        a_, b_ = a_new, b_new
        need_a, need_b = np.isnan(fa_new), np.isnan(fb_new)
        fa = np.where(need_a, val(a_), fa_new)
        fb = np.where(need_b, val(b_), fb_new)
    out = np.fmax(best, np.fmax(fa, fb))
    if raise_infinite and np.any(np.isinf(out)):
        raise InfiniteEvent("s_plus lies on a developed segment")
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# slices


def geodesic_slice_crossings(xi, w, y) -> np.ndarray:
    """Real parts where the geodesic from xi through w meets Im = y."""
    w = complex(w)
    if w.real == xi:
        return np.array([xi])
    c = (abs(w) ** 2 - xi * xi) / (2 * (w.real - xi))
    R = abs(xi - c)
    if R < y:
        return np.zeros(0)
    h = math.sqrt(R * R - y * y)
    return np.unique([c - h, c + h])


def box_point(y, xi, x=0.0, t=0.5) -> complex:
    """A point of A_xi(y): adversarial placement for s_plus."""
    return complex(developed_segment(x + 1j * y, xi, t))


@dataclass
class SliceResult:
    value: float
    abserr: float
    breakpoints: list


def graded_mesh(a, b, levels=40, ratio=0.5) -> np.ndarray:
    """Cells of [a, b] shrinking geometrically toward both ends (log singularities there)."""
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    r = half * ratio ** np.arange(levels)
    left = np.concatenate([[a], a + r[::-1], [mid]])
    right = np.concatenate([b - r, [b]])
    return np.unique(np.concatenate([left, right]))


def _gauss_on_cells(f, edges, order):
    u, w = np.polynomial.legendre.leggauss(order)
    a, b = edges[:-1, None], edges[1:, None]
    x = 0.5 * (a + b) + 0.5 * (b - a) * u
    vals = f(x.ravel()).reshape(x.shape)
    return float(np.sum(0.5 * (b - a) * w * vals))


def slice_integral(y, xi, s_plus, cfg: ModelCuspConfig, develop=inclusion, order=12, levels=40) -> SliceResult:
    """Integral of psi over the horizontal slice x in x_range at height y.

    The log singularities sit where the geodesic from xi through s_plus
    crosses the slice; they, and x = xi, split the slice. Each piece gets a
    mesh graded geometrically toward its ends and a Gauss-Legendre rule per
    cell; the error estimate compares against the rule of half the order.
    """
    lo, hi = cfg.x_range
    sp = complex(s_plus) if np.ndim(s_plus) == 0 else s_plus
    pts = []
    if np.ndim(sp) == 0 and np.isfinite(sp) and sp.imag > 0:
        pts.extend(geodesic_slice_crossings(xi, sp, y).tolist())
    pts.append(xi)
    pts = sorted(p for p in set(pts) if lo < p < hi)
    cuts = [lo] + pts + [hi]
    edges = np.unique(np.concatenate([graded_mesh(a, b, levels) for a, b in zip(cuts[:-1], cuts[1:])]))

    def f(x):
        return psi_model(x, y, xi, sp, cfg, develop)

    val = _gauss_on_cells(f, edges, order)
    coarse = _gauss_on_cells(f, edges, order // 2)
    if not np.isfinite(val):
        raise ArithmeticError("slice quadrature did not converge")
    return SliceResult(val, abs(val - coarse), pts)


@dataclass
class SliceFit:
    ys: list
    xis: list
    ratios: np.ndarray  # (len(ys), len(xis)) J / log(xi^2 + y^2)
    max_ratio: float
    growth: list = field(default_factory=list)  # max ratio over nested sub-grids

    @property
    def stable(self) -> bool:
        """Enlarging the grid never raises the fitted constant by more than 5%."""
        g = np.asarray(self.growth)
        return bool(np.all(g[1:] <= 1.05 * g[:-1]))


def fitted_slice_constant(cfg, ys=(10, 30, 100, 300), xis=(0, 10, -10, 100, -100), placement=None) -> SliceFit:
    """J / log(xi^2 + y^2) with s_plus placed inside A_xi(y) (by default at its middle)."""
    placement = placement or (lambda y, xi: box_point(y, xi, 0.1, 0.5))
    ratios = np.empty((len(ys), len(xis)))
    for i, y in enumerate(ys):
        for j, xi in enumerate(xis):
            J = slice_integral(y, xi, placement(y, xi), cfg).value
            ratios[i, j] = J / math.log(xi * xi + y * y)
    growth = [float(ratios[: i + 1].max()) for i in range(len(ys))]
    return SliceFit(list(ys), list(xis), ratios, float(ratios.max()), growth)


# ---------------------------------------------------------------------------
# truncated Liouville integral over the cusp


def adversarial_rule(cfg):
    """s_plus(xi) inside the cusp at a height growing with |xi|, so it meets many boxes."""
    return lambda xi: 0.25 + 1j * (cfg.y0 + np.abs(xi))


def table_rule(table):
    """s_plus(xi) from a boundary-map table: sigma^+ at backward endpoint xi is the
    forward-endpoint boundary map evaluated at xi (interpolated to the nearest grid point)."""
    order = np.argsort(table.xi)
    xs, vals = table.xi[order], table.values[order]

    def rule(xi):
        k = np.clip(np.searchsorted(xs, xi), 1, len(xs) - 1)
        k = np.where(np.abs(xs[k - 1] - xi) < np.abs(xs[k] - xi), k - 1, k)
        return vals[k]

    return rule


@dataclass
class TruncationSeries:
    Y: np.ndarray
    Xi: np.ndarray
    estimates: np.ndarray
    stderr: np.ndarray
    diff_stderr: np.ndarray  # of successive differences, common random numbers
    infinite_events: int

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.estimates)

    @property
    def increment_sigma(self) -> np.ndarray:
        """MC error of a difference of two independently estimated levels."""
        return np.hypot(self.stderr[1:], self.stderr[:-1])

    def cauchy_3sigma(self, tail=3) -> bool:
        """The last `tail` increments are below 3 sigma (and shrink towards the end)."""
        inc = np.abs(self.increments)
        if len(inc) < tail:
            return False
        ok_tail = np.all(inc[-tail:] < 3 * self.increment_sigma[-tail:])
        return bool(ok_tail)

    def rows(self):
        head = ["Y", "Xi", "estimate", "stderr"]
        return head, [[float(a), float(b), float(c), float(d)] for a, b, c, d in zip(self.Y, self.Xi, self.estimates, self.stderr)]


def truncated_liouville_integral(
    cfg, Y_max, Xi_max, n_mc, rng, s_plus_rule=None, develop=inclusion, levels=14, integrand=None
) -> TruncationSeries:
    """Monte Carlo for the integral of psi k dx dy / y^2 dxi over [x_range] x [y0, Y] x [-Xi, Xi].

    Sampling: y with density ~ 1/y^2, x uniform, xi from the Poisson law of
    x + iy truncated to [-Xi, Xi]; the weight is the mass of that proposal.
    All truncation levels (Y_max, Xi_max) / 2^k reuse the same uniforms, so
    successive differences have small, honestly estimated errors.
    """
    if Y_max <= cfg.y0 or Xi_max <= 0 or n_mc <= 1:
        raise ValueError("budgets must be positive and Y_max > y0")
    rule = s_plus_rule or adversarial_rule(cfg)
    lo, hi = cfg.x_range
    u1, u2, u3 = rng.random((3, n_mc))
    scales = 2.0 ** -np.arange(levels - 1, -1, -1)
    Ys = np.maximum(Y_max * scales, cfg.y0 * 1.5)
    Xis = Xi_max * scales
    vals = []
    n_inf = 0
    for Y, Xi in zip(Ys, Xis):
        a, b = 1 / cfg.y0, 1 / Y
        y = 1 / (a - u1 * (a - b))
        x = lo + (hi - lo) * u2
        A = np.arctan((-Xi - x) / y)
        B = np.arctan((Xi - x) / y)
        xi = x + y * np.tan(A + u3 * (B - A))
        w = (a - b) * (hi - lo) * (B - A)  # proposal mass: int k dxi = B - A
        if integrand is not None:
            f = integrand(x, y, xi)
        else:
            f = psi_model(x, y, xi, rule(xi), cfg, develop)
        bad = ~np.isfinite(f)
        n_inf += int(bad.sum())
        vals.append(np.where(bad, 0.0, f) * w)
    vals = np.array(vals)
    est = vals.mean(axis=1)
    se = vals.std(axis=1, ddof=1) / math.sqrt(n_mc)
    dse = np.diff(vals, axis=0).std(axis=1, ddof=1) / math.sqrt(n_mc)
    return TruncationSeries(Ys, Xis, est, se, dse, n_inf)


# ---------------------------------------------------------------------------
# geometric lemmas of the model case


@dataclass
class LemmaReport:
    box_constant: float
    box_constants_by_grid: list
    box_stable: bool
    box_violations_at_4: int
    horo_violations: int
    horo_ratio_small_d: float
    lagrange_violations: int
    lagrange_headline_endpoint_ok: bool
    lagrange_headline_failures_near_top: int
    n_samples: int
    y0: float

    @property
    def ok(self) -> bool:
        return (
            self.box_stable
            and self.box_violations_at_4 == 0
            and self.horo_violations == 0
            and self.lagrange_violations == 0
            and self.lagrange_headline_endpoint_ok
        )

    def to_json(self):
        d = dict(self.__dict__)
        d["ok"] = self.ok
        return d


def _box_constant(y, xi, x, t):
    p = developed_segment(x + 1j * y, xi, t)
    return np.max(np.stack([np.abs(p.real) / y, y / p.imag, p.imag / y]), axis=0)


def lemma_checks(cfg: ModelCuspConfig, rng, n=10_000) -> LemmaReport:
    # (a) box: smallest C0 with A_xi(y) in [-C0 y, C0 y] x [y / C0, C0 y]
    ys = np.array([1.0, 3.0, 10.0, 30.0, 100.0, 1000.0])
    xis = np.array([0.0, 0.3, -1.0, 3.0, -10.0, 30.0, 100.0, -1000.0, 1e4])
    per_grid = []
    worst_at4 = 0
    C0 = 0.0
    for i in range(1, len(ys) + 1):
        for y in ys[:i]:
            for xi in xis:
                x = rng.uniform(-0.5, 0.5, n // 50)
                t = rng.uniform(0, 1, n // 50)
                # the endpoints of each segment are included explicitly
                x = np.concatenate([x, [-0.5, 0.5, -0.5, 0.5]])
                t = np.concatenate([t, [0.0, 0.0, 1.0, 1.0]])
                c = _box_constant(y, xi, x, t)
                C0 = max(C0, float(c.max()))
                if i == len(ys):
                    worst_at4 += int(np.sum(c > 4))
        per_grid.append(C0)
    box_stable = all(b <= 1.05 * a for a, b in zip(per_grid, per_grid[1:]))

    # (b) horocyclic vs hyperbolic distance on a horizontal slice y >= y0
    y = cfg.y0 * np.exp(rng.uniform(0, 5, n))
    x1, x2 = rng.uniform(-0.5, 0.5, (2, n))
    horo = np.abs(x1 - x2) / y
    dh = 2 * np.arcsinh(np.abs(x1 - x2) / (2 * y))
    horo_bad = int(np.sum((dh > horo * (1 + 1e-12)) | (horo > 2 * dh * (1 + 1e-12))))
    d_small = 1e-6
    ratio = 2 * math.sinh(d_small / 2) / d_small

    # (c) Lagrange bounds on quadrant arcs, eps <= 1 / y0
    eps = rng.uniform(0, 1 / cfg.y0, n)
    ang = rng.uniform(0, np.pi / 2, n)
    z = np.exp(1j * ang)
    # |z + eps| - 1 and friends in cancellation-free form
    f_plus = (2 * eps * np.cos(ang) + eps * eps) / (np.abs(z + eps) + 1)
    # the proof's minimum sits at the top z = i, with value sqrt(1+eps^2) - 1 >= eps^2 (1 - eps) / 2
    top = eps * eps / (np.sqrt(1 + eps * eps) + 1)
    bad1 = (f_plus < top * (1 - 1e-12)) | (top < eps * eps * (1 - eps) / 2)
    # second assertion: z in S^+(eps) = {Re z >= eps} shifted inward
    ang2 = rng.uniform(0, np.arccos(eps))
    z2 = np.exp(1j * ang2)
    f_minus = (2 * eps * np.cos(ang2) - eps * eps) / (1 + np.abs(z2 - eps))
    top2 = eps * eps / (1 + np.sqrt(1 - eps * eps))
    bad2 = (f_minus < np.minimum(top2, eps) * (1 - 1e-12)) | (top2 < eps * eps / 2)
    endpoint_ok = bool(np.all(np.abs(1 + eps) - 1 >= eps * eps))
    headline_fail = int(np.sum(f_plus < eps * eps))
    return LemmaReport(
        C0,
        per_grid,
        box_stable,
        worst_at4,
        horo_bad,
        ratio,
        int(bad1.sum() + bad2.sum()),
        endpoint_ok,
        headline_fail,
        n,
        cfg.y0,
    )
