"""Top Lyapunov exponent of the holonomy cocycle and the Oseledets sections.

sigma^-(v) is the most contracted direction of A_T(v) for large T, and
sigma^+(v) the same for the reversed vector (equivalently of A_{-T}(v)).
Each comes with a certificate log||A_T|| > log(1/tol), i.e. singular-value
ratio above 1/tol^2; T grows by a factor 1.5 until then.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .hyperbolic import FLIP, frame, frames_point, mobius, unit_tangent_from_frame
from .projective import SpherePoint, chordal_pairs, normalize_pairs, apply_pairs
from .riccati import Representation
from .surface import SurfaceModel, flow_frames, sample_liouville_frames


class NoConvergence(RuntimeError):
    def __init__(self, message, indices=None):
        super().__init__(message)
        self.indices = indices


# ---------------------------------------------------------------------------
# batched linear algebra on (n, 2, 2) stacks


def log_norms(Q, L):
    return np.asarray(L) + np.log(np.linalg.svd(Q, compute_uv=False)[..., 0])


def top_right(Q):
    _, _, vh = np.linalg.svd(Q)
    return vh[..., 0, :].conj()


def least_right(Q):
    """Orthogonal complement of the top right singular vector (robust for rank-1-like Q)."""
    v = top_right(Q)
    return normalize_pairs(np.stack([-np.conj(v[..., 1]), np.conj(v[..., 0])], -1))


def top_left(Q):
    u, _, _ = np.linalg.svd(Q)
    return u[..., :, 0]


def adjugate(Q):
    return np.stack(
        [np.stack([Q[..., 1, 1], -Q[..., 0, 1]], -1), np.stack([-Q[..., 1, 0], Q[..., 0, 0]], -1)], -2
    )


def pushed_distance(Q, L, w, u):
    """Chordal distance between (exp(L) Q) w and (exp(L) Q) u for det-1 exp(L) Q.

    Uses d(Mw, Mu) = |det M| |w ^ u| / (|Mw| |Mu|), so no cancellation occurs
    even when the images are exponentially close.
    """
    w = normalize_pairs(w)
    u = normalize_pairs(u)
    Mw = np.einsum("...ij,...j->...i", Q, w)
    Mu = np.einsum("...ij,...j->...i", Q, u)
    wedge = np.abs(w[..., 0] * u[..., 1] - w[..., 1] * u[..., 0])
    log_d = -2 * np.asarray(L) + np.log(wedge) - np.log(np.linalg.norm(Mw, axis=-1)) - np.log(
        np.linalg.norm(Mu, axis=-1)
    )
    return log_d


# ---------------------------------------------------------------------------
# exponent


@dataclass
class ExponentEstimate:
    lambda_plus: float
    stderr: float
    horizon: float
    ensemble: int
    times: np.ndarray
    series: np.ndarray  # (ensemble, len(times)) of (1/t) log||A_t||
    per_orbit: np.ndarray = field(repr=False, default=None)

    def summary(self) -> dict:
        return {
            "lambda_plus": self.lambda_plus,
            "stderr": self.stderr,
            "horizon": self.horizon,
            "ensemble": self.ensemble,
        }


def bootstrap_stderr(values, rng, n_boot=1000):
    values = np.asarray(values, dtype=float)
    idx = rng.integers(0, len(values), size=(n_boot, len(values)))
    return float(values[idx].mean(axis=1).std(ddof=1))


def estimate_top_exponent(
    rep: Representation,
    model: SurfaceModel,
    T: float,
    ensemble: int,
    rng,
    n_series=40,
    force=False,
    n_boot=1000,
    frames=None,
) -> ExponentEstimate:
    """Ensemble mean of (1/T) log||A_T(v)|| over Liouville-distributed v."""
    rep.require_hypotheses(force)
    if frames is None:
        frames = sample_liouville_frames(model, ensemble, rng)
    times = np.linspace(T / n_series, T, n_series)
    tr = flow_frames(model, frames, T, side_maps=rep.side_maps(model), checkpoints=times[:-1])
    ln = np.empty((len(frames), n_series))
    ln[:, :-1] = log_norms(tr.checkpoint_cocycle, tr.checkpoint_ledger)
    ln[:, -1] = log_norms(tr.cocycle, tr.ledger)
    series = ln / times
    per = series[:, -1]
    return ExponentEstimate(
        float(per.mean()), bootstrap_stderr(per, rng, n_boot), float(T), len(frames), times, series, per
    )


# ---------------------------------------------------------------------------
# sections


@dataclass
class SectionBatch:
    """sigma^- (or sigma^+) of a batch of frames."""

    frames: np.ndarray
    points: np.ndarray  # (n, 2) normalized pairs
    certificate: np.ndarray  # achieved log||A_T||
    horizon: np.ndarray
    converged: np.ndarray

    def sphere_point(self, i) -> SpherePoint:
        return SpherePoint.from_vector(self.points[i])

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class SectionSample:
    v: object
    sigma_minus: SpherePoint
    sigma_plus: SpherePoint
    certificate: float  # min of the two achieved log-norms
    separation: float


def sigma_minus_frames(
    rep, model, frames, tol=1e-6, T0=8.0, growth=1.5, T_cap=1e4, strict=True
) -> SectionBatch:
    """Most contracted direction of A_T(v) once log||A_T|| > log(1/tol)."""
    frames = np.asarray(frames, dtype=float).reshape(-1, 2, 2)
    n = len(frames)
    need = math.log(1 / tol)
    side_maps = rep.side_maps(model)
    F = frames.copy()
    Q = np.tile(np.eye(2, dtype=complex), (n, 1, 1))
    L = np.zeros(n)
    pts = np.zeros((n, 2), dtype=complex)
    cert = np.zeros(n)
    hor = np.zeros(n)
    done = np.zeros(n, dtype=bool)
    gone = np.zeros(n, dtype=bool)
    active = np.arange(n)
    t_prev, t = 0.0, float(T0)
    while len(active):
        tr = flow_frames(model, F[active], t - t_prev, side_maps=side_maps, cocycle=Q[active], ledger=L[active],
                         on_deep="stop")
        F[active], Q[active], L[active] = tr.frames, tr.cocycle, tr.ledger
        ln = log_norms(tr.cocycle, tr.ledger)
        ok = ln > need
        stuck = tr.lost & ~ok
        if stuck.any():
            # orbit heads straight into a cusp beyond double-precision depth
            # before a gap was certified
            lost_idx = active[stuck]
            cert[lost_idx], hor[lost_idx] = ln[stuck], t
            pts[lost_idx] = least_right(tr.cocycle[stuck])
            gone[lost_idx] = True
        idx = active[ok]
        pts[idx] = least_right(tr.cocycle[ok])
        cert[idx], hor[idx], done[idx] = ln[ok], t, True
        active = active[~ok & ~stuck]
        if t >= T_cap:
            break
        t_prev, t = t, min(t * growth, T_cap)
    if len(active):
        cert[active] = log_norms(Q[active], L[active])
        hor[active] = t
        pts[active] = least_right(Q[active])
    failed = np.nonzero(~done)[0]
    if strict and len(failed):
        raise NoConvergence(
            f"{len(failed)} orbits without a singular gap by T = {T_cap:g} ({int(gone.sum())} lost in a cusp)", failed
        )
    return SectionBatch(frames, pts, cert, hor, done)


def sigma_plus_frames(rep, model, frames, **kw) -> SectionBatch:
    """sigma^+(v) = sigma^-(-v): the same extraction along the reversed vector."""
    frames = np.asarray(frames, dtype=float).reshape(-1, 2, 2)
    out = sigma_minus_frames(rep, model, frames @ FLIP, **kw)
    out.frames = frames
    return out


def estimate_sigma_minus(rep, model, v, tol=1e-6, **kw) -> SectionBatch:
    return sigma_minus_frames(rep, model, frame(v)[None], tol=tol, **kw)


def estimate_sigma_plus(rep, model, v, tol=1e-6, **kw) -> SectionBatch:
    return sigma_plus_frames(rep, model, frame(v)[None], tol=tol, **kw)


def section_sample(rep, model, v, tol=1e-6, **kw) -> SectionSample:
    sm = estimate_sigma_minus(rep, model, v, tol, **kw)
    sp = estimate_sigma_plus(rep, model, v, tol, **kw)
    sep = float(chordal_pairs(sm.points[0], sp.points[0]))
    return SectionSample(v, sm.sphere_point(0), sp.sphere_point(0), float(min(sm.certificate[0], sp.certificate[0])), sep)


# ---------------------------------------------------------------------------
# rates


def _boundary_circle(center, radius, n, rng):
    """n points at chordal distance `radius` from the pair `center`."""
    c = normalize_pairs(center)
    r = min(radius, 1.0 - 1e-15)
    mod = r / math.sqrt(1 - r * r)
    ang = rng.uniform(0, 2 * np.pi, n)
    local = np.stack([mod * np.exp(1j * ang), np.ones(n)], -1)  # around 0 = [0:1]
    # unitary sending [0:1] to c
    U = np.array([[np.conj(c[1]), c[0]], [-np.conj(c[0]), c[1]]])
    return normalize_pairs(local @ U.T)


def _outside_ball(center, radius, n, rng):
    """Uniform sphere points conditioned on chordal distance >= radius from center."""
    out = []
    c = normalize_pairs(center)
    while sum(len(o) for o in out) < n:
        g = rng.normal(size=(2 * n, 4))
        w = normalize_pairs(g[:, :2] + 1j * g[:, 2:])
        out.append(w[chordal_pairs(w, c[None]) >= radius])
    return np.concatenate(out)[:n]


@dataclass
class NorthSouthReport:
    lam1: float
    lam2: float
    times: np.ndarray
    violations: np.ndarray
    worst_log_ratio: np.ndarray  # max over samples of log dist / (-lam2 T)
    T0: float | None

    @property
    def violations_after_T0(self) -> int:
        if self.T0 is None:
            return int(self.violations.sum())
        return int(self.violations[self.times >= self.T0].sum())


def check_north_south(
    rep, model, v, lam1=None, lam2=None, T_grid=None, n_points=100, rng=None, lam_hat=0.5, tol=1e-10
) -> NorthSouthReport:
    """A_T(v)^-1 sends the complement of B(sigma^+(g_T v), e^{-lam1 T}) into B(sigma^-(v), e^{-lam2 T}).

    Images of points within e^{-lam1 T} of the repeller lose about
    eps e^{lam1 T} of accuracy when formed directly, so the distance to
    sigma^-(v) = A_T(v)^-1 sigma^-(g_T v) is taken as the distance of two
    pushed points (determinant formula, no cancellation).
    """
    rng = rng or np.random.default_rng(0)
    lam1 = 0.6 * lam_hat if lam1 is None else lam1
    lam2 = 0.8 * lam_hat if lam2 is None else lam2
    if not 0 < lam1 < lam2:
        raise ValueError("need 0 < lam1 < lam2")
    T_grid = np.arange(5.0, 41.0, 5.0) if T_grid is None else np.asarray(T_grid, dtype=float)
    F = frame(v)[None] if not isinstance(v, np.ndarray) else np.asarray(v).reshape(1, 2, 2)
    tr = flow_frames(model, F, T_grid[-1], side_maps=rep.side_maps(model), checkpoints=T_grid[:-1])
    Fs = np.concatenate([tr.checkpoint_frames[0], tr.frames])
    Qs = np.concatenate([tr.checkpoint_cocycle[0], tr.cocycle])
    Ls = np.concatenate([tr.checkpoint_ledger[0], tr.ledger])
    sp = sigma_plus_frames(rep, model, Fs, tol=tol).points
    sm_T = sigma_minus_frames(rep, model, Fs, tol=tol).points
    viol = np.zeros(len(T_grid), dtype=int)
    worst = np.zeros(len(T_grid))
    for i, T in enumerate(T_grid):
        r1, r2 = math.exp(-lam1 * T), math.exp(-lam2 * T)
        w = np.concatenate([_boundary_circle(sp[i], r1, n_points, rng), _outside_ball(sp[i], r1, n_points, rng)])
        d = np.exp(pushed_distance(adjugate(Qs[i]), Ls[i], w, sm_T[i][None]))
        viol[i] = int(np.sum(d > r2))
        worst[i] = float(np.max(np.log(np.maximum(d, 1e-300))) / (-lam2 * T))
    T0 = None
    for i in range(len(T_grid)):
        if np.all(viol[i:] == 0):
            T0 = float(T_grid[i])
            break
    return NorthSouthReport(lam1, lam2, T_grid, viol, worst, T0)


@dataclass
class AttractionFit:
    slope: float
    times: np.ndarray
    mean_log_distance: np.ndarray


def attraction_slope(rep, model, frames, t_min, t_max, rng, n_times=16, tol=1e-10, w=None) -> AttractionFit:
    """Least-squares slope of the mean log d(A_t(v) w, sigma^+(g_t v)) over [t_min, t_max].

    sigma^+(g_t v) = A_t(v) sigma^+(v) by equivariance, and the distance of two
    pushed points is evaluated through the determinant, without cancellation.
    """
    frames = np.asarray(frames, dtype=float).reshape(-1, 2, 2)
    n = len(frames)
    sp = sigma_plus_frames(rep, model, frames, tol=tol).points
    if w is None:
        g = rng.normal(size=(n, 4))
        w = normalize_pairs(g[:, :2] + 1j * g[:, 2:])
    times = np.linspace(t_min, t_max, n_times)
    tr = flow_frames(model, frames, t_max, side_maps=rep.side_maps(model), checkpoints=times[:-1])
    Qs = np.concatenate([tr.checkpoint_cocycle, tr.cocycle[:, None]], axis=1)
    Ls = np.concatenate([tr.checkpoint_ledger, tr.ledger[:, None]], axis=1)
    logd = pushed_distance(Qs, Ls, w[:, None, :], sp[:, None, :])
    mean = logd.mean(axis=0)
    slope = float(np.polyfit(times, mean, 1)[0])
    return AttractionFit(slope, times, mean)


@dataclass
class SubexpSeries:
    times: np.ndarray
    values: np.ndarray  # (n, m): (1/t) |log d_t|
    distance: np.ndarray  # (n, m): d_t
    depth: np.ndarray  # (n, m): log of the chart height of the reduced point in its cusp (0 outside)
    events: int

    def tail_max(self, start=None) -> np.ndarray:
        start = self.times[-1] / 2 if start is None else start
        return np.nanmax(self.values[:, self.times >= start], axis=1)


def subexponential_check(rep, model, section, frames, T_grid, tol=1e-10, fibre="pulled_back") -> SubexpSeries:
    """(1/t)|log d(sigma^+, sigma0)| along the orbits.

    fibre="pulled_back": both points are read in the fibre over v, i.e.
    d(A_t(v)^-1 sigma0(g_t v), sigma^+(v)), the developed picture.
    fibre="local": read in the fibre over the reduced g_t v with the chordal
    metric of the polygon chart, d(sigma0(g_t v), A_t(v) sigma^+(v)); this is
    where cusp excursions show up as spikes.
    """
    if fibre not in ("pulled_back", "local"):
        raise ValueError("fibre must be 'pulled_back' or 'local'")
    frames = np.asarray(frames, dtype=float).reshape(-1, 2, 2)
    T_grid = np.asarray(T_grid, dtype=float)
    sp = sigma_plus_frames(rep, model, frames, tol=tol).points
    tr = flow_frames(model, frames, T_grid[-1], side_maps=rep.side_maps(model), checkpoints=T_grid[:-1])
    Fs = np.concatenate([tr.checkpoint_frames, tr.frames[:, None]], axis=1)
    Qs = np.concatenate([tr.checkpoint_cocycle, tr.cocycle[:, None]], axis=1)
    z = frames_point(Fs)
    s0 = section.evaluate(z, model)
    if fibre == "pulled_back":
        d = chordal_pairs(apply_pairs(adjugate(Qs), s0), sp[:, None, :])
    else:
        d = chordal_pairs(s0, apply_pairs(Qs, np.broadcast_to(sp[:, None, :], s0.shape)))
    events = int(np.sum(d == 0))
    with np.errstate(divide="ignore"):
        vals = np.abs(np.log(d)) / T_grid
    depth = np.zeros(z.shape)
    where = model.in_horoballs(z)
    for k in range(model.n_sides):
        sel = where == k
        if sel.any():
            depth[sel] = np.log(mobius(model.vertex_charts[k], z[sel]).imag / model.chart_levels[k])
    return SubexpSeries(T_grid, vals, d, depth, events)
