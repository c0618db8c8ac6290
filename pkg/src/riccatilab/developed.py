"""Developed geodesic rays x_t = A_t(v)^-1 sigma0(g_t v) and their limits.

A global section sigma0 is given over the fundamental polygon (fibre
coordinates of P). The identity section z -> z (optionally composed with a
fixed Moebius map) is the developing map of a Fuchsian-conjugate structure
and glues exactly; constant sections do not glue, but the ray limits they
produce do not depend on that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .hyperbolic import FLIP, frame, frames_from_point_angle, frames_point, mobius
from .lyapunov import adjugate, sigma_minus_frames, sigma_plus_frames
from .measures import EmpiricalSphereMeasure
from .projective import SpherePoint, apply_pairs, chordal_pairs, normalize_pairs, pairs_from_complex
from .surface import _side_frame, flow_frames, reduce_points


@dataclass(frozen=True, eq=False)
class GlobalSection:
    """kind: 'identity' (z -> M z), 'constant' (s0) or 'callable' (func(z) -> pairs or complex)."""

    kind: str
    point: SpherePoint | None = None
    matrix: np.ndarray | None = None
    func: object = None
    name: str = ""

    @classmethod
    def identity(cls, matrix=None, name="identity"):
        m = np.eye(2, dtype=complex) if matrix is None else np.asarray(matrix, dtype=complex)
        return cls("identity", matrix=m, name=name)

    @classmethod
    def constant(cls, point, name=None):
        p = point if isinstance(point, SpherePoint) else SpherePoint.from_complex(point)
        return cls("constant", point=p, name=name or f"constant({p.to_complex():.4g})")

    @classmethod
    def from_callable(cls, func, name="callable"):
        return cls("callable", func=func, name=name)

    @classmethod
    def for_representation(cls, rep):
        """The exact developing section when rep is conjugate to the deck group by a known map."""
        conj = getattr(rep, "conjugator", None)
        return cls.identity(conj)

    def evaluate(self, z, model=None) -> np.ndarray:
        """Section values (..., 2) at points z of P."""
        z = np.asarray(z, dtype=complex)
        if self.kind == "identity":
            return apply_pairs(self.matrix, pairs_from_complex(z))
        if self.kind == "constant":
            return np.broadcast_to(self.point.vector, z.shape + (2,)).copy()
        if self.kind == "callable":
            out = np.asarray(self.func(z))
            return normalize_pairs(out) if out.shape == z.shape + (2,) else pairs_from_complex(out)
        raise ValueError(f"unknown section kind {self.kind!r}")

    def gluing_mismatch(self, rep, model, n=64) -> float:
        """max over sides of d(sigma(g_k^-1 z), rho(g_k)^-1 sigma(z)) for z on side k."""
        worst = 0.0
        u = np.linspace(-3, 3, n)
        side_maps = rep.side_maps(model)
        for k in range(model.n_sides):
            a, b = model.vertices[k], model.vertices[(k + 1) % model.n_sides]
            z = mobius(_side_frame(a, b), 1j * np.exp(u))
            here = self.evaluate(z, model)
            there = self.evaluate(mobius(model.side_inverses[k], z), model)
            d = chordal_pairs(apply_pairs(side_maps[k], here), there)
            worst = max(worst, float(d.max()))
        return worst


@dataclass
class RayTrace:
    times: np.ndarray
    points: np.ndarray  # (m, 2) pairs, or (n, m, 2) for batches
    word_lengths: np.ndarray
    tail_oscillation: np.ndarray | float
    tail_start: float

    @property
    def final(self) -> np.ndarray:
        return self.points[..., -1, :]


def tail_oscillation(points) -> np.ndarray:
    """Max pairwise chordal distance over the trailing samples (..., m, 2)."""
    p = points[..., :, None, :]
    q = points[..., None, :, :]
    return chordal_pairs(p, q).max(axis=(-1, -2))


def _initial_reduction(rep, model, frames):
    """Frames with base points outside P are reduced first; their cocycle starts at rho(W)^-1."""
    z = frames_point(frames)
    inside = model.contains(z)
    Q = np.tile(np.eye(2, dtype=complex), (len(frames), 1, 1))
    if np.all(inside):
        return frames, Q, np.zeros(len(frames))
    idx = np.nonzero(~inside)[0]
    _, words = reduce_points(model, z[idx])
    side_maps = rep.side_maps(model)
    frames = frames.copy()
    for j, sides in zip(idx, words):
        W = np.eye(2)
        for s in sides:
            W = model.side_inverses[s] @ W
            Q[j] = side_maps[s] @ Q[j]
        frames[j] = W @ frames[j]
    big = np.abs(Q).max(axis=(1, 2))
    return frames, Q / big[:, None, None], np.log(big)


def developed_rays(rep, model, section, frames, T, dt=None, times=None, tail=10.0) -> RayTrace:
    """Batched developed rays on a time grid; the tail window is [T - tail, T]."""
    frames = np.asarray(frames, dtype=float).reshape(-1, 2, 2)
    if times is None:
        dt = dt or 0.5
        times = np.arange(dt, T + 0.5 * dt, dt)
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) <= 0):
        raise ValueError("time grid must be strictly increasing")
    F0, Q0, L0 = _initial_reduction(rep, model, frames)
    tr = flow_frames(
        model, F0, times[-1], side_maps=rep.side_maps(model), cocycle=Q0, ledger=L0, checkpoints=times[:-1]
    )
    Fs = np.concatenate([tr.checkpoint_frames, tr.frames[:, None]], axis=1)
    Qs = np.concatenate([tr.checkpoint_cocycle, tr.cocycle[:, None]], axis=1)
    ns = np.concatenate([tr.checkpoint_crossings, tr.crossings[:, None]], axis=1)
    x = apply_pairs(adjugate(Qs), section.evaluate(frames_point(Fs), model))
    start = times[-1] - tail
    osc = tail_oscillation(x[:, times >= start])
    return RayTrace(times, x, ns, osc, start)


def developed_ray(rep, model, section, v, T, dt=0.1, tail=10.0) -> RayTrace:
    F = frame(v)[None] if not isinstance(v, np.ndarray) else np.asarray(v).reshape(1, 2, 2)
    tr = developed_rays(rep, model, section, F, T, dt=dt, tail=min(tail, T))
    return RayTrace(tr.times, tr.points[0], tr.word_lengths[0], float(tr.tail_oscillation[0]), tr.tail_start)


def ray_limit(trace: RayTrace, tol=1e-4):
    """(final point, converged) with converged = tail oscillation < tol."""
    pts = np.asarray(trace.points)
    if pts.size == 0:
        raise ValueError("empty trace")
    if pts.ndim == 2:
        return SpherePoint.from_vector(pts[-1]), bool(trace.tail_oscillation < tol)
    return pts[:, -1], np.asarray(trace.tail_oscillation) < tol


def ray_limits(rep, model, section, frames, T=60.0, tail=10.0, n_tail=21, tol=1e-4):
    """Limits and convergence flags, sampling only the tail window."""
    times = np.linspace(T - tail, T, n_tail)
    tr = developed_rays(rep, model, section, frames, T, times=times, tail=tail)
    return tr.points[:, -1], tr.tail_oscillation < tol, tr.tail_oscillation


@dataclass
class IndependenceReport:
    sections: list
    max_pairwise: np.ndarray  # per sample, over converged pairs
    converged: np.ndarray  # (n_sections, n)
    degenerate: np.ndarray  # (n_sections, n): section meets sigma^+ along the orbit
    tol: float

    @property
    def pass_fraction(self) -> float:
        ok = self.converged.all(axis=0) & ~self.degenerate.any(axis=0)
        if not ok.any():
            return 0.0
        return float(np.mean(self.max_pairwise[ok] < self.tol))

    def to_json(self):
        return {
            "sections": self.sections,
            "pass_fraction": self.pass_fraction,
            "degenerate_count": int(self.degenerate.any(axis=0).sum()),
            "tol": self.tol,
        }


def section_independence(rep, model, frames, sections, T=60.0, tol=1e-4, degenerate_tol=1e-6, sigma_tol=1e-10):
    """Pairwise distances of ray limits across sections, with a degeneracy flag.

    A section is degenerate at v when its developed point comes within
    degenerate_tol of sigma^+(v) at some sampled time (starting at t = 0),
    the configuration excluded by the convergence statement.
    """
    if len(sections) < 2:
        raise ValueError("need at least two sections")
    frames = np.asarray(frames, dtype=float).reshape(-1, 2, 2)
    sp = sigma_plus_frames(rep, model, frames, tol=sigma_tol, strict=False).points
    lims, conv, degen = [], [], []
    grid = np.concatenate([[1e-9], np.linspace(1.0, T, 60)])
    for s in sections:
        tr = developed_rays(rep, model, s, frames, T, times=grid, tail=min(10.0, T))
        x0 = s.evaluate(frames_point(frames), model)
        allx = np.concatenate([x0[:, None], tr.points], axis=1)
        dmin = chordal_pairs(allx, sp[:, None]).min(axis=1)
        lims.append(tr.points[:, -1])
        conv.append(tr.tail_oscillation < tol)
        degen.append(dmin < degenerate_tol)
    lims = np.stack(lims)
    mp = np.zeros(len(frames))
    for i in range(len(sections)):
        for j in range(i + 1, len(sections)):
            mp = np.maximum(mp, chordal_pairs(lims[i], lims[j]))
    return IndependenceReport([s.name for s in sections], mp, np.stack(conv), np.stack(degen), tol)


@dataclass
class SingularitySample:
    measure: EmpiricalSphereMeasure
    limits: np.ndarray
    converged_fraction: float
    directions: np.ndarray


def singularity_sample(
    rep, model, p, n, T, rng, section=None, bins=256, tol=1e-4, tail=10.0
) -> SingularitySample:
    """Binned ray limits for n directions drawn uniformly at the base point p in P."""
    p = complex(getattr(p, "z", p))
    if not model.contains(p):
        raise ValueError("base point must lie in the fundamental polygon")
    section = section or GlobalSection.for_representation(rep)
    theta = rng.uniform(0, 2 * np.pi, n)
    F = frames_from_point_angle(np.full(n, p), theta)
    lim, conv, _ = ray_limits(rep, model, section, F, T, tail=tail, tol=tol)
    m = EmpiricalSphereMeasure.from_pairs(lim[conv], bins, label="geodesic_limits")
    return SingularitySample(m, lim, float(conv.mean()), theta)
