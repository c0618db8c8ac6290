"""Hyperbolic Brownian motion on the surface, developed paths and Cesaro limits.

The SDE dX = Y dW1, dY = Y dW2 (generator half the hyperbolic Laplacian) is
isometry invariant, so paths are simulated in reduced coordinates: a point
of P plus the list of polygon sides crossed. The Y factor is stepped exactly
(Y <- Y exp(sqrt(h) N - h/2)); the X increment uses the log-mean of Y^2 over
the step as its variance rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .lyapunov import adjugate
from .measures import EmpiricalSphereMeasure, fibonacci_lattice, assign_bins
from .projective import apply_pairs, normalize_pairs, to_xyz, from_xyz
from .hyperbolic import dist_h_array, mobius
from .surface import _power_ledger, greedy_reduce, liouville_layout, reduce_points


def _logmean(a, b):
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (a - b) / (np.log(a) - np.log(b))
    return np.where(np.abs(a - b) <= 1e-12 * np.maximum(a, b), 0.5 * (a + b), r)


def bm_step(z, h, rng, scheme="log"):
    """One step of the hyperbolic SDE for an array of points; returns (z, rejected count)."""
    n = len(z)
    x, y = z.real, z.imag
    if scheme == "log":
        y2 = y * np.exp(math.sqrt(h) * rng.standard_normal(n) - h / 2)
        x2 = x + np.sqrt(h * _logmean(y * y, y2 * y2)) * rng.standard_normal(n)
        return x2 + 1j * y2, 0
    if scheme == "euler":
        # plain Euler-Maruyama; a step leaving H is redone as two half steps
        g1, g2 = rng.standard_normal(n), rng.standard_normal(n)
        y2 = y + y * math.sqrt(h) * g2
        x2 = x + y * math.sqrt(h) * g1
        bad = y2 <= 0
        rejected = int(bad.sum())
        if rejected:
            zb, r1 = bm_step(z[bad], h / 2, rng, "euler")
            zb, r2 = bm_step(zb, h / 2, rng, "euler")
            x2[bad], y2[bad] = zb.real, zb.imag
            rejected += r1 + r2
        return x2 + 1j * y2, rejected
    raise ValueError(f"unknown scheme {scheme!r}")


@dataclass
class BrownianPath:
    """A batch of paths: reduced positions at sample times plus the crossing record.

    Events are ordered per path. kind 0: side `arg` crossed; kind 1: the
    peripheral element of vertex `arg` applied `power` times in one go.
    """

    h: float
    times: np.ndarray
    positions: np.ndarray  # (n, m) reduced points in P
    sample_steps: np.ndarray  # (m,) step index of each sample
    event_path: np.ndarray
    event_step: np.ndarray
    event_kind: np.ndarray
    event_arg: np.ndarray
    event_power: np.ndarray
    rejections: int = 0
    n_steps: int = 0

    @property
    def n_paths(self) -> int:
        return self.positions.shape[0]

    @property
    def n_events(self) -> int:
        return len(self.event_path)

    def word_matrix(self, model, i, j) -> np.ndarray:
        """W with lifted position = W (reduced position) at sample j of path i."""
        sel = (self.event_path == i) & (self.event_step <= self.sample_steps[j])
        cusps = _cusp_data(model)
        W = np.eye(2)
        for kind, arg, pw in zip(self.event_kind[sel], self.event_arg[sel], self.event_power[sel]):
            if kind == 0:
                W = W @ model.side_matrices[arg]
            else:
                W = W @ np.linalg.matrix_power(cusps[arg]["E"], int(pw))
        return W

    def word_lengths(self, model) -> np.ndarray:
        """(n, m) letter count of the (unreduced) crossing word at each sample."""
        cusps = _cusp_data(model)
        size = np.ones(self.n_events, dtype=np.int64)
        k1 = self.event_kind == 1
        if k1.any():
            plen = np.array([len(c["pattern"]) for c in cusps])
            size[k1] = np.abs(self.event_power[k1]) * plen[self.event_arg[k1]]
        out = np.zeros((self.n_paths, len(self.sample_steps)), dtype=np.int64)
        starts = np.searchsorted(self.event_path, np.arange(self.n_paths + 1))
        for i in range(self.n_paths):
            a, b = starts[i], starts[i + 1]
            cum = np.concatenate([[0], np.cumsum(size[a:b])])
            out[i] = cum[np.searchsorted(self.event_step[a:b], self.sample_steps, side="right")]
        return out

    def lifted(self, model, i, j) -> complex:
        return complex(mobius(self.word_matrix(model, i, j), self.positions[i, j]))


_CUSP_CACHE = {}


def _cusp_data(model):
    """Per vertex: chart, peripheral element E (as the rotation pattern), its chart translation."""
    key = id(model)
    if key in _CUSP_CACHE and _CUSP_CACHE[key][0] is model:
        return _CUSP_CACHE[key][1]
    lay = liouville_layout(model)
    patterns, _ = model.cusp_patterns
    out = []
    for v, lo, hi, lev in lay.strips:
        seq = patterns[v][0]
        E = np.eye(2)
        for s_ in seq:
            E = E @ model.side_matrices[s_]
        C = model.vertex_charts[v]
        Tm = C @ E @ np.linalg.inv(C)
        tau = Tm[0, 1] / Tm[1, 1]
        out.append({"C": C, "Cinv": np.linalg.inv(C), "E": E, "pattern": seq, "tau": tau, "lo": lo, "level": lev})
    _CUSP_CACHE[key] = (model, out)
    return out


def _cusp_shift(model, z):
    """Move deep cusp points back into the period strip of P: returns (z, vertex, power)."""
    cusps = _cusp_data(model)
    vert = np.full(len(z), -1)
    power = np.zeros(len(z), dtype=np.int64)
    for v, c in enumerate(cusps):
        w = mobius(c["C"], z)
        tau = abs(c["tau"])
        deep = (w.imag > c["level"]) & (vert < 0)
        k = np.floor((w.real - c["lo"]) / tau).astype(np.int64) * int(np.sign(c["tau"]))
        go = deep & (np.abs(k) >= 2)
        if go.any():
            w2 = w[go] - k[go] * c["tau"]
            z[go] = mobius(c["Cinv"], w2)
            vert[go] = v
            power[go] = k[go]
    return z, vert, power


def simulate_bm(model, z0, T, h, rng, n_paths=1, sample_dt=None, scheme="log") -> BrownianPath:
    """Brownian paths from z0 in P (array or scalar), reduced after every step."""
    z = np.broadcast_to(np.asarray(z0, dtype=complex), (n_paths,)).copy()
    if np.any(z.imag <= 0):
        raise ValueError("starting points must lie in the upper half-plane")
    if not np.all(model.contains(z, 1e-12)):
        raise ValueError("starting points must lie in the fundamental polygon")
    if h <= 0:
        raise ValueError("step size must be positive")
    n_steps = int(round(T / h))
    every = max(1, int(round((sample_dt or max(h, T / 200)) / h)))
    sample_steps = np.arange(every, n_steps + 1, every)
    pos = np.empty((n_paths, len(sample_steps)), dtype=complex)
    ev = {"p": [], "s": [], "k": [], "a": [], "n": []}

    def record(paths, step, kind, args, powers):
        ev["p"].append(np.asarray(paths, dtype=np.int64))
        ev["s"].append(np.full(len(paths), step, dtype=np.int64))
        ev["k"].append(np.full(len(paths), kind, dtype=np.int8))
        ev["a"].append(np.asarray(args, dtype=np.int64))
        ev["n"].append(np.asarray(powers, dtype=np.int64))

    rejected = 0
    j = 0
    for step in range(1, n_steps + 1):
        z, r = bm_step(z, h, rng, scheme)
        rejected += r
        out = np.nonzero(~model.contains(z))[0]
        if len(out):
            zo, vert, pw = _cusp_shift(model, z[out])
            hit = vert >= 0
            if hit.any():
                record(out[hit], step, 1, vert[hit], pw[hit])
            zr, sides, todo = greedy_reduce(model, zo)
            if len(todo):
                zw, words = reduce_points(model, zr[todo])
                zr[todo] = zw
                for t_, w in zip(todo.tolist(), words):
                    sides[t_].extend(w)
            z[out] = zr
            lens = np.array([len(x) for x in sides])
            if lens.sum():
                flat = [x for lst in sides for x in lst]
                record(np.repeat(out, lens), step, 0, flat, np.ones(len(flat)))
        if j < len(sample_steps) and step == sample_steps[j]:
            pos[:, j] = z
            j += 1
    cat = {key: (np.concatenate(v) if v else np.zeros(0, dtype=np.int64)) for key, v in ev.items()}
    # events are appended in step order; a stable sort by path keeps that order
    order = np.argsort(cat["p"], kind="stable")
    return BrownianPath(
        h,
        sample_steps * h,
        pos,
        sample_steps,
        cat["p"][order],
        cat["s"][order],
        cat["k"][order],
        cat["a"][order],
        cat["n"][order],
        rejected,
        n_steps,
    )


def replay_cocycles(path: BrownianPath, model, side_maps) -> tuple[np.ndarray, np.ndarray]:
    """Cocycle rho(word)^-1 at every sample time (renormalised, with log ledger)."""
    n, m = path.positions.shape
    side_maps = np.asarray(side_maps, dtype=complex)
    cusps = _cusp_data(model)
    Rv = []
    for c in cusps:
        R = np.eye(2, dtype=complex)
        for s_ in c["pattern"]:
            R = side_maps[s_] @ R
        Rv.append(R)
    Rv = np.stack(Rv)
    Rv_inv = adjugate(Rv)
    Q = np.tile(np.eye(2, dtype=complex), (n, 1, 1))
    L = np.zeros(n)
    outQ = np.empty((n, m, 2, 2), dtype=complex)
    outL = np.empty((n, m))
    counts = np.bincount(path.event_path, minlength=n)
    start = np.concatenate([[0], np.cumsum(counts)[:-1]])
    ptr = np.zeros(n, dtype=np.int64)
    for j, cut in enumerate(path.sample_steps):
        while True:
            idx = np.nonzero(ptr < counts)[0]
            if not len(idx):
                break
            e = start[idx] + ptr[idx]
            go = path.event_step[e] <= cut
            if not go.any():
                break
            idx, e = idx[go], e[go]
            fac = np.empty((len(e), 2, 2), dtype=complex)
            fl = np.zeros(len(e))
            side = path.event_kind[e] == 0
            fac[side] = side_maps[path.event_arg[e[side]]]
            cz = ~side
            if cz.any():
                pw = path.event_power[e[cz]]
                v = path.event_arg[e[cz]]
                base = np.where((pw > 0)[:, None, None], Rv[v], Rv_inv[v])
                fac[cz], fl[cz] = _power_ledger(base, np.abs(pw))
            Qn = fac @ Q[idx]
            big = np.abs(Qn).max(axis=(1, 2))
            Q[idx] = Qn / big[:, None, None]
            L[idx] += np.log(big) + fl
            ptr[idx] += 1
        outQ[:, j] = Q
        outL[:, j] = L
    return outQ, outL


def developed_brownian(rep, model, section, path: BrownianPath) -> np.ndarray:
    """x_t = rho(word_t) sigma0(reduced position), as pairs (n, m, 2)."""
    Q, _ = replay_cocycles(path, model, rep.side_maps(model))
    return apply_pairs(adjugate(Q), section.evaluate(path.positions, model))


@dataclass
class CesaroResult:
    e: np.ndarray  # (n, 2) pairs
    concentration: np.ndarray  # (n,)
    threshold: float = 0.9

    @property
    def valid(self) -> np.ndarray:
        return self.concentration > self.threshold


def cesaro_limit(points, window, radius=0.05, bins=1024, threshold=0.9) -> CesaroResult:
    """Mode of the time-averaged occupation measure and the mass near it over the last window.

    points: (m, 2) or (n, m, 2) pairs at equally spaced times; window counts samples.
    """
    pts = np.asarray(points)
    single = pts.ndim == 2
    if single:
        pts = pts[None]
    n, m, _ = pts.shape
    if m < 10 * window:
        raise ValueError("path must be at least ten windows long")
    xyz = to_xyz(pts)
    lat = fibonacci_lattice(bins)
    e = np.empty((n, 3))
    conc = np.empty(n)
    chunk = max(1, 4_000_000 // (bins + m))
    for a in range(0, n, chunk):
        b = min(n, a + chunk)
        blk = xyz[a:b]
        idx = assign_bins(blk.reshape(-1, 3), bins).reshape(b - a, m)
        flat = idx + bins * np.arange(b - a)[:, None]
        hist = np.bincount(flat.ravel(), minlength=(b - a) * bins).reshape(b - a, bins)
        mode = lat[np.argmax(hist, axis=1)]
        near = 0.5 * np.linalg.norm(blk - mode[:, None], axis=-1) <= radius
        mean = np.where(near[..., None], blk, 0.0).sum(axis=1)
        nrm = np.linalg.norm(mean, axis=-1, keepdims=True)
        ee = np.where(nrm > 0, mean / np.where(nrm > 0, nrm, 1), mode)
        e[a:b] = ee
        tail = blk[:, -window:]
        conc[a:b] = np.mean(0.5 * np.linalg.norm(tail - ee[:, None], axis=-1) <= radius, axis=1)
    res = CesaroResult(from_xyz(e), conc, threshold)
    if single:
        return CesaroResult(res.e[0], res.concentration[:1], threshold)
    return res


@dataclass
class EDistribution:
    measure: EmpiricalSphereMeasure
    invalid_fraction: float
    e: np.ndarray
    concentration: np.ndarray


def e_distribution(
    rep, model, section, z0, n_paths, T, h, rng, bins=256, sample_dt=0.5, window_frac=0.1, batch=5000
) -> EDistribution:
    """Law of the Cesaro limit e(omega) over Brownian paths from z0."""
    es, cs = [], []
    done = 0
    while done < n_paths:
        k = min(batch, n_paths - done)
        path = simulate_bm(model, z0, T, h, rng, k, sample_dt)
        x = developed_brownian(rep, model, section, path)
        window = max(1, int(window_frac * x.shape[1]))
        res = cesaro_limit(x, window)
        es.append(res.e)
        cs.append(res.concentration)
        done += k
    e = np.concatenate(es)
    c = np.concatenate(cs)
    valid = c > 0.9
    m = EmpiricalSphereMeasure.from_pairs(e[valid], bins, label="brownian_cesaro")
    return EDistribution(m, float(1 - valid.mean()), e, c)


# ---------------------------------------------------------------------------
# exit law in the half-plane


@dataclass
class ExitLaw:
    exit_x: np.ndarray
    ks: float
    ks_pvalue: float
    rejections: int
    steps: int


def exit_law(z0, eps, h, rng, n, scheme="log", max_steps=10**6) -> ExitLaw:
    """Exit points on R of paths from z0 stopped at Im = eps, compared with the Poisson law."""
    z0 = complex(z0)
    z = np.full(n, z0)
    alive = np.ones(n, dtype=bool)
    rejected = 0
    steps = 0
    while alive.any() and steps < max_steps:
        idx = np.nonzero(alive)[0]
        zn, r = bm_step(z[idx], h, rng, scheme)
        rejected += r
        z[idx] = zn
        alive[idx] = zn.imag > eps
        steps += 1
    x = z.real
    ks = stats.kstest((x - z0.real) / z0.imag, "cauchy")
    return ExitLaw(x, float(ks.statistic), float(ks.pvalue), rejected, steps)


def ks_bootstrap_sigma(exit_x, z0=1j, n_boot=200, rng=None) -> float:
    """Bootstrap standard deviation of the KS statistic against the Poisson law at z0."""
    z0 = complex(z0)
    rng = rng or np.random.default_rng(0)
    u = np.sort(stats.cauchy.cdf((np.asarray(exit_x) - z0.real) / z0.imag))
    n = len(u)
    ks = np.empty(n_boot)
    hi, lo = np.arange(1, n + 1) / n, np.arange(n) / n
    for b in range(n_boot):
        v = np.sort(u[rng.integers(0, n, n)])
        ks[b] = max((hi - v).max(), (v - lo).max())
    return float(ks.std(ddof=1))


@dataclass
class HalvingCheck:
    ks: tuple
    sigma: tuple
    ok: bool


def exit_law_halving(z0, eps, h, rng, n, scheme="log", n_boot=200) -> HalvingCheck:
    """KS statistic at steps h and h/2; stable when they differ by at most 2 bootstrap sigma."""
    laws = [exit_law(z0, eps, hh, rng, n, scheme) for hh in (h, h / 2)]
    sig = [ks_bootstrap_sigma(law.exit_x, z0, n_boot, rng) for law in laws]
    ks = tuple(law.ks for law in laws)
    return HalvingCheck(ks, tuple(sig), abs(ks[0] - ks[1]) <= 2 * math.hypot(*sig))


def disc_angle_uniformity(exit_x, z0=1j, n_bins=20) -> float:
    """Chi-square p-value for uniformity of the exit point seen in the disc model at z0."""
    z0 = complex(z0)
    w = (exit_x - z0) / (exit_x - np.conj(z0))
    ang = np.angle(w)
    counts, _ = np.histogram(ang, bins=n_bins, range=(-np.pi, np.pi))
    return float(stats.chisquare(counts).pvalue)


def mean_distance(z0, T, h, rng, n, scheme="log"):
    """E dist_h(z0, omega_T) and its standard error (plain half-plane paths)."""
    z = np.full(n, complex(z0))
    for _ in range(int(round(T / h))):
        z, _ = bm_step(z, h, rng, scheme)
    d = dist_h_array(np.full(n, complex(z0)), z)
    return float(d.mean()), float(d.std(ddof=1) / math.sqrt(n))
