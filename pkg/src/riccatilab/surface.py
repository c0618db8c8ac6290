"""Finite-type hyperbolic surfaces H/G given by an ideal fundamental polygon.

A polygon side k runs from vertex k to vertex k+1 (counterclockwise, interior
on the left). Each side is stored as a real symmetric matrix H_k with
h_k(z) = (z,1)^* H_k (z,1) / |.|  > 0 on the interior side. The side pairing of
side k is a group element g_k with g_k P the tile across side k; g_k maps the
partner side onto side k.

Geodesic tracking is exact: in the frame F of the current vector, side k is
crossed at u = log(-gamma/alpha) / 2 where (alpha, gamma) is the diagonal of
F^T H_k F, and the exit side is the unique one with alpha < 0 (its half-plane
misses the forward endpoint). A crossing replaces F by g_k^{-1} F D_u and the
word w by w g_k, so the lift of the vector stays in w P.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .hyperbolic import (
    FLIP,
    affine_frame,
    dist_h_array,
    BoundaryPoint,
    HPoint,
    Horocycle,
    RealMoebius,
    UnitTangent,
    frame,
    frames_from_point_angle,
    frames_point,
    geodesic_matrix,
    horocycle_through,
    mobius,
    normalize_det,
    stable_matrix,
    unit_tangent_from_frame,
)


class ReductionError(RuntimeError):
    def __init__(self, message, partial_word=None):
        super().__init__(message)
        self.partial_word = partial_word


# ---------------------------------------------------------------------------
# words in the free group


@dataclass(frozen=True)
class GroupWord:
    letters: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "letters", _free_reduce(tuple((int(g), int(e)) for g, e in self.letters)))

    def __mul__(self, other: "GroupWord") -> "GroupWord":
        return GroupWord(self.letters + other.letters)

    def inverse(self) -> "GroupWord":
        return GroupWord(tuple((g, -e) for g, e in reversed(self.letters)))

    def __len__(self):
        return len(self.letters)

    def __iter__(self):
        return iter(self.letters)

    def format(self, labels=None) -> str:
        if not self.letters:
            return "e"
        labels = labels or [f"g{i}" for i in range(1 + max(g for g, _ in self.letters))]
        return " ".join(labels[g] if e == 1 else f"{labels[g]}^-1" for g, e in self.letters)

    @classmethod
    def parse(cls, text: str, labels) -> "GroupWord":
        out = []
        for tok in text.split():
            if tok == "e":
                continue
            inv = tok.endswith("^-1")
            out.append((labels.index(tok[:-3] if inv else tok), -1 if inv else 1))
        return cls(tuple(out))


def _free_reduce(letters):
    stack = []
    for g, e in letters:
        if e not in (1, -1):
            raise ValueError("exponents must be +-1")
        if stack and stack[-1][0] == g and stack[-1][1] == -e:
            stack.pop()
        else:
            stack.append((g, e))
    return tuple(stack)


def reduced_words(n_generators: int, max_length: int):
    """All reduced words up to max_length, shortlex order."""
    letters = [(g, e) for g in range(n_generators) for e in (1, -1)]
    out = [GroupWord()]
    frontier = [()]
    for _ in range(max_length):
        nxt = []
        for w in frontier:
            for l in letters:
                if w and w[-1][0] == l[0] and w[-1][1] == -l[1]:
                    continue
                nxt.append(w + (l,))
        out.extend(GroupWord(w) for w in nxt)
        frontier = nxt
    return out


# ---------------------------------------------------------------------------
# polygon geometry


def side_form(a: BoundaryPoint, b: BoundaryPoint) -> np.ndarray:
    """Symmetric matrix of the geodesic from a to b, positive on its left."""
    a1, a2 = a.a, a.b
    b1, b2 = b.a, b.b
    sgn = math.copysign(1.0, b1 * a2 - a1 * b2)
    alpha, beta, gamma = a2 * b2, -(a1 * b2 + a2 * b1), a1 * b1
    H = sgn * np.array([[alpha, beta / 2], [beta / 2, gamma]])
    return H / np.abs(H).max()


def side_values(forms, z):
    """h_k(z) for all sides: array (..., S), scaled by 1/(1+|z|^2)."""
    z = np.asarray(z, dtype=complex)
    x = z.real[..., None]
    r2 = (np.abs(z) ** 2)[..., None]
    a = forms[:, 0, 0]
    b = 2 * forms[:, 0, 1]
    c = forms[:, 1, 1]
    return (a * r2 + b * x + c) / (1 + r2)


def vertex_chart(v: BoundaryPoint) -> np.ndarray:
    """A real det-1 matrix sending v to infinity."""
    if v.is_infinite():
        return np.eye(2)
    x = v.value
    return np.array([[0.0, -1.0], [1.0, -x]])


@dataclass(frozen=True)
class Cusp:
    vertex: BoundaryPoint
    word: GroupWord
    horoball_height: float


@dataclass(frozen=True, eq=False)
class SurfaceModel:
    """Generators, ideal polygon (vertex list) and side pairings.

    pairings[k] = (generator index, exponent, partner side). cusp_heights maps
    a representative vertex index of each vertex cycle to the height of its
    horoball there (Im-level for inf, Euclidean diameter otherwise).
    """

    name: str
    generators: tuple
    labels: tuple
    vertices: tuple
    pairings: tuple
    cusp_heights: tuple  # ((vertex index, height), ...)
    center: HPoint = field(default_factory=lambda: HPoint(0.0, 1.0))

    # --- derived data --------------------------------------------------------

    @property
    def n_sides(self) -> int:
        return len(self.vertices)

    @cached_property
    def forms(self) -> np.ndarray:
        n = self.n_sides
        return np.stack([side_form(self.vertices[k], self.vertices[(k + 1) % n]) for k in range(n)])

    def side_element(self, k: int) -> RealMoebius:
        g, e = self.pairings[k][:2]
        m = self.generators[g]
        return m if e == 1 else m.inverse()

    @cached_property
    def side_matrices(self) -> np.ndarray:
        return np.stack([self.side_element(k).matrix for k in range(self.n_sides)])

    @cached_property
    def side_inverses(self) -> np.ndarray:
        return np.stack([self.side_element(k).inverse().matrix for k in range(self.n_sides)])

    @cached_property
    def side_letters(self) -> tuple:
        return tuple((p[0], p[1]) for p in self.pairings)

    def evaluate(self, word: GroupWord) -> RealMoebius:
        m = np.eye(2)
        for g, e in word:
            mg = self.generators[g]
            m = m @ (mg.matrix if e == 1 else mg.inverse().matrix)
        return RealMoebius.from_matrix(m)

    def word_from_sides(self, sides) -> GroupWord:
        return GroupWord(tuple(self.side_letters[k] for k in sides))

    def format_word(self, w: GroupWord) -> str:
        return w.format(list(self.labels))

    @cached_property
    def vertex_cycles(self):
        """Cycles of vertices under the pairings, with the element carrying each back.

        Returns a list of cycles; each cycle is a list of (vertex index,
        element E) with E mapping that vertex to the cycle's first vertex,
        together with the peripheral word.
        """
        n = self.n_sides
        seen = set()
        cycles = []
        for k0 in range(n):
            if k0 in seen:
                continue
            members = [(k0, GroupWord())]
            seen.add(k0)
            elem = GroupWord()
            m, s = k0, k0
            for _ in range(4 * n + 4):
                elem = elem * GroupWord((self.side_letters[s],))
                ginv = self.side_inverses[s]
                target = _apply_boundary(ginv, self.vertices[m])
                m2 = next(j for j in range(n) if self.vertices[j].close_to(target, 1e-9))
                partner = self.pairings[s][2]
                s = m2 if partner == (m2 - 1) % n else (m2 - 1) % n
                m = m2
                if (m, s) == (k0, k0):
                    break
                if m not in seen:
                    seen.add(m)
                    members.append((m, elem))
            else:
                raise ValueError("vertex cycle did not close")
            cycles.append({"members": members, "word": elem})
        return cycles

    @cached_property
    def cusps(self) -> tuple:
        heights = dict(self.cusp_heights)
        out = []
        for cyc in self.vertex_cycles:
            idx = [m for m, _ in cyc["members"]]
            rep = next((m for m in idx if m in heights), None)
            if rep is None:
                raise ValueError(f"no horoball height for the cusp through vertex {idx[0]}")
            out.append(Cusp(self.vertices[rep], cyc["word"], float(heights[rep])))
        return tuple(out)

    @cached_property
    def vertex_horoballs(self) -> tuple:
        """Horocycle at every polygon vertex, transported along the vertex cycles."""
        heights = dict(self.cusp_heights)
        result = [None] * self.n_sides
        for cyc in self.vertex_cycles:
            members = cyc["members"]
            rep_i = next(i for i, (m, _) in enumerate(members) if m in heights)
            rep_m, rep_e = members[rep_i]
            base = Horocycle(self.vertices[rep_m], float(heights[rep_m]))
            rep_mat = self.evaluate(rep_e).matrix  # vertex rep_m -> first vertex
            for m, e in members:
                # element taking vertex m to vertex rep_m
                mat = np.linalg.inv(rep_mat) @ self.evaluate(e).matrix
                result[m] = _transport_horocycle(base, np.linalg.inv(mat))
        return tuple(result)

    def rotation_pattern(self, side: int, vertex: int) -> list:
        """Sides crossed, in order, when turning around `vertex` starting across `side`."""
        n = self.n_sides
        if vertex not in (side, (side + 1) % n):
            raise ValueError("vertex is not an endpoint of the side")
        seq = []
        m, s = vertex, side
        for _ in range(4 * n + 4):
            seq.append(s)
            target = _apply_boundary(self.side_inverses[s], self.vertices[m])
            m2 = next(j for j in range(n) if self.vertices[j].close_to(target, 1e-9))
            partner = self.pairings[s][2]
            s = m2 if partner == (m2 - 1) % n else (m2 - 1) % n
            m = m2
            if (m, s) == (vertex, side):
                return seq
        raise ValueError("rotation pattern did not close")

    @cached_property
    def cusp_patterns(self):
        """Per side k and endpoint j in {0, 1}: (pattern, N) with N = U - I,
        U the unipotent representative of the inverse of the pattern's element."""
        n = self.n_sides
        pats, nil = [], np.zeros((n, 2, 2, 2))
        for k in range(n):
            row = []
            for j, v in enumerate((k, (k + 1) % n)):
                seq = self.rotation_pattern(k, v)
                E = np.eye(2)
                for s in seq:
                    E = E @ self.side_matrices[s]
                U = np.linalg.inv(E)
                U = U * np.sign(np.trace(U))
                nil[k, j] = U - np.eye(2)
                row.append(seq)
            pats.append(row)
        return pats, nil

    @cached_property
    def vertex_charts(self) -> np.ndarray:
        return np.stack([vertex_chart(v) for v in self.vertices])

    @cached_property
    def chart_levels(self) -> np.ndarray:
        """Horoball at vertex k becomes Im > level_k in the chart of vertex k."""
        out = []
        for k, h in enumerate(self.vertex_horoballs):
            C = self.vertex_charts[k]
            if h.center.is_infinite():
                top = complex(0.0, h.height)
            else:
                top = complex(h.center.value, h.height)
            out.append(mobius(C, top).imag)
        return np.array(out)

    @property
    def area(self) -> float:
        return (self.n_sides - 2) * math.pi

    @property
    def euler_characteristic(self) -> int:
        return -(self.n_sides - 2) // 2

    @property
    def genus(self) -> int:
        k = len(self.vertex_cycles)
        return (2 - k - self.euler_characteristic) // 2

    # --- membership ----------------------------------------------------------

    def contains(self, z, tol=1e-12):
        return np.all(side_values(self.forms, z) >= -tol, axis=-1)

    def in_horoballs(self, z):
        """Index of the vertex horoball containing z, or -1."""
        z = np.asarray(z, dtype=complex)
        out = np.full(z.shape, -1)
        for k in range(self.n_sides):
            w = mobius(self.vertex_charts[k], z)
            out = np.where((out < 0) & (w.imag > self.chart_levels[k]), k, out)
        return out

    # --- serialisation -------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "generators": [
                {"label": l, "matrix": g.matrix.tolist()} for l, g in zip(self.labels, self.generators)
            ],
            "vertices": [[v.a, v.b] for v in self.vertices],
            "pairings": [
                {"side": k, "generator": g, "exponent": e, "partner": p}
                for k, (g, e, p) in enumerate(self.pairings)
            ],
            "cusps": [
                {
                    "vertex": [c.vertex.a, c.vertex.b],
                    "word": [list(l) for l in c.word.letters],
                    "horoball_height": c.horoball_height,
                }
                for c in self.cusps
            ],
            "center": [self.center.re, self.center.im],
        }

    @classmethod
    def from_json(cls, doc) -> "SurfaceModel":
        if isinstance(doc, str):
            doc = json.loads(doc)
        vertices = tuple(BoundaryPoint(*v) for v in doc["vertices"])
        pairings = [None] * len(vertices)
        for p in doc["pairings"]:
            pairings[p["side"]] = (int(p["generator"]), int(p["exponent"]), int(p["partner"]))
        heights = []
        for c in doc["cusps"]:
            v = BoundaryPoint(*c["vertex"])
            idx = next(j for j, w in enumerate(vertices) if w.close_to(v, 1e-12))
            heights.append((idx, float(c["horoball_height"])))
        model = cls(
            name=doc.get("name", "custom"),
            generators=tuple(RealMoebius.from_matrix(g["matrix"]) for g in doc["generators"]),
            labels=tuple(g["label"] for g in doc["generators"]),
            vertices=vertices,
            pairings=tuple(pairings),
            cusp_heights=tuple(heights),
            center=HPoint(*doc.get("center", [0.0, 1.0])),
        )
        return model


def _apply_boundary(m, p: BoundaryPoint) -> BoundaryPoint:
    w = np.asarray(m) @ np.array([p.a, p.b])
    return BoundaryPoint(float(w[0]), float(w[1]))


def _transport_horocycle(h: Horocycle, m) -> Horocycle:
    if h.center.is_infinite():
        top = complex(0.0, h.height)
    else:
        top = complex(h.center.value, h.height)
    z = mobius(m, top)
    return horocycle_through(HPoint.from_complex(z), _apply_boundary(m, h.center))


# ---------------------------------------------------------------------------
# built-in models


def thrice_punctured_sphere() -> SurfaceModel:
    """Principal congruence subgroup of level 2.

    A = [[1,2],[0,1]] and B = [[1,0],[-2,1]]; with this B the three cusps
    at inf, 0 and 1 have peripheral elements A, B and AB (trace -2).
    Polygon: ideal quadrilateral inf, -1, 0, 1 (the Ford domain).
    """
    A = RealMoebius(1, 2, 0, 1)
    B = RealMoebius(1, 0, -2, 1)
    vertices = tuple(BoundaryPoint.from_value(x) for x in (math.inf, -1.0, 0.0, 1.0))
    # sides: 0: Re=-1, 1: arc(-1,0), 2: arc(0,1), 3: Re=1
    pairings = ((0, -1, 3), (1, 1, 2), (1, -1, 1), (0, 1, 0))
    return SurfaceModel(
        name="thrice_punctured_sphere",
        generators=(A, B),
        labels=("A", "B"),
        vertices=vertices,
        pairings=pairings,
        cusp_heights=((0, 1.0), (2, 1.0), (3, 1.0)),
    )


def once_punctured_torus() -> SurfaceModel:
    """Commutator subgroup of the modular group on the same quadrilateral.

    a = [[1,1],[1,2]] carries side Re=-1 onto the arc (0,1); b = [[2,1],[1,1]]
    carries the arc (-1,0) onto Re=1. One cusp, peripheral word a commutator.
    """
    a = RealMoebius(1, 1, 1, 2)
    b = RealMoebius(2, 1, 1, 1)
    vertices = tuple(BoundaryPoint.from_value(x) for x in (math.inf, -1.0, 0.0, 1.0))
    pairings = ((0, -1, 2), (1, -1, 3), (0, 1, 0), (1, 1, 1))
    return SurfaceModel(
        name="once_punctured_torus",
        generators=(a, b),
        labels=("a", "b"),
        vertices=vertices,
        pairings=pairings,
        cusp_heights=((0, 2.0),),
    )


BUILTIN_MODELS = {
    "thrice_punctured_sphere": thrice_punctured_sphere,
    "once_punctured_torus": once_punctured_torus,
}


def load_model(spec) -> SurfaceModel:
    if isinstance(spec, SurfaceModel):
        return spec
    if isinstance(spec, dict):
        return SurfaceModel.from_json(spec)
    if spec in BUILTIN_MODELS:
        return BUILTIN_MODELS[spec]()
    with open(spec) as fh:
        return SurfaceModel.from_json(json.load(fh))


# ---------------------------------------------------------------------------
# exact geodesic tracking


@dataclass
class Track:
    frames: np.ndarray
    cocycle: np.ndarray | None
    ledger: np.ndarray | None
    crossings: np.ndarray
    flags: np.ndarray
    words: list | None = None
    checkpoint_frames: np.ndarray | None = None
    checkpoint_cocycle: np.ndarray | None = None
    checkpoint_ledger: np.ndarray | None = None
    checkpoint_crossings: np.ndarray | None = None
    lost: np.ndarray | None = None  # orbits stopped beyond the resolvable cusp depth


def _quad(col, forms):
    # col: (n, 2); forms (S, 2, 2) -> (n, S)
    return np.einsum("ni,kij,nj->nk", col, forms, col)


def _renorm_cocycle(Q, L):
    big = np.abs(Q).reshape(len(Q), -1).max(axis=1)
    return Q / big[:, None, None], L + np.log(big)


def _last_negative(A, B, C, cap=1e12):
    """Largest integer j >= 0 with A j^2 + B j + C < 0, for C < 0 (capped)."""
    with np.errstate(over="ignore", invalid="ignore"):
        disc = B * B - 4 * A * C
    sq = np.sqrt(np.maximum(disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        r_pos = -2 * C / (B + sq)
        r_neg = (-B + sq) / (2 * A)
    root = np.where(B >= 0, np.where(disc >= 0, r_pos, np.inf), np.where(A > 0, r_neg, np.inf))
    root = np.where(np.isfinite(root) & (root > 0), root, np.where(np.isfinite(root), 0.0, cap))
    return np.minimum(np.ceil(root) - 1, cap).astype(np.int64)


def _power_ledger(R, n):
    """R^n for stacks of matrices with integer exponents n >= 0, renormalised."""
    m = len(R)
    P = np.tile(np.eye(2, dtype=complex), (m, 1, 1))
    LP = np.zeros(m)
    base = np.array(R, dtype=complex)
    Lb = np.zeros(m)
    nn = np.array(n, dtype=np.int64)
    while np.any(nn > 0):
        odd = (nn & 1).astype(bool)
        if odd.any():
            P[odd], LP[odd] = _renorm_cocycle(base[odd] @ P[odd], LP[odd] + Lb[odd])
        base, Lb = _renorm_cocycle(base @ base, 2 * Lb)
        nn >>= 1
    return P, LP


def _qform(u, H, w):
    return np.einsum("ni,nij,nj->n", u, H, w)


def flow_frames(
    model: SurfaceModel,
    frames,
    duration,
    side_maps=None,
    cocycle=None,
    ledger=None,
    checkpoints=None,
    record_words=False,
    max_crossings=10_000_000,
    tie_tol=1e-12,
    accelerate=True,
    max_frame_entry=1e5,
    on_deep="raise",
) -> Track:
    """Run the geodesic flow for time `duration` >= 0 on frames based in P.

    side_maps (S, 2, 2) are left-multiplied into the cocycle at each crossing
    of side k (the cocycle convention A <- side_maps[k] A). Checkpoint times
    (sorted, common to all orbits) record the reduced frame and cocycle.

    Deep in a cusp the crossings repeat the rotation pattern of the vertex,
    whose element E is parabolic; the number n of full periods still ahead
    solves a quadratic in n (E^-n = I + n N), so such runs are jumped in one
    step with identical words and cocycles.

    An orbit whose frame entries exceed max_frame_entry sits at chart height
    ~ max_frame_entry^2 in a cusp (or heads straight into one), where double
    precision cannot resolve the crossings; on_deep="raise" raises
    ReductionError, on_deep="stop" freezes it and flags it in Track.lost.
    """
    if on_deep not in ("raise", "stop"):
        raise ValueError("on_deep must be 'raise' or 'stop'")
    F = normalize_det(np.array(frames, dtype=float).reshape(-1, 2, 2))
    n = len(F)
    dur = np.broadcast_to(np.asarray(duration, dtype=float), (n,)).copy()
    if np.any(dur < 0):
        raise ValueError("flow_frames runs forward; reverse the frame for negative times")
    track_cocycle = side_maps is not None
    if track_cocycle:
        side_maps = np.asarray(side_maps, dtype=complex)
        Q = np.tile(np.eye(2, dtype=complex), (n, 1, 1)) if cocycle is None else np.array(cocycle, dtype=complex)
        L = np.zeros(n) if ledger is None else np.array(ledger, dtype=float)
    else:
        Q = L = None
    cps = np.asarray([] if checkpoints is None else checkpoints, dtype=float)
    m = len(cps)
    ci = np.zeros(n, dtype=int)
    if m:
        cpF = np.zeros((n, m, 2, 2))
        cpN = np.zeros((n, m), dtype=int)
        cpQ = np.zeros((n, m, 2, 2), dtype=complex) if track_cocycle else None
        cpL = np.zeros((n, m)) if track_cocycle else None
    pos = np.zeros(n)
    crossings = np.zeros(n, dtype=int)
    flags = np.zeros(n, dtype=int)
    words = [[] for _ in range(n)] if record_words else None
    forms = model.forms
    ginv = model.side_inverses
    patterns, nil = model.cusp_patterns
    pat_len = np.array([[len(p) for p in row] for row in patterns])
    if track_cocycle and accelerate:
        pat_maps = np.zeros((len(patterns), 2, 2, 2), dtype=complex)
        for kk_, row in enumerate(patterns):
            for jj_, seq in enumerate(row):
                R = np.eye(2, dtype=complex)
                for s_ in seq:
                    R = side_maps[s_] @ R
                pat_maps[kk_, jj_] = R

    def next_cp(idx):
        c = ci[idx]
        out = np.full(len(idx), np.inf)
        ok = c < m
        out[ok] = cps[c[ok]]
        return out

    lost = np.zeros(n, dtype=bool)
    active = np.arange(n)
    # checkpoints at time 0 and orbits of zero duration
    while len(active):
        deep = np.abs(F[active]).max(axis=(1, 2)) > max_frame_entry
        if deep.any():
            if on_deep == "raise":
                raise ReductionError(f"{int(deep.sum())} orbits beyond the resolvable cusp depth")
            lost[active[deep]] = True
            active = active[~deep]
            if not len(active):
                break
        Fa = F[active]
        alpha = _quad(Fa[:, :, 0], forms)
        gamma = _quad(Fa[:, :, 1], forms)
        k = np.argmin(alpha, axis=1)
        r = np.arange(len(active))
        a = alpha[r, k]
        g = gamma[r, k]
        srt = np.sort(alpha, axis=1)
        tie = (srt[:, 1] < tie_tol) | (a > -tie_tol)
        flags[active[tie]] += 1
        with np.errstate(divide="ignore", invalid="ignore"):
            u = 0.5 * np.log(-g / a)
        u = np.where((g <= 0) | ~np.isfinite(u), 0.0, np.maximum(u, 0.0))
        u = np.where(a >= 0, np.inf, u)  # forward endpoint at a vertex: never exits
        t_exit = pos[active] + u
        stop = np.minimum(dur[active], next_cp(active))
        crossing = t_exit < stop
        # advance to the stop time
        adv = active[~crossing]
        if len(adv):
            st = stop[~crossing]
            F[adv] = F[adv] @ geodesic_matrix(st - pos[adv])
            pos[adv] = st
            hit = (ci[adv] < m) & (next_cp(adv) <= st)
            h = adv[hit]
            if len(h):
                c = ci[h]
                cpF[h, c] = F[h]
                cpN[h, c] = crossings[h]
                if track_cocycle:
                    cpQ[h, c] = Q[h]
                    cpL[h, c] = L[h]
                ci[h] += 1
        crs = active[crossing]
        if len(crs) and accelerate:
            kk = k[crossing]
            Fc = F[crs]
            col, col2 = Fc[:, :, 0], Fc[:, :, 1]
            H = forms[kk]
            rel = np.minimum(stop[crossing] - pos[crs], 200.0)
            e2 = np.exp(2 * rel)
            best_n = np.zeros(len(crs), dtype=np.int64)
            best_j = np.zeros(len(crs), dtype=int)
            coef = []
            for j in (0, 1):
                N = nil[kk, j]
                d = np.einsum("nij,nj->ni", N, col)
                d2 = np.einsum("nij,nj->ni", N, col2)
                A, B, C = _qform(d, H, d), 2 * _qform(d, H, col), _qform(col, H, col)
                A2, B2, C2 = _qform(d2, H, d2), 2 * _qform(d2, H, col2), _qform(col2, H, col2)
                # copy j of side k must be ahead (alpha < 0), reached before the stop,
                # and have the current point on its interior side (h > 0)
                nj = np.minimum(_last_negative(A, B, C), _last_negative(A2 + e2 * A, B2 + e2 * B, C2 + e2 * C))
                inside = _last_negative(-(A + A2), -(B + B2), -(C + C2))
                nj = np.where(C + C2 > 0, np.minimum(nj, inside), 0)
                take = nj > best_n
                best_n = np.where(take, nj, best_n)
                best_j = np.where(take, j, best_j)
                coef.append((A, B, C, A2, B2, C2))
            jump = best_n >= 2
            if jump.any():
                J = crs[jump]
                nJ = best_n[jump]
                jJ = best_j[jump]
                kJ = kk[jump]
                sel = np.nonzero(jump)[0]
                co = [np.where(jJ == 0, c0[sel], c1[sel]) for c0, c1 in zip(coef[0], coef[1])]
                A, B, C, A2, B2, C2 = co
                nf = nJ.astype(float)
                al = A * nf * nf + B * nf + C
                ga = A2 * nf * nf + B2 * nf + C2
                tau = 0.5 * np.log(-ga / al)
                Un = np.eye(2) + nf[:, None, None] * nil[kJ, jJ]
                F[J] = normalize_det(Un @ F[J] @ geodesic_matrix(tau))
                pos[J] += tau
                crossings[J] += nJ * pat_len[kJ, jJ]
                if track_cocycle:
                    Pn, Ln = _power_ledger(pat_maps[kJ, jJ], nJ)
                    Qn, Ln2 = _renorm_cocycle(Pn @ Q[J], L[J] + Ln)
                    Q[J] = Qn
                    L[J] = Ln2
                if record_words:
                    for j_, k_, i_, n_ in zip(J.tolist(), kJ.tolist(), jJ.tolist(), nJ.tolist()):
                        words[j_].extend(patterns[k_][i_] * n_)
                crossing = crossing.copy()
                crossing[np.nonzero(crossing)[0][jump]] = False
                crs = active[crossing]
        if len(crs):
            kk = k[crossing]
            F[crs] = normalize_det(ginv[kk] @ F[crs] @ geodesic_matrix(u[crossing]))
            pos[crs] = t_exit[crossing]
            crossings[crs] += 1
            if track_cocycle:
                Qn, Ln = _renorm_cocycle(side_maps[kk] @ Q[crs], L[crs])
                Q[crs] = Qn
                L[crs] = Ln
            if record_words:
                for j, s in zip(crs.tolist(), kk.tolist()):
                    words[j].append(s)
            if crossings[crs].max() > max_crossings:
                bad = crs[np.argmax(crossings[crs])]
                raise ReductionError(
                    f"more than {max_crossings} side crossings",
                    model.word_from_sides(words[bad]) if record_words else None,
                )
        done = (pos[active] >= dur[active]) & ((ci[active] >= m) | (next_cp(active) > dur[active]))
        active = active[~done]
    out = Track(F, Q, L, crossings, flags, words, lost=lost)
    if m:
        out.checkpoint_frames = cpF
        out.checkpoint_crossings = cpN
        if track_cocycle:
            out.checkpoint_cocycle = cpQ
            out.checkpoint_ledger = cpL
    return out


def flow_frames_signed(model, frames, t, side_maps=None, **kw) -> Track:
    """Geodesic flow for a common signed time t (reverse, flow, reverse back)."""
    frames = np.asarray(frames, dtype=float).reshape(-1, 2, 2)
    if t >= 0:
        return flow_frames(model, frames, t, side_maps=side_maps, **kw)
    res = flow_frames(model, frames @ FLIP, -t, side_maps=side_maps, **kw)
    res.frames = res.frames @ FLIP.T
    if res.checkpoint_frames is not None:
        res.checkpoint_frames = res.checkpoint_frames @ FLIP.T
    return res


def _horo_roots(a, b, c, direction):
    """Smallest root tau of a t^2 + b t + c with sign(tau) = direction where h decreases."""
    out = np.full(a.shape, np.inf)
    disc = b * b - 4 * a * c
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        # numerically stable pair of roots
        qv = -0.5 * (b + np.copysign(sq, b))
        r1 = np.where(a != 0, qv / a, np.where(b != 0, -c / b, np.inf))
        r2 = np.where(qv != 0, c / qv, np.inf)
    for r in (r1, r2):
        deriv = 2 * a * r + b
        good = ok & np.isfinite(r) & (direction * r > 1e-13) & (direction * deriv < 0)
        out = np.where(good & (np.abs(r) < out), np.abs(r), out)
    return out


def flow_stable_horocycle(model, frames, t, side_maps=None, cocycle=None, ledger=None,
                          record_words=False, max_crossings=1_000_000) -> Track:
    """Move frames along the stable horocycle by signed arclength t, crossing sides exactly.

    The base point follows F(tau + i); side k is crossed where
    alpha (tau^2 + 1) + beta tau + gamma changes sign (F^T H_k F coefficients).
    """
    F = normalize_det(np.array(frames, dtype=float).reshape(-1, 2, 2))
    n = len(F)
    rem = np.broadcast_to(np.asarray(t, dtype=float), (n,)).copy()
    track_cocycle = side_maps is not None
    if track_cocycle:
        side_maps = np.asarray(side_maps, dtype=complex)
        Q = np.tile(np.eye(2, dtype=complex), (n, 1, 1)) if cocycle is None else np.array(cocycle, dtype=complex)
        L = np.zeros(n) if ledger is None else np.array(ledger, dtype=float)
    else:
        Q = L = None
    crossings = np.zeros(n, dtype=int)
    flags = np.zeros(n, dtype=int)
    words = [[] for _ in range(n)] if record_words else None
    forms = model.forms
    ginv = model.side_inverses
    active = np.nonzero(rem != 0)[0]
    while len(active):
        Fa = F[active]
        Hp = np.einsum("nji,kjl,nlm->nkim", Fa, forms, Fa)  # F^T H F
        a = Hp[..., 0, 0]
        b = 2 * Hp[..., 0, 1]
        c = Hp[..., 0, 0] + Hp[..., 1, 1]
        direction = np.sign(rem[active])[:, None]
        taus = _horo_roots(a, b, c, direction)
        k = np.argmin(taus, axis=1)
        r = np.arange(len(active))
        tau = taus[r, k]
        srt = np.sort(taus, axis=1)
        flags[active[np.isfinite(srt[:, 1]) & (srt[:, 1] - srt[:, 0] < 1e-12)]] += 1
        cross = tau < np.abs(rem[active])
        fin = active[~cross]
        F[fin] = F[fin] @ stable_matrix(rem[fin])
        rem[fin] = 0
        crs = active[cross]
        if len(crs):
            kk = k[cross]
            step = direction[cross, 0] * tau[cross]
            F[crs] = normalize_det(ginv[kk] @ F[crs] @ stable_matrix(step))
            rem[crs] -= step
            crossings[crs] += 1
            if track_cocycle:
                Qn, Ln = _renorm_cocycle(side_maps[kk] @ Q[crs], L[crs])
                Q[crs] = Qn
                L[crs] = Ln
            if record_words:
                for j, s in zip(crs.tolist(), kk.tolist()):
                    words[j].append(s)
            if crossings.max() > max_crossings:
                raise ReductionError(f"more than {max_crossings} horocycle crossings")
        active = crs
    return Track(F, Q, L, crossings, flags, words)


def flow_horocycle(model, frames, t, kind="stable", side_maps=None, **kw) -> Track:
    if kind == "stable":
        return flow_stable_horocycle(model, frames, t, side_maps=side_maps, **kw)
    if kind != "unstable":
        raise ValueError(f"kind must be 'stable' or 'unstable', not {kind!r}")
    # F [[1,0],[t,1]] = (F J) N_{-t} J^{-1}
    frames = np.asarray(frames, dtype=float).reshape(-1, 2, 2)
    res = flow_stable_horocycle(model, frames @ FLIP, -np.asarray(t, dtype=float), side_maps=side_maps, **kw)
    res.frames = res.frames @ FLIP.T
    return res


# ---------------------------------------------------------------------------
# public scalar operations


def _check_in_domain(model, F, tol=1e-9):
    z = frames_point(F)
    if not np.all(model.contains(z, tol)):
        raise ValueError("base point of the vector is not in the fundamental polygon")


def geodesic_track(model, v: UnitTangent, t: float, side_maps=None) -> Track:
    F = frame(v)[None]
    _check_in_domain(model, F)
    return flow_frames_signed(model, F, t, side_maps=side_maps, record_words=True)


def geodesic_word(model, v: UnitTangent, t: float) -> GroupWord:
    """Word w with the lifted point of g_t v in w P."""
    tr = geodesic_track(model, v, t)
    return model.word_from_sides(tr.words[0])


def horocycle_word(model, v: UnitTangent, t: float, kind="stable") -> GroupWord:
    F = frame(v)[None]
    _check_in_domain(model, F)
    tr = flow_horocycle(model, F, t, kind=kind, record_words=True)
    return model.word_from_sides(tr.words[0])


def frames_toward_points(c, z):
    """Frames at c whose geodesic passes through z (arrays of complex)."""
    c = np.broadcast_to(np.asarray(c, dtype=complex), np.shape(z))
    z = np.asarray(z, dtype=complex)
    # move c to i, read the direction in the disc chart
    w = (z - c.real) / c.imag
    zeta = (w - 1j) / (w + 1j)
    theta = np.angle(zeta) + np.pi / 2
    return affine_frame(c) @ frames_from_point_angle(np.full(z.shape, 1j), theta)


def reduce_points(model, z, max_iter=100_000):
    """Vectorised reduction: returns (z' in closure(P), side sequences as word matrices).

    Walks the geodesic segment from the model centre to z and records the
    exact side crossings; the tile of z is where the walk ends.
    Returns (z_reduced, words) where words is a list of side-index lists.
    """
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    c = model.center.z
    F = frames_toward_points(c, z)
    d = dist_h_array(np.full(z.shape, c), z)
    # points of the closed polygon stay put (a boundary point would otherwise
    # hop to the paired side depending on rounding in the walk)
    d = np.where(model.contains(z, 1e-12), 0.0, d)
    tr = flow_frames(model, F, d, record_words=True, max_crossings=max_iter)
    zr = np.empty_like(z)
    for j, sides in enumerate(tr.words):
        m = np.eye(2)
        for s in sides:
            m = model.side_inverses[s] @ m
        zr[j] = mobius(m, z[j])
    return zr, tr.words


def reduce_to_domain(model, z: HPoint, max_iter=100_000):
    try:
        zr, words = reduce_points(model, np.array([z.z]), max_iter=max_iter)
    except ReductionError as err:
        raise ReductionError(str(err), err.partial_word) from None
    return HPoint.from_complex(zr[0]), model.word_from_sides(words[0])


def greedy_reduce(model, z, max_iter=64):
    """Fast local reduction for points near P (Brownian steps).

    Repeatedly applies g_k^{-1} for the first violated side k. Returns
    (z', matrices W with z = W z', side lists, unresolved mask).
    """
    z = np.array(z, dtype=complex)
    n = len(z)
    sides = [[] for _ in range(n)]
    todo = np.nonzero(~model.contains(z))[0]
    for _ in range(max_iter):
        if not len(todo):
            break
        vals = side_values(model.forms, z[todo])
        k = np.argmax(vals < 0, axis=1)
        z[todo] = mobius(model.side_inverses[k], z[todo])
        for j, s in zip(todo.tolist(), k.tolist()):
            sides[j].append(s)
        todo = todo[~model.contains(z[todo])]
    return z, sides, todo


# ---------------------------------------------------------------------------
# Liouville sampling


def _compact_box(model: SurfaceModel, n_grid=4000):
    """Bounding box of P minus the vertex horoballs, from its boundary curves."""
    pts = []
    n = model.n_sides
    u = np.linspace(-30, 30, n_grid)
    for k in range(n):
        a, b = model.vertices[k], model.vertices[(k + 1) % n]
        Fk = _side_frame(a, b)
        zs = mobius(Fk, 1j * np.exp(u))
        zs = zs[np.isfinite(zs)]
        pts.append(zs[model.in_horoballs(zs) < 0])
    for k in range(n):
        C = model.vertex_charts[k]
        Ci = np.linalg.inv(C)
        lo, hi = sorted(_apply_boundary(C, model.vertices[j]).value for j in ((k - 1) % n, (k + 1) % n))
        xs = np.linspace(lo, hi, n_grid)
        arc = mobius(Ci, xs + 1j * model.chart_levels[k])
        pts.append(arc[np.isfinite(arc)])
    pts = np.concatenate(pts)
    pts = pts[model.contains(pts, 1e-9)]
    x0, x1 = pts.real.min(), pts.real.max()
    y0, y1 = pts.imag.min(), pts.imag.max()
    pad = 0.02 * (x1 - x0)
    return x0 - pad, x1 + pad, y0 * 0.98, y1 * 1.02


def _side_frame(a: BoundaryPoint, b: BoundaryPoint):
    """Real matrix sending 0 -> a and inf -> b."""
    M = np.array([[b.a, a.a], [b.b, a.b]], dtype=float)
    det = np.linalg.det(M)
    if det < 0:
        M[:, 1] *= -1
        det = -det
    return M / math.sqrt(det)


@dataclass(frozen=True)
class _LiouvilleLayout:
    box: tuple
    box_mass: float
    strips: tuple  # (vertex k, x_lo, x_hi, level)
    strip_masses: tuple

    @property
    def masses(self):
        return np.array((self.box_mass,) + self.strip_masses)


def liouville_layout(model: SurfaceModel) -> _LiouvilleLayout:
    box = _compact_box(model)
    x0, x1, y0, y1 = box
    box_mass = (x1 - x0) * (1 / y0 - 1 / y1)
    strips, masses = [], []
    n = model.n_sides
    for k in range(n):
        C = model.vertex_charts[k]
        lo, hi = sorted(_apply_boundary(C, model.vertices[j]).value for j in ((k - 1) % n, (k + 1) % n))
        lev = model.chart_levels[k]
        strips.append((k, lo, hi, lev))
        masses.append((hi - lo) / lev)
    return _LiouvilleLayout(box, box_mass, tuple(strips), tuple(masses))


def _propose(model, layout, n, rng):
    """Draw n proposals from 1/y^2 on the box union the cusp strips; flag acceptance."""
    masses = layout.masses
    comp = rng.choice(len(masses), size=n, p=masses / masses.sum())
    z = np.empty(n, dtype=complex)
    accept = np.ones(n, dtype=bool)
    sel = comp == 0
    m = int(sel.sum())
    x0, x1, y0, y1 = layout.box
    xs = rng.uniform(x0, x1, m)
    inv_y = 1 / y1 + rng.uniform(0, 1, m) * (1 / y0 - 1 / y1)
    zb = xs + 1j / inv_y
    z[sel] = zb
    accept[sel] = model.contains(zb, 0.0) & (model.in_horoballs(zb) < 0)
    for j, (k, lo, hi, lev) in enumerate(layout.strips):
        sel = comp == j + 1
        m = int(sel.sum())
        if not m:
            continue
        w = rng.uniform(lo, hi, m) + 1j * lev / (1.0 - rng.uniform(0, 1, m))
        z[sel] = mobius(np.linalg.inv(model.vertex_charts[k]), w)
    return z, accept


def sample_liouville_points(model, n, rng, batch=None):
    layout = liouville_layout(model)
    out = []
    got = tried = 0
    batch = batch or max(1024, 2 * n)
    while got < n:
        z, acc = _propose(model, layout, batch, rng)
        tried += batch
        out.append(z[acc])
        got += int(acc.sum())
        if tried >= 10_000 and got / tried < 1e-4:
            raise ValueError("Liouville rejection efficiency below 1e-4; check the model")
    return np.concatenate(out)[:n]


def sample_liouville_frames(model, n, rng):
    z = sample_liouville_points(model, n, rng)
    theta = rng.uniform(0, 2 * np.pi, n)
    return frames_from_point_angle(z, theta)


def sample_liouville(model, n, rng) -> list:
    return [unit_tangent_from_frame(F) for F in sample_liouville_frames(model, n, rng)]


def liouville_area_estimate(model, n, rng):
    """Monte Carlo hyperbolic area of P and its standard error."""
    layout = liouville_layout(model)
    z, acc = _propose(model, layout, n, rng)
    total = layout.masses.sum()
    p = acc.mean()
    return total * p, total * math.sqrt(p * (1 - p) / n)


# ---------------------------------------------------------------------------
# validation


def tiling_violations(model, n_points, rng, max_length=2):
    """Count sampled points of P whose images under distinct short words overlap."""
    words = reduced_words(len(model.generators), max_length)
    mats = np.stack([model.evaluate(w).matrix for w in words])
    z = sample_liouville_points(model, n_points, rng)
    # shrink slightly into the interior
    z = z[np.min(side_values(model.forms, z), axis=1) > 1e-9]
    bad = 0
    for i in range(len(words)):
        zi = mobius(mats[i], z)
        for j in range(len(words)):
            if i == j:
                continue
            back = mobius(np.linalg.inv(mats[j]), zi)
            bad += int(np.sum(np.min(side_values(model.forms, back), axis=1) > 1e-12))
    return bad, len(words)


def validate_model(model, rng=None, n_area=200_000, n_tiling=10_000) -> dict:
    rng = rng or np.random.default_rng(0)
    reasons = []
    n = model.n_sides
    # pairings involutive and geometric
    for k, (g, e, p) in enumerate(model.pairings):
        if model.pairings[p][2] != k or model.pairings[p][0] != g or model.pairings[p][1] != -e:
            reasons.append(f"pairing of side {k} is not involutive")
            continue
        gm = model.side_matrices[k]
        a, b = model.vertices[p], model.vertices[(p + 1) % n]
        ka, kb = model.vertices[k], model.vertices[(k + 1) % n]
        if not (_apply_boundary(gm, a).close_to(kb, 1e-9) and _apply_boundary(gm, b).close_to(ka, 1e-9)):
            reasons.append(f"side element {k} does not map side {p} onto side {k}")
        inner = mobius(gm, model.center.z)
        if model.contains(inner, -1e-12):
            reasons.append(f"side element {k} does not move P across side {k}")
    traces = []
    try:
        cusps = model.cusps
    except (StopIteration, ValueError) as exc:
        reasons.append(f"vertex cycles do not close under the pairings ({exc or 'no matching vertex'})")
        cusps = ()
    for cusp in cusps:
        m = model.evaluate(cusp.word)
        tr = m.trace
        traces.append(tr)
        if abs(tr * tr - 4) > 1e-9:
            reasons.append(f"peripheral word {model.format_word(cusp.word)} has trace {tr}")
    if not cusps:
        return {"ok": False, "reasons": reasons, "peripheral_traces": traces}
    area, se = liouville_area_estimate(model, n_area, rng)
    if abs(area - model.area) > 0.01 * model.area:
        reasons.append(f"Monte Carlo area {area:.4f} differs from {model.area:.4f}")
    bad, nwords = tiling_violations(model, n_tiling, rng)
    if bad:
        reasons.append(f"{bad} overlapping tile samples")
    return {
        "ok": not reasons,
        "reasons": reasons,
        "peripheral_traces": traces,
        "area_estimate": area,
        "area_stderr": se,
        "gauss_bonnet_area": model.area,
        "tiling_words": nwords,
        "tiling_overlaps": bad,
        "genus": model.genus,
        "cusps": len(model.cusps),
    }
