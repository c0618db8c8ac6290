"""Representations of the surface group into PSL2(C) and their holonomy cocycles.

Convention for the cocycle over the geodesic flow: if the lift of g_t v lies
in the tile w P, then A_t(v) = rho(w)^-1. In the Fuchsian baseline this makes
A_t(v)^-1 applied to the reduced point exactly the developed (lifted) point.
"""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .hyperbolic import UnitTangent, frame
from .projective import ProjectiveMap, SpherePoint, chordal_dist, classify
from .surface import (
    GroupWord,
    SurfaceModel,
    _check_in_domain,
    flow_frames_signed,
    flow_horocycle,
    load_model,
    reduced_words,
    thrice_punctured_sphere,
    once_punctured_torus,
)


class HypothesisError(ValueError):
    """A representation fails the parabolic / non-elementary requirements."""


def _det1(m):
    m = np.asarray(m, dtype=complex)
    d = np.linalg.det(m)
    if d == 0 or not np.isfinite(d):
        raise ValueError("singular generator image")
    return m / np.sqrt(d)


@dataclass(frozen=True)
class CuspReport:
    word: str
    trace: complex
    parabolic: bool


@dataclass(frozen=True)
class ParabolicReport:
    cusps: tuple

    @property
    def ok(self) -> bool:
        return all(c.parabolic for c in self.cusps)

    @property
    def traces(self):
        return [c.trace for c in self.cusps]


@dataclass(frozen=True, eq=False)
class Representation:
    """Generator images of the surface group of `model` (det-1 complex matrices)."""

    name: str
    model: SurfaceModel
    images: tuple  # of 2x2 complex arrays, det 1
    conjugator: np.ndarray | None = None  # M with rho(g) = M g M^-1, when known

    def __post_init__(self):
        if len(self.images) != len(self.model.generators):
            raise ValueError("one image per generator is required")
        ims = []
        for m in self.images:
            m = _det1(m.full if isinstance(m, ProjectiveMap) else m)
            m.setflags(write=False)
            ims.append(m)
        object.__setattr__(self, "images", tuple(ims))
        if self.conjugator is not None:
            object.__setattr__(self, "conjugator", _det1(self.conjugator))

    @property
    def labels(self):
        return self.model.labels

    def image(self, g: int) -> ProjectiveMap:
        return ProjectiveMap(self.images[g])

    @cached_property
    def letter_matrices(self) -> dict:
        out = {}
        for g, m in enumerate(self.images):
            out[(g, 1)] = m
            out[(g, -1)] = np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]])
        return out

    def side_maps(self, model: SurfaceModel | None = None) -> np.ndarray:
        """rho(g_k)^-1 for every polygon side: the factor picked up on crossing side k."""
        model = model or self.model
        return np.stack([self.letter_matrices[(g, -e)] for g, e in model.side_letters])

    # --- verdicts ------------------------------------------------------------

    @cached_property
    def parabolic_report(self) -> ParabolicReport:
        return check_parabolic(self, self.model)

    @property
    def parabolic_at_cusps(self) -> bool:
        return self.parabolic_report.ok

    @cached_property
    def elementary_verdict(self) -> str:
        return elementary_heuristic(self)

    def require_hypotheses(self, force=False):
        """Raise unless parabolic and non-elementary; `force` downgrades to a no-op."""
        if force:
            return
        if not self.parabolic_at_cusps:
            raise HypothesisError(f"{self.name}: a peripheral image is not parabolic")
        if self.elementary_verdict != "non-elementary":
            raise HypothesisError(f"{self.name}: elementarity verdict is {self.elementary_verdict}")

    # --- serialisation -------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "model": self.model.name,
            "images": {
                l: [[[z.real, z.imag] for z in row] for row in m] for l, m in zip(self.labels, self.images)
            },
            "conjugator": None
            if self.conjugator is None
            else [[[z.real, z.imag] for z in row] for row in self.conjugator],
            "verdicts": {
                "parabolic_at_cusps": self.parabolic_at_cusps,
                "cusp_traces": [[t.real, t.imag] for t in self.parabolic_report.traces],
                "elementary_verdict": self.elementary_verdict,
            },
        }

    @classmethod
    def from_json(cls, doc, model=None) -> "Representation":
        if isinstance(doc, str):
            doc = json.loads(doc)
        model = load_model(model or doc["model"])
        images = []
        for l in model.labels:
            rows = doc["images"][l]
            images.append(np.array([[complex(a, b) for a, b in row] for row in rows]))
        conj = doc.get("conjugator")
        if conj is not None:
            conj = np.array([[complex(a, b) for a, b in row] for row in conj])
        return cls(doc.get("name", "custom"), model, tuple(images), conj)


def rho_of_word(rep: Representation, w: GroupWord) -> ProjectiveMap:
    """Ordered product of generator images with a running log-norm ledger."""
    m = np.eye(2, dtype=complex)
    ledger = 0.0
    for letter in w:
        m = m @ rep.letter_matrices[letter]
        big = np.abs(m).max()
        m = m / big
        ledger += math.log(big)
    return ProjectiveMap.from_ledger(m, ledger)


def _as_map(Q, L) -> ProjectiveMap:
    return ProjectiveMap.from_ledger(Q, float(L))


def cocycle(rep: Representation, model: SurfaceModel, v: UnitTangent, t: float) -> ProjectiveMap:
    """A_t(v) = rho(w)^-1 for the deck word w of the geodesic segment."""
    F = frame(v)[None]
    _check_in_domain(model, F)
    tr = flow_frames_signed(model, F, t, side_maps=rep.side_maps(model))
    return _as_map(tr.cocycle[0], tr.ledger[0])


def cocycle_batch(rep, model, frames, t, **kw):
    """Vectorised cocycle: returns the Track (reduced frames, cocycles, ledgers)."""
    return flow_frames_signed(model, frames, t, side_maps=rep.side_maps(model), **kw)


def horocycle_cocycle(rep, model, v: UnitTangent, t: float, kind="stable") -> ProjectiveMap:
    """B^s_t(v) or B^u_t(v): the same convention along horocyclic arcs."""
    F = frame(v)[None]
    _check_in_domain(model, F)
    tr = flow_horocycle(model, F, t, kind=kind, side_maps=rep.side_maps(model))
    return _as_map(tr.cocycle[0], tr.ledger[0])


def check_parabolic(rep: Representation, model: SurfaceModel | None = None, tol=1e-9) -> ParabolicReport:
    model = model or rep.model
    out = []
    for cusp in model.cusps:
        m = rho_of_word(rep, cusp.word)
        tr = m.trace
        out.append(CuspReport(model.format_word(cusp.word), tr, abs(tr * tr - 4) <= tol))
    return ParabolicReport(tuple(out))


# ---------------------------------------------------------------------------
# elementarity


def _fixes(m, p: SpherePoint, tol):
    w = np.asarray(m) @ p.vector
    return chordal_dist(SpherePoint.from_vector(w), p) <= tol


def elementary_heuristic(rep: Representation, max_length=3, sep=1e-6) -> str:
    """Sampled-words verdict: elementary | non-elementary | inconclusive.

    Elementary when all generator images share a fixed point or permute a
    common pair of points. Non-elementary when two loxodromic words have
    fixed-point pairs at chordal separation > sep (no common fixed point).
    """
    gens = [np.asarray(m) for m in rep.images]
    nontrivial = [m for m in gens if classify(ProjectiveMap(m)).kind != "identity"]
    if not nontrivial:
        return "elementary"
    first = classify(ProjectiveMap(nontrivial[0]))
    fps = [p for p in first.fixed_points if p is not None]
    for p in fps:
        if all(_fixes(m, p, 1e-9) for m in gens):
            return "elementary"
    if len(fps) == 2:
        p, q = fps
        def keeps_pair(m):
            mp = SpherePoint.from_vector(m @ p.vector)
            mq = SpherePoint.from_vector(m @ q.vector)
            same = chordal_dist(mp, p) <= 1e-9 and chordal_dist(mq, q) <= 1e-9
            swap = chordal_dist(mp, q) <= 1e-9 and chordal_dist(mq, p) <= 1e-9
            return same or swap
        if all(keeps_pair(m) for m in gens):
            return "elementary"
    lox = []
    for w in reduced_words(len(gens), max_length):
        if not len(w):
            continue
        c = classify(rho_of_word(rep, w))
        if c.kind == "loxodromic":
            lox.append(c.fixed_points)
    for i in range(len(lox)):
        for j in range(i + 1, len(lox)):
            d = min(chordal_dist(a, b) for a in lox[i] for b in lox[j])
            if d > sep:
                return "non-elementary"
    return "inconclusive"


# ---------------------------------------------------------------------------
# shipped representations


def fuchsian(model: SurfaceModel | None = None) -> Representation:
    """The inclusion of the (real) deck group."""
    model = model or thrice_punctured_sphere()
    return Representation(
        f"fuchsian_{model.name}", model, tuple(g.matrix for g in model.generators), np.eye(2, dtype=complex)
    )


def parabolic_family(a: complex, model: SurfaceModel | None = None) -> Representation:
    """rho(A) = [[1,a],[0,1]], rho(B) = [[1,0],[-4/a,1]] on the thrice-punctured sphere.

    The product trace is 2 + a(-4/a) = -2 for every a, so all three cusps stay
    parabolic; a = 2 gives back the Fuchsian group.
    """
    a = complex(a)
    if a == 0:
        raise ValueError("parabolic_family needs a != 0")
    model = model or thrice_punctured_sphere()
    A = np.array([[1, a], [0, 1]], dtype=complex)
    B = np.array([[1, 0], [-4 / a, 1]], dtype=complex)
    r = cmath.sqrt(a / 2)
    conj = np.array([[r, 0], [0, 1 / r]])  # z -> (a/2) z
    return Representation(f"family(a={a.real:g}{a.imag:+g}i)", model, (A, B), conj)


def perturbed(model: SurfaceModel | None = None, c=2.1) -> Representation:
    """rho(B) lower-triangular with entry c instead of -2: the third cusp is lost."""
    model = model or thrice_punctured_sphere()
    A = np.array([[1, 2], [0, 1]], dtype=complex)
    B = np.array([[1, 0], [c, 1]], dtype=complex)
    return Representation(f"perturbed(c={c:g})", model, (A, B))


def upper_triangular(model: SurfaceModel | None = None) -> Representation:
    """Two translations fixing inf: parabolic at every cusp and elementary."""
    model = model or thrice_punctured_sphere()
    A = np.array([[1, 1], [0, 1]], dtype=complex)
    B = np.array([[1, 1j], [0, 1]], dtype=complex)
    return Representation("upper_triangular", model, (A, B))


def trivial(model: SurfaceModel | None = None) -> Representation:
    model = model or thrice_punctured_sphere()
    return Representation("trivial", model, tuple(np.eye(2, dtype=complex) for _ in model.generators))


def torus_from_traces(x: complex, y: complex, z: complex | None = None, model=None) -> Representation:
    """Once-punctured torus rep with tr a = x, tr b = y and a parabolic commutator.

    z = tr ab solves z^2 - xyz + x^2 + y^2 = 0 (commutator trace -2); the
    root closer to the Fuchsian value 6 is used unless z is given.
    """
    model = model or once_punctured_torus()
    x, y = complex(x), complex(y)
    if z is None:
        disc = cmath.sqrt(x * x * y * y - 4 * (x * x + y * y))
        roots = ((x * y + disc) / 2, (x * y - disc) / 2)
        z = min(roots, key=lambda r: abs(r - 6))
    z = complex(z)
    # s + 1/s = -z
    s = (-z + cmath.sqrt(z * z - 4)) / 2
    a = np.array([[x, 1], [-1, 0]], dtype=complex)
    b = np.array([[0, s], [-1 / s, y]], dtype=complex)
    return Representation(f"torus(x={x:.3g},y={y:.3g})", model, (a, b))


def quasi_fuchsian_torus(shift=0.3j) -> Representation:
    return torus_from_traces(3 + shift, 3)


BUILTIN_REPS = {
    "fuchsian": lambda: fuchsian(),
    "fuchsian_torus": lambda: fuchsian(once_punctured_torus()),
    "perturbed": lambda: perturbed(),
    "upper_triangular": lambda: upper_triangular(),
    "trivial": lambda: trivial(),
    "quasi_fuchsian_torus": lambda: quasi_fuchsian_torus(),
}


def load_representation(spec, family_a=None) -> Representation:
    """A builtin name, 'family' (with family_a), a JSON path or a JSON dict."""
    if isinstance(spec, Representation):
        return spec
    if isinstance(spec, dict):
        return Representation.from_json(spec)
    if spec == "family":
        if family_a is None:
            raise ValueError("the family representation needs the parameter a")
        return parabolic_family(family_a)
    if spec in BUILTIN_REPS:
        return BUILTIN_REPS[spec]()
    with open(spec) as fh:
        return Representation.from_json(json.load(fh))
