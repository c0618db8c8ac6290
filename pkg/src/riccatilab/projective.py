"""The Riemann sphere CP^1: points, Moebius maps with a log-norm ledger, chordal metric.

Convention: the complex number z is the line [z : 1], infinity is [1 : 0].
Chordal distance d(p, q) = |p ^ q| for unit representatives; it equals half
the Euclidean chord between stereographic lifts, so d(0, inf) = 1.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class SpherePoint:
    w1: complex
    w2: complex

    def __post_init__(self):
        n = math.hypot(abs(self.w1), abs(self.w2))
        if n == 0 or not math.isfinite(n):
            raise ValueError("degenerate homogeneous pair")
        object.__setattr__(self, "w1", complex(self.w1) / n)
        object.__setattr__(self, "w2", complex(self.w2) / n)

    @classmethod
    def from_complex(cls, z) -> "SpherePoint":
        z = complex(z)
        if cmath.isinf(z):
            return cls(1.0, 0.0)
        return cls(z, 1.0)

    @classmethod
    def from_vector(cls, w) -> "SpherePoint":
        return cls(complex(w[0]), complex(w[1]))

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.w1, self.w2])

    def to_complex(self) -> complex:
        if self.w2 == 0:
            return complex(math.inf, 0)
        return self.w1 / self.w2

    def to_xyz(self) -> np.ndarray:
        return to_xyz(self.vector)

    def __eq__(self, other):
        if not isinstance(other, SpherePoint):
            return NotImplemented
        return chordal_dist(self, other) <= 1e-12

    def __repr__(self):
        return f"SpherePoint({self.to_complex()!r})"


INF = SpherePoint(1.0, 0.0)


def _normalize(m):
    """Scale a 2x2 matrix to det 1, then to max-entry 1; return (matrix, log_scale)."""
    m = np.asarray(m, dtype=complex)
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if det == 0 or not np.isfinite(det):
        raise ValueError("singular matrix is not a Moebius map")
    m = m / np.sqrt(det)
    big = np.abs(m).max()
    return m / big, math.log(big)


@dataclass(frozen=True, eq=False)
class ProjectiveMap:
    """A det-1 matrix stored as exp(log_scale) * matrix with max |entry| = 1.

    The true matrix has det 1, so det(matrix) = exp(-2 log_scale); for very
    long products that number underflows, but the projective action and the
    norm only need `matrix` and the ledger.
    """

    matrix: np.ndarray
    log_scale: float = 0.0
    _raw: bool = field(default=False, repr=False)

    def __post_init__(self):
        if self._raw:
            m = np.array(self.matrix, dtype=complex)
            big = np.abs(m).max()
            object.__setattr__(self, "matrix", m / big)
            object.__setattr__(self, "log_scale", float(self.log_scale) + math.log(big))
        else:
            m, ls = _normalize(self.matrix)
            object.__setattr__(self, "matrix", m)
            object.__setattr__(self, "log_scale", ls + float(self.log_scale))
        object.__setattr__(self, "_raw", True)
        if not math.isfinite(self.log_scale):
            raise ValueError("ledger must be finite")
        self.matrix.setflags(write=False)

    @classmethod
    def identity(cls) -> "ProjectiveMap":
        return cls(np.eye(2, dtype=complex))

    @classmethod
    def from_ledger(cls, matrix, log_scale) -> "ProjectiveMap":
        """Trust that exp(log_scale) * matrix has det 1 (no det renormalisation)."""
        return cls(matrix, log_scale, _raw=True)

    @property
    def full(self) -> np.ndarray:
        """The det-1 matrix itself (may overflow for long products)."""
        return self.matrix * math.exp(self.log_scale)

    @property
    def det(self) -> complex:
        m = self.matrix
        return complex((m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]) * math.exp(2 * self.log_scale))

    @property
    def trace(self) -> complex:
        return complex((self.matrix[0, 0] + self.matrix[1, 1]) * math.exp(self.log_scale))

    def __matmul__(self, other: "ProjectiveMap") -> "ProjectiveMap":
        return ProjectiveMap.from_ledger(self.matrix @ other.matrix, self.log_scale + other.log_scale)

    def inverse(self) -> "ProjectiveMap":
        m = self.matrix
        adj = np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]])
        return ProjectiveMap.from_ledger(adj, self.log_scale)

    def __call__(self, p: SpherePoint) -> SpherePoint:
        return sphere_apply(self, p)

    def log_norm(self) -> float:
        """log of the operator norm of the det-1 matrix."""
        return self.log_scale + math.log(np.linalg.norm(self.matrix, 2))

    def top_right_singular(self) -> np.ndarray:
        _, _, vh = np.linalg.svd(self.matrix)
        return vh[0].conj()

    def least_right_singular(self) -> np.ndarray:
        """Most contracted direction, as the orthogonal complement of the top one."""
        v = self.top_right_singular()
        return np.array([-np.conj(v[1]), np.conj(v[0])])

    def top_left_singular(self) -> np.ndarray:
        u, _, _ = np.linalg.svd(self.matrix)
        return u[:, 0]

    def close_to(self, other: "ProjectiveMap", tol: float = 1e-9) -> bool:
        return projective_distance(self, other) <= tol

    def __eq__(self, other):
        if not isinstance(other, ProjectiveMap):
            return NotImplemented
        return self.close_to(other)

    def __repr__(self):
        return f"ProjectiveMap({np.array2string(self.matrix, precision=4)}, log_scale={self.log_scale:.4g})"


def projective_distance(m: ProjectiveMap, n: ProjectiveMap) -> float:
    """Relative sup-distance between m and the best scalar multiple of n."""
    a = np.asarray(m.matrix).ravel()
    b = np.asarray(n.matrix).ravel()
    # best complex scalar fit of b onto a
    s = np.vdot(b, a) / np.vdot(b, b)
    return float(np.abs(a - s * b).max() / np.abs(a).max()) if np.isfinite(s) else math.inf


def sphere_apply(m: ProjectiveMap, p: SpherePoint) -> SpherePoint:
    return SpherePoint.from_vector(np.asarray(m.matrix) @ p.vector)


def chordal_dist(p: SpherePoint, q: SpherePoint) -> float:
    return abs(p.w1 * q.w2 - p.w2 * q.w1)


# ---------------------------------------------------------------------------
# vectorised helpers on homogeneous pairs of shape (..., 2)


def normalize_pairs(w):
    w = np.asarray(w, dtype=complex)
    # prescale by the largest modulus so huge entries do not overflow the norm
    big = np.abs(w).max(axis=-1, keepdims=True)
    w = w / np.where(big > 0, big, 1.0)
    return w / np.linalg.norm(w, axis=-1, keepdims=True)


def pairs_from_complex(z):
    z = np.asarray(z, dtype=complex)
    out = np.stack([z, np.ones_like(z)], -1)
    inf = ~np.isfinite(z)
    out[inf] = [1.0, 0.0]
    return normalize_pairs(out)


def pairs_to_complex(w):
    w = np.asarray(w)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = w[..., 0] / w[..., 1]
    return np.where(w[..., 1] == 0, complex(np.inf, 0), z)


def chordal_pairs(w, u):
    """Chordal distance between arrays of (not necessarily normalised) pairs."""
    w, u = np.asarray(w), np.asarray(u)
    num = np.abs(w[..., 0] * u[..., 1] - w[..., 1] * u[..., 0])
    return num / (np.linalg.norm(w, axis=-1) * np.linalg.norm(u, axis=-1))


def chordal_complex(z1, z2):
    return chordal_pairs(pairs_from_complex(z1), pairs_from_complex(z2))


def apply_pairs(M, w):
    """Stacked matrices (..., 2, 2) on stacked pairs (..., 2), renormalised."""
    return normalize_pairs(np.einsum("...ij,...j->...i", M, w))


def to_xyz(w):
    """Stereographic lift to the unit sphere: inf -> north pole, 0 -> south pole."""
    w = normalize_pairs(w)
    c = w[..., 0] * np.conj(w[..., 1])
    return np.stack([2 * c.real, 2 * c.imag, np.abs(w[..., 0]) ** 2 - np.abs(w[..., 1]) ** 2], -1)


def from_xyz(p):
    p = np.asarray(p, dtype=float)
    p = p / np.linalg.norm(p, axis=-1, keepdims=True)
    x, y, zc = p[..., 0], p[..., 1], p[..., 2]
    # [w1 : w2] with |w1|^2 = (1+z)/2, w1 conj(w2) = (x + iy)/2
    north = zc > 0
    w1 = np.where(north, np.sqrt((1 + zc) / 2), (x + 1j * y) / 2 / np.sqrt(np.maximum((1 - zc) / 2, 1e-300)))
    w2 = np.where(north, (x - 1j * y) / 2 / np.sqrt(np.maximum((1 + zc) / 2, 1e-300)), np.sqrt((1 - zc) / 2))
    return normalize_pairs(np.stack([w1, w2], -1))


# ---------------------------------------------------------------------------
# classification


@dataclass(frozen=True)
class Classification:
    kind: str  # identity | parabolic | elliptic | loxodromic
    fixed_points: tuple
    attracting: SpherePoint | None = None
    repelling: SpherePoint | None = None
    within_tolerance: bool = False
    trace_squared: complex = 0j


def _eigvec(m, lam):
    a, b, c, d = m[0, 0], m[0, 1], m[1, 0], m[1, 1]
    v1 = np.array([b, lam - a])
    v2 = np.array([lam - d, c])
    v = v1 if np.linalg.norm(v1) >= np.linalg.norm(v2) else v2
    if np.linalg.norm(v) == 0:
        return None
    return SpherePoint.from_vector(v)


def classify(m: ProjectiveMap, tol: float = 1e-9) -> Classification:
    """Type by the square of the trace of the det-1 representative."""
    n = np.asarray(m.matrix) / np.sqrt(np.linalg.det(m.matrix))
    tr = n[0, 0] + n[1, 1]
    tr2 = complex(tr * tr)
    off = np.abs(n - np.eye(2) * n[0, 0]).max()
    if off <= tol and abs(tr2 - 4) <= tol:
        return Classification("identity", (), trace_squared=tr2)
    if abs(tr2 - 4) <= tol:
        fp = _eigvec(n, tr / 2)
        return Classification("parabolic", (fp,), within_tolerance=tr2 != 4, trace_squared=tr2)
    disc = np.sqrt(complex(tr * tr - 4))
    l1, l2 = (tr + disc) / 2, (tr - disc) / 2
    if abs(tr2.imag) <= 1e-12 * max(1.0, abs(tr2)) and 0 <= tr2.real < 4:
        return Classification("elliptic", (_eigvec(n, l1), _eigvec(n, l2)), trace_squared=tr2)
    if abs(l1) < abs(l2):
        l1, l2 = l2, l1
    att, rep = _eigvec(n, l1), _eigvec(n, l2)
    return Classification("loxodromic", (att, rep), attracting=att, repelling=rep, trace_squared=tr2)


def chordal_distortion(m: ProjectiveMap) -> float:
    """sup d(mp, mq)/d(p, q) = sigma_1/sigma_2 of the det-1 matrix."""
    s = np.linalg.svd(np.asarray(m.matrix), compute_uv=False)
    return float(s[0] / s[1])
