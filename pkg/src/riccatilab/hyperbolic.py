"""Closed-form geometry of the upper half-plane.

Unit tangent vectors are identified with PSL2(R) frames F: the base point is
F(i), the forward endpoint F(inf) is the first column, the backward endpoint
F(0) the second column. With this identification

    geodesic flow        F -> F @ diag(e^{t/2}, e^{-t/2})
    stable horocycle     F -> F @ [[1, t], [0, 1]]      (centred at F(inf))
    unstable horocycle   F -> F @ [[1, 0], [t, 1]]      (centred at F(0))

and isometries act by left multiplication. The public dataclasses are thin
immutable wrappers; the vectorised helpers on (N, 2, 2) arrays do the work.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ROUNDTRIP_TOL = 1e-10


@dataclass(frozen=True)
class HPoint:
    re: float
    im: float

    def __post_init__(self):
        if not (self.im > 0) or not math.isfinite(self.re) or not math.isfinite(self.im):
            raise ValueError(f"not a point of the upper half-plane: {self.re} + {self.im}i")

    @property
    def z(self) -> complex:
        return complex(self.re, self.im)

    @classmethod
    def from_complex(cls, z) -> "HPoint":
        z = complex(z)
        return cls(z.real, z.imag)


@dataclass(frozen=True, eq=False)
class BoundaryPoint:
    """A point a/b of R u {inf}, stored homogeneously."""

    a: float
    b: float

    def __post_init__(self):
        if self.a == 0 and self.b == 0:
            raise ValueError("(0, 0) is not a boundary point")

    @classmethod
    def from_value(cls, x) -> "BoundaryPoint":
        x = float(x)
        if math.isinf(x):
            return cls(1.0, 0.0)
        return cls(x, 1.0)

    @property
    def vector(self) -> np.ndarray:
        v = np.array([self.a, self.b], dtype=float)
        return v / np.linalg.norm(v)

    @property
    def value(self) -> float:
        return math.inf if self.b == 0 else self.a / self.b

    def is_infinite(self) -> bool:
        return self.b == 0

    def close_to(self, other: "BoundaryPoint", tol: float = 1e-12) -> bool:
        p, q = self.vector, other.vector
        return abs(p[0] * q[1] - p[1] * q[0]) <= tol

    def __eq__(self, other):
        if not isinstance(other, BoundaryPoint):
            return NotImplemented
        return self.close_to(other)

    def __repr__(self):
        return f"BoundaryPoint({self.value!r})"


INFINITY = BoundaryPoint(1.0, 0.0)
ZERO = BoundaryPoint(0.0, 1.0)


@dataclass(frozen=True, eq=False)
class RealMoebius:
    """Element of PSL2(R); entries rescaled to det 1 on construction."""

    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        det = self.a * self.d - self.b * self.c
        if not det > 0:
            raise ValueError(f"real Moebius map needs positive determinant, got {det}")
        r = math.sqrt(det)
        for name in "abcd":
            object.__setattr__(self, name, float(getattr(self, name)) / r)

    @classmethod
    def from_matrix(cls, m) -> "RealMoebius":
        m = np.asarray(m, dtype=float)
        return cls(m[0, 0], m[0, 1], m[1, 0], m[1, 1])

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]])

    @property
    def trace(self) -> float:
        return self.a + self.d

    def __matmul__(self, other: "RealMoebius") -> "RealMoebius":
        return RealMoebius.from_matrix(self.matrix @ other.matrix)

    def inverse(self) -> "RealMoebius":
        return RealMoebius(self.d, -self.b, -self.c, self.a)

    def __call__(self, p):
        return moebius_apply(self, p)

    def close_to(self, other: "RealMoebius", tol: float = 1e-10) -> bool:
        m, n = self.matrix, other.matrix
        return min(np.abs(m - n).max(), np.abs(m + n).max()) <= tol * max(1.0, np.abs(m).max())

    def __eq__(self, other):
        if not isinstance(other, RealMoebius):
            return NotImplemented
        return self.close_to(other)

    def __repr__(self):
        return f"RealMoebius([[{self.a:.6g}, {self.b:.6g}], [{self.c:.6g}, {self.d:.6g}]])"


@dataclass(frozen=True)
class UnitTangent:
    """v in T^1 H by its geodesic endpoints and signed arclength.

    s = 0 at the point of the geodesic nearest to i.
    """

    xi_minus: BoundaryPoint
    xi_plus: BoundaryPoint
    s: float

    def __post_init__(self):
        if self.xi_minus.close_to(self.xi_plus, 1e-14):
            raise ValueError("geodesic endpoints coincide")

    @property
    def frame(self) -> np.ndarray:
        return frame(self)

    @property
    def base(self) -> HPoint:
        return base_point(self)

    def reversed(self) -> "UnitTangent":
        """The opposite vector at the same base point."""
        return UnitTangent(self.xi_plus, self.xi_minus, -self.s)


@dataclass(frozen=True)
class Horocycle:
    """Euclidean diameter `height` for a finite centre; Im-level for centre inf."""

    center: BoundaryPoint
    height: float

    def __post_init__(self):
        if not self.height > 0:
            raise ValueError("horocycle height must be positive")


# ---------------------------------------------------------------------------
# vectorised matrix helpers


def geodesic_matrix(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape + (2, 2))
    out[..., 0, 0] = np.exp(t / 2)
    out[..., 1, 1] = np.exp(-t / 2)
    return out


def stable_matrix(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape + (2, 2))
    out[..., 0, 0] = 1.0
    out[..., 1, 1] = 1.0
    out[..., 0, 1] = t
    return out


def unstable_matrix(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape + (2, 2))
    out[..., 0, 0] = 1.0
    out[..., 1, 1] = 1.0
    out[..., 1, 0] = t
    return out


def rotation_matrix(phi):
    """K_phi; fixes i and turns the upward vector at i to angle pi/2 - 2 phi."""
    phi = np.asarray(phi, dtype=float)
    c, s = np.cos(phi), np.sin(phi)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


FLIP = np.array([[0.0, -1.0], [1.0, 0.0]])  # reverses the vector, keeps the base point


def mobius(m, z):
    """Apply 2x2 (or stacked (..., 2, 2)) matrices to complex numbers."""
    m = np.asarray(m)
    return (m[..., 0, 0] * z + m[..., 0, 1]) / (m[..., 1, 0] * z + m[..., 1, 1])


def normalize_det(m):
    m = np.asarray(m, dtype=float)
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    return m / np.sqrt(det)[..., None, None]


def affine_frame(z):
    """Frame at z pointing straight up."""
    z = np.asarray(z, dtype=complex)
    x, y = z.real, z.imag
    r = np.sqrt(y)
    out = np.zeros(z.shape + (2, 2))
    out[..., 0, 0] = r
    out[..., 0, 1] = x / r
    out[..., 1, 1] = 1 / r
    return out


def frames_from_point_angle(z, theta):
    """Frames with base point z and Euclidean direction angle theta."""
    return affine_frame(z) @ rotation_matrix((np.pi / 2 - np.asarray(theta, dtype=float)) / 2)


def frames_point(F):
    F = np.asarray(F)
    return mobius(F, 1j)


def frames_angle(F):
    """Direction angle in [0, 2pi) of the frame's vector at its base point."""
    F = np.asarray(F)
    tangent = 1j / (F[..., 1, 0] * 1j + F[..., 1, 1]) ** 2
    return np.mod(np.angle(tangent), 2 * np.pi)


def frames_toward(z, xi):
    """Frames based at z whose forward endpoint is the real number xi (inf allowed)."""
    z = np.asarray(z, dtype=complex)
    xi = np.asarray(xi, dtype=float)
    F0 = affine_frame(z)
    # endpoint in the chart where z sits at i
    with np.errstate(divide="ignore", invalid="ignore"):
        local = np.where(np.isinf(xi), np.inf, (xi - z.real) / z.imag)
    # K_theta sends inf to cot(theta)
    theta = np.where(np.isinf(local), 0.0, np.arctan2(1.0, np.where(np.isinf(local), 0.0, local)))
    return F0 @ rotation_matrix(theta)


def frames_from_endpoints(minus, plus, s):
    """Frames for endpoint pairs minus, plus of shape (..., 2) and arclength s."""
    minus = np.asarray(minus, dtype=float)
    plus = np.asarray(plus, dtype=float)
    s = np.asarray(s, dtype=float)
    p1, p2 = plus[..., 0], plus[..., 1]
    m1, m2 = minus[..., 0], minus[..., 1]
    beta = 1.0 / (p1 * m2 - m1 * p2)
    M = np.stack([np.stack([p1, m1 * beta], -1), np.stack([p2, m2 * beta], -1)], -2)
    w = mobius(np.stack([np.stack([M[..., 1, 1], -M[..., 0, 1]], -1),
                         np.stack([-M[..., 1, 0], M[..., 0, 0]], -1)], -2), 1j)
    u = np.log(np.abs(w))
    return M @ geodesic_matrix(u + s)


def frames_to_endpoints(F):
    """Inverse of frames_from_endpoints: (minus, plus, s)."""
    F = np.asarray(F, dtype=float)
    plus = F[..., :, 0] / np.linalg.norm(F[..., :, 0], axis=-1, keepdims=True)
    minus = F[..., :, 1] / np.linalg.norm(F[..., :, 1], axis=-1, keepdims=True)
    G = frames_from_endpoints(minus, plus, np.zeros(F.shape[:-2]))
    # G^{-1} F is diagonal, diag(e^{s/2}, e^{-s/2}) up to sign
    ginv00 = G[..., 1, 1]
    ginv01 = -G[..., 0, 1]
    d = ginv00 * F[..., 0, 0] + ginv01 * F[..., 1, 0]
    s = 2 * np.log(np.abs(d))
    return minus, plus, s


# ---------------------------------------------------------------------------
# public scalar operations


def _as_matrix(m):
    if isinstance(m, RealMoebius):
        return m.matrix
    if hasattr(m, "matrix"):
        return np.asarray(m.matrix)
    return np.asarray(m)


def moebius_apply(m, p):
    """Moebius action on an HPoint or BoundaryPoint (homogeneous, inf-safe).

    A complex matrix applied to an HPoint must keep it in H.
    """
    M = _as_matrix(m)
    if isinstance(p, BoundaryPoint):
        w = M @ np.array([p.a, p.b])
        if np.iscomplexobj(w):
            if np.abs(w.imag).max() > 1e-12 * np.abs(w).max():
                raise ValueError("complex map does not preserve the real circle at this point")
            w = w.real
        return BoundaryPoint(float(w[0]), float(w[1]))
    if isinstance(p, HPoint):
        return HPoint.from_complex(mobius(M, p.z))
    raise TypeError(f"cannot apply a Moebius map to {type(p).__name__}")


def dist_h(z1: HPoint, z2: HPoint) -> float:
    dx, dy = z1.re - z2.re, z1.im - z2.im
    # stable form of arccosh(1 + r^2 / (2 y1 y2))
    q = (dx * dx + dy * dy) / (2 * z1.im * z2.im)
    return _arccosh1p(q)


def _arccosh1p(q):
    """arccosh(1 + q) without cancellation for small q."""
    return math.log1p(q + math.sqrt(q * (q + 2)))


def dist_h_array(z1, z2):
    z1, z2 = np.asarray(z1, dtype=complex), np.asarray(z2, dtype=complex)
    q = np.abs(z1 - z2) ** 2 / (2 * z1.imag * z2.imag)
    return np.log1p(q + np.sqrt(q * (q + 2)))


def frame(v: UnitTangent) -> np.ndarray:
    return frames_from_endpoints(
        np.array([v.xi_minus.a, v.xi_minus.b]), np.array([v.xi_plus.a, v.xi_plus.b]), v.s
    )


def unit_tangent_from_frame(F) -> UnitTangent:
    minus, plus, s = frames_to_endpoints(F)
    return UnitTangent(BoundaryPoint(*map(float, minus)), BoundaryPoint(*map(float, plus)), float(s))


def base_point(v: UnitTangent) -> HPoint:
    return HPoint.from_complex(frames_point(frame(v)))


def direction_angle(v: UnitTangent) -> float:
    return float(frames_angle(frame(v)))


def from_point_angle(z: HPoint, theta: float) -> UnitTangent:
    return unit_tangent_from_frame(frames_from_point_angle(z.z, theta))


def to_point_angle(v: UnitTangent) -> tuple[HPoint, float]:
    F = frame(v)
    return HPoint.from_complex(frames_point(F)), float(frames_angle(F))


def geodesic_flow(v: UnitTangent, t: float) -> UnitTangent:
    return UnitTangent(v.xi_minus, v.xi_plus, v.s + t)


def horocycle_flow(v: UnitTangent, t: float, kind: str = "stable") -> UnitTangent:
    if kind == "stable":
        step = stable_matrix(t)
    elif kind == "unstable":
        step = unstable_matrix(t)
    else:
        raise ValueError(f"kind must be 'stable' or 'unstable', not {kind!r}")
    return unit_tangent_from_frame(frame(v) @ step)


def endpoints(v: UnitTangent) -> tuple[BoundaryPoint, BoundaryPoint]:
    return v.xi_minus, v.xi_plus


def push_tangent(m, v: UnitTangent) -> UnitTangent:
    """Image of v under the isometry m."""
    return unit_tangent_from_frame(normalize_det(_as_matrix(m)) @ frame(v))


def horocycle_through(z: HPoint, center: BoundaryPoint) -> Horocycle:
    if center.is_infinite():
        return Horocycle(center, z.im)
    xi = center.value
    return Horocycle(center, ((z.re - xi) ** 2 + z.im ** 2) / z.im)


def _horo_chart(h: Horocycle, z: HPoint, tol: float):
    """Coordinate along h in a chart where h becomes Im = 1 (arclength = |dx|)."""
    if h.center.is_infinite():
        if abs(z.im - h.height) > tol * max(1.0, h.height):
            raise ValueError(f"{z} is not on the horocycle Im = {h.height}")
        return z.re / h.height
    xi, D = h.center.value, h.height
    w = -1.0 / (z.z - xi)  # horocycle -> Im w = 1/D
    if abs(w.imag * D - 1.0) > tol * max(1.0, abs(w) * D):
        raise ValueError(f"{z} is not on the horocycle of diameter {D} at {xi}")
    return w.real * D


def dist_horocyclic(z1: HPoint, z2: HPoint, h: Horocycle, tol: float = 1e-9) -> float:
    return abs(_horo_chart(h, z1, tol) - _horo_chart(h, z2, tol))


def poisson_kernel(z: HPoint, xi: BoundaryPoint) -> float:
    """y / ((x - xi)^2 + y^2).

    For xi = inf we use the chart eta = -1/xi, in which the density of the
    harmonic measure at eta = 0 is Im z (the limit of xi^2 k(z, xi)).
    """
    if xi.is_infinite():
        return z.im
    d = z.re - xi.value
    return z.im / (d * d + z.im * z.im)


def poisson_kernel_array(z, xi):
    z = np.asarray(z, dtype=complex)
    xi = np.asarray(xi, dtype=float)
    return z.imag / ((z.real - xi) ** 2 + z.imag ** 2)


def geodesic_euclidean_radius(x: float, y: float, xi: float) -> float:
    """Radius of the geodesic through x + iy ending at xi."""
    if xi == x:
        raise ValueError("degenerate vertical geodesic: xi equals x")
    d = xi - x
    return (d * d + y * y) / (2 * abs(d))
