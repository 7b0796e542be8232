"""Planar similarities, codes, and the basic open set.

A similarity is stored as ``x -> ratio * Rot(rotation) * Refl(x) + translation``
where ``Refl`` is the reflection in the horizontal axis (applied first, only
when ``reflect`` is set).  Internally the map is the complex affine map
``z -> a * z + b`` or ``z -> a * conj(z) + b`` with ``a = ratio * exp(i*rotation)``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

Code = tuple[int, ...]

ROOT: Code = ()


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Similarity:
    ratio: float
    rotation: float = 0.0
    reflect: bool = False
    translation: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.ratio > 0:
            raise GeometryError(f"similarity ratio must be positive, got {self.ratio}")
        object.__setattr__(self, "translation", (float(self.translation[0]), float(self.translation[1])))

    @property
    def a(self) -> complex:
        return self.ratio * cmath.exp(1j * self.rotation)

    @property
    def b(self) -> complex:
        return complex(*self.translation)

    @classmethod
    def from_complex(cls, a: complex, b: complex, reflect: bool = False) -> "Similarity":
        return cls(abs(a), cmath.phase(a), bool(reflect), (b.real, b.imag))

    def __call__(self, points):
        """Apply to an ``(n, 2)`` array (or a single point)."""
        pts = np.asarray(points, dtype=float)
        z = pts[..., 0] + 1j * pts[..., 1]
        if self.reflect:
            z = np.conj(z)
        w = self.a * z + self.b
        return np.stack([w.real, w.imag], axis=-1)

    def then(self, inner: "Similarity") -> "Similarity":
        """Return ``self o inner``."""
        a_in = inner.a.conjugate() if self.reflect else inner.a
        b_in = inner.b.conjugate() if self.reflect else inner.b
        return Similarity.from_complex(self.a * a_in, self.a * b_in + self.b, self.reflect != inner.reflect)

    def as_dict(self) -> dict:
        return {
            "ratio": self.ratio,
            "rotation": self.rotation,
            "reflect": self.reflect,
            "translation": list(self.translation),
        }

    @classmethod
    def from_dict(cls, d) -> "Similarity":
        if isinstance(d, (list, tuple)):
            ratio, rotation, reflect, tx, ty = d
            return cls(float(ratio), float(rotation), bool(reflect), (float(tx), float(ty)))
        return cls(
            float(d["ratio"]),
            float(d.get("rotation", 0.0)),
            bool(d.get("reflect", False)),
            tuple(d.get("translation", (0.0, 0.0))),
        )


IDENTITY = Similarity(1.0)


def compose(path: Sequence[Similarity]) -> Similarity:
    """Compose ``path[0] o path[1] o ... o path[-1]``; the empty path is the identity."""
    out = IDENTITY
    for f in path:
        out = out.then(f)
    return out


def polygon_area(poly) -> float:
    """Signed area (positive for counterclockwise vertex order)."""
    p = np.asarray(poly, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_perimeter(poly) -> float:
    p = np.asarray(poly, dtype=float)
    return float(np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1).sum())


def apply_polygon(f: Similarity, poly) -> np.ndarray:
    """Image of a polygon; vertex order is kept, so a reflection flips orientation."""
    return f(np.asarray(poly, dtype=float))


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return d1 * d2 < 0 and d3 * d4 < 0


def is_simple(poly) -> bool:
    p = np.asarray(poly, dtype=float)
    n = len(p)
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_cross(p[i], p[(i + 1) % n], p[j], p[(j + 1) % n]):
                return False
    return True


def is_convex(poly) -> bool:
    p = np.asarray(poly, dtype=float)
    e = np.roll(p, -1, axis=0) - p
    cross = e[:, 0] * np.roll(e[:, 1], -1) - e[:, 1] * np.roll(e[:, 0], -1)
    return bool(np.all(cross >= -1e-12) or np.all(cross <= 1e-12))


@dataclass(frozen=True)
class OpenSetSpec:
    polygon: tuple[tuple[float, float], ...]
    diameter: float = field(init=False)

    def __post_init__(self):
        poly = tuple((float(x), float(y)) for x, y in self.polygon)
        if len(poly) < 3:
            raise GeometryError("invalid open set: fewer than 3 vertices")
        arr = np.asarray(poly)
        if polygon_area(arr) <= 0:
            raise GeometryError("invalid open set: polygon must be counterclockwise with positive area")
        if not is_simple(arr):
            raise GeometryError("invalid open set: polygon self-intersects")
        diff = arr[:, None, :] - arr[None, :, :]
        object.__setattr__(self, "polygon", poly)
        object.__setattr__(self, "diameter", float(np.sqrt((diff**2).sum(-1)).max()))

    @property
    def vertices(self) -> np.ndarray:
        return np.asarray(self.polygon, dtype=float)

    @property
    def area(self) -> float:
        return polygon_area(self.vertices)

    @property
    def perimeter(self) -> float:
        return polygon_perimeter(self.vertices)

    @property
    def convex(self) -> bool:
        return is_convex(self.vertices)

    def to_list(self) -> list[list[float]]:
        return [list(v) for v in self.polygon]


def unit_square() -> OpenSetSpec:
    return OpenSetSpec(((0, 0), (1, 0), (1, 1), (0, 1)))


def unit_triangle() -> OpenSetSpec:
    return OpenSetSpec(((0, 0), (1, 0), (0.5, math.sqrt(3) / 2)))


def _ccw(poly: np.ndarray) -> np.ndarray:
    return poly if polygon_area(poly) >= 0 else poly[::-1]


def _edge_normals(poly: np.ndarray):
    """Outward unit normals and offsets of a convex CCW polygon: n.x <= c inside."""
    e = np.roll(poly, -1, axis=0) - poly
    n = np.stack([e[:, 1], -e[:, 0]], axis=1)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    c = (n * poly).sum(1)
    return n, c


def convex_contains(outer, inner, tol: float) -> bool:
    """True if every vertex of ``inner`` lies in the closed convex ``outer`` up to ``tol``."""
    n, c = _edge_normals(_ccw(np.asarray(outer, float)))
    s = np.asarray(inner, float) @ n.T - c
    return bool(np.all(s <= tol))


def convex_interiors_disjoint(p, q, tol: float) -> bool:
    """Separating-axis test; overlaps thinner than ``tol`` count as disjoint."""
    p = _ccw(np.asarray(p, float))
    q = _ccw(np.asarray(q, float))
    for poly in (p, q):
        n, _ = _edge_normals(poly)
        for axis in n:
            pp, qq = p @ axis, q @ axis
            if pp.max() <= qq.min() + tol or qq.max() <= pp.min() + tol:
                return True
    return False


def check_uosc(ifs: Sequence[Similarity], O: OpenSetSpec, tol: float | None = None) -> dict:
    """Check containment and pairwise disjointness of the first-level images of ``O``.

    Advisory only: it inspects one realized IFS.  ``O`` must be convex.
    """
    if not O.convex:
        raise GeometryError("invalid open set: only convex polygons are supported")
    if tol is None:
        tol = 1e-9 * O.diameter
    if tol <= 0:
        raise ValueError("tol must be positive")
    images = [apply_polygon(f, O.vertices) for f in ifs]
    contained = all(convex_contains(O.vertices, im, tol) for im in images)
    disjoint = all(
        convex_interiors_disjoint(images[i], images[j], tol)
        for i in range(len(images))
        for j in range(i + 1, len(images))
    )
    return {"contained": contained, "pairwise_disjoint": disjoint}


def cutoff_R(O: OpenSetSpec, slack: float = 0.05) -> float:
    """Scale cutoff ``R = sqrt(2) * |O| * (1 + slack)``; slack is raised to at least 1e-6."""
    slack = max(float(slack), 1e-6)
    return math.sqrt(2.0) * O.diameter * (1.0 + slack)


def distance_to_convex_boundary(points, poly) -> np.ndarray:
    """Signed distance from points to the boundary of a convex polygon (positive inside)."""
    n, c = _edge_normals(_ccw(np.asarray(poly, float)))
    s = c[None, :] - np.asarray(points, float) @ n.T
    return s.min(axis=1)


def code_str(code: Iterable[int]) -> str:
    code = tuple(code)
    return "".join(map(str, code)) if code else "∅"
