"""Exact arithmetic on the planar rigid-body group SE(2).

Poses are (x, y, theta) with the heading stored on the real line (universal
cover) rather than wrapped to (-pi, pi]: maneuvers that wind through a full
revolution keep a monotone heading trace, and none of the group operations
care about the representative.

The module also provides the Lie algebra se(2) (body-frame forward/lateral
velocity and turning rate), its dual (momenta), the closed-form exponential
and logarithm, and the coadjoint action used to transport momentum covectors
between frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "GroupElement",
    "AlgebraElement",
    "CoAlgebraElement",
    "DomainError",
    "identity",
    "compose",
    "inverse",
    "exp",
    "log",
    "coadjoint",
    "coadjoint_matrix",
]

# Below this |theta| the sinc-type coefficients switch to their series
# expansion; the 4th-order truncation error there is ~1e-17, under one ulp.
_SMALL_ANGLE = 1e-4


class DomainError(ValueError):
    """Argument outside the domain of a chart-limited operation."""


@dataclass(frozen=True)
class GroupElement:
    """Pose (x, y, theta) on SE(2); theta lives on the universal cover."""

    x: float
    y: float
    theta: float


@dataclass(frozen=True)
class AlgebraElement:
    """Body-frame velocity (forward, lateral, turning rate) in se(2)."""

    xi1: float
    xi2: float
    xi3: float

    def __add__(self, other: "AlgebraElement") -> "AlgebraElement":
        return AlgebraElement(self.xi1 + other.xi1, self.xi2 + other.xi2,
                              self.xi3 + other.xi3)

    def __mul__(self, a: float) -> "AlgebraElement":
        return AlgebraElement(a * self.xi1, a * self.xi2, a * self.xi3)

    __rmul__ = __mul__


@dataclass(frozen=True)
class CoAlgebraElement:
    """Momentum covector (mu1, mu2 linear, mu3 angular) in se(2)*."""

    mu1: float
    mu2: float
    mu3: float

    def pair(self, xi: AlgebraElement) -> float:
        """Duality pairing <mu, xi>."""
        return self.mu1 * xi.xi1 + self.mu2 * xi.xi2 + self.mu3 * xi.xi3


identity = GroupElement(0.0, 0.0, 0.0)


def compose(a: GroupElement, b: GroupElement) -> GroupElement:
    """Group product a*b (apply b in the frame of a)."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return GroupElement(
        a.x + b.x * c - b.y * s,
        a.y + b.x * s + b.y * c,
        a.theta + b.theta,
    )


def inverse(g: GroupElement) -> GroupElement:
    """Group inverse; compose(g, inverse(g)) is the identity."""
    c, s = math.cos(g.theta), math.sin(g.theta)
    return GroupElement(-(g.x * c + g.y * s), g.x * s - g.y * c, -g.theta)


def _sinc_coeffs(w: float) -> tuple[float, float]:
    """Return (sin(w)/w, (1-cos(w))/w) with a series branch near w = 0."""
    if abs(w) < _SMALL_ANGLE:
        w2 = w * w
        return 1.0 - w2 / 6.0 + w2 * w2 / 120.0, w / 2.0 - w * w2 / 24.0
    return math.sin(w) / w, (1.0 - math.cos(w)) / w


def exp(xi: AlgebraElement, t: float = 1.0) -> GroupElement:
    """Closed-form SE(2) exponential of t*xi."""
    w = t * xi.xi3
    u1, u2 = t * xi.xi1, t * xi.xi2
    a, b = _sinc_coeffs(w)
    return GroupElement(a * u1 - b * u2, b * u1 + a * u2, w)


def log(g: GroupElement) -> AlgebraElement:
    """SE(2) logarithm; inverse of exp at t = 1.

    Only defined for |theta| < 2*pi: the intended inputs are differences of
    consecutive poses, which never wind a full turn in one step.

    Raises:
        DomainError: if |g.theta| >= 2*pi.
    """
    w = g.theta
    if abs(w) >= 2.0 * math.pi:
        raise DomainError(f"log undefined for |theta| >= 2*pi (got {w!r})")
    a, b = _sinc_coeffs(w)
    den = a * a + b * b
    return AlgebraElement((a * g.x + b * g.y) / den,
                          (-b * g.x + a * g.y) / den, w)


def coadjoint_matrix(g: GroupElement) -> tuple[tuple[float, float, float], ...]:
    """3x3 matrix of the coadjoint action of g on momentum covectors."""
    c, s = math.cos(g.theta), math.sin(g.theta)
    return ((c, s, 0.0), (-s, c, 0.0), (g.y, -g.x, 1.0))


def coadjoint(g: GroupElement, mu: CoAlgebraElement) -> CoAlgebraElement:
    """Coadjoint action translating momenta between frames.

    Linear in mu; the identity acts trivially. Note the action composes
    contravariantly: coadjoint(compose(a, b), mu) equals
    coadjoint(b, coadjoint(a, mu)).
    """
    c, s = math.cos(g.theta), math.sin(g.theta)
    return CoAlgebraElement(
        c * mu.mu1 + s * mu.mu2,
        -s * mu.mu1 + c * mu.mu2,
        g.y * mu.mu1 - g.x * mu.mu2 + mu.mu3,
    )
