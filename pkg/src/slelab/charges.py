"""Divisors of point charges on the Schottky double of the half-plane or the disc.

A divisor is an ordered list of ``(Point, charge)`` entries together with a
background parameter ``b``.  Charges are complex; real charges are the common
special case.  The Schottky double of a domain D is D glued to its mirror copy
along the boundary, and carries the involution ``z -> z*`` which is complex
conjugation for the half-plane and ``z -> 1/conj(z)`` for the disc.
"""

from __future__ import annotations

import cmath
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Iterator, Sequence

POINT_TOL = 1e-12
BOUNDARY_TOL = 1e-12


class Side(str, Enum):
    BOUNDARY = "boundary"
    INTERIOR = "interior"
    REFLECTED = "reflected-interior"


class Uniformization(str, Enum):
    SPHERE = "sphere"
    HALF_PLANE = "half-plane"
    DISC = "disc"


class Neutrality(str, Enum):
    NC0 = "NC0"
    NCB = "NCb"


class DegenerateConfigurationError(ValueError):
    """Raised when two marked points coincide or a point sits on a pole."""


class ChartError(ValueError):
    """Raised when a point cannot be expressed in the requested chart."""


class MixedBackgroundError(ValueError):
    """Raised when divisors with different background parameters are combined."""


@dataclass(frozen=True)
class ChartContext:
    """Which uniformization a value is expressed in.

    Infinity is always evaluated in the chart ``z -> -1/z``.
    """

    uniformization: Uniformization

    @classmethod
    def sphere(cls) -> "ChartContext":
        return cls(Uniformization.SPHERE)

    @classmethod
    def half_plane(cls) -> "ChartContext":
        return cls(Uniformization.HALF_PLANE)

    @classmethod
    def disc(cls) -> "ChartContext":
        return cls(Uniformization.DISC)


HALF_PLANE = ChartContext.half_plane()
DISC = ChartContext.disc()
SPHERE = ChartContext.sphere()


def classify(coord: complex, at_infinity: bool, chart: ChartContext) -> Side:
    """Return the side of the Schottky double that a coordinate lies on."""
    kind = chart.uniformization
    if kind is Uniformization.SPHERE:
        return Side.INTERIOR
    if kind is Uniformization.HALF_PLANE:
        if at_infinity:
            return Side.BOUNDARY
        if abs(coord.imag) <= BOUNDARY_TOL:
            return Side.BOUNDARY
        return Side.INTERIOR if coord.imag > 0 else Side.REFLECTED
    if at_infinity:
        return Side.REFLECTED
    r = abs(coord)
    if abs(r - 1.0) <= BOUNDARY_TOL:
        return Side.BOUNDARY
    return Side.INTERIOR if r < 1.0 else Side.REFLECTED


@dataclass(frozen=True)
class Point:
    """A marked point; ``coord`` is ignored when ``at_infinity`` is set."""

    coord: complex = 0j
    at_infinity: bool = False
    side: Side = Side.INTERIOR

    def __post_init__(self) -> None:
        object.__setattr__(self, "coord", complex(self.coord))
        object.__setattr__(self, "side", Side(self.side))
        if self.at_infinity:
            object.__setattr__(self, "coord", 0j)

    @classmethod
    def infinity(cls, side: Side = Side.BOUNDARY) -> "Point":
        return cls(0j, True, side)

    @classmethod
    def at(cls, coord: complex, chart: ChartContext = HALF_PLANE) -> "Point":
        """Build a point and infer its side from the coordinate."""
        return cls(complex(coord), False, classify(complex(coord), False, chart))

    def same_as(self, other: "Point", tol: float = POINT_TOL) -> bool:
        if self.at_infinity or other.at_infinity:
            return self.at_infinity and other.at_infinity
        return abs(self.coord - other.coord) <= tol


@dataclass(frozen=True)
class Divisor:
    """Ordered point-charge assignment with background parameter ``b``.

    Adding divisors merges entries whose points coincide (distance at most
    ``POINT_TOL``) by adding their charges; zero charges are kept as marked
    points.
    """

    entries: tuple[tuple[Point, complex], ...] = ()
    b: complex = 0j

    def __post_init__(self) -> None:
        cleaned = tuple((p, complex(c)) for p, c in self.entries)
        object.__setattr__(self, "entries", cleaned)
        object.__setattr__(self, "b", complex(self.b))
        for i, (p, _) in enumerate(cleaned):
            for q, _ in cleaned[i + 1:]:
                if p.same_as(q):
                    raise DegenerateConfigurationError(
                        f"duplicate marked point {p} in divisor; use + to merge charges"
                    )

    @classmethod
    def from_pairs(
        cls,
        pairs: Iterable[tuple[Point | complex, complex]],
        b: complex,
        chart: ChartContext = HALF_PLANE,
    ) -> "Divisor":
        """Build a divisor, merging coincident points and inferring sides."""
        out = cls((), b)
        for p, c in pairs:
            pt = p if isinstance(p, Point) else Point.at(p, chart)
            out = out + cls(((pt, complex(c)),), b)
        return out

    def __iter__(self) -> Iterator[tuple[Point, complex]]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def points(self) -> list[Point]:
        return [p for p, _ in self.entries]

    @property
    def charges(self) -> list[complex]:
        return [c for _, c in self.entries]

    def charge_at(self, point: Point) -> complex:
        for p, c in self.entries:
            if p.same_as(point):
                return c
        return 0j

    def __add__(self, other: "Divisor") -> "Divisor":
        if abs(self.b - other.b) > 0:
            raise MixedBackgroundError(f"cannot add divisors with b={self.b} and b={other.b}")
        merged: list[list[Any]] = [[p, c] for p, c in self.entries]
        for q, c in other.entries:
            for slot in merged:
                if slot[0].same_as(q):
                    slot[1] = slot[1] + c
                    break
            else:
                merged.append([q, c])
        return Divisor(tuple((p, c) for p, c in merged), self.b)

    def scaled(self, factor: complex, b: complex | None = None) -> "Divisor":
        """Multiply every charge by ``factor``; optionally replace ``b``."""
        return Divisor(
            tuple((p, factor * c) for p, c in self.entries),
            self.b if b is None else b,
        )

    def with_b(self, b: complex) -> "Divisor":
        return Divisor(self.entries, b)

    def to_record(self) -> dict[str, Any]:
        """Declarative record; floats are written with full precision by JSON."""
        return {
            "b": {"re": self.b.real, "im": self.b.imag},
            "entries": [
                {
                    "re": p.coord.real,
                    "im": p.coord.imag,
                    "at_infinity": p.at_infinity,
                    "side": p.side.value,
                    "charge_re": c.real,
                    "charge_im": c.imag,
                }
                for p, c in self.entries
            ],
        }

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> "Divisor":
        b = record.get("b", 0.0)
        if isinstance(b, dict):
            b = complex(b.get("re", 0.0), b.get("im", 0.0))
        entries = []
        for e in record.get("entries", []):
            pt = Point(
                complex(e.get("re", 0.0), e.get("im", 0.0)),
                bool(e.get("at_infinity", False)),
                Side(e.get("side", Side.INTERIOR.value)),
            )
            entries.append((pt, complex(e.get("charge_re", 0.0), e.get("charge_im", 0.0))))
        return cls(tuple(entries), complex(b))


@dataclass(frozen=True)
class DoubleDivisor:
    """Pair ``(plus, minus)`` with ``plus`` on D and its boundary, ``minus`` on D.

    The combined divisor on the Schottky double is ``plus + star(minus)``.
    """

    plus: Divisor
    minus: Divisor = field(default_factory=Divisor)

    def __post_init__(self) -> None:
        if self.minus.entries and abs(self.plus.b - self.minus.b) > 0:
            raise MixedBackgroundError("plus and minus layers carry different b")
        for p, c in self.minus.entries:
            if p.side is Side.BOUNDARY and c != 0:
                raise ValueError("minus layer must not charge boundary points")

    @property
    def b(self) -> complex:
        return self.plus.b

    def nodes(self) -> list[tuple[Point, complex, complex]]:
        """Union of supports as ``(point, sigma_plus, sigma_minus)`` triples."""
        out: list[list[Any]] = [[p, c, 0j] for p, c in self.plus.entries]
        for q, c in self.minus.entries:
            for slot in out:
                if slot[0].same_as(q):
                    slot[2] = slot[2] + c
                    break
            else:
                out.append([q, 0j, c])
        return [(p, complex(cp), complex(cm)) for p, cp, cm in out]

    def total_charge(self) -> complex:
        return total_charge(self.plus) + total_charge(self.minus)

    @classmethod
    def from_divisor(cls, d: Divisor, chart: ChartContext) -> "DoubleDivisor":
        """Split a divisor on the Schottky double into its two layers."""
        plus: list[tuple[Point, complex]] = []
        minus: list[tuple[Point, complex]] = []
        for p, c in d.entries:
            side = classify(p.coord, p.at_infinity, chart)
            if side is Side.REFLECTED:
                q = _star_point(p, chart)
                minus.append((q, c))
            else:
                plus.append((Point(p.coord, p.at_infinity, side), c))
        return cls(Divisor(tuple(plus), d.b), Divisor(tuple(minus), d.b))

    def to_divisor(self, chart: ChartContext) -> Divisor:
        return self.plus + star(self.minus, chart)


def total_charge(d: Divisor) -> complex:
    """Exact complex sum of all charges, including any charge at infinity."""
    s = 0j
    for c in d.charges:
        s += c
    return s


def check_neutrality(d: Divisor, level: Neutrality | str, tol: float = 1e-9) -> bool:
    """True iff the total charge is 0 (NC0) or 2b (NCb) within ``tol``."""
    if tol < 0:
        raise ValueError("tol must be non-negative")
    level = Neutrality(level)
    target = 0j if level is Neutrality.NC0 else 2 * d.b
    return abs(total_charge(d) - target) <= tol


def _star_point(p: Point, chart: ChartContext) -> Point:
    kind = chart.uniformization
    if kind is Uniformization.HALF_PLANE:
        if p.at_infinity:
            return p
        z = p.coord.conjugate()
        return Point(z, False, classify(z, False, chart))
    if kind is Uniformization.DISC:
        if p.at_infinity:
            return Point(0j, False, Side.INTERIOR)
        if p.coord == 0:
            return Point.infinity(Side.REFLECTED)
        z = 1.0 / p.coord.conjugate()
        if classify(z, False, chart) is Side.BOUNDARY:
            # keep boundary points exactly fixed
            z = p.coord
        return Point(z, False, classify(z, False, chart))
    raise ChartError("the involution needs the half-plane or disc chart")


def star(d: Divisor, chart: ChartContext) -> Divisor:
    """Image of a divisor under the involution; charges are unchanged."""
    return Divisor(tuple((_star_point(p, chart), c) for p, c in d.entries), d.b)


def conjugate_star(d: Divisor, chart: ChartContext) -> Divisor:
    """``conj(d_*)``: reflect every point and conjugate every charge."""
    return Divisor(
        tuple((_star_point(p, chart), c.conjugate()) for p, c in d.entries),
        d.b.conjugate(),
    )


def symmetrize_check(d: Divisor, chart: ChartContext, tol: float = 1e-12) -> bool:
    """True iff ``d`` equals ``conj(d_*)`` entry by entry (matching by point)."""
    mirror = conjugate_star(d, chart)
    for p, c in mirror.entries:
        if abs(d.charge_at(p) - c) > tol:
            return False
    for p, c in d.entries:
        if abs(mirror.charge_at(p) - c) > tol:
            return False
    return True


def divisor(pairs: Sequence[tuple[complex | Point, complex]], b: complex,
            chart: ChartContext = HALF_PLANE) -> Divisor:
    """Shorthand for :meth:`Divisor.from_pairs`."""
    return Divisor.from_pairs(pairs, b, chart)


def unit(theta: float) -> complex:
    """Point ``e^{i theta}`` on the unit circle."""
    return cmath.exp(1j * theta)
