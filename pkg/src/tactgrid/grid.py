"""Target-grid geometry: n x n circular targets tiling a square frame.

The frame is centered on the user's sternum; coordinates are in centimeters,
x positive to the right, y positive up. Targets sit on a regular lattice
spanning the frame edge to edge, indexed by signed integer offsets from the
center.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple

DEFAULT_FRAME_CM = 80.0


class InvalidDensityError(ValueError):
    """Density must be an odd integer >= 3."""


class InvalidFrameError(ValueError):
    """Frame size must be positive."""


class BoundsError(ValueError):
    """Target index outside the grid."""


@dataclass(frozen=True)
class TargetIndex:
    """Signed grid coordinates relative to the frame center.

    ix is positive to the right, iy positive up, matching the spoken
    convention "two up, one left" -> (ix=-1, iy=2).
    """

    ix: int
    iy: int

    def mirrored(self) -> "TargetIndex":
        return TargetIndex(-self.ix, -self.iy)


@dataclass(frozen=True)
class GridSpec:
    """Geometry of one target density on the frame.

    Spacing spans the frame edge to edge (the outermost lattice rows lie on
    the frame border); the target radius is frame/density, so circles overlap
    at low densities and hit-testing must go through nearest_target.
    """

    density: int
    frame_size_cm: float = DEFAULT_FRAME_CM

    def __post_init__(self) -> None:
        if not isinstance(self.density, int) or self.density < 3 or self.density % 2 == 0:
            raise InvalidDensityError(
                f"density must be an odd integer >= 3, got {self.density!r}"
            )
        if not self.frame_size_cm > 0:
            raise InvalidFrameError(f"frame size must be positive, got {self.frame_size_cm!r}")

    @property
    def spacing_cm(self) -> float:
        return self.frame_size_cm / (self.density - 1)

    @property
    def target_radius_cm(self) -> float:
        return self.frame_size_cm / self.density

    @property
    def max_index(self) -> int:
        return (self.density - 1) // 2

    def in_bounds(self, target: TargetIndex) -> bool:
        m = self.max_index
        return -m <= target.ix <= m and -m <= target.iy <= m

    def require_in_bounds(self, target: TargetIndex) -> TargetIndex:
        if not self.in_bounds(target):
            raise BoundsError(
                f"target ({target.ix}, {target.iy}) outside +/-{self.max_index} at density {self.density}"
            )
        return target

    def indices(self) -> Iterator[TargetIndex]:
        """All in-bounds indices, row-major from bottom-left."""
        m = self.max_index
        for iy in range(-m, m + 1):
            for ix in range(-m, m + 1):
                yield TargetIndex(ix, iy)


def make_grid(density: int, frame_size_cm: float = DEFAULT_FRAME_CM) -> GridSpec:
    return GridSpec(density=density, frame_size_cm=float(frame_size_cm))


def index_to_position(grid: GridSpec, target: TargetIndex) -> tuple[float, float]:
    """Center of a target in frame centimeters relative to the origin."""
    grid.require_in_bounds(target)
    return (target.ix * grid.spacing_cm, target.iy * grid.spacing_cm)


class NearestHit(NamedTuple):
    index: TargetIndex
    distance_cm: float
    hit: bool


def nearest_target(grid: GridSpec, point: tuple[float, float]) -> NearestHit:
    """Nearest lattice target to a point, and whether it is within the circle.

    Points outside the frame are allowed; candidate indices are clamped to
    bounds. Exact ties resolve to the smaller |ix|+|iy|, then smaller iy,
    then smaller ix, so hit-testing is deterministic.
    """
    x, y = point
    m = grid.max_index
    s = grid.spacing_cm

    def _candidates(coord: float) -> list[int]:
        lo = max(-m, min(m, math.floor(coord / s)))
        hi = max(-m, min(m, math.ceil(coord / s)))
        return [lo] if lo == hi else [lo, hi]

    best: tuple[float, int, int, int] | None = None
    best_index: TargetIndex | None = None
    for iy in _candidates(y):
        for ix in _candidates(x):
            d2 = (x - ix * s) ** 2 + (y - iy * s) ** 2
            key = (d2, abs(ix) + abs(iy), iy, ix)
            if best is None or key < best:
                best = key
                best_index = TargetIndex(ix, iy)
    assert best is not None and best_index is not None
    distance = math.sqrt(best[0])
    return NearestHit(best_index, distance, distance <= grid.target_radius_cm)
