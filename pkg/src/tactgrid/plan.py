"""Counterbalanced session plans for the target-acquisition experiment.

A cohort of 12 participants covers a 3 (density) x 4 (encoding scheme)
within-subject design: density order and scheme order each follow a Latin
square across participants, schemes nested within each density. Every block
holds 9 trials, one target drawn from each of the 9 frame regions.
"""

from __future__ import annotations

import enum
import json
import random
from dataclasses import dataclass
from typing import Sequence

from .encoding import SCHEMES, EncodingScheme
from .grid import GridSpec, TargetIndex, make_grid

DENSITIES = (5, 7, 9)
PARTICIPANTS_PER_SQUARE = 12
TRIALS_PER_BLOCK = 9


class DesignError(ValueError):
    """Requested cohort cannot satisfy the counterbalancing design."""


@dataclass(frozen=True)
class Condition:
    density: int
    scheme: EncodingScheme

    @property
    def label(self) -> str:
        return f"{self.density}x{self.density}/{self.scheme.code}"

    def to_json(self) -> dict:
        return {"density": self.density, "scheme": self.scheme.code}

    @staticmethod
    def from_json(doc: dict) -> "Condition":
        return Condition(int(doc["density"]), EncodingScheme.from_code(doc["scheme"]))


ALL_CONDITIONS = tuple(
    Condition(d, s) for d in DENSITIES for s in SCHEMES.values()
)


class RegionId(enum.Enum):
    """The nine sampling areas of the frame, named as spoken to participants."""

    TOP_LEFT = "top_left"
    TOP_CENTER = "top_center"
    TOP_RIGHT = "top_right"
    CENTER_LEFT = "center_left"
    ORIGIN = "origin"
    CENTER_RIGHT = "center_right"
    BOTTOM_LEFT = "bottom_left"
    BOTTOM_CENTER = "bottom_center"
    BOTTOM_RIGHT = "bottom_right"


def region_of(target: TargetIndex) -> RegionId:
    """Region of an index: sign of iy picks the row band, sign of ix the column."""
    row = "top" if target.iy > 0 else "bottom" if target.iy < 0 else "center"
    col = "left" if target.ix < 0 else "right" if target.ix > 0 else "center"
    if row == "center" and col == "center":
        return RegionId.ORIGIN
    if row == "center":
        return RegionId(f"center_{col}")
    return RegionId(f"{row}_{col}")


def region_members(grid: GridSpec, region: RegionId) -> list[TargetIndex]:
    return [t for t in grid.indices() if region_of(t) is region]


@dataclass(frozen=True)
class Block:
    condition: Condition
    targets: tuple[TargetIndex, ...]

    def to_json(self) -> dict:
        return {
            "condition": self.condition.to_json(),
            "targets": [{"ix": t.ix, "iy": t.iy} for t in self.targets],
        }

    @staticmethod
    def from_json(doc: dict) -> "Block":
        return Block(
            condition=Condition.from_json(doc["condition"]),
            targets=tuple(TargetIndex(int(t["ix"]), int(t["iy"])) for t in doc["targets"]),
        )


@dataclass(frozen=True)
class SessionPlan:
    participant_id: str
    participant_index: int
    seed: int
    blocks: tuple[Block, ...]

    @property
    def trial_count(self) -> int:
        return sum(len(b.targets) for b in self.blocks)

    def to_json(self) -> dict:
        return {
            "participant_id": self.participant_id,
            "participant_index": self.participant_index,
            "seed": self.seed,
            "blocks": [b.to_json() for b in self.blocks],
        }

    @staticmethod
    def from_json(doc: dict) -> "SessionPlan":
        return SessionPlan(
            participant_id=str(doc["participant_id"]),
            participant_index=int(doc["participant_index"]),
            seed=int(doc["seed"]),
            blocks=tuple(Block.from_json(b) for b in doc["blocks"]),
        )


def latin_square(levels: Sequence, row: int) -> list:
    """Row of the cyclic Latin square over the given levels."""
    n = len(levels)
    return [levels[(row + j) % n] for j in range(n)]


def _sample_block_targets(grid: GridSpec, rng: random.Random) -> tuple[TargetIndex, ...]:
    targets = [rng.choice(region_members(grid, region)) for region in RegionId]
    rng.shuffle(targets)
    return tuple(targets)


def generate_plans(
    participants: int = PARTICIPANTS_PER_SQUARE,
    seed: int = 0,
    densities: Sequence[int] = DENSITIES,
    pad_square: bool = False,
) -> list[SessionPlan]:
    """Counterbalanced plans for a cohort, deterministic in the seed.

    The participant count must cover whole Latin squares for both factors
    (a multiple of 12 for the 3 x 4 design) unless pad_square allows a
    partially cycled remainder.
    """
    schemes = list(SCHEMES.values())
    if participants < 1:
        raise DesignError("need at least one participant")
    if participants % (len(densities) * len(schemes) or 1) != 0 and not pad_square:
        raise DesignError(
            f"{participants} participants cannot balance a "
            f"{len(densities)}x{len(schemes)} design; use a multiple of "
            f"{len(densities) * len(schemes)} or pad_square=True"
        )

    rng = random.Random(seed)
    density_levels = list(densities)
    scheme_levels = list(schemes)
    rng.shuffle(density_levels)
    rng.shuffle(scheme_levels)

    grids = {d: make_grid(d) for d in densities}
    plans: list[SessionPlan] = []
    for p in range(participants):
        plan_seed = rng.getrandbits(64)
        plan_rng = random.Random(plan_seed)
        density_order = latin_square(density_levels, p % len(density_levels))
        scheme_order = latin_square(scheme_levels, p % len(scheme_levels))
        blocks = tuple(
            Block(
                condition=Condition(d, s),
                targets=_sample_block_targets(grids[d], plan_rng),
            )
            for d in density_order
            for s in scheme_order
        )
        plans.append(
            SessionPlan(
                participant_id=f"P{p + 1:02d}",
                participant_index=p,
                seed=plan_seed,
                blocks=blocks,
            )
        )
    return plans


def plans_to_json(plans: Sequence[SessionPlan], seed: int | None = None) -> dict:
    doc: dict = {"participants": [p.to_json() for p in plans]}
    if seed is not None:
        doc["seed"] = seed
    return doc


def plans_from_json(doc: dict) -> list[SessionPlan]:
    return [SessionPlan.from_json(p) for p in doc["participants"]]


def save_plans(path: str, plans: Sequence[SessionPlan], seed: int | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(plans_to_json(plans, seed), fh, indent=2)


def load_plans(path: str) -> list[SessionPlan]:
    with open(path, encoding="utf-8") as fh:
        return plans_from_json(json.load(fh))
