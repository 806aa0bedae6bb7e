"""Live experiment session: trial state machine, error classification,
and the append-only trial log.

A trial walks a fixed protocol: start, stimulus playback, at most one
replay, the participant's spoken interpretation, the experimenter's
selection click, finalize. The timer runs from the end of the first
playback to the selection; a 2-second hold separates consecutive trials.
"""

from __future__ import annotations

import csv
import enum
import json
import math
import os
import threading
from dataclasses import dataclass
from typing import Callable, IO, Iterable, Sequence

from .device import Clock, Device, MonotonicClock, play
from .encoding import DEFAULT_PARAMS, EncodingParams, encode_target, train_duration_ms
from .grid import GridSpec, TargetIndex, index_to_position, make_grid, nearest_target
from .plan import Condition, SessionPlan

INTER_TRIAL_HOLD_MS = 2000.0


class ProtocolOrderError(RuntimeError):
    """Trial API called outside the allowed order."""


class ReplayLimitError(ProtocolOrderError):
    """The single allowed stimulus replay was already used."""


class PersistenceError(RuntimeError):
    """Trial log could not be written."""


class IntegrityError(RuntimeError):
    """Reloaded log does not match the session plan."""


class Outcome(enum.Enum):
    CORRECT = "correct"
    INTERPRETATION_ERROR = "interpretation_error"
    POSITIONAL_ERROR = "positional_error"


class TrialPhase(enum.Enum):
    IDLE = "idle"
    AWAITING_STIMULUS = "awaiting_stimulus"
    AWAITING_INTERPRETATION = "awaiting_interpretation"
    AWAITING_SELECTION = "awaiting_selection"
    AWAITING_FINALIZE = "awaiting_finalize"
    COMPLETE = "complete"


def classify_error(
    target: TargetIndex,
    interpretation: TargetIndex | None,
    selection_point: tuple[float, float],
    grid: GridSpec,
) -> Outcome:
    """Outcome of one trial.

    A wrong spoken interpretation is an interpretation error regardless of
    where the hand landed; otherwise the trial succeeds exactly when the
    selection point lies within the target's circle (the radius test the
    study scored by), and fails positionally when it does not.
    """
    if interpretation is None:
        raise ProtocolOrderError("interpretation must be recorded before classification")
    if interpretation != target:
        return Outcome.INTERPRETATION_ERROR
    cx, cy = index_to_position(grid, target)
    distance = math.hypot(selection_point[0] - cx, selection_point[1] - cy)
    if distance > grid.target_radius_cm:
        return Outcome.POSITIONAL_ERROR
    return Outcome.CORRECT


@dataclass(frozen=True)
class TrialRecord:
    participant_id: str
    block_index: int
    trial_index: int
    condition: Condition
    target: TargetIndex
    stimulus_repeats: int
    interpretation: TargetIndex | None
    selection_point: tuple[float, float]
    selected_target: TargetIndex
    elapsed_ms: float
    outcome: Outcome

    def to_json(self) -> dict:
        return {
            "participant_id": self.participant_id,
            "block_index": self.block_index,
            "trial_index": self.trial_index,
            "condition": self.condition.to_json(),
            "target": {"ix": self.target.ix, "iy": self.target.iy},
            "stimulus_repeats": self.stimulus_repeats,
            "interpretation": (
                None
                if self.interpretation is None
                else {"ix": self.interpretation.ix, "iy": self.interpretation.iy}
            ),
            "selection_point": {"x_cm": self.selection_point[0], "y_cm": self.selection_point[1]},
            "selected_target": {"ix": self.selected_target.ix, "iy": self.selected_target.iy},
            "elapsed_ms": self.elapsed_ms,
            "outcome": self.outcome.value,
        }

    @staticmethod
    def from_json(doc: dict) -> "TrialRecord":
        interp = doc.get("interpretation")
        return TrialRecord(
            participant_id=str(doc["participant_id"]),
            block_index=int(doc["block_index"]),
            trial_index=int(doc["trial_index"]),
            condition=Condition.from_json(doc["condition"]),
            target=TargetIndex(int(doc["target"]["ix"]), int(doc["target"]["iy"])),
            stimulus_repeats=int(doc["stimulus_repeats"]),
            interpretation=None if interp is None else TargetIndex(int(interp["ix"]), int(interp["iy"])),
            selection_point=(float(doc["selection_point"]["x_cm"]), float(doc["selection_point"]["y_cm"])),
            selected_target=TargetIndex(
                int(doc["selected_target"]["ix"]), int(doc["selected_target"]["iy"])
            ),
            elapsed_ms=float(doc["elapsed_ms"]),
            outcome=Outcome(doc["outcome"]),
        )


CSV_COLUMNS = (
    "participant_id",
    "block_index",
    "trial_index",
    "density",
    "scheme",
    "target_ix",
    "target_iy",
    "stimulus_repeats",
    "interpretation_ix",
    "interpretation_iy",
    "selection_x_cm",
    "selection_y_cm",
    "selected_ix",
    "selected_iy",
    "elapsed_ms",
    "outcome",
)


def export_csv(records: Iterable[TrialRecord], fh: IO[str]) -> int:
    """Write one flat row per trial; returns the row count."""
    writer = csv.writer(fh)
    writer.writerow(CSV_COLUMNS)
    count = 0
    for r in records:
        writer.writerow(
            (
                r.participant_id,
                r.block_index,
                r.trial_index,
                r.condition.density,
                r.condition.scheme.code,
                r.target.ix,
                r.target.iy,
                r.stimulus_repeats,
                "" if r.interpretation is None else r.interpretation.ix,
                "" if r.interpretation is None else r.interpretation.iy,
                r.selection_point[0],
                r.selection_point[1],
                r.selected_target.ix,
                r.selected_target.iy,
                r.elapsed_ms,
                r.outcome.value,
            )
        )
        count += 1
    return count


class TrialLog:
    """Append-only JSONL log, one trial per line, flushed per append."""

    def __init__(self, path: str):
        self.path = path
        self._fh = open(path, "a", encoding="utf-8")
        self._count = sum(1 for _ in load_trial_log(path)[0]) if os.path.getsize(path) else 0

    def append(self, record: TrialRecord) -> int:
        """Append one record; returns its zero-based log position."""
        try:
            self._fh.write(json.dumps(record.to_json()) + "\n")
            self._fh.flush()
            os.fsync(self._fh.fileno())
        except OSError as exc:
            raise PersistenceError(f"cannot append to {self.path}: {exc}") from exc
        position = self._count
        self._count += 1
        return position

    def close(self) -> None:
        self._fh.close()


def load_trial_log(path: str) -> tuple[list[TrialRecord], list[str]]:
    """Read a trial log, tolerating a torn final line.

    A final line that does not parse is dropped with a warning (interrupted
    write); a malformed line elsewhere raises, since that means real
    corruption rather than a crash mid-append.
    """
    records: list[TrialRecord] = []
    warnings: list[str] = []
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            records.append(TrialRecord.from_json(json.loads(line)))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            if i == len(lines) - 1:
                warnings.append(f"dropped torn final line {i + 1}: {exc}")
            else:
                raise PersistenceError(f"corrupt log line {i + 1} in {path}: {exc}") from exc
    return records, warnings


def resume_session_log(plan: SessionPlan, path: str) -> tuple[list[TrialRecord], list[str]]:
    """Load a log and verify it matches the plan's trial order."""
    records, warnings = load_trial_log(path)
    flat = [(b, t, block.condition, target)
            for b, block in enumerate(plan.blocks)
            for t, target in enumerate(block.targets)]
    if len(records) > len(flat):
        raise IntegrityError(f"log has {len(records)} trials but plan only {len(flat)}")
    for r, (b, t, condition, target) in zip(records, flat):
        if (r.block_index, r.trial_index) != (b, t) or r.condition != condition or r.target != target:
            raise IntegrityError(
                f"log record {r.block_index}/{r.trial_index} does not match plan trial {b}/{t}"
            )
    return records, warnings


EventCallback = Callable[[dict], None]


class ExperimentSession:
    """Drives one participant's planned session against a device.

    All transitions are serialized through an internal lock; observers
    receive event dicts describing each transition.
    """

    def __init__(
        self,
        plan: SessionPlan,
        device: Device,
        clock: Clock | None = None,
        params: EncodingParams = DEFAULT_PARAMS,
        log: TrialLog | None = None,
        inter_trial_hold_ms: float = INTER_TRIAL_HOLD_MS,
    ):
        self.plan = plan
        self.device = device
        self.clock = clock or MonotonicClock()
        self.params = params
        self.log = log
        self.inter_trial_hold_ms = inter_trial_hold_ms
        self.records: list[TrialRecord] = []
        self.block_index = 0
        self.trial_index = 0
        self.phase = TrialPhase.IDLE
        self._grids = {b.condition.density: make_grid(b.condition.density) for b in plan.blocks}
        self._hold_until_ms = self.clock.now_ms()
        self._replay_used = False
        self._first_playback_end_ms: float | None = None
        self._interpretation: TargetIndex | None = None
        self._selection: tuple[float, float] | None = None
        self._selection_time_ms: float | None = None
        self._seq = 0
        self._lock = threading.RLock()
        self._listeners: list[EventCallback] = []

    # -- observers ---------------------------------------------------------

    def subscribe(self, callback: EventCallback) -> None:
        self._listeners.append(callback)

    def _emit(self, event_type: str, **data: object) -> None:
        event = {
            "seq": self._seq,
            "type": event_type,
            "at_ms": self.clock.now_ms(),
            "phase": self.phase.value,
            "block_index": self.block_index,
            "trial_index": self.trial_index,
            **data,
        }
        self._seq += 1
        for cb in self._listeners:
            cb(event)

    # -- current-trial accessors -------------------------------------------

    @property
    def complete(self) -> bool:
        return self.phase is TrialPhase.COMPLETE

    @property
    def current_condition(self) -> Condition:
        return self.plan.blocks[self.block_index].condition

    @property
    def current_target(self) -> TargetIndex:
        return self.plan.blocks[self.block_index].targets[self.trial_index]

    @property
    def current_grid(self) -> GridSpec:
        return self._grids[self.current_condition.density]

    @property
    def replay_used(self) -> bool:
        return self._replay_used

    def hold_remaining_ms(self) -> float:
        return max(0.0, self._hold_until_ms - self.clock.now_ms())

    def elapsed_ms(self) -> float | None:
        """Running timer value, or None before the first playback ends."""
        if self._first_playback_end_ms is None:
            return None
        end = self._selection_time_ms if self._selection_time_ms is not None else self.clock.now_ms()
        return end - self._first_playback_end_ms

    def _require(self, phase: TrialPhase, action: str) -> None:
        if self.phase is not phase:
            raise ProtocolOrderError(f"{action} not allowed in phase {self.phase.value}")

    # -- state machine -------------------------------------------------------

    def start_trial(self) -> None:
        with self._lock:
            self._require(TrialPhase.IDLE, "start_trial")
            if self.hold_remaining_ms() > 0:
                raise ProtocolOrderError(
                    f"inter-trial hold active for another {self.hold_remaining_ms():.0f} ms"
                )
            self._replay_used = False
            self._first_playback_end_ms = None
            self._interpretation = None
            self._selection = None
            self._selection_time_ms = None
            self.phase = TrialPhase.AWAITING_STIMULUS
            self._emit("trial_started", condition=self.current_condition.label)

    def _play_current(self, kind: str) -> None:
        train = encode_target(
            self.current_target, self.current_condition.scheme, self.current_grid, self.params
        )
        self._emit(f"{kind}_started", duration_ms=train_duration_ms(train))
        play(train, self.device, self.clock)
        if self._first_playback_end_ms is None:
            self._first_playback_end_ms = self.clock.now_ms()
        self._emit(f"{kind}_complete")

    def send_stimulus(self) -> None:
        with self._lock:
            self._require(TrialPhase.AWAITING_STIMULUS, "send_stimulus")
            self._play_current("playback")
            self.phase = TrialPhase.AWAITING_INTERPRETATION
            self._emit("awaiting_interpretation")

    def replay_stimulus(self) -> None:
        with self._lock:
            self._require(TrialPhase.AWAITING_INTERPRETATION, "replay_stimulus")
            if self._replay_used:
                raise ReplayLimitError("the one allowed replay was already used")
            self._replay_used = True
            self._play_current("replay")

    def record_interpretation(self, ix: int, iy: int) -> None:
        with self._lock:
            self._require(TrialPhase.AWAITING_INTERPRETATION, "record_interpretation")
            interpretation = TargetIndex(ix, iy)
            self.current_grid.require_in_bounds(interpretation)
            self._interpretation = interpretation
            self.phase = TrialPhase.AWAITING_SELECTION
            self._emit("interpretation_recorded", ix=ix, iy=iy)

    def record_selection(self, x_cm: float, y_cm: float) -> None:
        with self._lock:
            self._require(TrialPhase.AWAITING_SELECTION, "record_selection")
            self._selection = (float(x_cm), float(y_cm))
            self._selection_time_ms = self.clock.now_ms()
            self.phase = TrialPhase.AWAITING_FINALIZE
            self._emit("selection_recorded", x_cm=float(x_cm), y_cm=float(y_cm))

    def finalize(self) -> TrialRecord:
        with self._lock:
            self._require(TrialPhase.AWAITING_FINALIZE, "finalize")
            assert self._selection is not None and self._selection_time_ms is not None
            assert self._first_playback_end_ms is not None
            grid = self.current_grid
            outcome = classify_error(self.current_target, self._interpretation, self._selection, grid)
            nearest = nearest_target(grid, self._selection)
            record = TrialRecord(
                participant_id=self.plan.participant_id,
                block_index=self.block_index,
                trial_index=self.trial_index,
                condition=self.current_condition,
                target=self.current_target,
                stimulus_repeats=1 if self._replay_used else 0,
                interpretation=self._interpretation,
                selection_point=self._selection,
                selected_target=nearest.index,
                elapsed_ms=self._selection_time_ms - self._first_playback_end_ms,
                outcome=outcome,
            )
            self.records.append(record)
            if self.log is not None:
                self.log.append(record)
            self._emit(
                "trial_finalized",
                outcome=outcome.value,
                hit=nearest.hit and nearest.index == self.current_target,
                elapsed_ms=record.elapsed_ms,
            )
            self._advance()
            return record

    def _advance(self) -> None:
        self._hold_until_ms = self.clock.now_ms() + self.inter_trial_hold_ms
        block = self.plan.blocks[self.block_index]
        if self.trial_index + 1 < len(block.targets):
            self.trial_index += 1
            self.phase = TrialPhase.IDLE
        elif self.block_index + 1 < len(self.plan.blocks):
            self.block_index += 1
            self.trial_index = 0
            self.phase = TrialPhase.IDLE
            self._emit("block_complete")
        else:
            self.phase = TrialPhase.COMPLETE
            self._emit("session_complete")
