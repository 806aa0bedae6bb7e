"""Compile target coordinates into vibrotactile pulse trains, and back.

Each axis of a target index becomes a short pattern on the wristband's
opposed motor pair: a counted burst of fixed-length pulses (discrete code)
or a single pulse whose duration grows with distance (continuous code).
The vertical pattern plays first, then a long pause, then the horizontal
pattern. A zero coordinate is a brief double tap on both motors of the axis.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from .grid import BoundsError, GridSpec, TargetIndex, make_grid


class Motor(enum.Enum):
    TOP = "top"
    BOTTOM = "bottom"
    LEFT = "left"
    RIGHT = "right"

    @property
    def opposite(self) -> "Motor":
        return _OPPOSITE[self]

    @property
    def is_vertical(self) -> bool:
        return self in (Motor.TOP, Motor.BOTTOM)


_OPPOSITE = {
    Motor.TOP: Motor.BOTTOM,
    Motor.BOTTOM: Motor.TOP,
    Motor.LEFT: Motor.RIGHT,
    Motor.RIGHT: Motor.LEFT,
}


class Axis(enum.Enum):
    VERTICAL = "vertical"
    HORIZONTAL = "horizontal"

    @property
    def positive_motor(self) -> Motor:
        return Motor.TOP if self is Axis.VERTICAL else Motor.RIGHT

    @property
    def negative_motor(self) -> Motor:
        return Motor.BOTTOM if self is Axis.VERTICAL else Motor.LEFT

    @property
    def first_motor(self) -> Motor:
        """Motor that leads the axis's zero double-pulse."""
        return Motor.TOP if self is Axis.VERTICAL else Motor.LEFT

    @property
    def motors(self) -> tuple[Motor, Motor]:
        return (self.positive_motor, self.negative_motor)


class AxisCode(enum.Enum):
    DISCRETE = "discrete"
    CONTINUOUS = "continuous"


@dataclass(frozen=True)
class EncodingScheme:
    """Per-axis choice of discrete vs continuous code, vertical named first."""

    vertical: AxisCode
    horizontal: AxisCode

    @property
    def code(self) -> str:
        v = "D" if self.vertical is AxisCode.DISCRETE else "C"
        h = "D" if self.horizontal is AxisCode.DISCRETE else "C"
        return f"V{v}H{h}"

    def axis_code(self, axis: Axis) -> AxisCode:
        return self.vertical if axis is Axis.VERTICAL else self.horizontal

    @staticmethod
    def from_code(code: str) -> "EncodingScheme":
        try:
            return SCHEMES[code.upper()]
        except KeyError:
            raise ValueError(f"unknown encoding scheme {code!r}") from None


VDHD = EncodingScheme(AxisCode.DISCRETE, AxisCode.DISCRETE)
VDHC = EncodingScheme(AxisCode.DISCRETE, AxisCode.CONTINUOUS)
VCHD = EncodingScheme(AxisCode.CONTINUOUS, AxisCode.DISCRETE)
VCHC = EncodingScheme(AxisCode.CONTINUOUS, AxisCode.CONTINUOUS)

SCHEMES: dict[str, EncodingScheme] = {s.code: s for s in (VDHD, VDHC, VCHD, VCHC)}


@dataclass(frozen=True)
class EncodingParams:
    """Timing constants of the pulse patterns, in milliseconds."""

    discrete_pulse_ms: float = 200.0
    discrete_gap_ms: float = 120.0
    continuous_min_ms: float = 200.0
    continuous_max_ms: float = 1300.0
    inter_axis_gap_ms: float = 800.0
    zero_pulse_ms: float = 120.0
    zero_gap_ms: float = 40.0
    intensity: float = 1.0

    def __post_init__(self) -> None:
        durations = (
            self.discrete_pulse_ms,
            self.discrete_gap_ms,
            self.continuous_min_ms,
            self.continuous_max_ms,
            self.inter_axis_gap_ms,
            self.zero_pulse_ms,
            self.zero_gap_ms,
        )
        if any(d <= 0 for d in durations):
            raise ValueError("all pattern durations must be positive")
        if self.continuous_min_ms >= self.continuous_max_ms:
            raise ValueError("continuous_min_ms must be below continuous_max_ms")
        if not 0.0 < self.intensity <= 1.0:
            raise ValueError(f"intensity must be in (0, 1], got {self.intensity}")


DEFAULT_PARAMS = EncodingParams()


@dataclass(frozen=True)
class PulseEvent:
    """One motor actuation: start time relative to train start, in ms."""

    motor: Motor
    start_ms: float
    duration_ms: float
    intensity: float = 1.0

    def __post_init__(self) -> None:
        if self.start_ms < 0:
            raise ValueError("start_ms must be nonnegative")
        if self.duration_ms <= 0:
            raise ValueError("duration_ms must be positive")
        if not 0.0 < self.intensity <= 1.0:
            raise ValueError("intensity must be in (0, 1]")

    @property
    def end_ms(self) -> float:
        return self.start_ms + self.duration_ms


@dataclass(frozen=True)
class PulseTrain:
    """Ordered, timed sequence of pulses constituting one stimulus."""

    events: tuple[PulseEvent, ...]
    scheme: EncodingScheme
    params: EncodingParams = DEFAULT_PARAMS

    def __post_init__(self) -> None:
        starts = [e.start_ms for e in self.events]
        if starts != sorted(starts):
            raise ValueError("events must be ordered by start_ms")


class EmptyTrainError(ValueError):
    """Operation needs at least one event."""


class DecodeError(ValueError):
    """Pulse train does not parse back to a target index."""

    def __init__(self, segment: str, message: str):
        self.segment = segment
        super().__init__(f"{segment}: {message}")


def continuous_duration_ms(magnitude: int, max_index: int, params: EncodingParams = DEFAULT_PARAMS) -> float:
    """Pulse duration for a coordinate magnitude under the continuous code.

    Linear in the magnitude, anchored so the frame edge (|value| = max_index)
    gets the longest pulse and the origin itself would get the shortest; the
    origin is actually sent as the double-pulse pattern, so the shortest
    duration acts as a decode bin only.
    """
    if magnitude < 0 or magnitude > max_index:
        raise BoundsError(f"magnitude {magnitude} outside 0..{max_index}")
    span = params.continuous_max_ms - params.continuous_min_ms
    return params.continuous_min_ms + (magnitude / max_index) * span


def continuous_bins_ms(max_index: int, params: EncodingParams = DEFAULT_PARAMS) -> tuple[float, ...]:
    """Decoder quantization lattice: durations for magnitudes 0..max_index."""
    return tuple(continuous_duration_ms(k, max_index, params) for k in range(max_index + 1))


def _zero_events(axis: Axis, params: EncodingParams) -> list[PulseEvent]:
    first = axis.first_motor
    step = params.zero_pulse_ms + params.zero_gap_ms
    return [
        PulseEvent(first, 0.0, params.zero_pulse_ms, params.intensity),
        PulseEvent(first.opposite, step, params.zero_pulse_ms, params.intensity),
    ]


def encode_axis(
    value: int,
    axis: Axis,
    code: AxisCode,
    max_index: int,
    params: EncodingParams = DEFAULT_PARAMS,
) -> list[PulseEvent]:
    """Pulse pattern for one signed coordinate, relative to segment start."""
    if max_index < 1:
        raise ValueError("max_index must be >= 1")
    if abs(value) > max_index:
        raise BoundsError(f"value {value} outside +/-{max_index}")
    if value == 0:
        return _zero_events(axis, params)

    motor = axis.positive_motor if value > 0 else axis.negative_motor
    if code is AxisCode.DISCRETE:
        step = params.discrete_pulse_ms + params.discrete_gap_ms
        return [
            PulseEvent(motor, i * step, params.discrete_pulse_ms, params.intensity)
            for i in range(abs(value))
        ]
    duration = continuous_duration_ms(abs(value), max_index, params)
    return [PulseEvent(motor, 0.0, duration, params.intensity)]


def _shift(events: Iterable[PulseEvent], offset_ms: float) -> list[PulseEvent]:
    return [replace(e, start_ms=e.start_ms + offset_ms) for e in events]


def encode_target(
    target: TargetIndex,
    scheme: EncodingScheme,
    grid: GridSpec,
    params: EncodingParams = DEFAULT_PARAMS,
) -> PulseTrain:
    """Full stimulus: vertical pattern, inter-axis pause, horizontal pattern."""
    grid.require_in_bounds(target)
    vertical = encode_axis(target.iy, Axis.VERTICAL, scheme.vertical, grid.max_index, params)
    horizontal = encode_axis(target.ix, Axis.HORIZONTAL, scheme.horizontal, grid.max_index, params)
    gap_start = vertical[-1].end_ms + params.inter_axis_gap_ms
    events = tuple(vertical + _shift(horizontal, gap_start))
    return PulseTrain(events=events, scheme=scheme, params=params)


def train_duration_ms(train: PulseTrain) -> float:
    if not train.events:
        raise EmptyTrainError("train has no events")
    return max(e.end_ms for e in train.events)


def split_axis_segments(
    events: Sequence[PulseEvent], params: EncodingParams = DEFAULT_PARAMS
) -> tuple[list[PulseEvent], list[PulseEvent]]:
    """Split a train's events at the inter-axis silence.

    The cut falls where the silence between consecutive events exceeds the
    midpoint between the widest intra-pattern gap and the inter-axis pause,
    which tolerates sizeable duration jitter on either side.
    """
    if not events:
        raise DecodeError("split", "empty train")
    threshold = (params.inter_axis_gap_ms + max(params.discrete_gap_ms, params.zero_gap_ms)) / 2.0
    cuts = [
        i + 1
        for i in range(len(events) - 1)
        if events[i + 1].start_ms - events[i].end_ms > threshold
    ]
    if len(cuts) != 1:
        raise DecodeError("split", f"expected one inter-axis silence, found {len(cuts)}")
    return list(events[: cuts[0]]), list(events[cuts[0] :])


def decode_axis_segment(
    segment: Sequence[PulseEvent],
    axis: Axis,
    code: AxisCode,
    max_index: int,
    params: EncodingParams = DEFAULT_PARAMS,
) -> int:
    """Signed coordinate for one axis segment.

    Magnitude comes from the pulse count (discrete) or the nearest entry of
    the duration lattice (continuous, ties toward the smaller magnitude);
    sign from the motor; an opposite-motor double pulse reads as zero.
    """
    name = axis.value
    if not segment:
        raise DecodeError(name, "empty segment")
    motors = {e.motor for e in segment}
    if not motors <= set(axis.motors):
        raise DecodeError(name, f"foreign motor(s) {sorted(m.value for m in motors - set(axis.motors))}")
    if len(segment) == 2 and len(motors) == 2:
        return 0
    if len(motors) != 1:
        raise DecodeError(name, "mixed motors do not form a zero double-pulse")
    motor = segment[0].motor
    sign = 1 if motor is axis.positive_motor else -1

    if code is AxisCode.DISCRETE:
        count = len(segment)
        if count > max_index:
            raise DecodeError(name, f"pulse count {count} exceeds max index {max_index}")
        return sign * count

    if len(segment) != 1:
        raise DecodeError(name, f"continuous segment must be a single pulse, got {len(segment)}")
    magnitude = nearest_bin(segment[0].duration_ms, max_index, params)
    return sign * magnitude


def nearest_bin(duration_ms: float, max_index: int, params: EncodingParams = DEFAULT_PARAMS) -> int:
    """Magnitude whose lattice duration is closest; ties pick the smaller."""
    best_k = 0
    best_err = abs(duration_ms - continuous_duration_ms(0, max_index, params))
    for k in range(1, max_index + 1):
        err = abs(duration_ms - continuous_duration_ms(k, max_index, params))
        if err < best_err:
            best_k, best_err = k, err
    return best_k


def decode_train(
    train: PulseTrain,
    scheme: EncodingScheme,
    grid: GridSpec,
    params: EncodingParams = DEFAULT_PARAMS,
) -> TargetIndex:
    """Exact inverse of encode_target for well-formed (possibly jittered) trains."""
    vertical, horizontal = split_axis_segments(train.events, params)
    iy = decode_axis_segment(vertical, Axis.VERTICAL, scheme.vertical, grid.max_index, params)
    ix = decode_axis_segment(horizontal, Axis.HORIZONTAL, scheme.horizontal, grid.max_index, params)
    return grid.require_in_bounds(TargetIndex(ix, iy))


def train_to_json(train: PulseTrain, grid: GridSpec, target: TargetIndex) -> dict:
    """Serialize per the shared pulse-train document schema."""
    return {
        "scheme": train.scheme.code,
        "density": grid.density,
        "frame_cm": grid.frame_size_cm,
        "target": {"ix": target.ix, "iy": target.iy},
        "events": [
            {
                "motor": e.motor.value,
                "start_ms": e.start_ms,
                "duration_ms": e.duration_ms,
                "intensity": e.intensity,
            }
            for e in train.events
        ],
    }


def train_from_json(doc: dict) -> tuple[PulseTrain, GridSpec, TargetIndex]:
    grid = make_grid(int(doc["density"]), float(doc["frame_cm"]))
    target = TargetIndex(int(doc["target"]["ix"]), int(doc["target"]["iy"]))
    scheme = EncodingScheme.from_code(doc["scheme"])
    events = tuple(
        PulseEvent(
            motor=Motor(e["motor"]),
            start_ms=float(e["start_ms"]),
            duration_ms=float(e["duration_ms"]),
            intensity=float(e["intensity"]),
        )
        for e in doc["events"]
    )
    return PulseTrain(events=events, scheme=scheme), grid, target
