"""Serial wire protocol to the wristband controller, plus a mock device.

Frames are fire-and-forget: the controller self-times each pulse, so gaps
in a pattern are just host-side silence. The link is open-loop (no acks)
at 115200 baud, 8N1. The mock device records an actuation timeline under
an injectable clock so playback schedules can be tested deterministically.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from typing import Protocol

from .encoding import Motor, PulseTrain

SYNC_BYTE = 0xA5
OPCODE_PULSE = 0x01
FRAME_LENGTH = 7
MAX_DURATION_MS = 0xFFFF

MOTOR_IDS = {Motor.TOP: 0, Motor.BOTTOM: 1, Motor.LEFT: 2, Motor.RIGHT: 3}
MOTORS_BY_ID = {v: k for k, v in MOTOR_IDS.items()}


class FrameError(ValueError):
    """Malformed or corrupted wire frame."""


class FrameRangeError(ValueError):
    """Pulse parameters do not fit the frame fields."""


class TransportError(RuntimeError):
    """Device write failed mid-playback.

    failed_index is the event that could not be written; events_completed
    counts the frames that went out before it.
    """

    def __init__(self, failed_index: int, cause: Exception):
        self.failed_index = failed_index
        self.events_completed = failed_index
        super().__init__(f"write failed at event {failed_index} ({cause})")


def serialize_frame(motor: Motor, duration_ms: int, intensity: float) -> bytes:
    """Pack one pulse command into the fixed 7-byte frame."""
    duration = int(duration_ms)
    if duration < 1 or duration > MAX_DURATION_MS:
        raise FrameRangeError(f"duration {duration_ms} ms outside 1..{MAX_DURATION_MS}")
    if not 0.0 < intensity <= 1.0:
        raise FrameRangeError(f"intensity {intensity} outside (0, 1]")
    payload = bytes(
        (
            SYNC_BYTE,
            OPCODE_PULSE,
            MOTOR_IDS[motor],
            duration & 0xFF,
            (duration >> 8) & 0xFF,
            round(intensity * 255),
        )
    )
    checksum = 0
    for b in payload:
        checksum ^= b
    return payload + bytes((checksum,))


@dataclass(frozen=True)
class ParsedFrame:
    motor: Motor
    duration_ms: int
    intensity_byte: int

    @property
    def intensity(self) -> float:
        return self.intensity_byte / 255.0


def parse_frame(data: bytes) -> ParsedFrame:
    """Validate and unpack a 7-byte frame."""
    if len(data) != FRAME_LENGTH:
        raise FrameError(f"frame must be {FRAME_LENGTH} bytes, got {len(data)}")
    checksum = 0
    for b in data[:-1]:
        checksum ^= b
    if checksum != data[-1]:
        raise FrameError(f"checksum mismatch: computed {checksum:#04x}, got {data[-1]:#04x}")
    if data[0] != SYNC_BYTE:
        raise FrameError(f"bad sync byte {data[0]:#04x}")
    if data[1] != OPCODE_PULSE:
        raise FrameError(f"unknown opcode {data[1]:#04x}")
    if data[2] not in MOTORS_BY_ID:
        raise FrameError(f"motor id {data[2]} out of range")
    duration = data[3] | (data[4] << 8)
    if duration < 1:
        raise FrameError("duration must be >= 1 ms")
    return ParsedFrame(MOTORS_BY_ID[data[2]], duration, data[5])


class Clock(Protocol):
    def now_ms(self) -> float: ...

    def sleep_until_ms(self, deadline_ms: float) -> None: ...


class MonotonicClock:
    """Wall-clock time source; origin at construction."""

    def __init__(self) -> None:
        self._t0 = time.monotonic()

    def now_ms(self) -> float:
        return (time.monotonic() - self._t0) * 1000.0

    def sleep_until_ms(self, deadline_ms: float) -> None:
        remaining = deadline_ms - self.now_ms()
        if remaining > 0:
            time.sleep(remaining / 1000.0)


class VirtualClock:
    """Discrete-event clock: sleeping jumps time forward instantly."""

    def __init__(self, start_ms: float = 0.0) -> None:
        self._now = start_ms

    def now_ms(self) -> float:
        return self._now

    def sleep_until_ms(self, deadline_ms: float) -> None:
        if deadline_ms > self._now:
            self._now = deadline_ms

    def advance_ms(self, delta_ms: float) -> None:
        if delta_ms < 0:
            raise ValueError("cannot rewind a virtual clock")
        self._now += delta_ms


class Device(Protocol):
    def write(self, frame: bytes) -> None: ...

    def close(self) -> None: ...


@dataclass
class TimelineEntry:
    host_time_ms: float
    frame: ParsedFrame

    def to_json(self) -> dict:
        return {
            "motor": self.frame.motor.value,
            "duration_ms": self.frame.duration_ms,
            "intensity": self.frame.intensity,
            "host_time_ms": self.host_time_ms,
        }


@dataclass
class ActuationTimeline:
    entries: list[TimelineEntry] = field(default_factory=list)
    cancelled: bool = False

    def __post_init__(self) -> None:
        times = [e.host_time_ms for e in self.entries]
        if times != sorted(times):
            raise ValueError("timeline entries must be nondecreasing in time")

    def to_json(self) -> list[dict]:
        return [e.to_json() for e in self.entries]


class MockDevice:
    """Records validated frames against a clock instead of a serial port.

    Write failures can be injected by frame index to exercise transport
    error paths.
    """

    def __init__(self, clock: Clock, fail_at: set[int] | None = None) -> None:
        self.clock = clock
        self.timeline: list[TimelineEntry] = []
        self._fail_at = fail_at or set()
        self._writes = 0
        self.closed = False

    def write(self, frame: bytes) -> None:
        if self.closed:
            raise OSError("device closed")
        index = self._writes
        self._writes += 1
        if index in self._fail_at:
            raise OSError(f"injected write failure at frame {index}")
        self.timeline.append(TimelineEntry(self.clock.now_ms(), parse_frame(frame)))

    def close(self) -> None:
        self.closed = True

    def timeline_json(self) -> list[dict]:
        return [e.to_json() for e in self.timeline]


class SerialPortDevice:
    """Raw byte writer on a POSIX serial device node, configured 115200 8N1."""

    def __init__(self, path: str) -> None:
        self.path = path
        self._fh = open(path, "wb", buffering=0)
        self._configure()

    def _configure(self) -> None:
        try:
            import termios

            fd = self._fh.fileno()
            attrs = termios.tcgetattr(fd)
            attrs[0] = 0                                # iflag: raw
            attrs[1] = 0                                # oflag: raw
            attrs[2] = termios.CS8 | termios.CREAD | termios.CLOCAL
            attrs[3] = 0                                # lflag: raw
            attrs[4] = attrs[5] = termios.B115200
            termios.tcsetattr(fd, termios.TCSANOW, attrs)
        except (ImportError, OSError):
            # Not a tty (e.g. a pipe in tests) or non-POSIX platform: the
            # port must be preconfigured externally.
            pass

    def write(self, frame: bytes) -> None:
        self._fh.write(frame)

    def close(self) -> None:
        self._fh.close()


def open_device(spec: str, clock: Clock | None = None) -> Device:
    """Open "mock" or a serial device path."""
    if spec == "mock":
        return MockDevice(clock or MonotonicClock())
    return SerialPortDevice(spec)


def play(
    train: PulseTrain,
    device: Device,
    clock: Clock,
    cancel: threading.Event | None = None,
) -> ActuationTimeline:
    """Emit one frame per pulse at its scheduled start, relative to now.

    Returns the emitted schedule; under a virtual clock the recorded times
    equal the scheduled starts exactly. Cancellation is honored between
    events only (a pulse already commanded always completes device-side).
    Write failures raise TransportError carrying the failing event index.
    """
    t0 = clock.now_ms()
    timeline = ActuationTimeline()
    end_ms = 0.0
    for i, event in enumerate(train.events):
        if cancel is not None and cancel.is_set():
            timeline.cancelled = True
            return timeline
        clock.sleep_until_ms(t0 + event.start_ms)
        frame = serialize_frame(event.motor, round(event.duration_ms), event.intensity)
        try:
            device.write(frame)
        except OSError as exc:
            raise TransportError(i, exc) from exc
        timeline.entries.append(TimelineEntry(clock.now_ms() - t0, parse_frame(frame)))
        end_ms = max(end_ms, event.start_ms + event.duration_ms)
    clock.sleep_until_ms(t0 + end_ms)
    return timeline
