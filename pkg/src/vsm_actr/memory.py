"""Symbolic memory: chunks, slots, and single-chunk buffers.

A chunk is an immutable, ordered slot -> value record. Slot values are either
an interned symbol (str), a number (float), or nil (None). Buffers hold at
most one chunk; a delayed write (the imaginal request pattern) clears the
visible content immediately and exposes the new chunk only once the delay has
elapsed, which is how working-memory latency enters the simulation clock.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Optional, Tuple, Union

from .errors import BufferBusy, DuplicateSlot, MissingRequiredSlot

SlotValue = Union[str, float, None]


class ChunkType(Enum):
    DECISION = "decision"
    DECISION_MERITS = "decision_merits"
    GOAL = "goal"


class BufferName(Enum):
    GOAL = "GOAL"
    IMAGINAL = "IMAGINAL"
    RETRIEVAL = "RETRIEVAL"


#: Slot inventory of a decision chunk. reduction-time and decision-state are
#: intrinsic; the remaining six capture the instance parameters, the chosen
#: section, and the resulting headcount cost.
REQUIRED_DECISION_SLOTS = (
    "reduction-time",
    "decision-state",
    "ct-pre",
    "ct-asm",
    "oee-pre",
    "oee-asm",
    "chosen-section",
    "headcount-delta",
)

DECISION_STATES = ("novice", "intermediate", "expert")


def sym(name: str) -> str:
    """Intern a symbol so slot comparisons are cheap identity checks."""
    return sys.intern(name)


def _normalize(value: SlotValue) -> SlotValue:
    if isinstance(value, bool):
        raise TypeError("slot values are symbols, numbers, or nil")
    if isinstance(value, int):
        return float(value)
    if isinstance(value, str):
        return sym(value)
    return value


@dataclass(frozen=True)
class Chunk:
    """Immutable typed slot record. Construct through :func:`make_chunk`."""

    chunk_type: ChunkType
    slots: Tuple[Tuple[str, SlotValue], ...]

    def get(self, name: str, default: SlotValue = None) -> SlotValue:
        for slot, value in self.slots:
            if slot == name:
                return value
        return default

    def has_slot(self, name: str) -> bool:
        return any(slot == name for slot, _ in self.slots)

    @property
    def slot_names(self) -> Tuple[str, ...]:
        return tuple(slot for slot, _ in self.slots)

    def with_updates(self, updates: Iterable[Tuple[str, SlotValue]]) -> "Chunk":
        """Return a copy with the given slots replaced (or appended)."""
        pending = {name: _normalize(value) for name, value in updates}
        new_slots = []
        for slot, value in self.slots:
            if slot in pending:
                new_slots.append((slot, pending.pop(slot)))
            else:
                new_slots.append((slot, value))
        for slot, value in pending.items():
            new_slots.append((sym(slot), value))
        return Chunk(self.chunk_type, tuple(new_slots))


def make_chunk(chunk_type: ChunkType, slot_pairs: Iterable[Tuple[str, SlotValue]]) -> Chunk:
    """Build a chunk, enforcing slot uniqueness and per-type arity rules.

    Decision chunks must carry exactly the eight slots listed in
    :data:`REQUIRED_DECISION_SLOTS`, and decision-state must be one of
    novice/intermediate/expert (or nil while still undecided).
    """
    slots = []
    seen = set()
    for name, value in slot_pairs:
        if name in seen:
            raise DuplicateSlot(f"duplicate slot {name!r}")
        seen.add(name)
        slots.append((sym(name), _normalize(value)))

    if chunk_type is ChunkType.DECISION:
        required = set(REQUIRED_DECISION_SLOTS)
        missing = required - seen
        extra = seen - required
        if missing or extra:
            raise MissingRequiredSlot(
                "decision chunk requires exactly the slots "
                f"{sorted(required)}; missing={sorted(missing)} unexpected={sorted(extra)}"
            )
        state = dict(slots)["decision-state"]
        if state is not None and state not in DECISION_STATES:
            raise ValueError(f"decision-state must be one of {DECISION_STATES}, got {state!r}")

    return Chunk(chunk_type, tuple(slots))


@dataclass(frozen=True)
class Buffer:
    """Single-chunk workspace. Times are integer simulation milliseconds."""

    name: BufferName
    content: Optional[Chunk] = None
    pending: Optional[Tuple[Chunk, int]] = None  # (chunk, ready_ms)
    busy_until_ms: int = 0


def to_ms(seconds: float) -> int:
    return int(round(seconds * 1000))


def buffer_write(buffer: Buffer, chunk: Chunk, now: float, delay: float = 0.0) -> Buffer:
    """Write ``chunk`` into ``buffer`` at simulated time ``now`` (seconds).

    With ``delay`` 0 the chunk is visible immediately. With a positive delay
    the visible content is cleared now and the chunk becomes visible at
    ``now + delay`` (the caller schedules the completion event); the buffer is
    busy until then.
    """
    now_ms = to_ms(now)
    delay_ms = to_ms(delay)
    if buffer.busy_until_ms > now_ms:
        raise BufferBusy(
            f"{buffer.name.value} busy until {buffer.busy_until_ms / 1000:.3f}s, write at {now:.3f}s"
        )
    if delay_ms == 0:
        return replace(buffer, content=chunk, pending=None, busy_until_ms=now_ms)
    return replace(buffer, content=None, pending=(chunk, now_ms + delay_ms), busy_until_ms=now_ms + delay_ms)


def commit_pending(buffer: Buffer, now_ms: int) -> Buffer:
    """Apply a pending write whose delay has elapsed; no-op otherwise."""
    if buffer.pending is None:
        return buffer
    chunk, ready_ms = buffer.pending
    if now_ms < ready_ms:
        return buffer
    return replace(buffer, content=chunk, pending=None)
