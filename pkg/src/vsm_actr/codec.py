"""Trace text serialization, parsing, and distillation into target codes.

The text layout is frozen against the golden reference trace: a timestamp
packed into an 8-character field, the module name padded to 23 characters,
then the event text (column 31). Utility updates render as a one-line reward
header followed by three-line per-production blocks. Numeric slot printouts
carry the single-precision shortest-repr form with a trailing space, exactly
as the original run emitted them.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np

from .engine import EventKind, Module, TraceEvent, TraceLog
from .errors import MalformedTimestamp, TruncatedUtilityBlock, VsmError
from .task import DecisionOutcome

_MODULE_NAMES = {m.value for m in Module}
_TS_RE = re.compile(r"^\d+\.\d{3}$")
_REWARD_RE = re.compile(r"^Utility updates with Reward = (\S+)   alpha = (\S+)$")
_UPDATE_HEAD_RE = re.compile(r"^Updating utility of production (\S+)$")
_UPDATE_MID_RE = re.compile(
    r"^U\(n-1\) = (\S+)   R\(n\) = (\S+) \[(\S+) - (\S+) seconds since selection\]$"
)
_UPDATE_TAIL_RE = re.compile(r"^U\(n\) = (\S+)$")


def _fmt_ts(time_ms: int) -> str:
    return f"{time_ms // 1000}.{time_ms % 1000:03d}"


def _fmt_f32(value: float) -> str:
    return str(np.float32(value))


def _fmt_f64(value: float) -> str:
    return repr(float(value))


def emit_lines(log: Union[TraceLog, Sequence[TraceEvent]]) -> List[str]:
    """Render a trace log as its canonical text lines."""
    lines: List[str] = []
    for event in log:
        if event.kind in (EventKind.SET_BUFFER_CHUNK, EventKind.PRODUCTION_FIRED,
                          EventKind.SET_BUFFER_CHUNK_FROM_SPEC):
            lines.append(f"{_fmt_ts(event.time_ms):<8}{event.module.value:<23}{event.payload['text']}")
        elif event.kind is EventKind.OUTPUT:
            lines.append(event.payload["text"])
        elif event.kind is EventKind.REWARD:
            lines.append(
                "Utility updates with Reward = "
                f"{_fmt_f64(event.payload['reward'])}   alpha = {_fmt_f64(event.payload['alpha'])}"
            )
        elif event.kind is EventKind.UTILITY_UPDATE:
            p = event.payload
            lines.append(f"Updating utility of production {p['production']}")
            lines.append(
                f"U(n-1) = {_fmt_f32(p['u_prev'])}   R(n) = {_fmt_f64(p['r_eff'])} "
                f"[{_fmt_f64(p['reward'])} - {_fmt_f64(p['dt_ms'] / 1000.0)} seconds since selection]"
            )
            lines.append(f"U(n) = {_fmt_f32(p['u_new'])}")
        else:
            raise VsmError(f"cannot render event kind {event.kind}")
    return lines


def emit_text(log: Union[TraceLog, Sequence[TraceEvent]]) -> str:
    lines = emit_lines(log)
    return "\n".join(lines) + "\n" if lines else ""


def _parse_f32(text: str) -> float:
    return float(np.float32(text))


def parse_text(text: Union[str, Sequence[str]]) -> TraceLog:
    """Parse trace text back into a structured log.

    Timestamped module lines become buffer/production events; reward headers
    and three-line utility blocks become REWARD/UTILITY-UPDATE events; any
    other line is preserved verbatim as an OUTPUT event at the last seen time.
    """
    if isinstance(text, str):
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
    else:
        lines = list(text)

    log = TraceLog()
    time_ms = 0
    i = 0
    while i < len(lines):
        line = lines[i]
        fields = line.split()
        if len(fields) >= 2 and fields[1] in _MODULE_NAMES:
            if not _TS_RE.match(fields[0]):
                raise MalformedTimestamp(f"line {i + 1}: bad timestamp in {line!r}")
            sec, frac = fields[0].split(".")
            time_ms = int(sec) * 1000 + int(frac)
            module = Module(fields[1])
            tail = line[31:] if len(line) > 31 else " ".join(fields[2:])
            kind_token = tail.split(" ", 1)[0]
            try:
                kind = EventKind(kind_token)
            except ValueError:
                kind = EventKind.OUTPUT
            if kind is EventKind.PRODUCTION_FIRED:
                payload = {"text": tail, "production": tail.split()[1]}
            elif kind in (EventKind.SET_BUFFER_CHUNK, EventKind.SET_BUFFER_CHUNK_FROM_SPEC):
                payload = {"text": tail, "buffer": tail.split()[1]}
            else:
                log.append(TraceEvent(time_ms, Module.PROCEDURAL, EventKind.OUTPUT, {"text": line}))
                i += 1
                continue
            log.append(TraceEvent(time_ms, module, kind, payload))
            i += 1
            continue

        reward_m = _REWARD_RE.match(line)
        if reward_m:
            log.append(
                TraceEvent(
                    time_ms,
                    Module.PROCEDURAL,
                    EventKind.REWARD,
                    {"reward": float(reward_m.group(1)), "alpha": float(reward_m.group(2))},
                )
            )
            i += 1
            continue

        head_m = _UPDATE_HEAD_RE.match(line)
        if head_m:
            if i + 2 >= len(lines):
                raise TruncatedUtilityBlock(f"line {i + 1}: utility block cut short")
            mid_m = _UPDATE_MID_RE.match(lines[i + 1])
            tail_m = _UPDATE_TAIL_RE.match(lines[i + 2])
            if not mid_m or not tail_m:
                raise TruncatedUtilityBlock(f"line {i + 1}: malformed utility block for {head_m.group(1)}")
            log.append(
                TraceEvent(
                    time_ms,
                    Module.PROCEDURAL,
                    EventKind.UTILITY_UPDATE,
                    {
                        "production": head_m.group(1),
                        "u_prev": _parse_f32(mid_m.group(1)),
                        "r_eff": float(mid_m.group(2)),
                        "reward": float(mid_m.group(3)),
                        "dt_ms": int(round(float(mid_m.group(4)) * 1000)),
                        "u_new": _parse_f32(tail_m.group(1)),
                    },
                )
            )
            i += 3
            continue

        log.append(TraceEvent(time_ms, Module.PROCEDURAL, EventKind.OUTPUT, {"text": line}))
        i += 1
    return log


# ---------------------------------------------------------------------------
# line categories (used when grouping trace lines for embedding analysis)
# ---------------------------------------------------------------------------

LINE_CATEGORIES = ("goal", "procedural", "imaginal", "utility", "output")


def line_category(line: str) -> str:
    """Coarse component category of one trace text line."""
    fields = line.split()
    if len(fields) >= 2 and fields[1] in _MODULE_NAMES and _TS_RE.match(fields[0]):
        return fields[1].lower()
    if line.startswith(("Utility updates with Reward", "Updating utility of production", "U(n-1) = ", "U(n) = ")):
        return "utility"
    return "output"


# ---------------------------------------------------------------------------
# selected-trace distillation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SelectedRecord:
    run_id: str
    trial: int
    section_code: int
    strategy_code: int

    @property
    def compound_code(self) -> int:
        return self.strategy_code + 3 * self.section_code


@dataclass(frozen=True)
class SelectedTrace:
    """Per-trial numeric targets distilled from decision outcomes.

    single mode keeps the section code {0,1}; multi mode keeps the compound
    code strategy + 3*section in 0..5.
    """

    mode: str
    records: Tuple[SelectedRecord, ...]

    @property
    def codes(self) -> List[int]:
        if self.mode == "single":
            return [r.section_code for r in self.records]
        return [r.compound_code for r in self.records]


def distill_selected(outcomes: Sequence[DecisionOutcome], mode: str = "single") -> SelectedTrace:
    if mode not in ("single", "multi"):
        raise ValueError(f"mode must be 'single' or 'multi', got {mode!r}")
    if not outcomes:
        raise ValueError("outcomes must be non-empty")
    records = tuple(
        SelectedRecord(o.run_id, o.trial_index, o.section, o.strategy) for o in outcomes
    )
    return SelectedTrace(mode, records)


def compound_decompose(code: int) -> Tuple[int, int]:
    """Inverse of the compound coding: code -> (section, strategy)."""
    if not 0 <= code <= 5:
        raise ValueError(f"compound code must be in 0..5, got {code}")
    return code // 3, code % 3


def write_selected_csv(trace: SelectedTrace, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run_id", "trial", "section", "strategy", "compound", "mode"])
        for r in trace.records:
            writer.writerow([r.run_id, r.trial, r.section_code, r.strategy_code, r.compound_code, trace.mode])


def read_selected_csv(path) -> SelectedTrace:
    import csv

    records = []
    mode = "single"
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            mode = row["mode"]
            records.append(
                SelectedRecord(row["run_id"], int(row["trial"]), int(row["section"]), int(row["strategy"]))
            )
    return SelectedTrace(mode, tuple(records))


# ---------------------------------------------------------------------------
# structured trace files (one JSON record per event)
# ---------------------------------------------------------------------------


def event_to_dict(event: TraceEvent) -> dict:
    return {
        "time_ms": event.time_ms,
        "module": event.module.value,
        "kind": event.kind.value,
        "payload": dict(event.payload),
    }


def event_from_dict(raw: dict) -> TraceEvent:
    return TraceEvent(
        time_ms=int(raw["time_ms"]),
        module=Module(raw["module"]),
        kind=EventKind(raw["kind"]),
        payload=dict(raw["payload"]),
    )


def write_trace_jsonl(log: TraceLog, path) -> None:
    with open(path, "w") as fh:
        for event in log:
            fh.write(json.dumps(event_to_dict(event), sort_keys=True) + "\n")


def read_trace_jsonl(path) -> TraceLog:
    log = TraceLog()
    with open(path) as fh:
        for line in fh:
            if line.strip():
                log.append(event_from_dict(json.loads(line)))
    return log
