"""Discrete-time production-system runtime.

The cycle is match -> softmax-select -> fire. Each firing advances the clock
by one production latency (50 ms by default) and logs a PRODUCTION-FIRED
event at the new time. Delayed buffer writes are queued and committed when
the clock reaches them; if nothing matches, the clock jumps to the next
pending commit. At the end of a decision round the task layer computes a
reward and calls :meth:`Engine.apply_reward`, which updates every production
fired since the previous reward with the time-decayed temporal-difference
rule

    U <- U + alpha * (R_eff - U),    R_eff = reward - (now - selection time).

Utilities are accumulated in 32-bit floats by default so that logged values
carry the familiar single-precision artifacts (e.g. -0.45000002); a double
mode is available for analytical work.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (
    ActionOnBusyBuffer,
    BufferBusy,
    Deadlock,
    EmptyConflictSet,
    StepLimitExceeded,
    VsmError,
)
from .memory import (
    Buffer,
    BufferName,
    Chunk,
    SlotValue,
    buffer_write,
    commit_pending,
    to_ms,
)

# ---------------------------------------------------------------------------
# conditions and actions
# ---------------------------------------------------------------------------


class Comparator(Enum):
    EQ = "="
    NE = "!="
    LT = "<"
    GT = ">"


@dataclass(frozen=True)
class Condition:
    """Test one slot of one buffer.

    ``value`` is either a literal slot value or a variable written ``"=name"``;
    variables bind on first use and must agree across the conditions of a
    single production.
    """

    buffer: BufferName
    slot: str
    comparator: Comparator = Comparator.EQ
    value: SlotValue = None

    def is_variable(self) -> bool:
        return isinstance(self.value, str) and self.value.startswith("=")


@dataclass(frozen=True)
class ModifyBuffer:
    buffer: BufferName
    updates: Tuple[Tuple[str, SlotValue], ...]


@dataclass(frozen=True)
class RequestImaginalWrite:
    chunk: Chunk


@dataclass(frozen=True)
class EmitOutput:
    text: str


@dataclass(frozen=True)
class EmitSlot:
    """Print a numeric buffer slot in single-precision form (trailing space)."""

    buffer: BufferName
    slot: str
    negate: bool = False


@dataclass(frozen=True)
class SignalDecision:
    section: int
    strategy: int


@dataclass(frozen=True)
class SignalRoundEnd:
    pass


Action = Union[ModifyBuffer, RequestImaginalWrite, EmitOutput, EmitSlot, SignalDecision, SignalRoundEnd]


@dataclass
class Production:
    """A condition-action rule with a learned utility."""

    name: str
    conditions: Tuple[Condition, ...] = ()
    actions: Tuple[Action, ...] = ()
    initial_utility: float = 0.0
    utility: float = field(init=False)
    last_selection_ms: Optional[int] = None
    fired_since_last_reward: bool = False

    def __post_init__(self):
        self.utility = float(self.initial_utility)

    def reset(self) -> None:
        self.utility = float(self.initial_utility)
        self.last_selection_ms = None
        self.fired_since_last_reward = False


# ---------------------------------------------------------------------------
# engine configuration
# ---------------------------------------------------------------------------


class TemperatureRule(Enum):
    SQRT2_TIMES_S = "sqrt2_times_s"   # t = sqrt(2) * s
    SQRT_OF_2S = "sqrt_of_2s"         # t = sqrt(2 * s)


class UtilityPrecision(Enum):
    SINGLE = "single"
    DOUBLE = "double"


@dataclass(frozen=True)
class EngineConfig:
    alpha: float = 0.2
    noise_s: float = 0.0
    temperature_rule: TemperatureRule = TemperatureRule.SQRT2_TIMES_S
    production_latency: float = 0.050
    imaginal_delay: float = 0.200
    rng_seed: int = 0
    utility_precision: UtilityPrecision = UtilityPrecision.SINGLE
    step_limit: int = 10_000

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.noise_s < 0.0:
            raise ValueError(f"noise_s must be >= 0, got {self.noise_s}")
        if self.production_latency <= 0.0:
            raise ValueError("production_latency must be positive")
        if self.imaginal_delay < 0.0:
            raise ValueError("imaginal_delay must be >= 0")
        if self.step_limit < 1:
            raise ValueError("step_limit must be >= 1")

    @property
    def temperature(self) -> float:
        if self.temperature_rule is TemperatureRule.SQRT2_TIMES_S:
            return math.sqrt(2.0) * self.noise_s
        return math.sqrt(2.0 * self.noise_s)


def config_from_dict(raw: dict) -> EngineConfig:
    """Build an EngineConfig from parsed key/value data (config files)."""
    kwargs = dict(raw)
    if "temperature_rule" in kwargs:
        kwargs["temperature_rule"] = TemperatureRule(kwargs["temperature_rule"])
    if "utility_precision" in kwargs:
        kwargs["utility_precision"] = UtilityPrecision(kwargs["utility_precision"])
    return EngineConfig(**kwargs)


def config_to_dict(config: EngineConfig) -> dict:
    return {
        "alpha": config.alpha,
        "noise_s": config.noise_s,
        "temperature_rule": config.temperature_rule.value,
        "production_latency": config.production_latency,
        "imaginal_delay": config.imaginal_delay,
        "rng_seed": config.rng_seed,
        "utility_precision": config.utility_precision.value,
        "step_limit": config.step_limit,
    }


# ---------------------------------------------------------------------------
# trace events
# ---------------------------------------------------------------------------


class Module(Enum):
    GOAL = "GOAL"
    PROCEDURAL = "PROCEDURAL"
    IMAGINAL = "IMAGINAL"


class EventKind(Enum):
    SET_BUFFER_CHUNK = "SET-BUFFER-CHUNK"
    PRODUCTION_FIRED = "PRODUCTION-FIRED"
    SET_BUFFER_CHUNK_FROM_SPEC = "SET-BUFFER-CHUNK-FROM-SPEC"
    OUTPUT = "OUTPUT"
    UTILITY_UPDATE = "UTILITY-UPDATE"
    REWARD = "REWARD"


@dataclass(frozen=True)
class TraceEvent:
    time_ms: int
    module: Module
    kind: EventKind
    payload: dict

    @property
    def time(self) -> float:
        return self.time_ms / 1000.0


class TraceLog:
    """Append-only, totally ordered event record for one engine run."""

    def __init__(self, events: Optional[Sequence[TraceEvent]] = None):
        self.events: List[TraceEvent] = list(events or [])

    def append(self, event: TraceEvent) -> None:
        self.events.append(event)

    def __iter__(self):
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def __getitem__(self, idx):
        return self.events[idx]

    def __eq__(self, other) -> bool:
        return isinstance(other, TraceLog) and self.events == other.events

    def __repr__(self) -> str:
        return f"TraceLog({len(self.events)} events)"


def f32(value: float) -> float:
    """Round to the nearest binary32 value (kept as a Python float)."""
    return float(np.float32(value))


def f32_str(value: float) -> str:
    """Shortest decimal string that round-trips through binary32."""
    return str(np.float32(value))


def td_update(u_prev: float, r_eff: float, alpha: float, precision: UtilityPrecision) -> float:
    """One temporal-difference utility step at the configured precision."""
    if precision is UtilityPrecision.SINGLE:
        u = np.float32(u_prev)
        return float(np.float32(u + np.float32(alpha) * (np.float32(r_eff) - u)))
    return u_prev + alpha * (r_eff - u_prev)


def effective_reward(reward: float, dt_ms: int) -> float:
    """reward - dt, computed in exact millisecond units when possible.

    Keeping the subtraction on the integer grid makes the result the
    correctly-rounded double of its decimal value, so logs render cleanly
    (e.g. -2.25 rather than a near miss).
    """
    reward_milli = round(reward * 1000)
    if abs(reward * 1000 - reward_milli) < 1e-9:
        return (reward_milli - dt_ms) / 1000.0
    return reward - dt_ms / 1000.0


# ---------------------------------------------------------------------------
# match and select
# ---------------------------------------------------------------------------


def _condition_holds(cond: Condition, buffers: Dict[BufferName, Buffer], env: dict) -> bool:
    buf = buffers.get(cond.buffer)
    if buf is None or buf.content is None:
        return False
    chunk = buf.content
    if not chunk.has_slot(cond.slot):
        return False
    actual = chunk.get(cond.slot)
    if cond.is_variable():
        if cond.comparator is not Comparator.EQ:
            raise VsmError("variables only support equality tests")
        name = cond.value
        if name in env:
            return env[name] == actual
        env[name] = actual
        return True
    expected = cond.value
    if cond.comparator is Comparator.EQ:
        return actual == expected
    if cond.comparator is Comparator.NE:
        return actual != expected
    if not isinstance(actual, float) or not isinstance(expected, float):
        return False
    if cond.comparator is Comparator.LT:
        return actual < expected
    return actual > expected


def matches(production: Production, buffers: Dict[BufferName, Buffer]) -> bool:
    env: dict = {}
    return all(_condition_holds(c, buffers, env) for c in production.conditions)


def match(productions: Sequence[Production], buffers: Dict[BufferName, Buffer]) -> List[Production]:
    """Conflict set: every production whose conditions hold, in declaration order."""
    return [p for p in productions if matches(p, buffers)]


def softmax_probabilities(utilities: Sequence[float], temperature: float) -> np.ndarray:
    """Selection distribution over utilities; max-subtracted for stability."""
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    z = np.asarray(utilities, dtype=float) / temperature
    z = z - z.max()
    w = np.exp(z)
    return w / w.sum()


def select(conflict_set: Sequence[Production], config: EngineConfig, rng: np.random.Generator) -> Production:
    """Sample one production; with zero noise, the max-utility one wins.

    Ties at zero noise resolve to the lowest declaration index.
    """
    if not conflict_set:
        raise EmptyConflictSet("select called with no matching productions")
    t = config.temperature
    if t == 0.0:
        best = max(range(len(conflict_set)), key=lambda i: (conflict_set[i].utility, -i))
        return conflict_set[best]
    probs = softmax_probabilities([p.utility for p in conflict_set], t)
    idx = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
    return conflict_set[min(idx, len(conflict_set) - 1)]


# ---------------------------------------------------------------------------
# engine
# ---------------------------------------------------------------------------


@dataclass
class RoundSignals:
    decision: Optional[Tuple[int, int]] = None  # (section, strategy)
    round_end: bool = False


class Engine:
    """Owns the clock, buffers, rule set, trace log, and RNG for one run."""

    def __init__(
        self,
        productions: Sequence[Production],
        config: EngineConfig,
        rng: Optional[np.random.Generator] = None,
    ):
        names = [p.name for p in productions]
        if len(names) != len(set(names)):
            raise VsmError("production names must be unique within a rule set")
        self.productions: List[Production] = list(productions)
        self.config = config
        self.rng = rng if rng is not None else np.random.default_rng(config.rng_seed)
        self.clock_ms: int = 0
        self.log = TraceLog()
        self.buffers: Dict[BufferName, Buffer] = {name: Buffer(name) for name in BufferName}
        self.signals = RoundSignals()
        self._pending_commits: List[BufferName] = []
        self._fired_order: List[Production] = []

    # -- buffers ------------------------------------------------------------

    def install_goal(self, chunk: Chunk, chunk_name: str = "GOER") -> None:
        """Place the goal chunk and log the buffer event that starts a run."""
        self.buffers[BufferName.GOAL] = buffer_write(
            self.buffers[BufferName.GOAL], chunk, now=self.clock_ms / 1000.0, delay=0.0
        )
        self._log(
            Module.GOAL,
            EventKind.SET_BUFFER_CHUNK,
            {"text": f"SET-BUFFER-CHUNK GOAL {chunk_name} NIL", "buffer": "GOAL"},
        )

    def _log(self, module: Module, kind: EventKind, payload: dict, time_ms: Optional[int] = None) -> None:
        self.log.append(TraceEvent(self.clock_ms if time_ms is None else time_ms, module, kind, payload))

    def _next_commit_ms(self) -> Optional[int]:
        ready = [
            self.buffers[name].pending[1]
            for name in self._pending_commits
            if self.buffers[name].pending is not None
        ]
        return min(ready) if ready else None

    def _commit_due(self) -> None:
        due = sorted(
            (self.buffers[name].pending[1], name)
            for name in self._pending_commits
            if self.buffers[name].pending is not None and self.buffers[name].pending[1] <= self.clock_ms
        )
        for ready_ms, name in due:
            self.buffers[name] = commit_pending(self.buffers[name], ready_ms)
            self._pending_commits.remove(name)
            self._log(
                Module.IMAGINAL,
                EventKind.SET_BUFFER_CHUNK_FROM_SPEC,
                {"text": f"SET-BUFFER-CHUNK-FROM-SPEC {name.value} ", "buffer": name.value},
                time_ms=ready_ms,
            )

    # -- firing ---------------------------------------------------------------

    def fire(self, production: Production) -> None:
        """Execute one selected production: advance the clock, log, run actions."""
        production.last_selection_ms = self.clock_ms
        self.clock_ms += to_ms(self.config.production_latency)
        self._log(
            Module.PROCEDURAL,
            EventKind.PRODUCTION_FIRED,
            {"text": f"PRODUCTION-FIRED {production.name}", "production": production.name},
        )
        if not production.fired_since_last_reward:
            production.fired_since_last_reward = True
            self._fired_order.append(production)
        for action in production.actions:
            self._execute(action)

    def _execute(self, action: Action) -> None:
        if isinstance(action, EmitOutput):
            self._log(Module.PROCEDURAL, EventKind.OUTPUT, {"text": action.text})
        elif isinstance(action, EmitSlot):
            content = self.buffers[action.buffer].content
            if content is None:
                raise VsmError(f"EmitSlot on empty buffer {action.buffer.value}")
            value = content.get(action.slot)
            if not isinstance(value, float):
                raise VsmError(f"EmitSlot expects a numeric slot, got {value!r}")
            shown = -value if action.negate else value
            self._log(Module.PROCEDURAL, EventKind.OUTPUT, {"text": f"{f32_str(shown)} "})
        elif isinstance(action, ModifyBuffer):
            buf = self.buffers[action.buffer]
            if buf.content is None:
                raise VsmError(f"modify on empty buffer {action.buffer.value}")
            self.buffers[action.buffer] = replace(buf, content=buf.content.with_updates(action.updates))
        elif isinstance(action, RequestImaginalWrite):
            try:
                self.buffers[BufferName.IMAGINAL] = buffer_write(
                    self.buffers[BufferName.IMAGINAL],
                    action.chunk,
                    now=self.clock_ms / 1000.0,
                    delay=self.config.imaginal_delay,
                )
            except BufferBusy as exc:
                raise ActionOnBusyBuffer(str(exc)) from exc
            if self.config.imaginal_delay > 0:
                self._pending_commits.append(BufferName.IMAGINAL)
            else:
                self._log(
                    Module.IMAGINAL,
                    EventKind.SET_BUFFER_CHUNK_FROM_SPEC,
                    {"text": "SET-BUFFER-CHUNK-FROM-SPEC IMAGINAL ", "buffer": "IMAGINAL"},
                )
        elif isinstance(action, SignalDecision):
            self.signals.decision = (action.section, action.strategy)
        elif isinstance(action, SignalRoundEnd):
            self.signals.round_end = True
        else:
            raise VsmError(f"unknown action {action!r}")

    # -- reward ---------------------------------------------------------------

    def apply_reward(self, reward: float, now: Optional[float] = None) -> None:
        """Propagate a round reward to every production fired since the last one.

        Each production's effective reward is decayed by the simulated seconds
        since its selection; updates are logged in firing order and utilities
        persist until the next reward or an explicit reset.
        """
        now_ms = self.clock_ms if now is None else to_ms(now)
        alpha = self.config.alpha
        self._log(Module.PROCEDURAL, EventKind.REWARD, {"reward": float(reward), "alpha": alpha}, time_ms=now_ms)
        for production in self._fired_order:
            if production.last_selection_ms is None:
                continue
            dt_ms = now_ms - production.last_selection_ms
            r_eff = effective_reward(reward, dt_ms)
            u_prev = production.utility
            u_new = td_update(u_prev, r_eff, alpha, self.config.utility_precision)
            self._log(
                Module.PROCEDURAL,
                EventKind.UTILITY_UPDATE,
                {
                    "production": production.name,
                    "u_prev": f32(u_prev),
                    "r_eff": r_eff,
                    "reward": float(reward),
                    "dt_ms": dt_ms,
                    "u_new": f32(u_new),
                },
                time_ms=now_ms,
            )
            production.utility = u_new
        for production in self._fired_order:
            production.fired_since_last_reward = False
        self._fired_order = []

    # -- round loop -------------------------------------------------------------

    def run_until_round_end(self) -> Tuple[List[TraceEvent], RoundSignals]:
        """Match/select/fire until a production signals the end of the round.

        Returns the trace events of the round (reward events appended later by
        the task layer extend the same log) and the collected signals.
        """
        if self.buffers[BufferName.GOAL].content is None:
            raise Deadlock("goal buffer not initialized", self._buffer_snapshot())
        start = len(self.log)
        self.signals = RoundSignals()
        steps = 0
        while True:
            self._commit_due()
            conflict = match(self.productions, self.buffers)
            if not conflict:
                nxt = self._next_commit_ms()
                if nxt is None:
                    raise Deadlock(
                        f"no production matches at t={self.clock_ms / 1000:.3f}s",
                        self._buffer_snapshot(),
                    )
                self.clock_ms = nxt
                continue
            steps += 1
            if steps > self.config.step_limit:
                raise StepLimitExceeded(f"round exceeded {self.config.step_limit} firings")
            production = select(conflict, self.config, self.rng)
            self.fire(production)
            if self.signals.round_end:
                break
        return list(self.log.events[start:]), self.signals

    def _buffer_snapshot(self) -> dict:
        return {
            name.value: None if buf.content is None else dict(buf.content.slots)
            for name, buf in self.buffers.items()
        }


# ---------------------------------------------------------------------------
# self-audit
# ---------------------------------------------------------------------------


def audit_utility_updates(log: TraceLog, tol: float = 1e-6) -> List[str]:
    """Check every UTILITY-UPDATE against the TD recurrence; return violations.

    The recurrence is evaluated in double precision against the logged
    single-precision values, so the allowance covers one rounding step.
    """
    problems = []
    alpha = None
    for event in log:
        if event.kind is EventKind.REWARD:
            alpha = event.payload["alpha"]
        elif event.kind is EventKind.UTILITY_UPDATE:
            a = alpha if alpha is not None else event.payload.get("alpha", 0.2)
            expected = event.payload["u_prev"] + a * (event.payload["r_eff"] - event.payload["u_prev"])
            got = event.payload["u_new"]
            if abs(got - expected) > tol:
                problems.append(
                    f"{event.payload['production']}: U(n)={got!r} but recurrence gives {expected!r}"
                )
    return problems
