"""The two-section Design-for-Manufacturing decision task.

A problem instance is a pair of production-line sections (pre-assembly and
assembly) with cycle times and OEE rates; the goal is to cut total assembly
time by a fixed reduction while limiting the defect-rate increase, knowing
that a faster line costs headcount. Three decision personas are encoded as
production rules: the novice always cuts assembly, the intermediate compares
OEE only, and the expert runs a weight -> defect-rate -> compare pipeline and
picks the section with the smaller defect increase.

The default weight/defect/headcount formulas are documented conventions:

    w_i      = ct_i * (1 - oee_i) / sum_j ct_j * (1 - oee_j)
    defect_i = w_i * (1 - oee_i) * (reduction / ct_i) * kappa
    delta    = lam * (1 / (ct - reduction) - 1 / ct)      (lam = 7.2)

lam is calibrated so the base instance yields a headcount delta of 0.02.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .engine import (
    Comparator,
    Condition,
    EmitOutput,
    EmitSlot,
    Engine,
    EngineConfig,
    ModifyBuffer,
    Production,
    RequestImaginalWrite,
    SignalDecision,
    SignalRoundEnd,
    TraceLog,
    f32,
    f32_str,
)
from .errors import ReductionExceedsCycle, VsmError
from .memory import BufferName, Chunk, ChunkType, make_chunk

SECTION_PRE = 0
SECTION_ASM = 1
SECTION_NAMES = {SECTION_PRE: "preassemble", SECTION_ASM: "assemble"}

STRATEGY_NOVICE = 0
STRATEGY_INTERMEDIATE = 1
STRATEGY_EXPERT = 2

EFFICIENT = "efficient"
INEFFICIENT = "inefficient"

#: Calibrated so delta(ct=40, reduction=4) = 7.2 * (1/36 - 1/40) = 0.02.
HEADCOUNT_LAMBDA = 7.2


@dataclass(frozen=True)
class ProblemInstance:
    ct_pre: float
    oee_pre: float
    ct_asm: float
    oee_asm: float
    reduction: float = 4.0

    def __post_init__(self):
        if min(self.ct_pre, self.ct_asm, self.reduction) <= 0:
            raise ValueError("cycle times and reduction must be positive")
        for oee in (self.oee_pre, self.oee_asm):
            if not 0.0 < oee <= 1.0:
                raise ValueError(f"OEE must be in (0, 1], got {oee}")
        if self.reduction >= min(self.ct_pre, self.ct_asm):
            raise ValueError("reduction must be smaller than both cycle times")

    def ct(self, section: int) -> float:
        return self.ct_pre if section == SECTION_PRE else self.ct_asm

    def oee(self, section: int) -> float:
        return self.oee_pre if section == SECTION_PRE else self.oee_asm


#: The worked base instance: 40 s @ 88% pre-assembly, 44 s @ 80.1% assembly.
BASE_INSTANCE = ProblemInstance(ct_pre=40.0, oee_pre=0.88, ct_asm=44.0, oee_asm=0.801, reduction=4.0)


@dataclass(frozen=True)
class DefectModel:
    """Sector weights and defect-rate increases, parameterized for swapping."""

    kappa: float = 1.0

    def weight(self, instance: ProblemInstance, section: int) -> float:
        loads = [instance.ct(s) * (1.0 - instance.oee(s)) for s in (SECTION_PRE, SECTION_ASM)]
        total = sum(loads)
        if total == 0.0:
            return 0.5
        return loads[section] / total

    def defect_increase(self, instance: ProblemInstance, section: int, reduction: Optional[float] = None) -> float:
        r = instance.reduction if reduction is None else reduction
        w = self.weight(instance, section)
        return w * (1.0 - instance.oee(section)) * (r / instance.ct(section)) * self.kappa


DEFAULT_DEFECT_MODEL = DefectModel()


def compute_weights(instance: ProblemInstance, model: DefectModel = DEFAULT_DEFECT_MODEL) -> Tuple[float, float]:
    return model.weight(instance, SECTION_PRE), model.weight(instance, SECTION_ASM)


def compute_defect_increase(
    instance: ProblemInstance,
    section: int,
    model: DefectModel = DEFAULT_DEFECT_MODEL,
    reduction: Optional[float] = None,
) -> float:
    return model.defect_increase(instance, section, reduction)


def compute_headcount_delta(
    instance: ProblemInstance,
    section: int,
    reduction: Optional[float] = None,
    lam: float = HEADCOUNT_LAMBDA,
) -> float:
    """Cost increase from shortening a section: lam * (1/(ct-r) - 1/ct)."""
    r = instance.reduction if reduction is None else reduction
    ct = instance.ct(section)
    if r >= ct:
        raise ReductionExceedsCycle(f"reduction {r} >= cycle time {ct}")
    return lam * (1.0 / (ct - r) - 1.0 / ct)


@dataclass(frozen=True)
class RewardModel:
    """(strategy level, cost class) -> reward, plus the cost threshold."""

    table: Mapping[Tuple[int, str], float] = field(
        default_factory=lambda: {
            (STRATEGY_NOVICE, EFFICIENT): 0.0,
            (STRATEGY_NOVICE, INEFFICIENT): -2.0,
            (STRATEGY_INTERMEDIATE, EFFICIENT): 0.0,
            (STRATEGY_INTERMEDIATE, INEFFICIENT): 0.0,
            (STRATEGY_EXPERT, EFFICIENT): 6.0,
            (STRATEGY_EXPERT, INEFFICIENT): 4.0,
        }
    )
    cost_threshold: float = 0.015

    def __post_init__(self):
        for cls in (EFFICIENT, INEFFICIENT):
            novice = self.table[(STRATEGY_NOVICE, cls)]
            inter = self.table[(STRATEGY_INTERMEDIATE, cls)]
            expert = self.table[(STRATEGY_EXPERT, cls)]
            if not (expert >= inter >= novice):
                raise ValueError(f"reward ordering violated for {cls}: {expert} >= {inter} >= {novice}")


DEFAULT_REWARD_MODEL = RewardModel()


def reward_for(strategy: int, headcount_delta: float, model: RewardModel = DEFAULT_REWARD_MODEL) -> float:
    if strategy not in (STRATEGY_NOVICE, STRATEGY_INTERMEDIATE, STRATEGY_EXPERT):
        raise ValueError(f"unknown strategy {strategy}")
    cost_class = INEFFICIENT if headcount_delta > model.cost_threshold else EFFICIENT
    return model.table[(strategy, cost_class)]


@dataclass(frozen=True)
class DecisionOutcome:
    run_id: str
    trial_index: int
    section: int
    strategy: int
    reward_received: float
    headcount_delta: float

    def __post_init__(self):
        if self.section not in (SECTION_PRE, SECTION_ASM):
            raise ValueError(f"section must be 0 or 1, got {self.section}")
        if self.strategy not in (STRATEGY_NOVICE, STRATEGY_INTERMEDIATE, STRATEGY_EXPERT):
            raise ValueError(f"strategy must be 0, 1, or 2, got {self.strategy}")


# ---------------------------------------------------------------------------
# persona rule set
# ---------------------------------------------------------------------------


def goal_chunk(instance: ProblemInstance) -> Chunk:
    """Initial goal: production conditions plus the yet-undecided target slots."""
    return make_chunk(
        ChunkType.GOAL,
        [
            ("state", "start"),
            ("ct-pre", instance.ct_pre),
            ("oee-pre", instance.oee_pre),
            ("ct-asm", instance.ct_asm),
            ("oee-asm", instance.oee_asm),
            ("reduction", instance.reduction),
            ("chosen-section", None),
            ("headcount-delta", None),
        ],
    )


def decision_chunk(instance: ProblemInstance, section: int, strategy: int, headcount_delta: float) -> Chunk:
    states = {STRATEGY_NOVICE: "novice", STRATEGY_INTERMEDIATE: "intermediate", STRATEGY_EXPERT: "expert"}
    return make_chunk(
        ChunkType.DECISION,
        [
            ("reduction-time", instance.reduction),
            ("decision-state", states[strategy]),
            ("ct-pre", instance.ct_pre),
            ("ct-asm", instance.ct_asm),
            ("oee-pre", instance.oee_pre),
            ("oee-asm", instance.oee_asm),
            ("chosen-section", SECTION_NAMES[section]),
            ("headcount-delta", f32(headcount_delta)),
        ],
    )


def _goal_is(state: str) -> Condition:
    return Condition(BufferName.GOAL, "state", Comparator.EQ, state)


def _goto(state: str, **extra) -> ModifyBuffer:
    updates = [("state", state)] + [(k.replace("_", "-"), v) for k, v in extra.items()]
    return ModifyBuffer(BufferName.GOAL, tuple(updates))


def _merits(stage: str, **slots) -> RequestImaginalWrite:
    pairs = [("stage", stage)] + [(k.replace("_", "-"), v) for k, v in slots.items()]
    return RequestImaginalWrite(make_chunk(ChunkType.DECISION_MERITS, pairs))


def build_persona_rules(
    instance: ProblemInstance,
    defect_model: DefectModel = DEFAULT_DEFECT_MODEL,
    lam: float = HEADCOUNT_LAMBDA,
    persona: Optional[int] = None,
) -> List[Production]:
    """The 18-rule set driving one decision round for all three personas.

    Strategy branch selectors compete in the softmax after CHOOSE-STRATEGY;
    DECIDE-BRUTE starts at utility 3.0 (the novice bias), everything else at
    0.0. ``persona`` restricts the set to a single branch's selector, for
    fixed-persona runs.
    """
    w_pre, w_asm = compute_weights(instance, defect_model)
    d_pre = compute_defect_increase(instance, SECTION_PRE, defect_model)
    d_asm = compute_defect_increase(instance, SECTION_ASM, defect_model)
    delta_pre = compute_headcount_delta(instance, SECTION_PRE, lam=lam)
    delta_asm = compute_headcount_delta(instance, SECTION_ASM, lam=lam)

    expert_section = SECTION_PRE if d_pre <= d_asm else SECTION_ASM
    expert_delta = delta_pre if expert_section == SECTION_PRE else delta_asm
    # the intermediate reads OEE only: less effective equipment looks like
    # the place with slack, so the lower-OEE section gets the cut
    inter_section = SECTION_ASM if instance.oee_asm <= instance.oee_pre else SECTION_PRE
    inter_delta = delta_asm if inter_section == SECTION_ASM else delta_pre

    def decide_text(section: int) -> str:
        return f"choose {SECTION_NAMES[section]} has better stable output!"

    rules = [
        Production(
            "CHOOSE-STRATEGY",
            conditions=(_goal_is("start"),),
            actions=(_goto("choose-strategy"),),
        ),
        Production(
            "DECIDE-BRUTE",
            conditions=(_goal_is("choose-strategy"),),
            actions=(_goto("brute"),),
            initial_utility=3.0,
        ),
        Production(
            "BRUTE-DECISION",
            conditions=(_goal_is("brute"),),
            actions=(
                EmitOutput("assembly is always a good place to reduce time!"),
                _goto("reheadcount", chosen_section=SECTION_NAMES[SECTION_ASM], headcount_delta=f32(delta_asm)),
                SignalDecision(SECTION_ASM, STRATEGY_NOVICE),
            ),
        ),
        Production(
            "REHEADCOUNT",
            conditions=(_goal_is("reheadcount"),),
            actions=(
                EmitSlot(BufferName.GOAL, "headcount-delta", negate=True),
                _goto("stop"),
            ),
        ),
        Production(
            "STOP",
            conditions=(_goal_is("stop"),),
            actions=(
                EmitOutput("this is the end of one decision making"),
                _goto("start"),
                SignalRoundEnd(),
            ),
        ),
        Production(
            "DECIDE-INTERMEDIATE",
            conditions=(_goal_is("choose-strategy"),),
            actions=(_goto("intermediate"),),
        ),
        Production(
            "INTERMEDIATE-STRATEGY",
            conditions=(_goal_is("intermediate"),),
            actions=(
                EmitOutput(f"{f32_str(inter_delta)} "),
                _merits("oee-compare", better_oee_section=SECTION_NAMES[inter_section]),
                _goto("intermediate-choice"),
            ),
        ),
        Production(
            "INERMEDIATE-CHOICE1",
            conditions=(
                _goal_is("intermediate-choice"),
                Condition(BufferName.IMAGINAL, "better-oee-section", Comparator.EQ, "preassemble"),
            ),
            actions=(
                EmitOutput(decide_text(SECTION_PRE)),
                _goto("reheadcount", chosen_section=SECTION_NAMES[SECTION_PRE], headcount_delta=f32(delta_pre)),
                SignalDecision(SECTION_PRE, STRATEGY_INTERMEDIATE),
            ),
        ),
        Production(
            "INERMEDIATE-CHOICE2",
            conditions=(
                _goal_is("intermediate-choice"),
                Condition(BufferName.IMAGINAL, "better-oee-section", Comparator.EQ, "assemble"),
            ),
            actions=(
                EmitOutput(decide_text(SECTION_ASM)),
                _goto("reheadcount", chosen_section=SECTION_NAMES[SECTION_ASM], headcount_delta=f32(delta_asm)),
                SignalDecision(SECTION_ASM, STRATEGY_INTERMEDIATE),
            ),
        ),
        Production(
            "EXPERT-STRATEGY",
            conditions=(_goal_is("choose-strategy"),),
            actions=(_goto("perceive"),),
        ),
        Production(
            "PERCEIVE",
            conditions=(_goal_is("perceive"),),
            actions=(_goto("weigh-pre"),),
        ),
        Production(
            "PREASSEMBLE-WEIGHT",
            conditions=(_goal_is("weigh-pre"),),
            actions=(
                EmitOutput(f"{f32_str(w_pre)} "),
                EmitOutput("caculate the preassemble defect decision weight"),
                _merits("w-pre", w_pre=f32(w_pre)),
                _goto("weigh-asm"),
            ),
        ),
        Production(
            "ASSEMBLE-WEIGHT",
            conditions=(
                _goal_is("weigh-asm"),
                Condition(BufferName.IMAGINAL, "stage", Comparator.EQ, "w-pre"),
            ),
            actions=(
                EmitOutput(f"{f32_str(w_asm)} "),
                EmitOutput("calculate the assemble defect decision weight"),
                _merits("w-asm", w_pre=f32(w_pre), w_asm=f32(w_asm)),
                _goto("defect-pre"),
            ),
        ),
        Production(
            "PREASSEMBLE",
            conditions=(
                _goal_is("defect-pre"),
                Condition(BufferName.IMAGINAL, "stage", Comparator.EQ, "w-asm"),
            ),
            actions=(
                EmitOutput(f"{f32_str(d_pre)} "),
                EmitOutput("calculate the final preassemble defect rate"),
                _merits("d-pre", defect_pre=f32(d_pre)),
                _goto("defect-asm"),
            ),
        ),
        Production(
            "ASSEMBLE",
            conditions=(
                _goal_is("defect-asm"),
                Condition(BufferName.IMAGINAL, "stage", Comparator.EQ, "d-pre"),
            ),
            actions=(
                EmitOutput(f"{f32_str(d_asm)} "),
                EmitOutput("calclate the assemble defect rate"),
                _merits("d-asm", defect_pre=f32(d_pre), defect_asm=f32(d_asm), defect_diff=f32(d_pre - d_asm)),
                _goto("compare"),
            ),
        ),
        Production(
            "COMPARE",
            conditions=(
                _goal_is("compare"),
                Condition(BufferName.IMAGINAL, "stage", Comparator.EQ, "d-asm"),
            ),
            actions=(
                EmitOutput(f"{f32_str(d_pre - d_asm)} "),
                _goto("decide"),
            ),
        ),
        Production(
            "DECIDE",
            conditions=(_goal_is("decide"),),
            actions=(
                EmitOutput(decide_text(expert_section)),
                _goto("headcount", chosen_section=SECTION_NAMES[expert_section], headcount_delta=f32(expert_delta)),
                SignalDecision(expert_section, STRATEGY_EXPERT),
            ),
        ),
        Production(
            "HEADCOUNT",
            conditions=(_goal_is("headcount"),),
            actions=(
                EmitSlot(BufferName.GOAL, "headcount-delta", negate=False),
                _goto("stop"),
            ),
        ),
    ]

    if persona is not None:
        selectors = {STRATEGY_NOVICE: "DECIDE-BRUTE", STRATEGY_INTERMEDIATE: "DECIDE-INTERMEDIATE",
                     STRATEGY_EXPERT: "EXPERT-STRATEGY"}
        drop = {name for level, name in selectors.items() if level != persona}
        rules = [p for p in rules if p.name not in drop]
    return rules


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------


def run_trial(
    engine: Engine,
    instance: ProblemInstance,
    run_id: str = "run0",
    trial_index: int = 0,
    reward_model: RewardModel = DEFAULT_REWARD_MODEL,
) -> Tuple[DecisionOutcome, List]:
    """One decision round plus its reward propagation.

    The goal chunk is installed on the first trial of a run; later trials
    reuse it (STOP resets the state slot, utilities persist across trials).
    """
    if engine.buffers[BufferName.GOAL].content is None:
        engine.install_goal(goal_chunk(instance))
    start = len(engine.log)
    _, signals = engine.run_until_round_end()
    if signals.decision is None:
        raise VsmError("round ended without a decision signal")
    section, strategy = signals.decision
    delta = compute_headcount_delta(instance, section)
    reward = reward_for(strategy, delta, reward_model)
    engine.apply_reward(reward)
    outcome = DecisionOutcome(
        run_id=run_id,
        trial_index=trial_index,
        section=section,
        strategy=strategy,
        reward_received=reward,
        headcount_delta=delta,
    )
    return outcome, list(engine.log.events[start:])


def run_id_for(set_index: int, run_index: int) -> str:
    return f"s{set_index:02d}r{run_index}"


def set_index_from_run_id(run_id: str) -> int:
    if not run_id.startswith("s") or "r" not in run_id:
        raise ValueError(f"run_id {run_id!r} does not encode a set index")
    return int(run_id[1:run_id.index("r")])


def run_batch(
    problem_sets: Sequence[ProblemInstance],
    runs_per_set: int = 4,
    trials_per_run: int = 16,
    config: Optional[EngineConfig] = None,
    master_seed: int = 0,
    reward_model: RewardModel = DEFAULT_REWARD_MODEL,
    defect_model: DefectModel = DEFAULT_DEFECT_MODEL,
    persona: Optional[int] = None,
) -> Tuple[List[DecisionOutcome], Dict[str, TraceLog]]:
    """Run every (set, run) pair; utilities reset between runs, not trials.

    A run executes ``trials_per_run`` trials (default 16), truncated to 15
    when the expert strategy fired on trials 13-15 consecutively, which is the
    "stable expert behavior" stopping rule. Per-run RNG streams derive from
    (master_seed, set, run), so batches are reproducible and order-independent.
    """
    if config is None:
        config = EngineConfig(noise_s=0.8)
    outcomes: List[DecisionOutcome] = []
    traces: Dict[str, TraceLog] = {}
    for set_index, instance in enumerate(problem_sets):
        for run_index in range(runs_per_set):
            run_id = run_id_for(set_index, run_index)
            rng = np.random.default_rng(np.random.SeedSequence((master_seed, set_index, run_index)))
            engine = Engine(build_persona_rules(instance, defect_model, persona=persona), config, rng=rng)
            run_outcomes: List[DecisionOutcome] = []
            for trial in range(trials_per_run):
                outcome, _ = run_trial(engine, instance, run_id, trial, reward_model)
                run_outcomes.append(outcome)
                stable_expert = (
                    trial == trials_per_run - 2
                    and trial >= 14
                    and all(o.strategy == STRATEGY_EXPERT for o in run_outcomes[12:15])
                )
                if stable_expert:
                    break
            outcomes.extend(run_outcomes)
            traces[run_id] = engine.log
    return outcomes, traces


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

OUTCOME_HEADER = ["run_id", "trial", "section", "strategy", "reward", "headcount_delta"]


def write_outcomes_csv(outcomes: Iterable[DecisionOutcome], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(OUTCOME_HEADER)
        for o in outcomes:
            writer.writerow([o.run_id, o.trial_index, o.section, o.strategy,
                             repr(o.reward_received), repr(o.headcount_delta)])


def read_outcomes_csv(path) -> List[DecisionOutcome]:
    outcomes = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != OUTCOME_HEADER:
            raise VsmError(f"unexpected outcome header {reader.fieldnames}")
        for row in reader:
            outcomes.append(
                DecisionOutcome(
                    run_id=row["run_id"],
                    trial_index=int(row["trial"]),
                    section=int(row["section"]),
                    strategy=int(row["strategy"]),
                    reward_received=float(row["reward"]),
                    headcount_delta=float(row["headcount_delta"]),
                )
            )
    return outcomes


PROBLEM_SET_HEADER = ["set", "ct_pre", "oee_pre", "ct_asm", "oee_asm", "reduction"]


def write_problem_sets_csv(instances: Sequence[ProblemInstance], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PROBLEM_SET_HEADER)
        for i, inst in enumerate(instances):
            writer.writerow([i, repr(inst.ct_pre), repr(inst.oee_pre),
                             repr(inst.ct_asm), repr(inst.oee_asm), repr(inst.reduction)])


def read_problem_sets_csv(path) -> List[ProblemInstance]:
    instances = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            instances.append(
                ProblemInstance(
                    ct_pre=float(row["ct_pre"]),
                    oee_pre=float(row["oee_pre"]),
                    ct_asm=float(row["ct_asm"]),
                    oee_asm=float(row["oee_asm"]),
                    reduction=float(row["reduction"]),
                )
            )
    return instances
