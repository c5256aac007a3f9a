"""Problem-set generation, prompt rendering, dataset assembly, and export.

Prompts instantiate the frozen task templates below with the instance's cycle
times and OEE percentages; targets are the section code (single mode) or the
compound section-and-strategy code (multi mode). Records keep their
(run_id, trial) provenance so any exported label can be re-derived from the
outcome store.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ClassTooSmall, FeatureCountMismatch, IoFailure
from .task import BASE_INSTANCE, DecisionOutcome, ProblemInstance

SINGLE_FACET_TEMPLATE = """Our manufacturing line has two sections with potential defect sources: pre-assembly (0) and assembly (1). Pre-assembly takes {CT1} seconds with an Overall Equipment Effectiveness(OEE) rate of {OEE1}%, while assembly takes {CT2} seconds with an OEE rate of {OEE2}%. To reduce total assembly time by 4 seconds, we need to identify which section can be shortened with minimal defect increase. It's important to note that reducing cycle time will also lead to an increase in line headcount costs. There are two options: reduce pre-assembly time (0) or reduce assembly time (1).

Question: Which section do you choose to optimize?

Answer:"""

MULTI_FACET_TEMPLATE = """Our manufacturing line features two sections prone to defects: pre-assembly and assembly. Pre-assembly requires {CT1} seconds to complete with an Overall Equipment Effectiveness (OEE) rate of {OEE1}%. Assembly takes {CT2} seconds and has an OEE rate of {OEE2}%. To cut total assembly time by 4 seconds, we must decide which section's duration can be reduced with the least increase in defects. Reducing cycle times will also result in higher line headcount costs. We have three strategy levels for decision-making:

Novice strategy (targets encoded as 0 for pre-assembly, 3 for assembly): Intuitive choice.

Intermediate strategy (targets encoded as 1 for pre-assembly, 4 for assembly): Make decision using key metrics.

Expert strategy (targets encoded as 2 for pre-assembly, 5 for assembly): make well-informed judgments based on a comprehensive understanding of all relevant metric.

Question: Given the different strategy levels, which options would you choose?

Answer:"""


def _fmt_seconds(value: float) -> str:
    """40.0 -> "40", 41.5 -> "41.5"."""
    if float(value).is_integer():
        return str(int(value))
    return repr(float(value))


def _fmt_oee_percent(oee: float) -> str:
    """0.88 -> "88", 0.801 -> "80.1" (one decimal, trailing .0 suppressed)."""
    pct = f"{oee * 100:.1f}"
    return pct[:-2] if pct.endswith(".0") else pct


def render_prompt(instance: ProblemInstance, mode: str = "single") -> str:
    if mode == "single":
        template = SINGLE_FACET_TEMPLATE
    elif mode == "multi":
        template = MULTI_FACET_TEMPLATE
    else:
        raise ValueError(f"mode must be 'single' or 'multi', got {mode!r}")
    return (
        template.replace("{CT1}", _fmt_seconds(instance.ct_pre))
        .replace("{OEE1}", _fmt_oee_percent(instance.oee_pre))
        .replace("{CT2}", _fmt_seconds(instance.ct_asm))
        .replace("{OEE2}", _fmt_oee_percent(instance.oee_asm))
    )


def generate_problem_sets(master_seed: int, count: int = 32) -> List[ProblemInstance]:
    """Deterministic instance family: set 0 is the base instance; the rest
    sample ct_pre in [36,44], ct_asm in [40,48] (integer seconds) and OEE in
    [0.75,0.92] (rounded to 3 decimals, i.e. one decimal as a percentage)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence((master_seed, 0x5E75)))
    instances = [BASE_INSTANCE]
    while len(instances) < count:
        instances.append(
            ProblemInstance(
                ct_pre=float(rng.integers(36, 45)),
                oee_pre=round(float(rng.uniform(0.75, 0.92)), 3),
                ct_asm=float(rng.integers(40, 49)),
                oee_asm=round(float(rng.uniform(0.75, 0.92)), 3),
                reduction=4.0,
            )
        )
    return instances[:count]


# ---------------------------------------------------------------------------
# dataset records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetRecord:
    prompt: str
    target: int
    run_id: str
    trial: int
    features: Optional[Tuple[float, ...]] = None

    def feature_array(self) -> Optional[np.ndarray]:
        return None if self.features is None else np.asarray(self.features, dtype=float)


@dataclass(frozen=True)
class SizingReport:
    classes: int
    target_size: int
    actual_size: int

    @property
    def ok(self) -> bool:
        return self.actual_size >= self.target_size

    def __str__(self) -> str:
        return (
            f"{self.classes} classes × 1000 ⇒ target {self.target_size}, "
            f"actual {self.actual_size}: {'OK' if self.ok else 'SHORT'}"
        )


def target_for(outcome: DecisionOutcome, mode: str) -> int:
    if mode == "single":
        return outcome.section
    if mode == "multi":
        return outcome.strategy + 3 * outcome.section
    raise ValueError(f"mode must be 'single' or 'multi', got {mode!r}")


FeatureSource = Union[Sequence[np.ndarray], Callable[[DecisionOutcome, str], np.ndarray], None]


def build_dataset(
    outcomes: Sequence[DecisionOutcome],
    instance_for: Union[Mapping[str, ProblemInstance], Callable[[DecisionOutcome], ProblemInstance]],
    prompts_mode: str = "single",
    target_mode: Optional[str] = None,
    feature_source: FeatureSource = None,
) -> Tuple[List[DatasetRecord], SizingReport]:
    """One record per outcome: rendered prompt, numeric target, provenance.

    ``instance_for`` maps run_id (or the outcome itself) to its problem
    instance. ``feature_source`` is either a sequence of one vector per
    outcome or a callable (outcome, prompt) -> vector. The sizing report
    compares the dataset to the classes x 1000 guidance.
    """
    if not outcomes:
        raise ValueError("outcomes must be non-empty")
    target_mode = target_mode or prompts_mode
    if callable(instance_for):
        lookup = instance_for
    else:
        mapping = instance_for

        def lookup(outcome: DecisionOutcome) -> ProblemInstance:
            return mapping[outcome.run_id]

    if feature_source is not None and not callable(feature_source):
        if len(feature_source) != len(outcomes):
            raise FeatureCountMismatch(
                f"{len(feature_source)} feature vectors for {len(outcomes)} outcomes"
            )

    records = []
    for i, outcome in enumerate(outcomes):
        prompt = render_prompt(lookup(outcome), prompts_mode)
        if feature_source is None:
            features = None
        elif callable(feature_source):
            features = tuple(float(v) for v in np.ravel(feature_source(outcome, prompt)))
        else:
            features = tuple(float(v) for v in np.ravel(feature_source[i]))
        records.append(
            DatasetRecord(
                prompt=prompt,
                target=target_for(outcome, target_mode),
                run_id=outcome.run_id,
                trial=outcome.trial_index,
                features=features,
            )
        )
    classes = 2 if target_mode == "single" else 6
    report = SizingReport(classes=classes, target_size=classes * 1000, actual_size=len(records))
    return records, report


def split(
    dataset: Sequence[DatasetRecord], test_fraction: float, seed: int = 0
) -> Tuple[List[DatasetRecord], List[DatasetRecord]]:
    """Stratified-by-target, disjoint, exhaustive train/test split.

    Per-class test counts are the rounded fraction, clamped so every class
    keeps at least one record on each side.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    by_class: Dict[int, List[int]] = {}
    for i, record in enumerate(dataset):
        by_class.setdefault(record.target, []).append(i)
    for target, members in by_class.items():
        if len(members) < 2:
            raise ClassTooSmall(f"target {target} has {len(members)} record(s); need >= 2")
    rng = np.random.default_rng(seed)
    test_idx: List[int] = []
    for target in sorted(by_class):
        members = np.array(by_class[target])
        rng.shuffle(members)
        n_test = int(len(members) * test_fraction + 0.5)
        n_test = min(max(n_test, 1), len(members) - 1)
        test_idx.extend(members[:n_test].tolist())
    test_set = set(test_idx)
    train = [r for i, r in enumerate(dataset) if i not in test_set]
    test = [r for i, r in enumerate(dataset) if i in test_set]
    return train, test


# ---------------------------------------------------------------------------
# export / import
# ---------------------------------------------------------------------------


def export(dataset: Sequence[DatasetRecord], fmt: str, path) -> None:
    try:
        if fmt == "jsonl":
            with open(path, "w") as fh:
                for r in dataset:
                    row = {"prompt": r.prompt, "target": r.target, "run_id": r.run_id, "trial": r.trial}
                    if r.features is not None:
                        row["features"] = list(r.features)
                    fh.write(json.dumps(row, sort_keys=True) + "\n")
        elif fmt == "csv":
            dim = 0
            for r in dataset:
                if r.features is not None:
                    dim = max(dim, len(r.features))
            header = ["prompt", "target", "run_id", "trial"] + [f"f{i}" for i in range(dim)]
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(header)
                for r in dataset:
                    feats = [repr(v) for v in (r.features or ())]
                    feats += [""] * (dim - len(feats))
                    writer.writerow([r.prompt, r.target, r.run_id, r.trial] + feats)
        else:
            raise ValueError(f"format must be 'jsonl' or 'csv', got {fmt!r}")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def import_dataset(path, fmt: Optional[str] = None) -> List[DatasetRecord]:
    fmt = fmt or ("csv" if str(path).endswith(".csv") else "jsonl")
    records: List[DatasetRecord] = []
    try:
        if fmt == "jsonl":
            with open(path) as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    row = json.loads(line)
                    features = tuple(row["features"]) if "features" in row else None
                    records.append(
                        DatasetRecord(row["prompt"], int(row["target"]), row["run_id"], int(row["trial"]), features)
                    )
        else:
            with open(path, newline="") as fh:
                reader = csv.DictReader(fh)
                feat_cols = [c for c in reader.fieldnames or [] if re.fullmatch(r"f\d+", c)]
                feat_cols.sort(key=lambda c: int(c[1:]))
                for row in reader:
                    feats = tuple(float(row[c]) for c in feat_cols if row[c] != "")
                    records.append(
                        DatasetRecord(
                            row["prompt"], int(row["target"]), row["run_id"], int(row["trial"]),
                            feats if feats else None,
                        )
                    )
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return records


# ---------------------------------------------------------------------------
# fine-tuning configuration artifact
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FinetuneConfig:
    """Downstream adapter-training hyperparameters, emitted verbatim."""

    learning_rate: float = 1e-5
    epochs: int = 10
    batch_size: int = 5
    weight_decay: float = 0.01
    dropout: float = 0.5
    grad_accumulation: int = 2
    max_grad_norm: float = 1.0
    test_split: float = 0.2
    loss: str = "cross-entropy"
    optimizer: str = "adam"
    adapter: str = "low-rank"


def _fmt_config_value(value) -> str:
    if isinstance(value, float):
        return re.sub(r"e([+-])0(\d)", r"e\g<1>\g<2>", repr(value))
    return str(value)


def emit_finetune_config(path, config: FinetuneConfig = FinetuneConfig()) -> None:
    """Write the hyperparameters as a key=value file for the training step."""
    lines = [
        f"learning_rate={_fmt_config_value(config.learning_rate)}",
        f"epochs={config.epochs}",
        f"batch_size={config.batch_size}",
        f"weight_decay={_fmt_config_value(config.weight_decay)}",
        f"dropout={_fmt_config_value(config.dropout)}",
        f"grad_accumulation={config.grad_accumulation}",
        f"max_grad_norm={_fmt_config_value(config.max_grad_norm)}",
        f"test_split={_fmt_config_value(config.test_split)}",
        f"loss={config.loss}",
        f"optimizer={config.optimizer}",
        f"adapter={config.adapter}",
    ]
    try:
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
