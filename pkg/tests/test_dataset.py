"""Problem sets, prompt rendering, dataset assembly, splits, exports."""

import numpy as np
import pytest

from vsm_actr.dataset import (
    DatasetRecord,
    FinetuneConfig,
    build_dataset,
    emit_finetune_config,
    export,
    generate_problem_sets,
    import_dataset,
    render_prompt,
    split,
)
from vsm_actr.errors import ClassTooSmall, FeatureCountMismatch
from vsm_actr.task import BASE_INSTANCE, DecisionOutcome, ProblemInstance


def outcome(section, strategy, run_id="s00r0", trial=0):
    return DecisionOutcome(run_id, trial, section, strategy, 0.0, 0.0)


# ---------------------------------------------------------------------------
# problem sets
# ---------------------------------------------------------------------------


def test_problem_sets_default_32_with_base_first():
    instances = generate_problem_sets(0, 32)
    assert len(instances) == 32
    assert instances[0] == BASE_INSTANCE
    for inst in instances[1:]:
        assert 36 <= inst.ct_pre <= 44
        assert 40 <= inst.ct_asm <= 48
        assert 0.75 <= inst.oee_pre <= 0.92
        assert 0.75 <= inst.oee_asm <= 0.92
        assert inst.reduction == 4.0


def test_problem_sets_deterministic_and_minimal():
    assert generate_problem_sets(7, 32) == generate_problem_sets(7, 32)
    assert generate_problem_sets(7, 32) != generate_problem_sets(8, 32)
    assert generate_problem_sets(0, 1) == [BASE_INSTANCE]


# ---------------------------------------------------------------------------
# prompt rendering
# ---------------------------------------------------------------------------


def test_single_prompt_base_instance_matches_fixture(data_dir):
    rendered = render_prompt(BASE_INSTANCE, "single")
    assert rendered == (data_dir / "prompt_single_base.txt").read_text()


def test_multi_prompt_base_instance_matches_fixture(data_dir):
    rendered = render_prompt(BASE_INSTANCE, "multi")
    assert rendered == (data_dir / "prompt_multi_base.txt").read_text()


def test_single_prompt_content():
    rendered = render_prompt(BASE_INSTANCE, "single")
    assert "Pre-assembly takes 40 seconds with an Overall Equipment Effectiveness(OEE) rate of 88%" in rendered
    assert "assembly takes 44 seconds with an OEE rate of 80.1%" in rendered
    assert rendered.endswith("Answer:")


def test_multi_prompt_content():
    rendered = render_prompt(BASE_INSTANCE, "multi")
    assert "Novice strategy (targets encoded as 0 for pre-assembly, 3 for assembly)" in rendered
    assert "Intermediate strategy (targets encoded as 1 for pre-assembly, 4 for assembly)" in rendered
    assert "Expert strategy (targets encoded as 2 for pre-assembly, 5 for assembly)" in rendered


def test_prompt_rendering_is_referentially_transparent():
    inst = ProblemInstance(41.0, 0.815, 47.0, 0.88)
    assert render_prompt(inst, "single") == render_prompt(inst, "single")
    assert "41 seconds" in render_prompt(inst, "single")
    assert "81.5%" in render_prompt(inst, "single")
    assert "88%" in render_prompt(inst, "single")  # trailing .0 suppressed


# ---------------------------------------------------------------------------
# dataset assembly
# ---------------------------------------------------------------------------


def lookup(_outcome):
    return BASE_INSTANCE


def test_build_dataset_one_record_per_outcome_with_provenance():
    outcomes = [outcome(0, 2, trial=3), outcome(1, 0, trial=4)]
    records, sizing = build_dataset(outcomes, lookup, prompts_mode="multi", target_mode="multi")
    assert [r.target for r in records] == [2, 3]
    assert [(r.run_id, r.trial) for r in records] == [("s00r0", 3), ("s00r0", 4)]
    assert sizing.classes == 6 and sizing.target_size == 6000
    assert "SHORT" in str(sizing)


def test_build_dataset_sizing_report_ok_line():
    outcomes = [outcome(i % 2, 0, trial=i) for i in range(2012)]
    _, sizing = build_dataset(outcomes, lookup, prompts_mode="single")
    assert str(sizing) == "2 classes × 1000 ⇒ target 2000, actual 2012: OK"


def test_build_dataset_multi_target_for_intermediate_pre():
    records, _ = build_dataset([outcome(0, 1)], lookup, prompts_mode="multi", target_mode="multi")
    assert records[0].target == 1


def test_build_dataset_feature_count_mismatch():
    with pytest.raises(FeatureCountMismatch):
        build_dataset([outcome(0, 0), outcome(1, 0)], lookup, feature_source=[np.zeros(3)])


def test_build_dataset_empty_outcomes():
    with pytest.raises(ValueError):
        build_dataset([], lookup)


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------


def balanced_records(n_per_class, classes=(0, 1)):
    records = []
    for cls in classes:
        for i in range(n_per_class):
            records.append(DatasetRecord(prompt="p", target=cls, run_id="s00r0", trial=i))
    return records


def test_split_balanced_binary():
    records = balanced_records(50)
    train, test = split(records, 0.2, seed=0)
    assert len(test) == 20 and len(train) == 80
    assert sum(r.target == 0 for r in test) == 10
    assert sum(r.target == 1 for r in test) == 10


def test_split_240_records_at_04_gives_96_test():
    records = balanced_records(40, classes=(0, 1, 2, 3, 4, 5))
    train, test = split(records, 0.4, seed=1)
    assert len(test) == 96
    assert len(train) == 144


def test_split_disjoint_exhaustive_deterministic():
    records = balanced_records(17, classes=(0, 1, 2))
    train, test = split(records, 0.25, seed=3)
    assert len(train) + len(test) == len(records)
    again = split(records, 0.25, seed=3)
    assert (train, test) == again
    # per-class proportions within one record
    for cls in (0, 1, 2):
        n_test = sum(r.target == cls for r in test)
        assert abs(n_test - 17 * 0.25) <= 1


def test_split_single_member_class():
    records = balanced_records(5) + [DatasetRecord(prompt="p", target=9, run_id="x", trial=0)]
    with pytest.raises(ClassTooSmall):
        split(records, 0.2, seed=0)


# ---------------------------------------------------------------------------
# export / import
# ---------------------------------------------------------------------------


def sample_records():
    return [
        DatasetRecord(prompt="line one\nline two", target=3, run_id="s00r0", trial=0,
                      features=(0.125, -2.5, 3.0)),
        DatasetRecord(prompt="plain", target=1, run_id="s01r1", trial=7, features=None),
    ]


def test_jsonl_round_trip(tmp_path):
    path = tmp_path / "d.jsonl"
    export(sample_records(), "jsonl", path)
    assert import_dataset(path) == sample_records()
    lines = path.read_text().splitlines()
    assert len(lines) == 2
    assert '"features"' in lines[0]
    assert '"features"' not in lines[1]  # records without features omit the key


def test_csv_round_trip(tmp_path):
    records = [
        DatasetRecord(prompt="has,comma and \"quote\"", target=0, run_id="a", trial=1, features=(1.5, 2.25)),
        DatasetRecord(prompt="x", target=5, run_id="b", trial=2, features=(0.1, 0.2)),
    ]
    path = tmp_path / "d.csv"
    export(records, "csv", path)
    assert import_dataset(path, "csv") == records


# ---------------------------------------------------------------------------
# fine-tuning config artifact
# ---------------------------------------------------------------------------


def test_finetune_config_contents(tmp_path):
    path = tmp_path / "finetune.txt"
    emit_finetune_config(path)
    content = path.read_text()
    assert "learning_rate=1e-5\n" in content
    assert "epochs=10\n" in content
    assert "batch_size=5\n" in content
    assert "weight_decay=0.01\n" in content
    assert "dropout=0.5\n" in content
    assert "grad_accumulation=2\n" in content
    assert "max_grad_norm=1.0\n" in content
    assert "test_split=0.2\n" in content
    assert "loss=cross-entropy\n" in content
    assert "optimizer=adam\n" in content
    assert "adapter=low-rank\n" in content


def test_finetune_config_idempotent(tmp_path):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    emit_finetune_config(a)
    emit_finetune_config(b)
    assert a.read_bytes() == b.read_bytes()


def test_finetune_defaults_frozen():
    config = FinetuneConfig()
    assert (config.learning_rate, config.epochs, config.batch_size) == (1e-5, 10, 5)
    assert (config.weight_decay, config.dropout) == (0.01, 0.5)
    assert (config.grad_accumulation, config.max_grad_norm, config.test_split) == (2, 1.0, 0.2)


# ---------------------------------------------------------------------------
# provenance
# ---------------------------------------------------------------------------


def test_exported_targets_rederivable_from_outcome_store(tmp_path):
    # no label drift: every record's target re-derives from (run_id, trial)
    from vsm_actr.dataset import target_for
    from vsm_actr.task import run_batch

    outcomes, _ = run_batch([BASE_INSTANCE], runs_per_set=2, trials_per_run=16, master_seed=4)
    store = {(o.run_id, o.trial_index): o for o in outcomes}
    records, _ = build_dataset(outcomes, lambda o: BASE_INSTANCE, prompts_mode="multi", target_mode="multi")
    path = tmp_path / "d.jsonl"
    export(records, "jsonl", path)
    for record in import_dataset(path):
        assert record.target == target_for(store[(record.run_id, record.trial)], "multi")
