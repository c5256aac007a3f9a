"""Batch extraction file mode."""

import json

import numpy as np
import pytest

from vsm_bridge.cli import main
from vsm_bridge.extract import batch_extract, read_prompts
from vsm_bridge.models import IoFailure


def write_prompts(path, prompts):
    with open(path, "w") as fh:
        for p in prompts:
            fh.write(json.dumps({"prompt": p}) + "\n")


def load_matrix(path):
    with open(path) as fh:
        meta = json.loads(fh.readline())
        rows = [np.array([float(tok) for tok in line.split()]) for line in fh if line.strip()]
    return np.vstack(rows), meta


def test_three_prompts_three_rows(tmp_path):
    prompts_path = tmp_path / "prompts.jsonl"
    out_path = tmp_path / "vectors.mat"
    write_prompts(prompts_path, ["first prompt", "second\nprompt", "third"])
    assert batch_extract(prompts_path, out_path) == 3
    values, meta = load_matrix(out_path)
    assert values.shape == (3, 64)
    assert meta["model"] == "builtin:causal"
    assert meta["kind"] == "prompt_hidden"


def test_rerun_byte_identical(tmp_path):
    prompts_path = tmp_path / "prompts.jsonl"
    write_prompts(prompts_path, ["stable", "vectors"])
    a, b = tmp_path / "a.mat", tmp_path / "b.mat"
    batch_extract(prompts_path, a)
    batch_extract(prompts_path, b)
    assert a.read_bytes() == b.read_bytes()


def test_prompt_file_variants(tmp_path):
    path = tmp_path / "mixed.jsonl"
    with open(path, "w") as fh:
        fh.write(json.dumps({"prompt": "object form"}) + "\n")
        fh.write(json.dumps({"text": "text key"}) + "\n")
        fh.write(json.dumps("bare string") + "\n")
    assert read_prompts(path) == ["object form", "text key", "bare string"]


def test_missing_prompts_file(tmp_path):
    with pytest.raises(IoFailure):
        batch_extract(tmp_path / "absent.jsonl", tmp_path / "out.mat")


def test_empty_prompts_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    with pytest.raises(IoFailure):
        batch_extract(path, tmp_path / "out.mat")


def test_missing_model_exit_code(tmp_path):
    prompts_path = tmp_path / "prompts.jsonl"
    write_prompts(prompts_path, ["x"])
    code = main(["extract", "--prompts", str(prompts_path), "--out", str(tmp_path / "o.mat"),
                 "--causal-model", "no-such-org/no-such-model"])
    assert code == 2


def test_cli_extract_sentence_kind(tmp_path):
    prompts_path = tmp_path / "prompts.jsonl"
    write_prompts(prompts_path, ["a", "b"])
    out = tmp_path / "s.mat"
    assert main(["extract", "--prompts", str(prompts_path), "--out", str(out), "--kind", "sentence"]) == 0
    values, meta = load_matrix(out)
    assert values.shape == (2, 64)
    assert meta["model"] == "builtin:sentence"
