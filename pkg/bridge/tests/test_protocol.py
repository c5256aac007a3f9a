"""Protocol conformance of the stdio responder."""

import io
import json
import subprocess
import sys

import numpy as np
import pytest

from vsm_bridge.models import BridgeConfig, BridgeModels, ModelLoadFailure
from vsm_bridge.server import handle_request, serve


@pytest.fixture(scope="module")
def models():
    return BridgeModels()


def ask(models, request):
    return handle_request(models, json.dumps(request) + "\n")


def test_response_shape_and_id(models):
    response = ask(models, {"id": 41, "texts": ["alpha", "beta"]})
    assert response["id"] == 41
    assert response["dim"] == 64
    vectors = np.asarray(response["vectors"])
    assert vectors.shape == (2, 64)
    assert np.all(np.isfinite(vectors))


def test_identical_text_identical_vectors(models):
    a = ask(models, {"id": 1, "texts": ["same text twice"]})
    b = ask(models, {"id": 2, "texts": ["same text twice"]})
    assert a["vectors"] == b["vectors"]


def test_sentence_vectors_unit_norm(models):
    response = ask(models, {"id": 3, "texts": ["normalize me"]})
    assert np.linalg.norm(response["vectors"][0]) == pytest.approx(1.0, abs=1e-9)


def test_prompt_hidden_kind(models):
    response = ask(models, {"id": 4, "texts": ["a prompt"], "kind": "prompt_hidden"})
    assert response["model"] == "builtin:causal"
    assert len(response["vectors"]) == 1
    sentence = ask(models, {"id": 5, "texts": ["a prompt"]})
    assert response["vectors"] != sentence["vectors"]


def test_malformed_json_is_error_not_crash(models):
    response = handle_request(models, "{broken\n")
    assert "error" in response
    # and the session still answers
    ok = ask(models, {"id": 6, "texts": ["after the error"]})
    assert ok["id"] == 6 and "vectors" in ok


def test_missing_texts_field(models):
    response = ask(models, {"id": 7})
    assert response["id"] == 7
    assert "error" in response


def test_unknown_kind_is_error(models):
    response = ask(models, {"id": 8, "texts": ["x"], "kind": "telepathy"})
    assert "error" in response


def test_blank_lines_ignored(models):
    assert handle_request(models, "\n") is None


def test_serve_loop_over_streams():
    stdin = io.StringIO(
        json.dumps({"id": 1, "texts": ["one"]}) + "\n"
        + "garbage\n"
        + json.dumps({"id": 2, "texts": ["two"], "kind": "prompt_hidden"}) + "\n"
    )
    stdout = io.StringIO()
    serve(stdin, stdout)
    lines = stdout.getvalue().splitlines()
    assert len(lines) == 3
    first, second, third = (json.loads(line) for line in lines)
    assert first["id"] == 1 and "vectors" in first
    assert "error" in second
    assert third["id"] == 2 and third["model"] == "builtin:causal"


def test_subprocess_session_matches_in_process(models):
    proc = subprocess.Popen(
        [sys.executable, "-m", "vsm_bridge.cli", "serve"],
        stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True,
    )
    try:
        proc.stdin.write(json.dumps({"id": 9, "texts": ["cross-process determinism"]}) + "\n")
        proc.stdin.flush()
        remote = json.loads(proc.stdout.readline())
    finally:
        proc.stdin.close()
        proc.wait(timeout=30)
    local = ask(models, {"id": 9, "texts": ["cross-process determinism"]})
    assert remote["vectors"] == local["vectors"]


def test_unknown_builtin_model_load_failure():
    with pytest.raises(ModelLoadFailure):
        BridgeModels(BridgeConfig(sentence_model="builtin:nonexistent")).sentence


def test_hub_model_unavailable_offline():
    models = BridgeModels(BridgeConfig(causal_model="no-such-org/no-such-model"))
    with pytest.raises(ModelLoadFailure):
        models.causal


def test_empty_texts_is_error(models):
    response = ask(models, {"id": 10, "texts": []})
    assert response["id"] == 10
    assert "error" in response
