"""Bridge acceptance: protocol conformance against the live pipeline client,
round-trip equality with batch extraction, and the single-vs-multi target
uncertainty ordering with bridge features."""

import json
import sys

import numpy as np

from vsm_actr.dataset import build_dataset, render_prompt
from vsm_actr.features import BridgeProvider, embed_lines
from vsm_actr.probe import fit_probe
from vsm_actr.task import run_batch
from vsm_actr.dataset import generate_problem_sets
from vsm_actr.task import set_index_from_run_id

from vsm_bridge.extract import batch_extract

SERVE_CMD = f"{sys.executable} -m vsm_bridge.cli serve"


def report(criterion: str):
    print(f"ACCEPTANCE PASS: {criterion}")


def test_bridge_protocol_conformance_via_pipeline_client():
    """Shape and determinism through the primary pipeline's own client."""
    texts = ["0.050   PROCEDURAL             PRODUCTION-FIRED CHOOSE-STRATEGY",
             "this is the end of one decision making"]
    with BridgeProvider(SERVE_CMD) as provider:
        first = embed_lines(provider, texts)
        second = embed_lines(provider, texts)
    assert first.values.shape == (2, 64)
    assert np.array_equal(first.values, second.values)
    assert first.provider_id == "bridge"
    assert first.model_id == "builtin:sentence"
    report("bridge protocol: shape and determinism through the pipeline client")


def test_round_trip_embed_lines_equals_batch_extract(tmp_path):
    """The streaming path and the file path produce identical vectors."""
    texts = ["one reasoning line", "another reasoning line", "a third"]
    prompts_path = tmp_path / "prompts.jsonl"
    with open(prompts_path, "w") as fh:
        for t in texts:
            fh.write(json.dumps({"prompt": t}) + "\n")
    out_path = tmp_path / "vectors.mat"
    batch_extract(prompts_path, out_path, kind="sentence")
    with open(out_path) as fh:
        json.loads(fh.readline())
        file_vectors = np.vstack([
            np.array([float(tok) for tok in line.split()]) for line in fh if line.strip()
        ])
    with BridgeProvider(SERVE_CMD) as provider:
        stream_vectors = embed_lines(provider, texts).values
    assert np.array_equal(file_vectors, stream_vectors)
    report("bridge round-trip: embed_lines over the protocol equals batch_extract")


def test_multi_facet_nll_exceeds_single_facet_with_bridge_features():
    """On one simulated batch, predicting (section, strategy) carries more
    uncertainty than predicting the section alone."""
    instances = generate_problem_sets(0, 8)
    outcomes, _ = run_batch(instances, runs_per_set=2, trials_per_run=16, master_seed=3)

    def instance_for(outcome):
        return instances[set_index_from_run_id(outcome.run_id)]

    with BridgeProvider(SERVE_CMD, kind="prompt_hidden") as provider:
        results = {}
        for mode, classes in (("single", 2), ("multi", 6)):
            unique = sorted({render_prompt(instance_for(o), mode) for o in outcomes})
            matrix = embed_lines(provider, unique)
            by_prompt = dict(zip(unique, matrix.values))
            records, _ = build_dataset(
                outcomes, instance_for, prompts_mode=mode, target_mode=mode,
                feature_source=lambda outcome, prompt: by_prompt[prompt],
            )
            features = np.array([r.features for r in records])
            targets = [r.target for r in records]
            _, rep = fit_probe(features, targets, classes=classes, folds=10, seed=0)
            results[mode] = rep.rows[0]

    assert results["multi"].nll > results["single"].nll
    report(
        f"target-complexity ordering: multi NLL {results['multi'].nll:.3f} > "
        f"single NLL {results['single'].nll:.3f} with bridge features"
    )
