"""Command-line pipeline: simulate -> distill -> embed -> reduce ->
build-dataset -> eval, plus analyze.

Each stage consumes the previous stage's files from the output directory and
writes its own artifacts plus a manifest with checksums. Exit codes: 2 for
configuration errors, 3 for engine errors, 4 for a missing upstream artifact,
5 for embedding-provider failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .codec import distill_selected, emit_text, line_category, write_selected_csv
from .dataset import (
    build_dataset,
    emit_finetune_config,
    export,
    generate_problem_sets,
    import_dataset,
    render_prompt,
)
from .engine import config_from_dict, config_to_dict
from .errors import ProviderUnavailable, VsmError
from .features import (
    BridgeProvider,
    TestEmbedder,
    embed_lines,
    flatten_and_concat,
    load_matrix,
    pad_and_impute,
    pca_reduce,
    pca_spectrum,
    save_matrix,
    sree_component_count,
    wilks_lambda,
)
from .manifest import RunManifest, write_manifest
from .probe import (
    build_report,
    chance_baseline,
    fit_probe,
    progression_stats,
    render_text,
    report_to_json,
)
from .task import (
    read_outcomes_csv,
    read_problem_sets_csv,
    run_batch,
    set_index_from_run_id,
    write_outcomes_csv,
    write_problem_sets_csv,
)

EXIT_CONFIG = 2
EXIT_ENGINE = 3
EXIT_MISSING = 4
EXIT_PROVIDER = 5

BRIDGE_ENV = "VSM_ACTR_BRIDGE"


class StageError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise StageError(EXIT_MISSING, f"missing upstream artifact {path} (run `{hint}` first)")
    return path


def _make_provider(spec: str, dim: int):
    endpoint_override = os.environ.get(BRIDGE_ENV)
    if spec == "test":
        return TestEmbedder(dim=dim)
    if spec == "bridge" or spec.startswith("bridge:"):
        endpoint = endpoint_override or (spec[len("bridge:"):] if ":" in spec else "")
        if not endpoint:
            raise StageError(EXIT_CONFIG, f"bridge provider needs an endpoint (bridge:CMD or ${BRIDGE_ENV})")
        return BridgeProvider(endpoint)
    raise StageError(EXIT_CONFIG, f"unknown provider {spec!r}")


def _manifest(args_cmd: str, config: dict, seed: Optional[int]) -> RunManifest:
    return RunManifest(command=args_cmd, config=config, master_seed=seed, tool_version=__version__)


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    raw_config = {}
    if args.config:
        try:
            raw_config = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise StageError(EXIT_CONFIG, f"cannot read config {args.config}: {exc}")
    raw_config.setdefault("noise_s", 0.8)
    raw_config["rng_seed"] = args.seed
    try:
        config = config_from_dict(raw_config)
    except (ValueError, TypeError) as exc:
        raise StageError(EXIT_CONFIG, f"bad engine config: {exc}")

    instances = generate_problem_sets(args.seed, args.sets)
    try:
        outcomes, traces = run_batch(
            instances,
            runs_per_set=args.runs,
            trials_per_run=args.trials,
            config=config,
            master_seed=args.seed,
        )
    except VsmError as exc:
        raise StageError(EXIT_ENGINE, f"engine error: {exc}")

    manifest = _manifest("simulate", config_to_dict(config), args.seed)
    problem_path = out / "problem_sets.csv"
    write_problem_sets_csv(instances, problem_path)
    manifest.add_output(problem_path, out)
    outcome_path = out / "outcomes.csv"
    write_outcomes_csv(outcomes, outcome_path)
    manifest.add_output(outcome_path, out)
    trace_dir = out / "traces"
    trace_dir.mkdir(exist_ok=True)
    for run_id, log in traces.items():
        trace_path = trace_dir / f"{run_id}.trace.txt"
        trace_path.write_text(emit_text(log))
        manifest.add_output(trace_path, out)
    write_manifest(manifest, out / "manifest-simulate.json")
    print(f"simulate: {len(outcomes)} outcomes across {len(traces)} runs -> {out}")
    return 0


def cmd_distill(args) -> int:
    out = Path(args.out)
    outcome_path = _require(out / "outcomes.csv", "simulate")
    outcomes = read_outcomes_csv(outcome_path)
    selected = distill_selected(outcomes, args.mode)
    manifest = _manifest("distill", {"mode": args.mode}, None)
    manifest.add_input(outcome_path, out)
    target_path = out / "distilled.csv"
    write_selected_csv(selected, target_path)
    manifest.add_output(target_path, out)
    write_manifest(manifest, out / "manifest-distill.json")
    print(f"distill: {len(selected.records)} records ({args.mode}) -> {target_path}")
    return 0


def cmd_embed(args) -> int:
    out = Path(args.out)
    trace_dir = _require(out / "traces", "simulate")
    provider = _make_provider(args.provider, args.dim)
    emb_dir = out / "embeddings"
    emb_dir.mkdir(exist_ok=True)
    manifest = _manifest("embed", {"provider": args.provider, "dim": args.dim}, None)
    count = 0
    try:
        for trace_path in sorted(trace_dir.glob("*.trace.txt")):
            run_id = trace_path.name.replace(".trace.txt", "")
            lines = trace_path.read_text().splitlines()
            matrix = embed_lines(provider, lines)
            labels = [line_category(line) for line in lines]
            emb_path = emb_dir / f"{run_id}.mat"
            save_matrix(
                emb_path,
                matrix.values,
                {"run_id": run_id, "provider": matrix.provider_id, "model": matrix.model_id, "labels": labels},
            )
            manifest.add_input(trace_path, out)
            manifest.add_output(emb_path, out)
            count += 1
    except ProviderUnavailable as exc:
        raise StageError(EXIT_PROVIDER, str(exc))
    finally:
        if hasattr(provider, "close"):
            provider.close()
    if count == 0:
        raise StageError(EXIT_MISSING, f"no trace files found in {trace_dir}")
    write_manifest(manifest, out / "manifest-embed.json")
    print(f"embed: {count} runs embedded with provider {args.provider} -> {emb_dir}")
    return 0


def cmd_reduce(args) -> int:
    out = Path(args.out)
    emb_dir = _require(out / "embeddings", "embed")
    paths = sorted(emb_dir.glob("*.mat"))
    if not paths:
        raise StageError(EXIT_MISSING, f"no embedding matrices in {emb_dir}")
    run_ids: List[str] = []
    blocks: List[np.ndarray] = []
    labels: List[str] = []
    manifest = _manifest("reduce", {"threshold": args.threshold}, None)
    for path in paths:
        values, meta = load_matrix(path)
        run_ids.append(meta["run_id"])
        blocks.append(values)
        labels.extend(meta["labels"])
        manifest.add_input(path, out)

    stacked = np.vstack(blocks)
    try:
        spectrum = pca_spectrum(stacked)
        n_components = sree_component_count(spectrum, args.threshold)
        reduced = pca_reduce(stacked, n_components)
    except ValueError as exc:
        raise StageError(EXIT_CONFIG, f"cannot reduce embeddings: {exc}")

    red_dir = out / "reduced"
    red_dir.mkdir(exist_ok=True)
    global_path = red_dir / "all_lines.mat"
    save_matrix(
        global_path,
        reduced.scores,
        {
            "n_components": n_components,
            "threshold": args.threshold,
            "explained_variance_ratio": [float(v) for v in reduced.explained_variance_ratio],
            "labels": labels,
            "run_ids": run_ids,
            "rows_per_run": [int(b.shape[0]) for b in blocks],
        },
    )
    manifest.add_output(global_path, out)

    # per-run scores, padded to a rectangle and flattened row-major
    offsets = np.cumsum([0] + [b.shape[0] for b in blocks])
    per_run = [reduced.scores[offsets[i]:offsets[i + 1]] for i in range(len(blocks))]
    tensor, mask = pad_and_impute(per_run)
    flat = tensor.reshape(tensor.shape[0], -1)
    flat_path = red_dir / "runs_flat.mat"
    save_matrix(
        flat_path,
        flat,
        {"run_ids": run_ids, "n_components": n_components, "max_rows": int(tensor.shape[1]),
         "original_rows": [int(b.shape[0]) for b in blocks]},
    )
    manifest.add_output(flat_path, out)
    write_manifest(manifest, out / "manifest-reduce.json")
    print(f"reduce: {stacked.shape} -> {n_components} components "
          f"(covers {float(np.cumsum(reduced.spectrum_ratio)[n_components - 1]):.3f} of variance)")
    return 0


def cmd_build_dataset(args) -> int:
    out = Path(args.out)
    outcome_path = _require(out / "outcomes.csv", "simulate")
    problem_path = _require(out / "problem_sets.csv", "simulate")
    outcomes = read_outcomes_csv(outcome_path)
    instances = read_problem_sets_csv(problem_path)
    manifest = _manifest(
        "build-dataset",
        {"mode": args.mode, "features": args.features, "provider": args.provider, "dim": args.dim},
        None,
    )
    manifest.add_input(outcome_path, out)
    manifest.add_input(problem_path, out)

    def instance_for(outcome):
        return instances[set_index_from_run_id(outcome.run_id)]

    feature_source = None
    if args.features != "none":
        prompt_vecs: Dict[str, np.ndarray] = {}
        run_flat: Dict[str, np.ndarray] = {}
        if args.features in ("prompt", "prompt+trace"):
            provider = _make_provider(args.provider, args.dim)
            unique_prompts = sorted({render_prompt(instance_for(o), args.mode) for o in outcomes})
            try:
                matrix = embed_lines(provider, unique_prompts)
            except ProviderUnavailable as exc:
                raise StageError(EXIT_PROVIDER, str(exc))
            finally:
                if hasattr(provider, "close"):
                    provider.close()
            prompt_vecs = dict(zip(unique_prompts, matrix.values))
        if args.features in ("trace", "prompt+trace"):
            flat_path = _require(out / "reduced" / "runs_flat.mat", "reduce")
            flat, meta = load_matrix(flat_path)
            run_flat = {rid: flat[i] for i, rid in enumerate(meta["run_ids"])}
            manifest.add_input(flat_path, out)

        def feature_source(outcome, prompt):
            parts = []
            if run_flat:
                parts.append(run_flat[outcome.run_id])
            if prompt_vecs:
                vec = prompt_vecs[prompt]
                parts.append(vec)
            if len(parts) == 2:
                return flatten_and_concat(parts[0].reshape(1, -1), parts[1])
            return parts[0]

    records, sizing = build_dataset(
        outcomes, instance_for, prompts_mode=args.mode, target_mode=args.mode, feature_source=feature_source
    )
    dataset_path = out / f"dataset_{args.mode}.jsonl"
    export(records, "jsonl", dataset_path)
    manifest.add_output(dataset_path, out)
    sizing_path = out / f"sizing_{args.mode}.txt"
    sizing_path.write_text(str(sizing) + "\n")
    manifest.add_output(sizing_path, out)
    finetune_path = out / "finetune_config.txt"
    emit_finetune_config(finetune_path)
    manifest.add_output(finetune_path, out)
    write_manifest(manifest, out / f"manifest-build-dataset-{args.mode}.json")
    print(f"build-dataset: {len(records)} records ({args.mode}); {sizing}")
    return 0


def cmd_eval(args) -> int:
    out = Path(args.out)
    dataset_path = _require(out / f"dataset_{args.mode}.jsonl", "build-dataset")
    records = import_dataset(dataset_path, "jsonl")
    if any(r.features is None for r in records):
        raise StageError(EXIT_MISSING, f"{dataset_path} has no features; rerun build-dataset with --features")
    features = np.array([r.features for r in records], dtype=float)
    targets = [r.target for r in records]
    classes = 2 if args.mode == "single" else 6
    try:
        _, probe_report = fit_probe(
            features, targets, classes, l2_lambda=args.l2_lambda, folds=args.folds, seed=args.seed,
            label=f"{args.mode}-facet probe",
        )
    except ValueError as exc:
        raise StageError(EXIT_CONFIG, f"cannot cross-validate this dataset: {exc}")
    row = probe_report.rows[0]
    report = build_report(
        {row.label: (row.nll, row.accuracy)},
        baselines={"chance": chance_baseline(targets, classes), "untrained": None},
        fold_detail={row.label: (row.fold_nll, row.fold_accuracy)},
    )
    manifest = _manifest(
        "eval", {"mode": args.mode, "folds": args.folds, "lambda": args.l2_lambda, "seed": args.seed}, args.seed
    )
    manifest.add_input(dataset_path, out)
    report_json = out / f"report_{args.mode}.json"
    report_json.write_text(report_to_json(report) + "\n")
    manifest.add_output(report_json, out)
    report_txt = out / f"report_{args.mode}.txt"
    report_txt.write_text(render_text(report))
    manifest.add_output(report_txt, out)
    metrics_path = out / f"metrics_{args.mode}.csv"
    with open(metrics_path, "w") as fh:
        fh.write("fold,nll,accuracy\n")
        for k, (n, a) in enumerate(zip(row.fold_nll, row.fold_accuracy)):
            fh.write(f"{k},{n!r},{a!r}\n")
    manifest.add_output(metrics_path, out)
    write_manifest(manifest, out / f"manifest-eval-{args.mode}.json")
    print(render_text(report), end="")
    return 0


def cmd_analyze(args) -> int:
    out = Path(args.out)
    outcome_path = _require(out / "outcomes.csv", "simulate")
    outcomes = read_outcomes_csv(outcome_path)
    try:
        stats = progression_stats(outcomes)
    except ValueError as exc:
        raise StageError(EXIT_CONFIG, f"cannot analyze outcomes: {exc}")
    analysis = {
        "per_trial_mean": {str(k): v for k, v in stats.per_trial_mean.items()},
        "ols_slope": stats.ols_slope,
        "ols_intercept": stats.ols_intercept,
    }
    if stats.ordered_logit is not None:
        analysis["ordered_logit"] = {
            "slope": stats.ordered_logit.slope,
            "thresholds": list(stats.ordered_logit.thresholds),
            "log_likelihood": stats.ordered_logit.log_likelihood,
            "converged": stats.ordered_logit.converged,
            "separation_suspected": stats.ordered_logit.separation_suspected,
        }
    manifest = _manifest("analyze", {}, None)
    manifest.add_input(outcome_path, out)

    global_path = out / "reduced" / "all_lines.mat"
    if global_path.exists():
        scores, meta = load_matrix(global_path)
        labels = np.array(meta["labels"])
        groups = [(lab, scores[labels == lab]) for lab in sorted(set(meta["labels"]))]
        groups = [(lab, rows) for lab, rows in groups if rows.shape[0] >= 2]
        if len(groups) >= 2:
            try:
                lam, chi2, dof = wilks_lambda(groups)
                analysis["wilks"] = {"lambda": lam, "bartlett_chi2": chi2, "dof": dof,
                                     "groups": [lab for lab, _ in groups]}
            except VsmError as exc:
                analysis["wilks"] = {"error": str(exc)}
        manifest.add_input(global_path, out)

    analysis_path = out / "analysis.json"
    analysis_path.write_text(json.dumps(analysis, sort_keys=True, indent=2) + "\n")
    manifest.add_output(analysis_path, out)
    write_manifest(manifest, out / "manifest-analyze.json")
    print(f"analyze: OLS slope {stats.ols_slope:+.4f}"
          + (f", ordered-logit slope {stats.ordered_logit.slope:+.4f}" if stats.ordered_logit else ""))
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vsm-actr", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the decision-model batch and write outcomes + traces")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON file with engine config overrides")
    p.add_argument("--out", required=True)
    p.add_argument("--sets", type=int, default=32)
    p.add_argument("--runs", type=int, default=4)
    p.add_argument("--trials", type=int, default=16)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("distill", help="extract per-trial target codes from outcomes")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["single", "multi"], default="single")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("embed", help="embed trace lines with a provider")
    p.add_argument("--out", required=True)
    p.add_argument("--provider", default="test", help="test or bridge:<command>")
    p.add_argument("--dim", type=int, default=64, help="dimension of the test embedder")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("reduce", help="select components by variance coverage and project")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.70)
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("build-dataset", help="assemble prompt/target records")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["single", "multi"], default="single")
    p.add_argument("--features", choices=["none", "prompt", "trace", "prompt+trace"], default="prompt")
    p.add_argument("--provider", default="test")
    p.add_argument("--dim", type=int, default=64)
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("eval", help="cross-validated probe with baselines")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["single", "multi"], default="single")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--lambda", dest="l2_lambda", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="progression statistics and group-effect check")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except VsmError as exc:
        print(f"engine error: {exc}", file=sys.stderr)
        return EXIT_ENGINE


if __name__ == "__main__":
    sys.exit(main())
