"""Behavior-prediction probes and progression analysis.

The probe is a multinomial logistic regression minimizing summed cross-entropy
plus (lambda/2)||w||^2 over all parameters (bias included, so the infinite-
regularization limit is exactly the uniform predictor). Features are
standardized per training fold, the analytic gradient drives an L-BFGS
minimization to gradient norm 1e-6 (or 500 iterations, reported as a
warning), and metrics are held-out mean negative log-likelihood (natural log)
and accuracy. Progression over trials is summarized with per-trial means, an
OLS slope, and a proportional-odds ordered logistic fit by Newton iteration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize

from .errors import DegenerateFold
from .task import DecisionOutcome

GRAD_TOL = 1e-6
MAX_ITER = 500


# ---------------------------------------------------------------------------
# multinomial logistic probe
# ---------------------------------------------------------------------------


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    w = np.exp(z)
    return w / w.sum(axis=1, keepdims=True)


def probe_loss_grad(
    w_flat: np.ndarray, features: np.ndarray, targets: np.ndarray, classes: int, l2_lambda: float
) -> Tuple[float, np.ndarray]:
    """Summed cross-entropy + (lambda/2)||w||^2 and its gradient.

    ``features`` already carries the bias column; weights are (dim+1) x K.
    """
    n, d1 = features.shape
    w = w_flat.reshape(d1, classes)
    probs = _softmax_rows(features @ w)
    ce = -np.log(probs[np.arange(n), targets] + 1e-300).sum()
    loss = ce + 0.5 * l2_lambda * float(w_flat @ w_flat)
    resid = probs.copy()
    resid[np.arange(n), targets] -= 1.0
    grad = features.T @ resid + l2_lambda * w
    return loss, grad.ravel()


@dataclass
class ProbeModel:
    """Fitted probe: weights are classes x (feature dim + bias)."""

    weights: np.ndarray
    l2_lambda: float
    classes: int
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    converged: bool = True
    grad_norm: float = 0.0

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        x = (np.asarray(features, dtype=float) - self.feature_mean) / self.feature_scale
        x1 = np.hstack([x, np.ones((x.shape[0], 1))])
        return _softmax_rows(x1 @ self.weights.T)


def fit_probe_single(
    features: np.ndarray, targets: np.ndarray, classes: int, l2_lambda: float = 1.0
) -> ProbeModel:
    """Fit one probe on (already raw) features; standardization is internal."""
    x = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=int)
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0.0] = 1.0
    x1 = np.hstack([(x - mean) / scale, np.ones((x.shape[0], 1))])
    w0 = np.zeros(x1.shape[1] * classes)
    result = minimize(
        probe_loss_grad,
        w0,
        args=(x1, y, classes, l2_lambda),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": MAX_ITER, "gtol": GRAD_TOL, "ftol": 0.0},
    )
    _, grad = probe_loss_grad(result.x, x1, y, classes, l2_lambda)
    grad_norm = float(np.max(np.abs(grad)))
    return ProbeModel(
        weights=result.x.reshape(x1.shape[1], classes).T,
        l2_lambda=l2_lambda,
        classes=classes,
        feature_mean=mean,
        feature_scale=scale,
        converged=grad_norm <= 10 * GRAD_TOL,
        grad_norm=grad_norm,
    )


def nll(model: ProbeModel, features: np.ndarray, targets: Sequence[int]) -> float:
    """Mean negative natural-log likelihood of the targets."""
    y = np.asarray(targets, dtype=int)
    probs = model.predict_proba(features)
    if y.min() < 0 or y.max() >= probs.shape[1]:
        raise ValueError("target out of range")
    return float(-np.log(probs[np.arange(len(y)), y]).mean())


def accuracy(model: ProbeModel, features: np.ndarray, targets: Sequence[int]) -> float:
    y = np.asarray(targets, dtype=int)
    return float((model.predict_proba(features).argmax(axis=1) == y).mean())


def chance_baseline(targets: Sequence[int], classes: int) -> Tuple[float, float]:
    """Uniform-guess baseline: NLL = ln(classes), accuracy = 1/classes."""
    if len(targets) == 0:
        raise ValueError("targets must be non-empty")
    return float(np.log(classes)), 1.0 / classes


def _stratified_folds(targets: np.ndarray, folds: int, rng: np.random.Generator) -> List[np.ndarray]:
    """Per-class shuffled round-robin assignment into ``folds`` test sets."""
    assignments = [[] for _ in range(folds)]
    for cls in np.unique(targets):
        members = np.flatnonzero(targets == cls)
        rng.shuffle(members)
        for i, idx in enumerate(members):
            assignments[i % folds].append(int(idx))
    return [np.sort(np.array(a, dtype=int)) for a in assignments]


def fit_probe(
    features: np.ndarray,
    targets: Sequence[int],
    classes: int,
    l2_lambda: float = 1.0,
    folds: int = 10,
    seed: int = 0,
    label: str = "probe",
) -> Tuple[List[ProbeModel], "EvalReport"]:
    """K-fold cross-validated probe fit; report carries per-fold metrics."""
    x = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=int)
    if not np.all(np.isfinite(x)):
        raise ValueError("features must be finite")
    if len(y) < folds * classes:
        raise ValueError(f"need at least folds*classes={folds * classes} samples, got {len(y)}")
    rng = np.random.default_rng(seed)
    test_folds = _stratified_folds(y, folds, rng)
    observed = set(np.unique(y).tolist())
    models: List[ProbeModel] = []
    fold_nll: List[float] = []
    fold_acc: List[float] = []
    warnings: List[str] = []
    for k, test_idx in enumerate(test_folds):
        if len(test_idx) == 0:
            raise DegenerateFold(f"fold {k} is empty")
        train_mask = np.ones(len(y), dtype=bool)
        train_mask[test_idx] = False
        if set(np.unique(y[train_mask]).tolist()) != observed:
            raise DegenerateFold(f"fold {k}: training split is missing an observed class")
        model = fit_probe_single(x[train_mask], y[train_mask], classes, l2_lambda)
        if not model.converged:
            warnings.append(f"fold {k}: gradient norm {model.grad_norm:.2e} above tolerance")
        models.append(model)
        fold_nll.append(nll(model, x[test_idx], y[test_idx]))
        fold_acc.append(accuracy(model, x[test_idx], y[test_idx]))
    row = EvalRow(
        label=label,
        nll=float(np.mean(fold_nll)),
        accuracy=float(np.mean(fold_acc)),
        fold_nll=tuple(fold_nll),
        fold_accuracy=tuple(fold_acc),
        warnings=tuple(warnings),
    )
    return models, EvalReport(rows=(row,))


# ---------------------------------------------------------------------------
# progression analysis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OrderedLogitFit:
    slope: float
    thresholds: Tuple[float, ...]
    log_likelihood: float
    converged: bool
    separation_suspected: bool
    diagnostics: str = ""


@dataclass(frozen=True)
class ProgressionStats:
    per_trial_mean: Dict[int, float]
    ols_slope: float
    ols_intercept: float
    ordered_logit: Optional[OrderedLogitFit]


def _ordered_logit_nll_grad(params: np.ndarray, x: np.ndarray, y: np.ndarray, levels: int):
    """Negative log-likelihood and gradient for proportional odds on one regressor.

    params = [beta, theta_0, ..., theta_{levels-2}]; P(y<=j) = sigmoid(theta_j - beta*x).
    """
    beta, thetas = params[0], params[1:]

    def sigmoid(z):
        return np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)), np.exp(z) / (1.0 + np.exp(z)))

    nll_total = 0.0
    grad = np.zeros_like(params)
    for j in range(levels):
        mask = y == j
        if not mask.any():
            continue
        xs = x[mask]
        upper = sigmoid(thetas[j] - beta * xs) if j < levels - 1 else np.ones_like(xs)
        lower = sigmoid(thetas[j - 1] - beta * xs) if j > 0 else np.zeros_like(xs)
        p = np.clip(upper - lower, 1e-12, 1.0)
        nll_total -= np.log(p).sum()
        du = upper * (1 - upper) if j < levels - 1 else np.zeros_like(xs)
        dl = lower * (1 - lower) if j > 0 else np.zeros_like(xs)
        grad[0] += ((du - dl) * xs / p).sum()  # d/dbeta of (theta - beta*x) is -x
        if j < levels - 1:
            grad[1 + j] -= (du / p).sum()
        if j > 0:
            grad[j] += (dl / p).sum()
    return nll_total, grad


def fit_ordered_logit(x: Sequence[float], y: Sequence[int], max_iter: int = 100) -> OrderedLogitFit:
    """Proportional-odds fit by damped Newton (numeric Hessian on the analytic
    gradient). Perfect separation is reported through the flags, not raised:
    the slope sign is still meaningful when the likelihood has no finite
    optimum."""
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=int)
    levels = int(ya.max()) + 1
    if levels < 2:
        raise ValueError("ordered logit needs at least 2 observed levels")
    # start from the empirical cumulative log-odds at beta=0
    params = np.zeros(levels)  # [beta, thetas...]
    for j in range(levels - 1):
        share = np.clip((ya <= j).mean(), 1e-3, 1 - 1e-3)
        params[1 + j] = np.log(share / (1 - share))
    converged = False
    separation = False
    diag = ""
    nll_value, grad = _ordered_logit_nll_grad(params, xa, ya, levels)
    for _ in range(max_iter):
        if np.max(np.abs(grad)) <= 1e-8:
            converged = True
            break
        # numeric Hessian by central differences of the analytic gradient
        h = 1e-5
        hess = np.zeros((len(params), len(params)))
        for k in range(len(params)):
            bumped = params.copy()
            bumped[k] += h
            _, g_plus = _ordered_logit_nll_grad(bumped, xa, ya, levels)
            bumped[k] -= 2 * h
            _, g_minus = _ordered_logit_nll_grad(bumped, xa, ya, levels)
            hess[:, k] = (g_plus - g_minus) / (2 * h)
        hess = (hess + hess.T) / 2.0
        try:
            step = np.linalg.solve(hess + 1e-10 * np.eye(len(params)), grad)
        except np.linalg.LinAlgError:
            diag = "singular Hessian"
            break
        scale = 1.0
        for _ in range(30):
            trial = params - scale * step
            trial_nll, trial_grad = _ordered_logit_nll_grad(trial, xa, ya, levels)
            if trial_nll <= nll_value:
                params, nll_value, grad = trial, trial_nll, trial_grad
                break
            scale /= 2.0
        else:
            diag = "line search stalled"
            break
        if np.max(np.abs(params)) > 1e3 or np.max(np.abs(params[0] * xa)) > 30:
            separation = True
            diag = f"linear predictor diverging (|params| up to {np.max(np.abs(params)):.1f})"
            break
    thetas = tuple(float(t) for t in params[1:])
    if any(b <= a for a, b in zip(thetas, thetas[1:])):
        diag = diag or f"thresholds not increasing: {thetas}"
    return OrderedLogitFit(
        slope=float(params[0]),
        thresholds=thetas,
        log_likelihood=float(-nll_value),
        converged=converged,
        separation_suspected=separation,
        diagnostics=diag,
    )


def progression_stats(outcomes: Sequence[DecisionOutcome]) -> ProgressionStats:
    """Strategy-over-trials summary: per-trial means, OLS slope, ordered logit."""
    trials = np.array([o.trial_index for o in outcomes], dtype=float)
    strategies = np.array([o.strategy for o in outcomes], dtype=float)
    if len(np.unique(trials)) < 2:
        raise ValueError("need at least 2 distinct trial indices")
    per_trial = {
        int(t): float(strategies[trials == t].mean()) for t in sorted(np.unique(trials))
    }
    slope, intercept = np.polyfit(trials, strategies, 1)
    levels = np.unique(strategies.astype(int))
    ordered = None
    if len(levels) >= 2:
        # compress to consecutive codes in case a level never occurs
        remap = {int(lv): i for i, lv in enumerate(levels)}
        ordered = fit_ordered_logit(trials, np.array([remap[int(s)] for s in strategies]))
    return ProgressionStats(
        per_trial_mean=per_trial,
        ols_slope=float(slope),
        ols_intercept=float(intercept),
        ordered_logit=ordered,
    )


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalRow:
    label: str
    nll: float
    accuracy: float
    fold_nll: Tuple[float, ...] = ()
    fold_accuracy: Tuple[float, ...] = ()
    warnings: Tuple[str, ...] = ()


@dataclass(frozen=True)
class EvalReport:
    rows: Tuple[EvalRow, ...] = ()
    baselines: Tuple[EvalRow, ...] = ()
    unavailable: Tuple[str, ...] = ()
    verdicts: Tuple[str, ...] = ()


def build_report(
    results: Mapping[str, Tuple[float, float]],
    baselines: Optional[Mapping[str, Optional[Tuple[float, float]]]] = None,
    fold_detail: Optional[Mapping[str, Tuple[Sequence[float], Sequence[float]]]] = None,
) -> EvalReport:
    """Assemble rows of (NLL, accuracy) plus baseline rows and verdicts.

    A baseline mapped to None is listed as unavailable (the slot for a
    pretrained-readout baseline that needs an external model).
    """
    rows = []
    for label, (nll_value, acc) in results.items():
        folds = fold_detail.get(label) if fold_detail else None
        rows.append(
            EvalRow(
                label=label,
                nll=float(nll_value),
                accuracy=float(acc),
                fold_nll=tuple(float(v) for v in folds[0]) if folds else (),
                fold_accuracy=tuple(float(v) for v in folds[1]) if folds else (),
            )
        )
    baseline_rows = []
    unavailable = []
    for label, value in (baselines or {}).items():
        if value is None:
            unavailable.append(label)
        else:
            baseline_rows.append(EvalRow(label=label, nll=float(value[0]), accuracy=float(value[1])))
    verdicts = []
    for row in rows:
        for base in baseline_rows:
            cmp_nll = "below" if row.nll < base.nll else "above"
            cmp_acc = "above" if row.accuracy > base.accuracy else "below"
            verdicts.append(f"{row.label}: NLL {cmp_nll} {base.label}, accuracy {cmp_acc} {base.label}")
    return EvalReport(
        rows=tuple(rows),
        baselines=tuple(baseline_rows),
        unavailable=tuple(unavailable),
        verdicts=tuple(verdicts),
    )


def _fmt_metric(value: float) -> str:
    return f"{value:.4g}"


def render_text(report: EvalReport) -> str:
    """Fixed-width table: Target Type / Model, NLL, Accuracy."""
    width = max([len("Target Type / Model")] + [len(r.label) for r in report.rows + report.baselines] + [len(u) for u in report.unavailable])
    lines = [f"{'Target Type / Model':<{width}}  {'NLL':>8}  {'Accuracy':>8}"]
    for row in report.rows:
        lines.append(f"{row.label:<{width}}  {_fmt_metric(row.nll):>8}  {_fmt_metric(row.accuracy):>8}")
    for row in report.baselines:
        lines.append(f"{row.label:<{width}}  {_fmt_metric(row.nll):>8}  {_fmt_metric(row.accuracy):>8}")
    for label in report.unavailable:
        lines.append(f"{label:<{width}}  {'n/a':>8}  {'n/a':>8}")
    for verdict in report.verdicts:
        lines.append(f"# {verdict}")
    return "\n".join(lines) + "\n"


def report_to_json(report: EvalReport) -> str:
    def row_dict(row: EvalRow) -> dict:
        return {
            "label": row.label,
            "nll": row.nll,
            "accuracy": row.accuracy,
            "fold_nll": list(row.fold_nll),
            "fold_accuracy": list(row.fold_accuracy),
            "warnings": list(row.warnings),
        }

    return json.dumps(
        {
            "rows": [row_dict(r) for r in report.rows],
            "baselines": [row_dict(r) for r in report.baselines],
            "unavailable": list(report.unavailable),
            "verdicts": list(report.verdicts),
        },
        sort_keys=True,
        indent=2,
    )


def report_from_json(text: str) -> EvalReport:
    raw = json.loads(text)

    def row(r: dict) -> EvalRow:
        return EvalRow(
            label=r["label"],
            nll=r["nll"],
            accuracy=r["accuracy"],
            fold_nll=tuple(r.get("fold_nll", ())),
            fold_accuracy=tuple(r.get("fold_accuracy", ())),
            warnings=tuple(r.get("warnings", ())),
        )

    return EvalReport(
        rows=tuple(row(r) for r in raw["rows"]),
        baselines=tuple(row(r) for r in raw["baselines"]),
        unavailable=tuple(raw.get("unavailable", ())),
        verdicts=tuple(raw.get("verdicts", ())),
    )
