"""Experiment plumbing shared by the CLI and the acceptance tests."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import adapter
from .core import HyperParams, PrototypeSet
from .synth import mean_error
from .zeroshot import ViewEnsembleConfig, cosine_logits, view_ensemble_probs

ABLATION_VARIANTS = (
    "full",
    "no_mean_update",
    "no_cov_update",
    "no_alm_prior",
    "zero_shot",
)


def ablation_configs(base: HyperParams) -> dict[str, HyperParams]:
    """The five fixed configurations of the component ablation, keyed by name."""
    return {
        "full": base,
        "no_mean_update": base.with_(mean_update=False),
        "no_cov_update": base.with_(cov_update=False),
        "no_alm_prior": base.with_(alm_prior_weighting=False, use_prior_in_prediction=False),
        "zero_shot": base.with_(
            mean_update=False, cov_update=False, alm_prior_weighting=False, alpha=0.0
        ),
    }


def confusion_matrix(labels, predictions, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    predictions = np.asarray(predictions)
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    valid = labels >= 0
    np.add.at(cm, (labels[valid], predictions[valid]), 1)
    return cm


def accuracy(labels, predictions) -> float:
    """Top-1 accuracy over samples with a nonnegative label."""
    labels = np.asarray(labels)
    predictions = np.asarray(predictions)
    valid = labels >= 0
    if not np.any(valid):
        return float("nan")
    return float(np.mean(labels[valid] == predictions[valid]))


def per_class_accuracy(cm: np.ndarray) -> list[float]:
    totals = cm.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        acc = np.diag(cm) / totals
    return [float(a) if t else float("nan") for a, t in zip(acc, totals)]


def zero_shot_predictions(stream, prototypes: PrototypeSet) -> np.ndarray:
    return np.argmax(cosine_logits(np.asarray(stream), prototypes), axis=1)


def baseline_predictions(
    stream, prototypes: PrototypeSet, config: ViewEnsembleConfig, seed: int
) -> np.ndarray:
    """View-ensemble predictions; sample t draws its views from seed (seed, t)."""
    return np.array(
        [
            int(np.argmax(view_ensemble_probs(x, prototypes, config, [seed, t])))
            for t, x in enumerate(np.asarray(stream))
        ]
    )


@dataclass
class RunResult:
    outcomes: list
    final_state: object
    traces: list
    predictions: np.ndarray
    gda_predictions: np.ndarray
    zero_shot_predictions: np.ndarray


def run(stream, prototypes: PrototypeSet, hyper: HyperParams) -> RunResult:
    state = adapter.init(prototypes, hyper)
    outcomes, final, traces = adapter.run_stream(state, stream, prototypes, hyper)
    return RunResult(
        outcomes=outcomes,
        final_state=final,
        traces=traces,
        predictions=np.array([o.predicted_class for o in outcomes]),
        gda_predictions=np.array([o.gda_class for o in outcomes]),
        zero_shot_predictions=np.array([o.zero_shot_class for o in outcomes]),
    )


def make_report(
    name: str,
    predictions,
    labels,
    num_classes: int,
    hyper: HyperParams | None = None,
    extra: dict | None = None,
) -> dict:
    report: dict = {"experiment": name}
    if labels is not None:
        cm = confusion_matrix(labels, predictions, num_classes)
        report["accuracy"] = accuracy(labels, predictions)
        report["per_class_accuracy"] = per_class_accuracy(cm)
        report["confusion_matrix"] = cm.tolist()
    report["num_samples"] = int(len(predictions))
    if hyper is not None:
        report["config"] = hyper.to_dict()
    if extra:
        report.update(extra)
    return report


def run_report(
    name: str,
    stream,
    prototypes: PrototypeSet,
    hyper: HyperParams,
    labels=None,
    true_means=None,
) -> tuple[dict, RunResult]:
    result = run(stream, prototypes, hyper)
    extra: dict = {}
    if labels is not None:
        extra["gda_accuracy"] = accuracy(labels, result.gda_predictions)
        extra["zero_shot_accuracy"] = accuracy(labels, result.zero_shot_predictions)
    if true_means is not None:
        extra["initial_mu_error"] = mean_error(prototypes.vectors, true_means)
        extra["final_mu_error"] = mean_error(result.final_state.mu, true_means)
    report = make_report(name, result.predictions, labels, prototypes.num_classes, hyper, extra)
    return report, result


def ablation_table(
    stream, prototypes: PrototypeSet, base: HyperParams, labels=None, true_means=None
) -> list[dict]:
    rows = []
    for name, hyper in ablation_configs(base).items():
        report, _ = run_report(name, stream, prototypes, hyper, labels, true_means)
        rows.append(report)
    return rows


def format_table(rows: list[dict], columns: tuple[str, ...] = ("accuracy", "final_mu_error")) -> str:
    present = [c for c in columns if any(c in r for r in rows)]
    header = f"{'variant':<16}" + "".join(f"{c:>16}" for c in present)
    lines = [header, "-" * len(header)]
    for r in rows:
        cells = []
        for c in present:
            v = r.get(c)
            if v is None:
                cells.append(f"{'-':>16}")
            elif c == "accuracy":
                cells.append(f"{100 * v:>15.2f}%")
            else:
                cells.append(f"{v:>16.4f}")
        lines.append(f"{r['experiment']:<16}" + "".join(cells))
    return "\n".join(lines)
