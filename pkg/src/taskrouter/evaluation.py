"""Incremental-learning protocol, its metrics, and a gradient-descent contrast.

The protocol trains a router on a base set of classes, then absorbs the
remaining classes one phase at a time, evaluating after every phase on the
cumulative test set and on the first phase's own test set. Training rows are
instrumented so a run can prove it never replayed data. The baseline trains a
softmax regression on the identical expanded features with plain gradient
descent, which forgets earlier classes the way the closed-form router
provably does not.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .corpus import InstructionRecord
from .features import ExpansionParams, FeaturizerConfig, featurize_batch
from .scheduler import (
    DEFAULT_CHUNK_ROWS,
    expand_label_space,
    fit_base,
    one_hot,
    predict,
    update,
)

__all__ = [
    "PhasePlan",
    "EvalReport",
    "average_accuracy",
    "forgetting_rate",
    "run_protocol",
    "baseline_sequential",
]


@dataclass(frozen=True)
class PhasePlan:
    """Which classes train jointly up front and which arrive one per phase."""

    base_classes: tuple[int, ...]
    incremental_classes: tuple[int, ...] = ()
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self) -> None:
        base = tuple(int(c) for c in self.base_classes)
        inc = tuple(int(c) for c in self.incremental_classes)
        object.__setattr__(self, "base_classes", base)
        object.__setattr__(self, "incremental_classes", inc)
        if not base:
            raise ValueError("at least one base class is required")
        if len(set(base)) != len(base) or len(set(inc)) != len(inc):
            raise ValueError("duplicate class ids in the plan")
        if set(base) & set(inc):
            raise ValueError("base and incremental class sets must be disjoint")
        if any(c < 0 for c in base + inc):
            raise ValueError("class ids must be non-negative")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie strictly between 0 and 1")

    @property
    def all_classes(self) -> tuple[int, ...]:
        return self.base_classes + self.incremental_classes


@dataclass
class EvalReport:
    """Per-phase accuracies, forgetting, confusion counts, and read instrumentation.

    ``read_counts``, ``final_state`` and ``final_weights`` are in-process
    artefacts for callers and tests; they are not part of the JSON form.
    """

    method: str
    phase_names: list[str]
    classes_per_phase: list[list[int]]
    per_phase_accuracy: list[float]
    task1_accuracy: list[float]
    per_phase_forgetting: list[float]
    average_accuracy: float
    confusion: list[np.ndarray]
    training_reads: dict[str, int]
    read_counts: np.ndarray = field(repr=False, default=None)
    final_state: object = field(repr=False, default=None)
    final_weights: np.ndarray | None = field(repr=False, default=None)

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "phases": [
                {
                    "name": name,
                    "new_classes": list(classes),
                    "accuracy": acc,
                    "task1_accuracy": t1,
                }
                for name, classes, acc, t1 in zip(
                    self.phase_names,
                    self.classes_per_phase,
                    self.per_phase_accuracy,
                    self.task1_accuracy,
                )
            ],
            "average_accuracy": self.average_accuracy,
            "forgetting": list(self.per_phase_forgetting),
            "confusion": [m.tolist() for m in self.confusion],
            "training_reads": dict(self.training_reads),
        }

    def to_table(self) -> str:
        """Aligned plain-text table: one row per phase plus the average."""
        rows = [("Phase", "Accuracy (%)", "Forgetting (%)")]
        for name, acc, forg in zip(
            self.phase_names, self.per_phase_accuracy, self.per_phase_forgetting
        ):
            rows.append((_display_name(name), f"{acc:.2f}", f"{forg:.2f}"))
        rows.append(("Average", f"{self.average_accuracy:.2f}", ""))
        widths = [max(len(row[i]) for row in rows) for i in range(3)]
        lines = []
        for row in rows:
            lines.append(
                f"{row[0]:<{widths[0]}}  {row[1]:>{widths[1]}}  {row[2]:>{widths[2]}}".rstrip()
            )
        return "\n".join(lines)


def _display_name(phase_name: str) -> str:
    if phase_name == "base":
        return "Base training"
    if phase_name.startswith("il_"):
        return f"IL Phase {phase_name[3:]}"
    return phase_name


def average_accuracy(per_phase: Sequence[float]) -> float:
    """Arithmetic mean of the per-phase cumulative accuracies."""
    values = list(per_phase)
    if not values:
        raise ValueError("need at least one phase accuracy")
    if any(not 0.0 <= v <= 100.0 for v in values):
        raise ValueError("accuracies must lie in [0, 100]")
    return float(sum(values) / len(values))


def forgetting_rate(acc_task1_initial: float, acc_task1_now: float) -> float:
    """Accuracy drop on the first task; negative when accuracy improved."""
    for value in (acc_task1_initial, acc_task1_now):
        if not 0.0 <= value <= 100.0:
            raise ValueError("accuracies must lie in [0, 100]")
    return acc_task1_initial - acc_task1_now


def _assign_splits(records: list[InstructionRecord], plan: PhasePlan) -> list[str]:
    """Record splits, honouring pre-assigned ones and splitting the rest per class."""
    splits: list[str | None] = [r.split for r in records]
    pending: dict[int, list[int]] = {}
    for i, record in enumerate(records):
        if record.split is None:
            pending.setdefault(record.task_id, []).append(i)
    for class_id, idxs in pending.items():
        if len(idxs) < 2:
            raise ValueError(
                f"class {class_id} has {len(idxs)} unsplit rows; need at least 2"
            )
        rng = np.random.default_rng([plan.seed, class_id])
        order = rng.permutation(len(idxs))
        n_train = int(round(len(idxs) * plan.train_fraction))
        n_train = min(max(n_train, 1), len(idxs) - 1)
        for rank, j in enumerate(order):
            splits[idxs[j]] = "train" if rank < n_train else "test"
    return splits  # type: ignore[return-value]


def _index_by_class(
    records: list[InstructionRecord], splits: list[str], plan: PhasePlan
) -> tuple[dict[int, np.ndarray], dict[int, np.ndarray]]:
    train_idx: dict[int, list[int]] = {c: [] for c in plan.all_classes}
    test_idx: dict[int, list[int]] = {c: [] for c in plan.all_classes}
    for i, record in enumerate(records):
        (train_idx if splits[i] == "train" else test_idx)[record.task_id].append(i)
    for c in plan.all_classes:
        if not train_idx[c] or not test_idx[c]:
            raise ValueError(f"class {c} needs both train and test rows")
    return (
        {c: np.array(v, dtype=np.int64) for c, v in train_idx.items()},
        {c: np.array(v, dtype=np.int64) for c, v in test_idx.items()},
    )


def _prepare(
    corpus: Sequence[InstructionRecord],
    plan: PhasePlan,
    config: FeaturizerConfig,
    expansion_seed: int | None,
):
    records = list(corpus)
    if not records:
        raise ValueError("corpus is empty")
    corpus_classes = {r.task_id for r in records}
    plan_classes = set(plan.all_classes)
    if plan_classes != corpus_classes:
        missing = sorted(corpus_classes - plan_classes)
        extra = sorted(plan_classes - corpus_classes)
        raise ValueError(
            f"plan does not cover the corpus (classes missing from plan: {missing}, "
            f"planned but absent: {extra})"
        )
    seed = config.seed if expansion_seed is None else expansion_seed
    params = ExpansionParams.create(seed, config.d_f, config.d_e)
    features = featurize_batch([r.text for r in records], config, params)
    splits = _assign_splits(records, plan)
    train_idx, test_idx = _index_by_class(records, splits, plan)
    labels = np.array([r.task_id for r in records], dtype=np.int64)
    return records, seed, features, labels, train_idx, test_idx


def _phases(plan: PhasePlan) -> list[tuple[str, list[int]]]:
    out: list[tuple[str, list[int]]] = [("base", list(plan.base_classes))]
    out += [(f"il_{i}", [c]) for i, c in enumerate(plan.incremental_classes, start=1)]
    return out


def _phase_metrics(
    predict_rows: Callable[[np.ndarray], np.ndarray],
    labels: np.ndarray,
    test_idx: dict[int, np.ndarray],
    seen_classes: list[int],
    task1_rows: np.ndarray,
    d_k: int,
) -> tuple[float, float, np.ndarray]:
    cum_rows = np.concatenate([test_idx[c] for c in sorted(seen_classes)])
    preds = np.asarray(predict_rows(cum_rows))
    truth = labels[cum_rows]
    accuracy = 100.0 * float(np.mean(preds == truth))
    t1_preds = np.asarray(predict_rows(task1_rows))
    task1_acc = 100.0 * float(np.mean(t1_preds == labels[task1_rows]))
    confusion = np.zeros((d_k, d_k), dtype=np.int64)
    np.add.at(confusion, (truth, preds), 1)
    return accuracy, task1_acc, confusion


def _finish_report(
    method: str,
    plan: PhasePlan,
    phase_names: list[str],
    classes_per_phase: list[list[int]],
    accuracies: list[float],
    task1: list[float],
    confusions: list[np.ndarray],
    reads: np.ndarray,
    train_idx: dict[int, np.ndarray],
) -> EvalReport:
    train_rows = np.concatenate([train_idx[c] for c in plan.all_classes])
    per_row = reads[train_rows]
    forgetting = [forgetting_rate(task1[0], t) for t in task1]
    return EvalReport(
        method=method,
        phase_names=phase_names,
        classes_per_phase=classes_per_phase,
        per_phase_accuracy=accuracies,
        task1_accuracy=task1,
        per_phase_forgetting=forgetting,
        average_accuracy=average_accuracy(accuracies),
        confusion=confusions,
        training_reads={
            "rows": int(train_rows.size),
            "min_reads": int(per_row.min()),
            "max_reads": int(per_row.max()),
            "total_reads": int(per_row.sum()),
        },
        read_counts=reads,
    )


def run_protocol(
    corpus: Sequence[InstructionRecord],
    plan: PhasePlan,
    config: FeaturizerConfig,
    *,
    gamma: float = 1.0,
    expansion_seed: int | None = None,
    chunk_rows: int = DEFAULT_CHUNK_ROWS,
) -> EvalReport:
    """Run the replay-free protocol: joint base fit, then one update per class.

    Every training row enters the router exactly once across the whole run;
    the function raises if its own instrumentation ever observes a re-read.
    """
    records, seed, features, labels, train_idx, test_idx = _prepare(
        corpus, plan, config, expansion_seed
    )
    reads = np.zeros(len(records), dtype=np.int64)
    task1_rows = np.concatenate([test_idx[c] for c in sorted(plan.base_classes)])

    phase_names: list[str] = []
    classes_per_phase: list[list[int]] = []
    accuracies: list[float] = []
    task1: list[float] = []
    confusions: list[np.ndarray] = []

    state = None
    seen: list[int] = []
    for name, classes in _phases(plan):
        rows = np.concatenate([train_idx[c] for c in classes])
        width = max(classes) + 1
        if name == "base":
            state = fit_base(
                features[rows],
                one_hot(labels[rows], width),
                gamma,
                featurizer=config,
                expansion_seed=seed,
            )
        else:
            if width > state.d_k:
                state = expand_label_space(state, width)
            state = update(
                state,
                features[rows],
                one_hot(labels[rows], state.d_k),
                chunk_rows=chunk_rows,
            )
        reads[rows] += 1
        seen.extend(classes)

        frozen = state
        acc, t1, conf = _phase_metrics(
            lambda r: predict(frozen, features[r]),
            labels,
            test_idx,
            seen,
            task1_rows,
            state.d_k,
        )
        phase_names.append(name)
        classes_per_phase.append(list(classes))
        accuracies.append(acc)
        task1.append(t1)
        confusions.append(conf)

    train_rows = np.concatenate([train_idx[c] for c in plan.all_classes])
    if not (reads[train_rows] == 1).all() or reads.sum() != train_rows.size:
        raise RuntimeError("replay detected: a training row was read more than once")

    report = _finish_report(
        "router", plan, phase_names, classes_per_phase,
        accuracies, task1, confusions, reads, train_idx,
    )
    report.final_state = state
    return report


def baseline_sequential(
    corpus: Sequence[InstructionRecord],
    plan: PhasePlan,
    config: FeaturizerConfig,
    *,
    steps: int = 200,
    learning_rate: float = 0.1,
    expansion_seed: int | None = None,
) -> EvalReport:
    """Sequentially fine-tuned softmax regression on the same expanded features.

    Each phase runs plain full-batch gradient descent on that phase's rows
    only, with no replay and nothing anchoring the old weights, so earlier
    classes degrade as later ones arrive. Evaluation mirrors
    :func:`run_protocol` exactly.
    """
    if steps < 0:
        raise ValueError("steps must be non-negative")
    records, _, features, labels, train_idx, test_idx = _prepare(
        corpus, plan, config, expansion_seed
    )
    reads = np.zeros(len(records), dtype=np.int64)
    task1_rows = np.concatenate([test_idx[c] for c in sorted(plan.base_classes)])

    phase_names: list[str] = []
    classes_per_phase: list[list[int]] = []
    accuracies: list[float] = []
    task1: list[float] = []
    confusions: list[np.ndarray] = []

    weights = np.zeros((config.d_e, 0))
    seen: list[int] = []
    for name, classes in _phases(plan):
        width = max(max(classes) + 1, weights.shape[1])
        if width > weights.shape[1]:
            weights = np.hstack(
                [weights, np.zeros((config.d_e, width - weights.shape[1]))]
            )
        rows = np.concatenate([train_idx[c] for c in classes])
        feats = features[rows]
        targets = one_hot(labels[rows], width)
        for _ in range(steps):
            probs = _softmax(feats @ weights)
            grad = feats.T @ (probs - targets) / rows.size
            weights -= learning_rate * grad
        reads[rows] += steps
        seen.extend(classes)

        w_now = weights
        acc, t1, conf = _phase_metrics(
            lambda r: np.argmax(features[r] @ w_now, axis=1),
            labels,
            test_idx,
            seen,
            task1_rows,
            width,
        )
        phase_names.append(name)
        classes_per_phase.append(list(classes))
        accuracies.append(acc)
        task1.append(t1)
        confusions.append(conf)

    report = _finish_report(
        "baseline", plan, phase_names, classes_per_phase,
        accuracies, task1, confusions, reads, train_idx,
    )
    report.final_weights = weights
    return report


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    out = np.exp(shifted)
    out /= out.sum(axis=1, keepdims=True)
    return out
