"""Precision/recall/F1 and the cross-project and k-fold protocols."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import ValidationError


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class MetricReport:
    precision: float
    recall: float
    f1: float
    per_class: dict
    macro: ClassMetrics
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "macro": vars(self.macro),
            "per_class": {k: vars(v) for k, v in self.per_class.items()},
            "warnings": list(self.warnings),
        }


def _ratio(num, den, what, label, warnings):
    if den == 0:
        warnings.append(f"{what} undefined for class {label}; reported as 0")
        return 0.0
    return num / den


def f1_score(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def compute_metrics(preds: Sequence, gold: Sequence, labels: Sequence | None = None,
                    positive=None) -> MetricReport:
    """Per-class and macro precision/recall/F1.

    The headline numbers are those of ``positive`` when given, else macro
    averages. Zero denominators give 0 and add a warning.
    """
    if len(preds) != len(gold):
        raise ValidationError(f"{len(preds)} predictions for {len(gold)} gold labels")
    if labels is None:
        labels = sorted(set(gold) | set(preds))
    labels = list(labels)
    index = {lab: i for i, lab in enumerate(labels)}
    unknown = (set(gold) | set(preds)) - index.keys()
    if unknown:
        raise ValidationError(f"labels outside the label set: {sorted(map(str, unknown))}")
    k = len(labels)
    cm = kernels.confusion_matrix([index[g] for g in gold], [index[p] for p in preds], k)
    warnings: list[str] = []
    per_class = {}
    for c, lab in enumerate(labels):
        tp = int(cm[c, c])
        predicted = int(cm[:, c].sum())
        actual = int(cm[c, :].sum())
        p = _ratio(tp, predicted, "precision", lab, warnings)
        r = _ratio(tp, actual, "recall", lab, warnings)
        per_class[lab] = ClassMetrics(p, r, f1_score(p, r), actual)
    if k:
        macro = ClassMetrics(
            float(np.mean([m.precision for m in per_class.values()])),
            float(np.mean([m.recall for m in per_class.values()])),
            float(np.mean([m.f1 for m in per_class.values()])),
            len(gold),
        )
    else:
        macro = ClassMetrics(0.0, 0.0, 0.0, 0)
    head = per_class[positive] if positive is not None else macro
    return MetricReport(head.precision, head.recall, head.f1, per_class, macro, warnings)


# ---------------------------------------------------------------------------
# protocols

@dataclass
class Fold:
    name: str
    train: list
    test: list


def _source(item) -> str:
    return getattr(item, "augmented_from", None) or item.id


def cross_project_split(dialogs: Sequence, augment: Callable[[list], list] | None = None) -> list[Fold]:
    """Leave-one-project-out folds.

    Test sides hold only original dialogs of the held-out project. Train
    sides hold everything from the other projects, minus anything derived
    from a test dialog; ``augment`` (if given) is applied to the train side
    only.
    """
    projects = sorted({d.project for d in dialogs})
    if len(projects) < 2:
        raise ValidationError("cross-project evaluation needs at least two projects")
    folds = []
    for p in projects:
        test = [d for d in dialogs if d.project == p and d.augmented_from is None]
        test_ids = {d.id for d in test}
        train = [d for d in dialogs if d.project != p and _source(d) not in test_ids]
        if augment is not None:
            train = augment(train)
        folds.append(Fold(p, train, test))
    return folds


def kfold_split(items: Sequence, k: int = 10, seed: int = 0) -> list[list[int]]:
    """Partition item indices into ``k`` folds.

    Originals are shuffled with ``seed`` and dealt round-robin; augmented
    items join the fold of their source.
    """
    if k < 2:
        raise ValidationError("k must be at least 2")
    groups: dict[str, list[int]] = {}
    order = []
    for i, it in enumerate(items):
        src = _source(it)
        if src not in groups:
            groups[src] = []
            order.append(src)
        groups[src].append(i)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(order))
    folds: list[list[int]] = [[] for _ in range(k)]
    for rank, g in enumerate(perm.tolist()):
        folds[rank % k].extend(groups[order[g]])
    return [sorted(f) for f in folds]


def fold_train_test(items: Sequence, folds: list[list[int]], i: int):
    """Train on every other fold; test on the originals of fold ``i``."""
    held = set(folds[i])
    train = [it for n, it in enumerate(items) if n not in held]
    test = [items[n] for n in folds[i] if getattr(items[n], "augmented_from", None) is None]
    return train, test


# ---------------------------------------------------------------------------
# reporting

def format_table(rows: dict, title: str = "Project") -> str:
    """Plain-text Precision/Recall/F1 table, one row per key plus the average."""
    names = list(rows)
    width = max([len(title), len("Average")] + [len(n) for n in names])
    lines = [f"{title:<{width}}  Precision  Recall     F1"]
    for n in names:
        r = rows[n]
        lines.append(f"{n:<{width}}  {100 * r['precision']:9.2f}  {100 * r['recall']:6.2f}  {100 * r['f1']:6.2f}")
    if names:
        avg = {m: float(np.mean([rows[n][m] for n in names])) for m in ("precision", "recall", "f1")}
        lines.append(f"{'Average':<{width}}  {100 * avg['precision']:9.2f}  {100 * avg['recall']:6.2f}  {100 * avg['f1']:6.2f}")
    return "\n".join(lines) + "\n"


def metrics_json(data) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"
