from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from buglistener.eval_harness import (
    compute_metrics,
    cross_project_split,
    fold_train_test,
    format_table,
    kfold_split,
    metrics_json,
)
from buglistener.errors import ValidationError

from oracles import confusion_metrics


@dataclass(frozen=True)
class Item:
    id: str
    project: str = ""
    augmented_from: str | None = None


LABELS = ("OB", "EB", "SR", "OTHER")


def test_metrics_match_oracle_on_random_vectors():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 60))
        gold = rng.choice(LABELS, n).tolist()
        pred = rng.choice(LABELS, n).tolist()
        rep = compute_metrics(pred, gold, labels=LABELS)
        ref = confusion_metrics(pred, gold, LABELS)
        for lab in LABELS:
            m = rep.per_class[lab]
            worst = max(worst, *(abs(a - b) for a, b in zip((m.precision, m.recall, m.f1), ref[lab])))
        macro = np.mean([ref[lab] for lab in LABELS], axis=0)
        worst = max(worst, *(abs(a - b) for a, b in zip((rep.macro.precision, rep.macro.recall, rep.macro.f1), macro)))
    assert worst <= 1e-12


def test_hand_count():
    gold = ["BR", "BR", "BR", "NBR", "NBR"]
    pred = ["BR", "BR", "NBR", "BR", "NBR"]
    rep = compute_metrics(pred, gold, labels=("NBR", "BR"), positive="BR")
    assert rep.precision == pytest.approx(2 / 3, abs=1e-12)
    assert rep.recall == pytest.approx(2 / 3, abs=1e-12)
    assert rep.f1 == pytest.approx(2 / 3, abs=1e-12)


def test_perfect_predictions():
    rep = compute_metrics(["a", "b", "a"], ["a", "b", "a"])
    assert rep.precision == rep.recall == rep.f1 == 1.0 and not rep.warnings


def test_no_positive_predictions_flagged():
    rep = compute_metrics(["NBR", "NBR"], ["BR", "NBR"], labels=("NBR", "BR"), positive="BR")
    assert (rep.precision, rep.recall, rep.f1) == (0.0, 0.0, 0.0)
    assert any("precision" in w and "BR" in w for w in rep.warnings)


def test_length_mismatch_and_unknown_label():
    with pytest.raises(ValidationError):
        compute_metrics(["a"], ["a", "b"])
    with pytest.raises(ValidationError):
        compute_metrics(["z"], ["a"], labels=("a",))


def test_report_serializes():
    rep = compute_metrics(["a", "b"], ["a", "a"])
    text = metrics_json(rep.to_dict())
    assert text.endswith("\n") and '"per_class"' in text


# -- cross-project --------------------------------------------------------------

def six_projects():
    items = [Item(f"{p}{k}", p) for p in "abcdef" for k in range(3)]
    items += [Item(f"{p}0-m", p, f"{p}0") for p in "abcdef"]
    return items


def test_six_projects_give_six_folds():
    folds = cross_project_split(six_projects())
    assert [f.name for f in folds] == list("abcdef")
    for f in folds:
        assert {d.project for d in f.test} == {f.name}
        assert all(d.augmented_from is None for d in f.test)
        assert f.name not in {d.project for d in f.train}
        assert not {d.id for d in f.train} & {d.id for d in f.test}


def test_mutants_of_test_dialogs_never_train():
    items = [Item("a0", "a"), Item("b0", "b"), Item("m", "b", "a0")]
    fold_a = cross_project_split(items)[0]
    assert [d.id for d in fold_a.train] == ["b0"]


def test_augment_applies_to_train_only():
    seen = []
    cross_project_split(six_projects(), augment=lambda xs: seen.append(len(xs)) or xs)
    assert len(seen) == 6


def test_one_project_rejected():
    with pytest.raises(ValidationError):
        cross_project_split([Item("x", "a")])


# -- k-fold ---------------------------------------------------------------------

def test_hundred_items_give_ten_folds_of_ten():
    folds = kfold_split([Item(f"s{k}") for k in range(100)], k=10, seed=0)
    assert [len(f) for f in folds] == [10] * 10
    assert sorted(i for f in folds for i in f) == list(range(100))


@given(st.integers(1, 60), st.integers(0, 30), st.integers(2, 10), st.integers(0, 100))
def test_kfold_partitions_and_keeps_mutants_with_source(n, n_aug, k, seed):
    rng = np.random.default_rng(seed)
    items = [Item(f"s{i}") for i in range(n)]
    items += [Item(f"a{j}", augmented_from=f"s{int(rng.integers(0, n))}") for j in range(n_aug)]
    folds = kfold_split(items, k=k, seed=seed)
    assert sorted(i for f in folds for i in f) == list(range(len(items)))
    fold_of = {i: f for f, idx in enumerate(folds) for i in idx}
    pos = {it.id: i for i, it in enumerate(items)}
    for i, it in enumerate(items):
        if it.augmented_from:
            assert fold_of[i] == fold_of[pos[it.augmented_from]]
    sizes = [sum(items[i].augmented_from is None for i in f) for f in folds]
    assert max(sizes) - min(sizes) <= 1
    assert folds == kfold_split(items, k=k, seed=seed)
    for f in range(k):
        train, test = fold_train_test(items, folds, f)
        src = {t.id for t in test}
        assert not any(t.augmented_from in src or t.id in src for t in train)


def test_k_below_two_rejected():
    with pytest.raises(ValidationError):
        kfold_split([Item("a")], k=1)


def test_format_table():
    rows = {"angular": {"precision": 0.5, "recall": 1.0, "f1": 2 / 3},
            "docker": {"precision": 1.0, "recall": 1.0, "f1": 1.0}}
    table = format_table(rows).splitlines()
    assert table[0].split() == ["Project", "Precision", "Recall", "F1"]
    assert table[1].split() == ["angular", "50.00", "100.00", "66.67"]
    assert table[-1].split() == ["Average", "75.00", "100.00", "83.33"]
