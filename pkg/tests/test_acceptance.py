"""Acceptance suite: one test per release criterion.

Each test prints a single PASS/FAIL line with its runtime against the budget;
the lines are repeated in the "acceptance criteria" section of the pytest
terminal summary.
"""

import json
import os
import random
import time
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from buglistener.bri_model import (
    BriTrainConfig,
    _f1_br,
    focal_loss,
    role_layer,
    structure_layer,
    edge_weights,
    train_bri,
    word_table_for,
)
from buglistener.brs_model import (
    SENTENCE_LABELS,
    BrsModel,
    Sentence,
    accuracy,
    assemble_report,
    fine_tune_stage1,
    fine_tune_stage2,
    load_labeled_sentences,
    prune_reporter_utterances,
    stage1_defaults,
    stage2_defaults,
)
from buglistener.corpus import ChatLog, Dialog, Utterance, parse_dialogs
from buglistener.dialog_graph import build_graph, compute_edge_weights
from buglistener.disentangler import cluster_dialogs
from buglistener.encoder import ContextualEncoder, EncoderConfig, TextCNN, encode_utterance
from buglistener.eval_harness import compute_metrics

from conftest import ACCEPTANCE, fixture_path
from oracles import (
    central_difference,
    confusion_metrics,
    dense_edge_weights,
    dense_role_layer,
    dense_structure_layer,
    relative_error,
    union_find,
)
from pipeline import run_pipeline, snapshot

T0 = datetime(2021, 1, 1, tzinfo=timezone.utc)
D = torch.float64


@pytest.fixture
def verdict(capsys):
    def record(name, checks, elapsed, budget, detail=""):
        failed = [k for k, ok in checks.items() if not ok]
        if elapsed >= budget:
            failed.append(f"runtime {elapsed:.1f}s over budget")
        line = f"{'PASS' if not failed else 'FAIL'}  {name}  [{elapsed:.2f}s / {budget}s]"
        if detail:
            line += f"  {detail}"
        if failed:
            line += "  failed: " + "; ".join(failed)
        ACCEPTANCE.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert not failed, line
    return record


# ---------------------------------------------------------------------------

def test_focal_loss_oracle(verdict):
    t = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        p1 = float(rng.uniform(1e-6, 1 - 1e-6))
        y = int(rng.integers(0, 2))
        probs = torch.tensor([[1 - p1, p1]], dtype=D)
        ce = -torch.log(probs[0, y]).item()
        worst = max(worst, abs(focal_loss(probs, torch.tensor([y]), alpha=1.0, gamma=0.0).item() - ce))
    spot = focal_loss(torch.tensor([[0.1, 0.9]], dtype=D), torch.tensor([1]), alpha=1.0, gamma=2.0).item()
    elapsed = time.perf_counter() - t
    verdict("focal-loss oracle",
            {"gamma=0 equals cross-entropy within 1e-9": worst <= 1e-9,
             "P=0.9 spot value within 1e-7": abs(spot - 1.0536e-3) <= 1e-7},
            elapsed, 1, f"max |FL-CE|={worst:.2e}, FL(0.9)={spot:.7e}")


def test_gradient_checks(verdict):
    t = time.perf_counter()
    rng = np.random.default_rng(1)
    focal_err = []
    for _ in range(10):
        logits = torch.tensor(rng.normal(size=(1, 2)) * 2, requires_grad=True)
        y = torch.tensor([int(rng.integers(0, 2))])
        f = lambda: focal_loss(F.softmax(logits, -1), y, 1.0, 2.0)
        f().backward()
        k = int(rng.integers(0, 2))
        focal_err.append(relative_error(logits.grad[0, k].item(), central_difference(f, logits.data, (0, k))))

    enc_err = []
    for point in range(10):
        torch.manual_seed(point)
        cnn = TextCNN().double()
        x = torch.randn(int(rng.integers(1, 8)), 768, dtype=D, requires_grad=True)
        probe = torch.randn(100, dtype=D)
        f = lambda: (encode_utterance(x, cnn) * probe).sum()
        cnn.zero_grad()
        f().backward()
        W = cnn.dense.weight
        wi = (int(rng.integers(W.shape[0])), int(rng.integers(W.shape[1])))
        enc_err.append(relative_error(W.grad[wi].item(), central_difference(f, W.data, wi)))
        xi = (int(rng.integers(x.shape[0])), int(rng.integers(768)))
        enc_err.append(relative_error(x.grad[xi].item(), central_difference(f, x.data, xi)))
    elapsed = time.perf_counter() - t
    verdict("gradient checks",
            {"focal loss w.r.t. logits": max(focal_err) < 1e-4,
             "encode_utterance w.r.t. dense weights and inputs": max(enc_err) < 1e-4},
            elapsed, 30, f"max rel err focal={max(focal_err):.1e}, encoder={max(enc_err):.1e}")


def random_dialog(rng, n):
    utts = tuple(Utterance(f"u{k}", T0 + timedelta(minutes=k), rng.choice(["ann", "bob", "cy"]),
                           f"t{k}", f"t{k}") for k in range(n))
    links = set()
    for i in range(1, n):
        for j in rng.sample(range(i), min(i, rng.randint(1, 3))):
            links.add((f"u{i}", f"u{j}"))
    return Dialog(utts, tuple(sorted(links)))


def test_edge_weight_normalization(verdict):
    t = time.perf_counter()
    rng = random.Random(2)
    nrng = np.random.default_rng(2)
    worst, fallback_ok, n_fallback = 0.0, True, 0
    for g in range(50):
        d = random_dialog(rng, rng.randint(2, 15))
        vecs = {u.id: nrng.normal(size=100) for u in d.utterances}
        # every fifth graph has W_e = 0, so every denominator is zero
        W_e = np.zeros((100, 100)) if g % 5 == 0 else nrng.normal(size=(100, 100)) / 10
        graph = build_graph(d, vecs, W_e)
        sums = np.bincount(graph.src, weights=graph.weights, minlength=graph.n_vertices)
        has_out = np.bincount(graph.src, minlength=graph.n_vertices) > 0
        worst = max(worst, float(np.abs(sums[has_out] - 1).max()))
        _, fb = compute_edge_weights(graph.vectors, graph.edges, W_e, return_fallback=True)
        outdeg = np.bincount(graph.src, minlength=graph.n_vertices)
        for e, (i, _) in enumerate(graph.edges.tolist()):
            if fb[e]:
                n_fallback += 1
                fallback_ok &= abs(graph.weights[e] - 1 / outdeg[i]) < 1e-12
        if g % 5 == 0:
            fallback_ok &= bool(fb.all())
    elapsed = time.perf_counter() - t
    verdict("edge-weight normalization",
            {"out-weights sum to 1 within 1e-6": worst <= 1e-6,
             "zero denominators take the uniform fallback": fallback_ok and n_fallback > 0},
            elapsed, 5, f"max |sum-1|={worst:.1e}, fallback edges={n_fallback}")


def test_gnn_oracle_equivalence(verdict):
    t = time.perf_counter()
    rng = np.random.default_rng(3)
    worst_s = worst_r = worst_eq = 0.0
    d = 100
    for _ in range(20):
        n = int(rng.integers(1, 7))
        edges = sorted({(i, int(rng.integers(0, i))) for i in range(1, n)}
                       | {(i, int(rng.integers(0, i))) for i in range(1, n) if rng.random() < 0.5}) or [(0, 0)]
        types = [int(rng.integers(0, 4)) for _ in edges]
        u = rng.normal(size=(n, d))
        W_e, W1, W2, R1, W = (rng.normal(size=(d, d)) / 10 for _ in range(5))
        Wt = rng.normal(size=(4, d, d)) / 10
        e = torch.tensor(edges).reshape(-1, 2)
        src, dst, et = e[:, 0], e[:, 1], torch.tensor(types)
        tt = lambda a: torch.tensor(a, dtype=D)

        w = edge_weights(tt(u), src, dst, tt(W_e), n)
        v1 = structure_layer(tt(u), src, dst, w, tt(W1), tt(W2))
        ref_w = dense_edge_weights(u, edges, W_e)
        ref_v1 = dense_structure_layer(u, edges, [ref_w[e] for e in edges], W1, W2)
        worst_s = max(worst_s, float(np.abs(v1.numpy() - ref_v1).max()))
        h = role_layer(v1, src, dst, et, tt(R1), tt(Wt))
        worst_r = max(worst_r, float(np.abs(h.numpy() - dense_role_layer(ref_v1, edges, types, R1, Wt)).max()))

        # one edge type, all W_t equal: mean aggregation over in-neighbours
        one = torch.full_like(et, int(rng.integers(0, 4)))
        typed = role_layer(tt(u), src, dst, one, tt(R1), tt(np.stack([W] * 4)))
        M = np.zeros((n, n))
        for j, i in edges:
            M[i, j] += 1.0
        deg = M.sum(1, keepdims=True)
        mean = np.divide(M, deg, out=np.zeros_like(M), where=deg > 0) @ u
        untyped = np.maximum(u @ R1.T + mean @ W.T, 0.0)
        worst_eq = max(worst_eq, float(np.abs(typed.numpy() - untyped).max()))
    elapsed = time.perf_counter() - t
    verdict("GNN oracle equivalence",
            {"structure_layer within 1e-6": worst_s <= 1e-6,
             "role_layer within 1e-6": worst_r <= 1e-6,
             "equal W_t reduces to untyped aggregation within 1e-6": worst_eq <= 1e-6},
            elapsed, 30, f"max err structure={worst_s:.1e}, role={worst_r:.1e}, reduction={worst_eq:.1e}")


def test_disentanglement_clustering(verdict):
    t = time.perf_counter()
    rng = random.Random(4)
    log = ChatLog(tuple(Utterance(f"u{k}", T0 + timedelta(seconds=k), "ann", "x", "x") for k in range(30)))
    mismatches = 0
    for _ in range(100):
        pairs = [(i, rng.randrange(i)) for i in rng.sample(range(1, 30), rng.randint(0, 29))]
        pairs += [(i, rng.randrange(i)) for i in (rng.randrange(1, 30) for _ in range(rng.randint(0, 10)))]
        got = sorted([int(u.id[1:]) for u in d.utterances] for d in cluster_dialogs(log, [(f"u{a}", f"u{b}") for a, b in pairs]))
        mismatches += got != union_find(30, pairs)
    elapsed = time.perf_counter() - t
    verdict("disentanglement clustering", {"equals union-find on 100 link sets": mismatches == 0},
            elapsed, 5, f"mismatches={mismatches}")


def test_bri_overfit_sanity(verdict, encoder):
    t = time.perf_counter()
    with open(fixture_path("bri_synthetic.jsonl")) as fh:
        dialogs = parse_dialogs(fh)
    cfg = BriTrainConfig(epochs=50, seed=0)
    table = word_table_for(dialogs, encoder)
    model, history = train_bri(dialogs, cfg, encoder, word_table=table)
    f1 = _f1_br(model, dialogs, table)
    model2, history2 = train_bri(dialogs, cfg, encoder, word_table=table)
    same = history == history2 and all(torch.equal(a, b) for a, b in
                                       zip(model.state_dict().values(), model2.state_dict().values()))
    first = next((h["epoch"] for h in history if h["f1"] >= 0.9), None)
    elapsed = time.perf_counter() - t
    verdict("BRI overfit sanity",
            {"40 dialogs": len(dialogs) == 40,
             "train F1 >= 0.9 within 50 epochs": f1 >= 0.9 and len(history) <= 50,
             "deterministic under a fixed seed": same},
            elapsed, 600, f"train F1={f1:.3f}, first reached at epoch {first}, epochs run={len(history)}")


# ---------------------------------------------------------------------------
# BRS

PRUNE_CASES = [
    ("thanks", []),
    ("see [CODE]", ["see [CODE]"]),
    ("hi guys the build crashes on save", ["the build crashes on save"]),
]


def random_sentence_sets(n_sets, seed):
    rng = random.Random(seed)
    words = ["hi", "thanks", "the", "build", "crashes", "[URL]", "[CODE]", "guys", "page", "blank",
             "save", "click", "hello", "please", "expected", "to", "work", "on", "reload", "error"]
    for _ in range(n_sets):
        n_utts = rng.randint(1, 8)
        utts = tuple(Utterance(f"u{k}", T0 + timedelta(minutes=k), "ann", "x", "x") for k in range(n_utts))
        d = Dialog(utts, tuple((f"u{k}", f"u{k - 1}") for k in range(1, n_utts)))
        labeled = [Sentence(id=f"u{k}#{i}", text=" ".join(rng.choices(words, k=rng.randint(1, 10))),
                            utterance_id=f"u{k}", index=i, label=rng.choice(SENTENCE_LABELS))
                   for k in range(n_utts) for i in range(rng.randint(0, 3))]
        yield d, labeled or [Sentence(id="u0#0", text="x", utterance_id="u0", label="OB")]


def brs_rule_violations():
    violations = 0
    for text, expected in PRUNE_CASES:
        violations += [s.text for s in prune_reporter_utterances([Sentence(id="s", text=text)])] != expected
    for d, labeled in random_sentence_sets(200, 5):
        once = prune_reporter_utterances(labeled)
        violations += prune_reporter_utterances(once) != once
        shuffled = labeled[:]
        random.Random(len(labeled)).shuffle(shuffled)
        r = assemble_report(d, shuffled)
        got = r.sentences()
        violations += sorted(s.id for s in got) != sorted(s.id for s in labeled) or len(got) != len(labeled)
        for section in (r.description, r.observed_behavior, r.expected_behavior, r.steps_to_reproduce):
            keys = [(int(s.utterance_id[1:]), s.index) for s in section]
            violations += keys != sorted(keys)
    return violations


@pytest.fixture(scope="module")
def stage1_run():
    t = time.perf_counter()
    model = BrsModel(ContextualEncoder(EncoderConfig()))
    external = load_labeled_sentences(fixture_path("brs_external.jsonl"))
    model.freeze(9)
    before = {k: v.clone() for k, v in model.frozen_state().items()}
    model, history = fine_tune_stage1(model, external, stage1_defaults())
    after = model.frozen_state()
    frozen_ok = before.keys() == after.keys() and all(torch.equal(before[k], after[k]) for k in before)
    layer_names = {k.split(".layer.")[1].split(".")[0] for k in before if ".layer." in k}
    frozen_ok &= layer_names == {str(i) for i in range(9)}
    return model, external, history, frozen_ok, time.perf_counter() - t


def test_brs_contracts(verdict, stage1_run):
    t = time.perf_counter()
    stage1, external, _, frozen_ok, stage1_time = stage1_run
    violations = brs_rule_violations()
    chat = load_labeled_sentences(fixture_path("brs_chat.jsonl"))
    stage2, history = fine_tune_stage2(stage1, chat, stage2_defaults())
    acc = accuracy(stage2, chat)
    elapsed = time.perf_counter() - t + stage1_time
    verdict("BRS contracts",
            {"prune examples, prune idempotence, assemble partition and order": violations == 0,
             "stage-1 freeze leaves embeddings and layers 1-9 byte-identical": frozen_ok,
             "stage-2 train accuracy >= 0.9 on 50 sentences": len(chat) == 50 and acc >= 0.9},
            elapsed, 900,
            f"rule violations={violations}, stage-2 train acc={acc:.3f} "
            f"(lr 1e-6, 70 epochs, final loss {history[-1]['train_loss']:.3f})")


def test_brs_stage1_sanity(stage1_run, capsys):
    # not a release criterion on its own; the stage-1 overfit and init-loss
    # examples are checked here because the model is already trained
    stage1, external, history, _, _ = stage1_run
    acc = accuracy(stage1, external)
    with capsys.disabled():
        print(f"\nstage-1 train accuracy {acc:.3f}, first-epoch loss {history[0]['train_loss']:.3f}")
    assert acc >= 0.9
    fresh = BrsModel(ContextualEncoder(EncoderConfig()))
    from buglistener.brs_model import _mean_loss
    assert abs(_mean_loss(fresh, external) - np.log(4)) < 0.05


# ---------------------------------------------------------------------------

def test_metrics_oracle(verdict):
    t = time.perf_counter()
    rng = np.random.default_rng(6)
    labels = ("OB", "EB", "SR", "OTHER")
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 80))
        gold, pred = rng.choice(labels, n).tolist(), rng.choice(labels, n).tolist()
        rep = compute_metrics(pred, gold, labels=labels)
        ref = confusion_metrics(pred, gold, labels)
        for lab in labels:
            m = rep.per_class[lab]
            worst = max(worst, *(abs(a - b) for a, b in zip((m.precision, m.recall, m.f1), ref[lab])))
    gold = ["BR", "BR", "BR", "NBR", "NBR"]
    pred = ["BR", "BR", "NBR", "BR", "NBR"]
    hand = compute_metrics(pred, gold, labels=("NBR", "BR"), positive="BR")
    hand_ok = all(abs(v - 2 / 3) < 1e-12 for v in (hand.precision, hand.recall, hand.f1))
    elapsed = time.perf_counter() - t
    verdict("metrics oracle",
            {"matches confusion-matrix oracle within 1e-12": worst <= 1e-12,
             "TP=2/FP=1/FN=1 gives 2/3 everywhere": hand_ok},
            elapsed, 1, f"max err={worst:.1e}")


def test_end_to_end_determinism(verdict, tmp_path):
    t = time.perf_counter()
    run_pipeline(tmp_path / "a", seed=7)
    run_pipeline(tmp_path / "b", seed=7)
    a, b = snapshot(tmp_path / "a"), snapshot(tmp_path / "b")
    reports = [p for p in a if p.endswith(".md")]
    metrics = [p for p in a if p.startswith("metrics") and p.endswith(".json")]
    elapsed = time.perf_counter() - t
    verdict("end-to-end determinism",
            {"metrics JSON and reports present": bool(reports) and len(metrics) >= 3,
             "byte-identical across two runs": a == b},
            elapsed, 300, f"{len(metrics)} metrics files, {len(reports)} reports")


def test_full_corpus_reproduction(verdict, tmp_path):
    """Needs the public dataset converted to the bundled fixture layout in the
    directory named by ``BUGLISTENER_CORPUS_DIR`` (see README)."""
    root = os.environ.get("BUGLISTENER_CORPUS_DIR")
    if not root:
        line = "SKIP  full-corpus reproduction (optional)  BUGLISTENER_CORPUS_DIR not set"
        ACCEPTANCE.append(line)
        pytest.skip(line)
    from buglistener.cli import main

    t = time.perf_counter()
    projects = sorted(n[len("chat_"):-len(".jsonl")] for n in os.listdir(root) if n.startswith("chat_"))
    out = str(tmp_path)
    j = lambda *p: os.path.join(*p)
    steps = [
        ["ingest", *(j(root, f"chat_{p}.jsonl") for p in projects)],
        ["disentangle", *(j(out, "corpus", f"{p}.jsonl") for p in projects),
         *sum((["--gold-links", j(root, f"gold_links_{p}.jsonl")] for p in projects), []),
         "--labels", j(root, "labels.jsonl")],
        ["train-bri", *(j(out, "dialogs", f"{p}.jsonl") for p in projects)],
        ["train-brs", "--external", j(root, "brs_external.jsonl"), "--sentences", j(root, "brs_chat.jsonl")],
    ]
    for step in steps:
        assert main(step + ["--out", out]) == 0, step
    with open(j(out, "metrics", "bri_metrics.json")) as fh:
        bri = json.load(fh)["average"]["f1"] * 100
    with open(j(out, "metrics", "brs_metrics.json")) as fh:
        per = json.load(fh)["cross_validation"]["per_class"]
    brs = {c: per[c]["f1"] * 100 for c in ("OB", "EB", "SR")}
    target = {"OB": 84.63, "EB": 71.46, "SR": 73.13}
    verdict("full-corpus reproduction (optional)",
            {"BRI F1 within 5 points of 77.74": abs(bri - 77.74) <= 5,
             **{f"BRS {c} F1 within 5 points of {target[c]}": abs(brs[c] - target[c]) <= 5 for c in target}},
            time.perf_counter() - t, float("inf"),
            f"BRI F1={bri:.2f}, BRS F1 " + ", ".join(f"{c}={v:.2f}" for c, v in brs.items()))
