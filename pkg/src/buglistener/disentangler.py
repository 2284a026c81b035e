"""Reply-to link prediction and clustering of a chat log into dialogs.

Two stages: a feed-forward scorer rates every (replier, candidate antecedent)
pair inside a lookback window, each utterance keeps its best antecedent (or
starts a new thread), and utterances reachable through the kept links form
one dialog.
"""

from __future__ import annotations

import json
import logging
import os
import re
import zlib
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from . import kernels
from .corpus import ChatLog, Dialog, Utterance
from .errors import CheckpointNotFoundError, ParseError, SchemaError, ShapeError, ValidationError

logger = logging.getLogger(__name__)

N_HANDCRAFTED = 6
HANDCRAFTED_NAMES = ("log_time_gap", "distance", "same_author", "mentions_author", "jaccard", "is_opener")
_MENTION_RE = re.compile(r"@([\w.\-]+)")


class WordVectors:
    """Static word vectors used for the averaged-embedding pair features.

    Without a vectors file every token gets a fixed pseudo-random unit vector
    derived from a CRC32 of the token, which keeps features deterministic.
    """

    def __init__(self, dim: int = 50, table: dict | None = None):
        self.dim = dim
        self.table = table or {}
        self._cache: dict[str, np.ndarray] = {}

    @classmethod
    def load(cls, path) -> "WordVectors":
        table = {}
        dim = None
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                parts = line.rstrip().split(" ")
                if len(parts) < 2:
                    continue
                vec = np.asarray(parts[1:], dtype=np.float64)
                if dim is None:
                    dim = len(vec)
                elif len(vec) != dim:
                    raise ParseError(f"inconsistent vector width for {parts[0]!r}")
                table[parts[0]] = vec
        return cls(dim or 50, table)

    def vector(self, token: str) -> np.ndarray:
        if token in self.table:
            return self.table[token]
        vec = self._cache.get(token)
        if vec is None:
            rng = np.random.default_rng(zlib.crc32(token.encode("utf-8")))
            vec = rng.standard_normal(self.dim)
            vec /= np.linalg.norm(vec)
            self._cache[token] = vec
        return vec

    def average(self, tokens: Sequence[str]) -> np.ndarray:
        if not tokens:
            return np.zeros(self.dim)
        return np.mean([self.vector(t) for t in tokens], axis=0)


@dataclass(frozen=True)
class ReplyCandidate:
    replier_id: str
    replied_id: str
    features: np.ndarray
    score: float | None = None


class LogContext:
    """Per-log arrays consumed by the pair-feature kernel."""

    def __init__(self, log: ChatLog, vectors: WordVectors, window: int = 50):
        utts = log.utterances
        self.log = log
        self.window = window
        self.index = {u.id: i for i, u in enumerate(utts)}
        t0 = utts[0].timestamp if utts else None
        self.ts = np.array([(u.timestamp - t0).total_seconds() for u in utts], dtype=np.float64)
        authors: dict[str, int] = {}
        self.author = np.array([authors.setdefault(u.author.lower(), len(authors)) for u in utts], dtype=np.int64)

        vocab: dict[str, int] = {}
        tok_rows = [sorted({vocab.setdefault(t, len(vocab)) for t in u.tokens}) for u in utts]
        self.tok_ptr, self.tok_idx = _csr(tok_rows)

        men_rows = []
        for u in utts:
            names = {m.rstrip(".-").lower() for m in _MENTION_RE.findall(u.raw_text)}
            men_rows.append(sorted(authors[n] for n in names if n in authors))
        self.men_ptr, self.men_idx = _csr(men_rows)

        opener = np.zeros(len(utts), dtype=bool)
        for i in range(len(utts)):
            lo = max(0, i - window)
            recent = self.author[lo:i]
            opener[i] = len(men_rows[i]) == 0 and not np.any(recent == self.author[i])
        self.opener = opener
        self.embed = np.array([vectors.average(u.tokens) for u in utts]).reshape(len(utts), vectors.dim)

    def features(self, pi, pj) -> np.ndarray:
        pi = np.asarray(pi, dtype=np.int64)
        pj = np.asarray(pj, dtype=np.int64)
        hand = kernels.pair_features(
            self.ts, self.author, self.tok_ptr, self.tok_idx,
            self.men_ptr, self.men_idx, self.opener, pi, pj,
        )
        return np.hstack([self.embed[pi], self.embed[pj], hand])


def _csr(rows):
    ptr = np.zeros(len(rows) + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([len(r) for r in rows])
    idx = np.array([x for r in rows for x in r], dtype=np.int64)
    return ptr, idx


def featurize_pair(a: Utterance, b: Utterance, ctx: LogContext) -> np.ndarray:
    """Feature vector for "``a`` replies to ``b``": averaged embeddings of both
    utterances followed by the handcrafted features."""
    i, j = ctx.index[a.id], ctx.index[b.id]
    if not (a.timestamp > b.timestamp or (a.timestamp == b.timestamp and i > j)):
        raise ValidationError(f"utterance {a.id} must be later than {b.id}")
    return ctx.features([i], [j])[0]


def candidate_pairs(n: int, window: int = 50):
    """All (replier, candidate) index pairs, self pairs included, in CSR order.

    Row ``i`` lists candidates ``max(0, i - window) .. i``; the last entry of
    each row is the self pair standing for "starts a new dialog".
    """
    pi, pj = [], []
    indptr = [0]
    for i in range(n):
        lo = max(0, i - window)
        pj.extend(range(lo, i + 1))
        pi.extend([i] * (i + 1 - lo))
        indptr.append(len(pi))
    return np.array(pi, dtype=np.int64), np.array(pj, dtype=np.int64), np.array(indptr, dtype=np.int64)


class LinkModel(nn.Module):
    """Two softsign hidden layers of width 512 and a sigmoid scoring head."""

    def __init__(self, in_dim: int, hidden: int = 512):
        super().__init__()
        self.in_dim = in_dim
        self.hidden = hidden
        self.net = nn.Sequential(
            nn.Linear(in_dim, hidden), nn.Softsign(),
            nn.Linear(hidden, hidden), nn.Softsign(),
            nn.Linear(hidden, 1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x).squeeze(-1)


def score_reply_to(model: LinkModel, features) -> np.ndarray:
    """Reply-to probabilities for one feature vector or a matrix of them."""
    x = np.asarray(features, dtype=np.float32)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != model.in_dim:
        raise ShapeError(f"expected {model.in_dim} features, got {x.shape[1]}")
    model.eval()
    with torch.no_grad():
        p = torch.sigmoid(model(torch.from_numpy(x))).numpy().astype(np.float64)
    return p[0] if single else p


@dataclass
class LinkTrainConfig:
    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 64
    neg_ratio: int = 5
    window: int = 50
    hidden: int = 512
    seed: int = 0


def fit_link_model(X, y, cfg: LinkTrainConfig | None = None) -> LinkModel:
    """Binary cross-entropy training of a fresh link model on features ``X``."""
    cfg = cfg or LinkTrainConfig()
    X = torch.as_tensor(np.asarray(X, dtype=np.float32))
    y = torch.as_tensor(np.asarray(y, dtype=np.float32))
    if len(X) == 0:
        raise ValidationError("no training pairs")
    torch.manual_seed(cfg.seed)
    model = LinkModel(X.shape[1], cfg.hidden)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    loss_fn = nn.BCEWithLogitsLoss()
    gen = torch.Generator().manual_seed(cfg.seed)
    model.train()
    for _ in range(cfg.epochs):
        order = torch.randperm(len(X), generator=gen)
        for start in range(0, len(X), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            opt.zero_grad()
            loss = loss_fn(model(X[idx]), y[idx])
            loss.backward()
            opt.step()
    model.eval()
    return model


def training_pairs(log: ChatLog, links, vectors: WordVectors, cfg: LinkTrainConfig):
    """Positive gold pairs plus up to ``neg_ratio`` sampled negatives each.

    Utterances without a gold antecedent contribute their self pair as the
    positive.
    """
    ctx = LogContext(log, vectors, cfg.window)
    gold = {}
    for a, b in links:
        if a not in ctx.index or b not in ctx.index:
            raise ValidationError(f"gold link ({a}, {b}) references an unknown utterance")
        gold.setdefault(ctx.index[a], set()).add(ctx.index[b])
    rng = np.random.default_rng(cfg.seed)
    pi, pj, y = [], [], []
    for i in range(len(log)):
        positives = gold.get(i, {i})
        lo = max(0, i - cfg.window)
        negatives = [j for j in range(lo, i + 1) if j not in positives]
        k = min(len(negatives), cfg.neg_ratio * len(positives))
        sampled = rng.choice(negatives, size=k, replace=False) if k else []
        for j in sorted(positives):
            pi.append(i); pj.append(j); y.append(1.0)
        for j in sorted(int(s) for s in sampled):
            pi.append(i); pj.append(j); y.append(0.0)
    return ctx.features(pi, pj), np.array(y)


def train_link_model(examples, vectors: WordVectors, cfg: LinkTrainConfig | None = None) -> LinkModel:
    """Train on ``[(ChatLog, gold_links), ...]``."""
    cfg = cfg or LinkTrainConfig()
    Xs, ys = [], []
    for log, links in examples:
        X, y = training_pairs(log, links, vectors, cfg)
        Xs.append(X)
        ys.append(y)
    return fit_link_model(np.vstack(Xs), np.concatenate(ys), cfg)


@dataclass
class CandidateScores:
    """Scores for every utterance's earlier candidates, in CSR layout."""

    indptr: np.ndarray
    cand_pos: np.ndarray
    scores: np.ndarray
    self_scores: np.ndarray


def score_log(log: ChatLog, model: LinkModel, vectors: WordVectors, window: int = 50) -> CandidateScores:
    ctx = LogContext(log, vectors, window)
    pi, pj, indptr = candidate_pairs(len(log), window)
    probs = score_reply_to(model, ctx.features(pi, pj)) if len(pi) else np.zeros(0)
    is_self = pi == pj
    counts = np.diff(indptr) - 1
    new_ptr = np.zeros(len(indptr), dtype=np.int64)
    new_ptr[1:] = np.cumsum(counts)
    return CandidateScores(new_ptr, pj[~is_self], probs[~is_self], probs[is_self])


def link_decisions(log: ChatLog, scores: CandidateScores) -> list[tuple[str, str]]:
    """Keep each utterance's best antecedent unless its self score wins."""
    if len(scores.indptr) - 1 != len(log):
        raise ShapeError("candidate scores do not match the chat log length")
    chosen = kernels.select_antecedents(scores.indptr, scores.cand_pos, scores.scores, scores.self_scores)
    utts = log.utterances
    return [(utts[i].id, utts[j].id) for i, j in enumerate(chosen.tolist()) if j >= 0]


def cluster_dialogs(log: ChatLog, links) -> list[Dialog]:
    """Connected components of the undirected link graph, one dialog each.

    Dialogs are ordered by their first utterance.
    """
    index = {u.id: i for i, u in enumerate(log.utterances)}
    src, dst = [], []
    for a, b in links:
        if a not in index or b not in index:
            raise ValidationError(f"reply link ({a}, {b}) references an unknown utterance")
        src.append(index[a])
        dst.append(index[b])
    labels = kernels.connected_components(len(log), src, dst)
    members: dict[int, list[int]] = {}
    for i, lab in enumerate(labels.tolist()):
        members.setdefault(lab, []).append(i)
    link_groups: dict[int, list] = {}
    for (a, b), s in zip(links, src):
        link_groups.setdefault(int(labels[s]), []).append((a, b))
    dialogs = []
    for root in sorted(members):
        utts = tuple(log.utterances[i] for i in members[root])
        dialogs.append(Dialog(utterances=utts, reply_links=tuple(link_groups.get(root, ()))))
    return dialogs


def load_gold_links(path) -> list[tuple[str, str]]:
    """Read JSON-lines ``{"replier_id": ..., "replied_id": ...}`` records."""
    links = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                links.append((str(rec["replier_id"]), str(rec["replied_id"])))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"bad gold link record: {exc}", lineno) from None
    return links


def links_from_log(log: ChatLog) -> list[tuple[str, str]]:
    """Links declared inline through ``reply_to_ids``."""
    return [(u.id, r) for u in log for r in u.reply_to_ids]


def disentangle(log: ChatLog, model: LinkModel, vectors: WordVectors, window: int = 50) -> list[Dialog]:
    if len(log) == 0:
        return []
    links = link_decisions(log, score_log(log, model, vectors, window))
    return cluster_dialogs(log, links)


def save_link_model(path, model: LinkModel, cfg: LinkTrainConfig, vectors: WordVectors) -> None:
    os.makedirs(path, exist_ok=True)
    tmp = os.path.join(path, "link.pt.tmp")
    torch.save(model.state_dict(), tmp)
    os.replace(tmp, os.path.join(path, "link.pt"))
    manifest = {"kind": "link", "in_dim": model.in_dim, "hidden": model.hidden,
                "word_dim": vectors.dim, "config": asdict(cfg)}
    tmp = os.path.join(path, "manifest.json.tmp")
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    os.replace(tmp, os.path.join(path, "manifest.json"))


def load_link_model(path):
    """Returns ``(model, manifest)``."""
    manifest_path = os.path.join(path, "manifest.json")
    weights_path = os.path.join(path, "link.pt")
    if not (os.path.isfile(manifest_path) and os.path.isfile(weights_path)):
        raise CheckpointNotFoundError(f"no link model checkpoint at {path}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("kind") != "link":
        raise SchemaError(f"{path} is not a link model checkpoint")
    model = LinkModel(manifest["in_dim"], manifest["hidden"])
    model.load_state_dict(torch.load(weights_path, weights_only=True))
    model.eval()
    return model, manifest
