"""Bug-report dialog identification.

Utterance vectors from the TextCNN seed a two-layer graph network: a
structure layer that aggregates replies with learned similarity weights and
a role layer with one matrix per reporter/discussant edge type. Vertex
states are concatenated with the utterance vectors, sum- and max-pooled into
a dialog embedding and classified BR/NBR under focal loss.
"""

from __future__ import annotations

import copy
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .corpus import Dialog
from .dialog_graph import EDGE_TYPE_INDEX, WEIGHT_EPS, assign_edge_types
from .encoder import ContextualEncoder, EncoderConfig, TextCNN, pad_sequences
from .errors import CheckpointNotFoundError, SchemaError, ValidationError
from .eval_harness import compute_metrics

logger = logging.getLogger(__name__)

LABELS = ("NBR", "BR")
N_EDGE_TYPES = 4


@dataclass
class BriTrainConfig:
    batch_size: int = 32
    lr: float = 1e-4
    dropout: float = 0.5
    l2_lambda: float = 1e-5
    focal_alpha: float = 1.0
    focal_gamma: float = 2.0
    epochs: int = 100
    patience: int = 10
    hidden: int = 64
    utterance_dim: int = 100
    kernel_sizes: tuple = (2, 3, 4, 5)
    n_maps: int = 100
    seed: int = 0


@dataclass
class BriPrediction:
    p_nbr: float
    p_br: float

    @property
    def label(self) -> str:
        return "BR" if self.p_br > self.p_nbr else "NBR"


# ---------------------------------------------------------------------------
# functional pieces (dtype agnostic so they can be checked in float64)

def edge_weights(x, src, dst, W_e, n_vertices, eps=WEIGHT_EPS):
    """Per-source normalized, zero-clipped bilinear scores with uniform fallback."""
    scores = ((x[src] @ W_e) * x[dst]).sum(-1)
    clipped = torch.relu(scores)
    denom = x.new_zeros(n_vertices).index_add(0, src, clipped)
    outdeg = torch.bincount(src, minlength=n_vertices).to(x.dtype)
    fallback = denom[src] <= eps
    return torch.where(fallback, 1.0 / outdeg[src], clipped / denom[src].clamp_min(eps))


def structure_layer(u, src, dst, w, W1, W2):
    """``relu(W1 u_i + W2 * sum_{j -> i} w_ji u_j)`` for every vertex ``i``."""
    agg = u.new_zeros(u.shape).index_add(0, dst, w.unsqueeze(-1) * u[src])
    return torch.relu(u @ W1.T + agg @ W2.T)


def role_layer(v, src, dst, etype, W1, Wt):
    """``relu(W1 v_i + sum_t mean_{j -t-> i} Wt[t] v_j)``; an empty type adds nothing."""
    n = v.shape[0]
    out = v @ W1.T
    for t in range(Wt.shape[0]):
        m = etype == t
        if not bool(m.any()):
            continue
        s, d = src[m], dst[m]
        agg = v.new_zeros(v.shape).index_add(0, d, v[s])
        count = torch.bincount(d, minlength=n).clamp_min(1).to(v.dtype)
        out = out + (agg / count.unsqueeze(-1)) @ Wt[t].T
    return torch.relu(out)


def combine(u, h):
    return torch.cat([u, h], dim=-1)


def dialog_embedding(c, seg, n_dialogs):
    """Sum-pool concatenated with element-wise max-pool per dialog."""
    total = c.new_zeros(n_dialogs, c.shape[1]).index_add(0, seg, c)
    idx = seg.unsqueeze(-1).expand_as(c)
    peak = c.new_full((n_dialogs, c.shape[1]), float("-inf")).scatter_reduce(
        0, idx, c, reduce="amax", include_self=True)
    return torch.cat([total, peak], dim=-1)


def focal_loss(probs, target, alpha=1.0, gamma=2.0, reduction="mean"):
    """``-alpha_y (1 - P_y)^gamma log P_y`` on the true class ``y``.

    ``target`` holds class indices or one-hot rows; ``alpha`` is a scalar or
    one weight per class. ``P_y`` is clamped at 1e-12 before the log.
    """
    probs = torch.as_tensor(probs)
    target = torch.as_tensor(target)
    if target.dim() == probs.dim():
        target = target.argmax(-1)
    p_true = probs.gather(-1, target.long().unsqueeze(-1)).squeeze(-1).clamp_min(1e-12)
    a = torch.as_tensor(alpha, dtype=probs.dtype)
    if a.dim() > 0:
        a = a[target.long()]
    loss = -a * (1.0 - p_true) ** gamma * torch.log(p_true)
    if reduction == "mean":
        return loss.mean()
    if reduction == "sum":
        return loss.sum()
    return loss


# ---------------------------------------------------------------------------
# batching

@dataclass
class GraphBatch:
    words: torch.Tensor
    lengths: torch.Tensor
    src: torch.Tensor
    dst: torch.Tensor
    etype: torch.Tensor
    seg: torch.Tensor
    n_dialogs: int
    labels: torch.Tensor | None = None


def make_batch(dialogs: Sequence[Dialog], word_table: dict) -> GraphBatch:
    """Stack dialogs into one disjoint graph; ``word_table`` maps normalized
    utterance text to its ``L x 768`` word-embedding tensor."""
    seqs, src, dst, etype, seg, labels = [], [], [], [], [], []
    offset = 0
    for b, d in enumerate(dialogs):
        pos = d.position()
        roles = [u.role for u in d.utterances]
        seqs.extend(word_table[u.text] for u in d.utterances)
        seg.extend([b] * len(d))
        pairs = [(pos[a], pos[r]) for a, r in d.reply_links]
        if len(d) == 1 and not pairs:
            pairs = [(0, 0)]
        for i, j in pairs:
            src.append(offset + i)
            dst.append(offset + j)
            etype.append(EDGE_TYPE_INDEX[assign_edge_types(roles[i], roles[j])])
        offset += len(d)
        labels.append(LABELS.index(d.label) if d.label is not None else -1)
    words, lengths = pad_sequences(seqs)
    as_long = lambda xs: torch.tensor(xs, dtype=torch.long)
    return GraphBatch(words, lengths, as_long(src), as_long(dst), as_long(etype), as_long(seg),
                      len(dialogs), as_long(labels))


# ---------------------------------------------------------------------------
# model

class BriModel(nn.Module):
    def __init__(self, cfg: BriTrainConfig | None = None, in_dim: int = 768):
        super().__init__()
        cfg = cfg or BriTrainConfig()
        d = cfg.utterance_dim
        self.cfg = cfg
        self.textcnn = TextCNN(in_dim, cfg.kernel_sizes, cfg.n_maps, d)
        self.W_e = nn.Parameter(torch.eye(d))
        self.struct_W1 = nn.Parameter(torch.empty(d, d))
        self.struct_W2 = nn.Parameter(torch.empty(d, d))
        self.role_W1 = nn.Parameter(torch.empty(d, d))
        self.role_Wt = nn.Parameter(torch.empty(N_EDGE_TYPES, d, d))
        for p in (self.struct_W1, self.struct_W2, self.role_W1):
            nn.init.xavier_uniform_(p)
        for t in range(N_EDGE_TYPES):
            nn.init.xavier_uniform_(self.role_Wt.data[t])
        self.fc1 = nn.Linear(4 * d, cfg.hidden)
        self.fc2 = nn.Linear(cfg.hidden, 2)
        self.dropout = nn.Dropout(cfg.dropout)

    def vertex_states(self, batch: GraphBatch):
        u = self.textcnn(batch.words, batch.lengths)
        n = u.shape[0]
        w = edge_weights(u, batch.src, batch.dst, self.W_e, n)
        v1 = structure_layer(u, batch.src, batch.dst, w, self.struct_W1, self.struct_W2)
        h = role_layer(v1, batch.src, batch.dst, batch.etype, self.role_W1, self.role_Wt)
        return u, h

    def forward(self, batch: GraphBatch) -> torch.Tensor:
        u, h = self.vertex_states(batch)
        c = self.dropout(combine(u, h))
        g = dialog_embedding(c, batch.seg, batch.n_dialogs)
        return self.fc2(self.dropout(torch.relu(self.fc1(g))))

    def l2_penalty(self) -> torch.Tensor:
        return sum((p ** 2).sum() for p in self.parameters() if p.requires_grad)


def bri_loss(model: BriModel, logits, target, cfg: BriTrainConfig):
    probs = F.softmax(logits, dim=-1)
    loss = focal_loss(probs, target, cfg.focal_alpha, cfg.focal_gamma)
    if cfg.l2_lambda:
        loss = loss + cfg.l2_lambda * model.l2_penalty()
    return loss


# ---------------------------------------------------------------------------
# training and inference

def word_table_for(dialogs: Sequence[Dialog], encoder: ContextualEncoder, table: dict | None = None) -> dict:
    table = {} if table is None else table
    texts = sorted({u.text for d in dialogs for u in d.utterances} - table.keys())
    for text, emb in zip(texts, encoder.embed_words_batch(texts)):
        table[text] = emb
    return table


def _predict_labels(model, dialogs, table, batch_size=64) -> list[int]:
    model.eval()
    preds = []
    with torch.no_grad():
        for start in range(0, len(dialogs), batch_size):
            batch = make_batch(dialogs[start:start + batch_size], table)
            preds.extend(model(batch).argmax(-1).tolist())
    return preds


def _f1_br(model, dialogs, table) -> float:
    preds = [LABELS[p] for p in _predict_labels(model, dialogs, table)]
    gold = [d.label for d in dialogs]
    return compute_metrics(preds, gold, labels=LABELS, positive="BR").f1


def train_bri(dialogs: Sequence[Dialog], cfg: BriTrainConfig, encoder: ContextualEncoder,
              val: Sequence[Dialog] | None = None, word_table: dict | None = None):
    """Fit a fresh model; returns ``(model, history)``.

    The checkpoint with the best BR F1 on ``val`` (the training set when no
    validation set is given) is restored; training stops after ``patience``
    epochs without improvement.
    """
    dialogs = list(dialogs)
    if not dialogs:
        raise ValidationError("cannot train on an empty dataset")
    if any(d.label not in LABELS for d in dialogs):
        raise ValidationError("every training dialog needs a BR/NBR label")
    val = list(val) if val else dialogs
    table = word_table_for(dialogs + val, encoder, word_table)
    torch.manual_seed(cfg.seed)
    model = BriModel(cfg, encoder.hidden_size)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    gen = torch.Generator().manual_seed(cfg.seed)
    best_f1, best_state, stale = -1.0, None, 0
    history = []
    for epoch in range(cfg.epochs):
        model.train()
        order = torch.randperm(len(dialogs), generator=gen).tolist()
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            chunk = [dialogs[i] for i in order[start:start + cfg.batch_size]]
            batch = make_batch(chunk, table)
            opt.zero_grad()
            loss = bri_loss(model, model(batch), batch.labels, cfg)
            loss.backward()
            opt.step()
            total += loss.item() * len(chunk)
        f1 = _f1_br(model, val, table)
        history.append({"epoch": epoch + 1, "loss": total / len(dialogs), "f1": f1})
        if f1 > best_f1:
            best_f1, best_state, stale = f1, copy.deepcopy(model.state_dict()), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.load_state_dict(best_state)
    model.eval()
    return model, history


def predict_bri(dialogs, model: BriModel, encoder: ContextualEncoder, word_table: dict | None = None):
    """Probabilities for one dialog or a list of dialogs."""
    single = isinstance(dialogs, Dialog)
    dialogs = [dialogs] if single else list(dialogs)
    table = word_table_for(dialogs, encoder, word_table)
    model.eval()
    out = []
    with torch.no_grad():
        for start in range(0, len(dialogs), 64):
            probs = F.softmax(model(make_batch(dialogs[start:start + 64], table)), dim=-1)
            out.extend(BriPrediction(float(p[0]), float(p[1])) for p in probs.double())
    return out[0] if single else out


# ---------------------------------------------------------------------------
# checkpoints

def _fingerprint(module: nn.Module) -> float:
    with torch.no_grad():
        return float(sum(p.double().abs().sum() for p in module.parameters()))


def save_bri(path, model: BriModel, encoder_cfg: EncoderConfig, encoder: ContextualEncoder | None = None,
             metrics: dict | None = None) -> None:
    os.makedirs(path, exist_ok=True)
    tmp = os.path.join(path, "bri.pt.tmp")
    torch.save(model.state_dict(), tmp)
    os.replace(tmp, os.path.join(path, "bri.pt"))
    manifest = {
        "kind": "bri",
        "config": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(model.cfg).items()},
        "encoder": asdict(encoder_cfg),
        "seed": model.cfg.seed,
        "metrics": metrics or {},
    }
    if encoder is not None:
        manifest["encoder_fingerprint"] = round(_fingerprint(encoder), 3)
    tmp = os.path.join(path, "manifest.json.tmp")
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    os.replace(tmp, os.path.join(path, "manifest.json"))


def load_bri(path):
    """Returns ``(model, encoder, manifest)``."""
    manifest_path = os.path.join(path, "manifest.json")
    weights_path = os.path.join(path, "bri.pt")
    if not (os.path.isfile(manifest_path) and os.path.isfile(weights_path)):
        raise CheckpointNotFoundError(f"no BRI checkpoint at {path}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("kind") != "bri":
        raise SchemaError(f"{path} is not a BRI checkpoint")
    cfg_dict = dict(manifest["config"])
    cfg_dict["kernel_sizes"] = tuple(cfg_dict["kernel_sizes"])
    cfg = BriTrainConfig(**cfg_dict)
    enc_cfg = EncoderConfig(**manifest["encoder"])
    encoder = ContextualEncoder(enc_cfg)
    if "encoder_fingerprint" in manifest:
        fp = round(_fingerprint(encoder), 3)
        if abs(fp - manifest["encoder_fingerprint"]) > 1e-3 * max(1.0, abs(fp)):
            logger.warning("rebuilt word encoder differs from the one used in training")
    model = BriModel(cfg, encoder.hidden_size)
    model.load_state_dict(torch.load(weights_path, weights_only=True))
    model.eval()
    return model, encoder, manifest
