"""Bug-report synthesis.

Reporter sentences are pruned, classified into observed behavior (OB),
expected behavior (EB), steps to reproduce (SR) or other content by a BERT
classifier fine-tuned twice (first on an external bug-report corpus, then on
chat sentences with a fresh head), and assembled into a report.
"""

from __future__ import annotations

import copy
import json
import logging
import math
import os
import re
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from importlib import resources
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .corpus import PLACEHOLDER_TOKENS, Dialog, Role, Utterance, prepare_text
from .encoder import ContextualEncoder, EncoderConfig
from .errors import CheckpointNotFoundError, InsufficientContentError, ParseError, SchemaError, ValidationError

logger = logging.getLogger(__name__)

SENTENCE_LABELS = ("OB", "EB", "SR", "OTHER")
MAX_SENTENCE_TOKENS = 200
PRUNE_MAX_TOKENS = 5
TITLE_TOKENS = 12


@dataclass(frozen=True)
class Sentence:
    id: str
    text: str
    dialog_id: str = ""
    utterance_id: str = ""
    index: int = 0
    label: str | None = None
    source_text: str | None = None
    augmented_from: str | None = None


_SPLIT_RE = re.compile(r"(?<=[.!?])\s+|\n+")


def split_sentences(u: Utterance, dialog_id: str = "") -> list[Sentence]:
    """Punctuation/newline segmentation of an utterance's prepared raw text.

    Placeholders are substituted before splitting so URLs, versions and code
    stay whole; sentences over 200 tokens are dropped.
    """
    text, _ = prepare_text(u.raw_text)
    parts = [p.strip() for p in _SPLIT_RE.split(text)]
    out = []
    for p in parts:
        if not p or len(p.split()) > MAX_SENTENCE_TOKENS:
            continue
        k = len(out)
        out.append(Sentence(id=f"{u.id}#{k}", text=p, dialog_id=dialog_id, utterance_id=u.id, index=k))
    return out


def reporter_sentences(dialog: Dialog) -> list[Sentence]:
    return [s for u in dialog.utterances if u.role == Role.REPORTER for s in split_sentences(u, dialog.id)]


@lru_cache(maxsize=4)
def load_greetings(path=None) -> tuple:
    if path is None:
        text = resources.files("buglistener.data").joinpath("greetings.txt").read_text()
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    phrases = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    return tuple(sorted(set(phrases), key=lambda p: (-len(p), p)))


@lru_cache(maxsize=4)
def _greeting_re(phrases: tuple) -> re.Pattern:
    alts = "|".join(r"\s+".join(re.escape(w) for w in p.split()) for p in phrases)
    return re.compile(rf"(?<!\w)(?:{alts})(?!\w)", re.I)


def strip_greetings(text: str, phrases: tuple | None = None) -> str:
    pattern = _greeting_re(phrases or load_greetings())
    prev = None
    while prev != text:
        prev = text
        text = pattern.sub(" ", text)
        text = re.sub(r"\s+", " ", text)
        text = re.sub(r"^[\s,;:.!?\-]+|[\s,;:\-]+$", "", text)
    return text if re.search(r"\w", text) else ""


def prune_reporter_utterances(sentences: Sequence[Sentence], phrases: tuple | None = None) -> list[Sentence]:
    """Drop short placeholder-free sentences, then strip greeting phrases.

    The length rule reads ``source_text`` (the sentence before any stripping),
    which keeps pruning idempotent.
    """
    out = []
    for s in sentences:
        source = s.source_text if s.source_text is not None else s.text
        tokens = source.split()
        if len(tokens) <= PRUNE_MAX_TOKENS and not any(p in source for p in PLACEHOLDER_TOKENS):
            continue
        stripped = strip_greetings(s.text, phrases)
        if stripped:
            out.append(replace(s, text=stripped, source_text=source))
    return out


# ---------------------------------------------------------------------------
# classifier

class BrsModel(nn.Module):
    """Contextual encoder plus a linear head over the [CLS] vector."""

    def __init__(self, encoder: ContextualEncoder, head_seed: int = 0):
        super().__init__()
        self.encoder = encoder
        self.frozen_layers = 0
        self.head = self._fresh_head(head_seed)

    def _fresh_head(self, seed: int) -> nn.Linear:
        head = nn.Linear(self.encoder.hidden_size, len(SENTENCE_LABELS))
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            # a small init keeps the untrained head close to uniform
            head.weight.normal_(0.0, 1e-3, generator=gen)
            head.bias.zero_()
        return head

    def replace_head(self, seed: int) -> None:
        self.head = self._fresh_head(seed)

    def freeze(self, n_layers: int = 9) -> None:
        """Freeze embeddings and the first ``n_layers`` encoder layers."""
        self.frozen_layers = n_layers
        for p in self.encoder.bert.embeddings.parameters():
            p.requires_grad = False
        for i, layer in enumerate(self.encoder.layers):
            for p in layer.parameters():
                p.requires_grad = i >= n_layers
        for p in self.head.parameters():
            p.requires_grad = True

    def frozen_state(self) -> dict:
        names = {n for n, p in self.named_parameters() if not p.requires_grad}
        return {k: v for k, v in self.state_dict().items() if k in names}

    def forward(self, input_ids, attention_mask) -> torch.Tensor:
        cls = self.encoder(input_ids, attention_mask)[:, 0]
        return self.head(cls)

    def logits_for(self, texts: Sequence[str]) -> torch.Tensor:
        ids, mask, _ = self.encoder.tokenizer.batch(list(texts))
        return self(ids, mask)


def classify_sentences(model: BrsModel, sentences: Sequence, batch_size: int = 32):
    """``[(label, probs), ...]`` with probs ordered (OB, EB, SR, OTHER)."""
    texts = [s.text if isinstance(s, Sentence) else str(s) for s in sentences]
    model.eval()
    out = []
    with torch.no_grad():
        for start in range(0, len(texts), batch_size):
            probs = F.softmax(model.logits_for(texts[start:start + batch_size]).double(), dim=-1).numpy()
            out.extend((SENTENCE_LABELS[int(np.argmax(p))], p) for p in probs)
    return out


def classify_sentence(model: BrsModel, s) -> tuple:
    return classify_sentences(model, [s])[0]


# ---------------------------------------------------------------------------
# fine-tuning

@dataclass
class FineTuneConfig:
    batch_size: int = 64
    lr: float = 1e-4
    epochs: int = 13
    weight_decay: float = 0.01
    warmup: float = 0.1
    clip: float = 1.0
    frozen_layers: int = 9
    val_fraction: float = 0.1
    seed: int = 0


def stage1_defaults(**overrides) -> FineTuneConfig:
    return replace(FineTuneConfig(), **overrides)


def stage2_defaults(**overrides) -> FineTuneConfig:
    return replace(FineTuneConfig(batch_size=8, lr=1e-6, epochs=70, val_fraction=0.0), **overrides)


def _check_labels(sentences):
    for s in sentences:
        if s.label not in SENTENCE_LABELS:
            raise ValidationError(f"sentence {s.id!r} has label {s.label!r}; expected one of {SENTENCE_LABELS}")


def _batches(items, size, gen):
    order = torch.randperm(len(items), generator=gen).tolist()
    for start in range(0, len(order), size):
        yield [items[i] for i in order[start:start + size]]


def _mean_loss(model, sentences, batch_size=64) -> float:
    model.eval()
    total = 0.0
    with torch.no_grad():
        for start in range(0, len(sentences), batch_size):
            chunk = sentences[start:start + batch_size]
            target = torch.tensor([SENTENCE_LABELS.index(s.label) for s in chunk])
            total += float(F.cross_entropy(model.logits_for([s.text for s in chunk]), target, reduction="sum"))
    return total / max(len(sentences), 1)


def accuracy(model, sentences) -> float:
    preds = classify_sentences(model, sentences)
    return float(np.mean([p == s.label for (p, _), s in zip(preds, sentences)])) if sentences else 0.0


def fine_tune(model: BrsModel, sentences: Sequence[Sentence], cfg: FineTuneConfig):
    """Cross-entropy fine-tuning of the unfrozen layers and head.

    AdamW with weight decay, linear warmup then linear decay, gradient-norm
    clipping. With ``val_fraction > 0`` a seeded hold-out picks the epoch
    with the lowest validation loss. Returns ``(model, history)``.
    """
    from transformers import get_linear_schedule_with_warmup

    sentences = list(sentences)
    if not sentences:
        raise ValidationError("no sentences to fine-tune on")
    _check_labels(sentences)
    model.freeze(cfg.frozen_layers)
    rng = np.random.default_rng(cfg.seed)
    n_val = int(round(cfg.val_fraction * len(sentences))) if cfg.val_fraction > 0 else 0
    if n_val:
        perm = rng.permutation(len(sentences))
        val = [sentences[i] for i in sorted(perm[:n_val])]
        train = [sentences[i] for i in sorted(perm[n_val:])]
    else:
        val, train = [], sentences
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    steps = cfg.epochs * math.ceil(len(train) / cfg.batch_size)
    sched = get_linear_schedule_with_warmup(opt, int(cfg.warmup * steps), max(steps, 1))
    gen = torch.Generator().manual_seed(cfg.seed)
    torch.manual_seed(cfg.seed)
    history = []
    best_loss, best_state = math.inf, None
    for epoch in range(cfg.epochs):
        model.train()
        total = 0.0
        for chunk in _batches(train, cfg.batch_size, gen):
            target = torch.tensor([SENTENCE_LABELS.index(s.label) for s in chunk])
            opt.zero_grad()
            loss = F.cross_entropy(model.logits_for([s.text for s in chunk]), target)
            loss.backward()
            torch.nn.utils.clip_grad_norm_(params, cfg.clip)
            opt.step()
            sched.step()
            total += loss.item() * len(chunk)
        record = {"epoch": epoch + 1, "train_loss": total / len(train)}
        if val:
            record["val_loss"] = _mean_loss(model, val)
            if record["val_loss"] < best_loss:
                best_loss = record["val_loss"]
                best_state = {k: v.clone() for k, v in _trainable_state(model).items()}
        history.append(record)
    if best_state is not None:
        model.load_state_dict(best_state, strict=False)
    model.eval()
    return model, history


def _trainable_state(model: BrsModel) -> dict:
    names = {n for n, p in model.named_parameters() if p.requires_grad}
    return {k: v for k, v in model.state_dict().items() if k in names}


def fine_tune_stage1(model: BrsModel, external: Sequence[Sentence], cfg: FineTuneConfig | None = None):
    """First round on the external bug-report corpus."""
    return fine_tune(model, external, cfg or stage1_defaults())


def fine_tune_stage2(stage1: BrsModel, sentences: Sequence[Sentence], cfg: FineTuneConfig | None = None,
                     head_seed: int | None = None):
    """Second round on chat sentences: copy the stage-1 model, swap in a fresh
    head and train with the smaller learning rate."""
    cfg = cfg or stage2_defaults()
    model = copy.deepcopy(stage1)
    model.replace_head(cfg.seed + 1 if head_seed is None else head_seed)
    return fine_tune(model, sentences, cfg)


# ---------------------------------------------------------------------------
# sentence corpora and checkpoints

def load_labeled_sentences(path) -> list[Sentence]:
    """JSON-lines ``{"text": ..., "label": ...}`` (optional ``id``)."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON ({exc.msg})", lineno) from None
            if not isinstance(rec, dict) or not isinstance(rec.get("text"), str):
                raise ParseError("sentence record needs a string 'text'", lineno)
            if rec.get("label") not in SENTENCE_LABELS:
                raise ValidationError(f"line {lineno}: label {rec.get('label')!r} not in {SENTENCE_LABELS}")
            text, _ = prepare_text(rec["text"])
            text = " ".join(text.split())
            if not text or len(text.split()) > MAX_SENTENCE_TOKENS:
                continue
            out.append(Sentence(id=str(rec.get("id", f"s{lineno}")), text=text, label=rec["label"],
                                dialog_id=rec.get("dialog_id", ""), utterance_id=rec.get("utterance_id", "")))
    return out


def _fingerprint(state: dict) -> float:
    return float(sum(v.double().abs().sum() for v in state.values()))


def save_brs(path, model: BrsModel, metrics: dict | None = None, extra: dict | None = None) -> None:
    """Store only the trainable tensors; frozen ones are rebuilt from the encoder config."""
    os.makedirs(path, exist_ok=True)
    tmp = os.path.join(path, "brs.pt.tmp")
    torch.save(_trainable_state(model) | {k: v for k, v in model.state_dict().items() if k.startswith("head.")}, tmp)
    os.replace(tmp, os.path.join(path, "brs.pt"))
    manifest = {
        "kind": "brs",
        "encoder": asdict(model.encoder.cfg),
        "frozen_layers": model.frozen_layers,
        "frozen_fingerprint": round(_fingerprint(model.frozen_state()), 3),
        "metrics": metrics or {},
    }
    manifest.update(extra or {})
    tmp = os.path.join(path, "manifest.json.tmp")
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    os.replace(tmp, os.path.join(path, "manifest.json"))


def load_brs(path) -> tuple:
    manifest_path = os.path.join(path, "manifest.json")
    weights_path = os.path.join(path, "brs.pt")
    if not (os.path.isfile(manifest_path) and os.path.isfile(weights_path)):
        raise CheckpointNotFoundError(f"no BRS checkpoint at {path}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("kind") != "brs":
        raise SchemaError(f"{path} is not a BRS checkpoint")
    model = BrsModel(ContextualEncoder(EncoderConfig(**manifest["encoder"])))
    model.freeze(manifest["frozen_layers"])
    fp = round(_fingerprint(model.frozen_state()), 3)
    if abs(fp - manifest["frozen_fingerprint"]) > 1e-3 * max(1.0, abs(fp)):
        logger.warning("rebuilt frozen encoder layers differ from the ones used in training")
    model.load_state_dict(torch.load(weights_path, weights_only=True), strict=False)
    model.eval()
    return model, manifest


# ---------------------------------------------------------------------------
# report assembly

@dataclass
class BugReport:
    dialog_id: str
    title: str
    description: list = field(default_factory=list)
    observed_behavior: list = field(default_factory=list)
    expected_behavior: list = field(default_factory=list)
    steps_to_reproduce: list = field(default_factory=list)

    SECTIONS = (
        ("Description", "description"),
        ("Observed Behavior", "observed_behavior"),
        ("Expected Behavior", "expected_behavior"),
        ("Steps to Reproduce", "steps_to_reproduce"),
    )

    def sentences(self) -> list:
        return [s for _, attr in self.SECTIONS for s in getattr(self, attr)]

    def to_dict(self) -> dict:
        out = {"dialog_id": self.dialog_id, "title": self.title}
        for _, attr in self.SECTIONS:
            out[attr] = [{"id": s.id, "utterance_id": s.utterance_id, "text": s.text} for s in getattr(self, attr)]
        return out

    def to_markdown(self, issue_style: bool = False) -> str:
        head = "###" if issue_style else "##"
        lines = [f"# {self.title}", ""]
        for name, attr in self.SECTIONS:
            items = getattr(self, attr)
            lines.append(f"{head} {name}")
            lines.append("")
            if not items:
                lines.append("_None identified._")
            elif attr == "description":
                lines.append(" ".join(s.text for s in items))
            elif attr == "steps_to_reproduce":
                lines.extend(f"{k}. {s.text}" for k, s in enumerate(items, start=1))
            else:
                lines.extend(f"- {s.text}" for s in items)
            lines.append("")
        if issue_style:
            lines.append(f"<!-- synthesized from chat dialog {self.dialog_id} -->")
            lines.append("")
        return "\n".join(lines)


_SECTION_FOR = {"OB": "observed_behavior", "EB": "expected_behavior", "SR": "steps_to_reproduce"}


def assemble_report(dialog: Dialog, labeled: Sequence[Sentence]) -> BugReport:
    """Group labeled sentences into report sections in chronological order.

    OTHER (and unlabeled) sentences form the description. The title is the
    first observed-behavior sentence, else the first description sentence,
    cut to 12 tokens.
    """
    if not labeled:
        raise InsufficientContentError(f"dialog {dialog.id} has no sentences left after pruning")
    pos = dialog.position()
    for s in labeled:
        if s.utterance_id not in pos:
            raise ValidationError(f"sentence {s.id} is not from dialog {dialog.id}")
    ordered = sorted(labeled, key=lambda s: (pos[s.utterance_id], s.index))
    report = BugReport(dialog_id=dialog.id, title="")
    for s in ordered:
        getattr(report, _SECTION_FOR.get(s.label, "description")).append(s)
    first = (report.observed_behavior or report.description or ordered)[0]
    report.title = " ".join(first.text.split()[:TITLE_TOKENS])
    return report


def synthesize_report(dialog: Dialog, model: BrsModel, phrases: tuple | None = None) -> BugReport:
    """Prune the reporter's sentences, classify them and assemble the report."""
    kept = prune_reporter_utterances(reporter_sentences(dialog), phrases)
    if not kept:
        raise InsufficientContentError(f"dialog {dialog.id} has no reporter content after pruning")
    labeled = [replace(s, label=label) for s, (label, _) in zip(kept, classify_sentences(model, kept))]
    return assemble_report(dialog, labeled)
