"""Training-data augmentation.

Dialog mutation for bug-report identification: short utterances are swapped
for random short utterances from the corpus, long ones get synonym
replacement. Sentence-level EDA balances OB/EB/SR classes for synthesis.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field, fields, replace
from functools import lru_cache
from importlib import resources
from typing import Sequence

import numpy as np

from .corpus import PLACEHOLDER_TOKENS, Dialog, Utterance
from .errors import ConfigError, ValidationError


@lru_cache(maxsize=4)
def load_thesaurus(path=None) -> dict:
    if path is None:
        text = resources.files("buglistener.data").joinpath("thesaurus.json").read_text()
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    table = json.loads(text)
    # single-token synonyms only, so replacement preserves token counts
    return {k: tuple(s for s in v if " " not in s and s != k) for k, v in table.items()}


@dataclass
class AugmentConfig:
    theta: int = 5
    n_mutants: int = 1
    rng_seed: int = 0
    sr_rate: float = 0.1
    nbr_multiplier: int = 8
    synonyms: dict = field(default_factory=load_thesaurus, repr=False)

    def __post_init__(self):
        if self.theta < 1:
            raise ConfigError("theta must be at least 1")
        if self.n_mutants < 0:
            raise ConfigError("n_mutants must be non-negative")
        if self.nbr_multiplier < 1:
            raise ConfigError("nbr_multiplier must be at least 1")


def derived_rng(seed: int, *keys) -> np.random.Generator:
    """Generator seeded from ``seed`` and string/int keys, stable across runs."""
    entropy = [seed] + [zlib.crc32(str(k).encode("utf-8")) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def short_pool(dialogs: Sequence[Dialog], theta: int) -> list[Utterance]:
    """Non-empty utterances with fewer than ``theta`` tokens, deduplicated by text."""
    seen = set()
    pool = []
    for d in dialogs:
        for u in d.utterances:
            if 0 < len(u.tokens) < theta and u.text not in seen:
                seen.add(u.text)
                pool.append(u)
    return pool


def synonym_replace(tokens: list[str], synonyms: dict, rate: float, rng: np.random.Generator) -> list[str]:
    eligible = [i for i, t in enumerate(tokens) if t not in PLACEHOLDER_TOKENS]
    if not eligible:
        return list(tokens)
    n = math.ceil(rate * len(eligible))
    replaceable = [i for i in eligible if synonyms.get(tokens[i])]
    out = list(tokens)
    if not replaceable:
        return out
    picks = rng.choice(len(replaceable), size=min(n, len(replaceable)), replace=False)
    for p in sorted(picks.tolist()):
        i = replaceable[p]
        options = synonyms[tokens[i]]
        out[i] = options[int(rng.integers(len(options)))]
    return out


def mutate_utterance(u: Utterance, cfg: AugmentConfig, pool: Sequence[Utterance],
                     rng: np.random.Generator | None = None) -> Utterance:
    """Mutate one utterance; id, timestamp, author and role are preserved."""
    rng = rng if rng is not None else derived_rng(cfg.rng_seed, u.id)
    tokens = u.tokens
    if len(tokens) <= cfg.theta:
        if not pool:
            raise ConfigError("short-utterance pool is empty but a short utterance needs replacing")
        pick = pool[int(rng.integers(len(pool)))]
        return replace(u, text=pick.text, raw_text=pick.raw_text, placeholders=pick.placeholders)
    new_tokens = synonym_replace(tokens, cfg.synonyms, cfg.sr_rate, rng)
    text = " ".join(new_tokens)
    return replace(u, text=text, raw_text=text)


def augment_dialog(d: Dialog, cfg: AugmentConfig, pool: Sequence[Utterance],
                   n: int | None = None) -> list[Dialog]:
    """``n`` (default ``cfg.n_mutants``) mutants with the same structure and label."""
    n = cfg.n_mutants if n is None else n
    mutants = []
    for k in range(n):
        rng = derived_rng(cfg.rng_seed, d.id, k)
        utts = tuple(mutate_utterance(u, cfg, pool, rng) for u in d.utterances)
        mutants.append(Dialog(
            utterances=utts, reply_links=d.reply_links, label=d.label,
            id=f"{d.id}~aug{k}", project=d.project, augmented_from=d.id,
        ))
    return mutants


def _grow(dialogs: Sequence[Dialog], target: int, cfg: AugmentConfig, pool) -> list[Dialog]:
    extra = target - len(dialogs)
    out = list(dialogs)
    if extra <= 0:
        return out
    q, r = divmod(extra, len(dialogs))
    for i, d in enumerate(dialogs):
        out.extend(augment_dialog(d, cfg, pool, q + (1 if i < r else 0)))
    return out


def balance_bri(dataset: dict, cfg: AugmentConfig, pool: Sequence[Utterance] | None = None,
                nbr_multiplier: int | None = None) -> dict:
    """Grow NBR by ``nbr_multiplier`` and then BR until both classes match.

    ``dataset`` maps ``"BR"`` and ``"NBR"`` to dialog lists for one project.
    Originals come first, mutants are appended.
    """
    br, nbr = list(dataset.get("BR", [])), list(dataset.get("NBR", []))
    if not br or not nbr:
        raise ValidationError("both BR and NBR dialogs are required for balancing")
    mult = cfg.nbr_multiplier if nbr_multiplier is None else nbr_multiplier
    if pool is None:
        pool = short_pool(br + nbr, cfg.theta)
    target = max(len(nbr) * mult, len(br))
    return {"BR": _grow(br, target, cfg, pool), "NBR": _grow(nbr, target, cfg, pool)}


# ---------------------------------------------------------------------------
# sentence-level EDA

def _eda_sr(words, synonyms, n, rng):
    return synonym_replace(words, synonyms, n / max(len(words), 1), rng)


def _eda_ri(words, synonyms, n, rng):
    out = list(words)
    sources = [w for w in words if synonyms.get(w)]
    for _ in range(n):
        if not sources:
            break
        src = sources[int(rng.integers(len(sources)))]
        syn = synonyms[src][int(rng.integers(len(synonyms[src])))]
        out.insert(int(rng.integers(len(out) + 1)), syn)
    return out


def _eda_rs(words, synonyms, n, rng):
    out = list(words)
    if len(out) < 2:
        return out
    for _ in range(n):
        i, j = rng.choice(len(out), size=2, replace=False)
        out[i], out[j] = out[j], out[i]
    return out


def _eda_rd(words, synonyms, n, rng, p=0.1):
    keep = [w for w in words if w in PLACEHOLDER_TOKENS or rng.random() >= p]
    if not keep:
        return [words[int(rng.integers(len(words)))]]
    return keep


EDA_OPS = (_eda_sr, _eda_ri, _eda_rs, _eda_rd)


def eda(text: str, synonyms: dict, rng: np.random.Generator, alpha: float = 0.1) -> str:
    """One EDA edit (synonym replacement, random insertion, random swap or
    random deletion), chosen uniformly."""
    words = text.split()
    if not words:
        return text
    n = max(1, math.ceil(alpha * len(words)))
    op = EDA_OPS[int(rng.integers(len(EDA_OPS)))]
    return " ".join(op(words, synonyms, n, rng))


def augment_sentences_eda(by_class: dict, cfg: AugmentConfig, classes=("OB", "EB", "SR")) -> dict:
    """Balance the listed classes up to the largest one with EDA copies.

    Values are lists of sentence dataclasses with ``id``, ``text`` and
    ``augmented_from`` fields. Classes outside ``classes`` pass through.
    """
    for c in classes:
        if not by_class.get(c):
            raise ValidationError(f"class {c} has no sentences to augment")
    target = max(len(by_class[c]) for c in classes)
    out = {k: list(v) for k, v in by_class.items()}
    for c in classes:
        sources = by_class[c]
        for k in range(target - len(sources)):
            src = sources[k % len(sources)]
            rng = derived_rng(cfg.rng_seed, "eda", c, src.id, k)
            text = eda(src.text, cfg.synonyms, rng, cfg.sr_rate)
            changes = {"id": f"{src.id}~eda{k}", "text": text, "augmented_from": src.id}
            if "source_text" in {f.name for f in fields(src)}:
                changes["source_text"] = text
            out[c].append(replace(src, **changes))
    return out
