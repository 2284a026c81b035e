"""Chat-log parsing, text normalization and dialog noise filters."""

from __future__ import annotations

import enum
import json
import os
import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from functools import lru_cache
from importlib import resources
from typing import Iterable, Iterator, Sequence

import contractions
import emoji
import simplemma

from . import kernels
from .errors import ParseError, ValidationError


class Role(str, enum.Enum):
    REPORTER = "REPORTER"
    DISCUSSANT = "DISCUSSANT"


class Placeholder(str, enum.Enum):
    URL = "URL"
    EMAIL = "EMAIL"
    HTML = "HTML"
    CODE = "CODE"
    VERSION = "VERSION"

    @property
    def token(self) -> str:
        return f"[{self.value}]"


PLACEHOLDER_TOKENS = frozenset(p.token for p in Placeholder)


@dataclass(frozen=True)
class Utterance:
    id: str
    timestamp: datetime
    author: str
    raw_text: str
    text: str
    placeholders: frozenset = frozenset()
    role: Role | None = None
    reply_to_ids: tuple = ()

    @property
    def tokens(self) -> list[str]:
        return self.text.split()


@dataclass(frozen=True)
class ChatLog:
    utterances: tuple = ()

    def __post_init__(self):
        ts = [u.timestamp for u in self.utterances]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise ValidationError("chat log timestamps must be non-decreasing")

    def __len__(self):
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)


@dataclass(frozen=True)
class Dialog:
    """A single conversation thread.

    Utterances are stored chronologically (stable for equal timestamps) and
    carry roles relative to the author of the first utterance. ``reply_links``
    holds directed ``(replier_id, replied_id)`` pairs.
    """

    utterances: tuple
    reply_links: tuple = ()
    label: str | None = None
    id: str = ""
    project: str = ""
    augmented_from: str | None = None

    def __post_init__(self):
        utts = sorted(self.utterances, key=lambda u: u.timestamp)
        if utts:
            opener = utts[0].author
            utts = [
                replace(u, role=Role.REPORTER if u.author == opener else Role.DISCUSSANT)
                for u in utts
            ]
        object.__setattr__(self, "utterances", tuple(utts))
        pos = {u.id: i for i, u in enumerate(utts)}
        if len(pos) != len(utts):
            raise ValidationError("duplicate utterance id in dialog")
        links = []
        for a, b in self.reply_links:
            if a not in pos or b not in pos:
                raise ValidationError(f"reply link ({a}, {b}) references an utterance outside the dialog")
            if utts[pos[a]].timestamp < utts[pos[b]].timestamp:
                raise ValidationError(f"utterance {a} cannot reply to the later utterance {b}")
            links.append((a, b))
        links = sorted(set(links), key=lambda ab: (pos[ab[0]], pos[ab[1]]))
        object.__setattr__(self, "reply_links", tuple(links))
        if self.label is not None and self.label not in ("BR", "NBR"):
            raise ValidationError(f"dialog label must be BR or NBR, got {self.label!r}")
        if len(utts) > 1:
            src = [pos[a] for a, _ in links]
            dst = [pos[b] for _, b in links]
            if len(set(kernels.connected_components(len(utts), src, dst).tolist())) != 1:
                raise ValidationError(f"dialog {self.id or '?'} is not a single connected thread")
        if not self.id and utts:
            object.__setattr__(self, "id", utts[0].id)

    def __len__(self):
        return len(self.utterances)

    def position(self) -> dict:
        return {u.id: i for i, u in enumerate(self.utterances)}

    @property
    def reporter(self) -> str | None:
        return self.utterances[0].author if self.utterances else None


# ---------------------------------------------------------------------------
# text normalization

_CODE_RE = re.compile(
    r"```.*?(?:```|\Z)"
    r"|`[^`\n]+`"
    r"|(?:^[ \t]+\S[^\n]*(?:\n|\Z)){2,}",
    re.S | re.M,
)
_HTML_RE = re.compile(r"</?[A-Za-z][A-Za-z0-9-]*(?:\s[^<>]*)?/?>")
_URL_RE = re.compile(r"\b(?:[A-Za-z][A-Za-z0-9+.\-]*://|www\.)[^\s<>\"'`]+")
_EMAIL_RE = re.compile(r"\b[A-Za-z0-9._%+\-]+@[A-Za-z0-9\-]+(?:\.[A-Za-z0-9\-]+)*\.[A-Za-z]{2,}\b")
_VERSION_RE = re.compile(
    r"(?<![\w.])(?:v\d+(?:\.\d+)*|\d+(?:\.\d+){2,})(?:[-+][0-9A-Za-z]+(?:\.[0-9A-Za-z]+)*)?(?![\w.]*\w)",
    re.I,
)
_TRAILING_PUNCT = ".,;:!?)]}'\""

_TOKEN_RE = re.compile(
    r"\[(?:url|email|html|code|version)\]"
    r"|:[a-z0-9_+\-&]+:"
    r"|[^\W_]+(?:['’\-.][^\W_]+)*"
)


def _sub_url(m: re.Match) -> str:
    url = m.group(0)
    stripped = url.rstrip(_TRAILING_PUNCT)
    return " [URL] " + url[len(stripped):]


def _sub_code(m: re.Match) -> str:
    return " [CODE] \n" if m.group(0).endswith("\n") else " [CODE] "


def substitute_placeholders(raw: str) -> tuple[str, set]:
    """Replace code, HTML, URLs, emails and version strings by placeholders.

    Returns the substituted string and the placeholders that fired.
    """
    fired = set()
    text = raw
    for kind, pattern, repl in (
        (Placeholder.CODE, _CODE_RE, _sub_code),
        (Placeholder.HTML, _HTML_RE, " [HTML] "),
        (Placeholder.URL, _URL_RE, _sub_url),
        (Placeholder.EMAIL, _EMAIL_RE, " [EMAIL] "),
        (Placeholder.VERSION, _VERSION_RE, " [VERSION] "),
    ):
        text, n = pattern.subn(repl, text)
        if n:
            fired.add(kind)
    return text, fired


@lru_cache(maxsize=1)
def stopwords() -> frozenset:
    text = resources.files("buglistener.data").joinpath("stopwords_en.txt").read_text()
    return frozenset(w for w in text.split() if not w.startswith("#") and w)


@lru_cache(maxsize=65536)
def lemmatize(token: str) -> str:
    if not token.isalpha():
        return token
    # iterate to a fixpoint so normalization stays idempotent
    for _ in range(4):
        nxt = simplemma.lemmatize(token, lang="en").lower()
        if nxt == token or not nxt.isalpha():
            break
        token = nxt
    return token


def _demojize(text: str) -> str:
    return emoji.demojize(text, delimiters=(" :", ": "))


def prepare_text(raw: str) -> tuple[str, set]:
    """Placeholder substitution, emoji replacement, lowercasing and contraction
    expansion; punctuation and stopwords are kept (used for sentence work)."""
    text, _ = substitute_placeholders(raw)
    text = _demojize(text).lower()
    text = contractions.fix(text, slang=False)
    text = re.sub(r"\[(url|email|html|code|version)\]", lambda m: m.group(0).upper(), text)
    text = re.sub(r"[ \t]+", " ", text)
    text = "\n".join(line.strip() for line in text.split("\n"))
    present = {p for p in Placeholder if p.token in text}
    return text.strip(), present


def tokenize(text: str) -> list[str]:
    return [
        t.upper() if t.startswith("[") else t
        for t in _TOKEN_RE.findall(text.lower())
    ]


def normalize_text(raw: str) -> tuple[str, set]:
    """Full preprocessing used for utterance text.

    Lowercases, substitutes placeholders, replaces emojis by ASCII names,
    expands contractions, lemmatizes and drops stopwords. Placeholders keep
    their upper-case bracketed form. Returns ``(text, placeholders)`` where
    ``placeholders`` lists every placeholder present in the output.
    """
    text, _ = prepare_text(raw)
    stop = stopwords()
    out = []
    for tok in tokenize(text):
        if tok in PLACEHOLDER_TOKENS or tok.startswith(":"):
            out.append(tok)
            continue
        lemma = lemmatize(tok)
        if lemma in stop or tok in stop:
            continue
        out.append(lemma)
    normalized = " ".join(out)
    return normalized, {p for p in Placeholder if p.token in out}


# ---------------------------------------------------------------------------
# parsing and serialization

def parse_timestamp(value) -> datetime:
    if not isinstance(value, str):
        raise ValueError(f"timestamp must be an ISO-8601 string, got {value!r}")
    s = value.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    ts = datetime.fromisoformat(s)
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).isoformat()


def utterance_from_record(rec: dict, line: int | None = None) -> Utterance:
    if not isinstance(rec, dict):
        raise ParseError("expected a JSON object", line)
    for key in ("id", "timestamp", "author", "text"):
        if key not in rec:
            raise ParseError(f"missing required field {key!r}", line)
    if not isinstance(rec["id"], str) or not isinstance(rec["author"], str) or not isinstance(rec["text"], str):
        raise ParseError("fields id, author and text must be strings", line)
    try:
        ts = parse_timestamp(rec["timestamp"])
    except ValueError as exc:
        raise ParseError(f"bad timestamp: {exc}", line) from None
    reply_to = rec.get("reply_to_ids") or []
    if not isinstance(reply_to, list) or not all(isinstance(r, str) for r in reply_to):
        raise ParseError("reply_to_ids must be a list of strings", line)
    if "normalized_text" in rec:
        text = rec["normalized_text"]
        placeholders = {Placeholder(p) for p in rec.get("placeholders", [])}
    else:
        text, placeholders = normalize_text(rec["text"])
    role = Role(rec["role"]) if rec.get("role") else None
    return Utterance(
        id=rec["id"], timestamp=ts, author=rec["author"], raw_text=rec["text"],
        text=text, placeholders=frozenset(placeholders), role=role,
        reply_to_ids=tuple(reply_to),
    )


def utterance_to_record(u: Utterance, with_role: bool = False) -> dict:
    rec = {
        "id": u.id,
        "timestamp": format_timestamp(u.timestamp),
        "author": u.author,
        "text": u.raw_text,
    }
    if u.reply_to_ids:
        rec["reply_to_ids"] = list(u.reply_to_ids)
    rec["normalized_text"] = u.text
    rec["placeholders"] = sorted(p.value for p in u.placeholders)
    if with_role and u.role is not None:
        rec["role"] = u.role.value
    return rec


def _lines(source) -> Iterator[str]:
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8") as fh:
            yield from fh
    else:
        yield from source


def parse_chat_log(source) -> ChatLog:
    """Read a JSON-lines chat export from a path or an iterable of lines."""
    utts = []
    seen = set()
    for lineno, line in enumerate(_lines(source), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed JSON ({exc.msg})", lineno) from None
        u = utterance_from_record(rec, lineno)
        if u.id in seen:
            raise ValidationError(f"line {lineno}: duplicate utterance id {u.id!r}")
        seen.add(u.id)
        utts.append(u)
    utts.sort(key=lambda u: u.timestamp)
    return ChatLog(tuple(utts))


def dump_chat_log(log: ChatLog) -> str:
    return "".join(json.dumps(utterance_to_record(u), ensure_ascii=False) + "\n" for u in log)


def dialog_to_record(d: Dialog) -> dict:
    rec = {"id": d.id}
    if d.project:
        rec["project"] = d.project
    if d.label is not None:
        rec["label"] = d.label
    if d.augmented_from is not None:
        rec["augmented_from"] = d.augmented_from
    rec["utterances"] = [utterance_to_record(u, with_role=True) for u in d.utterances]
    rec["reply_links"] = [list(link) for link in d.reply_links]
    return rec


def dialog_from_record(rec: dict, line: int | None = None) -> Dialog:
    if not isinstance(rec, dict) or "utterances" not in rec:
        raise ParseError("dialog record needs an 'utterances' list", line)
    utts = [utterance_from_record(u, line) for u in rec["utterances"]]
    links = [tuple(link) for link in rec.get("reply_links", [])]
    if any(len(link) != 2 for link in links):
        raise ParseError("reply_links entries must be [replier_id, replied_id]", line)
    return Dialog(
        utterances=tuple(utts), reply_links=tuple(links), label=rec.get("label"),
        id=rec.get("id", ""), project=rec.get("project", ""),
        augmented_from=rec.get("augmented_from"),
    )


def dump_dialogs(dialogs: Iterable[Dialog]) -> str:
    return "".join(json.dumps(dialog_to_record(d), ensure_ascii=False) + "\n" for d in dialogs)


def parse_dialogs(source) -> list[Dialog]:
    out = []
    for lineno, line in enumerate(_lines(source), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed JSON ({exc.msg})", lineno) from None
        out.append(dialog_from_record(rec, lineno))
    return out


# ---------------------------------------------------------------------------
# noise filters

@dataclass(frozen=True)
class FilterConfig:
    bot_names: frozenset = field(default_factory=frozenset)
    english_threshold: float = 0.5
    code_ratio_threshold: float = 0.9


_WORD_RE = re.compile(r"[^\W\d_]+")


def english_ratio(texts: Sequence[str]) -> float:
    """Share of alphabetic tokens that are ASCII and known English words.

    Text with no alphabetic tokens counts as English (ratio 1.0).
    """
    known = total = 0
    stop = stopwords()
    for raw in texts:
        text, _ = substitute_placeholders(raw)
        for tok in _WORD_RE.findall(text):
            total += 1
            low = tok.lower()
            if low.isascii() and (low in stop or simplemma.is_known(low, lang="en")):
                known += 1
    return 1.0 if total == 0 else known / total


def code_ratio(texts: Sequence[str]) -> float:
    total = sum(len("".join(t.split())) for t in texts)
    if total == 0:
        return 0.0
    code = sum(len("".join(m.group(0).split())) for t in texts for m in _CODE_RE.finditer(t))
    return code / total


def filter_dialogs(dialogs: Sequence[Dialog], cfg: FilterConfig | None = None) -> list[Dialog]:
    """Drop non-English, code-dominated and bot-involving dialogs; order is kept."""
    cfg = cfg or FilterConfig()
    bots = {b.lower() for b in cfg.bot_names}
    kept = []
    for d in dialogs:
        texts = [u.raw_text for u in d.utterances]
        if any(u.author.lower() in bots for u in d.utterances):
            continue
        if code_ratio(texts) > cfg.code_ratio_threshold:
            continue
        if english_ratio(texts) < cfg.english_threshold:
            continue
        kept.append(d)
    return kept
