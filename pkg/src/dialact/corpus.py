"""Corpus ingestion: line-delimited dialogue records, IOB validation,
vocabularies with reserved UNK, and history-window assembly.

File contract: UTF-8, one JSON object per line with fields
{session, turn, words, tags, intents, actions}; words/tags are order
preserving arrays of equal length, intents/actions are serialized as sorted
arrays.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ValidationError

log = logging.getLogger(__name__)

UNK = "<unk>"
PAD = "<pad>"

_TAG_RE = re.compile(r"^(O|[BI]-.+)$")

RECORD_FIELDS = ("session", "turn", "words", "tags", "intents", "actions")


@dataclass
class Example:
    """One user utterance with its gold annotations."""

    session_id: str
    turn_index: int
    words: list[str]
    tags: list[str]
    intents: set[str]
    actions: set[str]


def validate_iob(tags: list[str], lenient: bool = False, line: int | None = None) -> list[str]:
    """Check B/I/O well-formedness; in lenient mode orphan I-x becomes B-x."""
    repaired = list(tags)
    prev = "O"
    for i, tag in enumerate(repaired):
        if not _TAG_RE.match(tag):
            raise ValidationError(_loc(line, f"malformed tag {tag!r} at token {i}"))
        if tag.startswith("I-"):
            slot = tag[2:]
            ok = prev == f"B-{slot}" or prev == f"I-{slot}"
            if not ok:
                if not lenient:
                    raise ValidationError(
                        _loc(line, f"orphan {tag!r} at token {i} (follows {prev!r})")
                    )
                log.warning("repairing orphan %s at token %d -> B-%s", tag, i, slot)
                repaired[i] = f"B-{slot}"
        prev = repaired[i]
    return repaired


def _loc(line: int | None, msg: str) -> str:
    return f"line {line}: {msg}" if line is not None else msg


def parse_corpus(path, lenient: bool = False) -> list[list[Example]]:
    """Read a corpus file into sessions (ordered lists of Examples)."""
    sessions: dict[str, list[Example]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from exc
            for key in RECORD_FIELDS:
                if key not in rec:
                    raise ParseError(f"missing field {key!r}", line=lineno)
            words = [str(w) for w in rec["words"]]
            tags = [str(t) for t in rec["tags"]]
            if len(words) != len(tags):
                raise ValidationError(
                    _loc(lineno, f"{len(words)} words but {len(tags)} tags")
                )
            if not words:
                raise ValidationError(_loc(lineno, "empty utterance"))
            tags = validate_iob(tags, lenient=lenient, line=lineno)
            ex = Example(
                session_id=str(rec["session"]),
                turn_index=int(rec["turn"]),
                words=words,
                tags=tags,
                intents=set(str(x) for x in rec["intents"]),
                actions=set(str(x) for x in rec["actions"]),
            )
            sessions.setdefault(ex.session_id, []).append(ex)
    out = []
    for sid, examples in sessions.items():
        examples.sort(key=lambda e: e.turn_index)
        out.append(examples)
    return out


def write_corpus(sessions: list[list[Example]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for session in sessions:
            for ex in session:
                rec = {
                    "session": ex.session_id,
                    "turn": ex.turn_index,
                    "words": ex.words,
                    "tags": ex.tags,
                    "intents": sorted(ex.intents),
                    "actions": sorted(ex.actions),
                }
                fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Vocabularies


@dataclass
class Vocab:
    """Dense token->id map; id 0 is always UNK, ids follow first occurrence."""

    id_to_token: list[str]
    token_to_id: dict[str, int] = field(repr=False)

    @classmethod
    def build(cls, tokens, reserved: tuple[str, ...] = (UNK,)) -> "Vocab":
        id_to_token = list(reserved)
        token_to_id = {t: i for i, t in enumerate(id_to_token)}
        for tok in tokens:
            if tok not in token_to_id:
                token_to_id[tok] = len(id_to_token)
                id_to_token.append(tok)
        return cls(id_to_token=id_to_token, token_to_id=token_to_id)

    @classmethod
    def from_tokens(cls, id_to_token: list[str]) -> "Vocab":
        return cls(id_to_token=list(id_to_token), token_to_id={t: i for i, t in enumerate(id_to_token)})

    def __len__(self) -> int:
        return len(self.id_to_token)

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, 0)

    def token(self, idx: int) -> str:
        return self.id_to_token[idx]

    def encode(self, tokens) -> np.ndarray:
        return np.array([self.id(t) for t in tokens], dtype=int)

    def encode_set(self, tokens) -> frozenset[int]:
        return frozenset(self.id(t) for t in tokens)

    def digest(self) -> str:
        payload = json.dumps(self.id_to_token, ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()


@dataclass
class VocabSet:
    words: Vocab
    tags: Vocab
    intents: Vocab
    actions: Vocab

    @property
    def n_tags(self) -> int:
        return len(self.tags)

    @property
    def n_intents(self) -> int:
        return len(self.intents)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    def digests(self) -> dict[str, str]:
        return {
            "words": self.words.digest(),
            "tags": self.tags.digest(),
            "intents": self.intents.digest(),
            "actions": self.actions.digest(),
        }


def build_vocabs(train_sessions: list[list[Example]]) -> VocabSet:
    """First-occurrence vocabularies over the train split only, no cutoff."""
    if not train_sessions or not any(train_sessions):
        raise ValueError("build_vocabs: empty train split")
    words: list[str] = []
    tags: list[str] = []
    intents: list[str] = []
    actions: list[str] = []
    for session in train_sessions:
        for ex in session:
            words.extend(ex.words)
            tags.extend(ex.tags)
            intents.extend(sorted(ex.intents))
            actions.extend(sorted(ex.actions))
    return VocabSet(
        words=Vocab.build(words, reserved=(UNK, PAD)),
        tags=Vocab.build(tags),
        intents=Vocab.build(intents),
        actions=Vocab.build(actions),
    )


# ---------------------------------------------------------------------------
# History windows


@dataclass
class DialogWindow:
    """Exactly window_len slots; None marks left padding at session starts."""

    turns: list[Example | None]

    @property
    def target(self) -> Example:
        assert self.turns[-1] is not None
        return self.turns[-1]


def make_windows(session: list[Example], window_len: int) -> list[DialogWindow]:
    """One window per utterance: slots max(0, t-window_len+1)..t, left-padded."""
    if window_len < 1:
        raise ValueError(f"window_len must be >= 1, got {window_len}")
    windows = []
    for t in range(len(session)):
        lo = max(0, t - window_len + 1)
        turns: list[Example | None] = [None] * (window_len - (t - lo + 1))
        turns.extend(session[lo : t + 1])
        windows.append(DialogWindow(turns=turns))
    return windows


# ---------------------------------------------------------------------------
# Encoded views for training


@dataclass
class EncodedExample:
    word_ids: np.ndarray
    tag_ids: np.ndarray
    intent_ids: frozenset[int]
    action_ids: frozenset[int]


@dataclass
class EncodedWindow:
    turns: list[EncodedExample | None]

    @property
    def target(self) -> EncodedExample:
        assert self.turns[-1] is not None
        return self.turns[-1]


def encode_example(ex: Example, vocabs: VocabSet, max_len: int | None = None) -> EncodedExample:
    words = ex.words
    tags = ex.tags
    if max_len is not None and len(words) > max_len:
        words = words[:max_len]
        tags = tags[:max_len]
    return EncodedExample(
        word_ids=vocabs.words.encode(words),
        tag_ids=vocabs.tags.encode(tags),
        intent_ids=vocabs.intents.encode_set(ex.intents),
        action_ids=vocabs.actions.encode_set(ex.actions),
    )


def encode_windows(
    sessions: list[list[Example]],
    vocabs: VocabSet,
    window_len: int,
    max_len: int | None = None,
) -> list[EncodedWindow]:
    if window_len < 1:
        raise ValueError(f"window_len must be >= 1, got {window_len}")
    encoded: list[EncodedWindow] = []
    for session in sessions:
        cache = [encode_example(ex, vocabs, max_len) for ex in session]
        for t in range(len(cache)):
            lo = max(0, t - window_len + 1)
            turns: list[EncodedExample | None] = [None] * (window_len - (t - lo + 1))
            turns.extend(cache[lo : t + 1])
            encoded.append(EncodedWindow(turns=turns))
    return encoded


def bits_from_ids(ids, size: int) -> np.ndarray:
    bits = np.zeros(size)
    for i in ids:
        bits[int(i)] = 1.0
    return bits
