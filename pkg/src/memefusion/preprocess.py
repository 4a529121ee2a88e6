"""Caption cleaning and WordPiece tokenization.

Cleaning happens at one of two levels:

``L1``
    lowercase, then strip clock times and calendar dates (OCR debris such as
    phone status bars and Facebook post headers).
``L2``
    ``L1`` plus removal of web addresses, known meme-host watermarks and
    ``@handle`` mentions.

The temporal ruleset (``RULESET_VERSION``) is a plain regular-expression
approximation of a temporal tagger. Every rule only deletes text, and
rules are applied until a fixed point, so cleaning is idempotent.
"""

from __future__ import annotations

import enum
import json
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

RULESET_VERSION = 1

_MONTHS = (
    r"jan(?:uary)?|feb(?:ruary)?|mar(?:ch)?|apr(?:il)?|may|june?|july?|"
    r"aug(?:ust)?|sep(?:t(?:ember)?)?|oct(?:ober)?|nov(?:ember)?|dec(?:ember)?"
)
_WEEKDAYS = (
    r"mon(?:day)?|tue(?:s(?:day)?)?|wed(?:nesday)?|thu(?:rs(?:day)?)?|fri(?:day)?|"
    r"sat(?:urday)?|sun(?:day)?"
)
_MERIDIEM = r"(?:[ap]\.?m\.?(?![a-z0-9]))"
_TIME = rf"(?:\d{{1,2}}:\d{{2}}(?::\d{{2}})?(?:\s*{_MERIDIEM})?|\d{{1,2}}\s*{_MERIDIEM})"
_DAY = r"\d{1,2}(?:st|nd|rd|th)?"
_YEAR = r"(?:,?\s*\d{4})"
_DATE = (
    rf"(?:(?:(?:{_WEEKDAYS}),?\s+)?(?:{_MONTHS})\.?\s+{_DAY}{_YEAR}?"
    rf"|(?:(?:{_WEEKDAYS}),?\s+)?{_DAY}\s+(?:of\s+)?(?:{_MONTHS})\.?{_YEAR}?"
    rf"|(?:{_WEEKDAYS}),?\s+{_DAY}"
    r"|\d{1,2}/\d{1,2}/\d{2,4}|\d{4}-\d{2}-\d{2})"
)
_ANCHOR = rf"(?:{_DATE}|yesterday|today)"

# Order matters: the combined "date at time" form must win over its parts.
TEMPORAL_RULES = (
    re.compile(rf"(?<![\w:/.-]){_ANCHOR}\s+at\s+{_TIME}(?![\w:])"),
    re.compile(rf"(?<![\w:/.-]){_DATE}(?![\w:/-])"),
    re.compile(rf"(?<![\w:/.]){_TIME}(?![\w:])"),
)

MEME_HOSTS = frozenset(
    {"imgflip", "makeameme", "memez", "memegenerator", "quickmeme", "memecrunch", "9gag", "ifunny", "mematic"}
)
DOMAIN_PATTERN = re.compile(r"\S+\.(com|org|net|co|me|gg)")
HANDLE_PATTERN = re.compile(r"@\w")
_WS = re.compile(r"\s+")


class CleaningLevel(enum.Enum):
    L1 = "L1"
    L2 = "L2"


def _squash(text: str) -> str:
    return _WS.sub(" ", text).strip()


def _strip_temporal(text: str) -> str:
    while True:
        before = text
        for rule in TEMPORAL_RULES:
            text = _squash(rule.sub(" ", text))
        if text == before:
            return text


def _is_web_token(token: str) -> bool:
    if DOMAIN_PATTERN.search(token) or HANDLE_PATTERN.search(token):
        return True
    return token.strip(".,!?:;\"'()[]") in MEME_HOSTS


def clean_text(raw: str, level: CleaningLevel | str = CleaningLevel.L1) -> str:
    level = CleaningLevel(level)
    text = _strip_temporal(_squash(raw.lower()))
    if level is CleaningLevel.L2:
        while True:
            before = text
            text = " ".join(t for t in text.split(" ") if t and not _is_web_token(t))
            text = _strip_temporal(text)
            if text == before:
                break
    return text


# ---------------------------------------------------------------------------
# vocabulary and WordPiece


DEFAULT_SPECIALS = {"pad": "[PAD]", "unk": "[UNK]", "cls": "[CLS]", "sep": "[SEP]", "prefix": "##"}


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]
    pad: str = "[PAD]"
    unk: str = "[UNK]"
    cls: str = "[CLS]"
    sep: str = "[SEP]"
    prefix: str = "##"

    def __post_init__(self):
        index = {}
        for i, tok in enumerate(self.tokens):
            if tok in index:
                raise ValueError(f"duplicate vocabulary entry {tok!r} at ids {index[tok]} and {i}")
            index[tok] = i
        specials = [self.pad, self.unk, self.cls, self.sep]
        for tok in specials:
            if tok not in index:
                raise ValueError(f"special token {tok!r} missing from vocabulary")
        if len(set(specials)) != 4:
            raise ValueError("special tokens must be distinct")
        object.__setattr__(self, "_index", index)

    @classmethod
    def from_tokens(cls, tokens: Iterable[str], **specials) -> "Vocab":
        return cls(tuple(tokens), **specials)

    @classmethod
    def load(cls, path: str | Path, specials_path: str | Path | None = None) -> "Vocab":
        """Read ``vocab.txt`` (line number = id) and its JSON sidecar.

        The sidecar defaults to the same path with a ``.json`` suffix and
        may be absent, in which case BERT-style specials are assumed.
        """
        path = Path(path)
        tokens = path.read_text(encoding="utf-8").split("\n")
        if tokens and tokens[-1] == "":
            tokens.pop()
        sidecar = Path(specials_path) if specials_path else path.with_suffix(".json")
        specials = dict(DEFAULT_SPECIALS)
        if sidecar.is_file():
            specials.update(json.loads(sidecar.read_text(encoding="utf-8")))
        elif specials_path:
            raise FileNotFoundError(f"special-token sidecar not found: {sidecar}")
        return cls(tuple(tokens), **{k: specials[k] for k in DEFAULT_SPECIALS})

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")
        sidecar = {"pad": self.pad, "unk": self.unk, "cls": self.cls, "sep": self.sep, "prefix": self.prefix}
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id_of(self, token: str) -> int:
        return self._index.get(token, self._index[self.unk])

    @property
    def pad_id(self) -> int:
        return self._index[self.pad]

    @property
    def unk_id(self) -> int:
        return self._index[self.unk]

    @property
    def cls_id(self) -> int:
        return self._index[self.cls]

    @property
    def sep_id(self) -> int:
        return self._index[self.sep]

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset((self.pad_id, self.unk_id, self.cls_id, self.sep_id))


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    attention_mask: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.ids)


def _is_punctuation(ch: str) -> bool:
    cp = ord(ch)
    if 33 <= cp <= 47 or 58 <= cp <= 64 or 91 <= cp <= 96 or 123 <= cp <= 126:
        return True
    return unicodedata.category(ch).startswith("P")


def basic_split(text: str) -> list[str]:
    """Whitespace split, then punctuation characters become their own words."""
    words = []
    for chunk in text.split():
        current = []
        for ch in chunk:
            if _is_punctuation(ch):
                if current:
                    words.append("".join(current))
                    current = []
                words.append(ch)
            else:
                current.append(ch)
        if current:
            words.append("".join(current))
    return words


def wordpiece(word: str, vocab: Vocab, max_chars: int = 100) -> list[str]:
    """Greedy longest-match-first segmentation of one word.

    A word that cannot be fully covered by vocabulary pieces maps to a
    single unknown token.
    """
    if len(word) > max_chars:
        return [vocab.unk]
    pieces = []
    start = 0
    while start < len(word):
        end = len(word)
        match = None
        while start < end:
            piece = word[start:end]
            if start > 0:
                piece = vocab.prefix + piece
            if piece in vocab:
                match = piece
                break
            end -= 1
        if match is None:
            return [vocab.unk]
        pieces.append(match)
        start = end
    return pieces


def tokenize(text: str, vocab: Vocab, max_len: int = 64) -> TokenSequence:
    if max_len < 2:
        raise ValueError("max_len must be at least 2 (room for CLS and SEP)")
    content = []
    for word in basic_split(text):
        content.extend(vocab.id_of(p) for p in wordpiece(word, vocab))
    content = content[: max_len - 2]
    ids = [vocab.cls_id, *content, vocab.sep_id]
    n_pad = max_len - len(ids)
    return TokenSequence(tuple(ids) + (vocab.pad_id,) * n_pad, (1,) * len(ids) + (0,) * n_pad)


def detokenize(tokens: TokenSequence, vocab: Vocab) -> str:
    words = []
    for i, m in zip(tokens.ids, tokens.attention_mask):
        if not m or i in (vocab.cls_id, vocab.sep_id, vocab.pad_id):
            continue
        tok = vocab.tokens[i]
        if tok.startswith(vocab.prefix) and words:
            words[-1] += tok[len(vocab.prefix):]
        else:
            words.append(tok)
    return " ".join(words)


def node_ids(tokens: TokenSequence, regions, vocab: Vocab, num_object_classes: int) -> Counter:
    """Graph-node multiset for one meme.

    Text tokens keep their vocabulary id (special and unknown tokens are
    dropped); detected objects map to ``len(vocab) + class_id``.
    """
    excluded = vocab.special_ids
    bag = Counter(i for i, m in zip(tokens.ids, tokens.attention_mask) if m and i not in excluded)
    region_list = getattr(regions, "regions", regions) or ()
    for region in region_list:
        if not 0 <= region.class_id < num_object_classes:
            raise ValueError(
                f"object class_id {region.class_id} outside [0, {num_object_classes})"
            )
        bag[len(vocab) + region.class_id] += 1
    return bag


def build_vocab(words: Iterable[str], alphabet: Sequence[str] | None = None, specials: Mapping[str, str] | None = None) -> Vocab:
    """Small vocabulary: specials, single characters (plain and continuation),
    then whole words; every in-alphabet word is thereby representable."""
    specials = dict(DEFAULT_SPECIALS, **(specials or {}))
    alphabet = list(alphabet) if alphabet is not None else list("abcdefghijklmnopqrstuvwxyz0123456789") + list(
        "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~"
    )
    tokens = [specials["pad"], specials["unk"], specials["cls"], specials["sep"]]
    seen = set(tokens)

    def add(tok):
        if tok not in seen:
            seen.add(tok)
            tokens.append(tok)

    for ch in alphabet:
        add(ch)
    for ch in alphabet:
        if not _is_punctuation(ch):
            add(specials["prefix"] + ch)
    for w in words:
        add(w)
    return Vocab(tuple(tokens), **{k: specials[k] for k in DEFAULT_SPECIALS})
