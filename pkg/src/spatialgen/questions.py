"""Question surface templates shared by QA generation and offline verification.

Generation renders these templates from graph ground truth; the offline
verifying backend parses them back so it can recompute answers from the
image's private render record without ever seeing the graph.  Only the
string format is shared - answer computation stays on each side.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .relations import Direction, Distance, RelationSpec

_ARTICLE_RE = re.compile(r"^(a|an|the)\s+", re.IGNORECASE)


def strip_article(text: str) -> str:
    return _ARTICLE_RE.sub("", text.strip())


def with_article(text: str) -> str:
    bare = strip_article(text)
    article = "an" if bare[:1].lower() in "aeiou" else "a"
    return f"{article} {bare}"


def pluralize(label: str) -> str:
    if re.search(r"(s|x|z|ch|sh)$", label):
        return label + "es"
    if re.search(r"[^aeiou]y$", label):
        return label[:-1] + "ies"
    return label + "s"


# pools of question phrasings; index selected per record seed
EXISTENCE_TEMPLATES = (
    "Is there {target} in the image?",
    "Does the image contain {target}?",
)
COUNT_TEMPLATE = "How many {plural} are in the image?"
COLOR_TEMPLATE = "What color is the {label} in the image?"
RELATION_FORWARD_TEMPLATE = "What is the spatial relation of the {a} to the {b} in the image?"
RELATION_WHICH_TEMPLATE = "Which object is {phrase} the {b} in the image?"
RELATION_VERIFY_TEMPLATE = "Is the {a} {phrase} the {b}?"


def question_phrase(rel: RelationSpec) -> str:
    """Canonical relation wording used inside question sentences."""
    return rel.sentence_phrase


_SINGLE_PHRASES = [d.phrase for d in Direction] + [d.phrase for d in Distance]
_ALL_PHRASES = _SINGLE_PHRASES + [
    f"{d.phrase} and {dist.phrase}" for d in Direction for dist in Distance
]
_PHRASE_ALTERNATION = "|".join(re.escape(p) for p in sorted(_ALL_PHRASES, key=len, reverse=True))

_PARSERS: list[tuple[str, re.Pattern[str]]] = [
    ("existence", re.compile(r"^Is there (?P<target>.+?) in the image\?$")),
    ("existence", re.compile(r"^Does the image contain (?P<target>.+?)\?$")),
    ("count", re.compile(r"^How many (?P<plural>.+?) are in the image\?$")),
    ("color", re.compile(r"^What color is the (?P<label>.+?) in the image\?$")),
    (
        "relation_forward",
        re.compile(r"^What is the spatial relation of the (?P<a>.+?) to the (?P<b>.+?) in the image\?$"),
    ),
    (
        "relation_which",
        re.compile(rf"^Which object is (?P<phrase>{_PHRASE_ALTERNATION}) the (?P<b>.+?) in the image\?$"),
    ),
    (
        "relation_verify",
        re.compile(rf"^Is the (?P<a>.+?) (?P<phrase>{_PHRASE_ALTERNATION}) the (?P<b>.+?)\?$"),
    ),
]


@dataclass(frozen=True)
class ParsedQuestion:
    kind: str
    fields: dict

    def __getitem__(self, key: str) -> str:
        return self.fields[key]


def parse_question(text: str) -> ParsedQuestion | None:
    """Invert a template question back into its structured fields."""
    for kind, pattern in _PARSERS:
        match = pattern.match(text.strip())
        if match:
            return ParsedQuestion(kind=kind, fields=match.groupdict())
    return None


def phrase_to_relation(phrase: str) -> RelationSpec:
    """Turn a question phrase back into a relation (``"above and near"`` form)."""
    from .relations import canonicalize

    return canonicalize(phrase.replace(" and ", ", "))
