"""Scoring harness for model answers against a holdout benchmark.

Answer files are JSON lines of {"question_id", "raw_text"}.  Missing and
unparseable answers count as wrong (and as unanswered), keeping every
stratum's denominator fixed.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .datasets import HoldoutItem
from .errors import DuplicateAnswer, UnknownQuestionId

_TOKEN_RE = re.compile(r"\(?\b([a-dA-D])\b\)?[.)]?")


def parse_answer(raw_text: str) -> str | None:
    """Extract a single A-D label, or None when the text is ambiguous.

    Accepts bare letters, "(A)", "A.", and "the answer is c" phrasings,
    case-insensitively.  Texts naming two different labels are unparseable.
    """
    if not raw_text or not raw_text.strip():
        return None
    labels = {m.group(1).upper() for m in _TOKEN_RE.finditer(raw_text)}
    if len(labels) == 1:
        return labels.pop()
    return None


@dataclass
class StratumScore:
    correct: int = 0
    total: int = 0

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0

    def to_dict(self) -> dict:
        return {"correct": self.correct, "total": self.total, "accuracy": round(self.accuracy, 4)}


@dataclass
class EvalReport:
    overall: StratumScore = field(default_factory=StratumScore)
    per_category: dict[str, StratumScore] = field(default_factory=dict)
    per_slice: dict[str, StratumScore] = field(default_factory=dict)
    per_entity_bucket: dict[str, StratumScore] = field(default_factory=dict)
    unanswered: int = 0

    def to_dict(self) -> dict:
        return {
            "overall": self.overall.to_dict(),
            "per_category": {k: v.to_dict() for k, v in sorted(self.per_category.items())},
            "per_slice": {k: v.to_dict() for k, v in sorted(self.per_slice.items())},
            "per_entity_bucket": {k: v.to_dict() for k, v in sorted(self.per_entity_bucket.items())},
            "unanswered": self.unanswered,
        }

    def format_table(self) -> str:
        lines = [f"overall: {self.overall.correct}/{self.overall.total} = {self.overall.accuracy:.3f}"]
        for title, strata in (
            ("category", self.per_category),
            ("slice", self.per_slice),
            ("entities", self.per_entity_bucket),
        ):
            for name, score in sorted(strata.items()):
                lines.append(f"  {title:<9} {name:<20} {score.correct}/{score.total} = {score.accuracy:.3f}")
        lines.append(f"unanswered/unparseable: {self.unanswered}")
        return "\n".join(lines)


def load_answer_file(path: Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def score(answers: Iterable[dict], holdout: Sequence[HoldoutItem]) -> EvalReport:
    """Accuracy per stratum; every holdout question contributes to every total."""
    by_id = {item.id: item for item in holdout}
    parsed: dict[str, str | None] = {}
    for row in answers:
        qid = row["question_id"]
        if qid not in by_id:
            raise UnknownQuestionId(f"answer for unknown question {qid!r}")
        if qid in parsed:
            raise DuplicateAnswer(f"two answers for question {qid!r}")
        parsed[qid] = parse_answer(row.get("raw_text", ""))

    report = EvalReport()
    for item in holdout:
        label = parsed.get(item.id)
        correct = label == item.answer_key
        if label is None:
            report.unanswered += 1
        bucket = ">=3" if item.entity_count >= 3 else "<3"
        for strata, key in (
            (report.per_category, item.category),
            (report.per_slice, item.slice or "none"),
            (report.per_entity_bucket, bucket),
        ):
            stratum = strata.setdefault(key, StratumScore())
            stratum.total += 1
            stratum.correct += int(correct)
        report.overall.total += 1
        report.overall.correct += int(correct)
    return report
